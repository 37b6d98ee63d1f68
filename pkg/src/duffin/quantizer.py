"""Uniform codeword quantizer with a straight-through gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, straight_through


@dataclass(frozen=True)
class QuantizerCalibration:
    """Global quantizer range and resolution.

    ``2**bits`` levels of width ``(qmax - qmin) / 2**bits`` cover ``[qmin, qmax]``.
    """

    qmin: float
    qmax: float
    bits: int

    def __post_init__(self):
        if not 1 <= self.bits <= 8:
            raise ValueError(f"bits must be in 1..8, got {self.bits}")
        if not self.qmin < self.qmax:
            raise ValueError(f"degenerate quantizer range [{self.qmin}, {self.qmax}]")

    @property
    def levels(self) -> int:
        return 2**self.bits

    @property
    def width(self) -> float:
        return (self.qmax - self.qmin) / self.levels

    def feedback_bits(self, codeword_length: int) -> int:
        """Bits fed back per sample: codeword length times bits per value."""
        return codeword_length * self.bits


def calibrate(codewords, bits: int) -> QuantizerCalibration:
    """Take the observed min/max over a sample of codewords as the range."""
    values = np.asarray(codewords, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot calibrate on an empty sample")
    # float32 so the range survives the model file round trip bit-exactly
    qmin = float(np.float32(values.min()))
    qmax = float(np.float32(values.max()))
    if qmin == qmax:
        raise ValueError("degenerate codeword sample: all values equal")
    return QuantizerCalibration(qmin, qmax, int(bits))


def quantize(s, cal: QuantizerCalibration) -> np.ndarray:
    """Map values to level indices in ``0 .. 2**bits - 1`` (clipping out-of-range)."""
    x = np.clip(np.asarray(s, dtype=np.float64), cal.qmin, cal.qmax)
    idx = np.floor((x - cal.qmin) / cal.width).astype(np.int64)
    return np.minimum(idx, cal.levels - 1)


def dequantize(indices, cal: QuantizerCalibration) -> np.ndarray:
    """Midpoint reconstruction of each level."""
    return cal.qmin + (np.asarray(indices, dtype=np.float64) + 0.5) * cal.width


def quantize_dequantize(s, cal: QuantizerCalibration) -> np.ndarray:
    x = np.asarray(s)
    return dequantize(quantize(x, cal), cal).astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64)


def ste_gate(s: Tensor, cal: QuantizerCalibration) -> Tensor:
    """Quantize in the forward pass; pass gradients through with slope 1."""
    return straight_through(s, lambda v: quantize_dequantize(v, cal))
