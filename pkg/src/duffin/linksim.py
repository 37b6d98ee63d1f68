"""MRT beamforming with Gray QPSK over per-subcarrier channels, and Monte-Carlo BER.

Channels are ``(Nc, Nt)`` stacks whose row ``n`` is ``h_n^H``. The transmitter
beamforms along an estimate of ``h_n``; the receiver knows the effective
scalar gain ``g = h_n^H v_n`` and detects coherently.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

SOURCES = ("perfect", "reconstructed", "random")
BER_COLUMNS = ("snr_db", "source", "bits", "errors", "ber")
MIN_BITS = 10_000


@dataclass(frozen=True)
class LinkConfig:
    snrs_db: tuple[float, ...]
    bits: int = 20_000
    seed: int = 0
    sources: tuple[str, ...] = SOURCES

    def __post_init__(self):
        object.__setattr__(self, "snrs_db", tuple(float(s) for s in self.snrs_db))
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.snrs_db:
            raise ValueError("need at least one SNR")
        if self.bits < MIN_BITS or self.bits % 2:
            raise ValueError(f"bits per run must be even and at least {MIN_BITS}, got {self.bits}")
        unknown = set(self.sources) - set(SOURCES)
        if unknown or not self.sources:
            raise ValueError(f"unknown beamformer sources {sorted(unknown)}")


@dataclass(frozen=True)
class BerRow:
    snr_db: float
    source: str
    bits: int
    errors: int
    ber: float


def mrt_precode(h_hat) -> np.ndarray:
    """Unit-norm MRT beamformer ``h_hat / ||h_hat||``."""
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    norm = np.linalg.norm(h_hat)
    if norm == 0:
        raise ValueError("cannot beamform along a zero vector")
    v = h_hat / norm
    return v / np.linalg.norm(v)


def _mrt_rows(h_rows: np.ndarray) -> np.ndarray:
    """Beamformers for a stack of ``h^H`` rows (last axis Nt)."""
    h = np.conj(h_rows)
    norms = np.linalg.norm(h, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot beamform along a zero vector")
    return h / norms


def qpsk_map(bits) -> np.ndarray:
    """Gray QPSK: bit pair ``(b0, b1)`` maps to ``((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)``."""
    b = np.asarray(bits, dtype=np.int64).ravel()
    if b.size % 2:
        raise ValueError(f"QPSK needs an even bit count, got {b.size}")
    if np.any((b != 0) & (b != 1)):
        raise ValueError("bits must be 0 or 1")
    pairs = b.reshape(-1, 2)
    return ((1 - 2 * pairs[:, 0]) + 1j * (1 - 2 * pairs[:, 1])) / np.sqrt(2)


def qpsk_demap(symbols, gain=None) -> np.ndarray:
    """Minimum-distance detection, optionally given the known complex gain."""
    y = np.asarray(symbols, dtype=np.complex128).ravel()
    if gain is not None:
        y = y * np.conj(np.broadcast_to(np.asarray(gain, dtype=np.complex128).ravel(), y.shape))
    out = np.empty((y.size, 2), dtype=np.int8)
    out[:, 0] = y.real < 0
    out[:, 1] = y.imag < 0
    return out.ravel()


def q_function(x):
    return 0.5 * erfc(np.asarray(x, dtype=np.float64) / np.sqrt(2))


def noise_power(truth: np.ndarray, snr_db: float) -> float:
    """``N0`` such that the perfect-CSI mean beamforming gain sits at ``snr_db``."""
    gain = np.mean(np.sum(np.abs(truth) ** 2, axis=-1))
    return float(gain / 10 ** (snr_db / 10))


def effective_gains(truth: np.ndarray, estimate: np.ndarray | None, source: str, seed: int = 0) -> np.ndarray:
    """Per-cell ``g = h^H v`` for every (sample, subcarrier), flattened."""
    h = np.asarray(truth, dtype=np.complex128).reshape(-1, truth.shape[-1])
    if source == "perfect":
        v = _mrt_rows(h)
    elif source == "reconstructed":
        if estimate is None:
            raise ValueError("reconstructed source needs estimated channels")
        v = _mrt_rows(np.asarray(estimate, dtype=np.complex128).reshape(h.shape))
    elif source == "random":
        rng = np.random.default_rng([seed, 0x5A4D])
        v = _mrt_rows(rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape))
    else:
        raise ValueError(f"unknown beamformer source {source!r}")
    return np.sum(h * v, axis=-1)


def theoretical_ber(gains: np.ndarray, n0: float, n_bits: int) -> tuple[float, float]:
    """Closed-form expected BER for the cycled cell gains, and its Monte-Carlo standard deviation.

    With gain known, each QPSK bit sees ``Q(|g| / sqrt(N0))``.
    """
    n_sym = n_bits // 2
    g = np.asarray(gains)[np.arange(n_sym) % len(gains)]
    p = q_function(np.abs(g) / np.sqrt(n0))
    mean = float(np.mean(p))
    std = float(np.sqrt(2 * np.sum(p * (1 - p))) / n_bits)
    return mean, std


def simulate_ber(truth, estimate, cfg: LinkConfig) -> list[BerRow]:
    """Monte-Carlo BER for each SNR and beamformer source.

    Symbols cycle over the (sample, subcarrier) cells. Bits and the complex
    noise sample ``w`` are shared by all sources at a given SNR; the noise
    actually added is ``w * g / |g|``, which has the same distribution but
    keeps source comparisons free of noise-draw luck.
    """
    truth = np.asarray(truth)
    if estimate is not None and np.shape(estimate) != truth.shape:
        raise ValueError(f"truth {truth.shape} and estimate {np.shape(estimate)} differ in shape")
    if truth.ndim == 2:
        truth = truth[None]
        estimate = None if estimate is None else np.asarray(estimate)[None]
    gains = {s: effective_gains(truth, estimate, s, cfg.seed) for s in cfg.sources}
    n_sym = cfg.bits // 2
    cells = np.arange(n_sym) % (truth.shape[0] * truth.shape[1])
    bits = np.random.default_rng([cfg.seed, 0xB175]).integers(0, 2, cfg.bits, dtype=np.int8)
    x = qpsk_map(bits)
    rows = []
    for i, snr in enumerate(cfg.snrs_db):
        n0 = noise_power(truth, snr)
        rng = np.random.default_rng([cfg.seed, 0x5E, i])
        w = np.sqrt(n0 / 2) * (rng.standard_normal(n_sym) + 1j * rng.standard_normal(n_sym))
        for source in cfg.sources:
            g = gains[source][cells]
            mag = np.abs(g)
            phase = np.where(mag > 0, g / np.where(mag > 0, mag, 1), 1)
            y = g * x + w * phase
            errors = int(np.count_nonzero(qpsk_demap(y, g) != bits))
            rows.append(BerRow(snr, source, cfg.bits, errors, errors / cfg.bits))
    return rows


def estimate_channels(model, ds) -> np.ndarray:
    """Full reconstructed channels for every sample of a dataset."""
    from .data import reconstruct_full

    return reconstruct_full(model.reconstruct(ds.images), ds.meta, ds.offset, ds.nc)


def write_ber_csv(rows: list[BerRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BER_COLUMNS)
        for r in rows:
            w.writerow([repr(r.snr_db), r.source, r.bits, r.errors, repr(r.ber)])
