"""Duffin-CsiNet encoder/decoder built on :mod:`duffin.autograd`.

Layer names encode the layer path, e.g. ``encoder/convnet/1/kernel`` or
``decoder/duffin0/atten/kernel``. Batch-norm running statistics are stored in
the same :class:`ParameterStore` as non-trainable buffers so that a saved
model reproduces inference outputs exactly.
"""

from __future__ import annotations

import copy
import io
import math
import struct
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import BatchNormState, ParameterStore, Tensor
from .quantizer import QuantizerCalibration, ste_gate

CONVNET_KERNELS = ((3, 3), (1, 9), (9, 1))
FUSION_MODES = ("nn", "add", "dot")

MAGIC = b"DFCN"
VERSION = 1
CALIBRATION_TAG = 0x51

# The normalised CSI image sits close to 0.5 almost everywhere, so the output
# sigmoid starts in its near-linear range; unit scale leaves the untrained
# output far noisier than the data and training stalls above 0 dB.
RECNET_BN_SCALE_INIT = 0.03


class ModelFormatError(ValueError):
    """Malformed, truncated or mismatched model file."""


def parse_rho(value) -> Fraction:
    """Accept ``Fraction``, ``"1/4"``, ``"0.25"`` or a float and return the exact ratio."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        value = value.strip()
        if "/" in value:
            return Fraction(value)
        return Fraction(value).limit_denominator(1 << 16)
    return Fraction(value).limit_denominator(1 << 16)


@dataclass(frozen=True)
class ModelConfig:
    ns: int = 32
    nt: int = 32
    rho: Fraction = Fraction(1, 4)
    feature_channels: int = 64
    cascade: int = 2
    alpha: float = 0.3
    zeta: float = 1e-5
    omega_a_init: float = 1.0
    omega_v_init: float = 0.5
    decoder_fnet_channels: int | None = None
    fusion: str = "nn"

    def __post_init__(self):
        object.__setattr__(self, "rho", parse_rho(self.rho))
        if self.decoder_fnet_channels is None:
            object.__setattr__(self, "decoder_fnet_channels", self.feature_channels)
        if self.ns < 1 or self.nt < 1:
            raise ValueError("ns and nt must be positive")
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.codeword_length < 1:
            raise ValueError("compression ratio leaves an empty codeword")
        if self.feature_channels < 2:
            raise ValueError("feature_channels must be at least 2")
        if self.cascade < 1:
            raise ValueError("cascade must be at least 1")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        if self.fusion != "nn" and self.decoder_fnet_channels != self.feature_channels:
            raise ValueError("add/dot fusion keeps the channel count; decoder_fnet_channels must equal feature_channels")

    @property
    def image_size(self) -> int:
        return 2 * self.ns * self.nt

    @property
    def codeword_length(self) -> int:
        return math.floor(self.rho * self.image_size)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={v!r}" if isinstance(v, float) else f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            if key not in kinds:
                raise ModelFormatError(f"unknown config key {key!r}")
            if key == "rho":
                kw[key] = Fraction(raw)
            elif key == "fusion":
                kw[key] = raw
            elif key in ("alpha", "zeta", "omega_a_init", "omega_v_init"):
                kw[key] = float(raw)
            else:
                kw[key] = int(raw)
        return cls(**kw)


def adaptive_kernel_size(channels: int) -> int:
    """Nearest odd integer to ``(log2(channels) + 1) / 2``; exact ties round up."""
    if channels < 2:
        raise ValueError("channel count must be at least 2")
    x = (math.log2(channels) + 1) / 2
    return 2 * math.floor((x - 1) / 2 + 0.5) + 1


# ----------------------------------------------------------------------------
# parameter construction
# ----------------------------------------------------------------------------


def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(ag.DTYPE)


def _add_bn(store: ParameterStore, prefix: str, channels: int, scale: float = 1.0) -> None:
    store.add(f"{prefix}/bn/scale", np.full(channels, scale, ag.DTYPE))
    store.add(f"{prefix}/bn/shift", np.zeros(channels, ag.DTYPE))
    store.add(f"{prefix}/bn/mean", np.zeros(channels, ag.DTYPE), trainable=False)
    store.add(f"{prefix}/bn/var", np.ones(channels, ag.DTYPE), trainable=False)
    store.add(f"{prefix}/bn/updates", np.zeros(1, ag.DTYPE), trainable=False)


def _add_conv(store, rng, prefix, kh, kw, cin, cout):
    store.add(f"{prefix}/kernel", _glorot(rng, (kh, kw, cin, cout), kh * kw * cin, kh * kw * cout))
    store.add(f"{prefix}/bias", np.zeros(cout, ag.DTYPE))


def _add_composite(store, rng, prefix, kh, kw, cin, cout, bn_scale=1.0):
    _add_conv(store, rng, prefix, kh, kw, cin, cout)
    _add_bn(store, prefix, cout, bn_scale)


def _add_dense(store, rng, prefix, n_in, n_out):
    store.add(f"{prefix}/weight", _glorot(rng, (n_out, n_in), n_in, n_out))
    store.add(f"{prefix}/bias", np.zeros(n_out, ag.DTYPE))


def _add_convnet(store, rng, prefix, cin, cout):
    for i, (kh, kw) in enumerate(CONVNET_KERNELS):
        _add_composite(store, rng, f"{prefix}/{i}", kh, kw, cin if i == 0 else cout, cout)


def build_params(config: ModelConfig, seed: int = 0) -> ParameterStore:
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    c = config
    # encoder
    _add_convnet(store, rng, "encoder/convnet", 2, 2)
    for branch in ("avg_fnn", "max_fnn"):
        _add_dense(store, rng, f"encoder/atten/{branch}/0", 2, 1)
        _add_bn(store, f"encoder/atten/{branch}/0", 1)
        _add_dense(store, rng, f"encoder/atten/{branch}/1", 1, 2)
        _add_bn(store, f"encoder/atten/{branch}/1", 2)
    store.add("encoder/atten/omega_a", np.full(1, c.omega_a_init, ag.DTYPE))
    store.add("encoder/atten/omega_v", np.full(1, c.omega_v_init, ag.DTYPE))
    if c.fusion == "nn":
        _add_conv(store, rng, "encoder/fnet", 3, 3, 4, 2)
    _add_dense(store, rng, "encoder/comnet", c.image_size, c.codeword_length)
    # decoder
    _add_dense(store, rng, "decoder/prenet/dense", c.codeword_length, c.image_size)
    _add_composite(store, rng, "decoder/prenet/conv", 5, 5, 2, c.feature_channels)
    k = adaptive_kernel_size(c.feature_channels)
    cin = c.feature_channels
    for i in range(c.cascade):
        p = f"decoder/duffin{i}"
        _add_convnet(store, rng, f"{p}/convnet", cin, c.feature_channels)
        store.add(f"{p}/atten/kernel", _glorot(rng, (k,), k, k))
        store.add(f"{p}/atten/bias", np.zeros(1, ag.DTYPE))
        if c.fusion == "nn":
            _add_conv(store, rng, f"{p}/fnet", 3, 3, c.feature_channels + cin, c.decoder_fnet_channels)
            cin = c.decoder_fnet_channels
    _add_composite(store, rng, "decoder/recnet", 5, 5, cin, 2, RECNET_BN_SCALE_INIT)
    return store


# ----------------------------------------------------------------------------
# forward pieces
# ----------------------------------------------------------------------------


def _bn_state(params: ParameterStore, prefix: str) -> BatchNormState:
    return BatchNormState(params[f"{prefix}/bn/mean"], params[f"{prefix}/bn/var"], params[f"{prefix}/bn/updates"])


def _bn(params: ParameterStore, prefix: str, x: Tensor, zeta: float, training: bool) -> Tensor:
    return ag.batch_norm(
        x, _bn_state(params, prefix), zeta, training, params[f"{prefix}/bn/scale"], params[f"{prefix}/bn/shift"]
    )


def composite_conv(
    params: ParameterStore,
    prefix: str,
    x: Tensor,
    training: bool,
    zeta: float = 1e-5,
    act: str = "leaky_relu",
    alpha: float = 0.3,
) -> Tensor:
    """conv2d -> batch norm -> activation, spatial size preserved."""
    kernel = params[f"{prefix}/kernel"]
    kh, kw = kernel.shape[:2]
    y = ag.conv2d(x, kernel, params[f"{prefix}/bias"], padding=(kh // 2, kw // 2))
    y = _bn(params, prefix, y, zeta, training)
    return ag.activation(act, y, alpha)


def _convnet(params, prefix, x, cfg: ModelConfig, training):
    for i in range(len(CONVNET_KERNELS)):
        x = composite_conv(params, f"{prefix}/{i}", x, training, cfg.zeta, "leaky_relu", cfg.alpha)
    return x


def _fnn(params, prefix, v: Tensor, cfg: ModelConfig, training) -> Tensor:
    h = ag.dense(v, params[f"{prefix}/0/weight"], params[f"{prefix}/0/bias"])
    h = ag.relu(_bn(params, f"{prefix}/0", h, cfg.zeta, training))
    h = ag.dense(h, params[f"{prefix}/1/weight"], params[f"{prefix}/1/bias"])
    return ag.sigmoid(_bn(params, f"{prefix}/1", h, cfg.zeta, training))


def encoder_attention(params: ParameterStore, image: Tensor, cfg: ModelConfig, training: bool):
    """Pooling-FNN attention of the encoder.

    Returns ``(S, d, a_f, v_f)``: the re-weighted image and the combined
    attention vector ``d = omega_a * a_f + omega_v * v_f`` with shape
    ``(B, 1, 1, 2)``, plus the two sigmoid branch outputs.
    """
    B = image.shape[0]
    C = image.shape[-1]
    a = ag.reshape(ag.global_avg_pool(image), (B, C))
    v = ag.reshape(ag.global_max_pool(image), (B, C))
    a_f = _fnn(params, "encoder/atten/avg_fnn", a, cfg, training)
    v_f = _fnn(params, "encoder/atten/max_fnn", v, cfg, training)
    d = ag.add(ag.mul(a_f, params["encoder/atten/omega_a"]), ag.mul(v_f, params["encoder/atten/omega_v"]))
    d = ag.reshape(d, (B, 1, 1, C))
    return ag.channel_scale(image, d), d, a_f, v_f


def decoder_attention(params: ParameterStore, prefix: str, u: Tensor) -> tuple[Tensor, Tensor]:
    """Average pool -> adaptive 1D conv across channels -> sigmoid gate.

    Returns the gated feature maps and the gate itself.
    """
    pooled = ag.global_avg_pool(u)
    gate = ag.sigmoid(ag.conv1d(pooled, params[f"{prefix}/kernel"], params[f"{prefix}/bias"]))
    return ag.channel_scale(u, gate), gate


def fuse(params: ParameterStore, prefix: str, g: Tensor, s: Tensor, mode: str = "nn") -> Tensor:
    if mode == "nn":
        x = ag.concat_channels(g, s)
        return ag.conv2d(x, params[f"{prefix}/kernel"], params[f"{prefix}/bias"], padding=(1, 1))
    if g.shape != s.shape:
        raise ValueError(f"cannot fuse {g.shape} with {s.shape}")
    if mode == "add":
        return ag.add(g, s)
    if mode == "dot":
        return ag.mul(g, s)
    raise ValueError(f"unknown fusion mode {mode!r}")


class DuffinCsiNet:
    """Encoder/decoder pair sharing one parameter store.

    ``quantizer`` (a :class:`QuantizerCalibration`) inserts the straight-through
    quantization gate between encoder and decoder when set.
    """

    def __init__(self, config: ModelConfig, params: ParameterStore, quantizer: QuantizerCalibration | None = None):
        self.config = config
        self.params = params
        self.quantizer = quantizer

    def copy(self) -> "DuffinCsiNet":
        return copy.deepcopy(self)

    # -- graph builders -------------------------------------------------------

    def encode(self, x, training: bool = False, features: dict | None = None) -> Tensor:
        cfg = self.config
        x = ag.as_tensor(x)
        if x.shape[1:] != (cfg.ns, cfg.nt, 2):
            raise ValueError(f"expected images of shape (B, {cfg.ns}, {cfg.nt}, 2), got {x.shape}")
        g = _convnet(self.params, "encoder/convnet", x, cfg, training)
        s, d, _, _ = encoder_attention(self.params, x, cfg, training)
        j = fuse(self.params, "encoder/fnet", g, s, cfg.fusion)
        code = ag.dense(ag.flatten(j), self.params["encoder/comnet/weight"], self.params["encoder/comnet/bias"])
        if features is not None:
            features.update(G=g.data, S=s.data, J=j.data, d=d.data)
        return code

    def decode(self, code, training: bool = False) -> Tensor:
        cfg = self.config
        code = ag.as_tensor(code)
        if code.data.ndim != 2 or code.shape[1] != cfg.codeword_length:
            raise ValueError(f"expected codewords of length {cfg.codeword_length}, got {code.shape}")
        p = self.params
        u = ag.dense(code, p["decoder/prenet/dense/weight"], p["decoder/prenet/dense/bias"])
        u = ag.reshape(u, (code.shape[0], cfg.ns, cfg.nt, 2))
        u = composite_conv(p, "decoder/prenet/conv", u, training, cfg.zeta, "leaky_relu", cfg.alpha)
        for i in range(cfg.cascade):
            prefix = f"decoder/duffin{i}"
            g = _convnet(p, f"{prefix}/convnet", u, cfg, training)
            s, _ = decoder_attention(p, f"{prefix}/atten", u)
            u = fuse(p, f"{prefix}/fnet", g, s, cfg.fusion)
        return composite_conv(p, "decoder/recnet", u, training, cfg.zeta, "sigmoid")

    def forward(self, x, training: bool = False) -> Tensor:
        code = self.encode(x, training)
        if self.quantizer is not None:
            code = ste_gate(code, self.quantizer)
        return self.decode(code, training)

    # -- batched inference helpers -------------------------------------------

    def codewords(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Unquantized inference-mode codewords for a stack of images."""
        out = [self.encode(images[i : i + batch_size]).data for i in range(0, len(images), batch_size)]
        return np.concatenate(out, axis=0)

    def reconstruct(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = [self.forward(images[i : i + batch_size]).data for i in range(0, len(images), batch_size)]
        return np.concatenate(out, axis=0)


def build_model(config: ModelConfig | None = None, seed: int = 0) -> DuffinCsiNet:
    config = config or ModelConfig()
    return DuffinCsiNet(config, build_params(config, seed))


def param_count(model: DuffinCsiNet) -> tuple[int, int]:
    """Trainable scalars in (encoder, decoder); batch-norm buffers excluded."""
    enc = dec = 0
    for name, t in model.params.items():
        if not t.requires_grad:
            continue
        if name.startswith("encoder/"):
            enc += t.data.size
        else:
            dec += t.data.size
    return enc, dec


def with_fusion(config: ModelConfig, mode: str) -> ModelConfig:
    """Same configuration with a different FNet fusion variant."""
    return replace(config, fusion=mode)


# ----------------------------------------------------------------------------
# model file
# ----------------------------------------------------------------------------


def _model_bytes(model: DuffinCsiNet) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(bytes([VERSION]))
    cfg = model.config.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    for name, t in model.params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", t.data.ndim))
        buf.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    if model.quantizer is not None:
        q = model.quantizer
        buf.write(struct.pack("<BffB", CALIBRATION_TAG, q.qmin, q.qmax, q.bits))
    return buf.getvalue()


def save_model(model: DuffinCsiNet, path) -> None:
    Path(path).write_bytes(_model_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("truncated model file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path) -> DuffinCsiNet:
    """Read a model file; raises :class:`ModelFormatError` on any inconsistency."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise ModelFormatError("bad magic, not a model file")
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model file version {version}")
    (n,) = r.unpack("<I")
    try:
        config = ModelConfig.from_text(r.take(n).decode("utf-8"))
    except (ValueError, TypeError) as exc:
        raise ModelFormatError(f"bad config block: {exc}") from exc
    params = build_params(config, seed=0)
    for expected, t in params.items():
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode("utf-8")
        if name != expected:
            raise ModelFormatError(f"parameter {name!r} where {expected!r} was expected")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        if tuple(dims) != t.data.shape:
            raise ModelFormatError(f"shape mismatch for {name}: file {dims}, config {t.data.shape}")
        size = int(np.prod(dims)) if dims else 1
        t.data = np.frombuffer(r.take(4 * size), dtype="<f4").astype(ag.DTYPE).reshape(dims)
    quantizer = None
    if r.pos < len(r.data):
        tag, qmin, qmax, bits = r.unpack("<BffB")
        if tag != CALIBRATION_TAG:
            raise ModelFormatError(f"unknown trailing record tag {tag:#x}")
        quantizer = QuantizerCalibration(qmin, qmax, bits)
    if r.pos != len(r.data):
        raise ModelFormatError("trailing bytes after model records")
    return DuffinCsiNet(config, params, quantizer)
