"""Synthetic sparse-multipath FDD channels and the angular-delay pipeline.

Spatial-frequency CSI is an ``(Nc, Nt)`` complex matrix whose row ``n`` is
``h_n^H``. The angular-delay transform uses unitary DFTs on both sides, so
Frobenius norms are preserved and inverse transforms are exact.
"""

from __future__ import annotations

import io
import struct
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

MAGIC = b"CSIDS"
VERSION = 1


class DatasetFormatError(ValueError):
    """Malformed or truncated dataset file."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Generator settings.

    Delays are given directly in delay-bin units (multiples of
    ``1 / (Nc * subcarrier_spacing)``). The dominant path arrives within
    ``dominant_max_delay`` bins; the remaining ``n_paths - 1`` paths arrive
    uniformly in ``[0, max_delay)``. The dominant path power is ``kappa`` times
    the mean power of the other paths.
    """

    nc: int = 1024
    nt: int = 32
    ns: int = 32
    n_paths: int = 8
    kappa: float = 10.0
    max_delay: float = 12.0
    dominant_max_delay: float = 1.0
    angle_min: float = -np.pi / 2
    angle_max: float = np.pi / 2
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if self.nc < 1 or self.nt < 1 or self.ns < 1 or self.ns > self.nc:
            raise ValueError("need 1 <= ns <= nc and nt >= 1")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if self.max_delay < 0 or self.dominant_max_delay < 0:
            raise ValueError("delays must be non-negative")
        if max(self.max_delay, self.dominant_max_delay) > self.ns - 0.5:
            raise ValueError("path delays must land inside the first ns delay bins")
        if self.angle_min > self.angle_max:
            raise ValueError("angle_min > angle_max")

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line:
                continue
            key, _, raw = line.partition("=")
            if key not in types:
                raise DatasetFormatError(f"unknown generator key {key!r}")
            kind = types[key]
            kw[key] = raw if kind == "str" else int(raw) if kind == "int" else float(raw)
        return cls(**kw)


SCENARIOS = {
    # short delay spread, strong dominant path
    "indoor": dict(n_paths=8, kappa=10.0, max_delay=8.0, dominant_max_delay=1.0),
    # longer delay spread, weaker dominant path
    "outdoor": dict(n_paths=8, kappa=3.0, max_delay=24.0, dominant_max_delay=2.0),
}


def scenario(name: str, **overrides) -> ScenarioConfig:
    """Named generator preset (``indoor`` or ``outdoor``) with overrides."""
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    kw = dict(SCENARIOS[name])
    kw.update(overrides)
    return ScenarioConfig(name=name, **kw)


def steering_vector(theta: float, nt: int) -> np.ndarray:
    """Unit-modulus half-wavelength ULA response."""
    return np.exp(-1j * np.pi * np.arange(nt) * np.sin(theta))


def channel_from_paths(gains, delays, angles, nc: int, nt: int) -> np.ndarray:
    """Build ``H`` (rows ``h_n^H``) from explicit path parameters."""
    n = np.arange(nc)[:, None]
    h = np.zeros((nc, nt), dtype=np.complex128)
    for alpha, tau, theta in zip(gains, delays, angles):
        h += alpha * np.exp(-2j * np.pi * n * tau / nc) * steering_vector(theta, nt)[None, :]
    return h.conj()


def _sample_paths(cfg: ScenarioConfig, rng: np.random.Generator):
    p = cfg.n_paths
    gains = (rng.standard_normal(p) + 1j * rng.standard_normal(p)) / np.sqrt(2)
    gains[0] = np.sqrt(cfg.kappa) * np.exp(2j * np.pi * rng.random())
    delays = rng.uniform(0, cfg.max_delay, p)
    delays[0] = rng.uniform(0, cfg.dominant_max_delay)
    angles = rng.uniform(cfg.angle_min, cfg.angle_max, p)
    return gains, delays, angles


def generate_scenario(cfg: ScenarioConfig, n_samples: int, start: int = 0) -> np.ndarray:
    """Draw ``n_samples`` channels, shape ``(n, Nc, Nt)``.

    Sample ``i`` uses its own generator seeded with ``(cfg.seed, i)`` so any
    subset can be regenerated independently.
    """
    out = np.empty((n_samples, cfg.nc, cfg.nt), dtype=np.complex128)
    for k in range(n_samples):
        rng = np.random.default_rng([cfg.seed, start + k])
        out[k] = channel_from_paths(*_sample_paths(cfg, rng), cfg.nc, cfg.nt)
    return out


# ----------------------------------------------------------------------------
# transforms
# ----------------------------------------------------------------------------


def to_angular_delay(h: np.ndarray) -> np.ndarray:
    """``F_c H F_t^H`` with unitary DFT matrices (works on stacks too)."""
    return np.fft.ifft(np.fft.fft(h, axis=-2, norm="ortho"), axis=-1, norm="ortho")


def from_angular_delay(hd: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_angular_delay`."""
    return np.fft.fft(np.fft.ifft(hd, axis=-2, norm="ortho"), axis=-1, norm="ortho")


def truncate(hd: np.ndarray, ns: int, offset: int = 0) -> np.ndarray:
    """Keep delay rows ``[offset, offset + ns)``."""
    nc = hd.shape[-2]
    if offset < 0 or offset + ns > nc:
        raise IndexError(f"window [{offset}, {offset + ns}) outside {nc} delay rows")
    return hd[..., offset : offset + ns, :]


@dataclass
class NormalizationMeta:
    """Affine map ``x -> x / (2 * scale) + 0.5`` applied to real and imaginary parts.

    ``n_clamped`` counts values that fell outside ``[0, 1]`` and were clipped.
    """

    scale: float
    n_clamped: int = field(default=0, compare=False)


def fit_normalization(hs: np.ndarray) -> NormalizationMeta:
    """Dataset-global scale: the largest absolute real/imag entry, as a float32."""
    peak = float(max(np.abs(hs.real).max(), np.abs(hs.imag).max()))
    if peak == 0:
        raise ValueError("all-zero data cannot be normalised")
    scale = np.float32(peak)
    if float(scale) < peak:
        scale = np.nextafter(scale, np.float32(np.inf))
    return NormalizationMeta(float(scale))


def normalize(hs: np.ndarray, meta: NormalizationMeta) -> np.ndarray:
    """Complex ``(..., Ns, Nt)`` -> real ``(..., Ns, Nt, 2)`` image in ``[0, 1]``."""
    img = np.stack([hs.real, hs.imag], axis=-1) / (2 * meta.scale) + 0.5
    outside = int(np.count_nonzero((img < 0) | (img > 1)))
    if outside:
        meta.n_clamped += outside
        warnings.warn(f"{outside} values outside the normalisation range were clamped", stacklevel=2)
        img = np.clip(img, 0.0, 1.0)
    return img


def denormalize(img: np.ndarray, meta: NormalizationMeta) -> np.ndarray:
    x = (np.asarray(img, dtype=np.float64) - 0.5) * (2 * meta.scale)
    return x[..., 0] + 1j * x[..., 1]


def reconstruct_full(img: np.ndarray, meta: NormalizationMeta, offset: int, nc: int) -> np.ndarray:
    """Denormalise, zero-pad back to ``nc`` delay rows and invert the transform."""
    hs = denormalize(img, meta)
    ns = hs.shape[-2]
    if offset < 0 or offset + ns > nc:
        raise IndexError(f"window [{offset}, {offset + ns}) outside {nc} delay rows")
    hd = np.zeros(hs.shape[:-2] + (nc, hs.shape[-1]), dtype=np.complex128)
    hd[..., offset : offset + ns, :] = hs
    return from_angular_delay(hd)


# ----------------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------------

NMSE_FLOOR_DB = -100.0


def nmse(truth: np.ndarray, estimate: np.ndarray) -> float:
    """Mean over samples of ``||est - truth||^2 / ||truth||^2``.

    A single matrix counts as one sample; stacks use the leading axis.
    """
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {estimate.shape}")
    if truth.ndim == 2:
        truth, estimate = truth[None], estimate[None]
    axes = tuple(range(1, truth.ndim))
    power = np.sum(np.abs(truth) ** 2, axis=axes)
    if np.any(power == 0):
        raise ValueError("NMSE undefined for a zero-norm reference")
    err = np.sum(np.abs(estimate - truth) ** 2, axis=axes)
    return float(np.mean(err / power))


def nmse_db(truth: np.ndarray, estimate: np.ndarray) -> float:
    value = nmse(truth, estimate)
    return NMSE_FLOOR_DB if value <= 0 else max(10 * np.log10(value), NMSE_FLOOR_DB)


def cosine_similarity(truth: np.ndarray, estimate: np.ndarray) -> float:
    """Mean over subcarriers (then samples) of ``|h_hat^H h| / (||h_hat|| ||h||)``.

    Subcarriers where either vector is zero are skipped with a warning.
    """
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {estimate.shape}")
    if truth.ndim == 2:
        truth, estimate = truth[None], estimate[None]
    inner = np.abs(np.sum(np.conj(estimate) * truth, axis=-1))
    norms = np.linalg.norm(estimate, axis=-1) * np.linalg.norm(truth, axis=-1)
    valid = norms > 0
    if not valid.all():
        warnings.warn(f"skipping {int((~valid).sum())} zero-vector subcarriers", stacklevel=2)
    per_sample = []
    for k in range(truth.shape[0]):
        v = valid[k]
        if v.any():
            per_sample.append(np.mean(inner[k, v] / norms[k, v]))
    if not per_sample:
        raise ValueError("no valid subcarriers")
    return float(np.mean(per_sample))


# ----------------------------------------------------------------------------
# datasets
# ----------------------------------------------------------------------------


@dataclass
class CsiDataset:
    """Normalised truncated images plus what is needed to regenerate channels.

    ``ids`` are the generator sample indices, so ``channels()`` works for any
    subset.
    """

    images: np.ndarray  # (n, Ns, Nt, 2) float32
    meta: NormalizationMeta
    config: ScenarioConfig
    offset: int = 0
    ids: np.ndarray | None = None

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(len(self.images))
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if len(self.ids) != len(self.images):
            raise ValueError("ids and images disagree in length")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def nc(self) -> int:
        return self.config.nc

    def channels(self) -> np.ndarray:
        """Full spatial-frequency channels, regenerated from the stored seed."""
        out = np.empty((len(self), self.config.nc, self.config.nt), dtype=np.complex128)
        for k, i in enumerate(self.ids):
            out[k] = generate_scenario(self.config, 1, int(i))[0]
        return out

    def truncated(self) -> np.ndarray:
        """Denormalised truncated angular-delay matrices (the NMSE reference)."""
        return denormalize(self.images, self.meta)

    def subset(self, idx) -> "CsiDataset":
        return CsiDataset(self.images[idx], self.meta, self.config, self.offset, self.ids[idx])


def make_dataset(
    cfg: ScenarioConfig,
    n_samples: int,
    offset: int = 0,
    meta: NormalizationMeta | None = None,
    start: int = 0,
) -> CsiDataset:
    """Generate, transform, truncate and normalise ``n_samples`` channels.

    Pass ``meta`` to reuse another dataset's normalisation scale.
    """
    h = generate_scenario(cfg, n_samples, start)
    hs = truncate(to_angular_delay(h), cfg.ns, offset)
    if meta is None:
        meta = fit_normalization(hs)
    images = normalize(hs, meta).astype(np.float32)
    return CsiDataset(images, meta, cfg, offset, np.arange(start, start + n_samples))


def _dataset_bytes(ds: CsiDataset) -> bytes:
    n, ns, nt, _ = ds.images.shape
    start = int(ds.ids[0]) if n else 0
    if not np.array_equal(ds.ids, np.arange(start, start + n)):
        raise ValueError("only datasets with contiguous generator ids can be written")
    blob = ds.config.to_text() + f"start={start}\n"
    blob_b = blob.encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(bytes([VERSION]))
    buf.write(struct.pack("<5I", n, ds.nc, nt, ns, ds.offset))
    buf.write(struct.pack("<f", ds.meta.scale))
    buf.write(struct.pack("<I", len(blob_b)))
    buf.write(blob_b)
    buf.write(np.ascontiguousarray(ds.images, dtype="<f4").tobytes())
    return buf.getvalue()


def write_dataset(ds: CsiDataset, path) -> None:
    Path(path).write_bytes(_dataset_bytes(ds))


def read_dataset(path) -> CsiDataset:
    data = Path(path).read_bytes()
    head = len(MAGIC) + 1 + 20 + 4 + 4
    if len(data) < head or data[: len(MAGIC)] != MAGIC:
        raise DatasetFormatError("bad magic, not a dataset file")
    pos = len(MAGIC)
    if data[pos] != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {data[pos]}")
    pos += 1
    n, nc, nt, ns, offset = struct.unpack_from("<5I", data, pos)
    pos += 20
    (scale,) = struct.unpack_from("<f", data, pos)
    pos += 4
    (blob_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if pos + blob_len > len(data):
        raise DatasetFormatError("truncated generator config")
    lines = data[pos : pos + blob_len].decode("utf-8").splitlines()
    pos += blob_len
    start = 0
    kept = []
    for line in lines:
        if line.startswith("start="):
            start = int(line[6:])
        else:
            kept.append(line)
    try:
        cfg = ScenarioConfig.from_text("\n".join(kept))
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"bad generator config: {exc}") from exc
    if (cfg.nc, cfg.nt, cfg.ns) != (nc, nt, ns):
        raise DatasetFormatError("header dimensions disagree with generator config")
    expected = n * ns * nt * 2 * 4
    if len(data) - pos != expected:
        raise DatasetFormatError(f"size mismatch: expected {expected} payload bytes, found {len(data) - pos}")
    images = np.frombuffer(data, dtype="<f4", offset=pos).astype(np.float32).reshape(n, ns, nt, 2)
    return CsiDataset(images, NormalizationMeta(float(scale)), cfg, offset, np.arange(start, start + n))


def window_cosine_sweep(h: np.ndarray, ns: int, offsets=(0, 1, 2, 3, 4)) -> list[tuple[int, float]]:
    """Cosine similarity of the lossless-model window round trip of ``h`` at each offset."""
    hd = to_angular_delay(h)
    rows = []
    for off in offsets:
        hs = truncate(hd, ns, off)
        meta = fit_normalization(hs)
        rec = reconstruct_full(normalize(hs, meta), meta, off, h.shape[-2])
        rows.append((off, cosine_similarity(h, rec)))
    return rows


def offset_sweep(cfg: ScenarioConfig, n_samples: int, offsets=(0, 1, 2, 3, 4)) -> list[tuple[int, float]]:
    return window_cosine_sweep(generate_scenario(cfg, n_samples), cfg.ns, offsets)


def with_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(cfg, seed=seed)
