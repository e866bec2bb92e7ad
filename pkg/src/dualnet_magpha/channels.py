"""Channel realizations, angle-delay transforms, NMSE and the CSID file format.

Transform convention: the delay transform is the inverse DFT over subcarriers
scaled by ``1/n_f`` and the angle transform is the unnormalized DFT over
antennas. Without truncation the Frobenius norm therefore scales by exactly
``sqrt(n_b / n_f)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NMSE_FLOOR_DB = -120.0


class FormatError(ValueError):
    """Malformed binary file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class CsiSamplePair:
    downlink: np.ndarray
    uplink: np.ndarray

    def __post_init__(self):
        if self.downlink.shape != self.uplink.shape or self.downlink.ndim != 2:
            raise ValueError(f"downlink {self.downlink.shape} and uplink {self.uplink.shape} must be equal 2-D shapes")


@dataclass(frozen=True)
class AngleDelayCsi:
    """Truncated angle-delay matrix: the first ``q_f`` then the last ``q_l`` delay rows."""

    entries: np.ndarray
    q_f: int
    q_l: int

    @property
    def q_t(self) -> int:
        return self.q_f + self.q_l


@dataclass
class ChannelModelConfig:
    n_f: int = 256
    n_b: int = 64
    n_clusters: int = 13
    ul_carrier_hz: float = 2.0e9
    dl_carrier_hz: float = 2.1e9
    bandwidth_hz: float = 20e6
    delay_spread_s: float = 50e-9
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_f < 1 or self.n_b < 1:
            raise ValueError("n_f and n_b must be positive")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be at least 1")
        for name in ("ul_carrier_hz", "dl_carrier_hz", "bandwidth_hz", "delay_spread_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def desk(cls, **overrides) -> "ChannelModelConfig":
        base = dict(n_f=64, n_b=32)
        base.update(overrides)
        return cls(**base)


@dataclass
class CsiDataset:
    samples: list[CsiSamplePair] = field(default_factory=list)
    split: int = 0

    def __post_init__(self):
        if not 0 <= self.split <= len(self.samples):
            raise ValueError(f"split {self.split} outside [0, {len(self.samples)}]")
        if self.samples:
            shape = self.samples[0].downlink.shape
            for i, s in enumerate(self.samples):
                if s.downlink.shape != shape:
                    raise ValueError(f"sample {i} has shape {s.downlink.shape}, expected {shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples[0].downlink.shape

    def train(self) -> list[CsiSamplePair]:
        return self.samples[: self.split]

    def test(self) -> list[CsiSamplePair]:
        return self.samples[self.split :]

    def stack(self, part: str = "all") -> tuple[np.ndarray, np.ndarray]:
        """Downlink and uplink arrays ``[n, n_f, n_b]`` for 'train', 'test' or 'all'."""
        chosen = {"train": self.train(), "test": self.test(), "all": self.samples}[part]
        dl = np.stack([s.downlink for s in chosen]) if chosen else np.zeros((0,) + self.shape, complex)
        ul = np.stack([s.uplink for s in chosen]) if chosen else np.zeros((0,) + self.shape, complex)
        return dl, ul


# ---------------------------------------------------------------------------
# transforms


def _check_window(n_f: int, q_f: int, q_l: int) -> None:
    if q_f < 0 or q_l < 0 or q_f + q_l < 1:
        raise ValueError(f"need q_f, q_l >= 0 and q_f + q_l >= 1, got q_f={q_f}, q_l={q_l}")
    if q_f + q_l > n_f:
        raise ValueError(f"q_f + q_l = {q_f + q_l} exceeds n_f = {n_f}")


def _rows(n_f: int, q_f: int, q_l: int) -> np.ndarray:
    return np.concatenate([np.arange(q_f), np.arange(n_f - q_l, n_f)]).astype(int)


def angle_delay_full(h_sf: np.ndarray) -> np.ndarray:
    """Untruncated transform over the last two axes (works on stacks)."""
    h_sf = np.asarray(h_sf, dtype=complex)
    return np.fft.fft(np.fft.ifft(h_sf, axis=-2), axis=-1)


def to_angle_delay(h_sf, q_f: int, q_l: int) -> AngleDelayCsi:
    """Delay IDFT (1/n_f) and angle DFT, keeping the first q_f and last q_l rows.

    Accepts a single ``[n_f, n_b]`` matrix or a stack ``[..., n_f, n_b]``.
    """
    h_sf = np.asarray(h_sf)
    if h_sf.ndim < 2:
        raise ValueError(f"expected a matrix, got shape {h_sf.shape}")
    n_f = h_sf.shape[-2]
    _check_window(n_f, q_f, q_l)
    if not np.all(np.isfinite(h_sf)):
        raise ValueError("channel contains non-finite entries")
    full = angle_delay_full(h_sf)
    return AngleDelayCsi(full[..., _rows(n_f, q_f, q_l), :], q_f, q_l)


def from_angle_delay(h_ad: AngleDelayCsi, n_f: int) -> np.ndarray:
    """Zero-pad the retained rows back to ``n_f`` and undo both transforms."""
    e = np.asarray(h_ad.entries, dtype=complex)
    if e.shape[-2] != h_ad.q_t:
        raise ValueError(f"entries have {e.shape[-2]} rows, expected q_t = {h_ad.q_t}")
    _check_window(n_f, h_ad.q_f, h_ad.q_l)
    padded = np.zeros(e.shape[:-2] + (n_f, e.shape[-1]), dtype=complex)
    padded[..., _rows(n_f, h_ad.q_f, h_ad.q_l), :] = e
    return np.fft.ifft(np.fft.fft(padded, axis=-2), axis=-1)


def split_rows(q_t: int) -> tuple[int, int]:
    """Default leading/trailing split: three quarters leading, one quarter trailing."""
    q_l = q_t // 4
    return q_t - q_l, q_l


# ---------------------------------------------------------------------------
# synthetic generator


def _draw_pair(config: ChannelModelConfig, rng: np.random.Generator) -> CsiSamplePair:
    p = config.n_clusters
    ds = config.delay_spread_s
    tau = rng.exponential(ds, size=p)
    tau -= tau.min()
    power = np.exp(-tau / ds) * rng.exponential(1.0, size=p)
    gain = np.sqrt(power / power.sum())
    theta = rng.uniform(-np.pi / 2, np.pi / 2, size=p)
    phase_dl = rng.uniform(0, 2 * np.pi, size=p)
    phase_ul = rng.uniform(0, 2 * np.pi, size=p)

    df = config.bandwidth_hz / config.n_f
    f = np.arange(config.n_f)[:, None] * df
    b = np.arange(config.n_b)[:, None]
    delay = np.exp(-2j * np.pi * f * tau[None, :])  # [n_f, p]

    steer = np.exp(-1j * np.pi * b * np.sin(theta)[None, :])  # [n_b, p]

    def link(phase: np.ndarray) -> np.ndarray:
        return (delay * (gain * np.exp(1j * phase))[None, :]) @ steer.T

    return CsiSamplePair(link(phase_dl), link(phase_ul))


def generate_channel_pair(config: ChannelModelConfig, rng: np.random.Generator) -> CsiSamplePair:
    """One clustered-multipath UL/DL pair.

    Delays, angles and gain magnitudes are shared by both links; path phases
    are drawn independently per link. Each link sees a half-wavelength array
    at its own carrier, so the carrier frequencies only label the bands.
    Cluster powers follow an exponential delay profile and sum to one.
    """
    while True:
        pair = _draw_pair(config, rng)
        if np.linalg.norm(pair.downlink) > 0 and np.linalg.norm(pair.uplink) > 0:
            return pair


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_dataset(config: ChannelModelConfig, n_samples: int, n_train: int) -> CsiDataset:
    """Sample ``i`` draws from its own stream derived from ``(rng_seed, i)``."""
    samples = [generate_channel_pair(config, sample_rng(config.rng_seed, i)) for i in range(n_samples)]
    return CsiDataset(samples, n_train)


def magnitude_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation between two magnitude matrices."""
    return float(np.corrcoef(np.abs(a).ravel(), np.abs(b).ravel())[0, 1])


def reciprocity_summary(ds: CsiDataset, q_f: int, q_l: int, limit: int | None = None) -> float:
    """Mean DL/UL angle-delay magnitude correlation over the dataset."""
    chosen = ds.samples if limit is None else ds.samples[:limit]
    vals = [
        magnitude_correlation(to_angle_delay(s.downlink, q_f, q_l).entries, to_angle_delay(s.uplink, q_f, q_l).entries)
        for s in chosen
    ]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# metric


def nmse_db(truth, estimate, floor_db: float = NMSE_FLOOR_DB) -> float:
    """Mean per-sample normalized squared error, in dB, floored at ``floor_db``.

    Unlike the bare sum over samples, the ratio is averaged, so the value does
    not grow with the number of samples.
    """
    truth = [np.asarray(t) for t in truth]
    estimate = [np.asarray(e) for e in estimate]
    if not truth or len(truth) != len(estimate):
        raise ValueError(f"need equal non-empty lists, got {len(truth)} and {len(estimate)}")
    ratios = []
    for d, (t, e) in enumerate(zip(truth, estimate)):
        if t.shape != e.shape:
            raise ValueError(f"sample {d}: shapes {t.shape} and {e.shape} differ")
        ref = np.sum(np.abs(t) ** 2)
        if ref == 0:
            raise ValueError(f"sample {d}: truth has zero Frobenius norm")
        ratios.append(np.sum(np.abs(e - t) ** 2) / ref)
    mean = float(np.mean(ratios))
    if mean <= 0:
        return floor_db
    return max(10.0 * np.log10(mean), floor_db)


# ---------------------------------------------------------------------------
# CSID file format

_MAGIC = b"CSID"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, n_f, n_b, count, split


def dataset_save(ds: CsiDataset, path) -> None:
    n_f, n_b = ds.shape if ds.samples else (0, 0)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, n_f, n_b, len(ds.samples), ds.split))
        for s in ds.samples:
            for m in (s.downlink, s.uplink):
                fh.write(np.ascontiguousarray(m, dtype="<c16").tobytes())


def dataset_load(path) -> CsiDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"file too short for header: expected {_HEADER.size} bytes, got {len(raw)}", len(raw))
    magic, version, n_f, n_b, count, split = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}", 0)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}, expected {_VERSION}", 4)
    if split > count:
        raise FormatError(f"split {split} exceeds sample count {count}", 20)
    per_matrix = n_f * n_b * 16
    expected = _HEADER.size + count * 2 * per_matrix
    if len(raw) != expected:
        raise FormatError(f"expected {expected} bytes, got {len(raw)}", min(len(raw), expected))
    body = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(count, 2, n_f, n_b)
    samples = [CsiSamplePair(body[i, 0].astype(complex), body[i, 1].astype(complex)) for i in range(count)]
    return CsiDataset(samples, split)
