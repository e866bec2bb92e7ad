"""Magnitude / cosine / sign decomposition, partial sign feedback and MDPQ.

All functions accept a single ``[q_t, n_b]`` matrix or a stack with leading
batch axes; selection and ranking act on the last two axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channels import FormatError

COSINE_SLACK = 1e-6


@dataclass
class SignMatrix:
    signs: np.ndarray  # +1 / -1
    transmitted: np.ndarray  # bool

    @property
    def shape(self):
        return self.signs.shape


@dataclass(frozen=True)
class BitBudget:
    cr_pha: float
    k_pha: int
    r_s: float
    q_t: int
    n_b: int
    codeword_bits: int
    sign_bits: int

    @property
    def total_bits(self) -> int:
        return self.codeword_bits + self.sign_bits

    @property
    def bits_per_entry(self) -> float:
        return self.total_bits / (self.q_t * self.n_b)


@dataclass(frozen=True)
class MdpqTable:
    cdf_thresholds: tuple[float, ...]
    bits_per_bin: tuple[int, ...]

    def __post_init__(self):
        t = np.asarray(self.cdf_thresholds, dtype=float)
        if len(self.cdf_thresholds) != len(self.bits_per_bin) or t.size == 0:
            raise ValueError("thresholds and bit counts must be non-empty and equally long")
        if t[0] != 0 or np.any(np.diff(t) <= 0) or t[-1] > 1:
            raise ValueError(f"thresholds must start at 0 and ascend strictly within [0, 1]: {self.cdf_thresholds}")
        if any(b < 0 for b in self.bits_per_bin):
            raise ValueError("bit counts must be non-negative")


# bit allocations over magnitude-CDF bins used as the non-learned baseline
MDPQ_TABLES = {
    1 / 8: MdpqTable((0.0, 0.5, 0.7, 0.8, 0.9), (0, 0, 0, 3, 7)),
    1 / 16: MdpqTable((0.0, 0.5, 0.7, 0.8, 0.9), (0, 0, 0, 0, 5)),
}


def decompose(h) -> tuple[np.ndarray, np.ndarray, SignMatrix]:
    """Split complex CSI into magnitude, cosine and a fully transmitted sign matrix.

    Zero entries get cosine 1 and sign +1.
    """
    h = np.asarray(getattr(h, "entries", h), dtype=complex)
    if not np.all(np.isfinite(h)):
        raise ValueError("CSI contains non-finite entries")
    mag = np.abs(h)
    safe = np.where(mag > 0, mag, 1.0)
    cosine = np.where(mag > 0, h.real / safe, 1.0)
    np.clip(cosine, -1.0, 1.0, out=cosine)
    signs = np.where(h.imag < 0, -1.0, 1.0)
    return mag, cosine, SignMatrix(signs, np.ones(h.shape, dtype=bool))


def n_transmitted(r_s: float, q_t: int, n_b: int) -> int:
    return math.ceil(round(r_s * q_t * n_b, 9))


def selection_order(magnitude: np.ndarray) -> np.ndarray:
    """Flat row-major indices sorted by descending magnitude, ties by index.

    Returns shape ``[..., q_t * n_b]``.
    """
    flat = np.asarray(magnitude).reshape(magnitude.shape[:-2] + (-1,))
    return np.argsort(-flat, axis=-1, kind="stable")


def _check_ratio(r_s: float) -> None:
    if not 0 < r_s <= 1:
        raise ValueError(f"sign ratio must lie in (0, 1], got {r_s}")


def select_signs(sign: SignMatrix, magnitude: np.ndarray, r_s: float) -> SignMatrix:
    """Keep the signs of the ceil(r_s * q_t * n_b) largest-magnitude entries; reset the rest to +1."""
    _check_ratio(r_s)
    magnitude = np.asarray(magnitude)
    if magnitude.shape != sign.shape:
        raise ValueError(f"magnitude shape {magnitude.shape} != sign shape {sign.shape}")
    q_t, n_b = magnitude.shape[-2:]
    n = n_transmitted(r_s, q_t, n_b)
    order = selection_order(magnitude)[..., :n]
    mask = np.zeros(magnitude.shape[:-2] + (q_t * n_b,), dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    mask = mask.reshape(magnitude.shape)
    return SignMatrix(np.where(mask, sign.signs, 1.0), mask)


def sign_bits(sign: SignMatrix, magnitude: np.ndarray, r_s: float) -> np.ndarray:
    """Transmitted sign bits in selection-rank order; bit 1 means a negative sign."""
    _check_ratio(r_s)
    q_t, n_b = magnitude.shape[-2:]
    n = n_transmitted(r_s, q_t, n_b)
    order = selection_order(magnitude)[..., :n]
    flat = sign.signs.reshape(sign.shape[:-2] + (-1,))
    return (np.take_along_axis(flat, order, axis=-1) < 0).astype(np.uint8)


def place_signs(bits: np.ndarray, magnitude: np.ndarray, r_s: float) -> SignMatrix:
    """Decoder side: put received sign bits on the entries ranked by ``magnitude``.

    With the recovered magnitude the ranking can differ from the encoder's;
    passing the true magnitude gives the genie placement.
    """
    _check_ratio(r_s)
    magnitude = np.asarray(magnitude)
    q_t, n_b = magnitude.shape[-2:]
    n = n_transmitted(r_s, q_t, n_b)
    bits = np.asarray(bits)
    if bits.shape[-1] != n:
        raise ValueError(f"expected {n} sign bits, got {bits.shape[-1]}")
    order = selection_order(magnitude)[..., :n]
    signs = np.ones(magnitude.shape[:-2] + (q_t * n_b,))
    mask = np.zeros(signs.shape, dtype=bool)
    np.put_along_axis(signs, order, np.where(bits > 0, -1.0, 1.0), axis=-1)
    np.put_along_axis(mask, order, True, axis=-1)
    return SignMatrix(signs.reshape(magnitude.shape), mask.reshape(magnitude.shape))


def sine_from_cosine(cosine: np.ndarray, signs: np.ndarray) -> np.ndarray:
    return signs * np.sqrt(np.maximum(1.0 - cosine**2, 0.0))


def recombine(magnitude, cosine, sign: SignMatrix | np.ndarray) -> np.ndarray:
    """``magnitude * (cos + j * sign * sqrt(1 - cos^2))``."""
    cosine = np.asarray(cosine, dtype=float)
    magnitude = np.asarray(magnitude, dtype=float)
    signs = sign.signs if isinstance(sign, SignMatrix) else np.asarray(sign, dtype=float)
    if not (magnitude.shape == cosine.shape == signs.shape):
        raise ValueError(f"shape mismatch: {magnitude.shape}, {cosine.shape}, {signs.shape}")
    if np.any(np.abs(cosine) > 1.0 + COSINE_SLACK):
        raise ValueError("cosine entries outside [-1, 1]")
    cosine = np.clip(cosine, -1.0, 1.0)
    return magnitude * (cosine + 1j * sine_from_cosine(cosine, signs))


def phase_bit_budget(cr_pha: float, k_pha: int, r_s: float, q_t: int, n_b: int) -> BitBudget:
    """Phase feedback bits: quantized cosine codewords plus partial sign bits.

    The sign term is ``ceil(r_s * q_t * n_b)`` without the compression-ratio
    factor; with that factor the 0.625 bits/entry setting would not come out.
    """
    if not 0 < cr_pha <= 1:
        raise ValueError(f"cr_pha must lie in (0, 1], got {cr_pha}")
    _check_ratio(r_s)
    if k_pha < 1 or q_t < 1 or n_b < 1:
        raise ValueError("k_pha, q_t and n_b must be positive")
    return BitBudget(
        cr_pha, k_pha, r_s, q_t, n_b,
        codeword_bits=codeword_length(cr_pha, q_t, n_b) * k_pha,
        sign_bits=n_transmitted(r_s, q_t, n_b),
    )


def codeword_length(cr: float, q_t: int, n_b: int) -> int:
    return int(round(cr * q_t * n_b))


# ---------------------------------------------------------------------------
# MDPQ


def mdpq_bin_bits(magnitude: np.ndarray, table: MdpqTable) -> np.ndarray:
    """Bits per entry from the empirical CDF rank of its magnitude in the matrix.

    The entry at ascending position ``r`` (ties broken by row-major index) has
    CDF value ``r / N`` and falls in the last bin whose threshold is ``<=`` it.
    """
    magnitude = np.asarray(magnitude)
    n = magnitude.shape[-2] * magnitude.shape[-1]
    flat = magnitude.reshape(magnitude.shape[:-2] + (n,))
    order = np.argsort(flat, axis=-1, kind="stable")
    cdf = np.arange(n) / n
    bin_of_rank = np.searchsorted(np.asarray(table.cdf_thresholds), cdf, side="right") - 1
    bits_of_rank = np.asarray(table.bits_per_bin)[bin_of_rank]
    bits = np.empty(flat.shape, dtype=np.int64)
    np.put_along_axis(bits, order, np.broadcast_to(bits_of_rank, flat.shape), axis=-1)
    return bits.reshape(magnitude.shape)


def mdpq_total_bits(q_t: int, n_b: int, table: MdpqTable) -> int:
    return int(mdpq_bin_bits(np.zeros((q_t, n_b)), table).sum())


def _uniform_index(phase: np.ndarray, bits: np.ndarray) -> np.ndarray:
    levels = 2.0**bits
    idx = np.rint((phase + np.pi) / (2 * np.pi) * levels)
    return np.mod(idx, levels).astype(np.int64)


def _to_bits(values: np.ndarray, widths: np.ndarray) -> np.ndarray:
    out = []
    for v, w in zip(values.tolist(), widths.tolist()):
        out.extend((v >> (w - 1 - i)) & 1 for i in range(w))
    return np.asarray(out, dtype=np.uint8)


def mdpq_encode(phase: np.ndarray, magnitude: np.ndarray, table: MdpqTable) -> np.ndarray:
    """Uniformly quantize each phase with its bin's bit count; row-major, MSB first.

    Levels sit at ``-pi + 2*pi*i / 2**b``; zero-bit entries emit nothing.
    """
    phase = np.asarray(phase, dtype=float)
    if phase.shape != np.shape(magnitude) or phase.ndim != 2:
        raise ValueError("phase and magnitude must be matrices of the same shape")
    bits = mdpq_bin_bits(magnitude, table).ravel()
    idx = _uniform_index(phase.ravel(), bits)
    keep = bits > 0
    return _to_bits(idx[keep], bits[keep])


def mdpq_decode(stream: np.ndarray, magnitude: np.ndarray, table: MdpqTable) -> np.ndarray:
    """Inverse of :func:`mdpq_encode` given the same magnitude ranking; zero-bit entries decode to 0."""
    magnitude = np.asarray(magnitude)
    bits = mdpq_bin_bits(magnitude, table).ravel()
    stream = np.asarray(stream, dtype=np.int64).ravel()
    if stream.size != bits.sum():
        raise FormatError(f"MDPQ stream has {stream.size} bits, expected {int(bits.sum())}", stream.size)
    out = np.zeros(bits.size)
    pos = 0
    for i, w in enumerate(bits.tolist()):
        if w == 0:
            continue
        v = 0
        for bit in stream[pos : pos + w].tolist():
            v = (v << 1) | bit
        pos += w
        out[i] = -np.pi + 2 * np.pi * v / 2**w
    return out.reshape(magnitude.shape)


def mdpq_quantize(phase: np.ndarray, magnitude: np.ndarray, table: MdpqTable) -> np.ndarray:
    """Vectorized encode-then-decode over a stack, for batch evaluation."""
    phase = np.asarray(phase, dtype=float)
    bits = mdpq_bin_bits(magnitude, table)
    idx = _uniform_index(phase, bits)
    return np.where(bits > 0, -np.pi + 2 * np.pi * idx / 2.0**bits, 0.0)


def circular_distance(a, b) -> np.ndarray:
    d = np.mod(np.asarray(a) - np.asarray(b) + np.pi, 2 * np.pi) - np.pi
    return np.abs(d)
