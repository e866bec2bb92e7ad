"""DualNet-MAG-PHA: magnitude branch with uplink side information, phase branch
with sign feedback, residual combining network and the training losses.

Arrays carry a leading batch axis ``[batch, q_t, n_b]``; single matrices are
accepted wherever a batch is and are returned unbatched.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import decomposition as dec
from .autodiff import ParameterStore, Tensor
from .channels import split_rows
from .layers import CORE_KINDS, core_specs, init_core, apply_core

PHASE_METHODS = ("smdp", "naive", "mdpp", "mdpq")
QUANTIZERS = ("ssq", "blq")
SUBNETS = ("mag_encoder", "mag_decoder", "phase_encoder", "phase_decoder", "combiner")


@dataclass
class FrameworkConfig:
    q_t: int = 16
    n_b: int = 64
    cr_mag: float = 1 / 4
    cr_pha: float = 1 / 8
    k_mag: int = 8
    k_pha: int = 8
    r_s: float = 0.25
    core_kind: str = "circular-conv"
    quantizer_kind: str = "ssq"
    phase_method: str = "smdp"
    kernel: int = 7
    ssq_sharpness: float = 50.0
    leaky_slope: float = 0.3
    sign_mask_channel: bool = False
    genie_signs: bool = False
    mag_scale: float | None = None
    mdpq_thresholds: tuple[float, ...] = (0.0, 0.5, 0.7, 0.8, 0.9)
    mdpq_bits: tuple[int, ...] = (0, 0, 0, 3, 7)
    q_f: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.q_f is None:
            self.q_f = split_rows(self.q_t)[0]
        if not 0 < self.q_f <= self.q_t:
            raise ValueError(f"q_f must lie in (0, q_t], got {self.q_f}")
        for name in ("cr_mag", "cr_pha", "r_s"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {getattr(self, name)}")
        if self.k_mag < 1 or self.k_pha < 1:
            raise ValueError("quantizer bits must be at least 1")
        if self.core_kind not in CORE_KINDS:
            raise ValueError(f"core_kind must be one of {CORE_KINDS}, got {self.core_kind!r}")
        if self.quantizer_kind not in QUANTIZERS:
            raise ValueError(f"quantizer_kind must be one of {QUANTIZERS}, got {self.quantizer_kind!r}")
        if self.phase_method not in PHASE_METHODS:
            raise ValueError(f"phase_method must be one of {PHASE_METHODS}, got {self.phase_method!r}")
        self.mdpq_thresholds = tuple(float(t) for t in self.mdpq_thresholds)
        self.mdpq_bits = tuple(int(b) for b in self.mdpq_bits)

    @classmethod
    def desk(cls, **overrides) -> "FrameworkConfig":
        base = dict(q_t=8, n_b=32)
        base.update(overrides)
        return cls(**base)

    @property
    def q_l(self) -> int:
        return self.q_t - self.q_f

    @property
    def entries(self) -> int:
        return self.q_t * self.n_b

    @property
    def mag_codeword_len(self) -> int:
        return dec.codeword_length(self.cr_mag, self.q_t, self.n_b)

    @property
    def phase_codeword_len(self) -> int:
        n = dec.codeword_length(self.cr_pha, self.q_t, self.n_b)
        return n * self.k_pha if self.quantizer_kind == "blq" else n

    @property
    def phase_bits(self) -> int:
        """Bits per phase codeword entry."""
        return 1 if self.quantizer_kind == "blq" else self.k_pha

    @property
    def uses_signs(self) -> bool:
        return self.phase_method == "smdp"

    @property
    def mdpq_table(self) -> dec.MdpqTable:
        return dec.MdpqTable(self.mdpq_thresholds, self.mdpq_bits)

    def phase_feedback_bits(self) -> int:
        """Total phase-part payload bits for this configuration."""
        if self.phase_method == "mdpq":
            return dec.mdpq_total_bits(self.q_t, self.n_b, self.mdpq_table)
        codeword = self.phase_codeword_len * self.phase_bits
        if self.uses_signs:
            return codeword + dec.n_transmitted(self.r_s, self.q_t, self.n_b)
        return codeword

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mdpq_thresholds"] = list(self.mdpq_thresholds)
        d["mdpq_bits"] = list(self.mdpq_bits)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FrameworkConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# payload


@dataclass
class FeedbackPayload:
    mag_codeword: np.ndarray  # level indices
    phase_codeword: np.ndarray  # level indices
    sign_bits: np.ndarray
    mag_bits: int
    phase_bits: int
    mdpq_bits: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))

    def bit_list(self) -> np.ndarray:
        parts = [
            _index_bits(self.mag_codeword, self.mag_bits),
            _index_bits(self.phase_codeword, self.phase_bits),
            np.asarray(self.sign_bits, dtype=np.uint8),
            np.asarray(self.mdpq_bits, dtype=np.uint8),
        ]
        return np.concatenate(parts)

    @property
    def bit_length(self) -> int:
        return int(self.bit_list().size)

    @property
    def phase_bit_length(self) -> int:
        return self.bit_length - len(self.mag_codeword) * self.mag_bits

    def serialize(self) -> bytes:
        """Big-endian bit packing, zero-padded to a byte boundary."""
        return np.packbits(self.bit_list()).tobytes()

    @classmethod
    def deserialize(cls, blob: bytes, config: FrameworkConfig) -> "FeedbackPayload":
        bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8))
        n_mag = config.mag_codeword_len * config.k_mag
        if config.phase_method == "mdpq":
            n_pha, n_sign = 0, 0
            n_mdpq = config.phase_feedback_bits()
        else:
            n_pha = config.phase_codeword_len * config.phase_bits
            n_sign = dec.n_transmitted(config.r_s, config.q_t, config.n_b) if config.uses_signs else 0
            n_mdpq = 0
        need = n_mag + n_pha + n_sign + n_mdpq
        if bits.size < need or bits.size - need >= 8:
            raise ValueError(f"payload holds {bits.size} bits, expected {need} plus padding")
        mag = _bits_index(bits[:n_mag], config.k_mag)
        pha = _bits_index(bits[n_mag : n_mag + n_pha], config.phase_bits) if n_pha else np.zeros(0, np.int64)
        signs = bits[n_mag + n_pha : n_mag + n_pha + n_sign]
        mdpq = bits[n_mag + n_pha + n_sign : need]
        return cls(mag, pha, signs.copy(), config.k_mag, config.phase_bits, mdpq.copy())


def _index_bits(values: np.ndarray, width: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64).ravel()
    shifts = np.arange(width - 1, -1, -1)
    return ((values[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def _bits_index(bits: np.ndarray, width: int) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64).reshape(-1, width)
    return b @ (1 << np.arange(width - 1, -1, -1))


# ---------------------------------------------------------------------------
# losses (batch-averaged squared Frobenius norms)


def _batch(x) -> int:
    shape = x.shape
    return shape[0] if len(shape) == 3 else 1


def _like(x, t: Tensor) -> np.ndarray:
    return np.asarray(x, dtype=t.data.dtype)


def loss_magnitude(mag_hat, mag) -> Tensor:
    mag_hat = ad.as_tensor(mag_hat)
    return ad.sum_all(ad.square(ad.sub(mag_hat, _like(mag, mag_hat)))) * (1.0 / _batch(mag_hat))


def complex_mse(h, re_hat, im_hat) -> Tensor:
    h = np.asarray(h)
    re_hat, im_hat = ad.as_tensor(re_hat), ad.as_tensor(im_hat)
    err = ad.square(ad.sub(re_hat, _like(h.real, re_hat))) + ad.square(ad.sub(im_hat, _like(h.imag, im_hat)))
    return ad.sum_all(err) * (1.0 / _batch(h))


def loss_naive(h, mag_hat, phase_hat) -> Tensor:
    """Complex MSE with the estimate formed as ``mag_hat * exp(j * phase_hat)``."""
    mag_hat, phase_hat = ad.as_tensor(mag_hat), ad.as_tensor(phase_hat)
    return complex_mse(h, mag_hat * ad.cos(phase_hat), mag_hat * ad.sin(phase_hat))


def loss_mdpp(phase_hat, phase, mag) -> Tensor:
    """Radian phase error weighted by the true magnitude; the difference is not wrapped."""
    phase_hat = ad.as_tensor(phase_hat)
    weighted = ad.mul(ad.sub(phase_hat, _like(phase, phase_hat)), _like(mag, phase_hat))
    return ad.sum_all(ad.square(weighted)) * (1.0 / _batch(phase_hat))


def sine_hat(cos_hat: Tensor, signs) -> Tensor:
    return ad.mul(ad.sqrt_guarded(ad.sub(1.0, ad.square(cos_hat))), _like(signs, cos_hat))


def loss_smdp(h, mag_hat, cos_hat, signs) -> Tensor:
    """``||Re H - m*c||^2 + ||Im H - m*A*sqrt(1 - c^2)||^2``, batch-averaged."""
    mag_hat, cos_hat = ad.as_tensor(mag_hat), ad.as_tensor(cos_hat)
    signs = signs.signs if isinstance(signs, dec.SignMatrix) else signs
    return complex_mse(h, mag_hat * cos_hat, mag_hat * sine_hat(cos_hat, signs))


# ---------------------------------------------------------------------------
# model


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(getattr(x, "entries", x))
    return (x[None], True) if x.ndim == 2 else (x, False)


class DualNetModel:
    """Parameter stores for the five sub-networks plus the forward pipeline."""

    def __init__(self, config: FrameworkConfig):
        self.config = config
        self.mag_trained = False
        c = config
        hw = (c.q_t, c.n_b)
        leaky = "leaky-linear"
        self.specs = {
            "mag_encoder": core_specs("circular-conv", (1, 16, 8, 4, 1), (leaky,) * 4, c.kernel),
            "mag_decoder": core_specs("circular-conv", (2, 16, 8, 4, 1), (leaky,) * 3 + ("abs",), c.kernel),
        }
        dec_in = 1
        if c.uses_signs:
            dec_in = 3 if c.sign_mask_channel else 2
        pha_out = "tanh" if c.phase_method == "smdp" else "none"
        self.specs["phase_encoder"] = core_specs(c.core_kind, (1, 16, 8, 4, 1), ("tanh",) * 4, c.kernel)
        self.specs["phase_decoder"] = core_specs(c.core_kind, (dec_in, 16, 8, 4, 1), ("tanh",) * 3 + (pha_out,), c.kernel)
        self.specs["combiner"] = core_specs(c.core_kind, (2, 16, 8, 4, 2), (leaky,) * 3 + ("none",), c.kernel)

        self.stores = {name: ParameterStore() for name in SUBNETS}
        n = c.entries
        for i, name in enumerate(SUBNETS):
            rng = np.random.default_rng(np.random.SeedSequence([c.seed, i]))
            store = self.stores[name]
            if name == "mag_encoder":
                init_core(store, "core", self.specs[name], hw, rng)
                store.add("fc.w", ad.glorot_uniform(rng, (c.mag_codeword_len, n), n, c.mag_codeword_len))
                store.add("fc.b", np.zeros(c.mag_codeword_len))
            elif name == "mag_decoder":
                store.add("fc.w", ad.glorot_uniform(rng, (n, c.mag_codeword_len), c.mag_codeword_len, n))
                store.add("fc.b", np.zeros(n))
                init_core(store, "core", self.specs[name], hw, rng)
            elif name == "phase_encoder":
                init_core(store, "core", self.specs[name], hw, rng)
                store.add("fc.w", ad.glorot_uniform(rng, (c.phase_codeword_len, n), n, c.phase_codeword_len))
                store.add("fc.b", np.zeros(c.phase_codeword_len))
            elif name == "phase_decoder":
                store.add("fc.w", ad.glorot_uniform(rng, (n, c.phase_codeword_len), c.phase_codeword_len, n))
                store.add("fc.b", np.zeros(n))
                init_core(store, "core", self.specs[name], hw, rng)
            else:
                init_core(store, "core", self.specs[name], hw, rng, zero_last=True)

    # -- bookkeeping ---------------------------------------------------------

    @property
    def mag_encoder(self) -> ParameterStore:
        return self.stores["mag_encoder"]

    @property
    def mag_decoder(self) -> ParameterStore:
        return self.stores["mag_decoder"]

    @property
    def phase_encoder(self) -> ParameterStore:
        return self.stores["phase_encoder"]

    @property
    def phase_decoder(self) -> ParameterStore:
        return self.stores["phase_decoder"]

    @property
    def combiner(self) -> ParameterStore:
        return self.stores["combiner"]

    def named_parameters(self, subnets=SUBNETS):
        for s in subnets:
            for name, t in self.stores[s]:
                yield f"{s}/{name}", t

    def parameter_counts(self) -> dict[str, int]:
        return {name: store.count() for name, store in self.stores.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters()}

    def load_state(self, values: dict[str, np.ndarray]) -> None:
        for s in SUBNETS:
            prefix = f"{s}/"
            self.stores[s].load_state({k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)})

    @property
    def dtype(self) -> np.dtype:
        return getattr(self, "_dtype", np.dtype(np.float64))

    def astype(self, dtype, subnets=SUBNETS) -> "DualNetModel":
        """Cast parameters in place and set the dtype used for inputs.

        Only ``subnets`` are cast, so frozen branches keep their exact values
        when a stage trains in float32 and casts back afterwards.
        """
        self._dtype = np.dtype(dtype)
        for _, t in self.named_parameters(subnets):
            t.data = t.data.astype(dtype)
        return self

    def _const(self, x) -> Tensor:
        return Tensor(np.asarray(x, dtype=self.dtype))

    @property
    def scale(self) -> float:
        return 1.0 if self.config.mag_scale is None else self.config.mag_scale

    def _check_image(self, x: np.ndarray, what: str) -> None:
        want = (self.config.q_t, self.config.n_b)
        if x.shape[-2:] != want:
            raise ValueError(f"{what}: expected trailing shape {want}, got {x.shape}")

    def _quantize(self, x: Tensor, bits: int, training: bool) -> Tensor:
        if self.config.quantizer_kind == "blq":
            return ad.blq_quantize(x)
        return ad.ssq_quantize(x, bits, self.config.ssq_sharpness, training)

    def _encode(self, store: ParameterStore, specs, image: Tensor, bits: int, training: bool) -> Tensor:
        batch = image.shape[0]
        x = apply_core(image, store, "core", specs, self.config.leaky_slope)
        x = ad.dense(ad.reshape(x, (batch, -1)), store["fc.w"], store["fc.b"])
        return self._quantize(ad.sigmoid(x), bits, training)

    def _expand(self, store: ParameterStore, code: Tensor) -> Tensor:
        batch = code.shape[0]
        x = ad.dense(code, store["fc.w"], store["fc.b"])
        return ad.reshape(x, (batch, 1, self.config.q_t, self.config.n_b))

    def _check_code(self, code, length: int, what: str) -> tuple[Tensor, bool]:
        code = ad.as_tensor(code)
        single = code.ndim == 1
        if single:
            code = ad.reshape(code, (1, -1))
        if code.shape[-1] != length:
            raise ValueError(f"{what}: codeword length {code.shape[-1]} != {length}")
        return code, single

    # -- magnitude branch ----------------------------------------------------

    def mag_encode(self, mag, training: bool = False) -> Tensor:
        m, single = _as_batch(mag)
        self._check_image(m, "mag_encode")
        img = self._const(m[:, None] * self.scale)
        # the quantizer ablation only touches the phase branch
        batch = img.shape[0]
        x = apply_core(img, self.mag_encoder, "core", self.specs["mag_encoder"], self.config.leaky_slope)
        x = ad.sigmoid(ad.dense(ad.reshape(x, (batch, -1)), self.mag_encoder["fc.w"], self.mag_encoder["fc.b"]))
        code = ad.ssq_quantize(x, self.config.k_mag, self.config.ssq_sharpness, training)
        return ad.reshape(code, (-1,)) if single else code

    def mag_decode(self, codeword, ul_mag) -> Tensor:
        code, single = self._check_code(codeword, self.config.mag_codeword_len, "mag_decode")
        ul, _ = _as_batch(ul_mag)
        self._check_image(ul, "mag_decode")
        x = self._expand(self.mag_decoder, code)
        x = ad.concat([x, self._const(ul[:, None] * self.scale)], axis=1)
        x = apply_core(x, self.mag_decoder, "core", self.specs["mag_decoder"], self.config.leaky_slope)
        out = ad.reshape(x, (-1, self.config.q_t, self.config.n_b)) * (1.0 / self.scale)
        return ad.reshape(out, out.shape[1:]) if single else out

    # -- phase branch --------------------------------------------------------

    def phase_input(self, h) -> np.ndarray:
        """Cosine matrix for SMDP, raw phase in radians for the naive/MDPP variants."""
        h, single = _as_batch(h)
        x = dec.decompose(h)[1] if self.config.phase_method == "smdp" else np.angle(h)
        return x[0] if single else x

    def phase_encode(self, x, training: bool = False) -> Tensor:
        a, single = _as_batch(x)
        self._check_image(a, "phase_encode")
        if self.config.phase_method == "smdp" and np.any(np.abs(a) > 1 + dec.COSINE_SLACK):
            raise ValueError("phase_encode: cosine entries outside [-1, 1]")
        code = self._encode(self.phase_encoder, self.specs["phase_encoder"], self._const(a[:, None]),
                            self.config.k_pha, training)
        return ad.reshape(code, (-1,)) if single else code

    def phase_decode(self, codeword, signs=None) -> Tensor:
        """Cosine estimate in (-1, 1) (SMDP) or a phase estimate in radians (naive/MDPP)."""
        code, single = self._check_code(codeword, self.config.phase_codeword_len, "phase_decode")
        x = self._expand(self.phase_decoder, code)
        if self.config.uses_signs:
            if signs is None:
                raise ValueError("phase_decode: the SMDP decoder needs the sign matrix")
            s, _ = _as_batch(signs.signs if isinstance(signs, dec.SignMatrix) else signs)
            self._check_image(s, "phase_decode signs")
            channels = [x, self._const(s[:, None])]
            if self.config.sign_mask_channel:
                mask, _ = _as_batch(signs.transmitted if isinstance(signs, dec.SignMatrix) else np.ones_like(s))
                channels.append(self._const(mask[:, None]))
            x = ad.concat(channels, axis=1)
        x = apply_core(x, self.phase_decoder, "core", self.specs["phase_decoder"], self.config.leaky_slope)
        out = ad.reshape(x, (-1, self.config.q_t, self.config.n_b))
        return ad.reshape(out, out.shape[1:]) if single else out

    # -- combining network ---------------------------------------------------

    def combine(self, mag_hat, cos_hat, signs=None, sine=None) -> tuple[Tensor, Tensor]:
        """Pythagorean initial estimate refined residually; returns (real, imaginary).

        Pass ``signs`` to rebuild the sine from the cosine, or ``sine`` directly.
        """
        mag_hat, cos_hat = ad.as_tensor(mag_hat), ad.as_tensor(cos_hat)
        if mag_hat.shape != cos_hat.shape:
            raise ValueError(f"combine: shapes {mag_hat.shape} and {cos_hat.shape} differ")
        single = mag_hat.ndim == 2
        if single:
            mag_hat = ad.reshape(mag_hat, (1,) + mag_hat.shape)
            cos_hat = ad.reshape(cos_hat, (1,) + cos_hat.shape)
        self._check_image(mag_hat.data, "combine")
        if sine is None:
            if signs is None:
                raise ValueError("combine needs either signs or sine")
            s = self._const(signs.signs if isinstance(signs, dec.SignMatrix) else signs).data
            s = s.reshape(mag_hat.shape)
            sine = sine_hat(cos_hat, s)
        else:
            sine = ad.as_tensor(sine)
            if single:
                sine = ad.reshape(sine, mag_hat.shape)
        re0, im0 = mag_hat * cos_hat, mag_hat * sine
        b, h, w = re0.shape
        image = ad.concat([ad.reshape(re0, (b, 1, h, w)), ad.reshape(im0, (b, 1, h, w))], axis=1)
        refined = apply_core(ad.mul(image, self.scale), self.combiner, "core", self.specs["combiner"],
                             self.config.leaky_slope)
        out = ad.add(image, ad.mul(refined, 1.0 / self.scale))
        re = ad.reshape(ad.take_channels(out, 0, 1), (b, h, w))
        im = ad.reshape(ad.take_channels(out, 1, 2), (b, h, w))
        if single:
            re, im = ad.reshape(re, (h, w)), ad.reshape(im, (h, w))
        return re, im

    # -- sign handling -------------------------------------------------------

    def decoder_signs(self, bits: np.ndarray, mag_true: np.ndarray, mag_hat: np.ndarray,
                      r_s: float | None = None, genie: bool | None = None) -> dec.SignMatrix:
        r_s = self.config.r_s if r_s is None else r_s
        genie = self.config.genie_signs if genie is None else genie
        return dec.place_signs(bits, mag_true if genie else mag_hat, r_s)

    def mdpq_phase(self, phase: np.ndarray, mag_true: np.ndarray, mag_hat: np.ndarray,
                   genie: bool | None = None) -> tuple[np.ndarray, list[np.ndarray]]:
        """Encode with the true magnitude ranking, decode with the gNB's ranking."""
        genie = self.config.genie_signs if genie is None else genie
        table = self.config.mdpq_table
        if genie:
            return dec.mdpq_quantize(phase, mag_true, table), [
                dec.mdpq_encode(p, m, table) for p, m in zip(phase, mag_true)
            ]
        streams, out = [], np.zeros_like(phase)
        for i in range(phase.shape[0]):
            stream = dec.mdpq_encode(phase[i], mag_true[i], table)
            streams.append(stream)
            out[i] = dec.mdpq_decode(stream, mag_hat[i], table)
        return out, streams

    # -- end to end ----------------------------------------------------------

    def forward(self, h, ul_mag, training: bool = False, r_s: float | None = None, genie: bool | None = None):
        """Encode, feed back and reconstruct; returns (complex estimate, payload(s))."""
        hb, single = _as_batch(h)
        ul, _ = _as_batch(ul_mag)
        self._check_image(hb, "forward")
        if ul.shape != hb.shape:
            raise ValueError(f"forward: uplink magnitude shape {ul.shape} != CSI shape {hb.shape}")
        c = self.config
        r_s = c.r_s if r_s is None else r_s
        mag, cosine, signs = dec.decompose(hb)

        mag_code = self.mag_encode(mag, training)
        mag_hat = self.mag_decode(mag_code, ul)
        mh = mag_hat.data

        sign_bits = np.zeros((hb.shape[0], 0), dtype=np.uint8)
        mdpq_streams = [np.zeros(0, np.uint8)] * hb.shape[0]
        phase_code = np.zeros((hb.shape[0], 0))
        if c.phase_method == "mdpq":
            phase_hat, mdpq_streams = self.mdpq_phase(np.angle(hb), mag, mh, genie)
            re, im = self.combine(mag_hat, Tensor(np.cos(phase_hat)), sine=Tensor(np.sin(phase_hat)))
        else:
            code = self.phase_encode(self.phase_input(hb), training)
            phase_code = code.data
            if c.uses_signs:
                sign_bits = dec.sign_bits(signs, mag, r_s)
                placed = self.decoder_signs(sign_bits, mag, mh, r_s, genie)
                cos_hat = self.phase_decode(code, placed)
                re, im = self.combine(mag_hat, cos_hat, placed)
            else:
                theta = self.phase_decode(code)
                re, im = self.combine(mag_hat, ad.cos(theta), sine=ad.sin(theta))

        estimate = re.data + 1j * im.data
        mag_idx = ad.level_indices(mag_code.data, c.k_mag)
        pha_idx = ad.level_indices(phase_code, c.phase_bits) if phase_code.size else phase_code.astype(np.int64)
        payloads = [
            FeedbackPayload(mag_idx[i], pha_idx[i], sign_bits[i], c.k_mag, c.phase_bits, mdpq_streams[i])
            for i in range(hb.shape[0])
        ]
        if single:
            return estimate[0], payloads[0]
        return estimate, payloads

    def reconstruct(self, h, ul_mag, batch_size: int = 250, **kw) -> np.ndarray:
        """Deployment-mode estimates for a stack, evaluated in chunks."""
        out = []
        for i in range(0, len(h), batch_size):
            est, _ = self.forward(h[i : i + batch_size], ul_mag[i : i + batch_size], **kw)
            out.append(est)
        return np.concatenate(out)
