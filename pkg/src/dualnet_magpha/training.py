"""Two-stage training, Adam updates, evaluation and checkpoints.

Stage 1 fits the magnitude encoder/decoder. Stage 2 freezes them, caches the
deployment-mode magnitude estimates once, and fits the phase branch and the
combining network (only the combiner for the MDPQ baseline).
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import decomposition as dec
from .autodiff import NumericError, Tensor
from .channels import CsiDataset, from_angle_delay, nmse_db, to_angle_delay, AngleDelayCsi
from .checkpoint import read_blobs, write_blobs
from .model import SUBNETS, DualNetModel, FrameworkConfig, complex_mse, loss_magnitude, loss_mdpp, loss_naive, loss_smdp

LOSS_KINDS = ("magnitude", "naive", "mdpp", "smdp")
STAGE_SUBNETS = {
    1: ("mag_encoder", "mag_decoder"),
    2: ("phase_encoder", "phase_decoder", "combiner"),
}


class InvalidStateError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    stage: int = 1
    loss_kind: str | None = None
    clip_norm: float = 5.0
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.loss_kind is None:
            self.loss_kind = "magnitude" if self.stage == 1 else "smdp"
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        base = dict(epochs=100, batch_size=50)
        base.update(overrides)
        return cls(**base)


@dataclass
class OptimizerState:
    step: int = 0
    epoch: int = 0
    trace: list[float] = field(default_factory=list)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TrainReport:
    stage: int
    loss_kind: str
    loss_trace: list[float]
    final_test_nmse_db: float
    wall_clock_s: float
    parameter_counts: dict[str, int]
    state: OptimizerState = field(repr=False, default_factory=OptimizerState)

    def to_json(self) -> str:
        """Text form; ``final_test_nmse_db`` is the magnitude NMSE after stage 1."""
        d = {
            "stage": self.stage,
            "loss_kind": self.loss_kind,
            "loss_trace": self.loss_trace,
            "final_test_nmse_db": self.final_test_nmse_db,
            "wall_clock_s": self.wall_clock_s,
            "parameter_counts": self.parameter_counts,
        }
        return json.dumps(d, indent=2)


# ---------------------------------------------------------------------------
# optimizer


def global_norm_clip(params: list[tuple[str, Tensor]], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(t.grad.astype(np.float64) ** 2)) for _, t in params if t.grad is not None)))
    if max_norm and total > max_norm:
        factor = max_norm / total
        for _, t in params:
            if t.grad is not None:
                t.grad = t.grad * np.asarray(factor, dtype=t.grad.dtype)
    return total


def optimizer_step(params: list[tuple[str, Tensor]], state: OptimizerState, cfg: TrainConfig) -> None:
    """One Adam update with bias correction; missing gradients count as zero."""
    for name, t in params:
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, t in params:
        g = np.zeros_like(t.data) if t.grad is None else t.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(t.data)
            v = np.zeros_like(t.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m.astype(t.data.dtype), v.astype(t.data.dtype)
        update = cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        t.data = (t.data - update).astype(t.data.dtype)


def _cast_state(state: OptimizerState, dtype) -> None:
    for d in (state.m, state.v):
        for k in d:
            d[k] = d[k].astype(dtype)


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class Prepared:
    """Angle-delay views of one dataset partition."""

    h_sf: np.ndarray
    h: np.ndarray
    mag: np.ndarray
    cosine: np.ndarray
    signs: dec.SignMatrix
    phase: np.ndarray
    ul_mag: np.ndarray

    def __len__(self) -> int:
        return len(self.h)


def prepare(dataset: CsiDataset, config: FrameworkConfig, part: str) -> Prepared:
    if not dataset.samples:
        raise ValueError("dataset is empty")
    n_f, n_b = dataset.shape
    if n_b != config.n_b or config.q_t > n_f:
        raise ValueError(
            f"dataset dimensions (n_f={n_f}, n_b={n_b}) do not fit model (q_t={config.q_t}, n_b={config.n_b})"
        )
    dl, ul = dataset.stack(part)
    h = to_angle_delay(dl, config.q_f, config.q_l).entries
    ul_mag = np.abs(to_angle_delay(ul, config.q_f, config.q_l).entries)
    mag, cosine, signs = dec.decompose(h)
    return Prepared(dl, h, mag, cosine, signs, np.angle(h), ul_mag)


def calibrate_scale(data: Prepared) -> float:
    """Magnitude scale that maps the typical per-sample peak to one."""
    return float(1.0 / np.mean(data.mag.reshape(len(data), -1).max(axis=1)))


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED, epoch])).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


# ---------------------------------------------------------------------------
# stage loops


def _run(model: DualNetModel, subnets, n: int, cfg: TrainConfig, state: OptimizerState | None, batch_loss) -> tuple[list[float], OptimizerState]:
    state = state or OptimizerState()
    dtype = np.dtype(cfg.dtype)
    model.astype(dtype, subnets)
    _cast_state(state, dtype)
    params = list(model.named_parameters(subnets))
    try:
        for epoch in range(state.epoch, cfg.epochs):
            total, count = 0.0, 0
            for idx in epoch_batches(n, cfg.batch_size, cfg.seed, epoch):
                for _, t in params:
                    t.grad = None
                loss = batch_loss(idx)
                ad.backward(loss)
                global_norm_clip(params, cfg.clip_norm)
                optimizer_step(params, state, cfg)
                total += loss.item() * len(idx)
                count += len(idx)
            state.trace.append(total / count)
            state.epoch = epoch + 1
    finally:
        for _, t in params:
            t.grad = None
        model.astype(np.float64, subnets)
        _cast_state(state, np.float64)
    return list(state.trace), state


def train_stage1(model: DualNetModel, dataset: CsiDataset, cfg: TrainConfig,
                 state: OptimizerState | None = None) -> TrainReport:
    """Fit the magnitude branch on ``loss_magnitude``; soft SSQ throughout."""
    if cfg.stage != 1:
        raise ValueError("train_stage1 needs a stage-1 TrainConfig")
    start = time.perf_counter()
    data = prepare(dataset, model.config, "train")
    if model.config.mag_scale is None:
        model.config.mag_scale = calibrate_scale(data)
    dtype = np.dtype(cfg.dtype)
    mag = data.mag.astype(dtype)
    ul = data.ul_mag.astype(dtype)

    def batch_loss(idx):
        code = model.mag_encode(mag[idx], training=True)
        return loss_magnitude(model.mag_decode(code, ul[idx]), mag[idx])

    trace, state = _run(model, STAGE_SUBNETS[1], len(data), cfg, state, batch_loss)
    model.mag_trained = True
    test = prepare(dataset, model.config, "test") if dataset.test() else data
    mag_hat = magnitude_estimates(model, test)
    ratio = np.sum((mag_hat - test.mag) ** 2, axis=(1, 2)) / np.sum(test.mag**2, axis=(1, 2))
    return TrainReport(1, cfg.loss_kind, trace, float(10 * np.log10(np.mean(ratio))),
                       time.perf_counter() - start, model.parameter_counts(), state)


def magnitude_estimates(model: DualNetModel, data: Prepared, batch_size: int = 500) -> np.ndarray:
    out = []
    for i in range(0, len(data), batch_size):
        code = model.mag_encode(data.mag[i : i + batch_size], training=False)
        out.append(model.mag_decode(code, data.ul_mag[i : i + batch_size]).data)
    return np.concatenate(out)


def _check_pairing(config: FrameworkConfig, loss_kind: str) -> None:
    method = config.phase_method
    ok = loss_kind == method or (method == "mdpq" and loss_kind == "smdp")
    if not ok:
        raise ValueError(f"loss_kind {loss_kind!r} does not fit phase_method {method!r}")


def train_stage2(model: DualNetModel, dataset: CsiDataset, cfg: TrainConfig,
                 state: OptimizerState | None = None) -> TrainReport:
    """Fit phase branch and combiner with the magnitude branch frozen.

    The objective is the configured phase loss on the Pythagorean initial
    estimate plus the complex MSE of the combiner output. For MDPP the
    combiner sees detached phase estimates, so the phase branch follows its
    own loss only; MDPQ trains the combiner alone.
    """
    if cfg.stage != 2:
        raise ValueError("train_stage2 needs a stage-2 TrainConfig")
    if not model.mag_trained:
        raise InvalidStateError("magnitude branch has not been trained (run stage 1 first)")
    if cfg.loss_kind == "magnitude":
        raise ValueError("stage 2 cannot use the magnitude loss")
    _check_pairing(model.config, cfg.loss_kind)
    start = time.perf_counter()
    c = model.config
    data = prepare(dataset, c, "train")
    dtype = np.dtype(cfg.dtype)
    mag_hat = magnitude_estimates(model, data).astype(dtype)
    h = data.h.astype(np.complex64 if dtype == np.float32 else np.complex128)
    mag = data.mag.astype(dtype)
    method = c.phase_method

    if method == "mdpq":
        phase_hat, _ = model.mdpq_phase(data.phase, data.mag, mag_hat.astype(np.float64))
        cos_q, sin_q = np.cos(phase_hat).astype(dtype), np.sin(phase_hat).astype(dtype)
        subnets = ("combiner",)

        def batch_loss(idx):
            re, im = model.combine(mag_hat[idx], Tensor(cos_q[idx]), sine=Tensor(sin_q[idx]))
            return complex_mse(h[idx], re, im)

    elif method == "smdp":
        bits = dec.sign_bits(data.signs, data.mag, c.r_s)
        placed = model.decoder_signs(bits, data.mag, mag_hat.astype(np.float64)).signs.astype(dtype)
        x_in = data.cosine.astype(dtype)
        subnets = STAGE_SUBNETS[2]

        def batch_loss(idx):
            code = model.phase_encode(x_in[idx], training=True)
            cos_hat = model.phase_decode(code, placed[idx])
            branch = loss_smdp(h[idx], mag_hat[idx], cos_hat, placed[idx])
            re, im = model.combine(mag_hat[idx], cos_hat, placed[idx])
            return branch + complex_mse(h[idx], re, im)

    else:
        x_in = data.phase.astype(dtype)
        phase = data.phase.astype(dtype)
        subnets = STAGE_SUBNETS[2]

        def batch_loss(idx):
            theta = model.phase_decode(model.phase_encode(x_in[idx], training=True))
            if method == "naive":
                branch = loss_naive(h[idx], mag_hat[idx], theta)
                cos_t, sin_t = ad.cos(theta), ad.sin(theta)
            else:
                branch = loss_mdpp(theta, phase[idx], mag[idx])
                cos_t, sin_t = Tensor(np.cos(theta.data)), Tensor(np.sin(theta.data))
            re, im = model.combine(mag_hat[idx], cos_t, sine=sin_t)
            return branch + complex_mse(h[idx], re, im)

    trace, state = _run(model, subnets, len(data), cfg, state, batch_loss)
    final = evaluate(model, dataset) if dataset.test() else float("nan")
    return TrainReport(2, cfg.loss_kind, trace, final, time.perf_counter() - start, model.parameter_counts(), state)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model: DualNetModel, dataset: CsiDataset, part: str = "test", r_s: float | None = None,
             genie: bool | None = None) -> float:
    """Deployment-mode NMSE (dB) of the rebuilt spatial-frequency CSI."""
    data = prepare(dataset, model.config, part)
    est = model.reconstruct(data.h, data.ul_mag, r_s=r_s, genie=genie)
    n_f = data.h_sf.shape[-2]
    rebuilt = from_angle_delay(AngleDelayCsi(est, model.config.q_f, model.config.q_l), n_f)
    return nmse_db(list(data.h_sf), list(rebuilt))


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_save(model: DualNetModel, state: OptimizerState | None, path) -> None:
    state = state or OptimizerState()
    blobs = {f"param/{k}": v for k, v in model.state().items()}
    blobs.update({f"adam.m/{k}": v for k, v in state.m.items()})
    blobs.update({f"adam.v/{k}": v for k, v in state.v.items()})
    meta = {
        "config": model.config.to_dict(),
        "mag_trained": model.mag_trained,
        "optimizer": {"step": state.step, "epoch": state.epoch, "trace": state.trace},
    }
    write_blobs(path, blobs, meta)


def checkpoint_load(path) -> tuple[DualNetModel, OptimizerState]:
    blobs, meta = read_blobs(path)
    model = DualNetModel(FrameworkConfig.from_dict(meta["config"]))
    model.load_state({k[len("param/"):]: v for k, v in blobs.items() if k.startswith("param/")})
    model.mag_trained = bool(meta["mag_trained"])
    state = OptimizerState(
        step=int(meta["optimizer"]["step"]),
        epoch=int(meta["optimizer"]["epoch"]),
        trace=[float(x) for x in meta["optimizer"].get("trace", [])],
        m={k[len("adam.m/"):]: v for k, v in blobs.items() if k.startswith("adam.m/")},
        v={k[len("adam.v/"):]: v for k, v in blobs.items() if k.startswith("adam.v/")},
    )
    return model, state


def with_magnitude_branch(trained: DualNetModel, config: FrameworkConfig) -> DualNetModel:
    """New model for ``config`` that reuses an already trained magnitude branch.

    The magnitude sub-networks do not depend on any phase-side setting, so
    every stage-2 variant in a comparison can start from one stage-1 run.
    """
    if not trained.mag_trained:
        raise InvalidStateError("source model has no trained magnitude branch")
    base = trained.config
    for key in ("q_t", "q_f", "n_b", "cr_mag", "k_mag", "kernel", "leaky_slope", "ssq_sharpness"):
        if getattr(base, key) != getattr(config, key):
            raise ValueError(f"magnitude branch mismatch on {key}: {getattr(base, key)} vs {getattr(config, key)}")
    config = dataclasses.replace(config, mag_scale=base.mag_scale)
    model = DualNetModel(config)
    for name in STAGE_SUBNETS[1]:
        model.stores[name].load_state(trained.stores[name].state())
    model.mag_trained = True
    return model
