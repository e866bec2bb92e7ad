"""Experiment specs, comparison sweeps and CSV/JSON reporting.

Spec files are plain text::

    # comment
    [experiment]
    name = desk-losses
    [channel]
    n_f = 64
    n_samples = 5000
    [sweep]
    cr_pha = 1/8, 1/16
    r_s = 0.25, 0.125

Unknown sections or keys are errors that name the key and line.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from . import decomposition as dec
from .channels import ChannelModelConfig, CsiDataset, dataset_load, generate_dataset
from .model import DualNetModel, FrameworkConfig
from .training import TrainConfig, evaluate, train_stage1, train_stage2, with_magnitude_branch

CSV_HEADER = (
    "method", "core_kind", "quantizer_kind", "cr_pha", "r_s", "phase_bits",
    "bits_per_phase_entry", "nmse_db", "parameter_count", "seed",
)


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = f" (key {key!r}, line {line})" if key is not None else (f" (line {line})" if line else "")
        super().__init__(message + where)
        self.key, self.line = key, line


# ---------------------------------------------------------------------------
# text config

_CHANNEL_KEYS = {f.name for f in dataclasses.fields(ChannelModelConfig)} | {"n_samples", "n_train"}
_FRAMEWORK_KEYS = {f.name for f in dataclasses.fields(FrameworkConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"stage", "loss_kind"}
SECTIONS = {
    "experiment": {"name", "dataset", "out"},
    "channel": _CHANNEL_KEYS,
    "framework": _FRAMEWORK_KEYS,
    "train": _TRAIN_KEYS,
    "sweep": {"cr_pha", "r_s", "methods", "cores", "quantizers"},
}


def _scalar(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low == "none":
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        return text


def parse_value(text: str):
    """Scalars, ``a/b`` fractions, booleans, or comma-separated lists of them."""
    text = text.strip()
    if "," in text:
        return [_scalar(p.strip()) for p in text.split(",") if p.strip()]
    return _scalar(text)


def parse_config(text: str) -> dict[str, dict[str, tuple[object, int]]]:
    """Parse ``[section]`` / ``key = value`` text into values tagged with line numbers."""
    out: dict[str, dict[str, tuple[object, int]]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", section, lineno)
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line, lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if section is None:
            raise ConfigError("key outside any section", key, lineno)
        if key not in SECTIONS[section]:
            raise ConfigError(f"unknown key in [{section}]", key, lineno)
        out[section][key] = (parse_value(value), lineno)
    return out


def _build(cls, values: dict[str, tuple[object, int]], base: dict):
    kw = dict(base)
    kw.update({k: v for k, (v, _) in values.items()})
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        key = next(iter(values), None)
        line = values[key][1] if key else None
        raise ConfigError(f"invalid {cls.__name__}: {exc}", key, line) from exc


def _as_list(v) -> list:
    return list(v) if isinstance(v, list) else [v]


# ---------------------------------------------------------------------------
# spec


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    channel: ChannelModelConfig = field(default_factory=ChannelModelConfig)
    n_samples: int = 80_000
    n_train: int = 60_000
    framework: FrameworkConfig = field(default_factory=FrameworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: Path = Path("out")
    dataset_path: Path | None = None
    cr_pha: list[float] = field(default_factory=lambda: [1 / 8, 1 / 16])
    r_s: list[float] = field(default_factory=lambda: [0.25, 0.125])
    methods: list[str] = field(default_factory=lambda: ["smdp", "mdpp", "naive", "mdpq"])
    cores: list[str] = field(default_factory=lambda: ["dense", "linear-conv", "circular-conv"])
    quantizers: list[str] = field(default_factory=lambda: ["ssq", "blq"])

    def __post_init__(self):
        if not self.cr_pha:
            raise ValueError("the sweep needs at least one cr_pha")
        if len(self.r_s) != len(self.cr_pha):
            raise ValueError("r_s needs one value per cr_pha")
        if not 0 < self.n_train <= self.n_samples:
            raise ValueError(f"n_train must lie in (0, n_samples], got {self.n_train}")

    @classmethod
    def desk(cls, **overrides) -> "ExperimentSpec":
        base = dict(
            name="desk", channel=ChannelModelConfig.desk(), n_samples=5000, n_train=4000,
            framework=FrameworkConfig.desk(), train=TrainConfig.desk(),
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_text(cls, text: str, desk_scale: bool = False) -> "ExperimentSpec":
        sections = parse_config(text)
        start = cls.desk() if desk_scale else cls()
        ch = sections.get("channel", {})
        ch_cfg = {k: v for k, v in ch.items() if k not in ("n_samples", "n_train")}
        exp = sections.get("experiment", {})
        sweep = {k: _as_list(v) for k, (v, _) in sections.get("sweep", {}).items()}
        fw = dict(sections.get("framework", {}))
        for key in ("mdpq_thresholds", "mdpq_bits"):
            if key in fw:
                fw[key] = (_as_list(fw[key][0]), fw[key][1])
        fw_base = start.framework.to_dict()
        if "q_t" in fw and "q_f" not in fw:
            fw_base["q_f"] = None  # re-derive the row split for the new window
        kw = dict(
            name=str(exp.get("name", (start.name, 0))[0]),
            channel=_build(ChannelModelConfig, ch_cfg, dataclasses.asdict(start.channel)),
            n_samples=int(ch.get("n_samples", (start.n_samples, 0))[0]),
            n_train=int(ch.get("n_train", (start.n_train, 0))[0]),
            framework=_build(FrameworkConfig, fw, fw_base),
            train=_build(TrainConfig, sections.get("train", {}), dataclasses.asdict(start.train)),
            out_dir=Path(str(exp.get("out", (start.out_dir, 0))[0])),
            dataset_path=Path(str(exp["dataset"][0])) if "dataset" in exp else None,
        )
        for key in ("cr_pha", "r_s", "methods", "cores", "quantizers"):
            kw[key] = [float(x) if key in ("cr_pha", "r_s") else str(x) for x in sweep.get(key, getattr(start, key))]
        try:
            return cls(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path, desk_scale: bool = False) -> "ExperimentSpec":
        return cls.from_text(Path(path).read_text(), desk_scale)

    def with_seed(self, seed: int) -> "ExperimentSpec":
        return dataclasses.replace(
            self,
            channel=dataclasses.replace(self.channel, rng_seed=seed),
            framework=dataclasses.replace(self.framework, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )

    def with_genie(self, genie: bool) -> "ExperimentSpec":
        return dataclasses.replace(self, framework=dataclasses.replace(self.framework, genie_signs=genie))

    def dataset(self) -> CsiDataset:
        if self.dataset_path is not None:
            return dataset_load(self.dataset_path)
        return generate_dataset(self.channel, self.n_samples, self.n_train)

    def loss_sweep(self) -> list[tuple[str, float, FrameworkConfig]]:
        """(method, nominal cr_pha, matched config) cells in spec order."""
        return [
            (m, cr, matched_config(self.framework, m, cr, rs))
            for cr, rs in zip(self.cr_pha, self.r_s)
            for m in self.methods
        ]

    def core_sweep(self, cr_pha: float = 1 / 8) -> list[tuple[str, float, FrameworkConfig]]:
        rows = []
        for core in self.cores:
            for q in self.quantizers:
                cfg = dataclasses.replace(self.framework, phase_method="smdp", cr_pha=cr_pha,
                                          core_kind=core, quantizer_kind=q)
                rows.append((f"{core}+{q}", cr_pha, cfg))
        return rows


# ---------------------------------------------------------------------------
# matched budgets


def matched_config(base: FrameworkConfig, method: str, cr_pha: float, r_s: float) -> FrameworkConfig:
    """Phase-side settings spending the SMDP bit budget at ``cr_pha``.

    Naive keeps ``k_pha`` bits and gains codewords; MDPP keeps the codeword
    count and gains quantizer bits; MDPQ uses its allocation table for the
    ratio and reports whatever that table spends.
    """
    smdp = dataclasses.replace(base, phase_method="smdp", cr_pha=cr_pha, r_s=r_s)
    target = smdp.phase_feedback_bits()
    if method == "smdp":
        return smdp
    if method == "naive":
        n_code = target // base.k_pha
        return dataclasses.replace(smdp, phase_method="naive", cr_pha=n_code / base.entries)
    if method == "mdpp":
        n_code = smdp.phase_codeword_len
        return dataclasses.replace(smdp, phase_method="mdpp", k_pha=max(1, round(target / n_code)))
    if method == "mdpq":
        table = dec.MDPQ_TABLES.get(cr_pha, base.mdpq_table)
        return dataclasses.replace(smdp, phase_method="mdpq", mdpq_thresholds=table.cdf_thresholds,
                                   mdpq_bits=table.bits_per_bin)
    raise ValueError(f"unknown method {method!r}")


def phase_parameter_count(model: DualNetModel) -> int:
    """Learned phase-branch weights; the MDPQ baseline has none."""
    if model.config.phase_method == "mdpq":
        return 0
    counts = model.parameter_counts()
    return counts["phase_encoder"] + counts["phase_decoder"]


# ---------------------------------------------------------------------------
# results


@dataclass
class ResultRow:
    method: str
    core_kind: str
    quantizer_kind: str
    cr_pha: float
    r_s: float
    phase_bits: int
    bits_per_phase_entry: float
    nmse_db: float
    parameter_count: int
    seed: int
    wall_clock_s: float = 0.0

    @classmethod
    def from_model(cls, label: str, model: DualNetModel, nmse: float, seconds: float,
                   cr_pha: float | None = None) -> "ResultRow":
        """``cr_pha`` is the nominal sweep ratio; budget matching may change the model's own."""
        c = model.config
        bits = c.phase_feedback_bits()
        cr = c.cr_pha if cr_pha is None else cr_pha
        return cls(label, c.core_kind, c.quantizer_kind, cr, c.r_s, bits, bits / c.entries,
                   nmse, phase_parameter_count(model), c.seed, seconds)


def rows_to_csv(rows: list[ResultRow]) -> str:
    """Fixed header; timings are left out so reruns compare byte for byte."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([
            r.method, r.core_kind, r.quantizer_kind, repr(float(r.cr_pha)), repr(float(r.r_s)), r.phase_bits,
            repr(float(r.bits_per_phase_entry)), repr(float(r.nmse_db)), r.parameter_count, r.seed,
        ])
    return buf.getvalue()


def rows_to_json(rows: list[ResultRow], timings: bool = False) -> str:
    keys = CSV_HEADER + (("wall_clock_s",) if timings else ())
    return json.dumps([{k: getattr(r, k) for k in keys} for r in rows], indent=2)


def write_rows(rows: list[ResultRow], out_dir, stem: str, as_json: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{stem}.csv"]
    paths[0].write_text(rows_to_csv(rows))
    timing = out / f"{stem}_timings.csv"
    timing.write_text("method,cr_pha,wall_clock_s\n" + "".join(
        f"{r.method},{r.cr_pha!r},{r.wall_clock_s:.3f}\n" for r in rows))
    paths.append(timing)
    if as_json:
        paths.append(out / f"{stem}.json")
        paths[-1].write_text(rows_to_json(rows))
    return paths


# ---------------------------------------------------------------------------
# sweeps


def train_magnitude(spec: ExperimentSpec, dataset: CsiDataset) -> DualNetModel:
    model = DualNetModel(spec.framework)
    train_stage1(model, dataset, dataclasses.replace(spec.train, stage=1, loss_kind="magnitude"))
    return model


def run_stage2(base: DualNetModel, label: str, config: FrameworkConfig, spec: ExperimentSpec,
               dataset: CsiDataset, cr_pha: float | None = None) -> tuple[ResultRow, DualNetModel]:
    model = with_magnitude_branch(base, config)
    loss = "smdp" if config.phase_method == "mdpq" else config.phase_method
    report = train_stage2(model, dataset, dataclasses.replace(spec.train, stage=2, loss_kind=loss))
    nmse = report.final_test_nmse_db if dataset.test() else evaluate(model, dataset, "train")
    return ResultRow.from_model(label, model, nmse, report.wall_clock_s, cr_pha), model


def _sweep(spec, cells, dataset, base, progress) -> list[ResultRow]:
    dataset = dataset if dataset is not None else spec.dataset()
    base = base if base is not None else train_magnitude(spec, dataset)
    rows = []
    for label, cr, cfg in cells:
        row, _ = run_stage2(base, label, cfg, spec, dataset, cr)
        rows.append(row)
        if progress:
            progress(row)
    return rows


def compare_losses(spec: ExperimentSpec, dataset: CsiDataset | None = None, base: DualNetModel | None = None,
                   progress=None) -> list[ResultRow]:
    """One row per (cr_pha, method) in spec order; all rows share one stage-1 run."""
    return _sweep(spec, spec.loss_sweep(), dataset, base, progress)


def compare_core(spec: ExperimentSpec, dataset: CsiDataset | None = None, base: DualNetModel | None = None,
                 progress=None, cr_pha: float = 1 / 8) -> list[ResultRow]:
    """One row per (core, quantizer) at fixed ``cr_pha``."""
    return _sweep(spec, spec.core_sweep(cr_pha), dataset, base, progress)


def parameter_table(framework: FrameworkConfig, cores=("dense", "linear-conv", "circular-conv")) -> dict[str, int]:
    """Phase-branch parameter counts per core kind without training anything."""
    return {k: phase_parameter_count(DualNetModel(dataclasses.replace(framework, core_kind=k))) for k in cores}


def summarize(rows: list[ResultRow]) -> str:
    lines = [f"{'method':<22}{'cr_pha':>8}{'bits/entry':>12}{'NMSE dB':>10}{'params':>10}"]
    for r in rows:
        lines.append(f"{r.method:<22}{r.cr_pha:>8.4f}{r.bits_per_phase_entry:>12.4f}{r.nmse_db:>10.2f}{r.parameter_count:>10}")
    return "\n".join(lines)
