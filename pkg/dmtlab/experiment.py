"""End-to-end experiment configuration and orchestration.

An ``ExperimentConfig`` is the JSON file behind ``run-pipeline`` and
``ablate-t``; the single-stage commands read the parts they need from it.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from dmtlab.data import PairedDataset, generate, save_dataset
from dmtlab.diffusion import CountingDenoiser, NoisePredictor, SamplerSpec, sampler_nfe
from dmtlab.dmt import DmtConfig, dmt_train, dmt_train_asym, dmt_translate_asym
from dmtlab.errors import ValidationError
from dmtlab.metrics import evaluate_all, toy_fid
from dmtlab.models import Architecture, DenoiserModel, build_translator
from dmtlab.schedule import NoiseSchedule
from dmtlab.storage import save_checkpoint
from dmtlab.timestep import (
    band_timesteps,
    compute_curves,
    default_timesteps,
    grid_search_st,
    select_t_star,
    write_curves_csv,
    write_grid_csv,
)
from dmtlab.training import TrainConfig, train_ddpm, write_curve_csv
from dmtlab.workers import parallel_map

logger = logging.getLogger(__name__)

AUTO = "auto"


def _build(cls, data: dict | None, what: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"Unknown {what} keys: {', '.join(unknown)}")
    return cls(**data)


@dataclass
class DatasetSpec:
    generator: str = "shapes"
    n: int = 1024
    seed: int = 0
    params: dict = field(default_factory=dict)


@dataclass
class ScheduleSpec:
    T: int = 200
    beta_start: float = 5e-4
    beta_end: float = 0.1
    sigma_mode: str = "posterior"

    def build(self) -> NoiseSchedule:
        return NoiseSchedule(T=self.T, beta_start=self.beta_start, beta_end=self.beta_end, sigma_mode=self.sigma_mode)


@dataclass
class ModelSpec:
    denoiser: str | None = None
    translator: str | None = None
    hidden: int = 128
    channels: list[int] = field(default_factory=lambda: [16, 32, 64])
    time_dim: int = 32
    activation: str = "tanh"

    def architecture(self, input_shape, role: str) -> Architecture:
        kind = self.denoiser if role == "denoiser" else self.translator
        return Architecture.for_data(
            input_shape,
            role=role,
            kind=kind,
            hidden=self.hidden,
            channels=tuple(self.channels),
            time_dim=self.time_dim,
            activation=self.activation,
        )


@dataclass
class DmtSpec:
    """``t`` and ``s`` are ints or "auto"; ``s`` None means symmetric."""

    t: int | str = AUTO
    s: int | str | None = None
    weighting: str = "plain"
    epochs: int = 150
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        for name in ("t", "s"):
            value = getattr(self, name)
            if isinstance(value, str) and value != AUTO:
                raise ValidationError(f"dmt.{name} must be an integer or 'auto', got {value!r}")

    def resolved(self, s: int | None, t: int, sampler: SamplerSpec) -> DmtConfig:
        return DmtConfig(
            t=t,
            s=s,
            weighting=self.weighting,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            lr=self.lr,
            sampler=sampler,
        )


@dataclass
class SelectionSpec:
    metric: str = "ssim"
    n_samples: int = 256
    stride: int | None = None
    lam: float = 0.5
    s_grid: list[int] | None = None
    t_grid: list[int] | None = None
    band_radius: int = 1


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    ddpm: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=150))
    dmt: DmtSpec = field(default_factory=DmtSpec)
    selection: SelectionSpec = field(default_factory=SelectionSpec)
    sampler: str = "ddim:10"
    metrics: list[str] = field(default_factory=lambda: ["ssim", "psnr", "l1", "l2", "toyfid"])
    seed: int = 0
    output_dir: str = "runs/pipeline"

    def __post_init__(self):
        SamplerSpec.parse(self.sampler)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        data = dict(data)
        parts = {
            "dataset": DatasetSpec,
            "schedule": ScheduleSpec,
            "model": ModelSpec,
            "ddpm": TrainConfig,
            "dmt": DmtSpec,
            "selection": SelectionSpec,
        }
        for key, part in parts.items():
            if key in data:
                data[key] = _build(part, data[key], key)
        return _build(cls, data, "experiment")

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ValidationError(f"Config {path} is not valid JSON: {e}") from None
        return cls.from_dict(data)


# --- stages ---


def resolve_timesteps(
    pairs: PairedDataset,
    sched: NoiseSchedule,
    spec: DmtSpec,
    selection: SelectionSpec,
    seed: int = 0,
    out_dir: Path | None = None,
    threads: int = 1,
) -> tuple[int | None, int]:
    """Turn "auto" entries of ``spec`` into concrete (s, t); s is None when symmetric.

    Without explicit grids an automatic s is searched on a band around the
    symmetric t* (or the fixed t).
    """
    s, t = spec.s, spec.t
    needs_curve = t == AUTO and not (s == AUTO and selection.s_grid and selection.t_grid)
    center = None
    if needs_curve:
        steps = default_timesteps(sched.T, selection.stride)
        curve = compute_curves(pairs, sched, selection.metric, steps, selection.n_samples, seed, threads)
        if out_dir is not None:
            write_curves_csv(out_dir / f"curves_{curve.metric}.csv", curve)
        center = select_t_star(curve)
    elif t != AUTO:
        center = sched.check_t(int(t))
    if s == AUTO:
        band = band_timesteps(sched.T, center, selection.band_radius) if center is not None else None
        s_grid = selection.s_grid or band
        t_grid = [t] if t != AUTO else (selection.t_grid or band)
        result = grid_search_st(pairs, sched, s_grid, t_grid, selection.lam, selection.n_samples, seed, threads)
        if out_dir is not None:
            write_grid_csv(out_dir / "grid_st.csv", result)
        s = result.s_star
        t = result.t_star if t == AUTO else t
    elif t == AUTO:
        t = center
    t = sched.check_t(int(t))
    s = None if s is None else sched.check_t(int(s))
    if s is None:
        logger.info("resolved t*=%d", t)
    else:
        logger.info("resolved t*=%d (s=%d)", t, s)
    return s, t


def train_translator(pairs: PairedDataset, arch: Architecture, cfg: DmtConfig, sched: NoiseSchedule):
    f = build_translator(arch, seed=cfg.seed)
    if cfg.s is None or cfg.s == cfg.t:
        return dmt_train(pairs, f, replace(cfg, s=None), sched)
    return dmt_train_asym(pairs, f, cfg, sched)


def translate_counted(x0, f, eps: NoisePredictor, cfg: DmtConfig, sched: NoiseSchedule, seed: int) -> tuple[np.ndarray, int]:
    """Translated samples and the number of denoiser evaluations spent."""
    counter = CountingDenoiser(eps)
    out = dmt_translate_asym(x0, f, counter, cfg, sched, seed)
    return out, counter.calls


def _metric_dict(rows: list[tuple[str, float]]) -> dict:
    return {label: value for label, value in rows}


def run_pipeline(cfg: ExperimentConfig, out_dir, threads: int = 1) -> dict:
    """generate → train DDPM → resolve t → train translator → translate test split → evaluate."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    ds = generate(cfg.dataset.generator, cfg.dataset.n, cfg.dataset.seed, **cfg.dataset.params)
    save_dataset(ds, out / "dataset.dmtdata")
    train, test = ds.train(), ds.test()
    sched = cfg.schedule.build()

    ddpm, ddpm_curve = train_ddpm(train, cfg.ddpm, sched, arch=cfg.model.architecture(ds.shape, "denoiser"))
    save_checkpoint(ddpm, out / "ddpm.ckpt")
    write_curve_csv(out / "ddpm_loss.csv", ddpm_curve)

    s, t = resolve_timesteps(train, sched, cfg.dmt, cfg.selection, cfg.seed, out, threads)
    (out / "t_star.txt").write_text(f"t_star={t}\n")
    sampler = SamplerSpec.parse(cfg.sampler)
    dmt_cfg = cfg.dmt.resolved(s, t, sampler)
    arch = cfg.model.architecture(ds.shape, "translator")
    f, dmt_curve = train_translator(train, arch, dmt_cfg, sched)
    save_checkpoint(f, out / "dmt.ckpt")
    write_curve_csv(out / "dmt_loss.csv", dmt_curve)

    translated, nfe = translate_counted(test.x0, f, ddpm, dmt_cfg, sched, cfg.seed)
    baseline, _ = translate_counted(test.x0, build_translator(arch, seed=dmt_cfg.seed), ddpm, dmt_cfg, sched, cfg.seed)
    metrics = _metric_dict(evaluate_all(translated, test.y0, cfg.metrics))
    baseline_metrics = _metric_dict(evaluate_all(baseline, test.y0, cfg.metrics))
    source_fid = toy_fid(test.x0, test.y0)
    summary = {
        "t": t,
        "s": s,
        "sampler": str(sampler),
        "nfe": nfe,
        "full_chain_nfe": sampler_nfe(sampler, sched.T),
        "n_test": test.n,
        "metrics": metrics,
        "untrained_metrics": baseline_metrics,
        "source_target_toy_fid": source_fid,
    }
    if "l2" in metrics and baseline_metrics.get("l2"):
        summary["l2_ratio"] = metrics["l2"] / baseline_metrics["l2"]
    if "toy-FID" in metrics and source_fid > 0:
        summary["toy_fid_ratio"] = metrics["toy-FID"] / source_fid
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    logger.info("pipeline finished: t=%d, nfe=%d, metrics %s", t, nfe, metrics)
    return summary


def ablate_timesteps(
    cfg: ExperimentConfig,
    t_list: list[int],
    out_dir,
    ddpm: DenoiserModel | None = None,
    threads: int = 1,
) -> list[dict]:
    """Train one translator per preset t and score its translations of the test split."""
    if not t_list:
        raise ValidationError("Need at least one timestep to ablate")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    ds = generate(cfg.dataset.generator, cfg.dataset.n, cfg.dataset.seed, **cfg.dataset.params)
    train, test = ds.train(), ds.test()
    sched = cfg.schedule.build()
    for t in t_list:
        sched.check_t(t)
    if ddpm is None:
        ddpm, _ = train_ddpm(train, cfg.ddpm, sched, arch=cfg.model.architecture(ds.shape, "denoiser"))
    sampler = SamplerSpec.parse(cfg.sampler)
    arch = cfg.model.architecture(ds.shape, "translator")

    def run(t: int) -> dict:
        dmt_cfg = cfg.dmt.resolved(None, t, sampler)
        f, _ = train_translator(train, arch, dmt_cfg, sched)
        translated, nfe = translate_counted(test.x0, f, ddpm, dmt_cfg, sched, cfg.seed)
        scores = _metric_dict(evaluate_all(translated, test.y0, ["ssim", "l2", "toyfid"]))
        return {"t": t, "nfe": nfe, "ssim": scores["ssim"], "l2": scores["l2"], "toy-FID": scores["toy-FID"]}

    rows = parallel_map(run, list(t_list), threads)
    with (out / "ablation_t.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "nfe", "ssim", "l2", "toy-FID"])
        for row in rows:
            writer.writerow([row["t"], row["nfe"], repr(row["ssim"]), repr(row["l2"]), repr(row["toy-FID"])])
    return rows
