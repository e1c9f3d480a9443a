import csv
import functools
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import click
from flask import Flask

from dmtlab.data import GENERATORS, PairedDataset, export_images, generate, load_dataset, save_dataset
from dmtlab.diffusion import SamplerSpec, sampler_nfe
from dmtlab.dmt import DmtConfig
from dmtlab.errors import CompatibilityError, DmtError, ValidationError
from dmtlab.experiment import (
    DmtSpec,
    ExperimentConfig,
    ablate_timesteps,
    resolve_timesteps,
    run_pipeline,
    train_translator,
    translate_counted,
)
from dmtlab.metrics import evaluate_all, parse_metric_list
from dmtlab.schedule import NoiseSchedule
from dmtlab.storage import load_checkpoint, read_pnm, save_checkpoint, write_pnm
from dmtlab.theory import make_world, run_all, write_report
from dmtlab.timestep import (
    CURVE_METRICS,
    compute_curves,
    default_timesteps,
    grid_search_st,
    select_t_star,
    write_curves_csv,
    write_grid_csv,
)
from dmtlab.training import train_ddpm, write_curve_csv

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
THEORY_EXIT_CODE = 6
SPLIT_CHOICES = click.Choice(["all", "train", "test"])


def _fail(message: str, code: int) -> None:
    click.echo(f"Error: {message}")
    raise SystemExit(code)


def _guarded(fn):
    """Report library errors as ``Error: ...`` and exit with their code."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DmtError as e:
            logger.error("%s failed: %s", fn.__name__, e)
            _fail(str(e), e.exit_code)

    return wrapper


@contextmanager
def _run_log(path: Path):
    """Mirror dmtlab log records into ``path`` with timestamps."""
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    pkg_logger = logging.getLogger("dmtlab")
    pkg_logger.addHandler(handler)
    try:
        yield
    finally:
        pkg_logger.removeHandler(handler)
        handler.close()


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _experiment(config_path: str | None) -> ExperimentConfig:
    return ExperimentConfig.load(config_path) if config_path else ExperimentConfig()


def _int_list(text: str, what: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"{what} must be a comma-separated list of integers, got {text!r}") from None
    if not values:
        raise ValidationError(f"{what} is empty")
    return values


def _step(text: str | None):
    if text is None or text == "auto":
        return text
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"Timestep must be an integer or 'auto', got {text!r}") from None


def _split(ds: PairedDataset, split: str) -> PairedDataset:
    return ds if split == "all" else ds.subset(split)


def _training_split(ds: PairedDataset) -> PairedDataset:
    return ds.train() if "train" in ds.split else ds


def _schedule_of(model, path: str) -> NoiseSchedule:
    data = model.meta.get("schedule")
    if not data:
        raise CompatibilityError(f"Checkpoint {path} does not record a noise schedule")
    return NoiseSchedule.from_dict(data)


def _out_dir(app: Flask, out: str | None, name: str) -> Path:
    path = Path(out) if out else Path(app.config["DMT_OUTPUT_DIR"]) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _ckpt_path(out_ckpt: str) -> Path:
    path = Path(out_ckpt)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def register_commands(app: Flask) -> None:
    @app.cli.command("gen-data")
    @click.option("--generator", type=click.Choice(sorted(GENERATORS)), required=True)
    @click.option("--n", "n", type=int, default=512, show_default=True)
    @click.option("--seed", type=int, default=0, show_default=True)
    @click.option("--rotation", type=float, default=None, help="moons: rotation in radians (default pi/2).")
    @click.option("--size", type=int, default=None, help="Image side length for shapes and gray2color.")
    @click.option("--saturation", type=float, default=None, help="gray2color: color saturation in [0, 1].")
    @click.option("--test-fraction", type=float, default=0.2, show_default=True)
    @click.option("--out", type=click.Path(dir_okay=False), required=True)
    @_guarded
    def gen_data(generator, n, seed, rotation, size, saturation, test_fraction, out) -> None:
        """Generate a paired toy dataset."""
        params = {"test_fraction": test_fraction}
        if generator == "moons":
            params["rotation"] = math.pi / 2 if rotation is None else rotation
        if size is not None:
            params["size"] = size
        if saturation is not None:
            params["saturation"] = saturation
        ds = generate(generator, n, seed, **params)
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, out)
        n_test = ds.split.count("test")
        click.echo(
            f"Wrote {generator} dataset: {ds.n} pairs of shape {tuple(ds.shape)} "
            f"({ds.n - n_test} train / {n_test} test) to {out}"
        )

    @app.cli.command("train-ddpm")
    @click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
    @click.option("--epochs", type=int, default=None, help="Override the configured epoch count.")
    @click.option("--seed", type=int, default=None, help="Override the configured training seed.")
    @click.option("--out-ckpt", type=click.Path(dir_okay=False), required=True)
    @_guarded
    def train_ddpm_command(data, config_path, epochs, seed, out_ckpt) -> None:
        """Train the target-domain denoiser."""
        cfg = _experiment(config_path)
        train_cfg = cfg.ddpm
        if epochs is not None:
            train_cfg = replace(train_cfg, epochs=epochs)
        if seed is not None:
            train_cfg = replace(train_cfg, seed=seed)
        ds = load_dataset(data)
        sched = cfg.schedule.build()
        out = _ckpt_path(out_ckpt)
        with _run_log(out.with_name(f"{out.stem}.run.log")):
            _write_json(
                out.with_name(f"{out.stem}.config.json"),
                {"data": data, "schedule": sched.to_dict(), "model": cfg.to_dict()["model"], "train": train_cfg.to_dict()},
            )
            model, curve = train_ddpm(
                _training_split(ds), train_cfg, sched, arch=cfg.model.architecture(ds.shape, "denoiser")
            )
            save_checkpoint(model, out)
            write_curve_csv(out.with_name(f"{out.stem}_loss.csv"), curve)
        click.echo(f"Trained {model.arch.kind} denoiser for {train_cfg.epochs} epochs (final loss {curve[-1][1]:.6f}).")

    @app.cli.command("select-timestep")
    @click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
    @click.option("--metric", type=click.Choice(CURVE_METRICS), default="ssim", show_default=True)
    @click.option("--n-samples", type=int, default=None, help="Pairs per timestep (default DMT_CURVE_SAMPLES).")
    @click.option("--stride", type=int, default=None, help="Timestep stride (default T/40).")
    @click.option("--seed", type=int, default=0, show_default=True)
    @click.option("--out", type=click.Path(file_okay=False), default=None)
    @_guarded
    def select_timestep(data, config_path, metric, n_samples, stride, seed, out) -> None:
        """Pick t* at the first crossing of the distance curves."""
        cfg = _experiment(config_path)
        sched = cfg.schedule.build()
        n_samples = n_samples or app.config["DMT_CURVE_SAMPLES"]
        out_dir = _out_dir(app, out, "select-timestep")
        with _run_log(out_dir / "run.log"):
            _write_json(
                out_dir / "config.json",
                {"data": data, "metric": metric, "n_samples": n_samples, "stride": stride, "seed": seed, "schedule": sched.to_dict()},
            )
            ds = load_dataset(data)
            steps = default_timesteps(sched.T, stride)
            curve = compute_curves(_training_split(ds), sched, metric, steps, n_samples, seed, app.config["DMT_THREADS"])
            write_curves_csv(out_dir / f"curves_{metric}.csv", curve)
            t_star = select_t_star(curve)
            (out_dir / "t_star.txt").write_text(f"t_star={t_star}\n")
        click.echo(f"t_star={t_star}")

    @app.cli.command("select-pair")
    @click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
    @click.option("--s-grid", required=True, help="Comma-separated source steps.")
    @click.option("--t-grid", required=True, help="Comma-separated target steps.")
    @click.option("--lambda", "lam", type=float, default=0.5, show_default=True)
    @click.option("--n-samples", type=int, default=None)
    @click.option("--seed", type=int, default=0, show_default=True)
    @click.option("--out", type=click.Path(file_okay=False), default=None)
    @_guarded
    def select_pair(data, config_path, s_grid, t_grid, lam, n_samples, seed, out) -> None:
        """Grid-search the asymmetric timestep pair (s, t)."""
        cfg = _experiment(config_path)
        sched = cfg.schedule.build()
        s_values, t_values = _int_list(s_grid, "--s-grid"), _int_list(t_grid, "--t-grid")
        n_samples = n_samples or app.config["DMT_CURVE_SAMPLES"]
        out_dir = _out_dir(app, out, "select-pair")
        with _run_log(out_dir / "run.log"):
            _write_json(
                out_dir / "config.json",
                {"data": data, "s_grid": s_values, "t_grid": t_values, "lambda": lam, "n_samples": n_samples, "seed": seed, "schedule": sched.to_dict()},
            )
            ds = load_dataset(data)
            result = grid_search_st(
                _training_split(ds), sched, s_values, t_values, lam, n_samples, seed, app.config["DMT_THREADS"]
            )
            write_grid_csv(out_dir / "grid_st.csv", result)
            (out_dir / "pair.txt").write_text(f"pair={result.s_star},{result.t_star}\n")
        click.echo(f"pair={result.s_star},{result.t_star}")

    @app.cli.command("train-dmt")
    @click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--ddpm-ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--t", "t_text", default="auto", show_default=True, help="Target step: integer or 'auto'.")
    @click.option("--s", "s_text", default=None, help="Source step for the asymmetric variant: integer or 'auto'.")
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
    @click.option("--epochs", type=int, default=None)
    @click.option("--seed", type=int, default=None)
    @click.option("--weighting", type=click.Choice(["plain", "eq18"]), default=None)
    @click.option("--out-ckpt", type=click.Path(dir_okay=False), required=True)
    @_guarded
    def train_dmt(data, ddpm_ckpt, t_text, s_text, config_path, epochs, seed, weighting, out_ckpt) -> None:
        """Train the translator at a preset (or auto-selected) timestep."""
        cfg = _experiment(config_path)
        overrides = {k: v for k, v in (("epochs", epochs), ("seed", seed), ("weighting", weighting)) if v is not None}
        spec = replace(cfg.dmt, t=_step(t_text), s=_step(s_text), **overrides)
        ds = load_dataset(data)
        ddpm = load_checkpoint(ddpm_ckpt, expect_role="denoiser")
        if ddpm.arch.input_shape != ds.shape:
            raise CompatibilityError(f"Denoiser input {ddpm.arch.input_shape} does not match data shape {ds.shape}")
        sched = _schedule_of(ddpm, ddpm_ckpt)
        train = _training_split(ds)
        out = _ckpt_path(out_ckpt)
        with _run_log(out.with_name(f"{out.stem}.run.log")):
            s, t = resolve_timesteps(train, sched, spec, cfg.selection, spec.seed, out.parent, app.config["DMT_THREADS"])
            dmt_cfg = spec.resolved(s, t, SamplerSpec.parse(app.config["DMT_SAMPLER"]))
            _write_json(
                out.with_name(f"{out.stem}.config.json"),
                {"data": data, "ddpm_ckpt": ddpm_ckpt, "dmt": dmt_cfg.to_dict(), "requested": {"t": t_text, "s": s_text}},
            )
            f, curve = train_translator(train, cfg.model.architecture(ds.shape, "translator"), dmt_cfg, sched)
            save_checkpoint(f, out)
            write_curve_csv(out.with_name(f"{out.stem}_loss.csv"), curve)
        pair = f"t={t}" if s is None else f"s={s}, t={t}"
        click.echo(f"Trained {f.arch.kind} translator at {pair} (final loss {curve[-1][1]:.6f}).")

    @app.cli.command("translate")
    @click.option("--in-dataset", type=click.Path(exists=True, dir_okay=False), default=None)
    @click.option("--in-image", type=click.Path(exists=True, dir_okay=False), default=None)
    @click.option("--dmt-ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--ddpm-ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--sampler", "sampler_text", default=None, help="ancestral or ddim:<n> (default DMT_SAMPLER).")
    @click.option("--split", type=SPLIT_CHOICES, default="all", show_default=True)
    @click.option("--seed", type=int, default=0, show_default=True)
    @click.option("--limit", type=int, default=16, show_default=True, help="Images written for image datasets.")
    @click.option("--out-dir", type=click.Path(file_okay=False), default=None)
    @_guarded
    def translate(in_dataset, in_image, dmt_ckpt, ddpm_ckpt, sampler_text, split, seed, limit, out_dir) -> None:
        """Translate source samples with a trained translator and a frozen denoiser."""
        if (in_dataset is None) == (in_image is None):
            _fail("Pass exactly one of --in-dataset or --in-image.", 2)
        f = load_checkpoint(dmt_ckpt, expect_role="translator")
        eps = load_checkpoint(ddpm_ckpt, expect_role="denoiser")
        if f.meta.get("schedule") != eps.meta.get("schedule"):
            raise CompatibilityError("Translator and denoiser were trained with different noise schedules")
        if f.arch.input_shape != eps.arch.input_shape:
            raise CompatibilityError(f"Translator input {f.arch.input_shape} does not match denoiser input {eps.arch.input_shape}")
        sched = replace(_schedule_of(eps, ddpm_ckpt), sigma_mode=app.config["DMT_SIGMA_MODE"])
        sampler = SamplerSpec.parse(sampler_text or app.config["DMT_SAMPLER"])
        if not f.meta.get("train_config"):
            raise CompatibilityError(f"Checkpoint {dmt_ckpt} does not record its translation timestep")
        cfg = replace(DmtConfig.from_dict(f.meta["train_config"]), sampler=sampler)

        out = _out_dir(app, out_dir, "translate")
        with _run_log(out / "run.log"):
            if in_dataset is not None:
                ds = _split(load_dataset(in_dataset), split)
                x0 = ds.x0
            else:
                x0 = read_pnm(in_image)[None]
            translated, nfe = translate_counted(x0, f, eps, cfg, sched, seed)
            if in_dataset is not None:
                result = PairedDataset(
                    mode=ds.mode,
                    x0=x0,
                    y0=translated,
                    split=ds.split,
                    generator="translated",
                    seed=seed,
                    params={"source": str(in_dataset), "t": cfg.t, "s": cfg.s, "sampler": str(sampler)},
                    bounded=False,
                )
                save_dataset(result, out / "translated.dmtdata")
                if ds.mode == "image":
                    ext = "pgm" if ds.shape[0] == 1 else "ppm"
                    for i in range(min(limit, ds.n)):
                        write_pnm(out / f"pred_{i:04d}.{ext}", translated[i])
            else:
                write_pnm(out / ("translated.pgm" if x0.shape[1] == 1 else "translated.ppm"), translated[0])
            manifest = {
                "input": in_dataset or in_image,
                "split": split if in_dataset else None,
                "n": int(x0.shape[0]),
                "seed": seed,
                "t": cfg.t,
                "s": cfg.s,
                "sampler": str(sampler),
                "nfe": nfe,
                "full_chain_nfe": sampler_nfe(sampler, sched.T),
            }
            _write_json(out / "manifest.json", manifest)
        click.echo(f"Translated {manifest['n']} samples from t={cfg.t} with {sampler} (NFE {nfe}).")

    @app.cli.command("evaluate")
    @click.option("--pred", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--target", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--target-split", type=SPLIT_CHOICES, default="all", show_default=True)
    @click.option("--metrics", "metric_text", default="ssim,psnr,l1,l2,toyfid", show_default=True)
    @click.option("--out", type=click.Path(file_okay=False), default=None)
    @_guarded
    def evaluate(pred, target, target_split, metric_text, out) -> None:
        """Score predicted targets against ground truth (target side of both files)."""
        names = parse_metric_list(metric_text)
        out_dir = _out_dir(app, out, "evaluate")
        _write_json(out_dir / "config.json", {"pred": pred, "target": target, "target_split": target_split, "metrics": names})
        rows = evaluate_all(load_dataset(pred).y0, _split(load_dataset(target), target_split).y0, names)
        with (out_dir / "eval.csv").open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "value"])
            for label, value in rows:
                writer.writerow([label, repr(value)])
        for label, value in rows:
            click.echo(f"{label}: {value:.6f}")

    @app.cli.command("validate-theory")
    @click.option("--world-seed", type=int, default=0, show_default=True)
    @click.option("--dim", type=int, default=2, show_default=True)
    @click.option("--s", "s", type=int, default=2, show_default=True)
    @click.option("--t", "t", type=int, default=3, show_default=True)
    @click.option("--sigma-override", type=float, default=None, help="Replace every reverse-kernel std (negative control).")
    @click.option("--n-train", type=int, default=100_000, show_default=True)
    @click.option("--out", type=click.Path(file_okay=False), default=None)
    @_guarded
    def validate_theory(world_seed, dim, s, t, sigma_override, n_train, out) -> None:
        """Check the likelihood bounds and optimal-mean results on a linear-Gaussian world."""
        out_dir = _out_dir(app, out, "validate-theory")
        with _run_log(out_dir / "run.log"):
            _write_json(
                out_dir / "config.json",
                {"world_seed": world_seed, "dim": dim, "s": s, "t": t, "sigma_override": sigma_override, "n_train": n_train},
            )
            world = make_world(seed=world_seed, dim=dim)
            reports = run_all(world, s, t, sigma_override, n_train, seed=world_seed, threads=app.config["DMT_THREADS"])
            write_report(out_dir / "theory_report.json", reports, world)
        for r in reports:
            click.echo(f"{r.name}: {'pass' if r.passed else 'FAIL'} (measured {r.measured:.3e}, tolerance {r.tolerance:g})")
        failing = [r.name for r in reports if not r.passed]
        if failing:
            _fail(f"theory checks failed: {', '.join(failing)}", THEORY_EXIT_CODE)

    @app.cli.command("export-images")
    @click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--split", type=SPLIT_CHOICES, default="all", show_default=True)
    @click.option("--limit", type=int, default=16, show_default=True)
    @click.option("--out-dir", type=click.Path(file_okay=False), default=None)
    @_guarded
    def export_images_command(data, split, limit, out_dir) -> None:
        """Write source/target pairs as PGM/PPM images."""
        out = _out_dir(app, out_dir, "images")
        written = export_images(_split(load_dataset(data), split), out, limit=limit)
        click.echo(f"Wrote {len(written)} images to {out}")

    @app.cli.command("run-pipeline")
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
    @click.option("--out", type=click.Path(file_okay=False), default=None)
    @_guarded
    def run_pipeline_command(config_path, out) -> None:
        """Generate, train, select, translate and evaluate in one run."""
        cfg = _experiment(config_path)
        out_dir = Path(out or cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with _run_log(out_dir / "run.log"):
            summary = run_pipeline(cfg, out_dir, threads=app.config["DMT_THREADS"])
        click.echo(f"t={summary['t']} nfe={summary['nfe']}")
        for label, value in summary["metrics"].items():
            click.echo(f"{label}: {value:.6f}")

    @app.cli.command("ablate-t")
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
    @click.option("--t-list", required=True, help="Comma-separated preset timesteps.")
    @click.option("--ddpm-ckpt", type=click.Path(exists=True, dir_okay=False), default=None)
    @click.option("--out", type=click.Path(file_okay=False), default=None)
    @_guarded
    def ablate_t(config_path, t_list, ddpm_ckpt, out) -> None:
        """Train one translator per preset timestep and compare them."""
        cfg = _experiment(config_path)
        out_dir = _out_dir(app, out, "ablate-t")
        ddpm = load_checkpoint(ddpm_ckpt, expect_role="denoiser") if ddpm_ckpt else None
        if ddpm is not None and ddpm.meta.get("schedule") != cfg.schedule.build().to_dict():
            raise CompatibilityError("The denoiser checkpoint was trained with a different schedule than the config")
        with _run_log(out_dir / "run.log"):
            rows = ablate_timesteps(cfg, _int_list(t_list, "--t-list"), out_dir, ddpm=ddpm, threads=app.config["DMT_THREADS"])
        for row in rows:
            click.echo(f"t={row['t']}: ssim {row['ssim']:.4f}, l2 {row['l2']:.4f}, toy-FID {row['toy-FID']:.4f}")
