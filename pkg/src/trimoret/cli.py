"""Command-line entry points. Every command is a pure function of its config
file, input files, and overrides; repeated invocations produce identical
output bytes.
"""

from __future__ import annotations

import math
from pathlib import Path

import click
import numpy as np

from .config import RunConfig, apply_overrides, load_run_config, resolved_yaml
from .hsi import (
    fid_self_baseline,
    place_object_grid,
    placement_report_csv,
    rotation_sweep,
    sweep_to_csv,
)
from .retrieval import embed_corpus, full_report, report_to_csv
from .store import load_split, save_manifest, save_split
from .synthgen import gen_dataset
from .train import (
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    trace_to_csv,
    train,
)


def _load_config(config_path: str | None, overrides: tuple[str, ...]) -> RunConfig:
    cfg = load_run_config(config_path) if config_path else RunConfig()
    return apply_overrides(cfg, list(overrides))


def _write_resolved(cfg: RunConfig, out_dir: Path) -> None:
    (out_dir / "resolved_config.yaml").write_text(resolved_yaml(cfg))


@click.group()
def main():
    """Trimodal retrieval: data generation, training, and evaluation."""


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--override", multiple=True, help="section.key=value")
def gen_data(config_path, out_dir, override):
    """Generate train/test dataset files plus a manifest."""
    cfg = _load_config(config_path, override)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_split, test_split = gen_dataset(cfg.generator, cfg.data.n_train, cfg.data.n_test)
    save_split(out / "train.bin", train_split)
    save_split(out / "test.bin", test_split)
    save_manifest(out / "manifest.json", {
        "generator_seed": cfg.generator.seed,
        "n_train": len(train_split.samples),
        "n_test": len(test_split.samples),
        "train_scene_seeds": sorted(set(train_split.scene_seeds)),
        "test_scene_seeds": sorted(set(test_split.scene_seeds)),
    })
    _write_resolved(cfg, out)
    click.echo(f"wrote {len(train_split.samples)} train / {len(test_split.samples)} test samples to {out}")


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--variant", type=click.Choice(["full", "without_cross_modal", "without_single"]), default=None)
@click.option("--resume", "resume_path", type=click.Path(exists=True), default=None)
@click.option("--override", multiple=True)
def train_cmd(config_path, data_dir, out_dir, variant, resume_path, override):
    """Train a model; writes checkpoint.bin and loss_trace.csv."""
    cfg = _load_config(config_path, override)
    if variant:
        cfg = apply_overrides(cfg, [f"trainer.variant={variant}"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    split = load_split(Path(data_dir) / "train.bin")
    resume = load_checkpoint(resume_path) if resume_path else None
    result = train(split.samples, cfg.model, cfg.trainer, resume_from=resume)
    save_checkpoint(out / "checkpoint.bin", result, trainer_cfg=cfg.trainer)
    (out / "loss_trace.csv").write_text(trace_to_csv(result.trace))
    _write_resolved(cfg, out)
    click.echo(f"trained {result.epochs_done} epochs; final loss {result.trace[-1]['total']:.6f}")


@main.command("eval-retrieval")
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--protocol", type=click.Choice(["all", "small", "both"]), default="both")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--shuffle-seed", type=int, default=0)
def eval_retrieval(ckpt_path, data_dir, protocol, out_path, shuffle_seed):
    """Recall@K / mRecall report over all 12 tasks."""
    model = model_from_checkpoint(load_checkpoint(ckpt_path))
    split = load_split(Path(data_dir) / "test.bin")
    store = embed_corpus(model, split.samples)
    protocols = ("all", "small") if protocol == "both" else (protocol,)
    report = full_report(store, protocols, shuffle_seed=shuffle_seed)
    csv_text = report_to_csv(report)
    if out_path:
        Path(out_path).write_text(csv_text)
    click.echo(csv_text, nl=False)


@main.command("eval-hsi")
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--sweep", "do_sweep", is_flag=True)
@click.option("--place", "do_place", is_flag=True)
@click.option("--mode", type=click.Choice(["filtered", "unfiltered"]), default="filtered")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--override", multiple=True)
def eval_hsi(ckpt_path, data_dir, out_dir, do_sweep, do_place, mode, config_path, override):
    """Rotation plausibility sweep and/or grid-search object placement."""
    if not (do_sweep or do_place):
        raise click.UsageError("choose --sweep and/or --place")
    cfg = _load_config(config_path, override)
    model = model_from_checkpoint(load_checkpoint(ckpt_path))
    split = load_split(Path(data_dir) / "test.bin")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if do_sweep:
        samples = split.samples[: cfg.eval.sweep_samples]
        angles = np.linspace(0.0, math.pi, cfg.eval.sweep_angles)
        result = rotation_sweep(model, samples, angles=angles, mode=mode)
        (out / f"sweep_{mode}.csv").write_text(sweep_to_csv(result))
        baseline = fid_self_baseline(model, samples)
        save_manifest(out / f"sweep_{mode}_summary.json", {
            "self_split_fid_baseline": baseline,
            "skipped_angles": list(result.skipped_angles),
        })
        click.echo(f"sweep ({mode}): fid[0]={result.fid[0]:.4f} fid[pi]={result.fid[-1]:.4f} "
                   f"baseline={baseline:.4f}")

    if do_place:
        rows = []
        for sample in split.samples[: cfg.eval.place_samples]:
            res = place_object_grid(model, sample, cell=cfg.eval.place_cell, grid=cfg.eval.place_grid)
            rows.append((sample.id, res.predicted_offset, res.error_cm))
        (out / "placement.csv").write_text(placement_report_csv(rows))
        mean_err = float(np.mean([r[2] for r in rows]))
        save_manifest(out / "placement_summary.json", {"mean_error_cm": mean_err, "samples": len(rows)})
        click.echo(f"placement: mean error {mean_err:.2f} cm over {len(rows)} samples")

    _write_resolved(cfg, out)


if __name__ == "__main__":
    main()
