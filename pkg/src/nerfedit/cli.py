"""Operator command line: every pipeline stage behind one entry point.

Report paths write figures (PNG) next to the delimited metrics (CSV) and the
machine-readable JSON summaries.
"""

from __future__ import annotations

import json
import logging
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np
import torch

from .cameras import CameraPose
from .checkpoints import CheckpointBundle, load_checkpoint, save_checkpoint
from .clipbridge import (
    BackendUnavailableError,
    clip_distance,
    cross_view_consistency,
    get_backend,
    hemisphere_pose_grid,
)
from .dataops import (
    DatasetSpec,
    ToyDatasetConfig,
    generate_scene_views,
    generate_toy_dataset,
    load_dataset,
)
from .inversion import invert as run_invert
from .mappers import apply_edit_direction
from .rendering import render_image
from .runconfig import RunConfig, load_config
from .service import create_app
from .training import (
    PromptLibrary,
    discriminator_accuracy,
    finetune_single_nerf_appearance,
    fit_single_scene,
    train_generator_stage,
    train_mapper_stage,
)
from . import reports

log = logging.getLogger(__name__)


def _emit(summary: dict, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(summary, indent=2, default=str))
    else:
        for key, value in summary.items():
            click.echo(f"{key}: {value}")


def _backend_from(config: RunConfig):
    emb = config.embedder
    if emb.kind == "stub":
        return get_backend("stub", dim=emb.dim, seed=emb.seed)
    return get_backend(
        "pretrained",
        model_name=emb.model_name,
        weights_path=emb.weights_path,
        weights_sha256=emb.weights_sha256,
    )


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="Run config YAML.")
@click.pass_context
def main(ctx, config_path):
    """Conditional radiance field editing pipeline."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = load_config(config_path)


@main.command("make-toy-data")
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, type=int)
@click.option("--instances", default=1200, type=int)
@click.option("--resolution", default=64, type=int)
@click.option("--json", "as_json", is_flag=True)
def make_toy_data(out, seed, instances, resolution, as_json):
    """Generate the procedural primitive dataset plus its manifest."""
    cfg = ToyDatasetConfig(instances=instances, resolution=resolution, seed=seed)
    records = generate_toy_dataset(cfg, out)
    _emit(
        {"out": out, "images": len(records), "resolution": resolution, "seed": seed},
        as_json,
    )


@main.command("train")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", default=None, type=int, help="Override the configured step budget.")
@click.option("--seed", default=None, type=int)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def train(config: RunConfig, data, out, steps, seed, as_json):
    """Stage 1: adversarial training of the disentangled generator."""
    train_cfg = config.train
    if seed is not None:
        train_cfg = type(train_cfg)(**{**asdict(train_cfg), "seed": seed})
    dataset = load_dataset(
        DatasetSpec(root=data, resolution=config.renderer.resolution), seed=train_cfg.seed
    )
    t0 = time.time()
    result = train_generator_stage(
        dataset, train_cfg, config.generator, config.renderer, out_dir=out, steps=steps
    )
    reports.plot_loss_curves(result.metrics, Path(out) / "loss_curves.png", title="stage 1 losses")
    acc = discriminator_accuracy(
        result.field, result.discriminator, dataset, train_cfg, config.renderer, n=32
    )
    _emit(
        {
            "checkpoint": str(Path(out) / "checkpoint.pt"),
            "metrics": str(Path(out) / "metrics.csv"),
            "figure": str(Path(out) / "loss_curves.png"),
            "steps": steps if steps is not None else train_cfg.steps,
            "final_d_loss": result.metrics[-1]["d_loss"],
            "final_g_loss": result.metrics[-1]["g_loss"],
            "critic_accuracy": acc,
            "seconds": round(time.time() - t0, 2),
        },
        as_json,
    )


@main.command("train-mappers")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--prompts", "prompts_path", default=None, type=click.Path(exists=True))
@click.option("--steps", default=None, type=int)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def train_mappers(config: RunConfig, checkpoint, out, prompts_path, steps, as_json):
    """Stage 2: fit the shape/appearance mappers against a frozen generator."""
    bundle = load_checkpoint(checkpoint)
    if bundle.discriminator_state is None:
        raise click.ClickException("checkpoint lacks a discriminator; run `train` first")
    from .discriminator import PatchDiscriminator

    disc = PatchDiscriminator(**bundle.discriminator_config)
    disc.load_state_dict(bundle.discriminator_state)
    backend = _backend_from(config)
    prompts = PromptLibrary.from_file(prompts_path) if prompts_path else PromptLibrary.default()
    result = train_mapper_stage(
        bundle.field, disc, backend, prompts, config.train, bundle.render_config,
        out_dir=out, steps=steps,
    )
    out_ckpt = Path(out) / "checkpoint.pt"
    save_checkpoint(
        out_ckpt,
        CheckpointBundle(
            field=bundle.field,
            render_config=bundle.render_config,
            discriminator_state=disc.state_dict(),
            discriminator_config=disc.config(),
            shape_mapper_state=result.shape_mapper.state_dict(),
            appearance_mapper_state=result.appearance_mapper.state_dict(),
            mapper_config=result.shape_mapper.config(),
            step=bundle.step,
        ),
    )
    reports.plot_loss_curves(result.metrics, Path(out) / "mapper_losses.png", title="stage 2 losses")
    _emit(
        {
            "checkpoint": str(out_ckpt),
            "metrics": str(Path(out) / "mapper_metrics.csv"),
            "figure": str(Path(out) / "mapper_losses.png"),
            "prompts": len(prompts),
            "final_loss_shape": result.metrics[-1]["loss_shape"],
            "final_loss_appear": result.metrics[-1]["loss_appear"],
        },
        as_json,
    )


def _load_service_bundle(checkpoint):
    from .service import LoadedCheckpoint

    return LoadedCheckpoint(load_checkpoint(checkpoint))


@main.command("edit")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--text", default=None)
@click.option("--exemplar", default=None, type=click.Path(exists=True))
@click.option("--channel", default="both", type=click.Choice(["shape", "appearance", "both"]))
@click.option("--scale", default=1.0, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def edit(config: RunConfig, checkpoint, text, exemplar, channel, scale, seed, out, as_json):
    """Apply one feed-forward edit to seeded codes; write before/after renders."""
    if (text is None) == (exemplar is None):
        raise click.ClickException("provide exactly one of --text or --exemplar")
    bundle = _load_service_bundle(checkpoint)
    if bundle.shape_mapper is None:
        raise click.ClickException("checkpoint has no trained mappers; run `train-mappers`")
    backend = _backend_from(config)
    if text is not None:
        embedding = backend.embed_text(text)
    else:
        from PIL import Image

        arr = np.asarray(Image.open(exemplar).convert("RGB"), dtype=np.float32) / 255.0
        embedding = backend.embed_image(arr)
    g = torch.Generator().manual_seed(seed)
    z_s, z_a = bundle.field.sample_codes(g)
    pose = CameraPose(0.8, 0.45, bundle.render_config.camera_radius)
    with torch.no_grad():
        before = render_image(bundle.field, pose, z_s, z_a, bundle.render_config)
        if channel in ("shape", "both"):
            z_s = apply_edit_direction(z_s, bundle.shape_mapper(embedding.values), scale)
        if channel in ("appearance", "both"):
            z_a = apply_edit_direction(z_a, bundle.appearance_mapper(embedding.values), scale)
        after = render_image(bundle.field, pose, z_s, z_a, bundle.render_config)
    out = Path(out)
    reports.save_image(out / "before.png", before)
    reports.save_image(out / "after.png", after)
    summary = {
        "before": str(out / "before.png"),
        "after": str(out / "after.png"),
        "channel": channel,
        "scale": scale,
    }
    if text is not None:
        summary["clip_distance_before"] = float(clip_distance(before, embedding, backend))
        summary["clip_distance_after"] = float(clip_distance(after, embedding, backend))
    _emit(summary, as_json)


@main.command("invert")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, type=int)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def invert_cmd(config: RunConfig, checkpoint, image_path, out, seed, as_json):
    """Project a real image into codes and pose; write the report artifacts."""
    from PIL import Image

    bundle = load_checkpoint(checkpoint)
    backend = _backend_from(config)
    arr = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.float32) / 255.0
    result = run_invert(arr, bundle.field, backend, config.inversion, bundle.render_config, seed=seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    reports.save_image(out / "reconstruction.png", result.reconstruction)
    reports.write_csv(out / "trace.csv", result.trace)
    reports.plot_inversion_trace(result.trace, out / "trace.png")
    report = {
        "psnr": result.psnr,
        "error": result.error,
        "iterations": result.iterations,
        "pose": {
            "azimuth": result.pose.azimuth,
            "elevation": result.pose.elevation,
            "radius": result.pose.radius,
        },
        "z_s": result.z_s.tolist(),
        "z_a": result.z_a.tolist(),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2))
    _emit(
        {
            "report": str(out / "report.json"),
            "reconstruction": str(out / "reconstruction.png"),
            "trace": str(out / "trace.csv"),
            "figure": str(out / "trace.png"),
            "psnr": result.psnr,
        },
        as_json,
    )


@main.command("render")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--frames", default=12, type=int)
@click.option("--elevation", default=0.45, type=float)
@click.option("--resolution", default=None, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def render_cmd(checkpoint, frames, elevation, resolution, seed, out, as_json):
    """Orbit sweep of seeded codes: numbered frames plus a contact strip."""
    bundle = load_checkpoint(checkpoint)
    g = torch.Generator().manual_seed(seed)
    z_s, z_a = bundle.field.sample_codes(g)
    out = Path(out)
    images = []
    for i in range(frames):
        pose = CameraPose(2.0 * math.pi * i / frames, elevation, bundle.render_config.camera_radius)
        with torch.no_grad():
            img = render_image(
                bundle.field, pose, z_s, z_a, bundle.render_config, resolution=resolution
            )
        images.append(img)
        reports.save_image(out / f"frame_{i:03d}.png", img)
    reports.save_frame_strip(images, out / "orbit.png")
    _emit({"out": str(out), "frames": frames, "strip": str(out / "orbit.png")}, as_json)


@main.command("probe-consistency")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--objects", default=2, type=int)
@click.option("--views", default=144, type=int, help="Total poses; uses a sqrt x sqrt grid.")
@click.option("--seed", default=0, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def probe_consistency(config: RunConfig, checkpoint, objects, views, seed, out, as_json):
    """Pairwise embedding distances: same object across views vs. different objects."""
    bundle = load_checkpoint(checkpoint)
    try:
        backend = _backend_from(config)
    except BackendUnavailableError as exc:
        raise click.ClickException(f"embedding backend unavailable: {exc}")
    g = torch.Generator().manual_seed(seed)
    codes = [bundle.field.sample_codes(g) for _ in range(objects)]
    side = max(int(round(math.sqrt(views))), 2)
    poses = hemisphere_pose_grid(side, side, radius=bundle.render_config.camera_radius)

    def render_fn(code_pair, pose):
        with torch.no_grad():
            return render_image(bundle.field, pose, code_pair[0], code_pair[1], bundle.render_config)

    result = cross_view_consistency(codes, poses, render_fn, backend)
    out = Path(out)
    rows = [
        {"object": o, "view_a": a, "view_b": b, "distance": float(result.same_object[o, a, b])}
        for o in range(objects)
        for a in range(len(poses))
        for b in range(len(poses))
    ]
    reports.write_csv(out / "consistency.csv", rows)
    reports.plot_consistency(result, out / "consistency.png")
    summary = dict(result.summary())
    summary.update(
        {
            "objects": objects,
            "views": len(poses),
            "csv": str(out / "consistency.csv"),
            "figure": str(out / "consistency.png"),
        }
    )
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    _emit(summary, as_json)


@main.command("finetune-appearance")
@click.option("--prompt", required=True)
@click.option("--archetype", default="sphere", type=click.Choice(["cube", "sphere", "cone"]))
@click.option("--color", default="gray")
@click.option("--views", default=24, type=int)
@click.option("--resolution", default=32, type=int)
@click.option("--fit-steps", default=400, type=int)
@click.option("--steps", default=150, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def finetune_appearance(
    config: RunConfig, prompt, archetype, color, views, resolution, fit_steps, steps, seed, out, as_json
):
    """Fit a single toy scene, then steer its color branch toward a prompt."""
    from .rendering import RenderConfig

    render_cfg = RenderConfig(
        resolution=resolution,
        samples_per_ray=min(config.renderer.samples_per_ray, 16),
        near=config.renderer.near,
        far=config.renderer.far,
        camera_radius=config.renderer.camera_radius,
        fov_deg=config.renderer.fov_deg,
    )
    images, poses = generate_scene_views(archetype, color, views, resolution, seed)
    fit = fit_single_scene(torch.from_numpy(images), poses, render_cfg, steps=fit_steps, seed=seed)
    backend = _backend_from(config)
    eval_pose = poses[0]
    with torch.no_grad():
        before = render_image(fit.field, eval_pose, torch.zeros(0), torch.zeros(0), render_cfg)
    result = finetune_single_nerf_appearance(
        fit.field, prompt, backend, render_cfg, steps=steps, seed=seed, out_dir=out
    )
    with torch.no_grad():
        after = render_image(fit.field, eval_pose, torch.zeros(0), torch.zeros(0), render_cfg)
    out = Path(out)
    reports.save_image(out / "scene_before.png", before)
    reports.save_image(out / "scene_after.png", after)
    reports.plot_loss_curves(result.metrics, out / "finetune_curve.png", title="finetune distance")
    _emit(
        {
            "prompt": prompt,
            "initial_distance": result.initial_distance,
            "final_distance": result.final_distance,
            "before": str(out / "scene_before.png"),
            "after": str(out / "scene_after.png"),
            "figure": str(out / "finetune_curve.png"),
        },
        as_json,
    )


@main.command("serve")
@click.option("--checkpoint", "checkpoints", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
@click.option("--persist-dir", default=None, type=click.Path())
@click.pass_obj
def serve(config: RunConfig, checkpoints, host, port, persist_dir):
    """Run the interactive editing service."""
    import uvicorn

    paths = {Path(p).stem: p for p in checkpoints}
    app = create_app(
        paths,
        backend=_backend_from(config),
        inversion_config=config.inversion,
        persist_dir=persist_dir,
    )
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
