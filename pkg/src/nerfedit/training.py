"""Two-stage training: adversarial generator fit, then mapper fitting.

Stage 1 trains the disentangled generator against a patch critic from
single-view images without pose labels. Stage 2 freezes everything and fits
the two code mappers with the critic realism term plus the embedding
distance to sampled prompts. Extras: per-scene field fitting and the
color-branch-only finetune driven by the embedding distance.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F

from importlib import resources

from .cameras import (
    RayBatch,
    concat_rays,
    extract_patch,
    full_image_rays,
    sample_camera,
    sample_patch_spec,
    sample_ray_patch,
)
from .checkpoints import CheckpointBundle, save_checkpoint
from .clipbridge import clip_distance
from .discriminator import PatchDiscriminator
from .fields import ConditionalRadianceField, GeneratorConfig, SceneField
from .losses import r1_penalty, realism_loss
from .mappers import CodeMapper
from .rendering import RenderConfig, render_image, render_rays
from .runconfig import TrainSettings

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """A logged loss went non-finite; carries a diagnostic dump."""

    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


def lr_schedule(step: int, base_lr: float = 1e-4, decay: float = 0.5, every: int = 50_000) -> float:
    """Stepwise decay: base_lr * decay ** floor(step / every)."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return base_lr * decay ** (step // every)


def parameter_digest(module: torch.nn.Module) -> str:
    """Order-stable hash of every parameter tensor, for freeze checks."""
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


class PromptLibrary:
    """Prompt templates expanded over word categories.

    The file format is one template per line (placeholders in braces),
    followed by ``[category] word word ...`` lines supplying fill-ins.
    """

    def __init__(self, prompts: list[str]):
        if not prompts:
            raise ValueError("prompt library is empty")
        self.prompts = list(prompts)

    def __len__(self):
        return len(self.prompts)

    def __getitem__(self, i):
        return self.prompts[i]

    def sample(self, generator: torch.Generator) -> str:
        i = int(torch.randint(len(self.prompts), (1,), generator=generator))
        return self.prompts[i]

    @classmethod
    def from_text(cls, text: str) -> "PromptLibrary":
        templates, categories = [], {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("["):
                name, _, words = line.partition("]")
                categories[name.lstrip("[").strip()] = words.split()
            else:
                templates.append(line)
        prompts = []
        for tpl in templates:
            pending = [tpl]
            for cat, words in categories.items():
                token = "{" + cat + "}"
                nxt = []
                for t in pending:
                    if token in t:
                        nxt.extend(t.replace(token, w) for w in words)
                    else:
                        nxt.append(t)
                pending = nxt
            prompts.extend(pending)
        return cls(prompts)

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptLibrary":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def default(cls) -> "PromptLibrary":
        text = resources.files("nerfedit.data").joinpath("prompts.txt").read_text()
        return cls.from_text(text)


class MetricsLog:
    """Append-only CSV metrics log that also keeps rows in memory."""

    def __init__(self, path: Path | None, fieldnames: list[str]):
        self.rows: list[dict] = []
        self.path = path
        self._writer = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(path, "w", newline="")
            self._writer = csv.DictWriter(self._file, fieldnames=fieldnames)
            self._writer.writeheader()

    def append(self, row: dict) -> None:
        self.rows.append(row)
        if self._writer is not None:
            self._writer.writerow(row)
            self._file.flush()

    def close(self) -> None:
        if self._writer is not None:
            self._file.close()
            self._writer = None


def _check_finite(values: dict, step: int, out_dir: Path | None, context: str):
    bad = {k: v for k, v in values.items() if isinstance(v, float) and not math.isfinite(v)}
    if not bad:
        return
    diagnostic = {"context": context, "step": step, "losses": values, "non_finite": list(bad)}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "divergence_dump.json").write_text(json.dumps(diagnostic, indent=2))
    raise TrainingDiverged(f"non-finite loss at step {step}: {bad}", diagnostic)


@dataclass
class GeneratorStageResult:
    field: ConditionalRadianceField
    discriminator: PatchDiscriminator
    metrics: list[dict]


def _render_fake_patches(field, poses, specs, z_s, z_a, cfg, render_cfg, generator):
    """One batched render of per-pose patches, shaped (B, ps, ps, 3)."""
    batches = []
    for pose, spec in zip(poses, specs):
        rays, _ = sample_ray_patch(
            pose,
            cfg.patch_size,
            generator,
            resolution=render_cfg.resolution,
            spec=spec,
            fov_deg=render_cfg.fov_deg,
            near=render_cfg.near,
            far=render_cfg.far,
        )
        batches.append(rays)
    rays = concat_rays(batches)
    per_patch = cfg.patch_size * cfg.patch_size
    z_s_rays = z_s.repeat_interleave(per_patch, dim=0)
    z_a_rays = z_a.repeat_interleave(per_patch, dim=0)
    out = render_rays(
        field, rays, z_s_rays, z_a_rays, render_cfg.samples_per_ray, generator=generator
    )
    return out.rgb.reshape(len(poses), cfg.patch_size, cfg.patch_size, 3)


def train_generator_stage(
    dataset,
    config: TrainSettings,
    generator_config: GeneratorConfig | None = None,
    render_config: RenderConfig | None = None,
    out_dir: str | Path | None = None,
    steps: int | None = None,
) -> GeneratorStageResult:
    """Stage 1: alternating critic/generator updates on random patches."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    steps = steps if steps is not None else config.steps
    render_cfg = render_config or RenderConfig(resolution=dataset.resolution)
    if dataset.resolution != render_cfg.resolution:
        raise ValueError("dataset resolution does not match the render config")
    out_dir = Path(out_dir) if out_dir is not None else None
    if config.deterministic:
        torch.set_num_threads(1)

    torch.manual_seed(config.seed)
    field = ConditionalRadianceField(generator_config or GeneratorConfig())
    disc = PatchDiscriminator(config.patch_size)
    g = torch.Generator().manual_seed(config.seed)

    opt_g = torch.optim.Adam(field.parameters(), lr=config.lr, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr, betas=(0.5, 0.999))
    metrics = MetricsLog(
        out_dir / "metrics.csv" if out_dir else None,
        ["step", "d_loss", "g_loss", "r1", "real_logit", "fake_logit", "lr"],
    )

    for step in range(steps):
        lr = lr_schedule(step, config.lr, config.lr_decay, config.lr_decay_every)
        for opt in (opt_g, opt_d):
            for group in opt.param_groups:
                group["lr"] = lr

        idx = torch.randint(len(dataset), (config.batch_size,), generator=g)
        real_specs = [
            sample_patch_spec(config.patch_size, dataset.resolution, g)
            for _ in range(config.batch_size)
        ]
        real = torch.stack(
            [
                extract_patch(torch.from_numpy(dataset[int(i)]), spec)
                for i, spec in zip(idx, real_specs)
            ]
        )

        z_s, z_a = field.sample_codes(g, config.batch_size)
        poses = [
            sample_camera(g, radius=render_cfg.camera_radius)
            for _ in range(config.batch_size)
        ]
        fake_specs = [
            sample_patch_spec(config.patch_size, render_cfg.resolution, g)
            for _ in range(config.batch_size)
        ]
        fake = _render_fake_patches(field, poses, fake_specs, z_s, z_a, config, render_cfg, g)

        # Critic update on detached fakes, with R1 on the real patches.
        r1 = r1_penalty(real, disc)
        d_loss = (
            F.softplus(-disc(real)).mean()
            + F.softplus(disc(fake.detach())).mean()
            + config.lambda_r * r1
        )
        opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        opt_d.step()

        # Generator update through the render graph against the fresh critic.
        fake_logits = disc(fake)
        g_loss = realism_loss(fake_logits)
        opt_g.zero_grad(set_to_none=True)
        opt_d.zero_grad(set_to_none=True)  # discard critic grads from this pass
        g_loss.backward()
        opt_g.step()

        if step % config.log_every == 0 or step == steps - 1:
            row = {
                "step": step,
                "d_loss": float(d_loss),
                "g_loss": float(g_loss),
                "r1": float(r1),
                "real_logit": float(disc(real).mean()),
                "fake_logit": float(fake_logits.mean()),
                "lr": lr,
            }
            _check_finite(row, step, out_dir, "generator_stage")
            metrics.append(row)
        if out_dir and config.checkpoint_every and step and step % config.checkpoint_every == 0:
            _save_stage1(out_dir / f"ckpt_{step}.pt", field, disc, render_cfg, step)

    if out_dir:
        _save_stage1(out_dir / "checkpoint.pt", field, disc, render_cfg, steps)
    metrics.close()
    return GeneratorStageResult(field=field, discriminator=disc, metrics=metrics.rows)


def _save_stage1(path, field, disc, render_cfg, step):
    save_checkpoint(
        path,
        CheckpointBundle(
            field=field,
            render_config=render_cfg,
            discriminator_state=disc.state_dict(),
            discriminator_config=disc.config(),
            step=step,
        ),
    )


def discriminator_accuracy(
    field,
    disc,
    dataset,
    config: TrainSettings,
    render_config: RenderConfig,
    n: int = 64,
    seed: int = 1234,
) -> float:
    """Held-out real/fake accuracy of the critic (positive logit = real)."""
    g = torch.Generator().manual_seed(seed)
    correct = 0
    with torch.no_grad():
        for start in range(0, n, config.batch_size):
            b = min(config.batch_size, n - start)
            idx = torch.randint(len(dataset), (b,), generator=g)
            specs = [sample_patch_spec(config.patch_size, dataset.resolution, g) for _ in range(b)]
            real = torch.stack(
                [extract_patch(torch.from_numpy(dataset[int(i)]), s) for i, s in zip(idx, specs)]
            )
            z_s, z_a = field.sample_codes(g, b)
            poses = [sample_camera(g, radius=render_config.camera_radius) for _ in range(b)]
            fake_specs = [sample_patch_spec(config.patch_size, render_config.resolution, g) for _ in range(b)]
            fake = _render_fake_patches(field, poses, fake_specs, z_s, z_a, config, render_config, g)
            correct += int((disc(real) > 0).sum()) + int((disc(fake) <= 0).sum())
    return correct / (2 * n)


@dataclass
class MapperStageResult:
    shape_mapper: CodeMapper
    appearance_mapper: CodeMapper
    metrics: list[dict]


def train_mapper_stage(
    field: ConditionalRadianceField,
    discriminator: PatchDiscriminator,
    backend,
    prompts: PromptLibrary,
    config: TrainSettings,
    render_config: RenderConfig | None = None,
    out_dir: str | Path | None = None,
    steps: int | None = None,
    mapper_channels: tuple[int, int, int] = (128, 256, 128),
) -> MapperStageResult:
    """Stage 2: fit shape/appearance mappers against the frozen networks."""
    if len(prompts) == 0:
        raise ValueError("empty prompt library")
    steps = steps if steps is not None else config.mapper_steps
    render_cfg = render_config or RenderConfig()
    out_dir = Path(out_dir) if out_dir is not None else None
    if config.deterministic:
        torch.set_num_threads(1)

    for module in (field, discriminator):
        module.eval()
        for p in module.parameters():
            p.requires_grad_(False)

    torch.manual_seed(config.seed + 1)
    channels = (*mapper_channels[:-1], field.code_dim)
    shape_mapper = CodeMapper(backend.dim, field.code_dim, channels)
    appearance_mapper = CodeMapper(backend.dim, field.code_dim, channels)
    opt_s = torch.optim.Adam(shape_mapper.parameters(), lr=config.lr, betas=(0.5, 0.999))
    opt_a = torch.optim.Adam(appearance_mapper.parameters(), lr=config.lr, betas=(0.5, 0.999))
    g = torch.Generator().manual_seed(config.seed + 1)
    embeddings = {p: backend.embed_text(p) for p in prompts.prompts}
    res = config.mapper_render_res

    metrics = MetricsLog(
        out_dir / "mapper_metrics.csv" if out_dir else None,
        ["step", "loss_shape", "loss_appear", "clip_shape", "clip_appear", "lr"],
    )

    def edited_render(z_s, z_a, pose):
        rays = full_image_rays(
            pose, res, fov_deg=render_cfg.fov_deg, near=render_cfg.near, far=render_cfg.far
        )
        out = render_rays(field, rays, z_s, z_a, render_cfg.samples_per_ray, generator=g)
        return out.rgb.reshape(res, res, 3)

    for step in range(steps):
        lr = lr_schedule(step, config.lr, config.lr_decay, config.lr_decay_every)
        for opt in (opt_s, opt_a):
            for group in opt.param_groups:
                group["lr"] = lr
        z_s, z_a = field.sample_codes(g)
        pose = sample_camera(g, radius=render_cfg.camera_radius)
        prompt = prompts.sample(g)
        e = embeddings[prompt]

        spec = sample_patch_spec(config.patch_size, res, g)

        render_s = edited_render(shape_mapper(e.values) + z_s, z_a, pose)
        clip_s = clip_distance(render_s, e, backend)
        loss_s = realism_loss(disc_patch(discriminator, render_s, spec)) + config.lambda_c * clip_s
        opt_s.zero_grad(set_to_none=True)
        loss_s.backward()
        opt_s.step()

        render_a = edited_render(z_s, appearance_mapper(e.values) + z_a, pose)
        clip_a = clip_distance(render_a, e, backend)
        loss_a = realism_loss(disc_patch(discriminator, render_a, spec)) + config.lambda_c * clip_a
        opt_a.zero_grad(set_to_none=True)
        loss_a.backward()
        opt_a.step()

        if step % config.log_every == 0 or step == steps - 1:
            row = {
                "step": step,
                "loss_shape": float(loss_s),
                "loss_appear": float(loss_a),
                "clip_shape": float(clip_s),
                "clip_appear": float(clip_a),
                "lr": lr,
            }
            _check_finite(row, step, out_dir, "mapper_stage")
            metrics.append(row)

    metrics.close()
    return MapperStageResult(shape_mapper, appearance_mapper, metrics.rows)


def disc_patch(discriminator, image: torch.Tensor, spec) -> torch.Tensor:
    """Critic logits for one patch cut from a rendered image."""
    return discriminator(extract_patch(image, spec).unsqueeze(0))


@dataclass
class SceneFitResult:
    field: SceneField
    final_loss: float


def fit_single_scene(
    images: torch.Tensor,
    poses: list,
    render_config: RenderConfig,
    field: SceneField | None = None,
    steps: int = 500,
    lr: float = 5e-4,
    rays_per_step: int = 1024,
    seed: int = 0,
) -> SceneFitResult:
    """Fit an unconditional field to posed views with a photometric loss."""
    torch.manual_seed(seed)
    field = field or SceneField()
    res = images.shape[1]
    all_origins, all_dirs, all_rgb = [], [], []
    for img, pose in zip(images, poses):
        rays = full_image_rays(
            pose, res, fov_deg=render_config.fov_deg,
            near=render_config.near, far=render_config.far,
        )
        all_origins.append(rays.origins)
        all_dirs.append(rays.directions)
        all_rgb.append(img.reshape(-1, 3))
    origins = torch.cat(all_origins)
    dirs = torch.cat(all_dirs)
    targets = torch.cat(all_rgb).float()

    g = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(field.parameters(), lr=lr)
    loss = torch.tensor(0.0)
    for _ in range(steps):
        pick = torch.randint(len(origins), (rays_per_step,), generator=g)
        rays = RayBatch(
            origins=origins[pick], directions=dirs[pick],
            near=render_config.near, far=render_config.far,
        )
        out = render_rays(
            field, rays, torch.zeros(0), torch.zeros(0),
            render_config.samples_per_ray, generator=g,
        )
        loss = F.mse_loss(out.rgb, targets[pick])
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    return SceneFitResult(field=field, final_loss=float(loss))


@dataclass
class FinetuneResult:
    field: SceneField
    initial_distance: float
    final_distance: float
    metrics: list[dict]


def finetune_single_nerf_appearance(
    field: SceneField,
    prompt: str,
    backend,
    render_config: RenderConfig,
    steps: int = 150,
    lr: float = 1e-3,
    patch_size: int = 16,
    seed: int = 0,
    update: str = "appearance",
    out_dir: str | Path | None = None,
) -> FinetuneResult:
    """Drive a frozen-density scene field toward a prompt via patch embeddings.

    Only the color branch trains; requesting density updates is refused.
    """
    if update != "appearance":
        raise ValueError("only the appearance (color) branch may be updated")
    for p in field.density_parameters():
        p.requires_grad_(False)
    g = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(field.color_parameters(), lr=lr)
    e = backend.embed_text(prompt)
    out_dir = Path(out_dir) if out_dir is not None else None
    eval_pose = sample_camera(torch.Generator().manual_seed(seed + 99), radius=render_config.camera_radius)

    def eval_distance() -> float:
        with torch.no_grad():
            img = render_image(field, eval_pose, torch.zeros(0), torch.zeros(0), render_config)
        return float(clip_distance(img, e, backend))

    initial = eval_distance()
    metrics = MetricsLog(out_dir / "finetune_metrics.csv" if out_dir else None, ["step", "clip", "lr"])
    for step in range(steps):
        pose = sample_camera(g, radius=render_config.camera_radius)
        rays, _ = sample_ray_patch(
            pose, patch_size, g, resolution=render_config.resolution,
            fov_deg=render_config.fov_deg, near=render_config.near, far=render_config.far,
        )
        out = render_rays(
            field, rays, torch.zeros(0), torch.zeros(0),
            render_config.samples_per_ray, generator=g,
        )
        patch = out.rgb.reshape(patch_size, patch_size, 3)
        loss = clip_distance(patch, e, backend)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if step % 25 == 0 or step == steps - 1:
            row = {"step": step, "clip": float(loss), "lr": lr}
            _check_finite(row, step, out_dir, "finetune")
            metrics.append(row)
    metrics.close()
    return FinetuneResult(
        field=field,
        initial_distance=initial,
        final_distance=eval_distance(),
        metrics=metrics.rows,
    )
