"""Alternating latent inversion: pose, then shape, then appearance.

Each round refines the camera against a photometric plus embedding loss,
then the shape and appearance codes under annealed Gaussian perturbations
that decay linearly to zero across the whole run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import torch

from .cameras import CameraPose, full_image_pixels, pixel_rays
from .clipbridge import clip_distance
from .rendering import RenderConfig, render_rays
from .runconfig import InversionSettings
from .training import lr_schedule

InversionConfig = InversionSettings


class InversionDiverged(RuntimeError):
    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


def noise_weight(iteration: int, total_iterations: int) -> float:
    """Linear anneal from exactly 1 at step 0 to exactly 0 at the last step."""
    if iteration < 0 or iteration >= total_iterations:
        raise ValueError("iteration outside the schedule")
    if total_iterations == 1:
        return 0.0
    return 1.0 - iteration / (total_iterations - 1)


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    mse = float(torch.mean((a.float() - b.float()) ** 2))
    if mse == 0:
        return math.inf
    return -10.0 * math.log10(mse)


def _render_view(field, azimuth, elevation, z_s, z_a, target_res, render_cfg: RenderConfig):
    rays = pixel_rays(
        azimuth,
        elevation,
        full_image_pixels(target_res),
        radius=render_cfg.camera_radius,
        resolution=target_res,
        fov_deg=render_cfg.fov_deg,
        near=render_cfg.near,
        far=render_cfg.far,
    )
    out = render_rays(field, rays, z_s, z_a, render_cfg.samples_per_ray, stratified=False)
    return out.rgb.reshape(target_res, target_res, 3)


def _photometric(render: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(render - target)


def loss_pose(field, azimuth, elevation, z_s, z_a, target, backend, lambda_v, render_cfg):
    """Pose objective: photometric L2 plus weighted image-image distance."""
    render = _render_view(field, azimuth, elevation, z_s, z_a, target.shape[0], render_cfg)
    loss = _photometric(render, target)
    if lambda_v > 0:
        loss = loss + lambda_v * clip_distance(render, target, backend)
    return loss


def loss_shape(field, azimuth, elevation, z_s, z_n, lambda_n, z_a, target, backend, lambda_s, render_cfg):
    """Shape objective evaluated at the noise-perturbed code z_s + lambda_n * z_n."""
    z = z_s + lambda_n * z_n
    render = _render_view(field, azimuth, elevation, z, z_a, target.shape[0], render_cfg)
    loss = _photometric(render, target)
    if lambda_s > 0:
        loss = loss + lambda_s * clip_distance(render, target, backend)
    return loss


def loss_appearance(field, azimuth, elevation, z_s, z_a, z_n, lambda_n, target, backend, lambda_a, render_cfg):
    z = z_a + lambda_n * z_n
    render = _render_view(field, azimuth, elevation, z_s, z, target.shape[0], render_cfg)
    loss = _photometric(render, target)
    if lambda_a > 0:
        loss = loss + lambda_a * clip_distance(render, target, backend)
    return loss


@dataclass
class InversionState:
    z_s: torch.Tensor
    z_a: torch.Tensor
    azimuth: float
    elevation: float
    iteration: int = 0
    best_error: float = math.inf
    best_z_s: torch.Tensor | None = None
    best_z_a: torch.Tensor | None = None
    best_azimuth: float = 0.0
    best_elevation: float = 0.0


@dataclass
class InversionResult:
    z_s: torch.Tensor
    z_a: torch.Tensor
    pose: CameraPose
    reconstruction: torch.Tensor
    error: float
    psnr: float
    iterations: int
    trace: list[dict] = dc_field(default_factory=list)


def _grid_init(field, target, render_cfg, n_az: int = 8, n_el: int = 4):
    """Coarse photometric pose search with the initial (zero) codes."""
    res = target.shape[0]
    zeros = torch.zeros(field.code_dim)
    best, best_err = (0.0, 0.2), math.inf
    with torch.no_grad():
        for el in torch.linspace(0.08, math.pi / 2 * 0.9, n_el):
            for az in torch.linspace(0.0, 2.0 * math.pi, n_az + 1)[:-1]:
                render = _render_view(field, az, el, zeros, zeros, res, render_cfg)
                err = float(_photometric(render, target))
                if err < best_err:
                    best, best_err = (float(az), float(el)), err
    return best


def invert(
    image,
    field,
    backend,
    config: InversionSettings | None = None,
    render_cfg: RenderConfig | None = None,
    seed: int = 0,
    divergence_factor: float = 10.0,
    divergence_patience: int = 100,
) -> InversionResult:
    """Project an image onto (z_s, z_a, pose) by alternating optimization.

    The generator stays frozen. Raises InversionDiverged if the running loss
    exceeds ``divergence_factor`` times the initial loss for
    ``divergence_patience`` consecutive steps.
    """
    config = config or InversionSettings()
    render_cfg = render_cfg or RenderConfig()
    target = torch.as_tensor(image, dtype=torch.float32)
    if target.dim() != 3 or target.shape[-1] != 3 or target.shape[0] != target.shape[1]:
        raise ValueError("expected a square RGB image shaped (res, res, 3)")

    field.eval()
    for p in field.parameters():
        p.requires_grad_(False)

    g = torch.Generator().manual_seed(seed)
    az0, el0 = _grid_init(field, target, render_cfg)
    azimuth = torch.tensor(az0, requires_grad=True)
    elevation = torch.tensor(el0, requires_grad=True)
    z_s = torch.zeros(field.code_dim, requires_grad=True)
    z_a = torch.zeros(field.code_dim, requires_grad=True)

    opt_pose = torch.optim.Adam([azimuth, elevation], lr=config.pose_lr)
    opt_s = torch.optim.Adam([z_s], lr=config.lr)
    opt_a = torch.optim.Adam([z_a], lr=config.lr)

    total = config.rounds * (config.pose_steps + config.shape_steps + config.appearance_steps)
    state = InversionState(z_s=z_s, z_a=z_a, azimuth=az0, elevation=el0)
    trace: list[dict] = []
    initial_loss: float | None = None
    over_budget_streak = 0

    def current_error() -> float:
        with torch.no_grad():
            render = _render_view(
                field, azimuth.detach(), elevation.detach(), z_s, z_a,
                target.shape[0], render_cfg,
            )
        return float(_photometric(render, target))

    def track_best(round_idx: int, phase: str):
        err = current_error()
        if err < state.best_error:
            state.best_error = err
            state.best_z_s = z_s.detach().clone()
            state.best_z_a = z_a.detach().clone()
            state.best_azimuth = float(azimuth) % (2.0 * math.pi)
            state.best_elevation = float(elevation)
        trace.append(
            {
                "round": round_idx,
                "phase": phase,
                "iteration": state.iteration,
                "error": err,
                "best_error": state.best_error,
                "lambda_n": noise_weight(min(state.iteration, total - 1), total),
            }
        )

    def run_phase(round_idx: int, phase: str, steps: int, optimizer, loss_fn):
        nonlocal initial_loss, over_budget_streak
        for _ in range(steps):
            lam_n = noise_weight(state.iteration, total)
            lr_now = lr_schedule(state.iteration, config.lr, config.lr_decay, config.lr_decay_every)
            pose_lr_now = lr_schedule(
                state.iteration, config.pose_lr, config.lr_decay, config.lr_decay_every
            )
            for group in optimizer.param_groups:
                group["lr"] = pose_lr_now if phase == "pose" else lr_now
            z_n = torch.randn(field.code_dim, generator=g)
            loss = loss_fn(lam_n, z_n)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            with torch.no_grad():
                elevation.clamp_(0.0, math.pi / 2)
            value = float(loss)
            if initial_loss is None:
                initial_loss = value
            if value > divergence_factor * max(initial_loss, 1e-8):
                over_budget_streak += 1
            else:
                over_budget_streak = 0
            if over_budget_streak >= divergence_patience:
                raise InversionDiverged(
                    f"loss exceeded {divergence_factor}x the initial value for "
                    f"{divergence_patience} consecutive steps",
                    {
                        "iteration": state.iteration,
                        "loss": value,
                        "initial_loss": initial_loss,
                        "round": round_idx,
                        "phase": phase,
                    },
                )
            state.iteration += 1
        track_best(round_idx, phase)

    for round_idx in range(config.rounds):
        run_phase(
            round_idx, "pose", config.pose_steps, opt_pose,
            lambda lam, zn: loss_pose(
                field, azimuth, elevation, z_s.detach(), z_a.detach(),
                target, backend, config.lambda_v, render_cfg,
            ),
        )
        run_phase(
            round_idx, "shape", config.shape_steps, opt_s,
            lambda lam, zn: loss_shape(
                field, azimuth.detach(), elevation.detach(), z_s, zn, lam,
                z_a.detach(), target, backend, config.lambda_s, render_cfg,
            ),
        )
        run_phase(
            round_idx, "appearance", config.appearance_steps, opt_a,
            lambda lam, zn: loss_appearance(
                field, azimuth.detach(), elevation.detach(), z_s.detach(),
                z_a, zn, lam, target, backend, config.lambda_a, render_cfg,
            ),
        )

    pose = CameraPose(
        azimuth=state.best_azimuth,
        elevation=float(min(max(state.best_elevation, 0.0), math.pi / 2)),
        radius=render_cfg.camera_radius,
    )
    with torch.no_grad():
        reconstruction = _render_view(
            field,
            torch.tensor(pose.azimuth),
            torch.tensor(pose.elevation),
            state.best_z_s,
            state.best_z_a,
            target.shape[0],
            render_cfg,
        )
    return InversionResult(
        z_s=state.best_z_s,
        z_a=state.best_z_a,
        pose=pose,
        reconstruction=reconstruction,
        error=state.best_error,
        psnr=psnr(reconstruction, target),
        iterations=state.iteration,
        trace=trace,
    )
