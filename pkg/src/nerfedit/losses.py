"""Non-saturating GAN losses with R1 gradient regularization."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


def nonsat_f(x: torch.Tensor) -> torch.Tensor:
    """f(x) = -log(1 + exp(-x)) = log sigmoid(x)."""
    return -F.softplus(-x)


def realism_loss(logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating "make it look real" term, -E[f(D(x))], to minimize.

    Its gradient stays strong while the critic confidently rejects the input.
    """
    return F.softplus(-logits).mean()


def r1_penalty(real: torch.Tensor, discriminator, *, create_graph: bool = True) -> torch.Tensor:
    """Mean squared L2 norm of the critic's gradient at real inputs."""
    real = real.detach().requires_grad_(True)
    logits = discriminator(real)
    (grad,) = torch.autograd.grad(
        logits.sum(), real, create_graph=create_graph
    )
    return grad.reshape(grad.shape[0], -1).pow(2).sum(dim=1).mean()


@dataclass
class GANLosses:
    generator: torch.Tensor
    discriminator: torch.Tensor
    r1: torch.Tensor
    real_logits_mean: float
    fake_logits_mean: float


def gan_objective(
    fake: torch.Tensor,
    real: torch.Tensor,
    discriminator,
    lambda_r: float = 0.5,
) -> GANLosses:
    """Generator and critic losses for one batch of patches.

    The critic is pushed toward positive logits on real patches and negative
    on fakes, regularized by lambda_r times the R1 penalty on reals; the
    generator minimizes the non-saturating realism term on its fakes.
    """
    if fake.shape[-3:] != real.shape[-3:]:
        raise ValueError("fake and real patch shapes must match")
    fake_logits = discriminator(fake)
    real_logits = discriminator(real)
    r1 = r1_penalty(real, discriminator)
    d_loss = (
        F.softplus(-real_logits).mean()
        + F.softplus(fake_logits.detach()).mean()
        + lambda_r * r1
    )
    g_loss = realism_loss(fake_logits)
    return GANLosses(
        generator=g_loss,
        discriminator=d_loss,
        r1=r1,
        real_logits_mean=float(real_logits.mean()),
        fake_logits_mean=float(fake_logits.mean()),
    )
