"""Conditional flow matching objective and Euler sampler."""

from __future__ import annotations

from collections.abc import Callable

import torch

# field(x_t, t, mask) -> predicted velocity, all (B, T, C) except t: (B,)
VectorField = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over valid (B, T) positions and every channel."""
    m = mask[..., None].to(x.dtype)
    return (x * m).sum() / (m.sum() * x.shape[-1])


def cfm_loss(
    x1: torch.Tensor,
    mask: torch.Tensor,
    field: VectorField,
    sigma_min: float = 1e-4,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Optimal-transport CFM loss.

    Draws ``t ~ U(0, 1)`` per item and ``x0 ~ N(0, I)``; regresses
    ``field(x_t, t)`` onto ``u = x1 - (1 - sigma_min) x0`` where
    ``x_t = (1 - (1 - sigma_min) t) x0 + t x1``.
    """
    if not torch.all(torch.isfinite(x1)):
        raise ValueError("cfm_loss: target contains non-finite values")
    B = x1.shape[0]
    t = torch.rand(B, generator=generator, dtype=x1.dtype)
    x0 = torch.randn(x1.shape, generator=generator, dtype=x1.dtype)
    tt = t[:, None, None]
    xt = (1 - (1 - sigma_min) * tt) * x0 + tt * x1
    u = x1 - (1 - sigma_min) * x0
    v = field(xt, t, mask)
    return masked_mean((v - u) ** 2, mask)


def euler_sample(field: VectorField, x0: torch.Tensor, mask: torch.Tensor, n_steps: int = 10) -> torch.Tensor:
    """Integrate ``dx/dt = field(x, t)`` from t=0 to t=1 on a uniform grid."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    dt = 1.0 / n_steps
    x = x0
    for k in range(n_steps):
        t = torch.full((x.shape[0],), k * dt, dtype=x0.dtype)
        x = x + dt * field(x, t, mask)
    return x
