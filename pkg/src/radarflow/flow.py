"""Straight-interpolant flow training objective, Euler sampling, and EMA."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import torch


class FlowDivergenceError(RuntimeError):
    """Sampling produced non-finite values; carries the offending step index."""

    def __init__(self, step: int):
        super().__init__(f"non-finite state after integration step {step}")
        self.step = step


@dataclass
class InterpolantSample:
    """Training tuple (x0, x1, t, x_t, target_v) with x_t = t*x1 + (1-t)*x0."""

    x0: torch.Tensor
    x1: torch.Tensor
    t: torch.Tensor
    x_t: torch.Tensor
    target_v: torch.Tensor


@dataclass
class SamplerConfig:
    steps: int = 5

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def interpolate_at(x0: torch.Tensor, x1: torch.Tensor, t) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=x1.dtype)
    tb = t.reshape(-1, *([1] * (x1.dim() - 1))) if t.dim() else t
    return tb * x1 + (1.0 - tb) * x0


def draw_interpolant(x1: torch.Tensor, generator: torch.Generator) -> InterpolantSample:
    """Sample noise and a uniform time per example, then blend along the line."""
    x0 = torch.randn(x1.shape, generator=generator, dtype=x1.dtype)
    t = torch.rand(x1.shape[0], generator=generator, dtype=x1.dtype)
    return InterpolantSample(x0=x0, x1=x1, t=t,
                             x_t=interpolate_at(x0, x1, t),
                             target_v=x1 - x0)


def rf_loss(v_pred: torch.Tensor, sample: InterpolantSample) -> torch.Tensor:
    if v_pred.shape != sample.target_v.shape:
        raise ValueError(
            f"shape mismatch: v_pred {tuple(v_pred.shape)} vs target "
            f"{tuple(sample.target_v.shape)}")
    return torch.mean((v_pred - sample.target_v) ** 2)


def euler_sample(velocity_fn, z0: torch.Tensor, condition,
                 config: SamplerConfig = SamplerConfig()) -> torch.Tensor:
    """Integrate dz/dt = v(z, t, condition) from t=0 to t=1 with fixed steps.

    The velocity is evaluated at the left endpoint of each interval:
    z <- z + v(z, n/steps, condition) / steps for n = 0..steps-1.
    """
    z = z0
    dt = 1.0 / config.steps
    for n in range(config.steps):
        v = velocity_fn(z, n * dt, condition)
        z = z + dt * v
        if not torch.isfinite(z).all():
            raise FlowDivergenceError(n)
    return z


class EmaState:
    """Exponential moving average of named parameters.

    shadow <- decay * shadow + (1 - decay) * param after every optimizer
    step; the shadow weights are the ones used for sampling and evaluation.
    """

    def __init__(self, model: torch.nn.Module, decay: float = 0.95):
        if not 0.0 < decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        self.decay = decay
        self.shadow = {name: p.detach().clone()
                       for name, p in model.named_parameters()}

    def update(self, model: torch.nn.Module) -> None:
        for name, p in model.named_parameters():
            shadow = self.shadow[name]
            if shadow.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{tuple(shadow.shape)} vs {tuple(p.shape)}")
            shadow.mul_(self.decay).add_(p.detach(), alpha=1.0 - self.decay)

    @contextmanager
    def swap(self, model: torch.nn.Module):
        """Temporarily load the shadow weights into the model."""
        backup = {name: p.detach().clone() for name, p in model.named_parameters()}
        with torch.no_grad():
            for name, p in model.named_parameters():
                p.copy_(self.shadow[name])
        try:
            yield model
        finally:
            with torch.no_grad():
                for name, p in model.named_parameters():
                    p.copy_(backup[name])

    def state_dict(self) -> dict:
        return {"decay": self.decay, "shadow": self.shadow}

    def load_state_dict(self, state: dict) -> None:
        self.decay = state["decay"]
        self.shadow = {k: v.clone() for k, v in state["shadow"].items()}
