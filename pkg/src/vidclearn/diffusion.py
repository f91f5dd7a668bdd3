"""Noise schedule, forward diffusion and deterministic DDIM (eta = 0)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Pseudo-index for the clean sample (alpha_bar == 1).
CLEAN = -1


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        if t == CLEAN:
            return 1.0
        if not 0 <= t < self.steps:
            raise IndexError(f"timestep {t} outside [0, {self.steps - 1}]")
        return float(self.alpha_bars[t])


def make_linear_schedule(steps: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if steps < 2:
        raise ValueError("need at least two diffusion steps")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"invalid beta range [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for arr in (betas, alphas, alpha_bars):
        arr.flags.writeable = False
    return NoiseSchedule(betas, alphas, alpha_bars)


def make_plan(sched: NoiseSchedule, n_steps: int, descending: bool = False) -> list[int]:
    """Uniform-stride timestep plan over ``[0, steps - 1]``, endpoints included."""
    if n_steps < 1:
        raise ValueError("plan needs at least one step")
    if n_steps > sched.steps:
        raise ValueError(f"{n_steps} plan steps exceed {sched.steps} schedule steps")
    if n_steps == 1:
        plan = [sched.steps - 1]
    else:
        plan = [int(round(x)) for x in np.linspace(0, sched.steps - 1, n_steps)]
    return plan[::-1] if descending else plan


def forward_diffuse(z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    if z0.shape != eps.shape:
        raise ValueError(f"shape mismatch {z0.shape} vs {eps.shape}")
    if not 0 <= t < sched.steps:
        raise IndexError(f"timestep {t} out of range")
    ab = sched.alpha_bars[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def ddim_step(z_t: np.ndarray, eps_hat: np.ndarray, t_from: int, t_to: int, sched: NoiseSchedule) -> np.ndarray:
    """Move ``z_t`` from ``t_from`` to ``t_to`` along the deterministic DDIM path.

    Either index may be ``CLEAN``; the update runs in both directions.
    """
    if t_from == t_to:
        raise ValueError("t_from and t_to must differ")
    ab_from = sched.alpha_bar(t_from)
    ab_to = sched.alpha_bar(t_to)
    x0 = (z_t - np.sqrt(1.0 - ab_from) * eps_hat) / np.sqrt(ab_from)
    return np.sqrt(ab_to) * x0 + np.sqrt(1.0 - ab_to) * eps_hat


def _check_plan(plan, increasing: bool) -> list[int]:
    plan = [int(t) for t in plan]
    if not plan:
        raise ValueError("empty timestep plan")
    pairs = zip(plan, plan[1:])
    if increasing and any(b <= a for a, b in pairs):
        raise ValueError("inversion plan must be strictly increasing")
    if not increasing and any(b >= a for a, b in pairs):
        raise ValueError("sampling plan must be strictly decreasing")
    return plan


def ddim_sample(model, params, z_T: np.ndarray, cond: np.ndarray, plan, sched: NoiseSchedule) -> np.ndarray:
    """Denoise from ``plan[0]`` down through the plan and finally to the clean sample."""
    plan = _check_plan(plan, increasing=False)
    z = z_T
    for t_from, t_to in zip(plan, plan[1:] + [CLEAN]):
        eps_hat = model.predict(params, z, t_from, cond)
        z = ddim_step(z, eps_hat, t_from, t_to, sched)
    return z


def ddim_invert(model, params, z_0: np.ndarray, cond: np.ndarray, plan, sched: NoiseSchedule) -> np.ndarray:
    """Map a clean sample up to ``plan[-1]``.

    The noise estimate for each step is taken at the lower end of the step;
    the first step (from the clean sample) uses ``plan[0]``.
    """
    plan = _check_plan(plan, increasing=True)
    z = z_0
    for t_from, t_to in zip([CLEAN] + plan[:-1], plan):
        t_eval = plan[0] if t_from == CLEAN else t_from
        eps_hat = model.predict(params, z, t_eval, cond)
        z = ddim_step(z, eps_hat, t_from, t_to, sched)
    return z
