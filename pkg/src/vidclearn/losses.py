"""Training objectives for student/teacher fine-tuning.

Each loss has a ``*_grad`` companion returning the gradient with respect to
the student-side argument; teacher outputs and targets are constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import kl_divergence, softmax, temporal_delta, temporal_delta_adjoint

TIME_AXIS = 1


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.8
    gamma: float = 1.0
    lambda_t: float = 10.0
    temperature: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.gamma < 0 or self.lambda_t < 0:
            raise ValueError("gamma and lambda_t must be nonnegative")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def reconstruction_loss(y, y_hat) -> float:
    """Mean squared error over every element."""
    y, y_hat = _same_shape(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def reconstruction_loss_grad(y, y_hat) -> np.ndarray:
    y, y_hat = _same_shape(y, y_hat)
    return 2.0 * (y_hat - y) / y.size


def _frames(x: np.ndarray) -> np.ndarray:
    """``[C, T, H, W]`` -> ``[T, C*H*W]``."""
    return np.moveaxis(x, TIME_AXIS, 0).reshape(x.shape[TIME_AXIS], -1)


def kl_distillation(teacher_out, student_out, temperature: float) -> float:
    """``T^2`` times the per-frame KL(teacher || student), averaged over frames.

    Each frame's ``C*H*W`` values are treated as one set of logits.
    """
    t_out, s_out = _same_shape(teacher_out, student_out)
    p = softmax(_frames(t_out), temperature)
    q = softmax(_frames(s_out), temperature)
    return float(temperature ** 2 * np.mean(kl_divergence(p, q)))


def kl_distillation_grad(teacher_out, student_out, temperature: float) -> np.ndarray:
    t_out, s_out = _same_shape(teacher_out, student_out)
    p = softmax(_frames(t_out), temperature)
    q = softmax(_frames(s_out), temperature)
    n_frames = p.shape[0]
    g = temperature * (q - p) / n_frames
    shape = (s_out.shape[TIME_AXIS],) + tuple(np.delete(s_out.shape, TIME_AXIS))
    return np.moveaxis(g.reshape(shape), 0, TIME_AXIS)


def distillation_loss(l_kl: float, l_s: float, alpha: float, first_task: bool = False) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if first_task:
        return l_s
    return alpha * l_kl + (1.0 - alpha) * l_s


def temporal_consistency_loss(pred, target) -> float:
    """Mean squared mismatch of frame-to-frame changes over the ``T-1`` transitions."""
    pred, target = _same_shape(pred, target)
    d = temporal_delta(pred, TIME_AXIS) - temporal_delta(target, TIME_AXIS)
    return float(np.mean(d * d))


def temporal_consistency_loss_grad(pred, target) -> np.ndarray:
    pred, target = _same_shape(pred, target)
    d = temporal_delta(pred, TIME_AXIS) - temporal_delta(target, TIME_AXIS)
    return temporal_delta_adjoint(2.0 * d / d.size, TIME_AXIS)


def total_loss(l_distill: float, l_t: float, gamma: float, lambda_t: float) -> float:
    if gamma < 0 or lambda_t < 0:
        raise ValueError("loss weights must be nonnegative")
    return gamma * l_distill + lambda_t * l_t
