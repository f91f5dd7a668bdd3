"""Shared oracles for the test-suite."""

import contextlib
import time

import numpy as np

from vidclearn.continual import DistillObjective, EwcState, MseObjective
from vidclearn.denoiser import Denoiser, DenoiserArch, init_params
from vidclearn.losses import LossConfig

# < 5k parameters; small enough for an all-coordinate finite-difference sweep
TINY_ARCH = DenoiserArch(hidden_channels=4, time_embed_dim=4, cond_dim=16, cond_channels=2)
TINY_SHAPE = (3, 3, 4, 4)


def central_differences(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def max_relative_error(analytic, numeric, floor=1e-7):
    den = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / den))


def gradcheck_instance(seed, kind, arch=TINY_ARCH, shape=TINY_SHAPE):
    """Returns (analytic grad, finite-difference grad) for one objective kind."""
    rng = np.random.default_rng(seed)
    model = Denoiser(arch)
    params = init_params(arch, seed) + 0.05 * rng.normal(size=arch.param_count)
    z = rng.normal(size=shape)
    t = int(rng.integers(0, 100))
    cond = rng.normal(size=arch.cond_dim)
    cond /= np.linalg.norm(cond)
    target = rng.normal(size=shape)
    if kind == "mse":
        objective = MseObjective(target)
    elif kind == "composite":
        teacher = init_params(arch, seed + 1000)
        teacher_out = model.predict(teacher, z, t, cond)
        objective = DistillObjective(target, teacher_out, LossConfig(alpha=0.8, gamma=1.0, lambda_t=10.0, temperature=4.0))
    elif kind == "ewc":
        ewc = EwcState(rng.uniform(size=arch.param_count), params + 0.1 * rng.normal(size=arch.param_count), 100.0)
        objective = MseObjective(target, ewc)
    else:
        raise ValueError(kind)
    _, grad, _ = model.loss_and_grad(params, (z, t, cond), objective)
    f = lambda p: model.loss_and_grad(p, (z, t, cond), objective)[0]
    return grad, central_differences(f, params)


# (criterion number, title, passed, detail) rows printed in the terminal summary
ACCEPTANCE = []


@contextlib.contextmanager
def criterion(n, title):
    """Records one acceptance line; the body may set ``detail['text']``."""
    detail = {"text": ""}
    start = time.perf_counter()
    try:
        yield detail
    except BaseException as exc:
        msg = detail["text"] or f"{type(exc).__name__}: {exc}".splitlines()[0]
        ACCEPTANCE.append((n, title, False, f"{msg} ({time.perf_counter() - start:.1f}s)"))
        raise
    ACCEPTANCE.append((n, title, True, f"{detail['text']} ({time.perf_counter() - start:.1f}s)"))
