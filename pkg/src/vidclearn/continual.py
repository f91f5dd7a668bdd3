"""Sequential fine-tuning over a stream of text-video pairs.

Three strategies share one training loop and differ only in the objective:

* ``naive``: noise-prediction MSE on the current pair.
* ``ewc``: MSE plus a diagonal-Fisher quadratic anchor to the previous task's weights.
* ``vidclearn``: a frozen copy of the student taken before the task acts as
  teacher; the student minimizes ``gamma * distill + lambda * temporal``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import Denoiser, DenoiserArch, init_params, save_checkpoint, snapshot
from .diffusion import ddim_sample, forward_diffuse, make_linear_schedule, make_plan
from .io import write_json
from .losses import (
    LossConfig,
    distillation_loss,
    kl_distillation,
    kl_distillation_grad,
    reconstruction_loss,
    reconstruction_loss_grad,
    temporal_consistency_loss,
    temporal_consistency_loss_grad,
    total_loss,
)
from .numerics import Rng
from .retrieval import PromptStore, embed_prompt

log = logging.getLogger(__name__)

STRATEGIES = ("naive", "ewc", "vidclearn")
FISHER_STREAM = 1
REPLAY_STREAM = 2


@dataclass(frozen=True)
class TrainConfig:
    steps_per_task: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    ewc_lambda: float = 100.0
    fisher_samples: int = 50
    seed: int = 0
    train_timesteps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    arch: DenoiserArch = field(default_factory=DenoiserArch)
    replay: bool = False
    replay_every: int = 4
    replay_sample_steps: int = 10

    def __post_init__(self):
        if self.steps_per_task < 0:
            raise ValueError("steps_per_task must be nonnegative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.ewc_lambda < 0:
            raise ValueError("ewc_lambda must be nonnegative")
        if self.fisher_samples < 1:
            raise ValueError("fisher_samples must be at least 1")

    def schedule(self):
        return make_linear_schedule(self.train_timesteps, self.beta_start, self.beta_end)


@dataclass
class EwcState:
    fisher_diag: np.ndarray
    theta_star: np.ndarray
    lam: float

    def penalty(self, params):
        diff = params - self.theta_star
        value = 0.5 * self.lam * float(np.sum(self.fisher_diag * diff * diff))
        return value, self.lam * self.fisher_diag * diff


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    def __init__(self, n: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        if not (np.all(np.isfinite(self.m)) and np.all(np.isfinite(self.v))):
            raise FloatingPointError("non-finite Adam moments")
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- objectives ---------------------------------------------------------------

class MseObjective:
    def __init__(self, target, ewc: EwcState | None = None):
        self.target = target
        if ewc is not None:
            self.penalty = ewc.penalty

    def __call__(self, out):
        l_s = reconstruction_loss(self.target, out)
        return l_s, reconstruction_loss_grad(self.target, out), {"L_s": l_s, "L_tot": l_s}


class DistillObjective:
    """Composite student objective against a fixed teacher output."""

    def __init__(self, target, teacher_out, cfg: LossConfig):
        self.target = target
        self.teacher_out = teacher_out
        self.cfg = cfg

    def __call__(self, out):
        c = self.cfg
        l_s = reconstruction_loss(self.target, out)
        l_kl = kl_distillation(self.teacher_out, out, c.temperature)
        l_t = temporal_consistency_loss(out, self.target)
        l_distill = distillation_loss(l_kl, l_s, c.alpha)
        l_tot = total_loss(l_distill, l_t, c.gamma, c.lambda_t)
        g_distill = (c.alpha * kl_distillation_grad(self.teacher_out, out, c.temperature)
                     + (1.0 - c.alpha) * reconstruction_loss_grad(self.target, out))
        grad = c.gamma * g_distill + c.lambda_t * temporal_consistency_loss_grad(out, self.target)
        parts = {"L_s": l_s, "L_KL": l_kl, "L_distill": l_distill, "L_t": l_t, "L_tot": l_tot}
        return l_tot, grad, parts


# -- per-task training --------------------------------------------------------

def _replay_videos(model, teacher, old_captions, shape, cfg, task_index, sched):
    rng = Rng.derive(cfg.seed, task_index, REPLAY_STREAM)
    plan = make_plan(sched, min(cfg.replay_sample_steps, sched.steps), descending=True)
    vids = []
    for caption in old_captions:
        z_T = rng.normal(shape)
        cond = embed_prompt(caption)
        vids.append((ddim_sample(model, teacher.params, z_T, cond, plan, sched), cond))
    return vids


def _fit(params, pair, cfg: TrainConfig, task_index: int, mode: str, ewc: EwcState | None = None,
         old_captions=(), on_step=None):
    model = Denoiser(cfg.arch)
    sched = cfg.schedule()
    rng = Rng.derive(cfg.seed, task_index)
    video = np.asarray(pair.video, dtype=np.float64)
    cond = embed_prompt(pair.caption)
    params = np.array(params, dtype=np.float64, copy=True)
    adam = Adam(params.size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)

    teacher = None
    replay = []
    if mode == "vidclearn":
        teacher = snapshot(params, cfg.arch)
        if cfg.replay and old_captions:
            replay = _replay_videos(model, teacher, old_captions, video.shape, cfg, task_index, sched)

    history = []
    for step in range(cfg.steps_per_task):
        z0, c = video, cond
        if replay and step % cfg.replay_every == cfg.replay_every - 1:
            z0, c = replay[(step // cfg.replay_every) % len(replay)]
        t = rng.integers(0, sched.steps)
        eps = rng.normal(video.shape)
        z_t = forward_diffuse(z0, t, eps, sched)
        if teacher is not None:
            objective = DistillObjective(eps, model.predict(teacher.params, z_t, t, c), cfg.loss)
        else:
            objective = MseObjective(eps, ewc)
        try:
            _, grad, parts = model.loss_and_grad(params, (z_t, t, c), objective)
            params = adam.step(params, grad)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"task {task_index} step {step}: {exc}; last losses {history[-1:]}") from exc
        if not np.all(np.isfinite(params)):
            raise TrainingDiverged(f"task {task_index} step {step}: non-finite parameters")
        history.append(parts)
        if on_step is not None:
            on_step(step, params, parts)
    return params, history


def train_task_naive(params, pair, cfg: TrainConfig, task_index: int = 0, on_step=None):
    return _fit(params, pair, cfg, task_index, "naive", on_step=on_step)


def train_task_vidclearn(params, pair, cfg: TrainConfig, task_index: int, old_captions=(), on_step=None):
    if task_index < 0:
        raise ValueError("task_index must be nonnegative")
    if task_index == 0:
        # nothing to retain yet: plain fine-tuning
        return _fit(params, pair, cfg, task_index, "naive", on_step=on_step)
    return _fit(params, pair, cfg, task_index, "vidclearn", old_captions=old_captions, on_step=on_step)


def estimate_fisher(params, pair, cfg: TrainConfig, task_index: int) -> np.ndarray:
    """Mean squared MSE gradient over fresh (t, noise) draws at ``params``."""
    model = Denoiser(cfg.arch)
    sched = cfg.schedule()
    rng = Rng.derive(cfg.seed, task_index, FISHER_STREAM)
    video = np.asarray(pair.video, dtype=np.float64)
    cond = embed_prompt(pair.caption)
    fisher = np.zeros_like(params)
    for _ in range(cfg.fisher_samples):
        t = rng.integers(0, sched.steps)
        eps = rng.normal(video.shape)
        z_t = forward_diffuse(video, t, eps, sched)
        _, grad, _ = model.loss_and_grad(params, (z_t, t, cond), MseObjective(eps))
        fisher += grad * grad
    return fisher / cfg.fisher_samples


def train_task_ewc(params, ewc_state: EwcState | None, pair, cfg: TrainConfig, task_index: int = 0,
                   on_step=None):
    params, history = _fit(params, pair, cfg, task_index, "ewc", ewc=ewc_state, on_step=on_step)
    fisher = estimate_fisher(params, pair, cfg, task_index)
    return params, EwcState(fisher, params.copy(), cfg.ewc_lambda), history


def ewc_penalty(state: EwcState, params) -> float:
    return state.penalty(params)[0]


# -- streams ------------------------------------------------------------------

def _summarize(history, tail: int = 20) -> dict:
    keys = ("L_s", "L_KL", "L_t", "L_tot")
    if not history:
        return {f"final_{k}": None for k in keys}
    last = history[-tail:]
    out = {}
    for k in keys:
        vals = [h[k] for h in last if k in h]
        out[f"final_{k}"] = float(np.mean(vals)) if vals else None
    return out


def run_stream(stream, strategy: str, cfg: TrainConfig, out_dir, params=None, extra_manifest=None,
               on_step=None):
    """Train on each pair in order, writing ``task_{k}.ckpt``, ``prompts.json`` and ``run.json``.

    Returns ``(checkpoint paths, PromptStore, final params)``.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    stream = list(stream)
    if not stream:
        raise ValueError("empty task stream")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if params is None:
        params = init_params(cfg.arch, cfg.seed)

    store = PromptStore()
    ewc = None
    ckpts = []
    tasks = []
    started = time.perf_counter()
    manifest = {
        "strategy": strategy,
        "config": config_echo(cfg),
        "stream": [{"task_index": k, "caption": p.caption, "video_id": p.id} for k, p in enumerate(stream)],
        "tasks": tasks,
        **(extra_manifest or {}),
    }

    def step_hook(k):
        if on_step is None:
            return None
        return lambda step, p, parts: on_step(k, step, p, parts)

    status = "complete"
    try:
        for k, pair in enumerate(stream):
            log.info("task %d/%d [%s]: %s", k + 1, len(stream), strategy, pair.caption)
            if strategy == "naive":
                params, hist = train_task_naive(params, pair, cfg, k, on_step=step_hook(k))
            elif strategy == "ewc":
                params, ewc, hist = train_task_ewc(params, ewc, pair, cfg, k, on_step=step_hook(k))
            else:
                old = [p.caption for p in stream[:k]]
                params, hist = train_task_vidclearn(params, pair, cfg, k, old_captions=old, on_step=step_hook(k))
            path = out_dir / f"task_{k}.ckpt"
            save_checkpoint(path, params, cfg.arch, cfg.seed, k)
            ckpts.append(path)
            store.add(pair.caption, pair.id)
            store.save(out_dir / "prompts.json")
            tasks.append({"task_index": k, "checkpoint": path.name, **_summarize(hist)})
    except TrainingDiverged:
        status = "diverged"
        raise
    finally:
        manifest["status"] = status
        manifest["wall_seconds"] = round(time.perf_counter() - started, 3)
        write_json(out_dir / "run.json", manifest)
    return ckpts, store, params


def config_echo(cfg: TrainConfig) -> dict:
    return asdict(cfg)
