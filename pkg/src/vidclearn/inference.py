"""Guided generation: pick a stored training video, invert it, resample under the new prompt."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .denoiser import Denoiser
from .diffusion import ddim_invert, ddim_sample, make_linear_schedule, make_plan
from .retrieval import PromptStore, embed_prompt

log = logging.getLogger(__name__)

GUIDANCE_MODES = ("retrieval", "last")


@dataclass(frozen=True)
class InferenceSettings:
    train_timesteps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    invert_steps: int = 20
    sample_steps: int = 30
    guidance: str = "retrieval"

    def __post_init__(self):
        if self.guidance not in GUIDANCE_MODES:
            raise ValueError(f"guidance must be one of {GUIDANCE_MODES}, got {self.guidance!r}")

    def schedule(self):
        return make_linear_schedule(self.train_timesteps, self.beta_start, self.beta_end)


def pick_source(store: PromptStore, prompt: str, guidance: str):
    """Store entry whose video provides the structure, and its similarity score."""
    if guidance == "last":
        entry = store.last()
        return entry, float(np.dot(entry.embedding, embed_prompt(prompt)))
    return store.retrieve(prompt)


def generate(model: Denoiser, params, store: PromptStore, load_video, prompt: str,
             settings: InferenceSettings):
    """Returns ``(video, source entry, score)``.

    Inversion is conditioned on the source video's own caption; sampling on ``prompt``.
    """
    entry, score = pick_source(store, prompt, settings.guidance)
    log.debug("guidance=%s prompt=%r source=%s (%.4f)", settings.guidance, prompt, entry.video_id, score)
    sched = settings.schedule()
    z0 = load_video(entry.video_id)
    z_T = ddim_invert(model, params, z0, entry.embedding, make_plan(sched, settings.invert_steps), sched)
    plan = make_plan(sched, settings.sample_steps, descending=True)
    video = ddim_sample(model, params, z_T, embed_prompt(prompt), plan, sched)
    return video, entry, score
