"""Strict JSON run configuration with ``desk`` and ``paper`` presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .continual import TrainConfig
from .denoiser import DenoiserArch
from .inference import GUIDANCE_MODES, InferenceSettings
from .losses import LossConfig

PRESETS = {
    "desk": {
        "steps_per_task": 200,
        "learning_rate": 1e-3,
        "train_timesteps": 100,
        "invert_steps": 20,
        "sample_steps": 30,
    },
    "paper": {
        "steps_per_task": 500,
        "learning_rate": 3e-5,
        "train_timesteps": 1000,
        "invert_steps": 100,
        "sample_steps": 150,
    },
}


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    steps_per_task: int = 200
    learning_rate: float = 1e-3
    alpha: float = 0.8
    gamma: float = 1.0
    lambda_t: float = 10.0
    temperature: float = 4.0
    ewc_lambda: float = 100.0
    fisher_samples: int = 50
    train_timesteps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    invert_steps: int = 20
    sample_steps: int = 30
    guidance: str = "retrieval"
    replay: bool = False
    extractor_seed: int = 1234
    hidden_channels: int = 8
    time_embed_dim: int = 8
    cond_channels: int = 4

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; expected one of {sorted(PRESETS)}")
        if self.guidance not in GUIDANCE_MODES:
            raise ValueError(f"guidance must be one of {GUIDANCE_MODES}")
        # validate the derived configs eagerly
        self.train_config()
        self.inference_settings()

    def loss_config(self) -> LossConfig:
        return LossConfig(self.alpha, self.gamma, self.lambda_t, self.temperature)

    def arch(self) -> DenoiserArch:
        return DenoiserArch(hidden_channels=self.hidden_channels, time_embed_dim=self.time_embed_dim,
                            cond_channels=self.cond_channels)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps_per_task=self.steps_per_task,
            learning_rate=self.learning_rate,
            loss=self.loss_config(),
            ewc_lambda=self.ewc_lambda,
            fisher_samples=self.fisher_samples,
            seed=self.seed,
            train_timesteps=self.train_timesteps,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            arch=self.arch(),
            replay=self.replay,
        )

    def inference_settings(self, guidance: str | None = None) -> InferenceSettings:
        return InferenceSettings(self.train_timesteps, self.beta_start, self.beta_end,
                                 self.invert_steps, self.sample_steps, guidance or self.guidance)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def config_from_dict(doc: dict) -> RunConfig:
    unknown = sorted(set(doc) - set(_FIELDS))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    preset = doc.get("preset", "desk")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    values = {**PRESETS[preset], **doc, "preset": preset}
    for name, value in values.items():
        kind = _FIELDS[name].type
        if kind == "bool" and not isinstance(value, bool):
            raise ValueError(f"{name} must be a boolean")
        if kind == "int" and (isinstance(value, bool) or not isinstance(value, int)):
            raise ValueError(f"{name} must be an integer")
        if kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"{name} must be a number")
            values[name] = float(value)
        if kind == "str" and not isinstance(value, str):
            raise ValueError(f"{name} must be a string")
    return RunConfig(**values)


def load_config(path=None, **overrides) -> RunConfig:
    doc = {}
    if path is not None:
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a JSON object")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(doc)
