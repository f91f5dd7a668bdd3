"""Fréchet distances over fixed random features, alignment, and transfer metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .denoiser import Denoiser, init_params, load_checkpoint
from .inference import InferenceSettings, generate
from .numerics import Rng, temporal_delta
from .synthdata import alignment_score, probe

log = logging.getLogger(__name__)

FEATURE_DIM = 16
COV_REG = 1e-6
_MODES = {"frame": 0, "video": 1}


def _projection(seed: int, mode: str, d_in: int) -> np.ndarray:
    rng = Rng.derive(seed, _MODES[mode], d_in)
    return rng.normal((FEATURE_DIM, d_in)) / math.sqrt(d_in)


def feature_extract(video: np.ndarray, extractor_seed: int = 1234, mode: str = "video") -> np.ndarray:
    """``frame`` mode: one 16-vector per frame. ``video`` mode: one 16-vector
    from the video concatenated with its frame differences."""
    video = np.asarray(video, dtype=np.float64)
    if mode == "frame":
        frames = np.moveaxis(video, 1, 0).reshape(video.shape[1], -1)
        return np.tanh(frames @ _projection(extractor_seed, mode, frames.shape[1]).T)
    if mode == "video":
        flat = np.concatenate([video.ravel(), temporal_delta(video, 1).ravel()])
        return np.tanh(_projection(extractor_seed, mode, flat.size) @ flat)
    raise ValueError(f"unknown feature mode {mode!r}")


def sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigendecomposition, negative eigenvalues clamped to 0."""
    sym = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(sym)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def gaussian_fit(feats) -> tuple[np.ndarray, np.ndarray]:
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    if feats.shape[0] < 2:
        raise ValueError("need at least two feature vectors for a covariance")
    mu = feats.mean(axis=0)
    cov = np.atleast_2d(np.cov(feats, rowvar=False, ddof=1)) + COV_REG * np.eye(feats.shape[1])
    return mu, cov


def frechet_from_stats(mu1, cov1, mu2, cov2) -> float:
    root1 = sqrtm_psd(cov1)
    cross = sqrtm_psd(root1 @ cov2 @ root1)
    diff = mu1 - mu2
    d = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross))
    return max(d, 0.0)


def frechet_distance(set_a, set_b) -> float:
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    return frechet_from_stats(*gaussian_fit(a), *gaussian_fit(b))


def bwt(R) -> float:
    R = np.asarray(R, dtype=np.float64)
    k = R.shape[0]
    if k < 2:
        raise ValueError("BWT needs at least two tasks")
    return float(np.mean([R[k - 1, j] - R[j, j] for j in range(k - 1)]))


def fwt(R, b) -> float:
    R = np.asarray(R, dtype=np.float64)
    k = R.shape[0]
    if k < 2:
        raise ValueError("FWT needs at least two tasks")
    return float(np.mean([R[j - 1, j] - b[j] for j in range(1, k)]))


# -- checkpoint evaluation ----------------------------------------------------

def pipeline_generator(settings: InferenceSettings):
    """Default generator: the full retrieve -> invert -> sample pipeline."""
    def gen(model, params, store, dataset, sample):
        return generate(model, params, store, dataset.video, sample.caption, settings)[0]
    return gen


def copy_generator(model, params, store, dataset, sample):
    """Test hook: returns the ground-truth video unchanged."""
    return sample.video.copy()


@dataclass
class CheckpointMetrics:
    fvd_s: float
    fid_s: float
    align: float
    per_prompt: list
    failures: int


def _generate_all(model, params, store, dataset, samples, generator):
    gens, scores, failures = [], [], 0
    for s in sorted(samples, key=lambda s: s.id):
        try:
            video = generator(model, params, store, dataset, s)
            if not np.all(np.isfinite(video)):
                raise FloatingPointError("non-finite generation")
        except (FloatingPointError, ValueError, LookupError) as exc:
            log.warning("generation failed for %s: %s", s.id, exc)
            failures += 1
            scores.append((s.id, None))
            continue
        gens.append((s, video))
        scores.append((s.id, alignment_score(probe(video), s.spec)))
    return gens, scores, failures


def evaluate_params(model, params, store, dataset, samples, generator, extractor_seed=1234) -> CheckpointMetrics:
    gens, scores, failures = _generate_all(model, params, store, dataset, samples, generator)
    if failures:
        log.warning("%d of %d generations failed and were excluded", failures, len(samples))
    ok = [v for _, v in scores if v is not None]
    align = float(np.mean(ok)) if ok else float("nan")
    fvd = fid = float("nan")
    if len(gens) >= 2:
        real = [s.video for s, _ in gens]
        fake = [v for _, v in gens]
        fvd = frechet_distance(
            [feature_extract(v, extractor_seed, "video") for v in fake],
            [feature_extract(v, extractor_seed, "video") for v in real])
        fid = frechet_distance(
            np.concatenate([feature_extract(v, extractor_seed, "frame") for v in fake]),
            np.concatenate([feature_extract(v, extractor_seed, "frame") for v in real]))
    return CheckpointMetrics(fvd, fid, align, scores, failures)


def eval_checkpoint(checkpoint, store, dataset, task_subset, settings: InferenceSettings | None = None,
                    generator=None, extractor_seed: int = 1234) -> CheckpointMetrics:
    """Evaluate one per-task checkpoint with the store as it was after that task."""
    settings = settings or InferenceSettings()
    params, arch, header = load_checkpoint(checkpoint)
    known = store.prefix(header["task_index"] + 1)
    return evaluate_params(Denoiser(arch), params, known, dataset, task_subset,
                           generator or pipeline_generator(settings), extractor_seed)


def quality_matrix(checkpoints, store, dataset, settings: InferenceSettings | None = None, generator=None,
                   baseline_seed: int = 0):
    """``R[i][j]``: alignment on task ``j``'s caption using checkpoint ``i`` and the store after task ``i``.

    ``b[j]`` uses a freshly initialized model with the store available before task ``j``;
    ``b[0]`` is 0 because nothing can be retrieved yet.
    """
    settings = settings or InferenceSettings()
    generator = generator or pipeline_generator(settings)
    tasks = [dataset.sample(e.video_id) for e in store.entries]
    k = len(checkpoints)
    R = np.zeros((k, k))
    arch = None
    for i, path in enumerate(checkpoints):
        params, arch, header = load_checkpoint(path)
        known = store.prefix(header["task_index"] + 1)
        model = Denoiser(arch)
        for j in range(k):
            R[i, j] = _score_one(model, params, known, dataset, tasks[j], generator)
    b = np.zeros(k)
    if arch is not None:
        model = Denoiser(arch)
        fresh = init_params(arch, baseline_seed)
        for j in range(1, k):
            b[j] = _score_one(model, fresh, store.prefix(j), dataset, tasks[j], generator)
    return R, b


def _score_one(model, params, store, dataset, sample, generator) -> float:
    _, scores, _ = _generate_all(model, params, store, dataset, [sample], generator)
    value = scores[0][1]
    return 0.0 if value is None else value
