"""Captioned moving-shape videos, their on-disk format, and an attribute probe."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .io import read_video, write_json, write_video
from .numerics import Rng

FORMAT_VERSION = 1
SHAPES = ("square", "circle", "triangle")
COLORS = ("red", "green", "blue")
MOTIONS = ("left", "right", "up", "down")
SPEEDS = (1, 2)
DIRECTIONS = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1)}


@dataclass(frozen=True)
class SceneSpec:
    shape: str
    color: str
    motion: str
    speed: int = 1
    start: tuple[int, int] = (0, 0)

    def to_json(self) -> dict:
        d = asdict(self)
        d["start"] = list(self.start)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        return cls(d["shape"], d["color"], d["motion"], int(d["speed"]), tuple(d["start"]))


@dataclass
class VideoSample:
    id: str
    split: str
    caption: str
    spec: SceneSpec
    video: np.ndarray


def caption_of(spec: SceneSpec) -> str:
    return f"a {spec.color} {spec.shape} moves {spec.motion}"


def object_size(h: int) -> int:
    return math.ceil(h / 4)


def shape_mask(shape: str, s: int) -> np.ndarray:
    """Binary ``s x s`` template; circle and triangle are cut from the box by pixel centers."""
    centers = np.arange(s) + 0.5 - s / 2
    if shape == "square":
        return np.ones((s, s))
    if shape == "circle":
        r2 = centers[:, None] ** 2 + centers[None, :] ** 2
        return (r2 <= (s / 2) ** 2).astype(np.float64)
    if shape == "triangle":
        # apex on top, base on the bottom row
        half = (np.arange(s) + 1) / 2
        return (np.abs(centers)[None, :] <= half[:, None]).astype(np.float64)
    raise ValueError(f"unknown shape {shape!r}")


def trajectory(spec: SceneSpec, n_frames: int) -> list[tuple[int, int]]:
    dx, dy = DIRECTIONS[spec.motion]
    x0, y0 = spec.start
    return [(x0 + t * spec.speed * dx, y0 + t * spec.speed * dy) for t in range(n_frames)]


def fits(spec: SceneSpec, t: int, h: int, w: int) -> bool:
    s = object_size(h)
    return all(0 <= x <= w - s and 0 <= y <= h - s for x, y in trajectory(spec, t))


def render(spec: SceneSpec, t: int = 8, h: int = 16, w: int = 16) -> np.ndarray:
    if not fits(spec, t, h, w):
        raise ValueError(f"trajectory of {spec} leaves the {h}x{w} frame")
    s = object_size(h)
    mask = shape_mask(spec.shape, s)
    ch = COLORS.index(spec.color)
    video = np.zeros((3, t, h, w))
    for i, (x, y) in enumerate(trajectory(spec, t)):
        video[ch, i, y:y + s, x:x + s] = mask
    return video


def valid_variants(shape, color, motion, t, h, w) -> list[SceneSpec]:
    s = object_size(h)
    out = []
    for speed in SPEEDS:
        for y0 in range(h - s + 1):
            for x0 in range(w - s + 1):
                spec = SceneSpec(shape, color, motion, speed, (x0, y0))
                if fits(spec, t, h, w):
                    out.append(spec)
    return out


def sample_specs(n: int, seed: int, t: int, h: int, w: int) -> list[SceneSpec]:
    """``n`` distinct specs, cycling through a seeded order of attribute triples
    so captions only repeat once every triple has been used."""
    rng = Rng(seed)
    triples = list(itertools.product(SHAPES, COLORS, MOTIONS))
    order = [triples[i] for i in rng.permutation(len(triples))]
    pools = {tr: valid_variants(*tr, t, h, w) for tr in triples}
    available = sum(len(p) for p in pools.values())
    if n > available:
        raise ValueError(f"requested {n} videos but only {available} distinct specs fit {t}x{h}x{w}")
    out = []
    i = 0
    while len(out) < n:
        pool = pools[order[i % len(order)]]
        i += 1
        if pool:
            out.append(pool.pop(rng.integers(0, len(pool))))
    return out


def gen_dataset(n_train: int = 12, n_eval: int = 6, seed: int = 0, t: int = 8, h: int = 16,
                w: int = 16, out_dir=None) -> dict:
    if n_train < 1 or n_eval < 0:
        raise ValueError("need at least one training video and a nonnegative eval count")
    specs = sample_specs(n_train + n_eval, seed, t, h, w)
    entries = []
    for i, spec in enumerate(specs):
        split = "train" if i < n_train else "eval"
        k = i if split == "train" else i - n_train
        vid = f"{split}_{k:03d}"
        entries.append({
            "id": vid,
            "split": split,
            "caption": caption_of(spec),
            "spec": spec.to_json(),
            "file": f"videos/{vid}.f32",
        })
        if out_dir is not None:
            write_video(Path(out_dir) / entries[-1]["file"], render(spec, t, h, w))
    manifest = {"format_version": FORMAT_VERSION, "dims": {"c": 3, "t": t, "h": h, "w": w}, "entries": entries}
    if out_dir is not None:
        write_json(Path(out_dir) / "manifest.json", manifest)
    return manifest


class Dataset:
    """A generated dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "manifest.json"
        if not path.is_file():
            raise FileNotFoundError(f"no manifest.json in {self.root}")
        self.manifest = json.loads(path.read_text())
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported dataset format {self.manifest.get('format_version')}")
        d = self.manifest["dims"]
        self.dims = (d["c"], d["t"], d["h"], d["w"])
        self._cache: dict[str, np.ndarray] = {}
        self._by_id = {e["id"]: e for e in self.manifest["entries"]}

    def video(self, vid: str) -> np.ndarray:
        if vid not in self._cache:
            self._cache[vid] = read_video(self.root / self._by_id[vid]["file"], self.dims)
        return self._cache[vid]

    def sample(self, vid: str) -> VideoSample:
        e = self._by_id[vid]
        return VideoSample(e["id"], e["split"], e["caption"], SceneSpec.from_json(e["spec"]), self.video(vid))

    def split(self, name: str) -> list[VideoSample]:
        return [self.sample(e["id"]) for e in self.manifest["entries"] if e["split"] == name]


# -- attribute probe ----------------------------------------------------------

UNRECOGNIZED = None


@dataclass(frozen=True)
class ProbeResult:
    shape: str | None
    color: str | None
    motion: str | None


def _centroid(frame: np.ndarray):
    peak = frame.max()
    if peak <= 1e-6:
        return None
    wts = np.clip(frame - 0.5 * peak, 0.0, None)
    ys, xs = np.indices(frame.shape)
    total = wts.sum()
    return float((wts * xs).sum() / total), float((wts * ys).sum() / total)


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / den) if den > 0 else 0.0


@lru_cache(maxsize=None)
def _templates(s: int):
    out = []
    for name in SHAPES:
        tmpl = np.pad(shape_mask(name, s), 1)
        ys, xs = np.nonzero(tmpl)
        out.append((name, tmpl, xs.mean(), ys.mean()))
    return out


def _shape_scores(frame: np.ndarray, centroid, s: int) -> dict[str, float]:
    pad = s + 2
    big = np.pad(frame, pad)
    cx, cy = centroid
    scores = {}
    for name, tmpl, tcx, tcy in _templates(s):
        best = -np.inf
        for oy in (-1, 0, 1):
            for ox in (-1, 0, 1):
                x0 = int(round(cx - tcx)) + ox + pad
                y0 = int(round(cy - tcy)) + oy + pad
                if x0 < 0 or y0 < 0 or y0 + s + 2 > big.shape[0] or x0 + s + 2 > big.shape[1]:
                    continue
                best = max(best, _ncc(big[y0:y0 + s + 2, x0:x0 + s + 2], tmpl))
        scores[name] = best
    return scores


def probe(video: np.ndarray) -> ProbeResult | None:
    """Estimate (shape, color, motion) of the dominant object; ``None`` when nothing is visible."""
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4 or video.shape[0] != 3 or video.shape[1] < 2:
        raise ValueError(f"probe expects [3, T>=2, H, W], got {video.shape}")
    pos = np.clip(video, 0.0, None)
    mass = pos.reshape(3, -1).sum(axis=1)
    if mass.max() <= 1e-6:
        return UNRECOGNIZED
    ch = int(np.argmax(mass))
    frames = pos[ch]
    cents = [_centroid(f) for f in frames]
    valid = [(i, c) for i, c in enumerate(cents) if c is not None]
    if not valid:
        return UNRECOGNIZED

    motion = None
    if len(valid) >= 2:
        (i0, (x0, y0)), (i1, (x1, y1)) = valid[0], valid[-1]
        dx, dy = (x1 - x0) / (i1 - i0), (y1 - y0) / (i1 - i0)
        if max(abs(dx), abs(dy)) > 1e-9:
            if abs(dx) >= abs(dy):
                motion = "right" if dx > 0 else "left"
            else:
                motion = "down" if dy > 0 else "up"

    s = object_size(video.shape[2])
    totals = dict.fromkeys(SHAPES, 0.0)
    for i, c in valid:
        for name, v in _shape_scores(frames[i], c, s).items():
            totals[name] += v
    shape = max(SHAPES, key=lambda n: totals[n])
    return ProbeResult(shape, COLORS[ch], motion)


def alignment_score(est, truth) -> float:
    """Fraction of (shape, color, motion) that match; unrecognized scores 0."""
    if est is UNRECOGNIZED or truth is UNRECOGNIZED:
        return 0.0
    hits = sum(getattr(est, f) == getattr(truth, f) for f in ("shape", "color", "motion"))
    return hits / 3.0
