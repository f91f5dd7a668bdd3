"""Conditional noise predictor: conv3d -> tanh -> conv3d with hand-written gradients.

The text embedding goes through a trainable linear map to ``cond_channels``
values and, together with a sinusoidal time embedding, is broadcast over
``T x H x W`` as extra input channels. Those channels are spatially constant,
so their contribution to the first convolution is computed from a border mask
instead of a full im2col.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .io import atomic_write_bytes
from .numerics import Rng

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DenoiserArch:
    video_channels: int = 3
    hidden_channels: int = 8
    kernel: int = 3
    time_embed_dim: int = 8
    cond_dim: int = 256
    cond_channels: int = 4

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")

    @property
    def in_channels(self) -> int:
        return self.video_channels + self.cond_channels + self.time_embed_dim

    @property
    def const_channels(self) -> int:
        return self.cond_channels + self.time_embed_dim

    def layout(self) -> dict[str, tuple[int, ...]]:
        k = self.kernel
        return {
            "proj_w": (self.cond_channels, self.cond_dim),
            "proj_b": (self.cond_channels,),
            "conv1_w": (self.hidden_channels, self.in_channels, k, k, k),
            "conv1_b": (self.hidden_channels,),
            "conv2_w": (self.video_channels, self.hidden_channels, k, k, k),
            "conv2_b": (self.video_channels,),
        }

    @property
    def param_count(self) -> int:
        return sum(math.prod(s) for s in self.layout().values())

    def fan_in(self, name: str) -> int:
        return math.prod(self.layout()[name][1:])


def unpack(arch: DenoiserArch, params: np.ndarray) -> dict[str, np.ndarray]:
    """Named views into the flat parameter vector (no copies)."""
    if params.shape != (arch.param_count,):
        raise ValueError(f"expected {arch.param_count} params, got {params.shape}")
    out, i = {}, 0
    for name, shape in arch.layout().items():
        n = math.prod(shape)
        out[name] = params[i:i + n].reshape(shape)
        i += n
    return out


def init_params(arch: DenoiserArch, seed: int) -> np.ndarray:
    rng = Rng(seed)
    params = np.zeros(arch.param_count)
    views = unpack(arch, params)
    for name, view in views.items():
        if name.endswith("_w"):
            view[...] = rng.normal(view.shape) / np.sqrt(arch.fan_in(name))
    return params


def time_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    return np.concatenate([np.sin(t * freqs), np.cos(t * freqs)])


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """``[C, T, H, W]`` -> ``[T*H*W, C*k^3]`` with zero padding."""
    c, t, h, w = x.shape
    p = k // 2
    padded = np.pad(x, ((0, 0), (p, p), (p, p), (p, p)))
    win = sliding_window_view(padded, (k, k, k), axis=(1, 2, 3))
    return win.transpose(1, 2, 3, 0, 4, 5, 6).reshape(t * h * w, c * k ** 3)


def _col2im(cols: np.ndarray, shape, k: int) -> np.ndarray:
    c, t, h, w = shape
    p = k // 2
    cols = cols.reshape(t, h, w, c, k, k, k).transpose(3, 4, 5, 6, 0, 1, 2)
    out = np.zeros((c, t + 2 * p, h + 2 * p, w + 2 * p))
    for a in range(k):
        for b in range(k):
            for d in range(k):
                out[:, a:a + t, b:b + h, d:d + w] += cols[:, a, b, d]
    return out[:, p:p + t, p:p + h, p:p + w]


class Denoiser:
    """Noise predictor ``eps(z_t, t, c)`` for a fixed architecture."""

    def __init__(self, arch: DenoiserArch | None = None):
        self.arch = arch or DenoiserArch()
        self._masks: dict[tuple, np.ndarray] = {}

    def _mask(self, thw) -> np.ndarray:
        if thw not in self._masks:
            self._masks[thw] = _im2col(np.ones((1,) + thw), self.arch.kernel)
        return self._masks[thw]

    def _check(self, z, cond):
        a = self.arch
        if z.ndim != 4 or z.shape[0] != a.video_channels:
            raise ValueError(f"expected [{a.video_channels}, T, H, W] input, got {z.shape}")
        if np.shape(cond) != (a.cond_dim,):
            raise ValueError(f"conditioning must have {a.cond_dim} entries, got {np.shape(cond)}")

    def forward(self, params, z, t, cond):
        self._check(z, cond)
        a, k = self.arch, self.arch.kernel
        w = unpack(a, params)
        cond = np.asarray(cond, dtype=np.float64)
        c, T, H, W = z.shape
        const = np.concatenate([w["proj_w"] @ cond + w["proj_b"], time_embedding(t, a.time_embed_dim)])
        w1 = w["conv1_w"].reshape(a.hidden_channels, a.in_channels, k ** 3)
        w1_z, w1_c = w1[:, :c], w1[:, c:]
        cols_z = _im2col(z, k)
        mask = self._mask((T, H, W))
        k_const = np.einsum("ock,c->ok", w1_c, const)
        pre = cols_z @ w1_z.reshape(a.hidden_channels, -1).T + mask @ k_const.T + w["conv1_b"]
        hid = np.tanh(pre)
        hid_img = hid.T.reshape(a.hidden_channels, T, H, W)
        cols_h = _im2col(hid_img, k)
        out = cols_h @ w["conv2_w"].reshape(c, -1).T + w["conv2_b"]
        cache = (z.shape, cond, const, cols_z, mask, hid, cols_h)
        return out.T.reshape(z.shape), cache

    def predict(self, params, z_t, t, cond) -> np.ndarray:
        return self.forward(params, z_t, t, cond)[0]

    def backward(self, params, cache, grad_out: np.ndarray) -> np.ndarray:
        a, k = self.arch, self.arch.kernel
        w = unpack(a, params)
        shape, cond, const, cols_z, mask, hid, cols_h = cache
        c, T, H, W = shape
        grad = np.zeros_like(params)
        g = unpack(a, grad)

        g_out = grad_out.reshape(c, -1).T
        w2 = w["conv2_w"].reshape(c, -1)
        g["conv2_w"][...] = (g_out.T @ cols_h).reshape(g["conv2_w"].shape)
        g["conv2_b"][...] = g_out.sum(axis=0)

        g_hid_img = _col2im(g_out @ w2, (a.hidden_channels, T, H, W), k)
        g_pre = g_hid_img.reshape(a.hidden_channels, -1).T * (1.0 - hid * hid)

        w1 = w["conv1_w"].reshape(a.hidden_channels, a.in_channels, k ** 3)
        g1 = g["conv1_w"].reshape(a.hidden_channels, a.in_channels, k ** 3)
        g1[:, :c] = (g_pre.T @ cols_z).reshape(a.hidden_channels, c, k ** 3)
        g_kconst = g_pre.T @ mask
        g1[:, c:] = const[None, :, None] * g_kconst[:, None, :]
        g["conv1_b"][...] = g_pre.sum(axis=0)

        g_const = np.einsum("ock,ok->c", w1[:, c:], g_kconst)
        g_proj = g_const[:a.cond_channels]
        g["proj_w"][...] = np.outer(g_proj, cond)
        g["proj_b"][...] = g_proj
        return grad

    def loss_and_grad(self, params, inputs, objective):
        """Loss and parameter gradient of ``objective`` composed with ``predict``.

        ``inputs`` is ``(z_t, t, cond)``. ``objective(out)`` returns
        ``(loss, dloss/dout, parts)``; an optional ``objective.penalty(params)``
        returns ``(value, grad)`` for parameter-space terms.
        """
        z_t, t, cond = inputs
        out, cache = self.forward(params, z_t, t, cond)
        loss, g_out, parts = objective(out)
        grad = self.backward(params, cache, g_out)
        penalty = getattr(objective, "penalty", None)
        if penalty is not None:
            p_val, p_grad = penalty(params)
            loss = loss + p_val
            grad = grad + p_grad
            parts = {**parts, "penalty": p_val}
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss}")
        return loss, grad, parts


@dataclass(frozen=True)
class TeacherSnapshot:
    params: np.ndarray
    arch: DenoiserArch

    def digest(self) -> str:
        return hashlib.sha256(self.params.tobytes()).hexdigest()


def snapshot(params, arch: DenoiserArch | None = None) -> TeacherSnapshot:
    if isinstance(params, TeacherSnapshot):
        arch = arch or params.arch
        params = params.params
    if not np.all(np.isfinite(params)):
        raise ValueError("cannot snapshot non-finite parameters")
    frozen = np.array(params, dtype=np.float64, copy=True)
    frozen.flags.writeable = False
    return TeacherSnapshot(frozen, arch or DenoiserArch())


# -- checkpoint files ---------------------------------------------------------

def save_checkpoint(path, params, arch: DenoiserArch, seed: int, task_index: int) -> None:
    header = {
        "format_version": CHECKPOINT_VERSION,
        **asdict(arch),
        "param_count": arch.param_count,
        "seed": int(seed),
        "task_index": int(task_index),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = np.asarray(params, dtype="<f4").tobytes()
    atomic_write_bytes(path, struct.pack("<Q", len(head)) + head + body)


def load_checkpoint(path) -> tuple[np.ndarray, DenoiserArch, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + n].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    arch = DenoiserArch(**{f: header[f] for f in DenoiserArch.__dataclass_fields__})
    count = header["param_count"]
    if count != arch.param_count:
        raise ValueError(f"{path}: header param_count {count} != {arch.param_count}")
    body = raw[8 + n:]
    if len(body) != 4 * count:
        raise ValueError(f"{path}: expected {4 * count} payload bytes, got {len(body)}")
    params = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return params, arch, header
