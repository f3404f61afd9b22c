"""Desk-scale numerics of the vision encoder and adapter.

Everything here runs on float64 numpy arrays. The SAM and CLIP backbones are
replaced by frozen, seeded random maps: the shapes and dataflow are the
contract, not the learned representations. Only the adapter is trainable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtr

from ._glyphs import CELL_H, CELL_W, GLYPHS


class ShapeError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, trajectory: list[float]):
        super().__init__(message)
        self.trajectory = trajectory


# -- shape pipeline -----------------------------------------------------------

SAM_CHANNELS = 768
NECK_CHANNELS = (256, 512, 1024)
CLIP_WIDTH = 1024


@dataclass(frozen=True)
class ShapeTrace:
    stages: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def tokens(self) -> int:
        return self.stages[-1][1][0]

    @property
    def width(self) -> int:
        return self.stages[-1][1][1]

    def shape(self, label: str) -> tuple[int, ...]:
        return dict(self.stages)[label]


def trace_pipeline_shapes(resolution: int, patch: int = 16) -> ShapeTrace:
    """Per-stage tensor shapes (batch dimension omitted) for one square image."""
    if resolution <= 0 or resolution % patch:
        raise ShapeError(f"sam: resolution {resolution} is not divisible by patch size {patch}")
    g = resolution // patch
    if g % 4:
        raise ShapeError(f"neck: SAM grid {g} is not divisible by 4 (two stride-2 stages)")
    c1, c2, c3 = NECK_CHANNELS
    n = (g // 4) ** 2
    return ShapeTrace((
        ("input", (3, resolution, resolution)),
        ("sam", (SAM_CHANNELS, g, g)),
        ("neck_stage1", (c1, g, g)),
        ("neck_stage2", (c2, g // 2, g // 2)),
        ("neck_stage3", (c3, g // 4, g // 4)),
        ("flatten", (c3, n)),
        ("transpose", (n, c3)),
        ("clip", (n, CLIP_WIDTH)),
        ("fusion", (n, CLIP_WIDTH)),
    ))


# -- neck ---------------------------------------------------------------------

def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, *, stride: int = 1,
           padding: int = 0) -> np.ndarray:
    """Cross-correlation of ``x`` [C_in, H, W] with ``w`` [C_out, C_in, kh, kw] via im2col."""
    c_in, h, wd = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv expects {c_in_w} input channels, got {c_in}")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]  # C, Ho, Wo, kh, kw
    ho, wo = win.shape[1:3]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c_in * kh * kw, ho * wo)
    out = w.reshape(c_out, -1) @ cols
    if b is not None:
        out += b[:, None]
    return out.reshape(c_out, ho, wo)


def layer_norm_2d(x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Normalise across channels at every spatial position (no affine)."""
    mu = x.mean(axis=0, keepdims=True)
    var = x.var(axis=0, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


@dataclass(frozen=True)
class NeckWeights:
    conv1: np.ndarray  # 1x1, sam -> c1
    conv2: np.ndarray  # 3x3, c1 -> c1
    conv3: np.ndarray  # 3x3 stride 2, c1 -> c2
    conv4: np.ndarray  # 3x3 stride 2, c2 -> c3
    biases: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    eps: float = 1e-6

    @classmethod
    def random(cls, seed: int = 0, in_channels: int = SAM_CHANNELS,
               channels: tuple[int, int, int] = NECK_CHANNELS) -> "NeckWeights":
        rng = np.random.default_rng(seed)
        c1, c2, c3 = channels

        def he(c_out, c_in, k):
            return rng.standard_normal((c_out, c_in, k, k)) / math.sqrt(c_in * k * k)

        return cls(
            conv1=he(c1, in_channels, 1),
            conv2=he(c1, c1, 3),
            conv3=he(c2, c1, 3),
            conv4=he(c3, c2, 3),
            biases=(np.zeros(c1), np.zeros(c1), np.zeros(c2), np.zeros(c3)),
        )


def neck_forward(f_sam: np.ndarray, weights: NeckWeights) -> np.ndarray:
    """[C_sam, g, g] -> [C3, g/4, g/4]: 1x1 conv, LayerNorm2d, 3x3 conv, then two stride-2 3x3 convs."""
    if f_sam.ndim != 3 or f_sam.shape[1] != f_sam.shape[2]:
        raise ShapeError(f"expected a square [C, g, g] map, got {f_sam.shape}")
    if f_sam.shape[0] != weights.conv1.shape[1]:
        raise ShapeError(f"expected {weights.conv1.shape[1]} channels, got {f_sam.shape[0]}")
    if f_sam.shape[1] % 4:
        raise ShapeError(f"grid {f_sam.shape[1]} is not divisible by 4")
    b1, b2, b3, b4 = weights.biases
    x = conv2d(f_sam, weights.conv1, b1)
    x = layer_norm_2d(x, weights.eps)
    x = conv2d(x, weights.conv2, b2, padding=1)
    x = conv2d(x, weights.conv3, b3, stride=2, padding=1)
    return conv2d(x, weights.conv4, b4, stride=2, padding=1)


# -- positional embeddings ----------------------------------------------------

def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    return np.where(
        x <= 1,
        (a + 2) * x**3 - (a + 3) * x**2 + 1,
        np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0),
    )


def bicubic_matrix(src: int, dst: int, a: float = -0.5) -> np.ndarray:
    """[dst, src] 1-D resampling weights, half-pixel centres, clamped edges."""
    m = np.zeros((dst, src))
    for i in range(dst):
        s = (i + 0.5) * src / dst - 0.5
        i0 = math.floor(s)
        t = s - i0
        for k, off in enumerate((-1, 0, 1, 2)):
            m[i, min(max(i0 + off, 0), src - 1)] += cubic_kernel(np.array(t - off), a)
    return m


def source_coordinate(i: int, src: int, dst: int) -> float:
    return (i + 0.5) * src / dst - 0.5


def interpolate_pos_embed(grid: np.ndarray, target: int) -> np.ndarray:
    """Resample a [g0, g0, c] embedding grid to [target, target, c] with Catmull-Rom bicubic."""
    if grid.ndim != 3 or grid.shape[0] != grid.shape[1]:
        raise ShapeError(f"expected a square [g, g, c] grid, got {grid.shape}")
    if grid.shape[0] < 2:
        raise ValueError("source grid must be at least 2x2")
    if target < 1:
        raise ValueError("target grid must be >= 1")
    if target == grid.shape[0]:
        return grid.copy()
    m = bicubic_matrix(grid.shape[0], target)
    return np.einsum("ia,jb,abc->ijc", m, m, grid)


def fuse(f_clip: np.ndarray, f_neck: np.ndarray) -> np.ndarray:
    """Residual fusion of CLIP and neck token features."""
    if f_clip.shape != f_neck.shape:
        raise ShapeError(f"cannot fuse {f_clip.shape} with {f_neck.shape}")
    return f_clip + f_neck


# -- frozen encoder stand-in ----------------------------------------------------

@dataclass(frozen=True)
class FrozenEncoder:
    """Seeded random SAM/neck/CLIP stand-ins with the real stage dimensions by default."""

    patch: int
    sam_proj: np.ndarray  # [patch*patch, sam]
    neck: NeckWeights
    pos_grid: np.ndarray  # [g_orig, g_orig, width]
    clip_proj: np.ndarray  # [width, width]

    @classmethod
    def random(cls, seed: int = 0, *, patch: int = 16, sam_channels: int = SAM_CHANNELS,
               neck_channels: tuple[int, int, int] = NECK_CHANNELS, pos_grid: int = 24) -> "FrozenEncoder":
        rng = np.random.default_rng(seed)
        width = neck_channels[2]
        return cls(
            patch=patch,
            sam_proj=rng.standard_normal((patch * patch, sam_channels)) / patch,
            neck=NeckWeights.random(seed + 1, sam_channels, neck_channels),
            pos_grid=0.02 * rng.standard_normal((pos_grid, pos_grid, width)),
            clip_proj=rng.standard_normal((width, width)) / math.sqrt(width),
        )


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, x * Phi(x)."""
    return x * ndtr(x)


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return ndtr(x) + x * np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def encode_image(pixels: np.ndarray, encoder: FrozenEncoder) -> np.ndarray:
    """Grey-level image [res, res] (or RGB) -> fused token features [n, width]."""
    img = pixels.mean(axis=2) if pixels.ndim == 3 else pixels
    img = img.astype(np.float64) / 255.0
    res = img.shape[0]
    p = encoder.patch
    if img.shape[0] != img.shape[1] or res % p:
        raise ShapeError(f"image {img.shape} does not tile into {p}px patches")
    g = res // p
    patches = img.reshape(g, p, g, p).transpose(0, 2, 1, 3).reshape(g * g, p * p)
    f_sam = (patches @ encoder.sam_proj).T.reshape(-1, g, g)
    f_neck_map = neck_forward(f_sam, encoder.neck)
    c, gn, _ = f_neck_map.shape
    f_neck = f_neck_map.reshape(c, gn * gn).T  # flatten, transpose
    pos = interpolate_pos_embed(encoder.pos_grid, gn).reshape(gn * gn, -1)
    f_clip = gelu((f_neck + pos) @ encoder.clip_proj)
    return fuse(f_clip, f_neck)


# -- adapter ------------------------------------------------------------------

@dataclass(frozen=True)
class AdapterParams:
    W1: np.ndarray  # [d_h, d_f]
    b1: np.ndarray
    W2: np.ndarray  # [d, d_h]
    b2: np.ndarray
    eps: float = 1e-5

    def __post_init__(self) -> None:
        d_h, d_f = self.W1.shape
        d, d_h2 = self.W2.shape
        if self.b1.shape != (d_h,) or d_h2 != d_h or self.b2.shape != (d,):
            raise ShapeError("adapter parameter shapes are inconsistent")
        if self.eps <= 0:
            raise ValueError("layer-norm epsilon must be positive")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[1], self.W1.shape[0], self.W2.shape[0]

    @classmethod
    def init(cls, d_f: int = 1024, d_h: int = 4096, d: int = 4096, seed: int = 0,
             eps: float = 1e-5) -> "AdapterParams":
        rng = np.random.default_rng(seed)
        return cls(
            W1=rng.standard_normal((d_h, d_f)) / math.sqrt(d_f),
            b1=np.zeros(d_h),
            W2=rng.standard_normal((d, d_h)) / math.sqrt(d_h),
            b2=np.zeros(d),
            eps=eps,
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def with_arrays(self, **arrays: np.ndarray) -> "AdapterParams":
        return replace(self, **arrays)


@dataclass
class _AdapterCache:
    f: np.ndarray
    a: np.ndarray
    h: np.ndarray
    xhat: np.ndarray
    inv_std: np.ndarray


def _adapter(params: AdapterParams, f: np.ndarray) -> tuple[np.ndarray, _AdapterCache]:
    if f.ndim != 2 or f.shape[1] != params.W1.shape[1]:
        raise ShapeError(f"adapter expects [n, {params.W1.shape[1]}] features, got {f.shape}")
    with np.errstate(all="ignore"):
        a = f @ params.W1.T + params.b1
        h = gelu(a)
        y = h @ params.W2.T + params.b2
        mu = y.mean(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(y.var(axis=1, keepdims=True) + params.eps)
        z = (y - mu) * inv_std
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite value in adapter forward pass")
    return z, _AdapterCache(f, a, h, z, inv_std)


def adapter_forward(params: AdapterParams, f: np.ndarray) -> np.ndarray:
    """z = LayerNorm(W2 GELU(W1 f + b1) + b2), applied row-wise to ``f`` [n, d_f]."""
    return _adapter(params, f)[0]


def _adapter_backward(params: AdapterParams, cache: _AdapterCache, dz: np.ndarray) -> dict[str, np.ndarray]:
    xhat, inv_std = cache.xhat, cache.inv_std
    dy = inv_std * (dz - dz.mean(axis=1, keepdims=True) - xhat * (dz * xhat).mean(axis=1, keepdims=True))
    dh = dy @ params.W2
    da = dh * gelu_grad(cache.a)
    return {"W1": da.T @ cache.f, "b1": da.sum(axis=0), "W2": dy.T @ cache.h, "b2": dy.sum(axis=0)}


# -- loss -----------------------------------------------------------------------

def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def reconstruction_loss(logits: np.ndarray, target) -> float:
    """Sum over positions of -log softmax(logits)[t, target_t], in nats."""
    target = np.asarray(target, dtype=np.int64)
    if logits.ndim != 2 or target.shape != (logits.shape[0],):
        raise ShapeError(f"need one target id per logits row, got {target.shape} for {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= logits.shape[1]):
        raise ValueError(f"target id out of range for vocabulary of {logits.shape[1]}")
    lp = log_softmax(logits)
    return float(-lp[np.arange(len(target)), target].sum())


def loss_in_bits(nats: float) -> float:
    return nats / math.log(2)


@dataclass(frozen=True)
class Batch:
    """Features for one or more rendered samples, the text they encode, and the frozen decoder head."""

    features: np.ndarray  # [n, d_f]
    targets: np.ndarray  # [n]
    head: np.ndarray  # [V, d]


def loss_and_grads(params: AdapterParams, batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
    z, cache = _adapter(params, batch.features)
    logits = z @ batch.head.T
    loss = reconstruction_loss(logits, batch.targets)
    probs = np.exp(log_softmax(logits))
    probs[np.arange(len(batch.targets)), batch.targets] -= 1.0
    dz = probs @ batch.head
    return loss, _adapter_backward(params, cache, dz)


def batch_loss(params: AdapterParams, batch: Batch) -> float:
    return reconstruction_loss(adapter_forward(params, batch.features) @ batch.head.T, batch.targets)


def grad_check(params: AdapterParams, batch: Batch, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients over every parameter."""
    _, grads = loss_and_grads(params, batch)
    worst = 0.0
    for name, arr in params.arrays().items():
        g = grads[name]
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += h
            minus[idx] -= h
            numeric = (batch_loss(params.with_arrays(**{name: plus}), batch)
                       - batch_loss(params.with_arrays(**{name: minus}), batch)) / (2 * h)
            analytic = g[idx]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


# -- toy training -------------------------------------------------------------

@dataclass(frozen=True)
class ToyTrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    steps: int = 2000
    optimizer: Literal["sgd", "adamw"] = "adamw"
    seed: int = 0
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


TOY_ALPHABET = "0123456789+-=x"


@dataclass(frozen=True)
class ToyDataset:
    """Rendered glyph strings pushed through a frozen random encoder, plus a frozen softmax head."""

    features: np.ndarray  # [samples, seq_len, d_f]
    targets: np.ndarray  # [samples, seq_len]
    head: np.ndarray  # [V, d]
    init: AdapterParams = field(repr=False)

    def __len__(self) -> int:
        return self.features.shape[0]

    def batch(self, idx: np.ndarray) -> Batch:
        d_f = self.features.shape[2]
        return Batch(self.features[idx].reshape(-1, d_f), self.targets[idx].reshape(-1), self.head)


def glyph_bitmap(ch: str) -> np.ndarray:
    rows = GLYPHS[ord(ch)]
    return np.array([[(r >> (CELL_W - 1 - c)) & 1 for c in range(CELL_W)] for r in rows], dtype=np.float64)


def make_glyph_dataset(samples: int = 16, seq_len: int = 8, *, d_f: int = 16, d_h: int = 32, d: int = 16,
                       alphabet: str = TOY_ALPHABET, seed: int = 0) -> ToyDataset:
    rng = np.random.default_rng(seed)
    glyphs = np.stack([glyph_bitmap(c).ravel() for c in alphabet])  # [V, 72]
    enc = rng.standard_normal((CELL_H * CELL_W, d_f)) / math.sqrt(12.0)
    targets = rng.integers(0, len(alphabet), size=(samples, seq_len))
    features = np.tanh(glyphs[targets] @ enc)
    head = rng.standard_normal((len(alphabet), d))
    return ToyDataset(features, targets, head, AdapterParams.init(d_f, d_h, d, seed=seed + 1))


@dataclass
class TrainResult:
    losses: list[float]
    params: AdapterParams

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def train_toy(config: ToyTrainConfig, dataset: ToyDataset, params: AdapterParams | None = None) -> TrainResult:
    """Optimise only the adapter; ``losses[t]`` is the mean per-sample loss before update t,
    with one extra entry after the final update."""
    rng = np.random.default_rng(config.seed)
    params = params or dataset.init
    state = {k: v.copy() for k, v in params.arrays().items()}
    m = {k: np.zeros_like(v) for k, v in state.items()}
    v2 = {k: np.zeros_like(v) for k, v in state.items()}
    b1, b2 = config.betas
    n = len(dataset)
    losses: list[float] = []

    def current() -> AdapterParams:
        return params.with_arrays(**state)

    for step in range(1, config.steps + 1):
        idx = np.arange(n) if config.batch_size >= n else np.sort(rng.choice(n, config.batch_size, replace=False))
        try:
            loss, grads = loss_and_grads(current(), dataset.batch(idx))
        except FloatingPointError as exc:
            raise TrainingDiverged(f"{exc} at step {step}", losses) from exc
        loss /= len(idx)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} at step {step}", losses)
        losses.append(loss)
        lr = config.learning_rate
        for k in state:
            g = grads[k] / len(idx)
            if config.optimizer == "sgd":
                state[k] -= lr * g
            else:
                m[k] = b1 * m[k] + (1 - b1) * g
                v2[k] = b2 * v2[k] + (1 - b2) * g * g
                mhat = m[k] / (1 - b1**step)
                vhat = v2[k] / (1 - b2**step)
                state[k] -= lr * (mhat / (np.sqrt(vhat) + config.adam_eps) + config.weight_decay * state[k])
    try:
        final = batch_loss(current(), dataset.batch(np.arange(n))) / n
    except FloatingPointError:
        final = math.inf
    if not math.isfinite(final):
        raise TrainingDiverged("loss became non-finite after the final step", losses)
    losses.append(final)
    return TrainResult(losses, current())
