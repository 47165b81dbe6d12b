"""Enhanced rPPG expert aggregation (EREA) network.

A per-frame convolutional encoder (weights shared across time) produces a
feature tensor of shape (T, C, 8, 8).  The tensor is split into four
spatial quadrants, each handled by its own expert: a refining conv, a
class-activation map computed from per-timestep FC weights, and a signal
head reading the attention-pooled features.  A softmax gate conditioned on
the globally pooled features mixes the four expert signals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, avg_pool2d, conv2d, make_rng, softmax, stack, tanh
from .numerics.rng import INIT_STREAM
from .numerics.tensor import ShapeError, as_tensor, getitem

N_EXPERTS = 4
QUADRANTS = ("tl", "tr", "bl", "br")
# expert slot each slot maps to under a horizontal mirror: TL<->TR, BL<->BR
MIRROR_SLOTS = [1, 0, 3, 2]


@dataclass(frozen=True)
class ModelConfig:
    frames: int = 60
    height: int = 64
    width: int = 64
    in_channels: int = 3
    encoder_channels: tuple[int, ...] = (16, 32, 32, 32)
    feature_size: int = 8
    gate_hidden: int = 0

    def __post_init__(self):
        for side in (self.height, self.width):
            size, pools = side, 0
            while size > self.feature_size:
                if size % 2:
                    raise ValueError(f"frame side {side} cannot be pooled down to {self.feature_size}")
                size //= 2
                pools += 1
            if size != self.feature_size or pools > len(self.encoder_channels):
                raise ValueError(f"frame side {side} does not reduce to feature size {self.feature_size}")
        if self.feature_size % 2:
            raise ValueError("feature size must be even for the quadrant split")

    @property
    def channels(self) -> int:
        return self.encoder_channels[-1]

    @property
    def n_pools(self) -> int:
        return int(np.log2(self.height // self.feature_size))

    @property
    def quadrant_size(self) -> int:
        return self.feature_size // 2


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Fan-in scaled uniform initialization, drawn in insertion order."""
    rng = make_rng(seed, INIT_STREAM)
    shapes: dict[str, tuple[tuple[int, ...], int]] = {}
    c_prev = cfg.in_channels
    for i, c in enumerate(cfg.encoder_channels):
        fan = c_prev * 9
        shapes[f"enc{i}.w"] = ((c, c_prev, 3, 3), fan)
        shapes[f"enc{i}.b"] = ((c,), fan)
        c_prev = c
    c = cfg.channels
    for q in QUADRANTS:
        shapes[f"expert_{q}.refine.w"] = ((c, c, 3, 3), c * 9)
        shapes[f"expert_{q}.refine.b"] = ((c,), c * 9)
        shapes[f"expert_{q}.cam.w"] = ((cfg.frames, c), c)
        shapes[f"expert_{q}.head.w"] = ((c, 1), c)
        shapes[f"expert_{q}.head.b"] = ((1,), c)
    if cfg.gate_hidden:
        shapes["gate.hidden.w"] = ((c, cfg.gate_hidden), c)
        shapes["gate.hidden.b"] = ((cfg.gate_hidden,), c)
        shapes["gate.w"] = ((cfg.gate_hidden, N_EXPERTS), cfg.gate_hidden)
        shapes["gate.b"] = ((N_EXPERTS,), cfg.gate_hidden)
    else:
        shapes["gate.w"] = ((c, N_EXPERTS), c)
        shapes["gate.b"] = ((N_EXPERTS,), c)
    return {name: Tensor(_uniform(rng, shape, fan), requires_grad=True, name=name)
            for name, (shape, fan) in shapes.items()}


def encode(frames, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """(T, H, W, C_in) frames -> (T, C, 8, 8) features, one shared conv stack per frame."""
    frames = np.asarray(frames.data if isinstance(frames, Tensor) else frames, dtype=np.float64)
    expected = (cfg.frames, cfg.height, cfg.width, cfg.in_channels)
    if frames.shape != expected:
        raise ShapeError("encode", frames.shape, expected)
    x = Tensor(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)))
    for i in range(len(cfg.encoder_channels)):
        x = tanh(conv2d(x, params[f"enc{i}.w"], params[f"enc{i}.b"]))
        if x.shape[-1] > cfg.feature_size:
            x = avg_pool2d(x, 2)
    return x


def split_quadrants(f: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Top-left, top-right, bottom-left, bottom-right spatial quadrants."""
    f = as_tensor(f)
    h, w = f.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError("split_quadrants", f.shape)
    hh, hw = h // 2, w // 2
    return (f[..., :hh, :hw], f[..., :hh, hw:], f[..., hh:, :hw], f[..., hh:, hw:])


def merge_quadrants(tl: Tensor, tr: Tensor, bl: Tensor, br: Tensor) -> np.ndarray:
    top = np.concatenate([tl.data, tr.data], axis=-1)
    bottom = np.concatenate([bl.data, br.data], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def cam_attention(f: Tensor, w: Tensor) -> Tensor:
    """M_t(h, w) = sum_c w[t, c] * f[t, c, h, w]."""
    f, w = as_tensor(f), as_tensor(w)
    if f.ndim != 4 or w.shape != f.shape[:2]:
        raise ShapeError("cam_attention", f.shape, w.shape)
    t, c = w.shape
    return (f * w.reshape(t, c, 1, 1)).sum(axis=1)


def expert_forward(f: Tensor, params: dict[str, Tensor], prefix: str) -> tuple[Tensor, Tensor]:
    """One expert on a (T, C, Hq, Wq) quadrant -> (signal (T,), maps (T, Hq, Wq))."""
    g = tanh(conv2d(f, params[f"{prefix}.refine.w"], params[f"{prefix}.refine.b"]))
    maps = cam_attention(g, params[f"{prefix}.cam.w"])
    t, c, hq, wq = g.shape
    weights = softmax(maps.reshape(t, hq * wq), axis=1)
    pooled = (g.reshape(t, c, hq * wq) * weights.reshape(t, 1, hq * wq)).sum(axis=2)
    signal = pooled @ params[f"{prefix}.head.w"] + params[f"{prefix}.head.b"]
    return signal.reshape(t), maps


def gate_weights(f: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Softmax mixing weights (1, 4) from the globally averaged feature vector."""
    pooled = f.mean(axis=(0, 2, 3)).reshape(1, f.shape[1])
    if "gate.hidden.w" in params:
        pooled = tanh(pooled @ params["gate.hidden.w"] + params["gate.hidden.b"])
    return softmax(pooled @ params["gate.w"] + params["gate.b"], axis=1)


def gate_aggregate(signals, f: Tensor, params: dict[str, Tensor] | None = None,
                   weights: Tensor | None = None) -> Tensor:
    """Convex combination of the expert signals; ``weights`` overrides the gate."""
    if weights is None:
        weights = gate_weights(f, params)
    s = stack(list(signals), axis=1)  # (T, E)
    return (s * as_tensor(weights).reshape(1, len(signals))).sum(axis=1)


def flip_align(m):
    """Mirror maps horizontally and swap TL<->TR, BL<->BR expert slots.

    Accepts a Tensor (stays in the gradient graph) or an ndarray.
    """
    if isinstance(m, Tensor):
        return getitem(getitem(m, (slice(None), MIRROR_SLOTS)), (Ellipsis, slice(None, None, -1)))
    m = np.asarray(m)
    return m[:, MIRROR_SLOTS][..., ::-1].copy()


class EREA:
    """Parameter container plus the full forward pass."""

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0,
                 params: dict[str, Tensor] | None = None):
        self.cfg = cfg or ModelConfig()
        self.params = params if params is not None else init_params(self.cfg, seed)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def forward(self, frames) -> tuple[Tensor, Tensor]:
        """Frames (T, H, W, C_in) -> (signal (T,), attention maps (T, 4, Hq, Wq))."""
        feats = encode(frames, self.params, self.cfg)
        signals, maps = [], []
        for q, part in zip(QUADRANTS, split_quadrants(feats)):
            s, m = expert_forward(part, self.params, f"expert_{q}")
            signals.append(s)
            maps.append(m)
        y = gate_aggregate(signals, feats, self.params)
        return y, stack(maps, axis=1)

    __call__ = forward

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"checkpoint/model parameter mismatch: {sorted(missing)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ShapeError(f"load_state_dict[{k}]", state[k].shape, p.shape)
            p.data = np.array(state[k], dtype=np.float64)


def model_forward(model: EREA, frames) -> tuple[Tensor, Tensor]:
    return model.forward(frames)
