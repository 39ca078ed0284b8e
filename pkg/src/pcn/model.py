"""Point Completion Network: stacked-PointNet encoder and coarse-to-fine decoders.

Three decoder variants share the encoder:

* ``multistage``: a fully-connected head predicts ``s`` coarse points, then a
  shared folding MLP grows a ``u x u`` patch around each of them.
* ``fc``: a fully-connected head predicts every output point directly.
* ``folding``: two chained global folding layers deform one large 2D grid.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .geometry.kdtree import KdTree
from .metrics import auction_assignment, default_epsilon, pairwise_distances
from .tensor import Tensor

DECODERS = ("multistage", "fc", "folding")


@dataclass
class ModelConfig:
    encoder_mlp1_widths: list[int] = field(default_factory=lambda: [128, 256])
    encoder_mlp2_widths: list[int] = field(default_factory=lambda: [512, 1024])
    num_pn_layers: int = 2
    bottleneck: int = 1024
    coarse_size: int = 1024
    grid_size: int = 4
    grid_scale: float = 0.05
    folding_mlp_widths: list[int] = field(default_factory=lambda: [512, 512, 3])
    coarse_fc_widths: list[int] = field(default_factory=lambda: [1024, 1024])
    decoder_variant: str = "multistage"
    coarse_loss: str = "cd"
    # fc baseline
    fc_output_points: int = 16384
    # folding baseline
    folding_grid_size: int = 128
    folding_grid_scale: float = 0.5
    init_seed: int = 0

    def __post_init__(self):
        if self.decoder_variant not in DECODERS:
            raise ValueError(f"decoder_variant must be one of {DECODERS}, got {self.decoder_variant!r}")
        if self.coarse_loss not in ("cd", "emd"):
            raise ValueError(f"coarse_loss must be 'cd' or 'emd', got {self.coarse_loss!r}")
        if self.num_pn_layers < 1:
            raise ValueError("num_pn_layers must be >= 1")
        widths = self.encoder_widths()
        if widths[-1][-1] != self.bottleneck:
            raise ValueError(
                f"bottleneck {self.bottleneck} must equal the last encoder width {widths[-1][-1]}"
            )
        if self.grid_size < 1 or self.folding_grid_size < 1:
            raise ValueError("grid sizes must be >= 1")
        if self.grid_scale <= 0 or self.folding_grid_scale <= 0:
            raise ValueError("grid scales must be positive")
        if self.folding_mlp_widths[-1] != 3:
            raise ValueError("the folding MLP must end in 3 units")
        if self.coarse_size < 1 or self.fc_output_points < 1:
            raise ValueError("output sizes must be positive")

    def encoder_widths(self) -> list[list[int]]:
        """Shared-MLP widths of each stacked PN layer."""
        if self.num_pn_layers == 1:
            return [list(self.encoder_mlp1_widths) + list(self.encoder_mlp2_widths)]
        return [list(self.encoder_mlp1_widths)] + [list(self.encoder_mlp2_widths)] * (self.num_pn_layers - 1)

    @property
    def detail_size(self) -> int:
        return self.coarse_size * self.grid_size ** 2

    @property
    def output_size(self) -> int:
        if self.decoder_variant == "multistage":
            return self.detail_size
        if self.decoder_variant == "fc":
            return self.fc_output_points
        return self.folding_grid_size ** 2


PRESETS = {
    "pcn-default": ModelConfig(),
    "pcn-cd": ModelConfig(),
    "pcn-emd": ModelConfig(coarse_loss="emd"),
    "fc": ModelConfig(decoder_variant="fc"),
    "folding": ModelConfig(decoder_variant="folding"),
    "toy": ModelConfig(
        encoder_mlp1_widths=[32, 64],
        encoder_mlp2_widths=[128, 128],
        bottleneck=128,
        coarse_size=64,
        grid_size=2,
        grid_scale=0.2,
        folding_mlp_widths=[128, 128, 3],
        coarse_fc_widths=[256, 256],
        fc_output_points=256,
        folding_grid_size=16,
    ),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown model preset {name!r}; known: {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


def _mlp_shapes(prefix: str, d_in: int, widths) -> list[tuple[str, tuple[int, ...]]]:
    out = []
    for i, w in enumerate(widths):
        out.append((f"{prefix}.{i}.weight", (d_in, w)))
        out.append((f"{prefix}.{i}.bias", (w,)))
        d_in = w
    return out


def param_shapes(config: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    shapes: list[tuple[str, tuple[int, ...]]] = []
    d_in = 3
    for layer, widths in enumerate(config.encoder_widths()):
        shapes += _mlp_shapes(f"encoder.pn{layer}", d_in, widths)
        d_in = 2 * widths[-1]
    k = config.bottleneck
    if config.decoder_variant == "multistage":
        shapes += _mlp_shapes("decoder.coarse", k, list(config.coarse_fc_widths) + [3 * config.coarse_size])
        shapes += _mlp_shapes("decoder.folding", 2 + 3 + k, config.folding_mlp_widths)
    elif config.decoder_variant == "fc":
        shapes += _mlp_shapes("decoder.fc", k, list(config.coarse_fc_widths) + [3 * config.fc_output_points])
    else:
        shapes += _mlp_shapes("decoder.fold1", 2 + k, config.folding_mlp_widths)
        shapes += _mlp_shapes("decoder.fold2", 3 + k, config.folding_mlp_widths)
    return OrderedDict(shapes)


def param_count(config: ModelConfig) -> int:
    return int(sum(int(np.prod(s)) for s in param_shapes(config).values()))


class ModelParams:
    """Named parameter tensors for one configuration."""

    def __init__(self, config: ModelConfig, tensors: "OrderedDict[str, Tensor]"):
        expected = param_shapes(config)
        if list(tensors) != list(expected):
            raise ValueError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ValueError(f"parameter {name!r} has shape {tensors[name].shape}, expected {shape}")
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: ModelConfig, seed: int | None = None, dtype=None) -> "ModelParams":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(config.init_seed if seed is None else seed)
        dtype = np.dtype(dtype) if dtype is not None else T.get_default_dtype()
        tensors = OrderedDict()
        for name, shape in param_shapes(config).items():
            if name.endswith(".weight"):
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                arr = rng.uniform(-limit, limit, size=shape)
            else:
                arr = np.zeros(shape)
            tensors[name] = Tensor(arr, requires_grad=True, name=name, dtype=dtype)
        return cls(config, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def mlp(self, prefix: str) -> list[tuple[Tensor, Tensor]]:
        layers = []
        i = 0
        while f"{prefix}.{i}.weight" in self.tensors:
            layers.append((self.tensors[f"{prefix}.{i}.weight"], self.tensors[f"{prefix}.{i}.bias"]))
            i += 1
        return layers

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data) for k, t in self.tensors.items())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.config,
            OrderedDict((k, Tensor(t.data.astype(dtype), requires_grad=True, name=k, dtype=dtype)) for k, t in self.tensors.items()),
        )

    def copy(self) -> "ModelParams":
        return self.astype(next(iter(self.tensors.values())).dtype)


# ------------------------------------------------------------------ encoder

def _points_tensor(X, dtype) -> Tensor:
    if isinstance(X, Tensor):
        return X
    pts = np.asarray(X)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"input cloud must be (m, 3), got shape {pts.shape}")
    if len(pts) == 0:
        raise ValueError("empty input cloud")
    return Tensor(pts, dtype=dtype)


def _param_dtype(params: ModelParams):
    return next(iter(params.tensors.values())).dtype


def encode(params: ModelParams, X, return_argmax: bool = False):
    """Global feature vector of a partial cloud.

    Each PN layer after the first concatenates the previous layer's pooled
    feature to every point feature before its shared MLP.
    """
    P = _points_tensor(X, _param_dtype(params))
    argmaxes = []
    feats = T.shared_mlp(P, params.mlp("encoder.pn0"))
    pooled, am = T.max_pool_points(feats)
    argmaxes.append(am)
    for layer in range(1, params.config.num_pn_layers):
        feats = T.shared_mlp(T.concat_feature(feats, pooled), params.mlp(f"encoder.pn{layer}"))
        pooled, am = T.max_pool_points(feats)
        argmaxes.append(am)
    if return_argmax:
        return pooled, argmaxes
    return pooled


def keypoints(params: ModelParams, X) -> tuple[np.ndarray, ...]:
    """Indices of input points selected by each PN layer's max pooling."""
    with T.no_grad():
        _, argmaxes = encode(params, X, return_argmax=True)
    return tuple(np.unique(a) for a in argmaxes)


# ------------------------------------------------------------------ decoders

def folding_grid(u: int, r: float) -> np.ndarray:
    """Zero-centred u x u grid with side length r, rows ordered with x fastest."""
    lin = np.linspace(-r / 2, r / 2, u) if u > 1 else np.zeros(1)
    gx, gy = np.meshgrid(lin, lin, indexing="xy")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def fold_patch(params: ModelParams, center, v: Tensor, u: int | None = None, r: float | None = None) -> Tensor:
    """Local offsets (u*u, 3) for one patch; the caller adds ``center``."""
    cfg = params.config
    u = cfg.grid_size if u is None else u
    r = cfg.grid_scale if r is None else r
    dtype = v.dtype
    grid = Tensor(folding_grid(u, r), dtype=dtype)
    c = center if isinstance(center, Tensor) else Tensor(np.asarray(center).reshape(1, 3), dtype=dtype)
    rows = T.concat_feature(T.concat_cols(grid, T.gather_rows(c, np.zeros(u * u, dtype=np.intp))), v)
    return T.shared_mlp(rows, params.mlp("decoder.folding"))


def decode_multistage(params: ModelParams, v: Tensor) -> tuple[Tensor, Tensor]:
    cfg = params.config
    s, t = cfg.coarse_size, cfg.grid_size ** 2
    flat = T.shared_mlp(T.reshape(v, (1, -1)), params.mlp("decoder.coarse"))
    coarse = T.reshape(flat, (s, 3))
    grid = Tensor(np.tile(folding_grid(cfg.grid_size, cfg.grid_scale), (s, 1)), dtype=v.dtype)
    centers = T.gather_rows(coarse, np.repeat(np.arange(s), t))
    rows = T.concat_feature(T.concat_cols(grid, centers), v)
    offsets = T.shared_mlp(rows, params.mlp("decoder.folding"))
    return coarse, T.add(offsets, centers)


def decode_fc(params: ModelParams, v: Tensor) -> Tensor:
    flat = T.shared_mlp(T.reshape(v, (1, -1)), params.mlp("decoder.fc"))
    return T.reshape(flat, (params.config.fc_output_points, 3))


def decode_folding(params: ModelParams, v: Tensor) -> Tensor:
    cfg = params.config
    grid = Tensor(folding_grid(cfg.folding_grid_size, cfg.folding_grid_scale), dtype=v.dtype)
    first = T.shared_mlp(T.concat_feature(grid, v), params.mlp("decoder.fold1"))
    return T.shared_mlp(T.concat_feature(first, v), params.mlp("decoder.fold2"))


class Completion(NamedTuple):
    coarse: Tensor | None
    detail: Tensor


def forward(params: ModelParams, X) -> Completion:
    v = encode(params, X)
    variant = params.config.decoder_variant
    if variant == "multistage":
        return Completion(*decode_multistage(params, v))
    if variant == "fc":
        return Completion(None, decode_fc(params, v))
    return Completion(None, decode_folding(params, v))


def complete(params: ModelParams, X) -> tuple[np.ndarray | None, np.ndarray]:
    """Inference without a tape; returns numpy (coarse, detail)."""
    with T.no_grad():
        out = forward(params, X)
    return (None if out.coarse is None else out.coarse.data), out.detail.data


# -------------------------------------------------------------------- losses

def chamfer_loss(pred: Tensor, target) -> Tensor:
    """Differentiable Chamfer distance between a predicted tensor and a fixed cloud."""
    tgt = np.asarray(target, dtype=pred.dtype)
    if len(tgt) == 0 or len(pred) == 0:
        raise ValueError("chamfer_loss needs non-empty clouds")
    idx_pt, _ = KdTree(tgt).query(pred.data)
    idx_tp, _ = KdTree(pred.data).query(tgt)
    forward_term = T.mean(T.row_norms(T.sub(pred, tgt[idx_pt])))
    backward_term = T.mean(T.row_norms(T.sub(T.gather_rows(pred, idx_tp), tgt)))
    return T.add(forward_term, backward_term)


def emd_loss(pred: Tensor, target, epsilon: float | None = None) -> Tensor:
    """Mean matched distance under the auction assignment (held fixed for the gradient)."""
    tgt = np.asarray(target, dtype=pred.dtype)
    if len(tgt) != len(pred):
        raise ValueError(f"EMD requires equal sizes, got {len(pred)} predicted and {len(tgt)} target points")
    eps = default_epsilon(pred.data, tgt) if epsilon is None else epsilon
    matching = auction_assignment(pairwise_distances(pred.data, tgt), eps)
    return T.mean(T.row_norms(T.sub(pred, tgt[matching])))


class LossTerms(NamedTuple):
    total: Tensor
    coarse: float
    detail: float


def completion_loss(coarse: Tensor | None, detail: Tensor, gt, gt_sub, alpha: float,
                    coarse_metric: str = "cd") -> LossTerms:
    """``d1(coarse, gt_sub) + alpha * CD(detail, gt)``; single-stage decoders use CD(detail, gt) alone."""
    d2 = chamfer_loss(detail, gt)
    if coarse is None:
        return LossTerms(d2, 0.0, float(d2.data))
    if coarse_metric == "emd":
        d1 = emd_loss(coarse, gt_sub)
    elif coarse_metric == "cd":
        d1 = chamfer_loss(coarse, gt_sub)
    else:
        raise ValueError(f"unknown coarse metric {coarse_metric!r}")
    total = T.add(d1, T.mul(d2, alpha))
    return LossTerms(total, float(d1.data), float(d2.data))
