"""Hierarchical frequency-aware Event Cloud network.

Per stage: grouping & sampling -> channel-axis spectral filter (spatial) ->
soft-attention aggregation over neighbours -> point-axis spectral filter
(temporal) -> residual block. After the last stage the point features are
mean- and max-pooled and fed to a classification or pose head.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import geometry, spectral
from .autodiff import ShapeError, Tensor
from .events import EventCloud, WindowSpec


@dataclass
class NetworkConfig:
    points: int = 1024
    stages: int = 3
    embed_dim: int = 64
    groups_stage1: int = 512
    K: int = 24
    # one 4-vector per stage; shorter lists repeat their last entry
    alpha: list = field(default_factory=lambda: [[1.0, 1.0, 1.0, 1.0]])
    task: str = "classification"
    classes: int = 10
    joints: int = 13
    activation: str = "gelu"
    head_hidden: int = 256
    res_ratio: float = 0.5
    dropout: float = 0.0
    # dense DFT basis: faster than butterfly FFTs in numpy at these widths
    dft_method: str = "naive"
    point_based_gs: bool = False
    no_temporal_fa: bool = False
    no_polarity: bool = False

    def __post_init__(self):
        if self.task not in ("classification", "pose"):
            raise ValueError(f"task must be 'classification' or 'pose', got {self.task!r}")
        if self.stages < 1 or self.embed_dim < 1 or self.K < 1 or self.points < 1:
            raise ValueError("stages, embed_dim, K and points must be >= 1")
        ad.activation(self.activation)
        self.alpha = [list(map(float, a)) for a in np.atleast_2d(np.asarray(self.alpha, dtype=float))]
        for a in self.alpha:
            if len(a) != 4 or min(a) <= 0:
                raise ValueError(f"alpha entries must be 4 positive values, got {a}")

    @property
    def coord_dim(self) -> int:
        return 3 if self.no_polarity else 4

    @property
    def out_dim(self) -> int:
        return self.classes if self.task == "classification" else 2 * self.joints

    def widths(self) -> list[int]:
        """Feature width entering each stage, plus the final one."""
        w = [self.embed_dim]
        for _ in range(self.stages):
            w.append(2 * w[-1] + self.coord_dim)
        return w

    def groups(self) -> list[int]:
        return [self.groups_stage1 >> s for s in range(self.stages)]

    def point_counts(self) -> list[int]:
        """Points entering each stage, plus the pooled count."""
        return [self.points] + self.groups()

    def stage_alpha(self, s: int) -> np.ndarray:
        a = np.asarray(self.alpha[min(s, len(self.alpha) - 1)])
        return a[:self.coord_dim]

    def res_hidden(self, C: int) -> int:
        return max(1, int(round(C * self.res_ratio)))

    def validate(self) -> None:
        """Check the stage schedule; raises ShapeError naming the failing stage."""
        widths = self.widths()
        for s in range(self.stages):
            if widths[s + 1] != 2 * widths[s] + self.coord_dim:
                raise ShapeError(f"stage {s + 1}: width recurrence broken")
        pts = self.point_counts()
        if self.groups_stage1 % (1 << (self.stages - 1)):
            raise ShapeError(f"groups_stage1={self.groups_stage1} cannot halve {self.stages - 1} times")
        for s in range(self.stages):
            if pts[s + 1] < 1 or pts[s + 1] > pts[s]:
                raise ShapeError(f"stage {s + 1}: {pts[s + 1]} groups from {pts[s]} points")
            if self.K > pts[s]:
                raise ShapeError(f"stage {s + 1}: K={self.K} exceeds {pts[s]} points")
            if s and pts[s + 1] * 2 != pts[s]:
                raise ShapeError(f"stage {s + 1}: group count does not halve")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    width: int
    height: int
    points: int
    classes: int
    groups_stage1: int
    window_ms: float | None
    task: str = "classification"

    def network(self, **overrides) -> NetworkConfig:
        cfg = NetworkConfig(points=self.points, groups_stage1=self.groups_stage1,
                            classes=self.classes, task=self.task)
        return replace(cfg, **overrides) if overrides else cfg

    def window(self) -> WindowSpec | None:
        if self.window_ms is None:
            return None
        return WindowSpec(self.window_ms, self.window_ms, self.points)


DATASETS = {d.name: d for d in [
    DatasetConfig("nmnist", 34, 34, 4096, 10, 512, 300),
    DatasetConfig("ncaltech101", 240, 180, 8192, 101, 2048, 30),
    DatasetConfig("cifar10dvs", 128, 128, 10240, 10, 2048, 100),
    DatasetConfig("ncars", 128, 128, 8192, 2, 512, 100),
    DatasetConfig("asldvs", 240, 180, 4096, 24, 1024, 100),
    DatasetConfig("dvsgesture", 128, 128, 1024, 11, 512, 500),
    DatasetConfig("dailydvs", 346, 260, 8192, 12, 1024, 1500),
    DatasetConfig("ucf101dvs", 240, 180, 8192, 101, 1024, 1000),
    DatasetConfig("dhp19", 346, 240, 4096, 13, 512, None, task="pose"),
]}


# --------------------------------------------------------------------------
# parameters

def _linear(rng, fan_in, fan_out):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)


def init_params(cfg: NetworkConfig, seed: int = 0) -> dict[str, Tensor]:
    cfg.validate()
    rng = np.random.default_rng(seed)
    widths = cfg.widths()
    groups = cfg.groups()
    p = {}
    p["embed.weight"], p["embed.bias"] = _linear(rng, cfg.coord_dim, cfg.embed_dim)
    for s in range(cfg.stages):
        C, G = widths[s + 1], groups[s]
        pre = f"stage{s + 1}."
        p[pre + "sfa.filter"] = spectral.init_filter((spectral.n_bins(C),), rng)
        p[pre + "agg.weight"], p[pre + "agg.bias"] = _linear(rng, C, 1)
        if not cfg.no_temporal_fa:
            p[pre + "tfa.filter"] = spectral.init_filter((spectral.n_bins(G), C), rng)
        H = cfg.res_hidden(C)
        p[pre + "res.weight1"], p[pre + "res.bias1"] = _linear(rng, C, H)
        p[pre + "res.weight2"], p[pre + "res.bias2"] = _linear(rng, H, C)
    p["head.weight1"], p["head.bias1"] = _linear(rng, 2 * widths[-1], cfg.head_hidden)
    p["head.weight2"], p["head.bias2"] = _linear(rng, cfg.head_hidden, cfg.out_dim)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


def param_kind(name: str) -> str:
    """'weight', 'filter' or 'bias' (drives weight decay)."""
    if name.endswith("filter"):
        return "filter"
    if "bias" in name.rsplit(".", 1)[-1]:
        return "bias"
    return "weight"


def count_params(params: dict) -> int:
    return int(sum(v.data.size for v in params.values()))


def check_params(cfg: NetworkConfig, params: dict[str, Tensor]) -> None:
    expected = {k: v.shape for k, v in init_params(cfg, 0).items()}
    got = {k: tuple(np.shape(v.data if isinstance(v, Tensor) else v)) for k, v in params.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        wrong = sorted(k for k in set(expected) & set(got) if expected[k] != got[k])
        raise ShapeError(f"parameters do not match config: missing={missing} extra={extra} wrong_shape={wrong}")


# --------------------------------------------------------------------------
# blocks

def embed(coords, weight: Tensor, bias: Tensor, act: str = "gelu") -> Tensor:
    """Pointwise (kernel size 1) linear lift of each event's coordinates."""
    return ad.activation(act)(ad.as_tensor(coords) @ weight + bias)


def aggregate(group_features: Tensor, weight: Tensor, bias: Tensor, return_weights: bool = False):
    """Softmax attention over the K neighbours of each group: (..., K, C) -> (..., C)."""
    scores = group_features @ weight + bias
    A = ad.softmax(scores, axis=-2)
    out = ad.sum(group_features * A, axis=-2)
    if return_weights:
        return out, A.data[..., 0]
    return out


def residual_block(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor, act: str = "gelu") -> Tensor:
    return x + ad.activation(act)(x @ w1 + b1) @ w2 + b2


@dataclass
class ModelOutput:
    logits: np.ndarray | None = None
    joints: np.ndarray | None = None


def _as_batch(clouds, cfg: NetworkConfig) -> np.ndarray:
    if isinstance(clouds, EventCloud):
        clouds = [clouds]
    if isinstance(clouds, (list, tuple)):
        clouds = np.stack([c.coords if isinstance(c, EventCloud) else np.asarray(c) for c in clouds])
    x = np.asarray(clouds, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != 4:
        raise ShapeError(f"expected clouds of shape (B, T, 4), got {x.shape}")
    if x.shape[1] != cfg.points:
        raise ShapeError(f"stage 1: cloud has {x.shape[1]} points, config expects {cfg.points}")
    if cfg.no_polarity:
        x = x[..., :3]
    return x


def grouping(coords: np.ndarray, F: Tensor, cfg: NetworkConfig, s: int):
    """Centroid and neighbour indices for one stage (constants for autodiff)."""
    G = cfg.groups()[s]
    n = coords.shape[1]
    if G > n or cfg.K > n:
        raise ShapeError(f"stage {s + 1}: need {G} groups of K={cfg.K} but only {n} points")
    if cfg.point_based_gs:
        xyt = coords[..., :3]
        idx = np.sort(geometry.d_fps(xyt, np.ones(3), G), axis=1)
        centers = np.take_along_axis(xyt, idx[..., None], axis=1)
        knn = geometry.ef_knn(centers, xyt, cfg.K)
    else:
        # FPS picks in distance order; sorting restores chronological order for the temporal filter
        idx = np.sort(geometry.d_fps(coords, cfg.stage_alpha(s), G), axis=1)
        centroid_feats = np.take_along_axis(F.data, idx[..., None], axis=1)
        knn = geometry.ef_knn(centroid_feats, F.data, cfg.K)
    return idx, knn


def stage_forward(params: dict, coords: np.ndarray, F: Tensor, cfg: NetworkConfig, s: int):
    pre = f"stage{s + 1}."
    idx, knn = grouping(coords, F, cfg, s)
    F_C = ad.gather(F, idx)
    group_coords = geometry.group_points(coords, knn)
    new_coords = geometry.evolve_coords(group_coords)
    F_G = ad.gather(F, knn)
    X = geometry.build_group_features(group_coords, F_G, F_C)
    S = spectral.spatial_fa(X, params[pre + "sfa.filter"], cfg.activation, cfg.dft_method)
    A = aggregate(S, params[pre + "agg.weight"], params[pre + "agg.bias"])
    if not cfg.no_temporal_fa:
        A = spectral.temporal_fa(A, params[pre + "tfa.filter"], cfg.activation, cfg.dft_method)
    R = residual_block(A, params[pre + "res.weight1"], params[pre + "res.bias1"],
                       params[pre + "res.weight2"], params[pre + "res.bias2"], cfg.activation)
    return new_coords, R


def forward(params: dict, clouds, cfg: NetworkConfig, *, dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Logits (B, classes) or flattened joints (B, 2 * joints).

    Dropout in the head is active only when ``dropout_rng`` is given.
    """
    coords = _as_batch(clouds, cfg)
    F = embed(coords, params["embed.weight"], params["embed.bias"], cfg.activation)
    for s in range(cfg.stages):
        coords, F = stage_forward(params, coords, F, cfg, s)
    pooled = ad.concat([ad.mean(F, axis=1), ad.max(F, axis=1)], axis=-1)
    h = ad.activation(cfg.activation)(pooled @ params["head.weight1"] + params["head.bias1"])
    if cfg.dropout > 0 and dropout_rng is not None:
        keep = (dropout_rng.random(h.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
        h = h * keep
    return h @ params["head.weight2"] + params["head.bias2"]


def predict(params: dict, clouds, cfg: NetworkConfig) -> ModelOutput:
    out = forward(params, clouds, cfg).data
    if cfg.task == "classification":
        return ModelOutput(logits=out)
    return ModelOutput(joints=out.reshape(-1, cfg.joints, 2))


# --------------------------------------------------------------------------
# complexity accounting

@dataclass
class MacsReport:
    variant: str
    layers: list  # (name, macs) pairs

    @property
    def total(self) -> int:
        return int(sum(m for _, m in self.layers))

    @property
    def gmacs(self) -> float:
        return self.total / 1e9


def count_macs(cfg: NetworkConfig, variant: str = "frequency") -> MacsReport:
    """Per-layer multiply-accumulate counts for one sample.

    Conventions: linear layers count fan_in * fan_out per point; the
    attention scorer and weighted sum count C per neighbour each; a spectral
    block counts C*log2(C) per filtered vector (spatial: groups*K vectors of
    length C; temporal: C vectors of length groups). ``conv_baseline``
    replaces every spectral block with a C x C pointwise convolution.
    Grouping, standardization, softmax and pooling are not counted.
    """
    if variant not in ("frequency", "conv_baseline"):
        raise ValueError(f"variant must be 'frequency' or 'conv_baseline', got {variant!r}")
    cfg.validate()
    widths, groups = cfg.widths(), cfg.groups()
    layers = [("embed", cfg.points * cfg.coord_dim * cfg.embed_dim)]
    for s in range(cfg.stages):
        C, G, K = widths[s + 1], groups[s], cfg.K
        pre = f"stage{s + 1}."
        if variant == "frequency":
            layers.append((pre + "sfa", round(G * K * C * math.log2(C))))
        else:
            layers.append((pre + "sfa", G * K * C * C))
        layers.append((pre + "agg", 2 * G * K * C))
        if not cfg.no_temporal_fa:
            if variant == "frequency":
                layers.append((pre + "tfa", round(C * G * math.log2(G)) if G > 1 else 0))
            else:
                layers.append((pre + "tfa", G * C * C))
        layers.append((pre + "res", 2 * G * C * cfg.res_hidden(C)))
    layers.append(("head", 2 * widths[-1] * cfg.head_hidden + cfg.head_hidden * cfg.out_dim))
    return MacsReport(variant, layers)
