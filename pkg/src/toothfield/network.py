"""Forward pass of the multi-scale point network, in plain numpy.

Three chained feature-aggregation scales (self-similarity adjacency + top-k
non-local branch, ball-query local branch, shared-linear embedding, pointwise
MLP with neighborhood max pool) are each interpolated back to the full cloud;
cross attention chains coarser scales onto finer ones; the concatenated
N x 192 latent feeds two coordinate/normal-skip head stacks that emit the
distance fields (squashed to [0, 1]) and the projection vector fields.

The pass is forward-only and bit-deterministic for a fixed (cloud, weights,
seed). Weights load from an .npz container with named tensors or are drawn
from a seeded RNG; normalization layers use stored running statistics or
per-cloud instance statistics depending on the weights' declared mode.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidCount, ParseError, ShapeMismatch
from .geometry import PointCloud, ball_query, farthest_point_sampling

NORM_EPS = 1e-5
NORM_MODE_INSTANCE = "instance"
NORM_MODE_RUNNING = "running"


@dataclass
class FeatureMap:
    """Feature rows bound to a subset of a parent cloud via ``indices``."""

    features: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if f.ndim != 2 or f.shape[1] < 1:
            raise ShapeMismatch(f"features must be (M, C) with C > 0, got {f.shape}")
        if len(idx) != len(f):
            raise ShapeMismatch("indices length must equal feature row count")
        if f.size and not np.isfinite(f).all():
            raise ShapeMismatch("features must be finite")
        self.features = f
        self.indices = idx

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def channels(self) -> int:
        return self.features.shape[1]


@dataclass
class AggregationConfig:
    sample_count: int
    radius: float
    neighbor_count: int
    embed_channels: int = 64
    mlp_widths: Tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.sample_count < 1:
            raise InvalidCount("sample_count must be >= 1")
        if self.radius <= 0:
            raise InvalidCount("radius must be positive")
        if self.neighbor_count < 1:
            raise InvalidCount("neighbor_count must be >= 1")
        self.mlp_widths = tuple(int(w) for w in self.mlp_widths)

    @property
    def out_channels(self) -> int:
        return self.mlp_widths[-1]


@dataclass
class NetworkConfig:
    scales: Tuple[AggregationConfig, ...] = (
        AggregationConfig(512, 0.1, 32),
        AggregationConfig(128, 0.2, 32),
        AggregationConfig(32, 0.4, 32),
    )
    attention_channels: int = 64
    head_widths: Tuple[int, ...] = (192, 64, 32)
    input_channels: int = 6
    cross_pairing: str = "coarse_to_fine"

    @property
    def latent_channels(self) -> int:
        return sum(s.out_channels for s in self.scales)

    def to_dict(self) -> dict:
        return {
            "scales": [
                {
                    "sample_count": s.sample_count,
                    "radius": s.radius,
                    "neighbor_count": s.neighbor_count,
                    "embed_channels": s.embed_channels,
                    "mlp_widths": list(s.mlp_widths),
                }
                for s in self.scales
            ],
            "attention_channels": self.attention_channels,
            "head_widths": list(self.head_widths),
            "input_channels": self.input_channels,
            "cross_pairing": self.cross_pairing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        scales = tuple(
            AggregationConfig(
                sample_count=int(s["sample_count"]),
                radius=float(s["radius"]),
                neighbor_count=int(s["neighbor_count"]),
                embed_channels=int(s.get("embed_channels", 64)),
                mlp_widths=tuple(s.get("mlp_widths", (64, 64))),
            )
            for s in d.get("scales", [])
        ) or cls().scales
        return cls(
            scales=scales,
            attention_channels=int(d.get("attention_channels", 64)),
            head_widths=tuple(d.get("head_widths", (192, 64, 32))),
            input_channels=int(d.get("input_channels", 6)),
            cross_pairing=str(d.get("cross_pairing", "coarse_to_fine")),
        )

    def checksum(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("ascii")
        return hashlib.sha256(blob).hexdigest()


def load_network_config(path) -> NetworkConfig:
    try:
        with open(path, "r", encoding="ascii") as fh:
            return NetworkConfig.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ParseError(f"cannot read network config {path}: {exc}") from exc


def save_network_config(config: NetworkConfig, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class Prediction:
    """Distance fields (N, 1, 4) and projection vectors (N, 3, 4)."""

    distance_fields: np.ndarray
    projection_vectors: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distance_fields, dtype=np.float64)
        v = np.asarray(self.projection_vectors, dtype=np.float64)
        if d.ndim != 3 or d.shape[1] != 1 or d.shape[2] != 4:
            raise ShapeMismatch(f"distance fields must be (N, 1, 4), got {d.shape}")
        if v.shape != (d.shape[0], 3, 4):
            raise ShapeMismatch(f"projection vectors must be (N, 3, 4), got {v.shape}")
        if not (np.isfinite(d).all() and np.isfinite(v).all()):
            raise ShapeMismatch("prediction entries must be finite")
        self.distance_fields = d
        self.projection_vectors = v


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

def _lbr_specs(prefix: str, c_in: int, widths: Sequence[int]) -> List[Tuple[str, Tuple[int, ...]]]:
    specs = []
    prev = c_in
    for j, w in enumerate(widths):
        specs.extend([
            (f"{prefix}.lbr{j}.w", (prev, w)),
            (f"{prefix}.lbr{j}.b", (w,)),
            (f"{prefix}.lbr{j}.gamma", (w,)),
            (f"{prefix}.lbr{j}.beta", (w,)),
            (f"{prefix}.lbr{j}.running_mean", (w,)),
            (f"{prefix}.lbr{j}.running_var", (w,)),
        ])
        prev = w
    return specs


def tensor_specs(config: NetworkConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Ordered (name, shape) list for every learnable tensor in the network."""
    specs: List[Tuple[str, Tuple[int, ...]]] = []
    c_in = config.input_channels
    for i, sc in enumerate(config.scales):
        specs.extend([
            (f"scale{i}.embed.w", (c_in, sc.embed_channels)),
            (f"scale{i}.embed.b", (sc.embed_channels,)),
        ])
        specs.extend(_lbr_specs(f"scale{i}", 3 * sc.embed_channels, sc.mlp_widths))
        c_in = sc.out_channels
    att = config.attention_channels
    for i in range(1, len(config.scales)):
        q_in = config.scales[i].out_channels
        kv_in = config.scales[i - 1].out_channels
        specs.extend([
            (f"cross{i}.q.w", (q_in, att)),
            (f"cross{i}.q.b", (att,)),
            (f"cross{i}.k.w", (kv_in, att)),
            (f"cross{i}.k.b", (att,)),
            (f"cross{i}.v.w", (kv_in, att)),
            (f"cross{i}.v.b", (att,)),
        ])
    latent = config.scales[0].out_channels + att * (len(config.scales) - 1)
    head_in = latent + config.input_channels
    for head, out_ch in (("head_landmark", 4), ("head_axis", 12)):
        specs.extend(_lbr_specs(head, head_in, config.head_widths))
        specs.extend([
            (f"{head}.out.w", (config.head_widths[-1], out_ch)),
            (f"{head}.out.b", (out_ch,)),
        ])
    return specs


@dataclass
class NetworkWeights:
    tensors: Dict[str, np.ndarray]
    norm_mode: str = NORM_MODE_INSTANCE
    config_checksum: str = ""

    def __post_init__(self):
        if self.norm_mode not in (NORM_MODE_INSTANCE, NORM_MODE_RUNNING):
            raise ShapeMismatch(f"unknown normalization mode {self.norm_mode!r}")
        for name, t in self.tensors.items():
            if not np.isfinite(t).all():
                raise ShapeMismatch(f"tensor {name!r} has non-finite entries")

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise ShapeMismatch(f"weights are missing tensor {name!r}") from None

    @classmethod
    def random(cls, config: NetworkConfig, seed: int) -> "NetworkWeights":
        """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, instance norm."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in tensor_specs(config):
            leaf = name.rsplit(".", 1)[1]
            if leaf == "w":
                bound = 1.0 / np.sqrt(shape[0])
                tensors[name] = rng.uniform(-bound, bound, size=shape)
            elif leaf == "b":
                fan_in = tensors[name[:-2] + ".w"].shape[0]
                bound = 1.0 / np.sqrt(fan_in)
                tensors[name] = rng.uniform(-bound, bound, size=shape)
            elif leaf in ("gamma", "running_var"):
                tensors[name] = np.ones(shape)
            else:  # beta, running_mean
                tensors[name] = np.zeros(shape)
        return cls(tensors, NORM_MODE_INSTANCE, config.checksum())

    @classmethod
    def zeros(cls, config: NetworkConfig) -> "NetworkWeights":
        tensors = {name: np.zeros(shape) for name, shape in tensor_specs(config)}
        return cls(tensors, NORM_MODE_INSTANCE, config.checksum())

    def save(self, path) -> None:
        meta = json.dumps({
            "norm_mode": self.norm_mode,
            "config_checksum": self.config_checksum,
        }, sort_keys=True)
        np.savez(path, __meta__=np.asarray(meta), **self.tensors)

    @classmethod
    def load(cls, path, config: NetworkConfig) -> "NetworkWeights":
        """Load and validate against ``config``; any shape or checksum mismatch
        is rejected with the offending tensor named."""
        try:
            npz = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise ParseError(f"cannot read weights file {path}: {exc}") from exc
        if "__meta__" not in npz:
            raise ParseError(f"weights file {path} lacks the __meta__ header")
        meta = json.loads(str(npz["__meta__"][()]))
        checksum = meta.get("config_checksum", "")
        if checksum and checksum != config.checksum():
            raise ShapeMismatch(
                "weights were produced for a different architecture config "
                f"(checksum {checksum[:12]}... != {config.checksum()[:12]}...)")
        tensors = {}
        for name, shape in tensor_specs(config):
            if name not in npz:
                raise ShapeMismatch(f"weights file is missing tensor {name!r}")
            t = np.asarray(npz[name], dtype=np.float64)
            if t.shape != shape:
                raise ShapeMismatch(
                    f"tensor {name!r} has shape {t.shape}, expected {shape}")
            tensors[name] = t
        return cls(tensors, meta.get("norm_mode", NORM_MODE_RUNNING), checksum)


# ---------------------------------------------------------------------------
# Layer primitives
# ---------------------------------------------------------------------------

def _linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"linear layer expects {w.shape[0]} channels, got {x.shape[1]}")
    return x @ w + b


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _norm(x: np.ndarray, weights: NetworkWeights, prefix: str) -> np.ndarray:
    gamma = weights[f"{prefix}.gamma"]
    beta = weights[f"{prefix}.beta"]
    if weights.norm_mode == NORM_MODE_RUNNING:
        mean = weights[f"{prefix}.running_mean"]
        var = weights[f"{prefix}.running_var"]
    else:
        mean = x.mean(axis=0)
        var = x.var(axis=0)
    return gamma * (x - mean) / np.sqrt(var + NORM_EPS) + beta


def _lbr_stack(x: np.ndarray, weights: NetworkWeights, prefix: str, n_layers: int) -> np.ndarray:
    for j in range(n_layers):
        x = _linear(x, weights[f"{prefix}.lbr{j}.w"], weights[f"{prefix}.lbr{j}.b"])
        x = _norm(x, weights, f"{prefix}.lbr{j}")
        x = np.maximum(x, 0.0)
    return x


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Network operations
# ---------------------------------------------------------------------------

def self_similarity_adjacency(feature_map: FeatureMap, weights: NetworkWeights,
                              prefix: str = "scale0") -> np.ndarray:
    """Row-stochastic similarity of embedded features: softmax(E @ E.T)."""
    e = _linear(feature_map.features, weights[f"{prefix}.embed.w"],
                weights[f"{prefix}.embed.b"])
    return _softmax_rows(e @ e.T)


def feature_aggregation(cloud: PointCloud, f_in: FeatureMap, cfg: AggregationConfig,
                        weights: NetworkWeights, seed: int, prefix: str = "scale0",
                        fps_start: Optional[int] = None):
    """One aggregation scale; returns (sampled row indices, output FeatureMap).

    The sample count is clamped to the available point count so coarse scales
    still compose when the input cloud is small.
    """
    sub_pts = cloud.points[f_in.indices]
    sub_cloud = PointCloud(sub_pts, cloud.normals[f_in.indices], frame=cloud.frame)
    m_in = f_in.n

    e = _linear(f_in.features, weights[f"{prefix}.embed.w"], weights[f"{prefix}.embed.b"])
    adj = _softmax_rows(e @ e.T)
    f_s = adj @ e

    m = min(cfg.sample_count, m_in)
    rows = farthest_point_sampling(sub_cloud, m, seed, start_index=fps_start)

    # non-local branch: top-k columns of the diagonal-zeroed adjacency rows
    adj_nd = adj.copy()
    np.fill_diagonal(adj_nd, 0.0)
    k = min(cfg.neighbor_count, m_in)
    top = np.argsort(-adj_nd[rows], axis=1, kind="stable")[:, :k]
    f_adj = f_s[top].max(axis=1)

    # local branch: ball-query neighborhoods on the scale's input set
    neighbors = ball_query(sub_cloud, rows, cfg.radius, k)
    f_bq = f_s[neighbors].max(axis=1)

    f_ps = f_s[rows]
    f_cat = np.concatenate([f_ps, f_adj - f_ps, f_bq - f_ps], axis=1)
    h = _lbr_stack(f_cat, weights, prefix, len(cfg.mlp_widths))

    # final max pool over each sampled point's neighbor set within the sample
    pool_cloud = PointCloud(sub_pts[rows], sub_cloud.normals[rows], frame=cloud.frame)
    pool_idx = ball_query(pool_cloud, np.arange(m), cfg.radius, min(cfg.neighbor_count, m))
    f_out = h[pool_idx].max(axis=1)

    return rows, FeatureMap(f_out, f_in.indices[rows])


def cross_attention(x: FeatureMap, y: FeatureMap, weights: NetworkWeights,
                    prefix: str = "cross1", return_attention: bool = False):
    """Scaled dot-product attention of x onto y; output row count equals |x|."""
    q = _linear(x.features, weights[f"{prefix}.q.w"], weights[f"{prefix}.q.b"])
    k = _linear(y.features, weights[f"{prefix}.k.w"], weights[f"{prefix}.k.b"])
    v = _linear(y.features, weights[f"{prefix}.v.w"], weights[f"{prefix}.v.b"])
    d_k = k.shape[1]
    att = _softmax_rows(q @ k.T / np.sqrt(d_k))
    out = FeatureMap(att @ v, x.indices)
    if return_attention:
        return out, att
    return out


def interpolate_features(coarse_cloud_indices: np.ndarray, fine_cloud: PointCloud,
                         f_coarse: FeatureMap) -> FeatureMap:
    """Inverse-distance-weighted 3-NN upsampling from a coarse subset."""
    coarse_idx = np.asarray(coarse_cloud_indices, dtype=np.int64).reshape(-1)
    if len(coarse_idx) != f_coarse.n:
        raise InvalidCount("coarse index count must match coarse feature rows")
    coarse_pts = fine_cloud.points[coarse_idx]
    d = np.linalg.norm(fine_cloud.points[:, None, :] - coarse_pts[None, :, :], axis=2)
    take = min(3, len(coarse_idx))
    nn = np.argsort(d, axis=1, kind="stable")[:, :take]
    nd = np.take_along_axis(d, nn, axis=1)
    w = 1.0 / (nd + 1e-8)
    w /= w.sum(axis=1, keepdims=True)
    feats = (f_coarse.features[nn] * w[:, :, None]).sum(axis=1)
    return FeatureMap(feats, np.arange(fine_cloud.n_points, dtype=np.int64))


def multi_scale_extract(cloud: PointCloud, weights: NetworkWeights,
                        config: NetworkConfig, seed: int = 0) -> FeatureMap:
    """Latent features (N x 192 with the default config) for the whole cloud."""
    n = cloud.n_points
    base = np.concatenate([cloud.points, cloud.normals], axis=1)
    if base.shape[1] != config.input_channels:
        raise ShapeMismatch(
            f"input has {base.shape[1]} channels, config expects {config.input_channels}")
    current = FeatureMap(base, np.arange(n, dtype=np.int64))
    upsampled: List[FeatureMap] = []
    for i, sc in enumerate(config.scales):
        child_seed = seed * 1000003 + i
        _, agg = feature_aggregation(cloud, current, sc, weights, child_seed,
                                     prefix=f"scale{i}")
        upsampled.append(interpolate_features(agg.indices, cloud, agg))
        current = agg
    blocks = [upsampled[0]]
    for i in range(1, len(config.scales)):
        blocks.append(cross_attention(upsampled[i], upsampled[i - 1], weights,
                                      prefix=f"cross{i}"))
    latent = np.concatenate([b.features for b in blocks], axis=1)
    return FeatureMap(latent, np.arange(n, dtype=np.int64))


def feature_enhance(latent: FeatureMap, cloud: PointCloud,
                    weights: NetworkWeights,
                    head_widths: Tuple[int, ...] = (192, 64, 32)) -> Prediction:
    """Skip-concatenate coordinates+normals and run both prediction heads."""
    if latent.n != cloud.n_points:
        raise ShapeMismatch("latent row count must equal cloud point count")
    x = np.concatenate([latent.features, cloud.points, cloud.normals], axis=1)
    n_layers = len(head_widths)

    h = _lbr_stack(x, weights, "head_landmark", n_layers)
    dist = _sigmoid(_linear(h, weights["head_landmark.out.w"], weights["head_landmark.out.b"]))

    h = _lbr_stack(x, weights, "head_axis", n_layers)
    vec = _linear(h, weights["head_axis.out.w"], weights["head_axis.out.b"])

    n = cloud.n_points
    return Prediction(dist[:, None, :], vec.reshape(n, 4, 3).transpose(0, 2, 1))


def predict(cloud: PointCloud, weights: NetworkWeights, config: NetworkConfig,
            seed: int = 0) -> Prediction:
    latent = multi_scale_extract(cloud, weights, config, seed)
    return feature_enhance(latent, cloud, weights, head_widths=config.head_widths)


# ---------------------------------------------------------------------------
# Losses (and their closed-form gradients w.r.t. the predictions)
# ---------------------------------------------------------------------------

def _as_2d(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3 and a.shape[1] == 1:
        return a[:, 0, :]
    return a


def loss_landmark(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean squared difference over all point/kind entries."""
    p = _as_2d(pred)
    g = _as_2d(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"shape mismatch {p.shape} vs {g.shape}")
    return float(np.mean((p - g) ** 2))


def loss_landmark_grad(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    p = _as_2d(pred)
    g = _as_2d(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"shape mismatch {p.shape} vs {g.shape}")
    return 2.0 * (p - g) / p.size


def loss_axis(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean Euclidean norm of per-point vector differences, over points and kinds."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 3 or p.shape[1] != 3:
        raise ShapeMismatch(f"expected matching (N, 3, K) arrays, got {p.shape} vs {g.shape}")
    norms = np.linalg.norm(p - g, axis=1)
    return float(np.mean(norms))


def loss_axis_grad(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 3 or p.shape[1] != 3:
        raise ShapeMismatch(f"expected matching (N, 3, K) arrays, got {p.shape} vs {g.shape}")
    diff = p - g
    norms = np.linalg.norm(diff, axis=1, keepdims=True)
    count = p.shape[0] * p.shape[2]
    return diff / np.maximum(norms, 1e-300) / count
