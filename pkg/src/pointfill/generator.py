"""Point generators: the neighborhood-attention upsampler, the seed
generator built on it, the refinement stage wrapper, and the four
alternative generator cores used for ablation runs.

The central operation turns each point into ``rate`` new feature rows. For
point ``i`` with neighborhood ``N(i)`` (k nearest neighbors), kernel ``m``
produces channel-wise attention logits

    a_hat[i, j, m] = kernel_m(query_map(q_i) - key_map(k_j) + delta_ij)

where ``delta_ij = pos_encoder(p_i - p_j) + seed_encoder(s_i - s_j)`` mixes
a positional term with a regional term from interpolated seed features
(positional only when no seeds are supplied). The logits are normalized
over the neighborhood by the configured attention mode and combined with
the per-point values:

    h[i, m] = sum_j a[i, j, m] * (value_map(v_j) + delta_ij)

Output rows are stacked kernel-fastest: row ``i * rate + m`` belongs to
source point ``i`` and kernel ``m``, matching plain row duplication of the
source cloud.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry
from .errors import ContractError, ShapeError
from .layers import Linear, Mlp2, Module

ATTENTION_VARIANTS = ("softmax", "none", "scaled", "log")
GENERATOR_VARIANTS = ("uptrans", "folding", "deconv", "graphconv", "pointwise")


@dataclass
class AttentionMode:
    """How raw attention logits are normalized over a neighborhood.

    ``softmax`` is the standard choice, ``none`` passes the logits through
    unchanged (weights may leave (0, 1), useful when generating points
    outside the seen region), ``scaled`` applies softmax to ``lam * logits``
    and ``log`` uses log-softmax (weights are nonpositive by construction).
    """

    variant: str = "softmax"
    lam: float = 1.0

    def __post_init__(self):
        if self.variant not in ATTENTION_VARIANTS:
            raise ContractError(
                f"attention variant must be one of {ATTENTION_VARIANTS}, got {self.variant!r}"
            )
        if self.variant == "scaled" and not self.lam > 0:
            raise ContractError("scaled attention needs lam > 0")

    def normalize(self, logits):
        """Normalize over the last axis of ``logits``."""
        if self.variant == "softmax":
            return ad.softmax_last(logits)
        if self.variant == "none":
            return logits
        if self.variant == "scaled":
            return ad.softmax_last(ad.mul(logits, float(self.lam)))
        return ad.log_softmax_last(logits)


@dataclass
class SeedSet:
    """Paired seed coordinates and per-seed feature rows."""

    coords: ad.Tensor  # (n_seeds, 3)
    features: ad.Tensor  # (n_seeds, channels)

    def __post_init__(self):
        if self.coords.shape[0] != self.features.shape[0]:
            raise ContractError("seed coords and features disagree on row count")


@dataclass
class StageState:
    """One decoder stage: its cloud, the features that act as the next
    layer's keys, the rate that produced it, and the seed features
    interpolated at its points."""

    cloud: ad.Tensor  # (n, 3)
    features: ad.Tensor  # (n, channels)
    rate: int = 1
    interpolated_seed_features: ad.Tensor | None = None

    def __post_init__(self):
        if self.rate < 1:
            raise ContractError("stage rate must be >= 1")
        if self.features.shape[0] != self.cloud.shape[0]:
            raise ContractError("stage features and cloud disagree on row count")


def _neighbor_rows(cloud_np, k):
    """Flattened self-kNN indices; row i*k+j is the j-th neighbor of i."""
    n = cloud_np.shape[0]
    if k > n:
        raise ContractError(f"attention neighborhood k={k} exceeds {n} points")
    return geometry.knn(cloud_np, cloud_np, k).indices.reshape(-1)


class UpsampleTransformer(Module):
    """Channel-wise neighborhood attention producing ``rate`` rows per point.

    Args:
        rng: numpy Generator used for weight init.
        channels: feature width shared by queries, keys and outputs.
        rate: number of kernels, i.e. generated rows per input point.
        k: neighborhood size for the attention.
        seed_channels: width of interpolated seed features, or None to run
            without the regional encoding term.
        interp_k: neighborhood size for seed feature interpolation.
    """

    def __init__(self, rng, channels, rate, k=16, seed_channels=None, interp_k=3,
                 dtype=np.float32):
        if rate < 1:
            raise ContractError("rate must be >= 1")
        self.channels = channels
        self.rate = rate
        self.k = k
        self.interp_k = interp_k
        self.value_mixer = Mlp2(rng, 2 * channels, channels, channels, dtype=dtype)
        self.query_map = Linear(rng, channels, channels, dtype=dtype)
        self.key_map = Linear(rng, channels, channels, dtype=dtype)
        self.value_map = Linear(rng, channels, channels, dtype=dtype)
        self.pos_encoder = Mlp2(rng, 3, channels, channels, dtype=dtype)
        self.seed_encoder = (
            Mlp2(rng, seed_channels, channels, channels, dtype=dtype)
            if seed_channels
            else None
        )
        self.kernels = [
            Mlp2(rng, channels, channels, channels, dtype=dtype, last_bias=False)
            for _ in range(rate)
        ]

    def __call__(self, queries, keys, cloud, seeds=None, mode=None, capture=None):
        """Run the attention upsampling.

        Args:
            queries: (n, channels) point-wise query features.
            keys: (n, channels) point-wise key features.
            cloud: (n, 3) Tensor of point coordinates.
            seeds: optional SeedSet for the regional encoding term.
            mode: AttentionMode; defaults to softmax.
            capture: optional dict that receives the raw and normalized
                per-kernel weights (for inspection in tests and demos).

        Returns:
            Tensor of shape (rate * n, channels).
        """
        n = cloud.shape[0]
        if queries.shape[0] != n or keys.shape[0] != n:
            raise ShapeError("queries, keys and cloud must agree on row count")
        mode = mode or AttentionMode("softmax")
        k = self.k
        nbrs = _neighbor_rows(cloud.data, k)

        values = self.value_map(self.value_mixer(ad.concat([keys, queries], axis=1)))
        q = self.query_map(queries)
        key_feats = self.key_map(keys)

        rel_pos = ad.sub(ad.repeat_rows(cloud, k), ad.gather_rows(cloud, nbrs))
        delta = self.pos_encoder(rel_pos)
        if seeds is not None:
            if self.seed_encoder is None:
                raise ContractError("this transformer was built without seed encoding")
            s = geometry.interpolate_seed_features(cloud.data, seeds, self.interp_k)
            rel_seed = ad.sub(ad.repeat_rows(s, k), ad.gather_rows(s, nbrs))
            delta = ad.add(delta, self.seed_encoder(rel_seed))

        logits_in = ad.add(
            ad.sub(ad.repeat_rows(q, k), ad.gather_rows(key_feats, nbrs)), delta
        )
        value_term = ad.reshape(
            ad.add(ad.gather_rows(values, nbrs), delta), (n, k, self.channels)
        )

        if capture is not None:
            capture["raw"], capture["weights"] = [], []
        heads = []
        for kernel in self.kernels:
            raw = ad.reshape(kernel(logits_in), (n, k, self.channels))
            if mode.variant == "none":
                weights = raw
            else:
                # normalize over the neighborhood axis, per point and channel
                weights = ad.permute(
                    mode.normalize(ad.permute(raw, (0, 2, 1))), (0, 2, 1)
                )
            if capture is not None:
                capture["raw"].append(raw)
                capture["weights"].append(weights)
            h = ad.reduce_sum(ad.mul(weights, value_term), axis=1)
            heads.append(ad.reshape(h, (n, 1, self.channels)))
        stacked = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
        return ad.reshape(stacked, (n * self.rate, self.channels))


class FoldingCore(Module):
    """Per-replica generation from a fixed 2-d grid coordinate.

    Each replica appends its grid vertex to every point feature and runs a
    single shared map, so replicas differ only through the grid input.
    """

    def __init__(self, rng, channels, rate, dtype=np.float32, **_):
        self.channels = channels
        self.rate = rate
        self.grid = _folding_grid(rate).astype(dtype)
        self.shared_map = Mlp2(rng, channels + 2, channels, channels, dtype=dtype)

    def __call__(self, queries, keys=None, cloud=None, seeds=None, mode=None,
                 capture=None):
        n = queries.shape[0]
        heads = []
        for m in range(self.rate):
            g = ad.constant(np.tile(self.grid[m], (n, 1)), like=queries)
            h = self.shared_map(ad.concat([queries, g], axis=1))
            heads.append(ad.reshape(h, (n, 1, self.channels)))
        stacked = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
        return ad.reshape(stacked, (n * self.rate, self.channels))


def _folding_grid(rate):
    side = int(np.ceil(np.sqrt(rate)))
    axis = np.linspace(-1.0, 1.0, side) if side > 1 else np.zeros(1)
    uu, vv = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)[:rate]


class DeconvCore(Module):
    """Point-splitting: one learned linear map per replica."""

    def __init__(self, rng, channels, rate, dtype=np.float32, **_):
        self.channels = channels
        self.rate = rate
        self.splits = [Linear(rng, channels, channels, dtype=dtype) for _ in range(rate)]

    def __call__(self, queries, keys=None, cloud=None, seeds=None, mode=None,
                 capture=None):
        n = queries.shape[0]
        heads = [
            ad.reshape(split(queries), (n, 1, self.channels)) for split in self.splits
        ]
        stacked = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
        return ad.reshape(stacked, (n * self.rate, self.channels))


class GraphConvCore(Module):
    """Channel-wise max over mapped neighbor features, one map per replica."""

    def __init__(self, rng, channels, rate, k=16, dtype=np.float32, **_):
        self.channels = channels
        self.rate = rate
        self.k = k
        self.kernels = [
            Mlp2(rng, channels, channels, channels, dtype=dtype) for _ in range(rate)
        ]

    def __call__(self, queries, keys=None, cloud=None, seeds=None, mode=None,
                 capture=None):
        n = queries.shape[0]
        nbrs = _neighbor_rows(cloud.data, self.k)
        heads = []
        for kernel in self.kernels:
            mapped = ad.reshape(
                kernel(ad.gather_rows(queries, nbrs)), (n, self.k, self.channels)
            )
            h = ad.max_over_axis(mapped, axis=1)
            heads.append(ad.reshape(h, (n, 1, self.channels)))
        stacked = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
        return ad.reshape(stacked, (n * self.rate, self.channels))


class PointwiseAttentionCore(Module):
    """Attention with one scalar weight per neighbor instead of per channel.

    Shares the query/key/value/encoding structure of the channel-wise
    transformer; only the kernels end in a single output column.
    """

    def __init__(self, rng, channels, rate, k=16, seed_channels=None, interp_k=3,
                 dtype=np.float32):
        self.channels = channels
        self.rate = rate
        self.k = k
        self.interp_k = interp_k
        self.value_mixer = Mlp2(rng, 2 * channels, channels, channels, dtype=dtype)
        self.query_map = Linear(rng, channels, channels, dtype=dtype)
        self.key_map = Linear(rng, channels, channels, dtype=dtype)
        self.value_map = Linear(rng, channels, channels, dtype=dtype)
        self.pos_encoder = Mlp2(rng, 3, channels, channels, dtype=dtype)
        self.seed_encoder = (
            Mlp2(rng, seed_channels, channels, channels, dtype=dtype)
            if seed_channels
            else None
        )
        self.kernels = [
            Mlp2(rng, channels, channels, 1, dtype=dtype, last_bias=False)
            for _ in range(rate)
        ]

    def __call__(self, queries, keys, cloud, seeds=None, mode=None, capture=None):
        n = cloud.shape[0]
        mode = mode or AttentionMode("softmax")
        k = self.k
        nbrs = _neighbor_rows(cloud.data, k)

        values = self.value_map(self.value_mixer(ad.concat([keys, queries], axis=1)))
        q = self.query_map(queries)
        key_feats = self.key_map(keys)

        rel_pos = ad.sub(ad.repeat_rows(cloud, k), ad.gather_rows(cloud, nbrs))
        delta = self.pos_encoder(rel_pos)
        if seeds is not None:
            if self.seed_encoder is None:
                raise ContractError("this core was built without seed encoding")
            s = geometry.interpolate_seed_features(cloud.data, seeds, self.interp_k)
            rel_seed = ad.sub(ad.repeat_rows(s, k), ad.gather_rows(s, nbrs))
            delta = ad.add(delta, self.seed_encoder(rel_seed))

        logits_in = ad.add(
            ad.sub(ad.repeat_rows(q, k), ad.gather_rows(key_feats, nbrs)), delta
        )
        value_term = ad.add(ad.gather_rows(values, nbrs), delta)

        if capture is not None:
            capture["raw"], capture["weights"] = [], []
        heads = []
        for kernel in self.kernels:
            raw = ad.reshape(kernel(logits_in), (n, k))
            weights = mode.normalize(raw)
            if capture is not None:
                capture["raw"].append(raw)
                capture["weights"].append(weights)
            spread = ad.repeat_cols(ad.reshape(weights, (n * k, 1)), self.channels)
            h = ad.reduce_sum(
                ad.reshape(ad.mul(spread, value_term), (n, k, self.channels)), axis=1
            )
            heads.append(ad.reshape(h, (n, 1, self.channels)))
        stacked = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
        return ad.reshape(stacked, (n * self.rate, self.channels))


_CORES = {
    "uptrans": UpsampleTransformer,
    "folding": FoldingCore,
    "deconv": DeconvCore,
    "graphconv": GraphConvCore,
    "pointwise": PointwiseAttentionCore,
}


def make_core(variant, rng, channels, rate, k=16, seed_channels=None, interp_k=3,
              dtype=np.float32):
    if variant not in _CORES:
        raise ContractError(f"unknown generator variant {variant!r}")
    return _CORES[variant](
        rng, channels, rate, k=k, seed_channels=seed_channels, interp_k=interp_k,
        dtype=dtype,
    )


class SeedGenerator(Module):
    """Turns patch features into a coarse but complete set of seeds.

    Queries and keys are separate linear projections of the patch features;
    the generator core runs without seed encoding. Seed coordinates come
    from the generated seed features concatenated with the channel-wise
    max-pool of the patch features, through a shared two-layer map whose
    final layer starts at zero (like the stage offset heads), so training
    begins from a neutral seed cloud.
    """

    def __init__(self, rng, patch_channels, seed_channels, rate=2, k=16,
                 mode=None, variant="uptrans", dtype=np.float32):
        self.rate = rate
        self.mode = mode or AttentionMode("none")
        self.query_proj = Linear(rng, patch_channels, seed_channels, dtype=dtype)
        self.key_proj = Linear(rng, patch_channels, seed_channels, dtype=dtype)
        self.core = make_core(
            variant, rng, seed_channels, rate, k=k, seed_channels=None, dtype=dtype
        )
        self.coord_map = Mlp2(
            rng, seed_channels + patch_channels, seed_channels, 3, dtype=dtype,
            zero_last=True,
        )
        self.patch_channels = patch_channels

    def __call__(self, patches):
        """Args: patches: a PatchFeatures (centers + features).

        Returns a SeedSet with ``rate * n_patches`` rows.
        """
        centers = ad.constant(patches.centers, like=patches.features)
        q = self.query_proj(patches.features)
        keys = self.key_proj(patches.features)
        feats = self.core(q, keys, centers, seeds=None, mode=self.mode)
        pooled = ad.reshape(
            ad.max_over_axis(patches.features, axis=0), (1, self.patch_channels)
        )
        tiled = ad.repeat_rows(pooled, feats.shape[0])
        coords = self.coord_map(ad.concat([feats, tiled], axis=1))
        return SeedSet(coords=coords, features=feats)


def seed_provenance(n_patches, rate):
    """Rows of (seed_index, source_patch_index, kernel) for a seed set.

    Seed row ``i * rate + m`` descends from patch ``i`` through kernel
    ``m``; this table makes the grouping explicit for export and analysis.
    """
    seed_idx = np.arange(n_patches * rate, dtype=np.int64)
    return np.stack([seed_idx, seed_idx // rate, seed_idx % rate], axis=1)


def export_seed_provenance(path, n_patches, rate):
    """Write the provenance table as a comma-delimited text file."""
    table = seed_provenance(n_patches, rate)
    with open(path, "w") as fh:
        fh.write("seed_index,source_patch_index,kernel\n")
        for row in table:
            fh.write(f"{row[0]},{row[1]},{row[2]}\n")


class UpsampleStage(Module):
    """One coarse-to-fine refinement stage.

    Builds queries from the previous stage's features concatenated with the
    interpolated seed features, runs the generator core (keys are the
    previous stage's features), and moves duplicated points by predicted
    offsets. The offset head is zero-initialized so a fresh stage is an
    exact duplication.
    """

    def __init__(self, rng, channels, seed_channels, rate, k=16, interp_k=3,
                 mode=None, variant="uptrans", dtype=np.float32):
        self.rate = rate
        self.interp_k = interp_k
        self.mode = mode or AttentionMode("softmax")
        self.query_builder = Mlp2(
            rng, channels + seed_channels, channels, channels, dtype=dtype
        )
        self.core = make_core(
            variant, rng, channels, rate, k=k, seed_channels=seed_channels,
            interp_k=interp_k, dtype=dtype,
        )
        self.offset_map = Mlp2(rng, channels, channels, 3, dtype=dtype, zero_last=True)

    def __call__(self, state, seeds):
        if state.interpolated_seed_features is None:
            raise ContractError("stage input needs interpolated seed features")
        n = state.cloud.shape[0]
        queries = self.query_builder(
            ad.concat([state.features, state.interpolated_seed_features], axis=1)
        )
        feats = self.core(
            queries, state.features, state.cloud, seeds=seeds, mode=self.mode
        )
        offsets = self.offset_map(feats)
        new_cloud = ad.add(ad.repeat_rows(state.cloud, self.rate), offsets)
        return StageState(
            cloud=new_cloud,
            features=feats,
            rate=self.rate,
            interpolated_seed_features=geometry.interpolate_seed_features(
                new_cloud.data, seeds, self.interp_k
            ),
        )
