"""Finite-difference audit suite over every differentiable operation.

Each registered case builds a scalar-valued function and its float64 leaf
inputs; ``run_suite`` checks all of them with central differences. The full
forward case uses a micro model and samples a handful of coordinates per
parameter tensor (every tensor is still touched), which keeps the suite
fast without skipping any operation.

Composite cases run inside a geometry freeze (see GeometryFreeze): neighbor
selections and interpolation weights are constants of the geometry by
contract, so finite differences must probe the same function the adjoints
differentiate. Their scalarization probes are also scaled to ~1e-2 so that
coordinates with structurally zero gradients (softmax shift invariance,
occasionally inactive relu units) keep their finite-difference noise below
the 1e-8 absolute floor of the relative-error formula.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import geometry
from .generator import (
    AttentionMode,
    DeconvCore,
    FoldingCore,
    GraphConvCore,
    PointwiseAttentionCore,
    SeedSet,
    StageState,
    UpsampleStage,
    UpsampleTransformer,
)
from .losses import chamfer, completion_loss, partial_matching_loss
from .pipeline import CompletionModel, ModelConfig

EPS = 1e-5
TOL = 1e-4


def _rng(seed=0):
    return np.random.default_rng(seed)


def _leaf(rng, shape, scale=1.0, offset=0.0):
    return ad.tensor(
        offset + scale * rng.standard_normal(shape), requires_grad=True,
        dtype=np.float64,
    )


def _cloud(rng, n, spread=1.0):
    return spread * rng.standard_normal((n, 3))


def _scalarize(t, rng):
    # project onto a fixed random direction so every output coordinate matters
    probe = ad.constant(rng.standard_normal(t.shape), like=t)
    return ad.reduce_sum(ad.mul(t, probe))


# --- primitive cases -------------------------------------------------------


def _case_relu():
    rng = _rng(1)
    x = _leaf(rng, (5, 4))
    x.data += np.sign(x.data) * 0.05  # keep clear of the kink
    return lambda x: ad.reduce_sum(ad.relu(x)), [x]


def _case_softmax():
    rng = _rng(2)
    x = _leaf(rng, (4, 6))
    probe = rng.standard_normal((4, 6))

    def fn(x):
        return ad.reduce_sum(ad.mul(ad.softmax_last(x), ad.constant(probe, like=x)))

    return fn, [x]


def _case_log_softmax():
    rng = _rng(3)
    x = _leaf(rng, (3, 5))
    probe = rng.standard_normal((3, 5))

    def fn(x):
        return ad.reduce_sum(ad.mul(ad.log_softmax_last(x), ad.constant(probe, like=x)))

    return fn, [x]


def _case_linear():
    rng = _rng(4)
    x = _leaf(rng, (6, 3))
    w = _leaf(rng, (3, 5))
    b = _leaf(rng, (5,))
    probe = rng.standard_normal((6, 5))

    def fn(x, w, b):
        return ad.reduce_sum(ad.mul(ad.linear(x, w, b), ad.constant(probe, like=x)))

    return fn, [x, w, b]


def _case_elementwise():
    rng = _rng(5)
    a = _leaf(rng, (4, 3))
    b = _leaf(rng, (4, 3))

    def fn(a, b):
        mixed = ad.mul(ad.add(a, b), ad.sub(a, ad.mul(b, 0.5)))
        return ad.reduce_sum(mixed)

    return fn, [a, b]


def _case_reductions():
    rng = _rng(6)
    x = _leaf(rng, (5, 4))

    def fn(x):
        return ad.add(
            ad.reduce_mean(ad.mul(x, x)), ad.reduce_sum(ad.reduce_sum(x, axis=1))
        )

    return fn, [x]


def _case_max_over_axis():
    rng = _rng(7)
    x = _leaf(rng, (6, 5))
    probe = rng.standard_normal(6)

    def fn(x):
        return ad.reduce_sum(
            ad.mul(ad.max_over_axis(x, axis=1), ad.constant(probe, like=x))
        )

    return fn, [x]


def _case_structure():
    rng = _rng(8)
    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (2, 4))
    idx = np.array([4, 0, 2, 2, 1])
    probe = rng.standard_normal((5, 4))

    def fn(a, b):
        merged = ad.concat([a, b], axis=0)
        rows = ad.gather_rows(merged, idx)
        return ad.reduce_sum(ad.mul(rows, ad.constant(probe, like=a)))

    return fn, [a, b]


def _case_reshape_permute():
    rng = _rng(9)
    x = _leaf(rng, (4, 6))
    probe = rng.standard_normal((3, 4, 2))

    def fn(x):
        cube = ad.permute(ad.reshape(x, (4, 3, 2)), (1, 0, 2))
        return ad.reduce_sum(ad.mul(cube, ad.constant(probe, like=x)))

    return fn, [x]


def _case_sqrt():
    rng = _rng(10)
    x = _leaf(rng, (5, 3), offset=3.0)

    def fn(x):
        return ad.reduce_sum(ad.sqrt(ad.mul(x, x)))

    return fn, [x]


def _case_repeat_cols():
    rng = _rng(11)
    x = _leaf(rng, (6, 1))
    probe = rng.standard_normal((6, 4))

    def fn(x):
        return ad.reduce_sum(ad.mul(ad.repeat_cols(x, 4), ad.constant(probe, like=x)))

    return fn, [x]


# --- model-level cases -----------------------------------------------------


def _case_interpolation():
    rng = _rng(20)
    queries = _cloud(rng, 10)
    coords = _cloud(rng, 7)
    feats = _leaf(rng, (7, 5))
    probe = rng.standard_normal((10, 5))

    def fn(feats):
        seeds = SeedSet(coords=ad.tensor(coords), features=feats)
        out = geometry.interpolate_seed_features(queries, seeds, k=3)
        return ad.reduce_sum(ad.mul(out, ad.constant(probe, like=feats)))

    return fn, [feats]


def _build_uptrans(seed, with_seeds):
    rng = _rng(seed)
    n, c, cs = 8, 6, 4
    core = UpsampleTransformer(
        rng, c, rate=2, k=3, seed_channels=cs if with_seeds else None,
        interp_k=2, dtype=np.float64,
    )
    cloud = _cloud(rng, n)
    seeds = None
    if with_seeds:
        seeds = SeedSet(
            coords=ad.tensor(_cloud(rng, 5)),
            features=ad.tensor(rng.standard_normal((5, cs))),
        )
    queries = _leaf(rng, (n, c))
    keys = _leaf(rng, (n, c))
    cloud_t = _leaf(rng, (n, 3))
    cloud_t.data = cloud
    params = [p.tensor for p in core.named_parameters()]
    return core, queries, keys, cloud_t, seeds, params, rng


def _case_uptrans(mode):
    def build():
        core, q, k, cloud, seeds, params, rng = _build_uptrans(30, with_seeds=True)
        probe = 0.01 * rng.standard_normal((cloud.shape[0] * core.rate, core.channels))
        freezer = geometry.GeometryFreeze()

        def fn(q, k, cloud, *params):
            freezer.begin_pass()
            with geometry.freeze_geometry(freezer):
                out = core(q, k, cloud, seeds=seeds, mode=mode)
            return ad.reduce_sum(ad.mul(out, ad.constant(probe, like=q)))

        return fn, [q, k, cloud, *params]

    return build


def _ablation_case(factory, seed, uses_neighbors):
    def build():
        rng = _rng(seed)
        n, c = 8, 6
        core = factory(rng, c, 2, k=3, seed_channels=None, dtype=np.float64)
        cloud = ad.tensor(_cloud(rng, n))
        q = _leaf(rng, (n, c))
        k = _leaf(rng, (n, c))
        params = [p.tensor for p in core.named_parameters()]
        probe = 0.01 * rng.standard_normal((n * 2, c))

        def fn(q, k, *params):
            out = core(q, k, cloud, seeds=None, mode=AttentionMode("softmax"))
            return ad.reduce_sum(ad.mul(out, ad.constant(probe, like=q)))

        return fn, [q, k, *params]

    return build


def _case_chamfer(norm):
    def build():
        rng = _rng(40 if norm == "l1" else 41)
        a = _leaf(rng, (9, 3))
        b = _leaf(rng, (7, 3))

        def fn(a, b):
            return chamfer(a, b, norm=norm)

        return fn, [a, b]

    return build


def _case_partial_matching():
    rng = _rng(42)
    a = _leaf(rng, (8, 3))
    b = _leaf(rng, (11, 3))

    def fn(a, b):
        return partial_matching_loss(a, b)

    return fn, [a, b]


def _case_upsample_layer():
    rng = _rng(50)
    n, c, cs = 8, 6, 4
    stage = UpsampleStage(
        rng, c, cs, rate=2, k=3, interp_k=2, mode=AttentionMode("softmax"),
        dtype=np.float64,
    )
    # the offset head is zero-initialized; nudge it so its gradient is generic
    stage.offset_map.lin1.w.data += 0.05 * rng.standard_normal(
        stage.offset_map.lin1.w.shape
    )
    seeds = SeedSet(
        coords=ad.tensor(_cloud(rng, 5)),
        features=ad.tensor(rng.standard_normal((5, cs))),
    )
    cloud = _leaf(rng, (n, 3))
    feats = _leaf(rng, (n, c))
    params = [p.tensor for p in stage.named_parameters()]
    probe = 0.01 * rng.standard_normal((n * 2, 3))
    freezer = geometry.GeometryFreeze()

    def fn(cloud, feats, *params):
        freezer.begin_pass()
        with geometry.freeze_geometry(freezer):
            state = StageState(
                cloud=cloud, features=feats, rate=1,
                interpolated_seed_features=geometry.interpolate_seed_features(
                    cloud.data, seeds, 2
                ),
            )
            out = stage(state, seeds)
        return ad.reduce_sum(ad.mul(out.cloud, ad.constant(probe, like=cloud)))

    return fn, [cloud, feats, *params]


def _case_full_forward():
    rng = _rng(60)
    model = CompletionModel(ModelConfig.micro(init_seed=3))
    partial = _cloud(rng, model.config.input_points, spread=0.5)
    gt = _cloud(rng, 24, spread=0.5)
    params = [p.tensor for p in model.named_parameters()]
    freezer = geometry.GeometryFreeze()

    def fn(*params):
        freezer.begin_pass()
        with geometry.freeze_geometry(freezer):
            seeds, states = model.forward(partial)
            total, _ = completion_loss(seeds.coords, [s.cloud for s in states], gt)
        return ad.mul(total, 0.01)

    return fn, params


CASES = {
    "relu": _case_relu,
    "softmax": _case_softmax,
    "log_softmax": _case_log_softmax,
    "linear": _case_linear,
    "elementwise": _case_elementwise,
    "reductions": _case_reductions,
    "max_over_axis": _case_max_over_axis,
    "concat_gather": _case_structure,
    "reshape_permute": _case_reshape_permute,
    "sqrt": _case_sqrt,
    "repeat_cols": _case_repeat_cols,
    "interpolation": _case_interpolation,
    "uptrans_softmax": _case_uptrans(AttentionMode("softmax")),
    "uptrans_none": _case_uptrans(AttentionMode("none")),
    "uptrans_scaled": _case_uptrans(AttentionMode("scaled", lam=1.7)),
    "uptrans_log": _case_uptrans(AttentionMode("log")),
    "generator_folding": _ablation_case(FoldingCore, 31, False),
    "generator_deconv": _ablation_case(DeconvCore, 32, False),
    "generator_graphconv": _ablation_case(GraphConvCore, 33, True),
    "generator_pointwise": _ablation_case(PointwiseAttentionCore, 34, True),
    "chamfer_l1": _case_chamfer("l1"),
    "chamfer_l2": _case_chamfer("l2"),
    "partial_matching": _case_partial_matching,
    "upsample_layer": _case_upsample_layer,
    "full_forward": _case_full_forward,
}

#: cases where finite differences over every coordinate would dominate the
#: runtime; these sample a few coordinates per tensor instead (all tensors
#: are still covered).
_SAMPLED = {"full_forward": 4, "upsample_layer": 16}


def run_suite(names=None, tol=TOL, eps=EPS, report_fn=None):
    """Run the named cases (all by default); returns [(name, report)]."""
    selected = list(CASES) if not names else list(names)
    results = []
    for name in selected:
        if name not in CASES:
            raise KeyError(f"unknown gradcheck case {name!r}")
        fn, inputs = CASES[name]()
        report = ad.grad_check(
            fn, inputs, eps=eps, tol=tol,
            max_coords_per_input=_SAMPLED.get(name), seed=0,
        )
        results.append((name, report))
        if report_fn is not None:
            report_fn(name, report)
    return results
