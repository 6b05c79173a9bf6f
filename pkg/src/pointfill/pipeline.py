"""Model assembly, training loop and parameter accounting.

A :class:`CompletionModel` chains the encoder, the seed generator and a
stack of refinement stages. ``forward`` returns the seed set plus every
stage output; ``train_step`` adds the losses, runs one backward pass and
one optimizer update, and reports a :class:`LossBreakdown`.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import geometry
from .encoder import Encoder
from .errors import ContractError, NumericsError
from .generator import AttentionMode, SeedGenerator, StageState, UpsampleStage
from .layers import Mlp2, Module
from .losses import (
    LossBreakdown,
    completion_loss,
    downsample_targets,
    partial_matching_loss,
)

_PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass
class ModelConfig:
    """Complete structural description of one model.

    Defaults are the desk-scale setup (512-point inputs, 512-point final
    prediction); the classmethods below give the benchmark-scale layouts.
    """

    input_points: int = 512
    stage1_points: int = 256
    stage1_channels: int = 64
    patch_points: int = 64
    patch_channels: int = 128
    encoder_k: int = 16
    seed_rate: int = 2
    seed_channels: int = 64
    coarse_points: int = 128
    channels: int = 64
    rates: tuple = (1, 2, 2)
    attention_k: int = 16
    interp_k: int = 3
    generator: str = "uptrans"
    seed_attention: str = "none"
    stage_attention: tuple = ()  # empty: softmax for every stage
    attention_scale: float = 1.0
    precision: str = "float32"
    init_seed: int = 0

    def __post_init__(self):
        self.rates = tuple(int(r) for r in self.rates)
        if isinstance(self.stage_attention, str):
            self.stage_attention = (self.stage_attention,) * len(self.rates)
        else:
            self.stage_attention = tuple(self.stage_attention)
        self.validate()

    def validate(self):
        if not self.rates:
            raise ContractError("config needs at least one upsample rate")
        if any(r < 1 for r in self.rates):
            raise ContractError("upsample rates must be >= 1")
        if self.precision not in _PRECISIONS:
            raise ContractError(f"precision must be one of {sorted(_PRECISIONS)}")
        if self.stage1_points > self.input_points:
            raise ContractError("stage1_points cannot exceed input_points")
        if self.patch_points > self.stage1_points:
            raise ContractError("patch_points cannot exceed stage1_points")
        if self.coarse_points > self.seed_count + self.input_points:
            raise ContractError("coarse_points exceeds seeds + input")
        if self.stage_attention and len(self.stage_attention) != len(self.rates):
            raise ContractError("stage_attention length must match rates")

    @property
    def seed_count(self):
        return self.seed_rate * self.patch_points

    @property
    def stage_sizes(self):
        """Point count after each refinement stage."""
        sizes = []
        n = self.coarse_points
        for r in self.rates:
            n *= r
            sizes.append(n)
        return sizes

    @property
    def final_points(self):
        return self.stage_sizes[-1]

    @property
    def dtype(self):
        return _PRECISIONS[self.precision]

    def seed_mode(self):
        return AttentionMode(self.seed_attention, lam=self.attention_scale)

    def stage_mode(self, index):
        variant = self.stage_attention[index] if self.stage_attention else "softmax"
        return AttentionMode(variant, lam=self.attention_scale)

    @classmethod
    def desk(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def benchmark_16k(cls, **overrides):
        """The dense-output layout: 2048 in, 16384 out (rates 1, 4, 8)."""
        base = dict(
            input_points=2048, stage1_points=512, stage1_channels=128,
            patch_points=128, patch_channels=256, seed_rate=2, seed_channels=128,
            coarse_points=512, channels=128, rates=(1, 4, 8),
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def benchmark_8k(cls, **overrides):
        """The medium-output layout: 2048 in, 8192 out (rates 1, 4, 4)."""
        return cls.benchmark_16k(rates=(1, 4, 4), **overrides)

    @classmethod
    def micro(cls, **overrides):
        """Tiny layout for finite-difference audits of the full model."""
        base = dict(
            input_points=24, stage1_points=12, stage1_channels=6,
            patch_points=6, patch_channels=10, encoder_k=4, seed_rate=2,
            seed_channels=6, coarse_points=12, channels=6, rates=(1, 2),
            attention_k=4, interp_k=2, precision="float64",
        )
        base.update(overrides)
        return cls(**base)

    def to_mapping(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out[f.name] = str(value)
        return out

    @classmethod
    def from_mapping(cls, mapping):
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in known:
                raise ContractError(f"unknown config key {key!r}")
            kwargs[key] = _parse_field(known[key].name, raw)
        return cls(**kwargs)


_INT_FIELDS = {
    "input_points", "stage1_points", "stage1_channels", "patch_points",
    "patch_channels", "encoder_k", "seed_rate", "seed_channels",
    "coarse_points", "channels", "attention_k", "interp_k", "init_seed",
}


def _parse_field(name, raw):
    raw = raw.strip()
    if name in _INT_FIELDS:
        return int(raw)
    if name == "attention_scale":
        return float(raw)
    if name == "rates":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if name == "stage_attention":
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    return raw


class CompletionModel(Module):
    """Encoder, seed generator and refinement stack behind one forward call."""

    def __init__(self, config):
        rng = np.random.default_rng(config.init_seed)
        dtype = config.dtype
        self.encoder = Encoder(
            rng, config.stage1_points, config.stage1_channels,
            config.patch_points, config.patch_channels, k=config.encoder_k,
            dtype=dtype,
        )
        self.seed_generator = SeedGenerator(
            rng, config.patch_channels, config.seed_channels,
            rate=config.seed_rate, k=config.attention_k, mode=config.seed_mode(),
            variant=config.generator, dtype=dtype,
        )
        self.point_lift = Mlp2(rng, 3, config.channels, config.channels, dtype=dtype)
        self.stages = [
            UpsampleStage(
                rng, config.channels, config.seed_channels, rate,
                k=config.attention_k, interp_k=config.interp_k,
                mode=config.stage_mode(i), variant=config.generator, dtype=dtype,
            )
            for i, rate in enumerate(config.rates)
        ]
        self.config = config
        names = [p.name for p in self.named_parameters()]
        if len(names) != len(set(names)):
            raise ContractError("duplicate parameter names in model")

    def forward(self, partial):
        """Complete a partial cloud.

        Args:
            partial: (n, 3) array with ``n >= config.input_points`` minimum
                (resample beforehand if needed).

        Returns:
            (seeds, states): the SeedSet and one StageState per rate, the
            last state's cloud being the final prediction.
        """
        cfg = self.config
        partial = geometry.as_cloud(partial, "partial").astype(cfg.dtype, copy=False)
        patches = self.encoder(partial)
        seeds = self.seed_generator(patches)

        merged = np.concatenate([seeds.coords.data, partial], axis=0)
        idx = geometry.farthest_point_sample(merged, cfg.coarse_points, start=0)
        coarse = ad.gather_rows(
            ad.concat([seeds.coords, ad.tensor(partial)], axis=0), idx
        )
        state = StageState(
            cloud=coarse,
            features=self.point_lift(coarse),
            rate=1,
            interpolated_seed_features=geometry.interpolate_seed_features(
                coarse.data, seeds, cfg.interp_k
            ),
        )
        states = []
        for stage in self.stages:
            state = stage(state, seeds)
            states.append(state)
        return seeds, states

    def complete(self, partial):
        """Convenience: forward pass returning only the final cloud array."""
        _, states = self.forward(partial)
        return states[-1].cloud.data.copy()


def build_model(config):
    return CompletionModel(config)


def parameter_count(model):
    """Exact number of scalar parameters in a model (or any Module)."""
    return sum(p.tensor.size for p in model.named_parameters())


class Adam(Module):
    """First-order adaptive-moment optimizer (beta1=0.9, beta2=0.999)."""

    def __init__(self, model, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self._params = list(model.named_parameters())
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.moment1 = {
            name: np.zeros_like(p.data) for name, p in self._params
        }
        self.moment2 = {
            name: np.zeros_like(p.data) for name, p in self._params
        }

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1 ** self.step_count
        correction2 = 1.0 - b2 ** self.step_count
        for name, p in self._params:
            g = p.grad
            if g is None:
                continue
            m = self.moment1[name]
            v = self.moment2[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / correction1
            v_hat = v / correction2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.dtype, copy=False
            )

    def state_arrays(self):
        """Flat view of the optimizer state for checkpointing."""
        out = {"adam.step": np.array([float(self.step_count)], dtype=np.float32)}
        for name, _ in self._params:
            out[f"adam.m.{name}"] = self.moment1[name]
            out[f"adam.v.{name}"] = self.moment2[name]
        return out

    def load_state_arrays(self, arrays):
        from .errors import FormatError

        if "adam.step" in arrays:
            self.step_count = int(round(float(arrays["adam.step"][0])))
        for name, p in self._params:
            for prefix, store in (("adam.m.", self.moment1), ("adam.v.", self.moment2)):
                key = prefix + name
                if key not in arrays:
                    raise FormatError(f"optimizer state missing record {key!r}")
                arr = arrays[key].astype(p.dtype, copy=False).reshape(p.shape)
                store[name] = arr.copy()


def _accumulate_loss(model, partial, gt, scale=1.0, targets=None):
    """Forward + loss + backward for one cloud, scaled for accumulation.

    Gradients add onto whatever is already in the parameter grads; the
    caller owns zeroing and the optimizer update. ``targets`` optionally
    carries precomputed per-output loss targets. Returns the (unscaled)
    LossBreakdown for this pair.
    """
    dtype = model.config.dtype
    gt = np.asarray(gt, dtype=dtype)
    with ad.Tape() as tape:
        seeds, states = model.forward(partial)
        comp_total, terms = completion_loss(
            seeds.coords, [s.cloud for s in states], gt, targets=targets
        )
        matching = partial_matching_loss(
            ad.tensor(np.asarray(partial, dtype=dtype)), states[-1].cloud
        )
        total = ad.add(comp_total, matching)
        scaled = total if scale == 1.0 else ad.mul(total, float(scale))
    breakdown = LossBreakdown(
        stage_cds=tuple(float(t.item()) for t in terms),
        partial_matching=float(matching.item()),
        total=float(total.item()),
    )
    if not np.isfinite(breakdown.total):
        raise NumericsError(
            "non-finite training loss: "
            f"stage_cds={breakdown.stage_cds} partial={breakdown.partial_matching}"
        )
    tape.backward(scaled)
    return breakdown


def evaluate_loss(model, partial, gt):
    """Training-objective value on one pair, without gradients or updates."""
    dtype = model.config.dtype
    gt = np.asarray(gt, dtype=dtype)
    seeds, states = model.forward(partial)
    _, terms = completion_loss(seeds.coords, [s.cloud for s in states], gt)
    matching = partial_matching_loss(
        ad.tensor(np.asarray(partial, dtype=dtype)), states[-1].cloud
    )
    stage_values = tuple(float(t.item()) for t in terms)
    return LossBreakdown(
        stage_cds=stage_values,
        partial_matching=float(matching.item()),
        total=float(sum(stage_values) + matching.item()),
    )


def train_step(model, partial, gt, optimizer):
    """One optimization step on a single (partial, gt) pair.

    Runs the forward pass, sums the per-output Chamfer terms and the
    partial-matching term, backpropagates and applies one optimizer
    update. Returns the LossBreakdown. Raises NumericsError (with the
    per-term values in the message) if any term is non-finite.
    """
    model.zero_grad()
    breakdown = _accumulate_loss(model, partial, gt)
    optimizer.step()
    return breakdown


@dataclass
class TrainLogRow:
    step: int
    breakdown: LossBreakdown


def run_training(model, samples, steps, optimizer, seed=0, lr_decay_every=None,
                 lr_decay=0.1, batch_clouds=1, on_step=None):
    """Iterate training steps over a sample list.

    Each step processes ``batch_clouds`` single-cloud forward/backward
    passes with gradients accumulated (emulating a batch; the engine has no
    batch axis) and applies one optimizer update; the logged breakdown is
    the mean over the batch. Samples are visited in a per-epoch order
    shuffled by ``seed``; the learning rate decays by ``lr_decay`` every
    ``lr_decay_every`` steps when configured. ``on_step(row)`` fires after
    every step.
    """
    if not samples:
        raise ContractError("run_training needs at least one sample")
    if batch_clouds < 1:
        raise ContractError("batch_clouds must be >= 1")
    rng = np.random.default_rng(seed)
    base_lr = optimizer.lr
    sizes = [model.config.seed_count, *model.config.stage_sizes]
    target_cache = {}
    rows = []
    order = []
    for step in range(1, steps + 1):
        if lr_decay_every:
            optimizer.lr = base_lr * (lr_decay ** ((step - 1) // lr_decay_every))
        model.zero_grad()
        parts = []
        for _ in range(batch_clouds):
            if not order:
                order = list(rng.permutation(len(samples)))
            index = order.pop(0)
            partial, gt = samples[index]
            if index not in target_cache:
                target_cache[index] = downsample_targets(
                    np.asarray(gt, dtype=model.config.dtype), sizes
                )
            parts.append(
                _accumulate_loss(
                    model, partial, gt, scale=1.0 / batch_clouds,
                    targets=target_cache[index],
                )
            )
        optimizer.step()
        breakdown = LossBreakdown(
            stage_cds=tuple(
                float(np.mean([p.stage_cds[i] for p in parts]))
                for i in range(len(parts[0].stage_cds))
            ),
            partial_matching=float(np.mean([p.partial_matching for p in parts])),
            total=float(np.mean([p.total for p in parts])),
        )
        row = TrainLogRow(step=step, breakdown=breakdown)
        rows.append(row)
        if on_step is not None:
            on_step(row)
    optimizer.lr = base_lr
    return rows
