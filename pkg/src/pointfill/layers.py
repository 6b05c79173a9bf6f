"""Small parameterized building blocks shared by the encoder and generators."""

from __future__ import annotations

from typing import Iterator, NamedTuple

import numpy as np

from . import autodiff as ad


class Parameter(NamedTuple):
    """A named learnable tensor, e.g. ('encoder.abstract1.lift.w0', Tensor)."""

    name: str
    tensor: ad.Tensor


class Module:
    """Base with recursive parameter discovery over instance attributes.

    Attribute insertion order fixes the parameter order, so construction
    order is the single source of determinism for init and optimizers.
    """

    def named_parameters(self, prefix="") -> Iterator[Parameter]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}" if not prefix else f"{prefix}.{attr}"
            if isinstance(value, ad.Tensor) and value.requires_grad:
                yield Parameter(name, value)
            elif isinstance(value, Module):
                yield from value.named_parameters(name)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}{i}")

    def parameters(self):
        return [p.tensor for p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def parameter_count(self):
        return sum(p.size for p in self.parameters())


def _init_weight(rng, n_in, n_out, dtype):
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype)


class Linear(Module):
    """Affine row map.

    ``zero_init`` starts the layer at the zero function. ``trainable_bias``
    set to False keeps a frozen zero bias; attention-logit kernels use this
    because a softmax over the neighborhood is invariant to constant shifts,
    which would leave a trainable bias permanently gradient-free.
    """

    def __init__(self, rng, n_in, n_out, dtype=np.float32, zero_init=False,
                 trainable_bias=True):
        if zero_init:
            w = np.zeros((n_in, n_out), dtype=dtype)
        else:
            w = _init_weight(rng, n_in, n_out, dtype)
        if zero_init or not trainable_bias:
            b = np.zeros(n_out, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(n_in)
            b = rng.uniform(-bound, bound, size=n_out).astype(dtype)
        self.w = ad.tensor(w, requires_grad=True)
        self.b = ad.tensor(b, requires_grad=trainable_bias)
        self.n_in = n_in
        self.n_out = n_out

    def __call__(self, x):
        return ad.linear(x, self.w, self.b)


class Mlp2(Module):
    """Two affine layers with a relu between (the shared per-point map)."""

    def __init__(self, rng, n_in, n_hidden, n_out, dtype=np.float32, zero_last=False,
                 last_bias=True):
        self.lin0 = Linear(rng, n_in, n_hidden, dtype=dtype)
        self.lin1 = Linear(
            rng, n_hidden, n_out, dtype=dtype, zero_init=zero_last,
            trainable_bias=last_bias,
        )

    def __call__(self, x):
        return self.lin1(ad.relu(self.lin0(x)))
