"""Central finite-difference verification of every recorded gradient.

The harness perturbs parameter entries by +/-eps, rebuilds the forward pass,
and compares (f(x+eps) - f(x-eps)) / (2 eps) against the recorded backward.
Checks run in float64; scalarization uses sums (not means) so gradients stay
O(1) and the relative comparison is well conditioned.  Small ops are checked
on every entry; full networks on a fixed-size random sample of entries.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, concat, get_default_dtype, set_default_dtype
from . import tensor as T
from .ops import conv2d, conv_transpose2d, instance_norm

DEFAULT_EPS = 1e-4

# Full networks need a smaller step: with 0.02-std weights the hidden
# preactivations sit close to the relu/leaky_relu kinks, and a 1e-4
# perturbation of one parameter pushes thousands of downstream activations
# across them, polluting the difference quotient.  1e-6 keeps crossings
# rare while float64 roundoff stays near 1e-8.
MODEL_EPS = 1e-6

# Relative-error denominators never drop below this, so exactly-zero
# gradients compare cleanly.
_DENOM_FLOOR = 1e-6


def max_rel_error(build_loss: Callable[[], Tensor], params: dict[str, Tensor], *,
                  eps: float = DEFAULT_EPS, n_samples: int | None = None,
                  rng: np.random.Generator | None = None) -> float:
    """Worst relative disagreement between backward and central differences.

    build_loss must rebuild the scalar loss from the live param tensors on
    every call.  n_samples None checks every entry of every parameter;
    otherwise that many (parameter, entry) pairs are sampled.
    """
    for p in params.values():
        p.grad = None
    loss = build_loss()
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    entries: list[tuple[str, int]] = []
    if n_samples is None:
        for name, p in params.items():
            entries.extend((name, i) for i in range(p.data.size))
    else:
        rng = rng or np.random.default_rng(0)
        names = list(params)
        sizes = np.array([params[n].data.size for n in names], dtype=np.float64)
        probs = sizes / sizes.sum()
        for _ in range(n_samples):
            name = names[int(rng.choice(len(names), p=probs))]
            entries.append((name, int(rng.integers(params[name].data.size))))

    worst = 0.0
    for name, idx in entries:
        p = params[name]
        original = p.data.flat[idx]
        p.data.flat[idx] = original + eps
        hi = float(build_loss().data)
        p.data.flat[idx] = original - eps
        lo = float(build_loss().data)
        p.data.flat[idx] = original
        numeric = (hi - lo) / (2.0 * eps)
        recorded = float(analytic[name].flat[idx])
        denom = max(abs(numeric), abs(recorded), _DENOM_FLOOR)
        worst = max(worst, abs(numeric - recorded) / denom)
    return worst


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    """Random values with |x| >= margin, keeping kinked ops off their kinks."""
    mag = rng.uniform(margin, 1.0, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


class _f64:
    """Temporarily switch the default tensor dtype to float64."""

    def __enter__(self):
        self._saved = get_default_dtype()
        set_default_dtype(np.float64)
        return self

    def __exit__(self, *exc):
        set_default_dtype(self._saved)
        return False


def _op_check(name: str, builder: Callable[[np.random.Generator],
                                           tuple[Callable[[], Tensor], dict[str, Tensor]]],
              seed: int) -> tuple[str, Callable[[], float]]:
    def run() -> float:
        with _f64():
            build_loss, params = builder(np.random.default_rng(seed))
            return max_rel_error(build_loss, params)
    return name, run


def _weighted_sum(t: Tensor, r: np.ndarray) -> Tensor:
    """sum(t * r) with a fixed random r: O(1) gradients for every entry."""
    return T.sum_(T.mul(t, Tensor(r)))


def _elementwise_builders(rng_shape=(2, 3, 4, 4)):
    shape = rng_shape

    def two_args(op):
        def build(rng):
            a = Tensor(_away_from_zero(rng, shape), requires_grad=True)
            b = Tensor(_away_from_zero(rng, shape), requires_grad=True)
            r = rng.normal(size=shape)
            return (lambda: _weighted_sum(op(a, b), r)), {"a": a, "b": b}
        return build

    def one_arg(op):
        def build(rng):
            a = Tensor(_away_from_zero(rng, shape), requires_grad=True)
            r = rng.normal(size=shape)
            return (lambda: _weighted_sum(op(a), r)), {"a": a}
        return build

    def sum_case(rng):
        a = Tensor(_away_from_zero(rng, shape), requires_grad=True)
        return (lambda: T.sum_(a)), {"a": a}

    def mean_case(rng):
        a = Tensor(_away_from_zero(rng, shape), requires_grad=True)
        return (lambda: T.mean(a)), {"a": a}

    return {
        "add": two_args(T.add),
        "sub": two_args(T.sub),
        "mul": two_args(T.mul),
        "add_scalar": one_arg(lambda a: T.add(a, 1.7)),
        "mul_scalar": one_arg(lambda a: T.mul(a, -2.5)),
        "neg": one_arg(T.neg),
        "relu": one_arg(T.relu),
        "leaky_relu": one_arg(lambda a: T.leaky_relu(a, 0.2)),
        "tanh": one_arg(T.tanh),
        "abs": one_arg(T.abs_),
        "square": one_arg(T.square),
        "softplus": one_arg(T.softplus),
        "sum": sum_case,
        "mean": mean_case,
    }


def _conv_builders():
    def conv_case(stride, padding, pad_mode, k):
        def build(rng):
            x = Tensor(rng.normal(size=(2, 3, 6, 6)), requires_grad=True)
            w = Tensor(rng.normal(size=(4, 3, k, k)) * 0.5, requires_grad=True)
            b = Tensor(rng.normal(size=(4,)), requires_grad=True)
            out_shape = conv2d(x, w, b, stride=stride, padding=padding,
                               pad_mode=pad_mode).data.shape
            r = rng.normal(size=out_shape)
            return (lambda: _weighted_sum(
                conv2d(x, w, b, stride=stride, padding=padding, pad_mode=pad_mode), r
            )), {"x": x, "w": w, "b": b}
        return build

    def convt_case(stride, padding, k, in_hw):
        def build(rng):
            x = Tensor(rng.normal(size=(2, 3, in_hw, in_hw)), requires_grad=True)
            w = Tensor(rng.normal(size=(3, 4, k, k)) * 0.5, requires_grad=True)
            b = Tensor(rng.normal(size=(4,)), requires_grad=True)
            out_shape = conv_transpose2d(x, w, b, stride=stride,
                                         padding=padding).data.shape
            r = rng.normal(size=out_shape)
            return (lambda: _weighted_sum(
                conv_transpose2d(x, w, b, stride=stride, padding=padding), r
            )), {"x": x, "w": w, "b": b}
        return build

    def norm_case(rng):
        x = Tensor(rng.normal(size=(2, 3, 5, 5)), requires_grad=True)
        gamma = Tensor(rng.uniform(0.5, 1.5, size=(3,)), requires_grad=True)
        beta = Tensor(rng.normal(size=(3,)), requires_grad=True)
        r = rng.normal(size=(2, 3, 5, 5))
        return (lambda: _weighted_sum(instance_norm(x, gamma, beta), r)), \
            {"x": x, "gamma": gamma, "beta": beta}

    def concat_case(rng):
        a = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 2, 4, 4)), requires_grad=True)
        r = rng.normal(size=(2, 5, 4, 4))
        return (lambda: _weighted_sum(concat([a, b], axis=1), r)), {"a": a, "b": b}

    def loss_mix_case(rng):
        a = Tensor(_away_from_zero(rng, (2, 1, 6, 6)), requires_grad=True)
        b = Tensor(_away_from_zero(rng, (2, 1, 6, 6)), requires_grad=True)
        return (lambda: T.add(T.mean(T.square(T.sub(a, b))),
                              T.mul(T.mean(T.abs_(T.sub(a, b))), 10.0))), \
            {"a": a, "b": b}

    return {
        "conv2d_s1": conv_case(1, 0, "zeros", 3),
        "conv2d_s1_pad_zeros": conv_case(1, 1, "zeros", 3),
        "conv2d_s1_pad_reflect": conv_case(1, 2, "reflect", 3),
        "conv2d_s2_k4": conv_case(2, 1, "zeros", 4),
        "conv_transpose2d_s1": convt_case(1, 0, 3, 5),
        "conv_transpose2d_s2_k4": convt_case(2, 1, 4, 4),
        "instance_norm": norm_case,
        "concat": concat_case,
        "composite_loss": loss_mix_case,
    }


def _model_builders():
    # Imported lazily: models is built on this package.
    from ..models import nets

    def generator_case(rng):
        cfg = nets.GeneratorConfig.desk()
        net = nets.ResnetGenerator(cfg, rng)
        x = Tensor(rng.uniform(-1, 1, size=(1, 1, cfg.image_size, cfg.image_size)))
        return (lambda: T.sum_(T.square(net(x)))), net.params_dict()

    def discriminator_case(rng):
        cfg = nets.DiscriminatorConfig.desk()
        net = nets.PatchDiscriminator(cfg, rng)
        x = Tensor(rng.uniform(-1, 1, size=(1, 1, cfg.image_size, cfg.image_size)))
        return (lambda: T.sum_(T.square(net(x)))), net.params_dict()

    def unet_case(rng):
        cfg = nets.UNetConfig.desk()
        net = nets.UNetGenerator(cfg, rng)
        x = Tensor(rng.uniform(-1, 1, size=(1, 1, cfg.image_size, cfg.image_size)))
        return (lambda: T.sum_(T.square(net(x)))), net.params_dict()

    return {
        "generator_desk": generator_case,
        "discriminator_desk": discriminator_case,
        "unet_generator_desk": unet_case,
    }


def standard_checks(seed: int = 0, include_models: bool = True,
                    model_samples: int = 10) -> list[tuple[str, Callable[[], float]]]:
    """The named gradient checks the test suite and the CLI both run."""
    checks: list[tuple[str, Callable[[], float]]] = []
    for name, builder in _elementwise_builders().items():
        checks.append(_op_check(name, builder, seed))
    for name, builder in _conv_builders().items():
        checks.append(_op_check(name, builder, seed + 1))
    if include_models:
        for name, builder in _model_builders().items():
            def run(builder=builder, offset=len(checks)) -> float:
                with _f64():
                    rng = np.random.default_rng(seed + 100 + offset)
                    build_loss, params = builder(rng)
                    return max_rel_error(build_loss, params, eps=MODEL_EPS,
                                         n_samples=model_samples, rng=rng)
            checks.append((name, run))
    return checks


def run_all(seed: int = 0, include_models: bool = True) -> list[tuple[str, float]]:
    """Run every standard check; returns (name, max relative error) pairs."""
    return [(name, fn()) for name, fn in standard_checks(seed, include_models)]
