"""Central finite-difference checks for every backward pass.

Each check perturbs a random sample of entries of one input (or parameter)
by ``+-epsilon``, evaluates a scalar objective ``sum(output * cotangent)``
and compares the numeric slope with the analytic gradient.  The reported
error is ``|a - n| / max(|a| + |n|, floor)``, so entries whose true
gradient is zero are judged on an absolute scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dcan import net
from dcan import tensor as T

REL_FLOOR = 1e-8


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a) + abs(n), REL_FLOOR)


def _sample_indices(shape, k: int, rng) -> list[tuple]:
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(k, size), replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def numeric_check(name, f, array: np.ndarray, analytic: np.ndarray, samples: int, epsilon: float, rng):
    """Compare ``analytic`` with central differences of ``f`` w.r.t. ``array`` (mutated and restored)."""
    worst = 0.0
    idx = _sample_indices(array.shape, samples, rng)
    for i in idx:
        old = array[i]
        array[i] = old + epsilon
        up = f()
        array[i] = old - epsilon
        down = f()
        array[i] = old
        worst = max(worst, rel_error(float(analytic[i]), (up - down) / (2.0 * epsilon)))
    return CheckResult(name, worst, len(idx))


# --- individual kernels ---------------------------------------------------------

def _bumpy(shape, rng, gap=0.05):
    """Random values kept at least ``gap`` away from 0, so ReLU kinks are not straddled."""
    x = rng.uniform(gap, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def check_conv(rng, samples=20, epsilon=1e-5, stride=1, padding=1):
    x = rng.standard_normal((2, 3, 7, 6))
    k = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    spec = T.ConvSpec(k, b, stride, padding)
    cot = rng.standard_normal(T.conv2d_forward(x, spec).shape)
    gx, gk, gb = T.conv2d_backward(x, spec, cot)

    def f():
        return float(np.vdot(T.conv2d_forward(x, T.ConvSpec(k, b, stride, padding)), cot))

    return [numeric_check(f"conv.{n}", f, a, g, samples, epsilon, rng)
            for n, a, g in (("x", x, gx), ("w", k, gk), ("b", b, gb))]


def check_deconv(rng, samples=20, epsilon=1e-5, stride=2, padding=1):
    x = rng.standard_normal((2, 3, 4, 5))
    k = rng.standard_normal((3, 2, 4, 4))
    b = rng.standard_normal(2)
    spec = T.ConvSpec(k, b, stride, padding)
    cot = rng.standard_normal(T.deconv2d_forward(x, spec).shape)
    gx, gk, gb = T.deconv2d_backward(x, spec, cot)

    def f():
        return float(np.vdot(T.deconv2d_forward(x, T.ConvSpec(k, b, stride, padding)), cot))

    return [numeric_check(f"deconv.{n}", f, a, g, samples, epsilon, rng)
            for n, a, g in (("x", x, gx), ("w", k, gk), ("b", b, gb))]


def check_maxpool(rng, samples=20, epsilon=1e-5):
    # a random permutation keeps every window's maximum unique and well separated
    x = rng.permutation(2 * 3 * 6 * 6).reshape(2, 3, 6, 6) * 0.01
    out, arg = T.maxpool_forward(x, 2, 2)
    cot = rng.standard_normal(out.shape)
    gx = T.maxpool_backward(x.shape, arg, cot)

    def f():
        return float(np.vdot(T.maxpool_forward(x, 2, 2)[0], cot))

    return [numeric_check("maxpool.x", f, x, gx, samples, epsilon, rng)]


def check_relu(rng, samples=20, epsilon=1e-5):
    x = _bumpy((2, 3, 5, 5), rng)
    cot = rng.standard_normal(x.shape)
    gx = T.relu_backward(x, cot)
    return [numeric_check("relu.x", lambda: float(np.vdot(T.relu(x), cot)), x, gx, samples, epsilon, rng)]


def check_dropout(rng, samples=20, epsilon=1e-5, rate=0.5):
    x = rng.standard_normal((2, 3, 5, 5))
    seed = int(rng.integers(2**31))
    _, scale = T.dropout(x, rate, True, T.make_rng(seed))
    cot = rng.standard_normal(x.shape)

    def f():
        return float(np.vdot(T.dropout(x, rate, True, T.make_rng(seed))[0], cot))

    return [numeric_check("dropout.x", f, x, cot * scale, samples, epsilon, rng)]


def check_softmax_xent(rng, samples=20, epsilon=1e-5):
    z = rng.standard_normal((2, 2, 4, 5)) * 2.0
    labels = rng.integers(0, 2, size=(2, 4, 5))
    _, g = T.softmax_xent(z, labels)
    return [numeric_check("softmax_xent.z", lambda: T.softmax_xent(z, labels)[0], z, g, samples, epsilon, rng)]


KERNEL_CHECKS = (check_conv, check_deconv, check_maxpool, check_relu, check_dropout, check_softmax_xent)


def kernel_suite(seed: int, samples: int = 20, epsilon: float = 1e-5) -> list[CheckResult]:
    rng = T.make_rng(seed)
    results = []
    for check in KERNEL_CHECKS:
        results.extend(check(rng, samples=samples, epsilon=epsilon))
    return results


# --- whole model ----------------------------------------------------------------

def model_loss(model: net.DcanModel, image, labels, w_a: float, dropout_seed: int) -> float:
    """Total training loss with a dropout mask fixed by ``dropout_seed``."""
    r = net.forward(model, image, train_mode=True, rng=T.make_rng(dropout_seed))
    return net.total_loss(model, r, labels, w_a)[0]


def model_gradients(model: net.DcanModel, image, labels, w_a: float, dropout_seed: int) -> dict:
    """Analytic gradient of :func:`model_loss`, including the weight-decay term."""
    r = net.forward(model, image, train_mode=True, rng=T.make_rng(dropout_seed))
    _, _, grad_scores = net.total_loss(model, r, labels, w_a)
    grads = net.backward(model, r, grad_scores)
    lam = model.config.weight_decay
    for name in grads:
        if T.is_decayed(name):
            grads[name] = grads[name] + lam * model.params[name]
    return grads


def model_suite(config: net.DcanConfig, seed: int, samples: int = 20, epsilon: float = 1e-5,
                w_a: float = 1.0) -> CheckResult:
    """Check ``samples`` parameters drawn across all layers of a freshly built model."""
    rng = T.make_rng(seed)
    model = net.build_model(config, rng)
    # non-zero biases exercise the bias paths and move activations off ReLU kinks
    for name, v in model.params.items():
        if name.endswith(".b"):
            v[...] = rng.normal(0.0, 0.1, size=v.shape)
    s = config.input_size
    image = rng.uniform(0.0, 1.0, size=(config.in_channels, s, s))
    labels = (rng.integers(0, 2, size=(s, s)), rng.integers(0, 2, size=(s, s)))
    dropout_seed = int(rng.integers(2**31))
    grads = model_gradients(model, image, labels, w_a, dropout_seed)

    names = list(model.params)
    picks = [names[int(i)] for i in rng.integers(0, len(names), size=samples)]
    worst = 0.0
    for name in picks:
        arr = model.params[name]
        (i,) = _sample_indices(arr.shape, 1, rng)
        old = arr[i]
        arr[i] = old + epsilon
        up = model_loss(model, image, labels, w_a, dropout_seed)
        arr[i] = old - epsilon
        down = model_loss(model, image, labels, w_a, dropout_seed)
        arr[i] = old
        worst = max(worst, rel_error(float(grads[name][i]), (up - down) / (2.0 * epsilon)))
    return CheckResult(f"model[seed={seed}]", worst, len(picks))
