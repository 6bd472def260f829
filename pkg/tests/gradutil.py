"""Central finite-difference gradient checking shared by the test modules."""

from __future__ import annotations

import numpy as np

from nrel.tensor import Tape, Tensor

EPS = 1e-5
REL_TOL = 1e-4


def numeric_grad(f, arrays, i, eps=EPS):
    """d f / d arrays[i] by central differences; ``f`` maps numpy arrays to a float."""
    base = [a.copy() for a in arrays]
    grad = np.zeros_like(base[i])
    it = np.nditer(base[i], flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[i][idx] += eps
        minus[i][idx] -= eps
        grad[idx] = (f(plus) - f(minus)) / (2 * eps)
    return grad


def analytic_grads(build, arrays):
    """Gradients of ``sum(w * build(*tensors))`` with a fixed random weighting ``w``."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = build(*leaves)
        loss = _weighted_sum(out)
    tape.backward(loss)
    return [l.grad if l.grad is not None else np.zeros(l.shape) for l in leaves], loss.item()


_WEIGHTS: dict[tuple, np.ndarray] = {}


def _weights_for(shape):
    if shape not in _WEIGHTS:
        _WEIGHTS[shape] = np.random.default_rng(1234 + 7 * shape[0] + shape[1]).normal(size=shape)
    return _WEIGHTS[shape]


def _weighted_sum(out: Tensor) -> Tensor:
    from nrel.tensor import matmul, mul_elementwise

    w = Tensor(_weights_for(out.shape))
    prod = mul_elementwise(out, w)
    ones_r = Tensor(np.ones((1, out.shape[0])))
    ones_c = Tensor(np.ones((out.shape[1], 1)))
    return matmul(matmul(ones_r, prod), ones_c)


def max_rel_error(build, arrays, which=None):
    """Worst |analytic - numeric| / max(1, |numeric|) over the chosen inputs."""
    grads, _ = analytic_grads(build, arrays)

    def f(arrs):
        return _weighted_sum(build(*[Tensor(a) for a in arrs])).item()

    worst = 0.0
    for i in (range(len(arrays)) if which is None else which):
        num = numeric_grad(f, arrays, i)
        err = np.abs(grads[i] - num) / np.maximum(1.0, np.abs(num))
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst
