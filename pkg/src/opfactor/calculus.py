"""Directional derivatives by nested central differences and C^k seminorms.

Derivatives follow the recursion D^k f(x)(v_1..v_k) = D^1[y -> D^{k-1}f(y)
(v_1..v_{k-1})](x)(v_k), each level realized by a central difference.  Steps
double per nesting level; float64 loses roughly two digits per order, so
orders are capped at three.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .spaces import (
    CompactSample,
    GridFunction,
    LinearOperatorMatrix,
    Metric,
    _metric_dist,
)

MAX_ORDER = 3


@dataclass(frozen=True)
class DerivativeStencil:
    """Central-difference stencil nested per direction.

    step is relative to the sup norm of each direction when `relative` is
    set; level i of the nesting (1-based, innermost first) uses
    step * growth^(i-1).
    """

    step: float = 1e-4
    growth: float = 2.0
    relative: bool = True

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if not self.growth >= 1:
            raise ValueError(f"growth must be >= 1, got {self.growth}")

    def halved(self) -> "DerivativeStencil":
        return DerivativeStencil(self.step / 2.0, self.growth, self.relative)

    def step_for(self, level: int, direction: GridFunction) -> float:
        h = self.step * self.growth ** (level - 1)
        if self.relative:
            scale = float(np.max(np.abs(direction.values)))
            if scale > 0:
                h = h / scale
        return h


def directional_derivative(f: Callable[[GridFunction], GridFunction],
                           x: GridFunction, dirs: Sequence[GridFunction],
                           stencil: DerivativeStencil = DerivativeStencil(),
                           ) -> GridFunction:
    """Nested central-difference estimate of the order-len(dirs) derivative.

    Exact (up to round-off amplified by 1/h^order) for operators polynomial
    of degree <= 2 in each direction.
    """
    order = len(dirs)
    if order == 0:
        return f(x)
    if order > MAX_ORDER:
        raise ValueError(f"derivative order capped at {MAX_ORDER}, got {order}")
    v = dirs[-1]
    if float(np.max(np.abs(v.values))) == 0.0:
        return 0.0 * f(x)
    h = stencil.step_for(order, v)
    plus = directional_derivative(f, x + h * v, dirs[:-1], stencil)
    minus = directional_derivative(f, x - h * v, dirs[:-1], stencil)
    return (0.5 / h) * (plus - minus)


@dataclass(frozen=True)
class CkEstimate:
    """Sampled C^k seminorm value with the tuple attaining the maximum."""

    value: float
    order: int
    base_index: int
    dir_indices: tuple[int, ...]
    tuples_evaluated: int
    capped: bool

    def __float__(self) -> float:
        return self.value


def _tuple_indices(n_base: int, n_dir: int, order: int, cap: int, seed: int):
    """Deterministic enumeration of (base, dirs) tuples, subsampled at cap."""
    total = n_base * n_dir ** order
    if total <= cap:
        dirs_iter = itertools.product(range(n_dir), repeat=order)
        for combo in dirs_iter:
            for b in range(n_base):
                yield b, combo
        return
    rng = np.random.default_rng(seed)
    bases = rng.integers(0, n_base, size=cap)
    dirs = rng.integers(0, n_dir, size=(cap, order))
    for b, row in zip(bases, dirs):
        yield int(b), tuple(int(t) for t in row)


def ck_seminorm(f: Callable[[GridFunction], GridFunction],
                K1: CompactSample, K2: CompactSample, k: int, p_out: Metric,
                stencil: DerivativeStencil = DerivativeStencil(),
                tuple_cap: int = 10_000, seed: int = 0) -> CkEstimate:
    """Max of p_out(D^i f(x)(v_1..v_i)) over sampled tuples, i = 0..k.

    Maximization runs over the centers of K1 (base points) and direction
    tuples from the centers of K2, capped at tuple_cap per order with a
    seeded subsample; the attained tuple is recorded.  The bound is over the
    sampled tuples only, not the continuum.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    best = CkEstimate(-np.inf, 0, 0, (), 0, False)
    evaluated = 0
    capped = False
    for i in range(k + 1):
        total = K1.n * K2.n ** i
        capped = capped or total > tuple_cap
        for b, combo in _tuple_indices(K1.n, K2.n, i, tuple_cap, seed + i):
            dirs = [K2.centers[t] for t in combo]
            d = directional_derivative(f, K1.centers[b], dirs, stencil)
            val = _metric_value(p_out, d)
            evaluated += 1
            if val > best.value:
                best = CkEstimate(val, i, b, combo, 0, False)
    return CkEstimate(best.value, best.order, best.base_index, best.dir_indices,
                      evaluated, capped)


def _metric_value(p_out: Metric, x: GridFunction) -> float:
    zero = GridFunction.zero(x.grid)
    return _metric_dist(p_out, x, zero)


def chain_check(f: Callable[[GridFunction], GridFunction],
                T: LinearOperatorMatrix, x: GridFunction,
                dirs: Sequence[GridFunction], p_out: Metric,
                stencil: DerivativeStencil = DerivativeStencil()) -> float:
    """Residual of the linear-precomposition identity for derivatives.

    Compares the finite-difference derivative of f o T at x along dirs with
    the derivative of f at T(x) along the mapped directions; for smooth f the
    residual scales like the square of the step.
    """
    lhs = directional_derivative(lambda u: f(T(u)), x, dirs, stencil)
    rhs = directional_derivative(f, T(x), [T(v) for v in dirs], stencil)
    return _metric_dist(p_out, lhs, rhs)
