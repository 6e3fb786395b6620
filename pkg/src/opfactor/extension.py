"""Latent maps: modulus-preserving extension and polynomial least squares.

The continuous route extends site data to all of R^m by the inf-convolution
formula, which interpolates exactly and inherits the (concave) modulus.  The
smooth route fits a total-degree polynomial to values and finite-difference
derivative targets.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import IncompatibleModulusError, RankDeficientError
from .spaces import ModulusData

INF_FORM = "inf"
MIDPOINT = "midpoint"


@dataclass(frozen=True)
class McShaneMap:
    """Uniformly continuous map R^m -> R^{n_F} extending site data.

    Per output coordinate c:
        g_c(z) = clip(min_j [ y_{j,c} + omega(|z - z_j|) ], lo_c, hi_c)
    with lo_c/hi_c the data range.  The midpoint variant averages this with
    the mirrored sup form.
    """

    sites: np.ndarray
    values: np.ndarray
    modulus: ModulusData
    lo: np.ndarray
    hi: np.ndarray
    variant: str = INF_FORM

    def __post_init__(self):
        for name in ("sites", "values", "lo", "hi"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.sites.ndim != 2 or self.values.ndim != 2:
            raise ValueError("sites and values must be 2D arrays")
        if self.sites.shape[0] != self.values.shape[0]:
            raise ValueError("sites and values must have matching row counts")
        if self.variant not in (INF_FORM, MIDPOINT):
            raise ValueError(f"unknown extension variant {self.variant!r}")

    @property
    def m(self) -> int:
        return self.sites.shape[1]

    @property
    def n_F(self) -> int:
        return self.values.shape[1]

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return mcshane_eval(self, z)


def _pairwise_value_gaps(values: np.ndarray) -> np.ndarray:
    """Max over output coordinates of |y_j - y_k|, as an N x N matrix."""
    n = values.shape[0]
    if values.shape[1] == 0:
        return np.zeros((n, n))
    return cdist(values, values, "chebyshev")


def mcshane_build(sites: np.ndarray, values: np.ndarray, modulus: ModulusData,
                  variant: str = INF_FORM) -> McShaneMap:
    """Validate the compatibility condition and assemble the extension.

    Requires a concave nondecreasing modulus with omega(0) = 0 that
    majorizes every per-coordinate data gap:
        |y_{j,c} - y_{k,c}| <= omega(|z_j - z_k|)  for all j, k, c.
    A violation means exact interpolation is impossible and signals that the
    modulus safety factor must grow.
    """
    sites = np.asarray(sites, dtype=float)
    values = np.asarray(values, dtype=float)
    if sites.ndim != 2:
        raise ValueError("sites must be N x m")
    if values.ndim != 2:
        raise ValueError("values must be N x n_F")
    if not modulus.concave:
        raise ValueError("extension requires a concave-majorant modulus")
    dists = cdist(sites, sites, "euclidean") if sites.shape[1] else np.zeros(
        (sites.shape[0], sites.shape[0]))
    gaps = _pairwise_value_gaps(values)
    bound = modulus(dists)
    scale = float(np.abs(values).max(initial=0.0))
    slack = 1e-12 * (1.0 + scale)
    excess = gaps - bound - slack
    worst = np.unravel_index(int(np.argmax(excess)), excess.shape)
    if excess[worst] > 0:
        j, k = int(worst[0]), int(worst[1])
        raise IncompatibleModulusError(
            pair=(j, k), distance=float(dists[j, k]),
            gap=float(gaps[j, k]), bound=float(bound[j, k]),
        )
    lo = values.min(axis=0) if values.shape[0] else np.zeros(values.shape[1])
    hi = values.max(axis=0) if values.shape[0] else np.zeros(values.shape[1])
    return McShaneMap(sites=sites, values=values, modulus=modulus,
                      lo=lo, hi=hi, variant=variant)


def mcshane_eval(g: McShaneMap, z: np.ndarray) -> np.ndarray:
    """Evaluate the extension at one latent point."""
    return mcshane_eval_many(g, np.asarray(z, dtype=float)[None, :])[0]


def mcshane_eval_many(g: McShaneMap, Z: np.ndarray, block: int = 512) -> np.ndarray:
    """Evaluate the extension at each row of Z (B x m) -> B x n_F."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != g.m:
        raise ValueError(f"expected query shape (B, {g.m}), got {Z.shape}")
    out = np.empty((Z.shape[0], g.n_F))
    for start in range(0, Z.shape[0], block):
        stop = min(start + block, Z.shape[0])
        if g.m:
            d = cdist(Z[start:stop], g.sites, "euclidean")
        else:
            d = np.zeros((stop - start, g.sites.shape[0]))
        wd = g.modulus(d)[:, :, None]
        low = np.min(g.values[None, :, :] + wd, axis=1)
        if g.variant == MIDPOINT:
            high = np.max(g.values[None, :, :] - wd, axis=1)
            low = 0.5 * (low + high)
        out[start:stop] = np.clip(low, g.lo[None, :], g.hi[None, :])
    return out


def monomial_exponents(n_vars: int, degree: int) -> np.ndarray:
    """Exponent tuples of total degree <= degree in graded lexicographic order.

    Terms are sorted by total degree; ties are broken lexicographically with
    earlier variables dominating (e.g. for two variables: 1, z1, z2, z1^2,
    z1 z2, z2^2, ...).
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    if n_vars == 0:
        return np.zeros((1, 0), dtype=int)
    exps = []
    for total in range(degree + 1):
        level = [e for e in itertools.product(range(total + 1), repeat=n_vars)
                 if sum(e) == total]
        level.sort(key=lambda e: tuple(-x for x in e))
        exps.extend(level)
    return np.asarray(exps, dtype=int)


def _monomial_rows(exponents: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Design-matrix rows: each monomial evaluated at each row of Z."""
    Z = np.asarray(Z, dtype=float)
    n_terms = exponents.shape[0]
    rows = np.ones((Z.shape[0], n_terms))
    for t in range(n_terms):
        for var, e in enumerate(exponents[t]):
            if e:
                rows[:, t] *= Z[:, var] ** int(e)
    return rows


def _derivative_row(exponents: np.ndarray, z: np.ndarray,
                    dirs: Sequence[np.ndarray]) -> np.ndarray:
    """Row of D^i(monomial)(z)(v_1,...,v_i) for each monomial.

    Each directional derivative of a monomial is expanded symbolically over
    exponent tuples, so the row is exact.
    """
    z = np.asarray(z, dtype=float)
    row = np.empty(exponents.shape[0])
    for t, exp in enumerate(exponents):
        terms = {tuple(int(e) for e in exp): 1.0}
        for v in dirs:
            v = np.asarray(v, dtype=float)
            new: dict[tuple, float] = {}
            for mono, coef in terms.items():
                for var, e in enumerate(mono):
                    if e and v[var] != 0.0:
                        lowered = list(mono)
                        lowered[var] -= 1
                        key = tuple(lowered)
                        new[key] = new.get(key, 0.0) + coef * e * v[var]
            terms = new
            if not terms:
                break
        total = 0.0
        for mono, coef in terms.items():
            val = coef
            for var, e in enumerate(mono):
                if e:
                    val *= z[var] ** e
            total += val
        row[t] = total
    return row


@dataclass(frozen=True)
class PolyMap:
    """Multivariate polynomial R^m -> R^{n_F} of total degree <= degree.

    Coefficients are stored against the graded lexicographic monomial basis
    of `monomial_exponents`.
    """

    exponents: np.ndarray
    coeffs: np.ndarray
    degree: int
    n_vars: int

    def __post_init__(self):
        exps = np.asarray(self.exponents, dtype=int).copy()
        coeffs = np.asarray(self.coeffs, dtype=float).copy()
        if coeffs.ndim != 2 or coeffs.shape[0] != exps.shape[0]:
            raise ValueError("coeffs must be n_terms x n_F")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("polynomial coefficients must be finite")
        exps.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def m(self) -> int:
        return self.n_vars

    @property
    def n_F(self) -> int:
        return self.coeffs.shape[1]

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.eval_many(np.asarray(z, dtype=float)[None, :])[0]

    def eval_many(self, Z: np.ndarray) -> np.ndarray:
        return _monomial_rows(self.exponents, Z) @ self.coeffs

    def derivative(self, z: np.ndarray, dirs: Sequence[np.ndarray]) -> np.ndarray:
        """Analytic D^i g(z)(v_1,...,v_i) for i = len(dirs)."""
        return _derivative_row(self.exponents, z, dirs) @ self.coeffs

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        """n_F x m matrix of first derivatives at z."""
        cols = []
        eye = np.eye(self.n_vars)
        for t in range(self.n_vars):
            cols.append(self.derivative(z, [eye[t]]))
        return (np.stack(cols, axis=1) if cols
                else np.zeros((self.n_F, 0)))


def poly_fit(sites: np.ndarray, values: np.ndarray, degree: int,
             ridge: float = 0.0,
             derivative_data: Iterable[tuple] = ()) -> PolyMap:
    """Least-squares polynomial fit to values and derivative targets.

    derivative_data entries are (point, dirs, target) with target in R^{n_F};
    each contributes one exact linear constraint row on the coefficients.
    With ridge = 0 the normal system must have full column rank, otherwise a
    RankDeficientError suggests regularizing.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    n_vars = sites.shape[1]
    exponents = monomial_exponents(n_vars, degree)
    rows = [_monomial_rows(exponents, sites)]
    targets = [values]
    for point, dirs, target in derivative_data:
        rows.append(_derivative_row(exponents, np.asarray(point, dtype=float),
                                    [np.asarray(v, dtype=float) for v in dirs])[None, :])
        targets.append(np.asarray(target, dtype=float)[None, :])
    A = np.vstack(rows)
    B = np.vstack(targets)
    n_terms = exponents.shape[0]
    if ridge > 0:
        A = np.vstack([A, math.sqrt(ridge) * np.eye(n_terms)])
        B = np.vstack([B, np.zeros((n_terms, B.shape[1]))])
    coeffs, _, rank, _ = np.linalg.lstsq(A, B, rcond=None)
    if ridge == 0 and rank < n_terms:
        raise RankDeficientError(
            f"normal system rank {rank} < {n_terms} unknowns; add sites, "
            "lower the degree, or pass ridge > 0"
        )
    return PolyMap(exponents=exponents, coeffs=coeffs, degree=int(degree),
                   n_vars=n_vars)
