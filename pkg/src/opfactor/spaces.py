"""Discretized function-space elements, seminorm families, nets, and moduli.

Everything downstream works with vectors of samples on a fixed uniform 1D
grid.  Seminorms give the locally convex structure, compact families are
handled through finite seeded nets, and uniform continuity is tracked by
empirical concave moduli.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Union

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatchError, UnsupportedKindError

SUP = "sup"
WEIGHTED_L2 = "weighted_l2"
SOBOLEV = "sobolev"


@dataclass(frozen=True)
class Grid:
    """Uniform partition of [a, b] with n points (n >= 2, a < b)."""

    a: float
    b: float
    n: int

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"grid needs a < b, got [{self.a}, {self.b}]")
        if self.n < 2:
            raise ValueError(f"grid needs at least 2 points, got {self.n}")

    @property
    def coords(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.n)

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n - 1)

    @property
    def cell_weights(self) -> np.ndarray:
        """Per-point measure normalized to unit total mass."""
        return np.full(self.n, 1.0 / self.n)

    @property
    def tag(self) -> str:
        return f"grid[{self.a:g},{self.b:g}]x{self.n}"


@dataclass(frozen=True)
class GridFunction:
    """Sampled element of a function space: values on a uniform grid."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError(f"values must be 1D, got shape {vals.shape}")
        if vals.shape[0] != self.grid.n:
            raise DimensionMismatchError(self.grid.n, vals.shape[0], "grid values")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check_same_grid(other)
        return GridFunction(self.values + other.values, self.grid)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check_same_grid(other)
        return GridFunction(self.values - other.values, self.grid)

    def __mul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.values * float(scalar), self.grid)

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction(-self.values, self.grid)

    def _check_same_grid(self, other: "GridFunction") -> None:
        if self.grid != other.grid:
            raise DimensionMismatchError(self.grid.tag, other.grid.tag, "grid")

    def to_json(self) -> str:
        return json.dumps(
            {"a": self.grid.a, "b": self.grid.b, "values": self.values.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "GridFunction":
        obj = json.loads(text)
        vals = np.asarray(obj["values"], dtype=float)
        return cls(vals, Grid(float(obj["a"]), float(obj["b"]), len(vals)))

    @classmethod
    def zero(cls, grid: Grid) -> "GridFunction":
        return cls(np.zeros(grid.n), grid)


@dataclass(frozen=True)
class Seminorm:
    """Named seminorm on grid functions.

    Kinds:
      sup           max |values|
      weighted_l2   sqrt(sum w_j values_j^2), w_j >= 0
      sobolev       cell-L2 norm plus lam * cell-L2 of the r-th forward
                    difference divided by h^r
    """

    kind: str
    name: str
    weights: np.ndarray | None = None
    order: int = 0
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in (SUP, WEIGHTED_L2, SOBOLEV):
            raise UnsupportedKindError(f"unknown seminorm kind {self.kind!r}")
        if self.kind == WEIGHTED_L2:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weighted_l2 needs a 1D vector of finite weights >= 0")
            w = w.copy()
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        if self.kind == SOBOLEV:
            if self.order < 0:
                raise ValueError("sobolev difference order must be >= 0")
            if self.lam < 0:
                raise ValueError("sobolev weight must be >= 0")

    @classmethod
    def sup(cls, name: str = "sup") -> "Seminorm":
        return cls(SUP, name)

    @classmethod
    def weighted_l2(cls, weights, name: str = "wl2") -> "Seminorm":
        return cls(WEIGHTED_L2, name, weights=np.asarray(weights, dtype=float))

    @classmethod
    def sobolev(cls, order: int, lam: float, name: str = "sobolev") -> "Seminorm":
        return cls(SOBOLEV, name, order=int(order), lam=float(lam))

    def __call__(self, x: GridFunction) -> float:
        return eval_seminorm(self, x)

    def distance(self, x: GridFunction, y: GridFunction) -> float:
        return eval_seminorm(self, x - y)


def eval_seminorm(p: Seminorm, x: GridFunction) -> float:
    """Evaluate seminorm p on grid function x."""
    v = x.values
    if p.kind == SUP:
        return float(np.max(np.abs(v))) if v.size else 0.0
    if p.kind == WEIGHTED_L2:
        if p.weights.shape[0] != v.shape[0]:
            raise DimensionMismatchError(p.weights.shape[0], v.shape[0],
                                         f"seminorm {p.name!r} weights")
        return float(np.sqrt(np.sum(p.weights * v * v)))
    # sobolev
    mu = x.grid.cell_weights[0]
    base = math.sqrt(float(np.sum(v * v)) * mu)
    if p.order == 0:
        return base + p.lam * base
    if p.order >= v.shape[0]:
        raise DimensionMismatchError(p.order + 1, v.shape[0],
                                     f"seminorm {p.name!r} difference order")
    d = np.diff(v, n=p.order)
    diff_part = math.sqrt(float(np.sum(d * d)) * mu) / x.grid.h ** p.order
    return base + p.lam * diff_part


def quotient_coords(p: Seminorm, x: GridFunction) -> np.ndarray:
    """Coordinates of x in the normed quotient space of p.

    Realized as coordinate rescaling: identity for sup, componentwise
    sqrt(w_j) * values_j for weighted_l2 with zero-weight coordinates
    dropped.  For the weighted_l2 kind the Euclidean norm of the result
    equals p(x) exactly.
    """
    if p.kind == SUP:
        return np.array(x.values, dtype=float)
    if p.kind == WEIGHTED_L2:
        if p.weights.shape[0] != x.values.shape[0]:
            raise DimensionMismatchError(p.weights.shape[0], x.values.shape[0],
                                         f"seminorm {p.name!r} weights")
        keep = p.weights > 0
        return np.sqrt(p.weights[keep]) * x.values[keep]
    raise UnsupportedKindError(
        f"quotient coordinates are not defined for kind {p.kind!r}; "
        "route derivative structure through the product construction instead"
    )


@dataclass(frozen=True)
class SeminormFamily:
    """Finite ordered family of seminorms defining the space topology."""

    seminorms: tuple[Seminorm, ...]
    separating: bool = True

    def __post_init__(self):
        sems = tuple(self.seminorms)
        if not sems:
            raise ValueError("seminorm family must be nonempty")
        names = [p.name for p in sems]
        if len(set(names)) != len(names):
            raise ValueError(f"seminorm names must be unique, got {names}")
        object.__setattr__(self, "seminorms", sems)

    def __len__(self) -> int:
        return len(self.seminorms)

    def __iter__(self):
        return iter(self.seminorms)

    def max_value(self, x: GridFunction) -> float:
        return max(eval_seminorm(p, x) for p in self.seminorms)

    def distance(self, x: GridFunction, y: GridFunction) -> float:
        return self.max_value(x - y)

    def check_separating(self, grid: Grid) -> bool:
        """Probe the canonical basis: every e_j must be seen by some seminorm."""
        for j in range(grid.n):
            e = np.zeros(grid.n)
            e[j] = 1.0
            gf = GridFunction(e, grid)
            if all(eval_seminorm(p, gf) == 0.0 for p in self.seminorms):
                return False
        return True


Metric = Union[Seminorm, SeminormFamily]


def _metric_name(metric: Metric) -> str:
    if isinstance(metric, SeminormFamily):
        return "+".join(p.name for p in metric.seminorms)
    return metric.name


def _distances_to_point(metric: Metric, mat: np.ndarray, point: np.ndarray,
                        grid: Grid) -> np.ndarray:
    """Vectorized metric distances from each row of mat to point."""
    return _cross_distances(metric, mat, point[None, :], grid)[:, 0]


def _cross_distances(metric: Metric, A: np.ndarray, B: np.ndarray,
                     grid: Grid) -> np.ndarray:
    """Metric distance matrix between the rows of A and the rows of B."""
    if isinstance(metric, SeminormFamily):
        per = [_cross_distances(p, A, B, grid) for p in metric.seminorms]
        return np.max(np.stack(per, axis=0), axis=0)
    p = metric
    if p.kind == SUP:
        return cdist(A, B, "chebyshev")
    if p.kind == WEIGHTED_L2:
        if p.weights.shape[0] != A.shape[1]:
            raise DimensionMismatchError(p.weights.shape[0], A.shape[1],
                                         f"seminorm {p.name!r} weights")
        root = np.sqrt(p.weights)
        return cdist(A * root, B * root, "euclidean")
    # sobolev
    mu = grid.cell_weights[0]
    base = cdist(A, B, "euclidean") * math.sqrt(mu)
    if p.order == 0:
        return base * (1.0 + p.lam)
    dA = np.diff(A, n=p.order, axis=1)
    dB = np.diff(B, n=p.order, axis=1)
    diff_part = cdist(dA, dB, "euclidean") * math.sqrt(mu) / grid.h ** p.order
    return base + p.lam * diff_part


@dataclass(frozen=True)
class ModulusData:
    """Piecewise-linear modulus of continuity with omega(0) = 0.

    Beyond the last breakpoint the final segment slope is extended, which
    keeps the function concave and nondecreasing when the flag is set.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    concave: bool = True

    def __post_init__(self):
        t = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1 or t.size == 0:
            raise ValueError("breakpoints and values must be matching 1D arrays")
        if t[0] != 0.0 or v[0] != 0.0:
            raise ValueError("modulus must start at (0, 0)")
        if np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(np.diff(v) < 0) or np.any(v < 0):
            raise ValueError("modulus values must be nonnegative and nondecreasing")
        if self.concave and t.size > 2:
            slopes = np.diff(v) / np.diff(t)
            if np.any(np.diff(slopes) > 1e-12 * (1.0 + slopes[:-1])):
                raise ValueError("modulus flagged concave but slopes increase")
        t = t.copy()
        v = v.copy()
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "breakpoints", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def zero(cls) -> "ModulusData":
        return cls(np.array([0.0]), np.array([0.0]))

    @property
    def final_slope(self) -> float:
        t, v = self.breakpoints, self.values
        if t.size < 2:
            return 0.0
        return float((v[-1] - v[-2]) / (t[-1] - t[-2]))

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        out = np.interp(t_arr, self.breakpoints, self.values)
        last = self.breakpoints[-1]
        beyond = t_arr > last
        if np.any(beyond):
            out = np.where(beyond, self.values[-1] + self.final_slope * (t_arr - last), out)
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out

    def scaled(self, factor: float) -> "ModulusData":
        return ModulusData(self.breakpoints, self.values * float(factor), self.concave)

    def inverse(self, s: float) -> float:
        """Largest t with omega(t) <= s (math.inf when omega stays below s)."""
        if s < 0:
            return 0.0
        t, v = self.breakpoints, self.values
        if s >= v[-1]:
            slope = self.final_slope
            if slope <= 0:
                return math.inf
            return float(t[-1] + (s - v[-1]) / slope)
        i = int(np.searchsorted(v, s, side="right"))
        # v[i] > s >= v[i-1]; interpolate inside segment (i-1, i)
        return float(t[i - 1] + (s - v[i - 1]) * (t[i] - t[i - 1]) / (v[i] - v[i - 1]))

    def to_dict(self) -> dict:
        return {
            "breakpoints": self.breakpoints.tolist(),
            "values": self.values.tolist(),
            "concave": self.concave,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModulusData":
        return cls(np.asarray(obj["breakpoints"], dtype=float),
                   np.asarray(obj["values"], dtype=float),
                   bool(obj["concave"]))


def concave_majorant(ts, ss) -> ModulusData:
    """Smallest concave nondecreasing piecewise-linear majorant through (0,0).

    Pairs with t <= 0 carry no slope information and are dropped; negative
    increments are clipped at zero.
    """
    ts = np.asarray(ts, dtype=float)
    ss = np.clip(np.asarray(ss, dtype=float), 0.0, None)
    keep = ts > 0
    ts, ss = ts[keep], ss[keep]
    if ts.size == 0:
        return ModulusData.zero()
    order = np.argsort(ts, kind="stable")
    ts, ss = ts[order], ss[order]
    # collapse duplicate abscissae, then running max makes the cloud monotone
    uniq_t, idx = np.unique(ts, return_index=True)
    max_s = np.maximum.reduceat(ss, idx)
    run = np.maximum.accumulate(max_s)
    pts_t = np.concatenate(([0.0], uniq_t))
    pts_s = np.concatenate(([0.0], run))
    # upper hull (Andrew monotone chain), keeps slopes nonincreasing
    hull: list[tuple[float, float]] = []
    for t, s in zip(pts_t, pts_s):
        while len(hull) >= 2:
            (t0, s0), (t1, s1) = hull[-2], hull[-1]
            if (t1 - t0) * (s - s0) - (s1 - s0) * (t - t0) >= 0:
                hull.pop()
            else:
                break
        hull.append((t, s))
    arr = np.asarray(hull)
    return ModulusData(arr[:, 0], arr[:, 1])


class FamilySampler(Protocol):
    """Deterministic seeded generator of members of a compact family."""

    def draw(self, count: int, seed: int) -> list[GridFunction]: ...


@dataclass(frozen=True)
class CompactSample:
    """Finite net of a compact family plus its sampler and moduli."""

    centers: tuple[GridFunction, ...]
    delta: dict[str, float]
    sampler: FamilySampler
    seed: int
    modulus: dict[str, ModulusData] = field(default_factory=dict)

    def __post_init__(self):
        if not self.centers:
            raise ValueError("compact sample needs at least one center")

    @property
    def n(self) -> int:
        return len(self.centers)

    @property
    def grid(self) -> Grid:
        return self.centers[0].grid

    def center_matrix(self) -> np.ndarray:
        return np.stack([c.values for c in self.centers])


@dataclass(frozen=True)
class LinearOperatorMatrix:
    """Dense matrix realization of a continuous linear operator."""

    matrix: np.ndarray
    domain_tag: str
    codomain_tag: str
    domain_grid: Grid | None = None
    codomain_grid: Grid | None = None

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        if mat.ndim != 2:
            raise ValueError(f"operator matrix must be 2D, got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ValueError("operator matrix entries must be finite")
        if self.domain_grid is not None and mat.shape[1] != self.domain_grid.n:
            raise DimensionMismatchError(self.domain_grid.n, mat.shape[1],
                                         "operator domain")
        if self.codomain_grid is not None and mat.shape[0] != self.codomain_grid.n:
            raise DimensionMismatchError(self.codomain_grid.n, mat.shape[0],
                                         "operator codomain")
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply_values(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        if vec.shape[-1] != self.matrix.shape[1]:
            raise DimensionMismatchError(self.matrix.shape[1], vec.shape[-1],
                                         f"operator {self.domain_tag} input")
        return vec @ self.matrix.T

    def __call__(self, x: GridFunction) -> GridFunction:
        if self.codomain_grid is None:
            raise ValueError("operator has no codomain grid; use apply_values")
        return GridFunction(self.apply_values(x.values), self.codomain_grid)


def build_delta_net(sampler: FamilySampler, p: Metric, delta: float,
                    budget: int, seed: int) -> CompactSample:
    """Greedy farthest-point net of `budget` seeded draws at radius delta.

    The first drawn point seeds the net; the drawn point farthest from the
    current centers is added while that distance exceeds delta.  The result
    covers the drawn set at radius delta (fresh draws are certified only
    statistically, by `verify`-style resampling).
    """
    if budget < 1:
        raise ValueError(f"draw budget must be >= 1, got {budget}")
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    draws = sampler.draw(budget, seed)
    grid = draws[0].grid
    mat = np.stack([d.values for d in draws])
    chosen = [0]
    dist = _distances_to_point(p, mat, mat[0], grid)
    while len(chosen) < budget:
        j = int(np.argmax(dist))
        if dist[j] <= delta:
            break
        chosen.append(j)
        dist = np.minimum(dist, _distances_to_point(p, mat, mat[j], grid))
    names = ([q.name for q in p.seminorms] if isinstance(p, SeminormFamily)
             else [p.name])
    return CompactSample(
        centers=tuple(draws[i] for i in chosen),
        delta={name: float(delta) for name in names},
        sampler=sampler,
        seed=seed,
    )


def collect_increment_pairs(f: Callable[[GridFunction], GridFunction],
                            sample: CompactSample, p_in: Metric, p_out: Metric,
                            pair_budget: int, seed: int | None = None):
    """Observed (input distance, output distance) pairs for f on the family.

    Uses pair_budget random sampler pairs plus all center pairs.  Pairs at
    input distance zero are kept; `concave_majorant` drops them later since
    they carry no slope information.
    """
    if pair_budget < 1:
        raise ValueError(f"pair budget must be >= 1, got {pair_budget}")
    if seed is None:
        seed = sample.seed + 1
    draws = sample.sampler.draw(2 * pair_budget, seed)
    pts = list(draws) + list(sample.centers)
    images = [f(x) for x in pts]
    ts, ss = [], []
    for i in range(pair_budget):
        x, y = pts[2 * i], pts[2 * i + 1]
        fx, fy = images[2 * i], images[2 * i + 1]
        ts.append(_metric_dist(p_in, x, y))
        ss.append(_metric_dist(p_out, fx, fy))
    n_draws = len(draws)
    for i in range(sample.n):
        for j in range(i + 1, sample.n):
            ts.append(_metric_dist(p_in, pts[n_draws + i], pts[n_draws + j]))
            ss.append(_metric_dist(p_out, images[n_draws + i], images[n_draws + j]))
    return np.asarray(ts), np.asarray(ss)


def _metric_dist(p: Metric, x: GridFunction, y: GridFunction) -> float:
    return p.distance(x, y)


def estimate_modulus(f: Callable[[GridFunction], GridFunction],
                     sample: CompactSample, p_in: Metric, p_out: Metric,
                     pair_budget: int, seed: int | None = None) -> ModulusData:
    """Empirical modulus of continuity of f over the sampled family.

    Smallest concave nondecreasing piecewise-linear majorant of the observed
    increment cloud with omega(0) = 0.  Callers inflate by a safety factor
    before relying on it; the factor is recorded in certificates.
    """
    ts, ss = collect_increment_pairs(f, sample, p_in, p_out, pair_budget, seed)
    return concave_majorant(ts, ss)


def seminorm_to_dict(p: Seminorm) -> dict:
    out = {"kind": p.kind, "name": p.name}
    if p.kind == WEIGHTED_L2:
        out["weights"] = p.weights.tolist()
    if p.kind == SOBOLEV:
        out["order"] = p.order
        out["lam"] = p.lam
    return out


def seminorm_from_dict(obj: dict) -> Seminorm:
    kind = obj["kind"]
    if kind == WEIGHTED_L2:
        return Seminorm.weighted_l2(obj["weights"], obj["name"])
    if kind == SOBOLEV:
        return Seminorm.sobolev(obj["order"], obj["lam"], obj["name"])
    return Seminorm.sup(obj["name"])


def family_to_dict(fam: SeminormFamily) -> dict:
    return {"seminorms": [seminorm_to_dict(p) for p in fam.seminorms],
            "separating": fam.separating}


def family_from_dict(obj: dict) -> SeminormFamily:
    return SeminormFamily(tuple(seminorm_from_dict(o) for o in obj["seminorms"]),
                          separating=bool(obj["separating"]))
