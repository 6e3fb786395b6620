"""Concrete operators and compact families exercising every pipeline path."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solveh_banded

from .errors import ConfigError, DimensionMismatchError
from .spaces import Grid, GridFunction

OPERATOR_KINDS = ("identity", "scale", "shift", "antiderivative", "poisson1d",
                  "pointwise")
POINTWISE_SIGMAS = ("square", "sin", "relu", "tanh")
FAMILY_KINDS = ("fourier_ball", "bump_family", "finite_set")


@dataclass(frozen=True)
class OperatorSpec:
    """Deterministic benchmark operator on a fixed grid."""

    kind: str
    grid: Grid
    alpha: float = 1.0       # scale factor
    offset: float = 0.0      # pointwise shift
    sigma: str = "square"    # pointwise nonlinearity

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ConfigError(f"unknown operator kind {self.kind!r}", "operator")
        if self.kind == "pointwise" and self.sigma not in POINTWISE_SIGMAS:
            raise ConfigError(f"unknown pointwise sigma {self.sigma!r}", "operator")

    def __call__(self, u: GridFunction) -> GridFunction:
        return eval_operator(self, u)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "offset": self.offset,
                "sigma": self.sigma,
                "grid": {"a": self.grid.a, "b": self.grid.b, "points": self.grid.n}}

    @classmethod
    def from_dict(cls, obj: dict) -> "OperatorSpec":
        g = obj["grid"]
        return cls(kind=obj["kind"],
                   grid=Grid(float(g["a"]), float(g["b"]), int(g["points"])),
                   alpha=float(obj.get("alpha", 1.0)),
                   offset=float(obj.get("offset", 0.0)),
                   sigma=obj.get("sigma", "square"))


def _cumulative_trapezoid(values: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(values)
    out[0] = 0.0
    np.cumsum(0.5 * h * (values[1:] + values[:-1]), out=out[1:])
    return out


def _poisson_solve(src: np.ndarray, h: float) -> np.ndarray:
    """Solve -u'' = src with zero boundary values by the standard
    second-difference tridiagonal system; exact for the discrete problem."""
    n_int = src.shape[0] - 2
    out = np.zeros_like(src)
    if n_int <= 0:
        return out
    ab = np.zeros((2, n_int))
    ab[0, 1:] = -1.0
    ab[1, :] = 2.0
    out[1:-1] = solveh_banded(ab, src[1:-1] * h * h)
    return out


def eval_operator(spec: OperatorSpec, u: GridFunction) -> GridFunction:
    """Apply the benchmark operator; antiderivative uses the trapezoid
    cumulative sum (exact on piecewise-linear inputs)."""
    if u.grid != spec.grid:
        raise DimensionMismatchError(spec.grid.tag, u.grid.tag, "operator input")
    v = u.values
    if spec.kind == "identity":
        return u
    if spec.kind == "scale":
        return GridFunction(spec.alpha * v, spec.grid)
    if spec.kind == "shift":
        return GridFunction(v + spec.offset, spec.grid)
    if spec.kind == "antiderivative":
        return GridFunction(_cumulative_trapezoid(v, spec.grid.h), spec.grid)
    if spec.kind == "poisson1d":
        return GridFunction(_poisson_solve(v, spec.grid.h), spec.grid)
    sigma = spec.sigma
    if sigma == "square":
        return GridFunction(v * v, spec.grid)
    if sigma == "sin":
        return GridFunction(np.sin(v), spec.grid)
    if sigma == "relu":
        return GridFunction(np.maximum(v, 0.0), spec.grid)
    return GridFunction(np.tanh(v), spec.grid)


@dataclass(frozen=True)
class FamilySpec:
    """Seeded generator of members of a compact input family.

    fourier_ball: sum of the first `modes` sine modes of the normalized
    coordinate with coefficients uniform in [-radius k^-decay,
    radius k^-decay]; bump_family: unit-amplitude Gaussian bumps with
    seeded center and width; finite_set: uniform choice from fixed members.
    """

    kind: str
    grid: Grid
    seed: int = 0
    modes: int = 8
    decay: float = 2.0
    radius: float = 1.0
    width_range: tuple[float, float] = (0.1, 0.3)
    center_range: tuple[float, float] = (0.2, 0.8)
    members: tuple[GridFunction, ...] = ()

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ConfigError(f"unknown family kind {self.kind!r}", "family")
        if self.kind == "fourier_ball" and self.modes < 1:
            raise ConfigError("fourier_ball needs modes >= 1", "family")
        if self.kind == "finite_set" and not self.members:
            raise ConfigError("finite_set needs at least one member", "family")

    @property
    def sup_bound(self) -> float:
        """Declared sup-norm bound satisfied by every member."""
        if self.kind == "fourier_ball":
            ks = np.arange(1, self.modes + 1, dtype=float)
            return float(self.radius * np.sum(ks ** -self.decay))
        if self.kind == "bump_family":
            return 1.0
        return max(float(np.max(np.abs(m.values))) for m in self.members)

    def draw(self, count: int, seed: int | None = None) -> list[GridFunction]:
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        rng = np.random.default_rng(self.seed if seed is None else seed)
        if self.kind == "fourier_ball":
            ks = np.arange(1, self.modes + 1, dtype=float)
            bounds = self.radius * ks ** -self.decay
            coefs = rng.uniform(-bounds, bounds, size=(count, self.modes))
            t_hat = (self.grid.coords - self.grid.a) / (self.grid.b - self.grid.a)
            basis = np.sin(np.pi * np.outer(ks, t_hat))
            return [GridFunction(row, self.grid) for row in coefs @ basis]
        if self.kind == "bump_family":
            centers = rng.uniform(*self.center_range, size=count)
            widths = rng.uniform(*self.width_range, size=count)
            t_hat = (self.grid.coords - self.grid.a) / (self.grid.b - self.grid.a)
            rows = np.exp(-((t_hat[None, :] - centers[:, None]) / widths[:, None]) ** 2)
            return [GridFunction(row, self.grid) for row in rows]
        idx = rng.integers(0, len(self.members), size=count)
        return [self.members[i] for i in idx]

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed,
               "grid": {"a": self.grid.a, "b": self.grid.b, "points": self.grid.n}}
        if self.kind == "fourier_ball":
            out.update(modes=self.modes, decay=self.decay, radius=self.radius)
        elif self.kind == "bump_family":
            out.update(width_range=list(self.width_range),
                       center_range=list(self.center_range))
        else:
            out["members"] = [m.values.tolist() for m in self.members]
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "FamilySpec":
        g = obj["grid"]
        grid = Grid(float(g["a"]), float(g["b"]), int(g["points"]))
        kind = obj["kind"]
        if kind == "fourier_ball":
            return cls(kind, grid, seed=int(obj.get("seed", 0)),
                       modes=int(obj["modes"]), decay=float(obj["decay"]),
                       radius=float(obj["radius"]))
        if kind == "bump_family":
            return cls(kind, grid, seed=int(obj.get("seed", 0)),
                       width_range=tuple(float(x) for x in obj["width_range"]),
                       center_range=tuple(float(x) for x in obj["center_range"]))
        members = tuple(GridFunction(np.asarray(vals, dtype=float), grid)
                        for vals in obj["members"])
        return cls(kind, grid, seed=int(obj.get("seed", 0)), members=members)


def sample_family(spec: FamilySpec, count: int, seed: int | None = None
                  ) -> list[GridFunction]:
    """Draw `count` family members; deterministic given the seed."""
    return spec.draw(count, seed)
