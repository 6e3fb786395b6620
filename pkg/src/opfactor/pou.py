"""Partitions of unity over ball covers and the span-based decoder stage."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import OutsideCoverError
from .spaces import (
    CompactSample,
    Grid,
    GridFunction,
    LinearOperatorMatrix,
    Metric,
    Seminorm,
    SeminormFamily,
    _distances_to_point,
    _metric_name,
)

HAT = "hat"
SMOOTH = "smooth"


@dataclass(frozen=True)
class Bump:
    """Radial profile used to build partition weights.

    hat:    t -> max(0, 1 - t)
    smooth: t -> exp(-1 / (1 - t^2)) for |t| < 1, else 0 (C-infinity)
    """

    kind: str
    scale: float

    def __post_init__(self):
        if self.kind not in (HAT, SMOOTH):
            raise ValueError(f"unknown bump kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError(f"bump scale must be positive, got {self.scale}")

    @classmethod
    def hat(cls, scale: float) -> "Bump":
        return cls(HAT, scale)

    @classmethod
    def smooth(cls, scale: float) -> "Bump":
        return cls(SMOOTH, scale)

    def profile(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == HAT:
            return np.maximum(0.0, 1.0 - t)
        inside = np.abs(t) < 1.0
        out = np.zeros_like(t)
        with np.errstate(divide="ignore", over="ignore"):
            expo = np.where(inside, -1.0 / np.maximum(1.0 - t * t, 1e-300), 0.0)
        out[inside] = np.exp(expo[inside])
        return out


@dataclass(frozen=True)
class Partition:
    """Normalized bumps centered at the net points of a compact sample."""

    sample: CompactSample
    bump: Bump
    metric: Metric

    @property
    def delta(self) -> float:
        return self.bump.scale

    @property
    def n(self) -> int:
        return self.sample.n


def eval_partition(part: Partition, x: GridFunction) -> np.ndarray:
    """Weights h_i(x) = bump(d_i / delta) / sum_j bump(d_j / delta).

    Raises OutsideCoverError when every bump vanishes at x.
    """
    mat = part.sample.center_matrix()
    d = _distances_to_point(part.metric, mat, x.values, x.grid)
    raw = part.bump.profile(d / part.delta)
    total = float(raw.sum())
    if total <= 0.0:
        raise OutsideCoverError(float(d.min()), part.delta)
    return raw / total


@dataclass(frozen=True)
class Decoder:
    """Orthonormal basis of the span of the center images, with coordinates.

    basis columns are orthonormal in the Euclidean inner product on grid
    values; coords row i holds the coordinates of f(x_i) in that basis.
    """

    basis: LinearOperatorMatrix
    coords: np.ndarray
    rank_tol: float

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != self.basis.matrix.shape[1]:
            raise ValueError("coords must be N x n_F matching the basis")
        coords = coords.copy()
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def n_F(self) -> int:
        return self.basis.matrix.shape[1]

    @property
    def codomain_grid(self) -> Grid:
        return self.basis.codomain_grid

    def reconstruct(self, c: np.ndarray) -> GridFunction:
        return GridFunction(self.basis.matrix @ np.asarray(c, dtype=float),
                            self.codomain_grid)

    def project_coords(self, y: GridFunction) -> np.ndarray:
        """Best-approximation coordinates of y in the decoder span."""
        return self.basis.matrix.T @ y.values


def build_decoder(f: Callable[[GridFunction], GridFunction],
                  sample: CompactSample, rank_tol: float) -> Decoder:
    """Evaluate f at the net centers and orthonormalize the image span.

    Pivoted modified Gram-Schmidt with one reorthogonalization pass;
    directions whose residual Euclidean norm falls below rank_tol are
    discarded, so n_F <= N.
    """
    if not rank_tol > 0:
        raise ValueError(f"rank_tol must be positive, got {rank_tol}")
    images = []
    for idx, center in enumerate(sample.centers):
        try:
            images.append(f(center))
        except Exception as exc:
            raise type(exc)(f"operator evaluation failed at center {idx}: {exc}") from exc
    out_grid = images[0].grid
    Y = np.stack([g.values for g in images])
    residual = Y.copy()
    basis_rows: list[np.ndarray] = []
    while True:
        norms = np.linalg.norm(residual, axis=1)
        j = int(np.argmax(norms))
        if norms[j] < rank_tol:
            break
        q = residual[j] / norms[j]
        for prev in basis_rows:  # reorthogonalize for a clean Gram matrix
            q = q - (q @ prev) * prev
        q = q / np.linalg.norm(q)
        basis_rows.append(q)
        residual = residual - np.outer(residual @ q, q)
    S = (np.stack(basis_rows, axis=1) if basis_rows
         else np.zeros((out_grid.n, 0)))
    basis = LinearOperatorMatrix(
        S,
        domain_tag=f"latent^{S.shape[1]}",
        codomain_tag=out_grid.tag,
        codomain_grid=out_grid,
    )
    return Decoder(basis=basis, coords=Y @ S, rank_tol=float(rank_tol))


def eval_blend(dec: Decoder, part: Partition, x: GridFunction) -> GridFunction:
    """Partition-weighted combination of the center images at x.

    Returns basis @ (sum_i h_i(x) coords_i); lies in the decoder span by
    construction and reproduces f(x_i) at isolated centers.
    """
    h = eval_partition(part, x)
    return dec.reconstruct(h @ dec.coords)
