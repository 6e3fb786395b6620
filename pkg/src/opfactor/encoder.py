"""Encoder stage: quotient product map, norm-1 Hilbertization, projection.

The seminorm family is mapped block-by-block into one Euclidean space with
geometric weights so the combined linear map has operator norm at most 1
with respect to the max of the family's seminorms.  A finite-rank
orthogonal projection fitted to the sample images completes the encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    InternalConsistencyError,
    NotSeparatingError,
    UnsupportedKindError,
)
from .spaces import (
    SUP,
    WEIGHTED_L2,
    CompactSample,
    Grid,
    GridFunction,
    SeminormFamily,
)

PCA = "pca"
COORDINATE = "coordinate"


@dataclass(frozen=True)
class Hilbertization:
    """Stacked scaled quotient maps: an injective linear map into R^M.

    Row block k carries the quotient coordinates of seminorm k scaled by
    weight c_k, with sum c_k^2 = 1.  Sup-kind blocks are embedded via the
    unit-mass cell measure (the discrete analogue of the norm-1 identity
    from continuous to square-integrable functions).
    """

    matrix: np.ndarray
    blocks: tuple[tuple[str, int, int], ...]
    weights: tuple[float, ...]
    grid: Grid

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, x) -> np.ndarray:
        vals = x.values if isinstance(x, GridFunction) else np.asarray(x, dtype=float)
        if vals.shape[-1] != self.matrix.shape[1]:
            raise DimensionMismatchError(self.matrix.shape[1], vals.shape[-1],
                                         "hilbertization input")
        return vals @ self.matrix.T

    def pseudo_inverse_matrix(self) -> np.ndarray:
        """Left inverse of the (injective, diagonal-block) map."""
        gram_diag = np.sum(self.matrix * self.matrix, axis=0)
        if np.any(gram_diag <= 0):
            raise InternalConsistencyError("hilbertization lost a coordinate")
        return (self.matrix / gram_diag[None, :]).T


def build_hilbertization(fam: SeminormFamily, grid: Grid) -> Hilbertization:
    """Assemble the weighted quotient product map for a separating family.

    Weight schedule c_k = 2^-k normalized to sum of squares 1; injectivity
    is checked by requiring every grid coordinate to carry positive weight
    in some block.
    """
    for p in fam.seminorms:
        if p.kind not in (SUP, WEIGHTED_L2):
            raise UnsupportedKindError(
                f"hilbertization supports sup and weighted_l2 kinds, got "
                f"{p.kind!r} ({p.name!r})"
            )
    if not fam.separating:
        raise NotSeparatingError("family is not flagged separating")
    raw = 2.0 ** -np.arange(1, len(fam.seminorms) + 1)
    c = raw / np.linalg.norm(raw)
    rows = []
    blocks = []
    covered = np.zeros(grid.n, dtype=bool)
    start = 0
    for ck, p in zip(c, fam.seminorms):
        if p.kind == SUP:
            block = np.diag(np.sqrt(grid.cell_weights)) * ck
            covered[:] = True
        else:
            if p.weights.shape[0] != grid.n:
                raise DimensionMismatchError(grid.n, p.weights.shape[0],
                                             f"seminorm {p.name!r} weights")
            keep = np.flatnonzero(p.weights > 0)
            block = np.zeros((keep.size, grid.n))
            block[np.arange(keep.size), keep] = np.sqrt(p.weights[keep]) * ck
            covered[keep] = True
        rows.append(block)
        blocks.append((p.name, start, start + block.shape[0]))
        start += block.shape[0]
    if not covered.all():
        missing = int(np.flatnonzero(~covered)[0])
        raise NotSeparatingError(
            f"family does not separate points: grid coordinate {missing} has "
            "zero weight in every seminorm"
        )
    return Hilbertization(
        matrix=np.vstack(rows),
        blocks=tuple(blocks),
        weights=tuple(float(x) for x in c),
        grid=grid,
    )


@dataclass(frozen=True)
class Projector:
    """Orthogonal projection of the Hilbertization image onto m directions."""

    basis: np.ndarray
    delta_lat: float
    mode: str = PCA

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim != 2:
            raise ValueError("projector basis must be a 2D array")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def m(self) -> int:
        return self.basis.shape[1]

    def project(self, z: np.ndarray) -> np.ndarray:
        """Projection of z onto the retained subspace, in ambient coords."""
        return (np.asarray(z) @ self.basis) @ self.basis.T

    def coords(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.basis


def fit_projector_to_points(Z: np.ndarray, delta_lat: float,
                            mode: str = PCA) -> np.ndarray:
    """Smallest basis whose projection leaves every row residual < delta_lat.

    pca mode uses leading right-singular directions of Z; coordinate mode
    uses the leading canonical coordinates (a fixed basis chain).
    """
    Z = np.asarray(Z, dtype=float)
    n, M = Z.shape
    if not delta_lat > 0:
        raise ValueError(f"delta_lat must be positive, got {delta_lat}")
    if mode == PCA:
        U, s, Vt = np.linalg.svd(Z, full_matrices=False)
        # rank-1 downdates keep the row residuals accurate to machine
        # precision even when delta_lat sits near round-off
        residual = Z.copy()
        level = np.linalg.norm(residual, axis=1).max(initial=0.0)
        if level < delta_lat:
            return np.zeros((M, 0))
        for r in range(s.shape[0]):
            residual -= np.outer(U[:, r] * s[r], Vt[r])
            level = np.linalg.norm(residual, axis=1).max(initial=0.0)
            if level < delta_lat:
                return np.ascontiguousarray(Vt[: r + 1].T)
        raise InternalConsistencyError(
            f"full-rank projection residual {level:.3e} still >= "
            f"delta_lat={delta_lat:.3e}"
        )
    if mode == COORDINATE:
        tail2 = np.cumsum((Z * Z)[:, ::-1], axis=1)[:, ::-1]
        levels = np.concatenate((np.sqrt(np.max(tail2, axis=0)), [0.0]))
        for r, level in enumerate(levels):
            if level < delta_lat:
                basis = np.zeros((M, r))
                basis[np.arange(r), np.arange(r)] = 1.0
                return basis
        raise InternalConsistencyError(
            f"coordinate chain residual {levels[-1]:.3e} still >= "
            f"delta_lat={delta_lat:.3e}"
        )
    raise ValueError(f"unknown projector mode {mode!r}")


def fit_projector(h: Hilbertization, sample: CompactSample, delta_lat: float,
                  mode: str = PCA) -> Projector:
    """Fit the projection rank to the sample images at radius delta_lat."""
    Z = h.apply(sample.center_matrix())
    if math.isinf(delta_lat):
        return Projector(basis=np.zeros((h.dim, 0)), delta_lat=float(delta_lat),
                         mode=mode)
    basis = fit_projector_to_points(Z, delta_lat, mode)
    return Projector(basis=basis, delta_lat=float(delta_lat), mode=mode)


def fit_projector_fixed_rank(h: Hilbertization, sample: CompactSample,
                             rank: int, mode: str = PCA) -> Projector:
    """Projector with a prescribed latent dimension.

    The certified radius becomes the achieved worst sample residual (plus a
    relative cushion), so the strict center bound still holds.
    """
    if rank < 0:
        raise ValueError(f"rank must be >= 0, got {rank}")
    Z = h.apply(sample.center_matrix())
    if mode == PCA:
        _, _, Vt = np.linalg.svd(Z, full_matrices=False)
        r = min(rank, Vt.shape[0])
        basis = np.ascontiguousarray(Vt[:r].T)
    elif mode == COORDINATE:
        r = min(rank, h.dim)
        basis = np.zeros((h.dim, r))
        basis[np.arange(r), np.arange(r)] = 1.0
    else:
        raise ValueError(f"unknown projector mode {mode!r}")
    resid = Z - (Z @ basis) @ basis.T
    worst = float(np.linalg.norm(resid, axis=1).max(initial=0.0))
    scale = float(np.abs(Z).max(initial=0.0))
    delta_lat = worst * (1.0 + 1e-9) + 64 * np.finfo(float).eps * max(scale, 1.0)
    return Projector(basis=basis, delta_lat=delta_lat, mode=mode)


def encode(h: Hilbertization, proj: Projector, x) -> np.ndarray:
    """Latent coordinates basis^T (i o varpi)(x); linear in x."""
    return proj.coords(h.apply(x))
