"""Weight matrices of leave-one-out linear smoothers and the bandwidth grid.

Every smoother is represented by a symmetric ``n x n`` matrix ``W`` with an
exactly zero diagonal, so that the lack-of-fit statistic is the quadratic
form ``U' W U`` in the parametric residuals ``U``.

Projection smoothers (global polynomials, piecewise polynomials, additive
polynomials) start from the orthogonal projector ``P`` onto a set of basis
columns and zero its diagonal. The kernel smoother uses the symmetrised
Nadaraya-Watson weights ``K_h(X_i - X_j) / sqrt(f_i f_j)``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateBandwidthError

__all__ = [
    "SmootherGrid",
    "WeightMatrix",
    "KernelSpec",
    "KERNELS",
    "build_grid",
    "projector",
    "polynomial_projector",
    "piecewise_projector",
    "additive_projector",
    "weights_polynomial",
    "weights_piecewise",
    "weights_kernel",
    "weights_additive",
    "build_weights",
    "parse_family",
    "spectral_radius",
    "frobenius_sq",
]

DENSITY_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmootherGrid:
    """Geometric grid ``h_j = h0 * a**-j`` for ``j = 0..Jn``, coarsest first."""

    h0: float
    a: float
    Jn: int
    values: tuple[float, ...]

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    @classmethod
    def single(cls, h: float) -> "SmootherGrid":
        """A one-point grid, used by fixed-bandwidth tests."""
        return cls(h0=float(h), a=2.0, Jn=0, values=(float(h),))


def _is_integer(x: float, rtol: float = 1e-9) -> bool:
    return abs(x - round(x)) <= rtol * max(1.0, abs(x))


def build_grid(h0: float, a: float, Jn: int, piecewise: bool = False) -> SmootherGrid:
    """Build the geometric bandwidth grid.

    Parameters
    ----------
    h0 : float
        Coarsest bandwidth, in (0, 1).
    a : float
        Ratio between consecutive bandwidths, > 1.
    Jn : int
        Number of refinements; the grid has ``Jn + 1`` values.
    piecewise : bool
        If set, require an integer ``a`` and an integer ``1/h0`` so that
        the bins of consecutive bandwidths are nested.
    """
    if not 0.0 < h0 < 1.0:
        raise ValueError(f"h0 must lie in (0, 1), got {h0}")
    if not a > 1.0:
        raise ValueError(f"grid ratio a must be > 1, got {a}")
    if int(Jn) != Jn or Jn < 1:
        raise ValueError(f"Jn must be an integer >= 1, got {Jn}")
    if piecewise:
        if not _is_integer(a):
            raise ValueError(f"piecewise smoothers need an integer ratio a, got {a}")
        if not _is_integer(1.0 / h0):
            raise ValueError(f"piecewise smoothers need integer 1/h0, got 1/h0 = {1.0 / h0}")
    values = tuple(float(h0) * float(a) ** (-j) for j in range(int(Jn) + 1))
    return SmootherGrid(h0=float(h0), a=float(a), Jn=int(Jn), values=values)


# ---------------------------------------------------------------------------
# Weight matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Symmetric zero-diagonal weight matrix of one smoother at one bandwidth.

    ``rank`` is the rank of the underlying projector for projection
    families and ``None`` for kernels. ``degenerate_points`` lists the
    observations whose kernel density estimate fell below the floor.
    """

    h: float
    entries: np.ndarray
    family: str
    rank: int | None = None
    degenerate_points: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def degenerate(self) -> bool:
        return len(self.degenerate_points) > 0


def _zero_diagonal(P: np.ndarray) -> np.ndarray:
    W = 0.5 * (P + P.T)
    np.fill_diagonal(W, 0.0)
    return W


def projector(basis: np.ndarray) -> tuple[np.ndarray, int]:
    """Orthogonal projector onto the column span of ``basis``, and its rank.

    Singular values below ``s_max * n * eps`` are treated as zero, so
    collinear columns are handled without inverting ``basis' basis``.
    """
    basis = np.asarray(basis, dtype=float)
    n = basis.shape[0]
    if basis.shape[1] == 0:
        return np.zeros((n, n)), 0
    U, s, _ = np.linalg.svd(basis, full_matrices=False)
    tol = s.max() * n * np.finfo(float).eps if s.size else 0.0
    r = int(np.sum(s > tol))
    Ur = U[:, :r]
    P = Ur @ Ur.T
    return 0.5 * (P + P.T), r


def _check_design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("design must be an n x p array")
    return X


def _degree(h: float) -> int:
    # floor(1/h), robust to 1/h landing a hair below an integer
    return int(math.floor(1.0 / h + 1e-9))


def _bins_per_axis(h: float) -> int:
    m = 1.0 / h
    if not _is_integer(m):
        raise ValueError(f"this smoother needs integer 1/h, got 1/h = {m}")
    return int(round(m))


def _warn_dimension(ncols: int, n: int, h: float):
    if ncols > n / 2:
        warnings.warn(
            f"basis dimension {ncols} exceeds n/2 = {n / 2} at h = {h}",
            RuntimeWarning,
            stacklevel=3,
        )


def polynomial_projector(X, h: float) -> tuple[np.ndarray, int]:
    """Projector onto all monomials with coordinate-wise degree <= floor(1/h)."""
    X = _check_design(X)
    n, p = X.shape
    D = _degree(h)
    Z = 2.0 * X - 1.0  # same span, better conditioned on [0, 1]
    powers = list(itertools.product(range(D + 1), repeat=p))
    if n < len(powers):
        raise ValueError(f"n = {n} is smaller than the {len(powers)} basis columns at h = {h}")
    _warn_dimension(len(powers), n, h)
    basis = np.column_stack([np.prod(Z ** np.array(k), axis=1) for k in powers])
    return projector(basis)


def additive_projector(X, h: float) -> tuple[np.ndarray, int]:
    """Projector onto ``1`` and ``x_l**k`` for ``k = 1..1/h``, no cross products."""
    X = _check_design(X)
    n, p = X.shape
    D = _bins_per_axis(h)
    ncols = 1 + p * D
    if n < ncols:
        raise ValueError(f"n = {n} is smaller than the {ncols} basis columns at h = {h}")
    _warn_dimension(ncols, n, h)
    Z = 2.0 * X - 1.0
    cols = [np.ones(n)]
    for ell in range(p):
        cols.extend(Z[:, ell] ** k for k in range(1, D + 1))
    return projector(np.column_stack(cols))


def bin_index(X, h: float) -> np.ndarray:
    """Flat index of the bin ``prod_l [k_l h, (k_l + 1) h)`` holding each point.

    Points on the upper boundary 1 are assigned to the last bin.
    """
    X = _check_design(X)
    m = _bins_per_axis(h)
    if X.min() < -1e-12 or X.max() > 1.0 + 1e-12:
        raise ValueError("piecewise smoothers need a design in [0, 1]^p")
    k = np.clip(np.floor(X * m).astype(np.int64), 0, m - 1)
    return np.ravel_multi_index(tuple(k.T), (m,) * X.shape[1])


def piecewise_projector(X, h: float, qbar: int = 0) -> tuple[np.ndarray, int]:
    """Block-diagonal projector onto piecewise polynomials of degree <= qbar.

    Bins with fewer points than the local basis dimension get a
    rank-truncated block; empty bins contribute nothing.
    """
    X = _check_design(X)
    n, p = X.shape
    if qbar < 0 or int(qbar) != qbar:
        raise ValueError(f"qbar must be a nonnegative integer, got {qbar}")
    m = _bins_per_axis(h)
    idx = bin_index(X, h)
    P = np.zeros((n, n))
    rank = 0
    powers = np.array(list(itertools.product(range(qbar + 1), repeat=p)))
    _warn_dimension(len(np.unique(idx)) * len(powers), n, h)
    for b in np.unique(idx):
        members = np.flatnonzero(idx == b)
        if qbar == 0:
            P[np.ix_(members, members)] = 1.0 / members.size
            rank += 1
            continue
        left = np.array(np.unravel_index(b, (m,) * p), dtype=float) * h
        U = (X[members] - left) / h
        local = np.column_stack([np.prod(U ** k, axis=1) for k in powers])
        block, r = projector(local)
        P[np.ix_(members, members)] = block
        rank += r
    return P, rank


def _projection_weights(P: np.ndarray, rank: int, h: float, family: str, ncols: int) -> WeightMatrix:
    if rank < ncols:
        warnings.warn(
            f"{family} basis at h = {h} is rank deficient: effective rank {rank} of {ncols}",
            RuntimeWarning,
            stacklevel=3,
        )
    return WeightMatrix(h=float(h), entries=_zero_diagonal(P), family=family, rank=rank)


def weights_polynomial(X, h: float) -> WeightMatrix:
    X = _check_design(X)
    P, r = polynomial_projector(X, h)
    ncols = (_degree(h) + 1) ** X.shape[1]
    return _projection_weights(P, r, h, "polynomial", ncols)


def weights_piecewise(X, h: float, qbar: int = 0) -> WeightMatrix:
    """Weights of the piecewise polynomial smoother (``qbar = 0``: regressogram)."""
    P, r = piecewise_projector(X, h, qbar)
    return WeightMatrix(h=float(h), entries=_zero_diagonal(P), family=f"piecewise:{qbar}", rank=r)


def weights_additive(X, h: float) -> WeightMatrix:
    X = _check_design(X)
    P, r = additive_projector(X, h)
    ncols = 1 + X.shape[1] * _bins_per_axis(h)
    return _projection_weights(P, r, h, "additive", ncols)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    """Product kernel built from a symmetric univariate density."""

    kind: str
    univariate: Callable[[np.ndarray], np.ndarray]

    def __call__(self, u) -> np.ndarray:
        """Evaluate ``K`` at the rows of ``u`` (shape ``(..., p)``)."""
        u = np.asarray(u, dtype=float)
        return np.prod(self.univariate(u), axis=-1)


KERNELS = {
    "gaussian": KernelSpec("gaussian", lambda u: np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)),
    "triangular": KernelSpec("triangular", lambda u: np.clip(1.0 - np.abs(u), 0.0, None)),
    "laplace": KernelSpec("laplace", lambda u: 0.5 * np.exp(-np.abs(u))),
    "cauchy": KernelSpec("cauchy", lambda u: 1.0 / (math.pi * (1.0 + u * u))),
}


def weights_kernel(X, h: float, K: KernelSpec | str = "gaussian") -> WeightMatrix:
    """Symmetrised kernel weights.

    ``w_ij = K_h(X_i - X_j) / ((n-1) h^p sqrt(f_i f_j))`` with the
    leave-one-out density ``f_i = sum_{j != i} K_h(X_j - X_i) / ((n-1) h^p)``.
    Points whose density falls below ``DENSITY_FLOOR`` are reported in
    ``degenerate_points`` and their rows and columns are set to zero.
    """
    X = _check_design(X)
    if isinstance(K, str):
        K = KERNELS[K]
    n, p = X.shape
    if n < 2:
        raise ValueError("kernel weights need n >= 2")
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    diff = (X[:, None, :] - X[None, :, :]) / h
    Kmat = K(diff)
    np.fill_diagonal(Kmat, 0.0)
    scale = 1.0 / ((n - 1) * h**p)
    f = scale * Kmat.sum(axis=1)
    bad = np.flatnonzero(f < DENSITY_FLOOR)
    root = np.sqrt(np.where(f < DENSITY_FLOOR, np.inf, f))
    W = scale * Kmat / np.outer(root, root)
    return WeightMatrix(
        h=float(h),
        entries=_zero_diagonal(W),
        family=f"kernel:{K.kind}",
        degenerate_points=tuple(int(i) for i in bad),
    )


# ---------------------------------------------------------------------------
# Dispatch and diagnostics
# ---------------------------------------------------------------------------


def parse_family(family: str) -> tuple[str, str | None]:
    """Split a family tag such as ``"piecewise:0"`` into name and argument."""
    name, _, arg = family.partition(":")
    name = {"poly": "polynomial"}.get(name, name)
    if name not in ("polynomial", "piecewise", "kernel", "additive"):
        raise ValueError(f"unknown smoother family {family!r}")
    if name == "piecewise":
        arg = arg or "0"
        if not arg.isdigit():
            raise ValueError(f"piecewise order must be a nonnegative integer, got {arg!r}")
    if name == "kernel":
        arg = arg or "gaussian"
        if arg not in KERNELS:
            raise ValueError(f"unknown kernel {arg!r}; choose from {sorted(KERNELS)}")
    return name, arg or None


def build_weights(X, h: float, family: str = "piecewise:0") -> WeightMatrix:
    name, arg = parse_family(family)
    if name == "polynomial":
        return weights_polynomial(X, h)
    if name == "piecewise":
        return weights_piecewise(X, h, int(arg))
    if name == "kernel":
        return weights_kernel(X, h, arg)
    return weights_additive(X, h)


def check_degenerate(W: WeightMatrix):
    if W.degenerate:
        pts = list(W.degenerate_points)
        shown = ", ".join(map(str, pts[:10])) + (" ..." if len(pts) > 10 else "")
        raise DegenerateBandwidthError(
            f"bandwidth h = {W.h} is degenerate: density estimate below floor at points {shown}",
            h=W.h,
            points=pts,
        )


def _entries(W) -> np.ndarray:
    return W.entries if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)


def spectral_radius(W) -> float:
    """Largest absolute eigenvalue of a symmetric weight matrix."""
    A = _entries(W)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(A))))


def frobenius_sq(W) -> float:
    """Sum of squared entries."""
    A = _entries(W)
    return float(np.sum(A * A))
