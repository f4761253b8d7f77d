"""Conditional variance estimates and the standardisations of the statistics.

All standardisations share one form, ``v^2 = 2 sum_ij a_ij^2 s_i s_j`` with
``s_i`` the estimated conditional variance at ``X_i`` and ``a_ij`` either
the weights at one bandwidth or a difference of weights at two bandwidths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .weights import WeightMatrix

__all__ = [
    "SigmaEstimate",
    "sigma_floor",
    "local_variance",
    "rice_variance",
    "known_variance",
    "parse_variance",
    "VarianceEstimator",
    "vhat_baseline",
    "vhat_diff",
    "vhat_single",
    "quadratic_variance",
]


@dataclass(frozen=True)
class SigmaEstimate:
    """Per-point conditional variance estimates (units of ``Y**2``)."""

    per_point: np.ndarray
    method: str
    floor_applied: int = 0

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.per_point)


def sigma_floor(Y) -> float:
    """Lower bound applied to every variance estimate."""
    Y = np.asarray(Y, dtype=float)
    spread = float(np.var(Y, ddof=1)) if Y.size > 1 else 0.0
    return 1e-10 * (1.0 + spread)


def _floored(raw, Y, method) -> SigmaEstimate:
    floor = sigma_floor(Y)
    low = raw < floor
    return SigmaEstimate(np.where(low, floor, raw), method, int(low.sum()))


def neighbourhoods(X, b_n: float) -> np.ndarray:
    """Boolean matrix of sup-norm neighbourhoods ``|X_j - X_i| <= b_n``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    dist = np.max(np.abs(X[:, None, :] - X[None, :, :]), axis=-1)
    return dist <= b_n


def local_variance(X, Y, b_n: float) -> SigmaEstimate:
    """Local mean of ``Y**2`` minus squared local mean of ``Y``.

    The neighbourhood of ``X_i`` always contains ``X_i`` itself.
    """
    if not b_n > 0:
        raise ValueError(f"b_n must be positive, got {b_n}")
    Y = np.asarray(Y, dtype=float)
    N = neighbourhoods(X, b_n).astype(float)
    counts = N.sum(axis=1)
    mean = N @ Y / counts
    raw = N @ (Y * Y) / counts - mean * mean
    return _floored(raw, Y, f"local({b_n:g})")


def rice_variance(X, Y) -> SigmaEstimate:
    """Differencing estimator ``sum (Y_(i+1) - Y_(i))^2 / (2 (n - 1))``.

    ``Y`` is ordered by the scalar covariate ``X``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"the differencing estimator needs a scalar design, got p = {X.shape[1]}")
        X = X[:, 0]
    Y = np.asarray(Y, dtype=float)
    n = Y.size
    d = np.diff(Y[np.argsort(X, kind="stable")])
    raw = float(d @ d) / (2.0 * (n - 1))
    return _floored(np.full(n, raw), Y, "rice")


def known_variance(values, n: int | None = None) -> SigmaEstimate:
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = np.full(int(n), float(values))
    if np.any(values <= 0):
        raise ValueError("known variances must be positive")
    return SigmaEstimate(values, "known", 0)


def parse_variance(spec: str) -> tuple[str, float | None]:
    """Parse ``rice``, ``local:<b_n>`` or ``known:<value>``."""
    kind, _, arg = spec.partition(":")
    if kind == "rice" and not arg:
        return "rice", None
    if kind in ("local", "known"):
        try:
            value = float(arg)
        except ValueError:
            raise ValueError(f"variance method {spec!r} needs a numeric argument") from None
        if not value > 0:
            raise ValueError(f"variance method {spec!r} needs a positive argument")
        return kind, value
    raise ValueError(f"unknown variance method {spec!r}; use rice, local:<b_n> or known:<value>")


class VarianceEstimator:
    """Variance estimation on a fixed design for a batch of responses.

    Precomputes the ordering (differencing) or the neighbourhood matrix
    (local averaging) once, so that bootstrap draws sharing the design are
    processed together. Row ``b`` of the output equals the single-sample
    estimate for ``Y[b]``.
    """

    def __init__(self, X, spec: str):
        self.spec = spec
        self.kind, self.arg = parse_variance(spec)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self.n = X.shape[0]
        if self.kind == "rice":
            if X.shape[1] != 1:
                raise ValueError(f"the differencing estimator needs a scalar design, got p = {X.shape[1]}")
            self._order = np.argsort(X[:, 0], kind="stable")
        elif self.kind == "local":
            N = neighbourhoods(X, self.arg).astype(float)
            self._avg = N / N.sum(axis=1, keepdims=True)

    def __call__(self, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        B, n = Y.shape
        if self.kind == "known":
            return np.full((B, n), self.arg)
        if self.kind == "rice":
            d = np.diff(Y[:, self._order], axis=1)
            raw = np.repeat((np.einsum("bi,bi->b", d, d) / (2.0 * (n - 1)))[:, None], n, axis=1)
        else:
            mean = Y @ self._avg.T
            raw = (Y * Y) @ self._avg.T - mean * mean
        floor = 1e-10 * (1.0 + np.var(Y, axis=1, ddof=1))
        return np.maximum(raw, floor[:, None])

    def estimate(self, Y) -> SigmaEstimate:
        Y = np.asarray(Y, dtype=float)
        if self.kind == "known":
            return known_variance(self.arg, Y.size)
        if self.kind == "rice":
            d = np.diff(Y[self._order])
            raw = np.full(Y.size, float(d @ d) / (2.0 * (Y.size - 1)))
            return _floored(raw, Y, "rice")
        mean = self._avg @ Y
        return _floored(self._avg @ (Y * Y) - mean * mean, Y, f"local({self.arg:g})")


def _matrix(W) -> np.ndarray:
    return W.entries if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)


def _per_point(s) -> np.ndarray:
    return s.per_point if isinstance(s, SigmaEstimate) else np.asarray(s, dtype=float)


def quadratic_variance(A, s) -> float:
    """``sqrt(2 sum_ij A_ij^2 s_i s_j)`` for a matrix ``A`` and variances ``s``."""
    A = _matrix(A)
    s = _per_point(s)
    return float(np.sqrt(2.0 * (s @ (A * A) @ s)))


def vhat_single(Wh, s) -> float:
    return quadratic_variance(Wh, s)


def vhat_baseline(W0, s) -> float:
    """Standard deviation estimate of the baseline statistic."""
    return quadratic_variance(W0, s)


def vhat_diff(Wh, W0, s) -> float:
    """Standard deviation estimate of ``T_h - T_h0``; exactly 0 when ``Wh == W0``."""
    return quadratic_variance(_matrix(Wh) - _matrix(W0), s)
