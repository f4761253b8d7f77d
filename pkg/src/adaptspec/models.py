"""Parametric null models and their least-squares fits."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FitError

__all__ = [
    "ParametricModel",
    "FitResult",
    "fit_nls",
    "fit_ols",
    "fit",
    "get_model",
    "MODEL_NAMES",
]

logger = logging.getLogger(__name__)

_FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)
_WIDE = 1e8


@dataclass(frozen=True)
class ParametricModel:
    """A regression family ``mu(x; theta)`` with ``theta`` in a finite box.

    ``mu`` is vectorised: it maps an ``(n, p)`` design and a ``(d,)``
    parameter to ``(n,)`` fitted values. ``gradient``, when given, returns
    the ``(n, d)`` Jacobian. ``linear_design`` marks models that are
    linear in ``theta``: ``mu(X, theta) == linear_design(X) @ theta``.
    """

    name: str
    mu: Callable[[np.ndarray, np.ndarray], np.ndarray]
    theta_box: np.ndarray
    gradient: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    linear_design: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        box = np.asarray(self.theta_box, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(box)):
            raise ValueError("parameter box bounds must be finite")
        if np.any(box[:, 0] >= box[:, 1]):
            raise ValueError("parameter box needs lower < upper in every coordinate")
        object.__setattr__(self, "theta_box", box)

    @property
    def d(self) -> int:
        return self.theta_box.shape[0]

    def __call__(self, X, theta) -> np.ndarray:
        return np.asarray(self.mu(np.asarray(X, dtype=float), np.asarray(theta, dtype=float)), dtype=float)


@dataclass(frozen=True)
class FitResult:
    theta_hat: np.ndarray
    residuals: np.ndarray
    sse: float
    converged: bool = True
    restarts_used: int = 0
    history: tuple[float, ...] = field(default=(), repr=False)


def _as_design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def _evaluate(model, X, theta):
    f = model(X, theta)
    if not np.all(np.isfinite(f)):
        raise FitError(f"model {model.name!r} returned non-finite values at theta = {theta.tolist()}")
    return f


def _jacobian(model, X, theta, f0):
    if model.gradient is not None:
        J = np.asarray(model.gradient(X, theta), dtype=float)
        if not np.all(np.isfinite(J)):
            raise FitError(f"model {model.name!r} returned a non-finite gradient at theta = {theta.tolist()}")
        return J
    J = np.empty((f0.size, theta.size))
    for j in range(theta.size):
        step = _FD_STEP * (1.0 + abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += step
        down[j] -= step
        J[:, j] = (_evaluate(model, X, up) - _evaluate(model, X, down)) / (2.0 * step)
    return J


def _gauss_newton(model, X, Y, theta, max_iter, tol):
    """Damped Gauss-Newton from one start, projected onto the box.

    Only steps that lower the objective are accepted, so the recorded
    objective trace is nonincreasing.
    """
    lo, hi = model.theta_box[:, 0], model.theta_box[:, 1]
    theta = np.clip(theta, lo, hi)
    r = Y - _evaluate(model, X, theta)
    sse = float(r @ r)
    history = [sse]
    lam = 1e-3
    converged = False
    for _ in range(max_iter):
        J = _jacobian(model, X, theta, Y - r)
        g = J.T @ r
        A = J.T @ J
        improved = False
        while lam < 1e12:
            step = np.linalg.solve(A + lam * np.diag(np.diag(A) + 1e-12), g)
            cand = np.clip(theta + step, lo, hi)
            r_new = Y - _evaluate(model, X, cand)
            sse_new = float(r_new @ r_new)
            if sse_new < sse:
                improved = True
                break
            lam *= 10.0
        if not improved:
            converged = True
            break
        rel = (sse - sse_new) / max(sse, 1e-300)
        small_step = np.max(np.abs(cand - theta) / (1.0 + np.abs(theta))) < tol
        theta, r, sse = cand, r_new, sse_new
        history.append(sse)
        lam = max(lam / 10.0, 1e-12)
        if rel < tol or small_step or sse == 0.0:
            converged = True
            break
    return theta, r, sse, converged, history


def fit_nls(model: ParametricModel, X, Y, restarts: int = 10, max_iter: int = 200, tol: float = 1e-12, seed: int = 0) -> FitResult:
    """Box-constrained nonlinear least squares with seeded multistart.

    Starting points are drawn uniformly in the parameter box from one
    ``numpy`` stream seeded by ``seed``, so a run with more restarts
    explores a superset of the starts of a run with fewer. The lowest
    objective wins; ties go to the lexicographically smallest parameter.
    """
    X = _as_design(X)
    Y = np.asarray(Y, dtype=float)
    n = Y.size
    if model.d == 0:
        r = Y - _evaluate(model, X, np.empty(0))
        return FitResult(np.empty(0), r, float(r @ r), True, 0)
    if n < model.d:
        raise FitError(f"n = {n} is smaller than the number of parameters d = {model.d}")
    lo, hi = model.theta_box[:, 0], model.theta_box[:, 1]
    starts = lo + (hi - lo) * np.random.default_rng(seed).uniform(size=(max(int(restarts), 1), model.d))
    best = None
    for start in starts:
        theta, r, sse, conv, hist = _gauss_newton(model, X, Y, start, max_iter, tol)
        key = (sse, tuple(theta))
        if best is None or _better(key, best[0]):
            best = (key, theta, r, conv, hist)
    (sse, _), theta, r, conv, hist = best
    return FitResult(theta, r, sse, conv, len(starts), tuple(hist))


def _better(key, incumbent) -> bool:
    sse, theta = key
    sse0, theta0 = incumbent
    if abs(sse - sse0) <= 1e-12 * max(abs(sse0), 1e-300):
        return theta < theta0
    return sse < sse0


def fit_ols(model: ParametricModel, X, Y) -> FitResult:
    """Closed-form least squares for models that are linear in the parameters."""
    if model.linear_design is None:
        raise ValueError(f"model {model.name!r} is not linear in its parameters")
    X = _as_design(X)
    Y = np.asarray(Y, dtype=float)
    if model.d == 0:
        return FitResult(np.empty(0), Y.copy(), float(Y @ Y), True, 0)
    D = np.asarray(model.linear_design(X), dtype=float)
    theta, _, rank, _ = np.linalg.lstsq(D, Y, rcond=None)
    if rank < D.shape[1]:
        raise FitError(f"design of model {model.name!r} is rank deficient: effective rank {rank} of {D.shape[1]}")
    lo, hi = model.theta_box[:, 0], model.theta_box[:, 1]
    if np.any(theta < lo) or np.any(theta > hi):
        logger.info("OLS solution leaves the parameter box; falling back to constrained fit")
        return fit_nls(model, X, Y)
    r = Y - D @ theta
    return FitResult(theta, r, float(r @ r), True, 0)


def fit(model: ParametricModel, X, Y, **options) -> FitResult:
    """OLS for linear models, multistart Gauss-Newton otherwise."""
    if model.linear_design is not None:
        return fit_ols(model, X, Y)
    return fit_nls(model, X, Y, **options)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


def _linear(name, design, d):
    return ParametricModel(
        name=name,
        mu=lambda X, th: design(X) @ th,
        theta_box=np.tile([-_WIDE, _WIDE], (d, 1)),
        gradient=lambda X, th: design(X),
        linear_design=design,
    )


def get_model(name: str, p: int = 1) -> ParametricModel:
    """Look up a built-in model by its command-line name."""
    if name == "zero":
        return ParametricModel(
            name="zero",
            mu=lambda X, th: np.zeros(X.shape[0]),
            theta_box=np.empty((0, 2)),
            linear_design=lambda X: np.empty((X.shape[0], 0)),
        )
    if name == "linear":
        if p != 1:
            raise ValueError(f"model 'linear' needs a scalar design, got p = {p}")
        return _linear("linear", lambda X: np.column_stack([np.ones(X.shape[0]), X[:, 0]]), 2)
    if name in ("affine-p", "sum-of-linears"):
        # a sum of univariate linear functions is an affine function with one shared intercept
        return _linear(name, lambda X: np.column_stack([np.ones(X.shape[0]), X]), p + 1)
    raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}")


MODEL_NAMES = ("zero", "linear", "affine-p", "sum-of-linears")
