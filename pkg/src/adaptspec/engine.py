"""Lack-of-fit statistics, penalised bandwidth selection and test decisions.

For each bandwidth ``h`` of the grid the statistic is ``T_h = U' W_h U`` in
the parametric residuals ``U``. The selected bandwidth maximises
``T_h - gamma_n * v_{h,h0}`` where ``v_{h,h0}`` estimates the null standard
deviation of ``T_h - T_h0``; since that penalty vanishes at ``h0`` the rule
keeps the coarsest bandwidth unless a finer one beats it by a margin. The
final statistic is standardised by ``v_h0``, the baseline standard
deviation.

The heavy lifting is done by :class:`TestPipeline`, which fixes the design
and evaluates every statistic for a whole batch of responses at once. The
bootstrap reuses it because all bootstrap samples share the design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.stats import norm

from . import models as _models
from .errors import FitError
from .variance import SigmaEstimate, VarianceEstimator
from .weights import SmootherGrid, WeightMatrix, build_weights, check_degenerate, parse_family

if TYPE_CHECKING:
    from .bootstrap import BootstrapConfig

__all__ = [
    "TestConfig",
    "TestOutcome",
    "GridStatistics",
    "TestPipeline",
    "statistic_Th",
    "select_h",
    "penalty",
    "adaptive_statistic",
    "self_normalized_statistic",
    "max_statistic",
    "fixed_statistic",
    "selection_violations",
    "run_test",
    "run_max_test",
    "run_fixed_h_test",
    "run_selected_self_normalized",
]


@dataclass(frozen=True)
class TestConfig:
    """Settings shared by every test variant.

    ``bootstrap`` set to ``None`` selects asymptotic standard normal
    critical values; otherwise thresholds come from the bootstrap.
    """

    __test__ = False  # not a pytest class

    grid: SmootherGrid
    family: str = "piecewise:0"
    c: float = 1.0
    alpha: float = 0.05
    variance: str = "rice"
    bootstrap: "BootstrapConfig | None" = None
    fit_restarts: int = 10
    fit_seed: int = 0

    def __post_init__(self):
        parse_family(self.family)
        if not self.c > 0:
            raise ValueError(f"penalty multiplier c must be positive, got {self.c}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def gamma_n(self) -> float:
        """Penalty ``c * sqrt(2 ln Jn)``; needs at least two refinements."""
        return penalty(self.c, self.grid.Jn)


def penalty(c: float, Jn: int) -> float:
    if Jn < 2:
        raise ValueError(f"the selection penalty needs Jn >= 2 (ln Jn > 0), got Jn = {Jn}")
    return c * math.sqrt(2.0 * math.log(Jn))


@dataclass(frozen=True)
class GridStatistics:
    """Per-bandwidth statistics for a batch of samples, arrays of shape ``(B, H)``.

    ``v_diff[:, j]`` estimates the sd of ``T_hj - T_h0`` and ``v_single[:, j]``
    the sd of ``T_hj``; column 0 is the coarsest bandwidth ``h0``.
    """

    T: np.ndarray
    v_diff: np.ndarray
    v_single: np.ndarray

    @property
    def v_baseline(self) -> np.ndarray:
        return self.v_single[:, 0]

    def row(self, b: int) -> "GridStatistics":
        return GridStatistics(self.T[b : b + 1], self.v_diff[b : b + 1], self.v_single[b : b + 1])


@dataclass(frozen=True)
class TestOutcome:
    """Result of one test on one sample."""

    __test__ = False

    test: str
    per_h: tuple[tuple[float, float, float], ...]  # (h, T_h, v_{h,h0})
    h_selected: float
    statistic: float
    threshold: float
    reject: bool
    theta_hat: np.ndarray
    gamma_n: float | None = None
    v_baseline: float = float("nan")
    v_single: tuple[float, ...] = ()
    sigma: SigmaEstimate | None = field(default=None, repr=False)

    @property
    def objective(self) -> tuple[float, ...]:
        """Penalised criterion ``T_h - gamma_n v_{h,h0}`` along the grid."""
        g = self.gamma_n if self.gamma_n is not None else 0.0
        return tuple(T - g * v for _, T, v in self.per_h)


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------


def statistic_Th(W, U) -> float:
    """Quadratic form ``U' W U``."""
    A = W.entries if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)
    U = np.asarray(U, dtype=float)
    if A.shape != (U.size, U.size):
        raise ValueError(f"weight matrix {A.shape} does not match residual vector of length {U.size}")
    return float(U @ A @ U)


def select_h(stats: Sequence[tuple[float, float]], penalties: Sequence[tuple[float, float]], gamma_n: float) -> float:
    """Bandwidth maximising ``T_h - gamma_n v_{h,h0}``.

    Both lists run along the grid, coarsest first. Ties go to the largest
    bandwidth.
    """
    if len(stats) == 0:
        raise ValueError("empty bandwidth grid")
    if len(stats) != len(penalties):
        raise ValueError("statistics and penalties must be aligned with the grid")
    hs = [h for h, _ in stats]
    if [h for h, _ in penalties] != hs:
        raise ValueError("statistics and penalties refer to different bandwidths")
    T = np.array([t for _, t in stats], dtype=float)
    v = np.array([p for _, p in penalties], dtype=float)
    return hs[int(np.argmax(T - gamma_n * v))]


def _take(a: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.take_along_axis(a, idx[:, None], axis=1)[:, 0]


def selected_index(stats: GridStatistics, gamma_n: float) -> np.ndarray:
    # argmax returns the first maximiser, i.e. the largest bandwidth on ties
    return np.argmax(stats.T - gamma_n * stats.v_diff, axis=1)


def adaptive_statistic(stats: GridStatistics, gamma_n: float) -> tuple[np.ndarray, np.ndarray]:
    """``T_selected / v_h0`` and the selected index, per sample."""
    idx = selected_index(stats, gamma_n)
    return _take(stats.T, idx) / stats.v_baseline, idx


def self_normalized_statistic(stats: GridStatistics, gamma_n: float) -> tuple[np.ndarray, np.ndarray]:
    """``T_selected / v_selected``: same selection, studentised at the selected bandwidth."""
    idx = selected_index(stats, gamma_n)
    return _take(stats.T, idx) / _take(stats.v_single, idx), idx


def max_statistic(stats: GridStatistics) -> tuple[np.ndarray, np.ndarray]:
    ratio = stats.T / stats.v_single
    idx = np.argmax(ratio, axis=1)
    return _take(ratio, idx), idx


def fixed_statistic(stats: GridStatistics, j: int) -> tuple[np.ndarray, np.ndarray]:
    j = int(j)
    return stats.T[:, j] / stats.v_single[:, j], np.full(stats.T.shape[0], j)


def selection_violations(stats: GridStatistics, gamma_n: float, rtol: float = 1e-12) -> dict[str, int]:
    """Count breaches of the deterministic properties of the selection rule.

    * ``power_bound``: ``T_sel >= T_h0 + gamma_n v_{sel,h0}``.
    * ``characterization``: the selected bandwidth differs from ``h0``
      exactly when some ``(T_h - T_h0) / v_{h,h0}`` exceeds ``gamma_n``.
    * ``monotone``: the set of bandwidths beating ``h0`` shrinks when the
      penalty grows (checked at ``1.5 gamma_n``).

    Comparisons within ``rtol`` of the decision boundary are not counted,
    since the two sides are computed along different rounding paths.
    """
    T, v = stats.T, stats.v_diff
    idx = selected_index(stats, gamma_n)
    T_sel, v_sel, T0 = _take(T, idx), _take(v, idx), T[:, 0]
    scale = rtol * (np.abs(T).max(axis=1) + gamma_n * v.max(axis=1) + 1e-300)
    power = int(np.sum(T_sel < T0 + gamma_n * v_sel - scale))

    gain = T[:, 1:] - T0[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(v[:, 1:] > 0, gain / v[:, 1:], np.where(gain > 0, np.inf, -np.inf))
    margin = gain - gamma_n * v[:, 1:]
    clear = np.all(np.abs(margin) > scale[:, None], axis=1)
    moved = idx != 0
    beats = np.any(ratio > gamma_n, axis=1) if ratio.shape[1] else np.zeros(T.shape[0], bool)
    characterization = int(np.sum(clear & (moved != beats)))

    set_small = margin > 0
    set_large = gain - 1.5 * gamma_n * v[:, 1:] > 0
    monotone = int(np.sum(np.any(set_large & ~set_small, axis=1)))
    return {"power_bound": power, "characterization": characterization, "monotone": monotone}


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def _as_design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


class TestPipeline:
    """Fixed-design evaluation of the whole statistic pipeline.

    Given a design, a null model and a configuration, builds all weight
    matrices once. :meth:`statistics` then refits the model, re-estimates
    the conditional variance and recomputes every ``T_h``, ``v_{h,h0}``
    and ``v_h`` for each row of a response batch.
    """

    __test__ = False

    def __init__(self, X, model: _models.ParametricModel, cfg: TestConfig, weights: Sequence[WeightMatrix] | None = None):
        self.X = _as_design(X)
        self.model = model
        self.cfg = cfg
        if weights is None:
            weights = [build_weights(self.X, h, cfg.family) for h in cfg.grid.values]
        if len(weights) != len(cfg.grid):
            raise ValueError("one weight matrix per grid value is required")
        for W in weights:
            check_degenerate(W)
            if W.n != self.X.shape[0]:
                raise ValueError("weight matrices do not match the design")
        self.weights = tuple(weights)
        self.W = np.stack([W.entries for W in weights])
        self.variance = VarianceEstimator(self.X, cfg.variance)
        self._sq_single = np.einsum("hij,hij->h", self.W, self.W)
        D = self.W - self.W[0]
        self._sq_diff = np.einsum("hij,hij->h", D, D)
        self._hat = None
        if model.d > 0 and model.linear_design is not None:
            design = np.asarray(model.linear_design(self.X), dtype=float)
            Q, R = np.linalg.qr(design)
            diag = np.abs(np.diag(R))
            rank = int(np.sum(diag > diag.max() * max(design.shape) * np.finfo(float).eps))
            if rank < design.shape[1]:
                raise FitError(f"design of model {model.name!r} is rank deficient: effective rank {rank} of {design.shape[1]}")
            self._hat = Q

    @property
    def hs(self) -> tuple[float, ...]:
        return self.cfg.grid.values

    @cached_property
    def _W_sq(self) -> np.ndarray:
        return self.W * self.W

    @cached_property
    def _D_sq(self) -> np.ndarray:
        D = self.W - self.W[0]
        return D * D

    def fit(self, Y) -> _models.FitResult:
        return _models.fit(self.model, self.X, Y, restarts=self.cfg.fit_restarts, seed=self.cfg.fit_seed)

    def residuals(self, Y) -> np.ndarray:
        """Residuals of the null fit for each row of ``Y``."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.model.d == 0:
            return Y - self.model(self.X, np.empty(0))[None, :]
        if self._hat is not None:
            Q = self._hat
            return Y - (Y @ Q) @ Q.T
        out = np.empty_like(Y)
        for b, y in enumerate(Y):
            try:
                out[b] = self.fit(y).residuals
            except FitError as exc:
                raise FitError(f"fit failed on sample {b}: {exc}") from exc
        return out

    def statistics(self, Y, U=None, s=None) -> GridStatistics:
        """All per-bandwidth statistics for a batch of responses ``Y`` (shape ``(B, n)``).

        Residuals ``U`` and variances ``s`` may be supplied when already known.
        """
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        U = self.residuals(Y) if U is None else np.atleast_2d(U)
        s = self.variance(Y) if s is None else np.atleast_2d(s)
        T = np.einsum("hbi,bi->bh", np.matmul(U[None], self.W), U)
        if np.all(s == s[:, :1]):
            s2 = s[:, 0] ** 2
            v_single = np.sqrt(2.0 * s2[:, None] * self._sq_single[None, :])
            v_diff = np.sqrt(2.0 * s2[:, None] * self._sq_diff[None, :])
        else:
            v_single = np.sqrt(2.0 * np.einsum("hbi,bi->bh", np.matmul(s[None], self._W_sq), s))
            v_diff = np.sqrt(2.0 * np.einsum("hbi,bi->bh", np.matmul(s[None], self._D_sq), s))
            v_diff[:, 0] = 0.0
        return GridStatistics(T, v_diff, v_single)


# ---------------------------------------------------------------------------
# Test runners
# ---------------------------------------------------------------------------


def _threshold(kind, X, Y, model, cfg, pipeline, j=None) -> float:
    if cfg.bootstrap is None:
        if kind == "max":
            raise ValueError("the maximum test has no standard null law; configure a bootstrap")
        return float(norm.ppf(1.0 - cfg.alpha)) if cfg.alpha < 1.0 else -math.inf
    from .bootstrap import bootstrap_critical_value

    runner = {
        "adaptive": run_test,
        "max": run_max_test,
        "fixed": run_fixed_h_test,
        "self-normalized": run_selected_self_normalized,
    }[kind]
    return bootstrap_critical_value(X, Y, model, cfg, runner, cfg.bootstrap, pipeline=pipeline, index=j)


def _outcome(kind, X, Y, model, cfg, pipeline, gamma, stat_fn) -> TestOutcome:
    Y = np.asarray(Y, dtype=float)
    fit_result = pipeline.fit(Y)
    sigma = pipeline.variance.estimate(Y)
    stats = pipeline.statistics(Y, fit_result.residuals, sigma.per_point)
    value, idx = stat_fn(stats)
    statistic = float(value[0])
    threshold = _threshold(kind, X, Y, model, cfg, pipeline, j=int(idx[0]) if kind == "fixed" else None)
    hs = pipeline.hs
    return TestOutcome(
        test=kind,
        per_h=tuple((h, float(t), float(v)) for h, t, v in zip(hs, stats.T[0], stats.v_diff[0])),
        h_selected=hs[int(idx[0])],
        statistic=statistic,
        threshold=threshold,
        reject=bool(statistic >= threshold),
        theta_hat=fit_result.theta_hat,
        gamma_n=gamma,
        v_baseline=float(stats.v_baseline[0]),
        v_single=tuple(float(v) for v in stats.v_single[0]),
        sigma=sigma,
    )


def _pipeline(X, model, cfg, pipeline):
    if pipeline is not None:
        if pipeline.cfg.grid != cfg.grid or pipeline.cfg.family != cfg.family or pipeline.cfg.variance != cfg.variance:
            raise ValueError("pipeline was built for a different configuration")
        return pipeline
    return TestPipeline(X, model, cfg)


def run_test(X, Y, model, cfg: TestConfig, pipeline: TestPipeline | None = None) -> TestOutcome:
    """Data-driven test: penalised selection, baseline standardisation."""
    if cfg.grid.Jn < 2:
        raise ValueError("the data-driven test needs a grid with Jn >= 2; use run_fixed_h_test for a single bandwidth")
    gamma = cfg.gamma_n
    pipeline = _pipeline(X, model, cfg, pipeline)
    return _outcome("adaptive", X, Y, model, cfg, pipeline, gamma, lambda s: adaptive_statistic(s, gamma))


def run_selected_self_normalized(X, Y, model, cfg: TestConfig, pipeline: TestPipeline | None = None) -> TestOutcome:
    """Same selection as :func:`run_test`, statistic ``T_sel / v_sel``."""
    if cfg.grid.Jn < 2:
        raise ValueError("the data-driven test needs a grid with Jn >= 2")
    gamma = cfg.gamma_n
    pipeline = _pipeline(X, model, cfg, pipeline)
    return _outcome("self-normalized", X, Y, model, cfg, pipeline, gamma, lambda s: self_normalized_statistic(s, gamma))


def run_max_test(X, Y, model, cfg: TestConfig, pipeline: TestPipeline | None = None) -> TestOutcome:
    """Maximum of the studentised statistics ``T_h / v_h`` over the grid."""
    pipeline = _pipeline(X, model, cfg, pipeline)
    return _outcome("max", X, Y, model, cfg, pipeline, None, max_statistic)


def run_fixed_h_test(X, Y, model, cfg: TestConfig, h: float | None = None, pipeline: TestPipeline | None = None) -> TestOutcome:
    """Studentised statistic ``T_h / v_h`` at one bandwidth (default ``h0``)."""
    h = cfg.grid.h0 if h is None else float(h)
    single = replace(cfg, grid=SmootherGrid.single(h))
    if pipeline is None or pipeline.cfg.grid != single.grid:
        weights = None
        if pipeline is not None and h in pipeline.hs:
            weights = [pipeline.weights[pipeline.hs.index(h)]]
        pipeline = TestPipeline(X, model, single, weights=weights)
    return _outcome("fixed", X, Y, model, single, pipeline, None, lambda s: fixed_statistic(s, 0))
