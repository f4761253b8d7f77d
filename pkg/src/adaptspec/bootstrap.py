"""Smooth conditional moments bootstrap.

Bootstrap responses are ``Y*_i = mu(X_i; theta_hat) + sigma_hat(X_i) * w_i``
with i.i.d. multipliers ``w_i`` of mean 0 and variance 1. Each bootstrap
sample goes through the whole pipeline again (refit, variance estimate,
statistics on every bandwidth, selection) and the critical value is an
order statistic of the bootstrapped test statistics.

Draw ``b`` uses its own random stream derived from ``(seed, *spawn_key, b)``,
so results do not depend on the order in which draws are evaluated.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import engine
from .errors import AdaptspecError
from .variance import SigmaEstimate

__all__ = [
    "BootstrapConfig",
    "MULTIPLIERS",
    "draw_multipliers",
    "bootstrap_sample",
    "bootstrap_responses",
    "bootstrap_statistics",
    "critical_rank",
    "critical_value",
    "bootstrap_critical_value",
]

_SQRT5 = math.sqrt(5.0)
GOLDEN_LOW = (1.0 - _SQRT5) / 2.0
GOLDEN_HIGH = (1.0 + _SQRT5) / 2.0
GOLDEN_P_LOW = (5.0 + _SQRT5) / 10.0

MULTIPLIERS = ("two-point-golden", "rademacher", "gaussian")
_ALIASES = {"two-point": "two-point-golden", "golden": "two-point-golden"}


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 199
    multiplier: str = "two-point-golden"
    seed: int = 0
    spawn_key: tuple[int, ...] = ()

    def __post_init__(self):
        if int(self.B) != self.B or self.B < 1:
            raise ValueError(f"number of bootstrap draws must be a positive integer, got {self.B}")
        law = _ALIASES.get(self.multiplier, self.multiplier)
        if law not in MULTIPLIERS:
            raise ValueError(f"unknown multiplier law {self.multiplier!r}; choose from {MULTIPLIERS}")
        object.__setattr__(self, "multiplier", law)


def _rng(cfg: BootstrapConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(*cfg.spawn_key, int(stream))))


def draw_multipliers(n: int, cfg: BootstrapConfig, stream: int) -> np.ndarray:
    """``n`` i.i.d. multipliers for bootstrap draw number ``stream``.

    The default law puts mass ``(5 + sqrt 5) / 10`` on ``(1 - sqrt 5) / 2``
    and the rest on ``(1 + sqrt 5) / 2``; its first three moments are
    0, 1 and 1.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    rng = _rng(cfg, stream)
    if cfg.multiplier == "two-point-golden":
        return np.where(rng.random(n) < GOLDEN_P_LOW, GOLDEN_LOW, GOLDEN_HIGH)
    if cfg.multiplier == "rademacher":
        return np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return rng.standard_normal(n)


def bootstrap_sample(theta_hat, sigma: SigmaEstimate, model, X, omega) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    return model(X, np.asarray(theta_hat, dtype=float)) + np.sqrt(sigma.per_point) * np.asarray(omega, dtype=float)


def bootstrap_responses(fitted, sd, cfg: BootstrapConfig) -> np.ndarray:
    """All ``B`` bootstrap response vectors, one per row."""
    fitted = np.asarray(fitted, dtype=float)
    omega = np.stack([draw_multipliers(fitted.size, cfg, b) for b in range(cfg.B)])
    return fitted[None, :] + np.asarray(sd, dtype=float)[None, :] * omega


def bootstrap_statistics(pipeline: engine.TestPipeline, Y, cfg: BootstrapConfig) -> engine.GridStatistics:
    """Statistics on every bandwidth for each of the ``B`` bootstrap samples."""
    Y = np.asarray(Y, dtype=float)
    fit = pipeline.fit(Y)
    sigma = pipeline.variance.estimate(Y)
    Ystar = bootstrap_responses(Y - fit.residuals, sigma.sd, cfg)
    stats = pipeline.statistics(Ystar)
    finite = np.all(np.isfinite(stats.T) & np.isfinite(stats.v_single) & np.isfinite(stats.v_diff), axis=1)
    if not finite.all():
        raise AdaptspecError(f"bootstrap replicate {int(np.flatnonzero(~finite)[0])} produced non-finite statistics")
    return stats


def critical_rank(B: int, alpha: float) -> int:
    """Rank ``ceil((B + 1)(1 - alpha))`` clipped to ``B``; 0 means no threshold."""
    rank = math.ceil((B + 1) * (1.0 - alpha) - 1e-9)
    return min(max(rank, 0), B)


def critical_value(values, alpha: float) -> float:
    """Order statistic of rank :func:`critical_rank` (``-inf`` at rank 0)."""
    values = np.sort(np.asarray(values, dtype=float))
    rank = critical_rank(values.size, alpha)
    if values.size and rank == 0 and alpha < 1.0:
        rank = 1
    return float(values[rank - 1]) if rank > 0 else -math.inf


def variant_values(kind: str, stats: engine.GridStatistics, gamma_n=None, index=None) -> np.ndarray:
    if kind == "adaptive":
        return engine.adaptive_statistic(stats, gamma_n)[0]
    if kind == "self-normalized":
        return engine.self_normalized_statistic(stats, gamma_n)[0]
    if kind == "max":
        return engine.max_statistic(stats)[0]
    if kind == "fixed":
        return engine.fixed_statistic(stats, index or 0)[0]
    raise ValueError(f"unknown test variant {kind!r}")


def _kind(runner) -> str:
    kinds = {
        engine.run_test: "adaptive",
        engine.run_max_test: "max",
        engine.run_fixed_h_test: "fixed",
        engine.run_selected_self_normalized: "self-normalized",
    }
    if runner in kinds:
        return kinds[runner]
    if isinstance(runner, str):
        return runner
    raise ValueError(f"unsupported test runner {runner!r}")


def bootstrap_critical_value(X, Y, model, test_cfg: engine.TestConfig, runner, boot_cfg: BootstrapConfig, *, pipeline=None, index=None) -> float:
    """Bootstrap critical value of the test computed by ``runner``.

    ``runner`` is one of the ``run_*`` functions of :mod:`adaptspec.engine`
    (or its variant name). ``index`` selects the bandwidth of a fixed-bandwidth
    test within the grid (default: the first).
    """
    kind = _kind(runner)
    if boot_cfg.B < 1.0 / test_cfg.alpha - 1.0:
        warnings.warn(
            f"B = {boot_cfg.B} draws are too few for level {test_cfg.alpha}; use at least {math.ceil(1 / test_cfg.alpha - 1)}",
            RuntimeWarning,
            stacklevel=2,
        )
    if pipeline is None:
        pipeline = engine.TestPipeline(X, model, test_cfg)
    gamma = test_cfg.gamma_n if kind in ("adaptive", "self-normalized") else None
    stats = bootstrap_statistics(pipeline, Y, boot_cfg)
    return critical_value(variant_values(kind, stats, gamma, index), test_cfg.alpha)
