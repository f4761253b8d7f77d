"""Monte Carlo harness for rejection-rate tables.

Data come from ``Y = theta1 + theta2 X + r cos(2 pi t X) + e`` with ``X``
uniform on ``[-1, 1]``. Each replicate runs every requested test variant
against bootstrap critical values computed from one common set of
bootstrap samples, and the rejections are tallied at every nominal level.

Seeding: the master seed and the scenario name give a scenario seed; data
for replicate ``r`` use the stream ``(scenario seed, r, 0)`` and bootstrap
draw ``b`` of that replicate the stream ``(scenario seed, r, 1, b)``. The
table therefore does not depend on the number of workers.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import engine
from .bootstrap import BootstrapConfig, bootstrap_statistics, critical_value, variant_values
from .errors import AdaptspecError
from .models import get_model
from .weights import SmootherGrid, build_grid, parse_family

__all__ = [
    "ERROR_FAMILIES",
    "DgpSpec",
    "Scenario",
    "TestVariant",
    "Cell",
    "RejectionTable",
    "ExperimentSettings",
    "generate_dgp",
    "run_experiment",
    "emit_table",
    "table_to_csv",
    "render_text",
    "read_table",
    "preset",
    "load_config",
    "parse_config",
    "PRESETS",
]

logger = logging.getLogger(__name__)

ERROR_FAMILIES = ("gaussian", "exponential", "student5", "heteroscedastic")
ALTERNATIVE_AMPLITUDE = math.sqrt(2.0 / 3.0)
LEVELS = (0.02, 0.05)


@dataclass(frozen=True)
class DgpSpec:
    theta1: float = 0.0
    theta2: float = 0.0
    r: float = 0.0
    t: int = 0
    error_family: str = "gaussian"
    n: int = 150

    def __post_init__(self):
        if self.error_family not in ERROR_FAMILIES:
            raise ValueError(f"unknown error family {self.error_family!r}; choose from {ERROR_FAMILIES}")
        if self.n < 2:
            raise ValueError("need n >= 2")

    def mean(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.theta1 + self.theta2 * x + self.r * np.cos(2.0 * np.pi * self.t * x)

    def conditional_variance(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.error_family == "heteroscedastic":
            return (1.0 + 3.0 * x * x) / 3.0
        return np.ones_like(x)


def _errors(family: str, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = x.size
    if family == "gaussian":
        return rng.standard_normal(n)
    if family == "exponential":
        return rng.standard_exponential(n) - 1.0
    if family == "student5":
        return rng.standard_t(5, n) / math.sqrt(5.0 / 3.0)
    return np.sqrt((1.0 + 3.0 * x * x) / 3.0) * rng.standard_normal(n)


def generate_dgp(spec: DgpSpec, seed: int, replicate: int) -> tuple[np.ndarray, np.ndarray]:
    """One sample ``(X, Y)`` of size ``spec.n``; ``X`` on ``[-1, 1]``."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(replicate), 0)))
    x = rng.uniform(-1.0, 1.0, spec.n)
    return x, spec.mean(x) + _errors(spec.error_family, x, rng)


# ---------------------------------------------------------------------------
# Experiment description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    name: str
    dgp: DgpSpec
    replications: int
    model: str = "zero"
    variance: str = "rice"


@dataclass(frozen=True)
class TestVariant:
    """One column of a rejection table.

    ``kind`` is ``ours`` (selection + baseline standardisation),
    ``selfnorm`` (selection + studentisation at the selected bandwidth),
    ``max``, ``fixed_h0`` or ``fixed_hJ``.
    """

    __test__ = False

    kind: str
    c: float | None = None

    def __post_init__(self):
        if self.kind not in ("ours", "selfnorm", "max", "fixed_h0", "fixed_hJ"):
            raise ValueError(f"unknown test variant {self.kind!r}")
        if (self.kind in ("ours", "selfnorm")) != (self.c is not None):
            raise ValueError(f"variant {self.kind!r} {'needs' if self.c is None else 'takes no'} penalty multiplier c")

    @property
    def label(self) -> str:
        return self.kind if self.c is None else f"{self.kind}(c={self.c:g})"


def standard_variants(cs: Sequence[float] = (1.0, 1.5, 2.0), selfnorm: bool = True) -> tuple[TestVariant, ...]:
    out = [TestVariant("fixed_h0"), TestVariant("fixed_hJ"), TestVariant("max")]
    if selfnorm:
        out += [TestVariant("selfnorm", c) for c in cs]
    out += [TestVariant("ours", c) for c in cs]
    return tuple(out)


@dataclass(frozen=True)
class ExperimentSettings:
    grid: SmootherGrid
    family: str = "piecewise:0"
    B: int = 199
    multiplier: str = "two-point-golden"
    levels: tuple[float, ...] = LEVELS
    support: tuple[float, float] = (-1.0, 1.0)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    scenario: str
    test: str
    c: float | None
    level: float
    rejections: int
    replications: int

    @property
    def frequency(self) -> float:
        return self.rejections / self.replications if self.replications else float("nan")

    @property
    def mc_se(self) -> float:
        p = self.frequency
        return math.sqrt(p * (1.0 - p) / self.replications) if self.replications else float("nan")


@dataclass
class RejectionTable:
    """Rejection counts per (scenario, test, c, level).

    ``failures`` counts replicates dropped because the pipeline failed and
    ``violations`` tallies breaches of the selection-rule invariants; both
    are diagnostics and do not take part in equality.
    """

    cells: list[Cell] = field(default_factory=list)
    failures: dict[str, int] = field(default_factory=dict, compare=False)
    violations: dict[str, int] = field(default_factory=dict, compare=False)

    def get(self, scenario: str, test: str, c: float | None = None, level: float = 0.05) -> Cell:
        for cell in self.cells:
            if cell.scenario == scenario and cell.test == test and cell.c == c and math.isclose(cell.level, level):
                return cell
        raise KeyError((scenario, test, c, level))

    def frequency(self, scenario: str, test: str, c: float | None = None, level: float = 0.05) -> float:
        return self.get(scenario, test, c, level).frequency

    @property
    def scenarios(self) -> list[str]:
        return list(dict.fromkeys(cell.scenario for cell in self.cells))

    @property
    def columns(self) -> list[tuple[str, float | None]]:
        return list(dict.fromkeys((cell.test, cell.c) for cell in self.cells))

    @property
    def levels(self) -> list[float]:
        return sorted(set(cell.level for cell in self.cells))


CSV_HEADER = ("scenario", "test", "c", "level", "rejections", "replications", "frequency", "mc_se")


def table_to_csv(table: RejectionTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for cell in table.cells:
        writer.writerow(
            [
                cell.scenario,
                cell.test,
                "" if cell.c is None else repr(cell.c),
                repr(cell.level),
                cell.rejections,
                cell.replications,
                f"{cell.frequency:.6g}",
                f"{cell.mc_se:.6g}",
            ]
        )
    return buf.getvalue()


def _parse_table(text: str) -> RejectionTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise ValueError(f"not a rejection table: header {header}")
    cells = [
        Cell(row[0], row[1], float(row[2]) if row[2] else None, float(row[3]), int(row[4]), int(row[5]))
        for row in reader
        if row
    ]
    return RejectionTable(cells)


def read_table(path) -> RejectionTable:
    return _parse_table(Path(path).read_text())


def render_text(table: RejectionTable) -> str:
    """Aligned rendering: one block per scenario, one row per level, percentages."""
    cols = table.columns
    labels = [test if c is None else f"{test} c={c:g}" for test, c in cols]
    width = max([10] + [len(s) for s in labels]) + 2
    lines = ["".ljust(14) + "".join(s.rjust(width) for s in labels)]
    index = {(cell.scenario, cell.test, cell.c, cell.level): cell for cell in table.cells}
    for scen in table.scenarios:
        for k, level in enumerate(table.levels):
            head = (scen if k == 0 else "").ljust(8) + f"{100 * level:4.0f}% "
            vals = []
            for test, c in cols:
                cell = index.get((scen, test, c, level))
                vals.append(("-" if cell is None else f"{100 * cell.frequency:.1f}").rjust(width))
            lines.append(head.ljust(14) + "".join(vals))
    lines.append("Percentages of rejection at each nominal level.")
    return "\n".join(lines) + "\n"


def emit_table(table: RejectionTable, path) -> tuple[Path, Path]:
    """Write the CSV to ``path`` and the aligned text rendering next to it (``.txt``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(table_to_csv(table))
    text_path = path.with_suffix(".txt")
    text_path.write_text(render_text(table))
    return path, text_path


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def scenario_seed(master_seed: int, name: str) -> int:
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


def _variant_values(variant: TestVariant, stats: engine.GridStatistics, Jn: int) -> np.ndarray:
    if variant.kind == "ours":
        return variant_values("adaptive", stats, engine.penalty(variant.c, Jn))
    if variant.kind == "selfnorm":
        return variant_values("self-normalized", stats, engine.penalty(variant.c, Jn))
    if variant.kind == "max":
        return variant_values("max", stats)
    return variant_values("fixed", stats, index=0 if variant.kind == "fixed_h0" else stats.T.shape[1] - 1)


def run_replicate(scenario: Scenario, variants: Sequence[TestVariant], settings: ExperimentSettings, seed: int, rep: int) -> dict:
    """Run every variant on one replicate; returns rejection flags and invariant tallies."""
    lo, hi = settings.support
    x, y = generate_dgp(scenario.dgp, seed, rep)
    X = ((x - lo) / (hi - lo))[:, None]
    model = get_model(scenario.model, 1)
    cfg = engine.TestConfig(grid=settings.grid, family=settings.family, variance=scenario.variance)
    boot = BootstrapConfig(B=settings.B, multiplier=settings.multiplier, seed=seed, spawn_key=(rep, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pipeline = engine.TestPipeline(X, model, cfg)
    outer = pipeline.statistics(y)
    star = bootstrap_statistics(pipeline, y, boot)
    Jn = settings.grid.Jn
    reject = {}
    for v in variants:
        observed = float(_variant_values(v, outer, Jn)[0])
        values = _variant_values(v, star, Jn)
        for level in settings.levels:
            reject[(v.kind, v.c, level)] = observed >= critical_value(values, level)
    violations = {}
    for c in sorted({v.c for v in variants if v.c is not None}):
        gamma = engine.penalty(c, Jn)
        for where, stats in (("outer", outer), ("bootstrap", star)):
            for key, count in engine.selection_violations(stats, gamma).items():
                violations[f"{where}:{key}"] = violations.get(f"{where}:{key}", 0) + count
    return {"reject": reject, "violations": violations}


def _run_chunk(scenario, variants, settings, seed, reps):
    out = []
    for rep in reps:
        try:
            out.append(run_replicate(scenario, variants, settings, seed, rep))
        except (AdaptspecError, np.linalg.LinAlgError) as exc:
            logger.warning("scenario %s replicate %d failed: %s", scenario.name, rep, exc)
            out.append(None)
    return out


def run_experiment(
    scenarios: Iterable[Scenario],
    variants: Sequence[TestVariant],
    settings: ExperimentSettings,
    seed: int = 0,
    jobs: int = 1,
    chunk: int = 50,
) -> RejectionTable:
    """Tally rejections for every scenario, variant and level.

    Replicates run in chunks, optionally on ``jobs`` worker processes;
    the result is identical for any ``jobs``. Failed replicates are
    excluded and counted in ``failures``.
    """
    scenarios = list(scenarios)
    tasks = []
    for scen in scenarios:
        if scen.replications < 1:
            raise ValueError(f"scenario {scen.name!r} needs at least one replication")
        s = scenario_seed(seed, scen.name)
        for start in range(0, scen.replications, chunk):
            tasks.append((scen, s, range(start, min(start + chunk, scen.replications))))
    if jobs == 1:
        results = [_run_chunk(scen, variants, settings, s, reps) for scen, s, reps in tasks]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=jobs)(delayed(_run_chunk)(scen, variants, settings, s, reps) for scen, s, reps in tasks)

    per_scenario: dict[str, list] = {scen.name: [] for scen in scenarios}
    for (scen, _, _), res in zip(tasks, results):
        per_scenario[scen.name].extend(res)

    table = RejectionTable()
    for scen in scenarios:
        records = [r for r in per_scenario[scen.name] if r is not None]
        table.failures[scen.name] = len(per_scenario[scen.name]) - len(records)
        for rec in records:
            for key, count in rec["violations"].items():
                table.violations[key] = table.violations.get(key, 0) + count
        for v in variants:
            for level in settings.levels:
                hits = sum(bool(rec["reject"][(v.kind, v.c, level)]) for rec in records)
                table.cells.append(Cell(scen.name, v.kind, v.c, float(level), hits, len(records)))
    return table


# ---------------------------------------------------------------------------
# Presets and configuration files
# ---------------------------------------------------------------------------

PRESETS = ("table1", "table2", "table3", "table4", "table5")

_PRESET_ERRORS = {
    "table1": "gaussian",
    "table2": "exponential",
    "table3": "student5",
    "table4": "heteroscedastic",
    "table5": "gaussian",
}


def paper_grid() -> SmootherGrid:
    return build_grid(2.0**-2, 2.0, 5, piecewise=True)


def preset(name: str, full_scale: bool = False, null_reps: int | None = None, alt_reps: int | None = None, n: int = 150):
    """Scenarios, variants and settings reproducing one rejection table design.

    Desk scale uses 1000 null and 500 alternative replications; full scale
    5000 and 1000.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    null_reps = null_reps or (5000 if full_scale else 1000)
    alt_reps = alt_reps or (1000 if full_scale else 500)
    errors = _PRESET_ERRORS[name]
    theta = (1.0, 3.0) if name == "table5" else (0.0, 0.0)
    model = "linear" if name == "table5" else "zero"
    # local averaging over X_i +- 1/8 on [-1, 1] is +- 1/16 on the unit interval
    variance = "local:0.0625" if name == "table4" else "rice"
    scenarios = [Scenario("H0", DgpSpec(*theta, 0.0, 0, errors, n), null_reps, model, variance)]
    for t in (2, 5, 10):
        scenarios.append(Scenario(f"t={t}", DgpSpec(*theta, ALTERNATIVE_AMPLITUDE, t, errors, n), alt_reps, model, variance))
    variants = standard_variants(selfnorm=(name == "table1"))
    return scenarios, variants, ExperimentSettings(grid=paper_grid())


def _floats(text: str) -> list[float]:
    return [float(s) for s in text.replace(";", ",").split(",") if s.strip()]


def load_config(path, full_scale: bool = False):
    """Read an experiment configuration file; see :func:`parse_config`."""
    return parse_config(Path(path).read_text(), full_scale)


def parse_config(text: str, full_scale: bool = False):
    """Parse an experiment from a ``key = value`` file with ``[scenario.NAME]`` sections.

    Top-level keys (before any section) configure the experiment:
    ``preset``, ``seed``, ``n``, ``null_reps``, ``alt_reps``, ``B``,
    ``multiplier``, ``family``, ``h0``, ``a``, ``Jn``, ``c`` (comma list),
    ``tests`` (comma list of variant kinds), ``model``, ``variance``.
    Scenario sections accept ``errors``, ``r``, ``t``, ``theta1``,
    ``theta2``, ``n``, ``reps``, ``model`` and ``variance``. Returns
    ``(scenarios, variants, settings, seed)``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string("[experiment]\n" + text)
    top = parser["experiment"]

    seed = int(top.get("seed", "0"))
    n = int(top.get("n", "150"))
    base_scen, base_variants, base_settings = ([], None, None)
    if "preset" in top:
        base_scen, base_variants, base_settings = preset(
            top["preset"],
            full_scale,
            int(top["null_reps"]) if "null_reps" in top else None,
            int(top["alt_reps"]) if "alt_reps" in top else None,
            n,
        )
    family = top.get("family", base_settings.family if base_settings else "piecewise:0")
    name, _ = parse_family(family)
    if any(k in top for k in ("h0", "a", "Jn")) or base_settings is None:
        grid = build_grid(float(top.get("h0", "0.25")), float(top.get("a", "2")), int(top.get("Jn", "5")), piecewise=(name == "piecewise"))
    else:
        grid = base_settings.grid
    settings = ExperimentSettings(
        grid=grid,
        family=family,
        B=int(top.get("B", "199")),
        multiplier=top.get("multiplier", "two-point-golden"),
    )
    cs = _floats(top.get("c", "1, 1.5, 2"))
    if "tests" in top:
        variants = []
        for kind in (s.strip() for s in top["tests"].split(",") if s.strip()):
            variants += [TestVariant(kind, c) for c in cs] if kind in ("ours", "selfnorm") else [TestVariant(kind)]
        variants = tuple(variants)
    else:
        variants = base_variants or standard_variants(cs)

    null_reps = int(top.get("null_reps", "5000" if full_scale else "1000"))
    alt_reps = int(top.get("alt_reps", "1000" if full_scale else "500"))
    scenarios = list(base_scen)
    for section in parser.sections():
        if not section.startswith("scenario."):
            if section != "experiment":
                raise ValueError(f"unknown section [{section}]")
            continue
        sec = parser[section]
        r = float(sec.get("r", "0"))
        dgp = DgpSpec(
            theta1=float(sec.get("theta1", "0")),
            theta2=float(sec.get("theta2", "0")),
            r=r,
            t=int(sec.get("t", "0")),
            error_family=sec.get("errors", "gaussian"),
            n=int(sec.get("n", str(n))),
        )
        reps = int(sec.get("reps", str(null_reps if r == 0 else alt_reps)))
        scenarios.append(
            Scenario(
                section.split(".", 1)[1],
                dgp,
                reps,
                sec.get("model", top.get("model", "zero")),
                sec.get("variance", top.get("variance", "rice")),
            )
        )
    if not scenarios:
        raise ValueError("configuration defines no scenario")
    return scenarios, variants, settings, seed
