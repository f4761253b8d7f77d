import math

import numpy as np
import pytest
from scipy.integrate import quad

from adaptspec import simulation as sim
from adaptspec.errors import AdaptspecError
from adaptspec.simulation import (
    ALTERNATIVE_AMPLITUDE,
    CSV_HEADER,
    Cell,
    DgpSpec,
    ExperimentSettings,
    RejectionTable,
    Scenario,
    TestVariant,
    emit_table,
    generate_dgp,
    paper_grid,
    parse_config,
    preset,
    read_table,
    render_text,
    run_experiment,
    standard_variants,
    table_to_csv,
)

SMALL = ExperimentSettings(grid=paper_grid(), B=39)


# ---------------------------------------------------------------------------
# Data generating process
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("t", [2, 5, 10])
def test_signal_to_noise_one_third(t):
    r = ALTERNATIVE_AMPLITUDE
    signal, _ = quad(lambda x: 0.5 * r**2 * math.cos(2 * math.pi * t * x) ** 2, -1, 1, limit=200)
    assert math.isclose(signal, 1 / 3, rel_tol=1e-10)


def test_white_noise_null():
    spec = DgpSpec(n=50)
    x, y = generate_dgp(spec, 1, 0)
    assert np.all((x >= -1) & (x <= 1))
    np.testing.assert_array_equal(spec.mean(x), 0.0)
    spec2 = DgpSpec(theta1=1.0, theta2=3.0, n=50)
    np.testing.assert_array_equal(spec2.mean(x), 1.0 + 3.0 * x)


def test_dgp_deterministic_and_replicate_specific():
    spec = DgpSpec(r=ALTERNATIVE_AMPLITUDE, t=5)
    a, b = generate_dgp(spec, 3, 7), generate_dgp(spec, 3, 7)
    np.testing.assert_array_equal(a[1], b[1])
    assert not np.array_equal(a[1], generate_dgp(spec, 3, 8)[1])


@pytest.mark.parametrize("family, variance", [("gaussian", 1.0), ("exponential", 1.0), ("student5", 1.0), ("heteroscedastic", 2 / 3)])
def test_error_variance(family, variance):
    x, y = generate_dgp(DgpSpec(error_family=family, n=10**6), 0, 0)
    assert abs(y.mean()) < 0.01
    assert abs(y.var() / variance - 1.0) <= 0.01


def test_heteroscedastic_integral():
    value, _ = quad(lambda x: 0.5 * (1 + 3 * x * x) / 3, -1, 1)
    assert math.isclose(value, 2 / 3)
    spec = DgpSpec(error_family="heteroscedastic")
    np.testing.assert_allclose(spec.conditional_variance(np.array([0.0, 1.0])), [1 / 3, 4 / 3])


def test_unknown_family():
    with pytest.raises(ValueError):
        DgpSpec(error_family="cauchy")


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


def test_cell_frequency_and_se():
    cell = Cell("H0", "ours", 1.0, 0.05, 44, 1000)
    assert cell.frequency == 0.044
    assert round(cell.mc_se, 5) == 0.00649


def test_empty_table_is_header_only(tmp_path):
    assert table_to_csv(RejectionTable()) == ",".join(CSV_HEADER) + "\n"
    csv_path, _ = emit_table(RejectionTable(), tmp_path / "empty.csv")
    assert csv_path.read_bytes() == (",".join(CSV_HEADER) + "\n").encode()


def test_csv_round_trip(tmp_path):
    table = RejectionTable(
        [
            Cell("H0", "ours", 1.5, 0.02, 17, 1000),
            Cell("t=10", "max", None, 0.05, 246, 500),
            Cell("t=10", "fixed_h0", None, 0.05, 0, 500),
        ]
    )
    csv_path, txt_path = emit_table(table, tmp_path / "out.csv")
    assert read_table(csv_path) == table
    assert b"\r" not in csv_path.read_bytes()
    assert "49.2" in txt_path.read_text()
    row = csv_path.read_text().splitlines()[1]
    assert row == "H0,ours,1.5,0.02,17,1000,0.017,0.00408791"


def test_variant_validation():
    with pytest.raises(ValueError):
        TestVariant("ours")
    with pytest.raises(ValueError):
        TestVariant("max", 1.0)
    assert [v.label for v in standard_variants((1.0,), selfnorm=False)] == ["fixed_h0", "fixed_hJ", "max", "ours(c=1)"]


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _scenarios(reps=12):
    return [
        Scenario("H0", DgpSpec(n=80), reps),
        Scenario("t=2", DgpSpec(r=ALTERNATIVE_AMPLITUDE, t=2, n=80), reps),
    ]


def test_alpha_one_rejects_everything():
    settings = ExperimentSettings(grid=paper_grid(), B=19, levels=(1.0,))
    table = run_experiment(_scenarios(5), standard_variants(), settings, seed=1)
    assert table.cells and all(cell.frequency == 1.0 for cell in table.cells)


def test_parallel_run_is_identical():
    variants = standard_variants((1.0, 2.0))
    a = run_experiment(_scenarios(), variants, SMALL, seed=4, jobs=1, chunk=5)
    b = run_experiment(_scenarios(), variants, SMALL, seed=4, jobs=2, chunk=5)
    c = run_experiment(_scenarios(), variants, SMALL, seed=4, jobs=1, chunk=50)
    assert a == b == c
    assert table_to_csv(a) == table_to_csv(b)
    assert a != run_experiment(_scenarios(), variants, SMALL, seed=5)


def test_level_monotonicity_and_counts():
    table = run_experiment(_scenarios(20), standard_variants(), SMALL, seed=2)
    for cell in table.cells:
        if cell.level == 0.02:
            assert cell.rejections <= table.get(cell.scenario, cell.test, cell.c, 0.05).rejections
        assert cell.replications == 20
    assert sum(table.failures.values()) == 0
    assert all(v == 0 for v in table.violations.values())


def test_failures_are_excluded(monkeypatch):
    original = sim.run_replicate

    def flaky(scenario, variants, settings, seed, rep):
        if rep == 3:
            raise AdaptspecError("synthetic failure")
        return original(scenario, variants, settings, seed, rep)

    monkeypatch.setattr(sim, "run_replicate", flaky)
    table = run_experiment(_scenarios(6)[:1], (TestVariant("max"),), SMALL, seed=0)
    assert table.failures == {"H0": 1}
    assert table.get("H0", "max").replications == 5


def test_text_layout():
    table = run_experiment(
        [Scenario(name, DgpSpec(r=0.0 if name == "H0" else ALTERNATIVE_AMPLITUDE, t=t, n=60), 2) for name, t in (("H0", 0), ("t=2", 2), ("t=5", 5), ("t=10", 10))],
        standard_variants(),
        ExperimentSettings(grid=paper_grid(), B=19),
    )
    lines = render_text(table).splitlines()
    assert len(lines) == 1 + 4 * 2 + 1
    assert "ours c=1.5" in lines[0] and "selfnorm c=2" in lines[0]


def test_power_ordering_desk_scale():
    """Fine fixed bandwidth and data-driven tests beat the coarse one on oscillating alternatives."""
    scenarios, variants, settings = preset("table1", alt_reps=200)
    table = run_experiment(scenarios[1:], variants, ExperimentSettings(grid=settings.grid, B=99), seed=3)
    for scen in ("t=2", "t=5", "t=10"):
        base = table.get(scen, "fixed_h0")
        for test, c in table.columns:
            if test == "fixed_h0":
                continue
            cell = table.get(scen, test, c)
            slack = 2 * math.hypot(base.mc_se, cell.mc_se)
            assert cell.frequency >= base.frequency - slack, (scen, test, c)
    ours, mx = table.get("t=10", "ours", 1.0), table.get("t=10", "max")
    assert ours.frequency >= mx.frequency - 2 * math.hypot(ours.mc_se, mx.mc_se)


# ---------------------------------------------------------------------------
# Presets and configuration files
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", sim.PRESETS)
def test_presets(name):
    scenarios, variants, settings = preset(name)
    assert [s.name for s in scenarios] == ["H0", "t=2", "t=5", "t=10"]
    assert [s.replications for s in scenarios] == [1000, 500, 500, 500]
    assert settings.grid.values == tuple(2.0**-k for k in range(2, 8)) and settings.B == 199
    assert any(v.kind == "selfnorm" for v in variants) == (name == "table1")
    if name == "table4":
        assert all(s.variance == "local:0.0625" and s.dgp.error_family == "heteroscedastic" for s in scenarios)
    if name == "table5":
        assert all(s.model == "linear" and (s.dgp.theta1, s.dgp.theta2) == (1.0, 3.0) for s in scenarios)
    full, _, _ = preset(name, full_scale=True)
    assert [s.replications for s in full] == [5000, 1000, 1000, 1000]


def test_unknown_preset():
    with pytest.raises(ValueError):
        preset("table6")


def test_parse_config():
    text = """
seed = 9
B = 49
c = 1, 2
tests = ours, max
h0 = 0.25
Jn = 3

[scenario.null]
errors = student5
reps = 10

[scenario.wiggle]
r = 0.8
t = 5
n = 90
"""
    scenarios, variants, settings, seed = parse_config(text)
    assert seed == 9 and settings.B == 49 and len(settings.grid) == 4
    assert [v.label for v in variants] == ["ours(c=1)", "ours(c=2)", "max"]
    assert scenarios[0].name == "null" and scenarios[0].replications == 10 and scenarios[0].dgp.error_family == "student5"
    assert scenarios[1].dgp.n == 90 and scenarios[1].replications == 500


def test_parse_config_preset_with_overrides():
    scenarios, variants, settings, seed = parse_config("preset = table4\nnull_reps = 20\nalt_reps = 10\n")
    assert [s.replications for s in scenarios] == [20, 10, 10, 10]
    assert scenarios[0].variance == "local:0.0625"


def test_parse_config_rejects_unknown_section():
    with pytest.raises(ValueError):
        parse_config("[other]\nx = 1\n")
