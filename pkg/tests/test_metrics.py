import logging
import math
import random
from dataclasses import replace

import pytest

from conftest import cells_from_raw, make_cell, random_raw
from oracle_naive import naive_metrics, naive_si_two_point

from greenmetrics.core import (
    DEFAULT_BETAS,
    AnalysisConfig,
    UndefinedMetricError,
    ValidationError,
)
from greenmetrics.metrics import (
    aggregate_si,
    build_normalization,
    compute_all,
    compute_cer,
    compute_eco,
    compute_gf_beta,
    compute_gqi,
    compute_scv,
    compute_sci,
    compute_sei,
    compute_si,
    compute_svi,
    gf_beta_sweep,
    group_regimes,
    model_level_mean,
    summarize_cell,
)

CFG500 = AnalysisConfig(grid_intensity_g_per_kwh=500.0)


# -- primary metrics ---------------------------------------------------------


def test_sci_examples():
    assert compute_sci(0.01, CFG500) == pytest.approx(1.0, abs=1e-15)
    assert compute_sci(0.0, CFG500) == 0.0
    assert compute_sci(0.00575, AnalysisConfig(200.0)) == pytest.approx(0.23, abs=1e-15)


def test_sci_linearity():
    rng = random.Random(2)
    for _ in range(100):
        e = rng.uniform(0, 1)
        assert compute_sci(2 * e, CFG500) == 2 * compute_sci(e, CFG500)


def test_sei_examples():
    assert compute_sei(1.0) == 1.0
    assert compute_sei(0.25) == 4.0
    with pytest.raises(UndefinedMetricError):
        compute_sei(0.0)


def test_cer_examples():
    assert compute_cer(91, 50) == pytest.approx(1.82)
    assert compute_cer(0, 3.0) == 0
    with pytest.raises(UndefinedMetricError):
        compute_cer(50, 0)
    with pytest.raises(UndefinedMetricError, match="coverage absent"):
        compute_cer(None, 3.0)


def test_si_examples():
    assert compute_si([4.2, 4.2, 4.2]) == 1.0
    assert compute_si([1, 3]) == 0.5
    xs = [1.0, 2.5, 7.0]
    assert compute_si([7 * x for x in xs]) == pytest.approx(compute_si(xs), abs=1e-12)
    assert compute_si([1, 100]) < 0.1
    with pytest.raises(UndefinedMetricError):
        compute_si([-1, 1])


def test_si_can_be_negative():
    # mu = 1, sigma = 2
    assert compute_si([-1, 3]) == -1.0


def test_aggregate_si():
    assert aggregate_si({"SCI": [2, 2], "SEI": [0.5, 0.5], "CER": [9, 9]}, CFG500) == 1.0
    # series whose SIs are exactly 0.9, 0.8, 0.7
    series = {"SCI": [0.9, 1.1], "SEI": [0.8, 1.2], "CER": [0.7, 1.3]}
    assert aggregate_si(series, CFG500) == pytest.approx(0.8, abs=1e-12)
    assert aggregate_si({"SCI": [1, 3], "SEI": None}, CFG500) == 0.5
    per = aggregate_si(series, AnalysisConfig(500.0, si_aggregation="per_metric"))
    assert per == pytest.approx({"SCI": 0.9, "SEI": 0.8, "CER": 0.7})
    with pytest.raises(ValidationError):
        aggregate_si({"CER": None}, CFG500)


def test_model_level_si_fixture_matches_target():
    # Two-run cells with b/a chosen so the two-point SI is 0.915 for the SCI,
    # SEI and CER series alike; every variant of the model gets the same shape.
    a = 0.002
    b = a * 1.085 / 0.915
    assert naive_si_two_point(a, b) == pytest.approx(0.915, abs=1e-12)
    cells = [
        make_cell("m", v, [(60.0, a, a * 0.4), (60.0, b, b * 0.4)], coverage=90.0)
        for v in ("V0", "V1", "V2", "V3")
    ]
    result = compute_all(cells, CFG500)
    assert model_level_mean(result, "si") == {"m": pytest.approx(0.915, abs=1e-12)}


# -- derived metrics ---------------------------------------------------------


def test_gqi_examples():
    assert compute_gqi(90, 0.006) == pytest.approx(0.0119205298, abs=1e-9)
    assert compute_gqi(50, 0.5) == pytest.approx(0.5)
    assert compute_gqi(0, 0.3) == 0
    with pytest.raises(UndefinedMetricError):
        compute_gqi(0, 0)


def test_gqi_normalized_mode():
    cfg = AnalysisConfig(500.0, gqi_energy_mode="normalized_efficiency")
    assert compute_gqi(80, 123.0, cfg, normalized_efficiency=0.8) == pytest.approx(0.8)
    with pytest.raises(ValidationError):
        compute_gqi(80, 1.0, cfg)


def test_scv_examples():
    assert compute_scv(100, 10, 2, 4) == (5.0, 2.5)
    assert compute_scv(0, 10, 2, 4) == (0, 0)
    assert compute_scv(50, 10, 0, 1) == (None, 5.0)


def test_svi_examples():
    assert compute_svi(100, 0, 0, 0) == 1.0
    assert compute_svi(73, 0.3, 0.4, 1.0) == 0
    assert compute_svi(80, 0.5, 0.5, 0.25) == pytest.approx(0.8 / 1.5 / 1.5 * 0.75, abs=1e-15)
    with pytest.raises(ValidationError):
        compute_svi(80, 1.2, 0, 0)


def test_eco_examples():
    assert compute_eco(0, 0) == 1.0
    assert compute_eco(1, 1) == 0.25
    assert compute_eco(0.5, 0) == pytest.approx(2 / 3, abs=1e-15)


def test_gf_examples():
    assert compute_gf_beta(0.7, 0.7, 1.0) == 0.7
    assert compute_gf_beta(0.6, 0.9, 1e-6) == pytest.approx(0.6, abs=1e-6)
    expected = (1 + 3.24) * 0.9 / (3.24 * 0.9 + 1.0)
    assert compute_gf_beta(0.9, 1.0, 1.8) == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.97446, abs=1e-5)
    with pytest.raises(ValidationError):
        compute_gf_beta(0.5, 0.5, 0)


# -- normalization -----------------------------------------------------------


def _summary_cells(energies, durations=None):
    durations = durations or [60.0] * len(energies)
    return [
        make_cell(f"m{i}", "V0", [(t, e, e * 0.5), (t, e * 1.1, e * 0.55)], coverage=80.0)
        for i, (e, t) in enumerate(zip(energies, durations))
    ]


def test_normalization_bounds():
    summaries = [summarize_cell(c, CFG500) for c in _summary_cells([0.002, 0.004, 0.006], [10.0, 20.0, 30.0])]
    ctx = build_normalization(summaries)[None]
    ts = [s.mean_duration_s for s in summaries]
    assert [ctx.hat("T", t) for t in ts] == [0.0, 0.5, 1.0]
    scis = sorted(s.sci for s in summaries)
    assert ctx.hat("SCI", scis[0]) == 0.0 and ctx.hat("SCI", scis[-1]) == 1.0


def test_normalization_degenerate_and_single():
    summaries = [summarize_cell(c, CFG500) for c in _summary_cells([0.003, 0.003])]
    ctx = build_normalization(summaries)[None]
    assert all(ctx.hat("SCI", s.sci) == 0.0 for s in summaries)
    one = build_normalization(summaries[:1])[None]
    assert one.hat("T", summaries[0].mean_duration_s) == 0.0
    with pytest.raises(ValidationError):
        build_normalization([])


def test_normalization_per_variant_scope():
    cells = [
        make_cell("a", "V0", [(10.0, 0.001, 0.0005)], 80.0),
        make_cell("b", "V0", [(20.0, 0.002, 0.001)], 80.0),
        make_cell("a", "V1", [(100.0, 0.01, 0.005)], 80.0),
    ]
    summaries = [summarize_cell(c, CFG500) for c in cells]
    ctxs = build_normalization(summaries, "per_prompt_variant")
    assert set(ctxs) == {"V0", "V1"}
    assert ctxs["V0"].hat("T", 20.0) == 1.0
    assert ctxs["V1"].hat("T", 100.0) == 0.0


# -- sweep -------------------------------------------------------------------


def test_sweep_default_six_betas():
    per_cell, regimes = gf_beta_sweep({("m", "V0"): (0.8, 0.6)}, DEFAULT_BETAS)
    assert len(per_cell[("m", "V0")]) == 6
    assert [b for b, _ in regimes.eco_domain] == [0.3, 0.6, 0.9]
    assert [b for b, _ in regimes.quality_domain] == [1.2, 1.5, 1.8]
    for b, m in regimes.eco_domain + regimes.quality_domain:
        assert m == per_cell[("m", "V0")][b]


def test_sweep_two_cell_brute_force():
    inputs = {("a", "V0"): (0.91, 0.55), ("b", "V0"): (0.62, 0.97)}
    _, regimes = gf_beta_sweep(inputs, DEFAULT_BETAS)
    for b, mean in regimes.eco_domain + regimes.quality_domain:
        vals = [(1 + b * b) * q * e / (b * b * q + e) for q, e in inputs.values()]
        assert mean == pytest.approx(sum(vals) / 2, abs=1e-15)


def test_sweep_excludes_missing_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        per_cell, regimes = gf_beta_sweep({("a", "V0"): (None, 0.5), ("b", "V0"): (0.5, 0.5)}, (0.5, 1.0, 2.0))
    assert per_cell[("a", "V0")] == {0.5: None, 1.0: None, 2.0: None}
    assert regimes.balanced == ((1.0, 0.5),)
    assert "a:V0" in caplog.text


def test_regime_membership():
    r = group_regimes({0.5: 1.0, 1.0: 2.0, 1.5: 3.0})
    assert r.eco_domain == ((0.5, 1.0),) and r.quality_domain == ((1.5, 3.0),) and r.balanced == ((1.0, 2.0),)


# -- compute_all -------------------------------------------------------------


def _assert_matches_oracle(result, raw, cfg, tol=1e-9):
    expected = naive_metrics(raw, cfg.grid_intensity_g_per_kwh, cfg.runs_per_batch, cfg.betas)
    assert set(result.metrics) == set(expected)
    for key, exp in expected.items():
        ms = result.metrics[key]
        for name in ("sci", "sei", "cer", "si", "gqi", "scv_c", "scv_e", "svi", "eco"):
            if name in exp:
                assert abs(getattr(ms, name) - exp[name]) <= tol, (key, name)
            else:
                assert getattr(ms, name) is None, (key, name)
        if "gf_beta" in exp:
            for b, v in exp["gf_beta"].items():
                assert abs(ms.gf_beta[b] - v) <= tol, (key, b)


def test_compute_all_fixture_matches_oracle():
    raw = {
        ("a", "V0"): {"Q": 91.0, "runs": [(120.0, 0.002, 0.001), (100.0, 0.0025, 0.00125), (110.0, 0.0022, 0.0011)]},
        ("a", "V1"): {"Q": 85.5, "runs": [(90.0, 0.0018, 0.0009), (95.0, 0.0017, 0.00085)]},
        ("b", "V0"): {"Q": 60.0, "runs": [(200.0, 0.004, 0.002), (210.0, 0.0041, 0.00205)]},
        ("b", "V1"): {"Q": None, "runs": [(150.0, 0.003, 0.0015), (140.0, 0.0029, 0.00145)]},
    }
    result = compute_all(cells_from_raw(raw), CFG500)
    _assert_matches_oracle(result, raw, CFG500)
    assert "cer" in result.metrics[("b", "V1")].undefined
    assert result.metrics[("b", "V1")].gf_beta == {b: None for b in DEFAULT_BETAS}


def test_compute_all_random_populations_match_oracle():
    rng = random.Random(11)
    for _ in range(20):
        n_models = rng.randint(1, 10)
        variants = [f"V{i}" for i in range(rng.randint(1, 5))]
        models = [f"m{i}" for i in range(n_models)]
        missing = {(m, v) for m in models for v in variants if rng.random() < 0.1}
        raw = random_raw(rng, models, variants, rng.randint(1, 8), coverage_missing=missing)
        cfg = AnalysisConfig(rng.uniform(50, 900), runs_per_batch=rng.randint(1, 8))
        _assert_matches_oracle(compute_all(cells_from_raw(raw), cfg), raw, cfg)


def test_compute_all_isolates_zero_emission_cell():
    good = make_cell("a", "V0", [(60.0, 0.002, 0.001), (61.0, 0.0021, 0.0011)], 90.0)
    zero = make_cell("b", "V0", [(60.0, 0.0, 0.0), (61.0, 0.0, 0.0)], 90.0)
    result = compute_all([good, zero], CFG500)
    bad = result.metrics[("b", "V0")]
    assert bad.sei is None and bad.cer is None
    assert "sei" in bad.undefined and "cer" in bad.undefined
    ok = result.metrics[("a", "V0")]
    assert ok.sei is not None and ok.cer is not None and ok.svi is not None
    assert any("sei" in e for e in result.errors["b:V0"])


def test_compute_all_excludes_cell_without_successful_runs():
    good = make_cell("a", "V0", [(60.0, 0.002, 0.001)], 90.0)
    failed = make_cell("b", "V0", [(60.0, 0.002, 0.001)], 90.0)
    failed = replace(failed, runs=tuple(replace(r, failed=True) for r in failed.runs))
    result = compute_all([good, failed], CFG500)
    assert list(result.metrics) == [("a", "V0")]
    assert "b:V0" in result.errors


def test_inverse_identity_on_fixture_cells():
    rng = random.Random(5)
    raw = random_raw(rng, ["a", "b", "c"], ["V0", "V1"], 4)
    for ms in compute_all(cells_from_raw(raw), CFG500).metrics.values():
        assert abs(ms.sei * ms.sci - 1) < 1e-12


def test_emission_basis_raw_batch():
    cell = make_cell("a", "V0", [(60.0, 0.002, 0.001)], 90.0)
    per_run = compute_all([cell], CFG500).metrics[("a", "V0")]
    raw = compute_all([cell], AnalysisConfig(500.0, emission_basis="raw_batch")).metrics[("a", "V0")]
    assert per_run.cer == pytest.approx(90.0 / 0.2)
    assert raw.cer == pytest.approx(90.0 / 1.0)


def test_coverage_model_mean_mode():
    cells = [
        make_cell("a", "V0", [(60.0, 0.002, 0.001)], 80.0),
        make_cell("a", "V1", [(60.0, 0.002, 0.001)], 90.0),
    ]
    result = compute_all(cells, AnalysisConfig(500.0, coverage_mode="model_mean"))
    assert {v["coverage_pct"] for v in result.inputs.values()} == {85.0}


# -- invariants --------------------------------------------------------------


def test_svi_monotone_in_each_argument():
    rng = random.Random(8)
    for _ in range(300):
        q = rng.uniform(1, 99)
        hats = [rng.uniform(0.01, 0.99) for _ in range(3)]
        base = compute_svi(q, *hats)
        for i in range(3):
            bumped = list(hats)
            bumped[i] += 0.01
            assert compute_svi(q, *bumped) < base
        assert compute_svi(q + 1, *hats) > base


def test_gf_interpolates_and_limits():
    rng = random.Random(9)
    for _ in range(300):
        q, eco, beta = rng.uniform(0, 1), rng.uniform(0.25, 1), rng.uniform(0.01, 10)
        gf = compute_gf_beta(q, eco, beta)
        assert min(q, eco) - 1e-15 <= gf <= max(q, eco) + 1e-15
        assert abs(compute_gf_beta(q, eco, 1e-6) - q) < 1e-5
        assert abs(compute_gf_beta(q, eco, 1e6) - eco) < 1e-5


def test_eco_bounds():
    rng = random.Random(10)
    for _ in range(300):
        assert 0.25 <= compute_eco(rng.random(), rng.random()) <= 1.0
    assert math.isclose(compute_eco(1.0, 1.0), 0.25)
