import json

import pytest

from cvqc.errors import ConfigError
from cvqc.harness import (
    DEFAULT_TOLERANCES,
    Check,
    ExperimentReport,
    completeness_experiment,
    distribution_distance_report,
    hardcore_experiment,
    hellinger_trace_report,
    lemma_suite,
    load_tolerances,
    projection_report,
    secret_dependence_report,
    soundness_hybrid_experiment,
    summary_table,
    twirl_report,
    write_reports,
)


def test_check_semantics():
    assert Check("a", 0.1, 0.2).passed
    assert not Check("a", 0.3, 0.2).passed
    assert Check("a", 0.3, 0.2, expect_pass=False).passed
    assert Check("b", 0.5, 0.45, ">=").passed


def test_report_serializes_with_flags():
    rep = ExperimentReport("x", {"q": 5}, 0)
    rep.check("c", 1e-12, 1e-9)
    d = rep.to_dict()
    assert d["passed"] and d["checks"][0]["tolerance"] == 1e-9
    json.dumps(d)


@pytest.mark.parametrize("fn", [twirl_report, hellinger_trace_report, projection_report, distribution_distance_report])
def test_lemma_checks_and_their_negative_controls(fn):
    kwargs = {"maps": 10} if fn is twirl_report else {}
    good = fn(0, **kwargs)
    bad = fn(0, negative=True, **kwargs)
    assert good.passed and all(c.holds for c in good.checks)
    assert bad.passed and not any(c.holds for c in bad.checks)


def test_secret_dependence_counts_wraparounds():
    rep = secret_dependence_report(qs=(5,), ns=(1,))
    assert rep.metrics["failures"] == 0 and rep.metrics["wraparound_inputs"] > 0
    neg = secret_dependence_report(qs=(5,), ns=(1,), include_wrap=True)
    assert neg.metrics["failures"] > 0 and neg.passed


def test_reports_are_reproducible():
    a = lemma_suite(3, negative_controls=False)
    b = lemma_suite(3, negative_controls=False)
    strip = lambda r: {k: v for k, v in r.to_dict().items() if k != "wall_time"}
    assert [strip(r) for r in a] == [strip(r) for r in b]


@pytest.mark.parametrize("rho,h", [("zero", "0"), ("plus", "1"), ("bell", "01")])
def test_completeness(rho, h):
    rep = completeness_experiment(rho, h, trials=40)
    assert rep.passed, rep.checks
    assert rep.metrics["tv_exact_e0"] <= 1e-6


@pytest.mark.parametrize("attack,h", [("I", "1"), ("Z", "1"), ("X", "0"), ("rand2", "10"), ("rand-channel", "11")])
def test_soundness_hybrids(attack, h):
    rep = soundness_hybrid_experiment(attack, h, zero_error=attack == "I")
    assert rep.passed, [(c.name, c.value) for c in rep.checks]
    if attack == "I":
        assert rep.metrics["tv_P_rho"] <= 1e-6


def test_hardcore_calibration():
    triv = hardcore_experiment("trivial", 2000, seed=1)
    cheat = hardcore_experiment("cheating", 2000, seed=1)
    brute = hardcore_experiment("brute-force", 300, seed=1)
    assert triv.passed and cheat.passed
    assert cheat.metrics["advantage"] >= 0.45
    assert "advantage" in brute.metrics and not brute.checks


def test_custom_distinguisher_sees_the_small_n_bias():
    # at n = 1, d̂·s = 1 only when d̂ = s = 1, so echoing the bit has advantage 2^{-n-1}
    rep = hardcore_experiment(lambda A, v, dhat, bit, ctx: bit, 4000, seed=0)
    assert abs(rep.metrics["advantage"] - 0.25) <= 3 * rep.metrics["sigma"]


def test_tolerance_config(tmp_path):
    assert load_tolerances() == DEFAULT_TOLERANCES
    p = tmp_path / "tol.json"
    p.write_text(json.dumps({"twirl": 1e-8}))
    assert load_tolerances(p)["twirl"] == 1e-8
    for bad in ('{"twirl": -1}', '{"nope": 1}', "[1]", "{"):
        p.write_text(bad)
        with pytest.raises(ConfigError):
            load_tolerances(p)


def test_write_reports_and_summary(tmp_path):
    reps = [projection_report(0), projection_report(0, negative=True)]
    paths = write_reports(reps, tmp_path, {"version": "t", "seed": 0})
    assert len(paths) == 2
    payload = json.loads(paths[0].read_text())
    assert payload["header"]["seed"] == 0 and "report" in payload
    table = summary_table(reps)
    assert "projection_negative" in table and table.splitlines()[0].startswith("experiment")
