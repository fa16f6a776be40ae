import math

import pytest

from ou_sampling.special import r1
from ou_sampling.validate import CheckResult, check_hitting_identity, check_r1_vs_mc, run_validation


def corrupted_r1(z, params):
    return 1.2 * r1(z, params)


def test_negative_control_fails():
    assert not check_r1_vs_mc(corrupted_r1, n_paths=5000).passed
    assert not check_hitting_identity(corrupted_r1, n_paths=5000).passed


def test_check_line_format():
    r = CheckResult("x", True, 0.1, 1.0, "detail")
    assert r.line().startswith("PASS x:")
    assert CheckResult("y", False, math.nan, 1.0).line().startswith("FAIL y:")


@pytest.fixture(scope="module")
def report():
    return {r.name: r for r in run_validation()}


def test_report_names(report):
    for name in ("g-roundtrip", "r1-vs-MC", "hitting-identity", "frame-stats-vs-MC", "stopping-identity",
                 "renewal-identity", "moment-bounds", "determinism"):
        assert name in report


def test_all_checks_pass_on_default_seeds(report):
    for r in report.values():
        assert r.passed, r.line()
