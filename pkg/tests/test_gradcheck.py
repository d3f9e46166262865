import dataclasses

import numpy as np

from stable_gauss import gradcheck
from stable_gauss.gradcheck import CheckResult, ElementwiseCheck, Report, ScalarCheck, fd_error


def test_fd_error_metric():
    assert fd_error(1.0, 1.0) == 0.0
    assert fd_error(2.0, 1.0) == 0.5
    assert fd_error(1e-9, 0.0) == 1e-6  # floor
    assert np.isnan(fd_error(np.nan, 1.0))


def test_nan_check_fails():
    assert not CheckResult("x", float("nan"), 1e-6, 1).passed


def test_default_suite_passes():
    report = gradcheck.run_all()
    assert report.ok, report.format()
    assert all(r.max_error < 1e-4 for r in report.results)
    names = {r.name.split("/")[0] for r in report.results}
    assert names == {"scaleparam", "gaussian", "nn", "vae"}


def test_perturbed_derivative_is_reported_by_name():
    checks = gradcheck.scaleparam_checks()
    good = checks[0]
    bad = dataclasses.replace(good, name="broken", df=lambda p: good.df(p) * 1.001)
    report = gradcheck.run_all([good, bad])
    assert [r.name for r in report.failures] == ["broken"]
    assert "FAIL  broken" in report.format() and "1/2 checks passed" in report.format()


def test_scalar_check_catches_wrong_gradient():
    f = lambda x: float(np.sum(x**3))
    ok = ScalarCheck("cube", f, lambda x: 3 * x**2, np.array([0.5, -2.0])).run()
    off = ScalarCheck("cube", f, lambda x: 3 * x**2 + [0, 1e-3], np.array([0.5, -2.0])).run()
    assert ok.passed and not off.passed
    five = ScalarCheck("cube", f, lambda x: 3 * x**2, np.array([3.0]), h=1e-2, order=4).run()
    assert five.max_error < 1e-10


def test_elementwise_one_sided_at_zero():
    # kinked at 0: the left derivative belongs to the p <= 0 branch
    f = lambda p: np.where(p <= 0, p, 2 * p)
    r = ElementwiseCheck("kink", f, lambda p: np.where(p <= 0, 1.0, 2.0), points=(0.0, 1.0)).run()
    assert r.passed
