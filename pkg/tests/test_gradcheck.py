"""The finite-difference checker itself, and per-op gradient coverage."""

import numpy as np
import pytest

import dialoguecse.tensor as T
from dialoguecse.errors import GradCheckError
from dialoguecse.gradcheck import grad_check
from dialoguecse.gradsuite import full_loss_report, op_reports
from dialoguecse.tensor import Tensor


def test_quadratic_analytic_matches_numeric():
    x = Tensor([[1.0, 2.0]], requires_grad=True, dtype=T.DOUBLE)
    report = grad_check(lambda p: T.sum_all(T.mul(p, p)), [x], eps=1e-6, tol=1e-7, names=["x"])
    assert report.passed
    # analytic gradient of sum(x^2) is 2x
    T.reset_tape()
    x.zero_grad()
    T.backward(T.sum_all(T.mul(x, x)))
    assert np.allclose(x.grad, [[2.0, 4.0]], atol=1e-12)


def test_frozen_parameter_reported_without_comparison():
    x = Tensor([[1.0]], requires_grad=True, dtype=T.DOUBLE)
    frozen = Tensor([[2.0]], requires_grad=False, dtype=T.DOUBLE)
    report = grad_check(
        lambda a, b: T.sum_all(T.mul(a, b)), [x, frozen], names=["x", "frozen"]
    )
    assert report.passed
    by_name = {c.name: c for c in report.checks}
    assert by_name["frozen"].frozen
    assert not by_name["x"].frozen


def test_nonfinite_function_aborts_with_diagnostics():
    x = Tensor([[-1.0]], requires_grad=True, dtype=T.DOUBLE)
    with pytest.raises(GradCheckError, match="not finite|non-finite"):
        grad_check(lambda p: T.sum_all(T.log(p)), [x], names=["x"])


def test_report_summary_mentions_every_param():
    x = Tensor([[1.0]], requires_grad=True, dtype=T.DOUBLE)
    y = Tensor([[2.0]], requires_grad=False, dtype=T.DOUBLE)
    report = grad_check(lambda a, b: T.sum_all(T.mul(a, b)), [x, y], names=["alpha", "beta"])
    text = report.summary()
    assert "alpha" in text and "beta" in text and "frozen" in text


def test_every_op_passes_finite_difference_check():
    for name, report in op_reports():
        assert report.passed, f"{name}: max rel err {report.max_rel_err:.3e}\n{report.summary()}"


def test_frozen_encoder_layers_receive_no_gradient():
    report = full_loss_report(aggregation="mean", frozen_bottom=2)
    assert report.passed
    frozen = [c for c in report.checks if c.frozen]
    assert frozen, "expected frozen parameters in the report"
    assert all(c.name.startswith(("embed.", "layer0.", "layer1.")) for c in frozen)
