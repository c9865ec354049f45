import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pvc.errors import NonFiniteError
from pvc.services import backward
from pvc.services.conditioning import relative_timestamps
from pvc.services.verification import (
    GRAD_MODULES,
    ZERO_GRAD_ATOL,
    build_case,
    check_causality,
    check_gradient_causality,
    check_init_identity,
    compare_grads,
    finite_diff_grad,
    grad_check_case,
    case_config,
    run_grad_check,
)
from pvc.utils.tensor_engine import silu_grad


def test_finite_diff_of_square():
    g = finite_diff_grad(lambda x: float(np.sum(x ** 2)), np.array([3.0]), 1e-5)
    assert g[0] == pytest.approx(6.0, abs=1e-6)


def test_finite_diff_of_sum_is_exactly_one():
    g = finite_diff_grad(lambda x: float(np.sum(x)), np.array([1.0, 2.0, 3.0]), 2.0 ** -10)
    assert_array_equal(g, 1.0)


def test_silu_derivative_at_zero():
    assert silu_grad(np.array(0.0)) == pytest.approx(0.5, abs=1e-9)


def test_finite_diff_errors():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: 0.0, np.zeros(2), 0.0)
    with pytest.raises(NonFiniteError):
        finite_diff_grad(lambda x: float("inf"), np.zeros(2), 1e-5)


@pytest.mark.parametrize("module_id", GRAD_MODULES)
def test_grad_check_passes(module_id):
    report = run_grad_check(module_id, seed=0, tol=1e-6, fd_step=1e-5)
    assert report.passed, report.to_text()
    assert report.max_rel_error < 1e-6
    names = {e.name for e in report.entries}
    case = build_case(module_id, 0)
    assert names == set(case.tensors())


def test_small_gradient_error_is_not_masked_by_large_ones():
    case = build_case("adaln", 0)
    analytic = case.grads(case.inputs, case.params, case.upstream)
    numeric = finite_diff_grad(case.loss_wrt("w3"), case.params.w3, 1e-5)
    i = np.unravel_index(np.argmin(np.abs(numeric)), numeric.shape)
    w3 = analytic["w3"].copy()
    w3[i] *= 1.0 + 1e-4
    report = grad_check_case(case, "adaln", 0, tol=1e-6, fd_step=1e-5, analytic={**analytic, "w3": w3})
    entry = next(e for e in report.entries if e.name == "w3")
    assert not entry.passed
    assert entry.error > 1e-5
    assert not report.passed


@pytest.mark.parametrize("module_id, names", [
    ("tmha_causal", {"bk"}),
    ("progressive_layer", {"smha.bk", "tmha.bk"}),
])
def test_key_bias_is_checked_against_zero(module_id, names):
    report = run_grad_check(module_id, seed=0, tol=1e-6, fd_step=1e-5)
    absolute = {e.name for e in report.entries if e.metric == "absolute"}
    assert absolute == names
    assert report.max_abs_zero_grad < ZERO_GRAD_ATOL
    assert "max_abs_zero_grad=" in report.to_text()


def test_nonzero_key_bias_gradient_fails():
    g = np.zeros(4)
    entries = compare_grads({"bk": g + 1e-3}, {"bk": g}, tol=1e-6, zero_grads=("bk",))
    assert entries[0].metric == "absolute"
    assert not entries[0].passed


def test_relative_error_uses_each_element_magnitude():
    numeric = {"w": np.array([1.0, 1e-6])}
    ok = compare_grads({"w": np.array([1.0, 1e-6 * (1 + 1e-8)])}, numeric, tol=1e-6)
    bad = compare_grads({"w": np.array([1.0, 1e-6 * (1 + 1e-4)])}, numeric, tol=1e-6)
    assert ok[0].passed
    assert not bad[0].passed
    assert bad[0].error == pytest.approx(1e-4, rel=1e-6)


def test_grad_check_is_deterministic():
    a = run_grad_check("adaln", seed=5)
    b = run_grad_check("adaln", seed=5)
    assert a.to_text() == b.to_text()


def test_unsatisfiable_tolerance_fails():
    report = run_grad_check("temporal_embedding", seed=1, tol=1e-30)
    assert not report.passed
    assert "passed=false" in report.to_text()


def test_unknown_module():
    with pytest.raises(ValueError):
        run_grad_check("patchify", seed=0)


@pytest.mark.parametrize("module_id", GRAD_MODULES)
def test_zero_upstream_gives_zero_grads(module_id):
    case = build_case(module_id, 2)
    grads = case.grads(case.inputs, case.params, np.zeros_like(case.upstream))
    for name, g in grads.items():
        assert_array_equal(g, 0.0, err_msg=name)


def test_zero_gate_still_gets_gradient():
    cfg = case_config()
    case = build_case("progressive_layer", 3)
    params = case.params.replace("gate_alpha", np.zeros(cfg.channels))
    ts = relative_timestamps(3)
    x = case.inputs["x"]
    _, grads = backward.progressive_layer_backward(x, ts, params, cfg, case.upstream)

    def loss(alpha):
        return case.loss(case.inputs, params.replace("gate_alpha", alpha))

    numeric = finite_diff_grad(loss, np.zeros(cfg.channels), 1e-5)
    assert np.max(np.abs(grads["gate_alpha"])) > 1e-3
    assert_allclose(grads["gate_alpha"], numeric, atol=1e-7)


def test_causality_check(toy_cfg):
    report = check_causality(toy_cfg, seed=0, frames=6)
    assert report.passed, report.to_text()
    assert report.metrics["max_leak"] <= 1e-12
    assert report.metrics["min_influence"] > 0.0


def test_gradient_causality_check(toy_cfg):
    report = check_gradient_causality(toy_cfg, seed=1, frames=6)
    assert report.passed, report.to_text()
    assert report.metrics["max_future_grad"] == 0.0
    assert report.metrics["min_past_grad"] > 0.0


def test_init_identity_check(toy_cfg):
    report = check_init_identity(toy_cfg, seed=7)
    assert report.passed
    assert report.metrics["max_abs_diff"] == 0.0
    assert "check=init_identity" in report.to_text()
