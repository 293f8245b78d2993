import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nullwaves import metrics
from nullwaves.metrics import (MetricSpec, SignatureError, causal_class, covector,
                               dual_norm_sq, eval_metric, pairwise_product, point)

MK = MetricSpec.minkowski()

# Frozen values from the independent symbolic-differentiation oracle
# (sympy, Christoffels and Ricci assembled from scratch in the standard
# geodesic-deviation convention; see tests/README note in the module docstring).
# The package's scalar_curvature uses the wave-operator convention, which is
# the negative of the standard trace.
R_STD_GAMMA_01X1 = {
    (0.0, 0.0, 0.0, 0.0): -0.06,
    (0.2, 0.7, -0.3, 1.1): -0.05216149412392835,
}
R_STD_GAMMA_SIN = {
    (0.0, 0.4, 0.0, 0.0): 0.10012426708965848,
    (0.0, -1.1, 0.0, 0.0): -0.29565766320445336,
}
R_STD_PRODUCT = {(0.3, 0.5, 0.0, 0.0): -0.09282126556465627}


def test_minkowski_eval():
    ev = eval_metric(MK, (0.3, 0.1, -0.2, 0.5))
    assert np.allclose(ev.g, np.diag([-1.0, 1, 1, 1]))
    assert np.allclose(ev.g @ ev.g_inv, np.eye(4), atol=1e-14)
    assert np.allclose(ev.christoffel, 0.0)
    assert ev.scalar_curvature == pytest.approx(0.0, abs=1e-14)


def test_conformal_zero_gamma_equals_minkowski():
    c0 = MetricSpec.conformal_minkowski("0")
    ev = eval_metric(c0, (1.0, 2.0, 3.0, -1.0))
    assert np.allclose(ev.g, np.diag([-1.0, 1, 1, 1]))
    assert ev.scalar_curvature == pytest.approx(0.0, abs=1e-14)


def test_conformal_curvature_matches_symbolic_oracle():
    spec = MetricSpec.conformal_minkowski("0.1*x1")
    for pt, r_std in R_STD_GAMMA_01X1.items():
        assert metrics.scalar_curvature(spec, pt) == pytest.approx(-r_std, rel=1e-10)


def test_conformal_sin_curvature_matches_symbolic_oracle():
    spec = MetricSpec.conformal_minkowski("0.05*sin(x1)")
    for pt, r_std in R_STD_GAMMA_SIN.items():
        assert metrics.scalar_curvature(spec, pt) == pytest.approx(-r_std, rel=1e-8)


def test_product_identity_is_flat():
    spec = MetricSpec.product("1", [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]])
    assert metrics.scalar_curvature(spec, (0.4, -0.2, 0.9, 0.1)) == pytest.approx(0.0, abs=1e-13)


def test_product_curvature_matches_symbolic_oracle():
    spec = MetricSpec.product("1 + 0.1*x1**2",
                              [["1 + 0.05*t**2", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]])
    for pt, r_std in R_STD_PRODUCT.items():
        assert metrics.scalar_curvature(spec, pt) == pytest.approx(-r_std, rel=1e-10)


def test_curvature_convention_makes_yamabe_covariant():
    # For g = e^{2 gamma} eta the covariance of box + R/6 requires
    # R = e^{-2 gamma} (6 box_eta gamma + 6 |d gamma|^2_eta) in this convention.
    spec = MetricSpec.conformal_minkowski("0.1*x1")
    # gamma = 0.1 x1: box_eta gamma = 0, |d gamma|^2 = 0.01
    want = np.exp(-0.2 * 0.7) * 6 * 0.01
    assert metrics.scalar_curvature(spec, (0.2, 0.7, -0.3, 1.1)) == pytest.approx(want, rel=1e-10)


def test_dual_norms_trivial():
    assert dual_norm_sq(MK, covector((0, 0, 0, 0), (1, 0, 1, 0))) == pytest.approx(0.0, abs=1e-15)
    assert dual_norm_sq(MK, covector((0, 0, 0, 0), (1, 0, 0, 0))) == pytest.approx(-1.0)


def test_dual_norm_of_zeta1_plus_zeta3():
    # g(zeta1, zeta3) = rho for zeta1 = (1,0,1,0), zeta3 = rho(-1,-1,0,0):
    # |zeta1 + zeta3|^2 = 2 rho
    rho = 0.1
    z1 = np.array([1.0, 0, 1, 0])
    z3 = rho * np.array([-1.0, -1, 0, 0])
    val = dual_norm_sq(MK, covector((0, 0, 0, 0), z1 + z3))
    assert val == pytest.approx(2 * rho, rel=1e-12)


def test_pairwise_products_of_the_rho_family():
    rho = 0.1
    base = (0.0, 0.0, 0.0, 0.0)
    z1 = covector(base, (1, 0, 1, 0))
    z3 = covector(base, tuple(rho * np.array([-1.0, -1, 0, 0])))
    z4 = covector(base, tuple(rho**10 * np.array([1.0, -1, 0, 0])))
    assert pairwise_product(MK, z1, z4) == pytest.approx(-(rho**10), rel=1e-12)
    assert pairwise_product(MK, z3, z4) == pytest.approx(2 * rho**11, rel=1e-12)
    assert pairwise_product(MK, z1, z1) == pytest.approx(0.0, abs=1e-15)


def test_pairwise_product_base_mismatch():
    a = covector((0, 0, 0, 0), (1, 0, 1, 0))
    b = covector((1, 0, 0, 0), (1, 0, 1, 0))
    with pytest.raises(metrics.BasePointMismatch):
        pairwise_product(MK, a, b)


def test_causal_class():
    p = (0, 0, 0, 0)
    assert causal_class(MK, p, (1, 0, 1, 0)) == "null"
    assert causal_class(MK, p, (2, 0, 1, 0)) == "timelike"
    assert causal_class(MK, p, (0.5, 0, 1, 0)) == "spacelike"
    with pytest.raises(ValueError):
        causal_class(MK, p, (0, 0, 0, 0))


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
@settings(max_examples=25, deadline=None)
def test_conformal_null_cone_invariance(a, b, c):
    spec = MetricSpec.conformal_minkowski("0.3*sin(x1) + 0.1*t")
    p = (0.2, a, b, c)
    for v in [(1, 1, 0, 0), (1, 0, 1, 0), (2, 1, 1, 1), (1, 2, 0, 0)]:
        assert causal_class(spec, p, v) == causal_class(MK, p, v)


def test_dual_metric_scaling():
    gamma_text = "0.2*x1 + 0.1*sin(t)"
    spec = MetricSpec.conformal_minkowski(gamma_text)
    from nullwaves.exprs import evaluate, parse
    rng = np.random.default_rng(3)
    for _ in range(10):
        p = tuple(rng.uniform(-1, 1, 4))
        xi = tuple(rng.uniform(-1, 1, 4))
        gam = evaluate(parse(gamma_text), list(p))
        lhs = dual_norm_sq(spec, covector(p, xi))
        rhs = np.exp(-2 * gam) * dual_norm_sq(MK, covector(p, xi))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_metric_inverse_identity_over_samples():
    specs = [
        MK,
        MetricSpec.conformal_minkowski("0.2*sin(x1)*cos(t)"),
        MetricSpec.product("1 + 0.1*sin(x1)", [["1 + 0.05*x2**2", "0", "0"],
                                               ["0", "1", "0"], ["0", "0", "1"]]),
    ]
    rng = np.random.default_rng(11)
    for spec in specs:
        for _ in range(5):
            ev = eval_metric(spec, tuple(rng.uniform(-1.5, 1.5, 4)))
            assert np.max(np.abs(ev.g @ ev.g_inv - np.eye(4))) < 1e-10
            assert np.allclose(ev.christoffel, np.swapaxes(ev.christoffel, 1, 2))


def test_signature_violation_detected():
    with pytest.raises(SignatureError):
        MetricSpec.product("-1", [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]])


def test_kappa_symmetry_enforced():
    with pytest.raises(ValueError):
        MetricSpec.product("1", [["1", "x1", "0"], ["0", "1", "0"], ["0", "0", "1"]])
