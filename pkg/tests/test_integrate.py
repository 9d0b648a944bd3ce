import numpy as np
import pytest
from scipy.linalg import expm

from modlock.errors import ContractViolationError, IntegrationFailureError, InvalidFieldError
from modlock.integrate import (
    DenseOutput,
    VectorField,
    check_jacobian,
    integrate_adaptive,
    integrate_with_matrix,
)
from modlock.orbit import planar_field


def exp_decay():
    return VectorField(1, lambda t, y: -y, lambda t, y: np.array([[-1.0]]))


def harmonic():
    return VectorField(
        2,
        lambda t, y: np.array([y[1], -y[0]]),
        lambda t, y: np.array([[0.0, 1.0], [-1.0, 0.0]]),
    )


def test_exponential_endpoint():
    rtol = 1e-9
    out = integrate_adaptive(exp_decay(), np.array([1.0]), (0.0, 1.0), rtol=rtol, atol=1e-14)
    assert abs(out.eval(1.0)[0] - np.exp(-1.0)) <= 10 * rtol


def test_zero_field_exact_at_knots():
    fld = VectorField(2, lambda t, y: np.zeros(2))
    c = np.array([0.3, -1.7])
    out = integrate_adaptive(fld, c, (0.0, 5.0))
    for t in out.knots:
        assert np.array_equal(out.eval(t), c)


def test_harmonic_oscillator_energy():
    rtol = 1e-9
    out = integrate_adaptive(harmonic(), np.array([1.0, 0.0]), (0.0, 2 * np.pi),
                             rtol=rtol, atol=1e-13)
    end = out.eval(2 * np.pi)
    assert np.linalg.norm(end - np.array([1.0, 0.0])) <= 10 * rtol
    ts = np.linspace(0, 2 * np.pi, 257)
    energy = np.sum(out.eval(ts) ** 2, axis=1)
    assert np.max(np.abs(energy - 1.0)) <= 10 * rtol


def test_dense_output_exact_at_knots_and_continuous():
    out = integrate_adaptive(harmonic(), np.array([1.0, 0.0]), (0.0, 7.0), rtol=1e-8)
    for i in [0, len(out.knots) // 2, -1]:
        assert np.array_equal(out.eval(out.knots[i]), out.states[i])
    mid = 0.5 * (out.knots[3] + out.knots[4])
    eps = 1e-9
    assert np.linalg.norm(out.eval(mid + eps) - out.eval(mid - eps)) < 1e-7


def test_dense_output_reintegration_consistency():
    rtol = 1e-9
    out = integrate_adaptive(harmonic(), np.array([1.0, 0.0]), (0.0, 10.0),
                             rtol=rtol, atol=1e-12)
    k = len(out.knots) // 2
    out2 = integrate_adaptive(harmonic(), out.states[k], (out.knots[k], 10.0),
                              rtol=rtol, atol=1e-12)
    assert np.linalg.norm(out2.eval(10.0) - out.eval(10.0)) <= 100 * rtol


def test_order_halving_rtol_halves_error():
    errs = []
    for rtol in (1e-6, 5e-7):
        out = integrate_adaptive(exp_decay(), np.array([1.0]), (0.0, 1.0),
                                 rtol=rtol, atol=1e-15)
        errs.append(abs(out.eval(1.0)[0] - np.exp(-1.0)))
    assert errs[0] / errs[1] >= 2.0


def test_eval_outside_domain_raises():
    out = integrate_adaptive(exp_decay(), np.array([1.0]), (0.0, 1.0))
    with pytest.raises(ValueError):
        out.eval(2.0)


def test_nonfinite_rhs_reported():
    fld = VectorField(1, lambda t, y: np.array([np.nan]))
    with pytest.raises(InvalidFieldError):
        integrate_adaptive(fld, np.array([1.0]), (0.0, 1.0))


def test_blowup_reports_last_time():
    fld = VectorField(1, lambda t, y: y * y)  # blows up at t = 1
    with pytest.raises((IntegrationFailureError, InvalidFieldError)):
        integrate_adaptive(fld, np.array([1.0]), (0.0, 2.0))


def test_matrix_constant_coefficient_exponential():
    rng = np.random.default_rng(7)
    L = rng.normal(size=(3, 3)) * 0.6
    fld = VectorField(3, lambda t, y: L @ y, lambda t, y: L)
    rtol = 1e-10
    _, mat = integrate_with_matrix(fld, np.ones(3), np.eye(3), (0.0, 1.0),
                                   rtol=rtol, atol=1e-13)
    assert np.max(np.abs(mat.eval(1.0) - expm(L))) <= 10 * rtol * np.max(np.abs(expm(L)))


def test_matrix_zero_length_span_identity():
    fld = harmonic()
    base, mat = integrate_with_matrix(fld, np.array([1.0, 0.0]), np.eye(2), (0.5, 0.5))
    assert np.array_equal(mat.eval(0.5), np.eye(2))
    assert np.array_equal(base.eval(0.5), np.array([1.0, 0.0]))


def test_matrix_requires_jacobian():
    fld = VectorField(1, lambda t, y: -y)
    with pytest.raises(ContractViolationError):
        integrate_with_matrix(fld, np.ones(1), np.eye(1), (0.0, 1.0))


def test_liouville_on_vdp_orbit(vdp_model, vdp_orbit):
    # det M(T) = exp(int tr J dt) with the trace integrated by separate quadrature
    from modlock.quadrature import gl_points

    fld = planar_field(vdp_model)
    T = vdp_orbit.T
    z0 = vdp_orbit.z0(0.0)
    base, mat = integrate_with_matrix(fld, z0, np.eye(2), (0.0, T),
                                      rtol=1e-11, atol=1e-13)
    det = np.linalg.det(mat.eval(T))
    pts, wts = gl_points(0.0, T, 64)
    traces = np.array([np.trace(fld.jacobian(t, base.eval(t))) for t in pts])
    assert abs(det - np.exp(np.dot(wts, traces))) <= 1e-6 * abs(det)


def test_variational_adjoint_duality(vdp_model, vdp_orbit):
    fld = planar_field(vdp_model)
    z0 = vdp_orbit.z0(0.0)
    T = vdp_orbit.T
    _, var = integrate_with_matrix(fld, z0, np.eye(2), (0.0, T), rtol=1e-11,
                                   atol=1e-13, mode="variational")
    _, adj = integrate_with_matrix(fld, z0, np.eye(2), (0.0, T), rtol=1e-11,
                                   atol=1e-13, mode="adjoint")
    for t in (0.3 * T, 0.7 * T, T):
        prod = adj.eval(t).T @ var.eval(t)
        assert np.max(np.abs(prod - np.eye(2))) <= 1e-8


def test_check_jacobian_flags_wrong_jacobian():
    good = harmonic()
    dev, ok = check_jacobian(good, 0.0, np.array([0.4, -0.2]))
    assert ok
    bad = VectorField(2, good.rhs, lambda t, y: np.array([[0.0, 1.0], [1.0, 0.0]]))
    dev, ok = check_jacobian(bad, 0.0, np.array([0.4, -0.2]))
    assert not ok
