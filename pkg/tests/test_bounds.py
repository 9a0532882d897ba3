"""Certificate formulas, validity rules, soundness runs, bias experiment."""

import math

import numpy as np
import pytest

from transportlab.bounds import (
    BoundCertificate,
    EstimateValidityError,
    bias_experiment,
    boundary_coefficient,
    certify,
    continuity_run,
    mu_is_valid,
    rhs_continuity,
    rhs_manufacturing,
    rhs_transport,
    transport_run,
)
from transportlab.fields import (
    BoundarySignal,
    Grid,
    InitialProfile,
    SpaceTimeField,
    TransportCoefficients,
    VelocityField,
)
from transportlab.norms import NormTrace, extremals, heaviside_h
from transportlab.transport import TransportProblem

INF = math.inf
ROOT_HALF_E2M1 = 1.7873242709327608  # sqrt((e^2 - 1)/2)
E = 2.718281828459045


def const_trace(times, value):
    return NormTrace(times=times, values=np.full(len(times), float(value)),
                     p=INF, label="test signal")


def make_run(rho0="1", b="0", v="1", grid=None, rho_s=1.0):
    grid = grid or Grid(101, 5e-3, 1.5)
    return continuity_run(
        rho_s,
        InitialProfile.from_expression(rho0),
        BoundarySignal.from_expression(b),
        VelocityField.from_expression(v),
        grid,
    )


# -- boundary coefficient ---------------------------------------------------

def test_boundary_coefficient_frozen_values():
    assert boundary_coefficient(2, 1.0, 0.0, 1.0) == pytest.approx(
        ROOT_HALF_E2M1, abs=1e-12)
    assert boundary_coefficient(2, 1e-4, 0.0, 1.0) == pytest.approx(
        1.0000500020835366, abs=1e-12)
    assert boundary_coefficient(4, 1e-4, 0.0, 1.0) == pytest.approx(
        1.000050002916828, abs=1e-12)
    # series check at z = 2e-6: ((e^z - 1)/z)^(1/2) = 1 + z/4 + O(z^2)
    assert boundary_coefficient(2, 1e-6, 0.0, 1.0) == pytest.approx(
        1.0000005000002083, abs=1e-12)
    assert boundary_coefficient(INF, 0.5, 0.0, 0.5) == pytest.approx(E, abs=1e-12)
    # exactly zero exponent: the certified form is exactly 1
    assert boundary_coefficient(2, 0.0, 0.0, 0.7) == 1.0


def test_boundary_coefficient_unfactored_variant():
    fact = boundary_coefficient(2, 1.0, 0.0, 0.5)
    unfact = boundary_coefficient(2, 1.0, 0.0, 0.5, factored=False)
    assert unfact == pytest.approx(fact * math.sqrt(2.0), rel=1e-12)
    # for sup norms the two coincide
    assert boundary_coefficient(INF, 0.3, 0.1, 0.8, factored=False) == \
        boundary_coefficient(INF, 0.3, 0.1, 0.8)


def test_boundary_coefficient_monotone_in_mu():
    mus = np.linspace(0.01, 3.0, 50)
    vals = [boundary_coefficient(2, m, 0.3, 0.7) for m in mus]
    assert np.all(np.diff(vals) > 0.0)


# -- admissibility ----------------------------------------------------------

def test_mu_validity_rules():
    # continuity family: strictly positive mu plus the slope-shifted floor
    assert not mu_is_valid("E2.4", 2, 0.0, vmin=1.0)
    assert mu_is_valid("E2.4", 2, 0.1, vmin=1.0)
    assert not mu_is_valid("E2.4", 2, -0.3, vmin=1.0, vmax=-0.4)
    # transport family: mu = 0 needs strictly positive running max of a
    assert not mu_is_valid("E2.10", 2, 0.0, vmin=1.0, vmax=0.0, a_max=0.0)
    assert mu_is_valid("E2.10", 2, 0.0, vmin=1.0, vmax=0.0, a_max=0.5)
    assert not mu_is_valid("E2.10", 2, 0.2, vmin=1.0, vmax=0.0, a_max=-1.0)
    # sup identifiers alias their finite-p family
    assert mu_is_valid("E2.5", INF, 0.1, vmin=1.0)
    assert not mu_is_valid("E2.11", INF, 0.0, vmin=1.0)
    # manufacturing: mu > 0 only
    assert mu_is_valid("E3.6", 2, 1e-9, vmin=0.5)
    assert not mu_is_valid("E3.7", INF, 0.0, vmin=0.5)


def test_rhs_validity_errors():
    grid = Grid(51, 1e-2, 1.0)
    ext = extremals(VelocityField.from_expression("1"), grid)
    zeros = const_trace(grid.times, 0.0)
    with pytest.raises(EstimateValidityError):
        rhs_continuity(2, 0.0, 0.5, ext, 0.0, zeros, zeros)
    with pytest.raises(EstimateValidityError):
        rhs_transport(2, 0.0, 0.5, ext, 0.0, zeros, zeros)
    with pytest.raises(EstimateValidityError):
        rhs_manufacturing(2, 0.0, 0.5, 2.0, 0.0, zeros)


# -- single-time right-hand sides -------------------------------------------

def test_rhs_transport_constant_boundary():
    grid = Grid(101, 1e-2, 1.5)
    ext = extremals(VelocityField.from_expression("1"), grid)
    zeros = const_trace(grid.times, 0.0)
    b = const_trace(grid.times, 0.3)
    # past one transit time only the boundary term survives
    got = rhs_transport(2, 1.0, 1.2, ext, 0.0, zeros, b)
    assert got == pytest.approx(0.3 * ROOT_HALF_E2M1, abs=1e-12)
    # before it, the overshoot term rides on top
    got = rhs_transport(2, 1.0, 0.5, ext, 0.4, zeros, b)
    assert got == pytest.approx(0.4 + 0.3 * ROOT_HALF_E2M1, abs=1e-12)


def test_rhs_zero_data_is_zero():
    grid = Grid(101, 1e-2, 1.5)
    ext = extremals(VelocityField.from_expression("1"), grid)
    zeros = const_trace(grid.times, 0.0)
    for t in (0.5, 1.0, 1.5):
        assert rhs_transport(2, 0.7, t, ext, 0.0, zeros, zeros) == 0.0
        assert rhs_continuity(INF, 0.7, t, ext, 0.0, zeros, zeros) == 0.0


def test_rhs_manufacturing_values():
    times = np.linspace(0.0, 3.0, 301)
    zeros = const_trace(times, 0.0)
    b = const_trace(times, 0.2)
    assert rhs_manufacturing(2, 0.5, 2.5, 2.0, 5.0, zeros) == 0.0
    got = rhs_manufacturing(INF, 0.5, 3.0, 2.0, 5.0, b)
    assert got == pytest.approx(0.2 * E, abs=1e-12)
    got = rhs_manufacturing(INF, 0.5, 1.0, 2.0, 5.0, b)
    assert got == pytest.approx(5.0 + 0.2 * E, abs=1e-12)


# -- certification ----------------------------------------------------------

def test_certify_nominal_equilibrium():
    run = make_run()
    certs = certify(run, "E2.4", [2, INF], [0.1])
    assert [c.estimate_id for c in certs] == ["E2.4", "E2.5"]
    for cert in certs:
        assert cert.passed and cert.all_valid
        assert np.max(np.abs(cert.margin)) < 1e-12
        assert np.all(cert.slack >= 1e-6)


def test_certify_smooth_compatible_scenario():
    # data chosen so value and slope match at the corner: the state is C^1
    run = make_run(rho0="exp(-0.2*pi*x)", b="0", v="1 + 0.2*sin(pi*x)",
                   grid=Grid(201, 5e-3, 1.5))
    certs = certify(run, "E2.4", [2, 4, INF], [0.1, 1.0])
    assert len(certs) == 6
    for cert in certs:
        assert cert.all_valid
        assert cert.passed, (cert.estimate_id, cert.p, cert.mu, cert.min_margin)


def test_certify_transport_run_with_reaction():
    prob = TransportProblem(
        phi=InitialProfile.from_expression("sin(pi*x)"),
        b=BoundarySignal.from_expression("0"),
        v=VelocityField.from_expression("1"),
        coeffs=TransportCoefficients(
            a=SpaceTimeField.from_expression("0.3"),
            f=SpaceTimeField.from_expression("0.1*cos(t)"),
        ),
    )
    run = transport_run(prob, Grid(201, 5e-3, 1.2))
    # positive running max of a admits mu = 0 for this family
    certs = certify(run, "E2.10", [2, INF], [0.0, 0.5])
    assert len(certs) == 4
    for cert in certs:
        assert cert.all_valid
        assert cert.passed, (cert.p, cert.mu, cert.min_margin)


def test_certify_marks_inadmissible_cells():
    run = make_run()
    (cert,) = certify(run, "E2.4", [2], [0.0])
    assert not cert.valid.any()
    assert np.isnan(cert.rhs).all() and np.isnan(cert.margin).all()
    assert cert.passed  # vacuously: nothing admissible was violated
    assert math.isnan(cert.min_margin)


def test_certify_rejects_mismatched_estimate():
    run = make_run()
    with pytest.raises(ValueError):
        certify(run, "E2.10", [2], [0.1])
    with pytest.raises(ValueError):
        certify(run, "E9.9", [2], [0.1])


def test_overshoot_factor_respects_peak_bound():
    # the initial-data factor exp(vmax t / p) h(t - 1/vmin) never exceeds
    # exp(max(0, vmax) / (p vmin)) because h cuts it off at t = 1/vmin
    grid = Grid(101, 1e-2, 3.0)
    p = 2.0
    for expr in ("1 - 0.5*x", "0.5 + 0.5*x"):
        ext = extremals(VelocityField.from_expression(expr), grid)
        for t in grid.times:
            vmin, vmax, _ = ext.at(float(t))
            factor = math.exp(vmax / p * t) * float(heaviside_h(t - 1.0 / vmin))
            cap = math.exp(max(0.0, vmax) / (p * vmin))
            assert factor <= cap + 1e-12


# -- bias experiment ---------------------------------------------------------

GAMMA_TABLE = {
    (0.25, 2): (0.8795956047546237, 1.240523983372641),
    (0.25, 4): (1.085320940998171, 1.366416101642314),
    (0.50, 2): (0.7300756809041319, 0.8679108378090956),
    (0.50, 4): (0.8717664642030394, 0.9784349941689395),
    (0.75, 2): (0.6403079366537229, 0.6880385992237295),
    (0.75, 4): (0.7508188470349655, 0.787690194413711),
}


@pytest.mark.parametrize("theta,p", sorted(GAMMA_TABLE))
def test_bias_experiment_table(theta, p):
    report = bias_experiment(theta, p)
    g1, g2 = GAMMA_TABLE[(theta, p)]
    assert report.gamma1 == pytest.approx(g1, abs=5e-7)
    assert report.gamma2 == pytest.approx(g2, abs=5e-7)
    assert report.gamma2 > report.gamma1
    assert report.richardson1 <= 1e-6 and report.richardson2 <= 1e-6
    # the solved stationary scenarios realize the quadrature gains
    assert report.measured_gain1 == pytest.approx(report.gamma1, rel=1e-4)
    assert report.measured_gain2 == pytest.approx(report.gamma2, rel=1e-4)


def test_bias_raw_integrals_frozen():
    report = bias_experiment(0.5, 2)
    assert report.raw_integral1 == pytest.approx(0.13325262496190796, abs=5e-7)
    assert report.raw_integral2 == pytest.approx(0.18831730559662158, abs=5e-7)


def test_bias_gains_converge_as_theta_approaches_one():
    report = bias_experiment(0.99, 2)
    assert 1.0 < report.gamma2 / report.gamma1 < 1.02


def test_bias_rejects_bad_arguments():
    with pytest.raises(ValueError):
        bias_experiment(0.0, 2)
    with pytest.raises(ValueError):
        bias_experiment(0.5, INF)
