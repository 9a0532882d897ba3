import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transportlab.characteristics import CharacteristicEngine, CharacteristicsError
from transportlab.fields import Grid, VelocityField

# Closed-form oracles for v = 1 + x (solved by separation of variables):
#   X(s; 0, x0) = (1 + x0) e^s - 1,   exit of x0=0 at s = ln 2
X0_AFFINE = 1.6 * math.exp(-0.2) - 1.0          # foot of (t=0.2, x=0.6)
T0_AFFINE = 1.0 - math.log(1.5)                 # emission time of (t=1, x=0.5)
SENS_AFFINE = math.exp(0.5)                     # dX/dx0 after s=0.5

GRID = Grid(nx=101, dt=1e-3, horizon=1.5)


@pytest.fixture(scope="module")
def unit_engine():
    return CharacteristicEngine(VelocityField.constant(1.0), GRID)


@pytest.fixture(scope="module")
def affine_engine():
    return CharacteristicEngine(VelocityField.from_expression("1 + x"), GRID)


def test_flow_constant_speed(unit_engine):
    path = unit_engine.flow(0.0, 0.25, 0.5)
    assert path.end_s == pytest.approx(0.5, abs=1e-12)
    assert path.end_x == pytest.approx(0.75, abs=1e-10)
    assert not path.exited


def test_flow_exit_detection():
    engine = CharacteristicEngine(VelocityField.constant(2.0), GRID)
    path = engine.flow(0.0, 0.9, 1.0)
    assert path.exited
    assert path.s_exit == pytest.approx(0.05, abs=1e-10)
    assert abs(path.end_x - 1.0) <= 1e-10
    # crossing strictly inside a step exercises the sub-step bisection
    path2 = engine.flow(0.0, 0.9005, 1.0)
    assert path2.exited
    assert path2.s_exit == pytest.approx(0.04975, abs=1e-9)
    assert abs(path2.end_x - 1.0) <= 1e-10


def test_flow_affine_speed_matches_closed_form(affine_engine):
    path = affine_engine.flow(0.0, 0.0, 1.5)
    ref = np.exp(path.s_values) - 1.0
    assert np.max(np.abs(path.x_values - np.minimum(ref, 1.0))) <= 1e-9
    assert path.exited
    assert path.s_exit == pytest.approx(math.log(2.0), abs=1e-9)


def test_flow_rejects_bad_arguments(unit_engine):
    with pytest.raises(CharacteristicsError):
        unit_engine.flow(0.0, 1.5, 1.0)
    with pytest.raises(CharacteristicsError):
        unit_engine.flow(0.5, 0.2, 0.1)


def test_backtrace_x0_affine(affine_engine):
    x0 = affine_engine.backtrace_x0(0.2, 0.6)
    assert x0 == pytest.approx(X0_AFFINE, abs=1e-8)
    # certified residual: pushing the foot forward recovers the query point
    again = affine_engine._propagate_from_zero_time(0.2, np.array([x0]))[0]
    assert abs(again - 0.6) <= 1e-10


def test_backtrace_x0_at_time_zero(unit_engine):
    assert unit_engine.backtrace_x0(0.0, 0.37) == pytest.approx(0.37, abs=0)


def test_backtrace_x0_monotone_in_x(affine_engine):
    xs = np.array([0.5, 0.6, 0.7, 0.85, 1.0])
    feet = affine_engine.backtrace_x0_batch(0.2, xs)
    assert np.all(np.diff(feet) > 0)


def test_backtrace_x0_wrong_side_rejected(unit_engine):
    with pytest.raises(CharacteristicsError, match="boundary-determined"):
        unit_engine.backtrace_x0(0.5, 0.25)


def test_backtrace_t0_constant_speed(unit_engine):
    assert unit_engine.backtrace_t0(1.0, 0.3) == pytest.approx(0.7, abs=1e-10)


def test_backtrace_t0_affine(affine_engine):
    t0 = affine_engine.backtrace_t0(1.0, 0.5)
    assert t0 == pytest.approx(T0_AFFINE, abs=1e-8)
    again = affine_engine._propagate_from_boundary(1.0, np.array([t0]))[0]
    assert abs(again - 0.5) <= 1e-10


def test_backtrace_t0_wrong_side_rejected(unit_engine):
    with pytest.raises(CharacteristicsError, match="initial-data side"):
        unit_engine.backtrace_t0(0.2, 0.9)


def test_separatrix_constant_speed(unit_engine):
    sep = unit_engine.separatrix()
    assert sep.at(0.0) == 0.0
    assert sep.at(0.25) == pytest.approx(0.25, abs=1e-10)
    assert sep.at(1.2) == 1.0  # clamped after the exit
    assert np.all(np.diff(sep.positions) >= -1e-14)


def test_separatrix_dominates_vmin_line(affine_engine):
    sep = affine_engine.separatrix()
    vmin = 1.0  # v = 1 + x >= 1
    mask = sep.times <= (sep.s_exit or np.inf)
    assert np.all(sep.positions[mask] >= vmin * sep.times[mask] - 1e-9)


def test_jump_loci_clamp(unit_engine):
    (locus,) = unit_engine.jump_loci([0.5])
    t = unit_engine.grid.times
    assert locus.positions[np.searchsorted(t, 0.2)] == pytest.approx(0.7, abs=1e-10)
    assert locus.positions[np.searchsorted(t, 0.6)] == 1.0
    assert locus.s_exit == pytest.approx(0.5, abs=1e-9)
    assert np.all(np.diff(locus.positions) >= -1e-14)


def test_flow_sensitivity(affine_engine, unit_engine):
    assert affine_engine.flow_sensitivity(0.0, 0.1, 0.5) == pytest.approx(SENS_AFFINE, rel=1e-6)
    assert affine_engine.flow_sensitivity(0.0, 0.3, 0.0) == 1.0
    assert unit_engine.flow_sensitivity(0.0, 0.3, 0.5) == 1.0
    with pytest.raises(CharacteristicsError, match="exits"):
        unit_engine.flow_sensitivity(0.0, 0.3, 0.9)


def test_flow_sensitivity_matches_finite_difference():
    engine = CharacteristicEngine(
        VelocityField.from_expression("1 + 0.25*sin(pi*x)"), GRID)
    t0, x0, s = 0.0, 0.3, 0.4
    sens = engine.flow_sensitivity(t0, x0, s)
    h = 1e-6
    hi = engine.flow(t0, x0 + h, t0 + s).end_x
    lo = engine.flow(t0, x0 - h, t0 + s).end_x
    fd = (hi - lo) / (2 * h)
    assert sens == pytest.approx(fd, rel=1e-4)
    assert sens > 0


def test_memoization_returns_identical_objects(affine_engine):
    p1 = affine_engine.flow(0.0, 0.2, 0.7)
    p2 = affine_engine.flow(0.0, 0.2, 0.7)
    assert p1 is p2


# --- inversion round trip on smoother, wigglier fields ----------------------

ROUND_TRIP_GRID = Grid(nx=51, dt=5e-3, horizon=1.0)
ROUND_TRIP_ENGINES = [
    CharacteristicEngine(VelocityField.from_expression(s), ROUND_TRIP_GRID)
    for s in ("1 + 0.25*sin(pi*x)", "1.2 + 0.2*cos(2*t)*cos(pi*x)")
]


@settings(max_examples=20, deadline=None)
@given(
    st.sampled_from(ROUND_TRIP_ENGINES),
    st.floats(0.05, 0.8),
    st.floats(0.05, 0.95),
)
def test_backtrace_round_trip(engine, t, x):
    r0 = engine.separatrix().at(t)
    if x > r0 + 1e-6:
        x0 = engine.backtrace_x0(t, x)
        forward = engine._propagate_from_zero_time(t, np.array([x0]))[0]
        assert abs(forward - x) <= 1e-8
        assert 0.0 <= x0 <= x
    elif x < r0 - 1e-6:
        t0 = engine.backtrace_t0(t, x)
        forward = engine._propagate_from_boundary(t, np.array([t0]))[0]
        assert abs(forward - x) <= 1e-8
        assert 0.0 <= t0 <= t
