"""Stability certificates: norm bounds checked along simulated trajectories.

Each estimate bounds a state norm by a decaying overshoot term plus gain
terms over fading-memory maxima of the inputs.  The certifier evaluates
left- and right-hand sides at every grid time and reports margins; the
pass/fail slack couples a fixed 1e-6 with a measured discretization
indicator (ten times the change in the LHS when the spatial grid is
coarsened 2x), so exact statements about exact solutions are not failed
for grid error, yet a genuine violation cannot hide behind it.

A note on the boundary-input coefficient: two algebraically different
displays of it circulate, one carrying a leading vmin factor inside the
p-th root and one without.  Substituting z = p(mu + A)/vmin collapses the
factored form to ((e^z - 1)/z)^{1/p}, whose mu -> 0+ limit is exactly 1 -
the unit-gain property that constant-input scenarios realize numerically -
while the unfactored form limits to vmin^{-1/p} instead.  Certificates
therefore evaluate the factored form, and record both values side by side
so the discrepancy stays visible in reports.

Estimate identifiers: E2.4/E2.5 are the continuity-equation bounds (L^p and
sup), E2.10/E2.11 the general transport bounds, E3.6/E3.7 the closed-loop
manufacturing bounds.  Passing a family's finite-p identifier with p = inf
certifies the sup twin and records its identifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.integrate import trapezoid

from .characteristics import CharacteristicEngine
from .continuity import log_state_problem, solve_continuity
from .fields import (
    BoundarySignal,
    Grid,
    InitialProfile,
    VelocityField,
)
from .norms import (
    Extremals,
    NormTrace,
    extremals,
    fading_memory_max,
    heaviside_h,
    lp_log_norm,
    lp_norm,
)
from .transport import SolutionField, TransportProblem, solve_field

__all__ = [
    "EstimateValidityError",
    "BoundCertificate",
    "TrajectoryRun",
    "BiasReport",
    "canonical_estimate",
    "mu_is_valid",
    "boundary_coefficient",
    "rhs_transport",
    "rhs_continuity",
    "rhs_manufacturing",
    "transport_run",
    "continuity_run",
    "certify",
    "bias_experiment",
]

INF = math.inf

# sup-norm twin of each finite-p estimate and the trajectory kind it applies to
_SUP_TWIN = {"E2.4": "E2.5", "E2.10": "E2.11", "E3.6": "E3.7"}
_FINITE_OF = {v: k for k, v in _SUP_TWIN.items()}
_KIND_OF = {"E2.4": "continuity", "E2.10": "transport", "E3.6": "manufacturing"}


def canonical_estimate(estimate_id: str) -> str:
    """Finite-p representative of an estimate family (its sup twin folds in)."""
    base = _FINITE_OF.get(estimate_id, estimate_id)
    if base not in _KIND_OF:
        raise ValueError(f"unknown estimate id {estimate_id!r}")
    return base


class EstimateValidityError(ValueError):
    """Raised when (p, mu) falls outside an estimate's admissible range."""


def _pinv(p: Union[float, int]) -> float:
    return 0.0 if p == INF else 1.0 / float(p)


def mu_is_valid(estimate_id: str, p, mu: float, vmin: float,
                vmax: float = 0.0, a_max: float = 0.0) -> bool:
    """Admissibility of the decay rate mu for one estimate at one time.

    vmax is the running max of dv/dx and a_max that of the reaction
    coefficient; both enter only the families that use them.
    """
    base = _FINITE_OF.get(estimate_id, estimate_id)
    if base == "E3.6":
        return mu > 0.0
    if base == "E2.4":
        return mu > 0.0 and mu > -_pinv(p) * vmax - vmin
    if base == "E2.10":
        return mu >= 0.0 and mu > -a_max and mu > -_pinv(p) * vmax - a_max - vmin
    raise ValueError(f"unknown estimate id {estimate_id!r}")


def boundary_coefficient(p, mu: float, a_max: float, vmin: float,
                         factored: bool = True) -> float:
    """Gain on the fading-memory max of |b|.

    factored=True is the form whose mu -> 0+ limit is 1 (the certified one);
    factored=False the variant without the vmin factor, kept for reporting.
    For p = inf both reduce to exp((mu + a_max)/vmin).
    """
    if not vmin > 0:
        raise ValueError("vmin must be positive")
    if p == INF:
        return float(np.exp((mu + a_max) / vmin))
    p = float(p)
    z = p * (mu + a_max) / vmin
    base = math.expm1(z) / z if z != 0.0 else 1.0
    if not factored:
        base /= vmin
    if base < 0:
        raise EstimateValidityError(
            f"boundary coefficient undefined at mu={mu}, a_max={a_max}")
    return float(base ** (1.0 / p))


def _rhs_core(p, mu, t, vmin, vmax, a_max, phi_norm, f_signal, b_signal):
    pinv = _pinv(p)
    h = float(heaviside_h(t - 1.0 / vmin))
    term1 = math.exp((a_max + pinv * vmax) * t) * h * phi_norm if h else 0.0
    f_max = fading_memory_max(f_signal.times, np.abs(f_signal.values), t, mu, vmin)
    term2 = (1.0 / vmin) * math.exp(1.0 + (mu + pinv * vmax + a_max) / vmin) * f_max
    b_max = fading_memory_max(b_signal.times, np.abs(b_signal.values), t, mu, vmin)
    term3 = boundary_coefficient(p, mu, a_max, vmin) * b_max
    return term1 + term2 + term3


def rhs_transport(p, mu: float, t: float, ext: Extremals, phi_norm: float,
                  f_signal: NormTrace, b_signal: NormTrace) -> float:
    """Bound on ||w[t]||_p for the general transport equation."""
    vmin, vmax, a_max = ext.at(t)
    if not mu_is_valid("E2.10", p, mu, vmin, vmax, a_max):
        raise EstimateValidityError(
            f"mu={mu} inadmissible for the transport estimate at t={t}")
    return _rhs_core(p, mu, t, vmin, vmax, a_max, phi_norm, f_signal, b_signal)


def rhs_continuity(p, mu: float, t: float, ext: Extremals, phi_norm: float,
                   slope_signal: NormTrace, b_signal: NormTrace) -> float:
    """Bound on ||ln(rho[t]/rho_s)||_p; the reaction-free specialization."""
    vmin, vmax, _ = ext.at(t)
    if not mu_is_valid("E2.4", p, mu, vmin, vmax):
        raise EstimateValidityError(
            f"mu={mu} inadmissible for the continuity estimate at t={t}")
    return _rhs_core(p, mu, t, vmin, vmax, 0.0, phi_norm, slope_signal, b_signal)


def rhs_manufacturing(p, mu: float, t: float, r: float, phi_norm: float,
                      b_signal: NormTrace) -> float:
    """Closed-loop bound: flush after the terminal time r plus boundary gain."""
    if not mu_is_valid("E3.6", p, mu, 1.0 / r):
        raise EstimateValidityError(
            f"mu={mu} inadmissible for the manufacturing estimate (needs mu > 0)")
    term1 = float(heaviside_h(t - r)) * phi_norm
    b_max = fading_memory_max(b_signal.times, np.abs(b_signal.values),
                              t, mu, 1.0 / r)
    return term1 + boundary_coefficient(p, mu, 0.0, 1.0 / r) * b_max


# ---------------------------------------------------------------------------
# Trajectory runs: everything a certificate needs, at two resolutions
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryRun:
    """A solved scenario packaged for certification.

    state_coarse re-solves the same problem with half the spatial nodes and
    the same dt; its LHS disagreement with the fine solve calibrates the
    certificate slack.
    """

    kind: str  # "transport" | "continuity" | "manufacturing"
    grid: Grid
    state: SolutionField
    state_coarse: SolutionField
    ext: Optional[Extremals]
    b_trace: NormTrace
    f_rows: Optional[np.ndarray]  # rows of the source whose L^p feeds the gain
    phi_row: np.ndarray           # data profile on grid.xs, already on the w scale
    rho_s: float = 1.0
    r: Optional[float] = None     # terminal time, manufacturing only

    @property
    def times(self) -> np.ndarray:
        return self.state.times

    def lhs_trace(self, p, coarse: bool = False) -> np.ndarray:
        fld = self.state_coarse if coarse else self.state
        if fld.kind == "rho":
            return np.array([lp_log_norm(row, self.rho_s, fld.xs, p)
                             for row in fld.values])
        return np.array([lp_norm(row, fld.xs, p) for row in fld.values])

    def f_trace(self, p) -> NormTrace:
        if self.f_rows is None:
            vals = np.zeros(len(self.times))
        else:
            vals = np.array([lp_norm(row, self.grid.xs, p) for row in self.f_rows])
        return NormTrace(times=self.times, values=vals, p=p, label="source norm")

    def phi_norm(self, p) -> float:
        return lp_norm(self.phi_row, self.grid.xs, p)


def _rows_of(fn, times, xs) -> np.ndarray:
    ones = np.ones_like(xs)
    return np.array([np.asarray(fn(float(t), xs), dtype=float) * ones for t in times])


def transport_run(problem: TransportProblem, grid: Grid,
                  engine: Optional[CharacteristicEngine] = None) -> TrajectoryRun:
    engine = engine or CharacteristicEngine(problem.v, grid)
    fine = solve_field(problem, grid, engine)
    coarse = solve_field(problem, grid.coarsened_space())
    ones = np.ones_like(grid.xs)
    return TrajectoryRun(
        kind="transport", grid=grid, state=fine, state_coarse=coarse,
        ext=extremals(problem.v, grid, problem.coeffs.a),
        b_trace=NormTrace(times=grid.times,
                          values=np.array([float(problem.b(t)) for t in grid.times]),
                          p=INF, label="boundary signal"),
        f_rows=_rows_of(problem.coeffs.f, grid.times, grid.xs),
        phi_row=np.asarray(problem.phi(grid.xs), dtype=float) * ones,
    )


def continuity_run(rho_s: float, rho0: InitialProfile, b: BoundarySignal,
                   v: VelocityField, grid: Grid,
                   engine: Optional[CharacteristicEngine] = None) -> TrajectoryRun:
    problem = log_state_problem(rho_s, rho0, b, v)
    rho0.validate_positive(grid.xs)
    engine = engine or CharacteristicEngine(v, grid)
    fine = solve_field(problem, grid, engine)  # the log state directly
    coarse = solve_field(problem, grid.coarsened_space())
    ones = np.ones_like(grid.xs)
    return TrajectoryRun(
        kind="continuity", grid=grid, state=fine, state_coarse=coarse,
        ext=extremals(v, grid),
        b_trace=NormTrace(times=grid.times,
                          values=np.array([float(b(t)) for t in grid.times]),
                          p=INF, label="boundary signal"),
        f_rows=_rows_of(v.ddx, grid.times, grid.xs),  # |dv/dx| drives the gain
        phi_row=np.asarray(problem.phi(grid.xs), dtype=float) * ones,
        rho_s=rho_s,
    )


@dataclass
class BoundCertificate:
    """Per-time margins of one estimate at one (p, mu)."""

    estimate_id: str
    p: Union[float, int]
    mu: float
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray              # NaN where mu is inadmissible at that time
    margin: np.ndarray           # rhs - lhs, NaN where inadmissible
    valid: np.ndarray            # admissibility of mu, per time
    slack: np.ndarray            # tolerated negative margin, per time
    coefficient_factored: np.ndarray    # boundary gain actually certified
    coefficient_unfactored: np.ndarray  # the variant without the vmin factor
    passed: bool

    @property
    def min_margin(self) -> float:
        vals = self.margin[self.valid]
        return float(np.min(vals)) if len(vals) else math.nan

    @property
    def all_valid(self) -> bool:
        return bool(np.all(self.valid))


def certify(run: TrajectoryRun, estimate_id: str, ps: Sequence,
            mus: Sequence[float]) -> list[BoundCertificate]:
    """Evaluate one estimate family over (p, mu) pairs along a run.

    Inadmissible mu at a given time marks that cell not-applicable (NaN RHS,
    valid=False); the verdict covers admissible cells only and is vacuously
    true when there are none.
    """
    base = canonical_estimate(estimate_id)
    if _KIND_OF[base] != run.kind:
        raise ValueError(
            f"estimate {estimate_id} applies to {_KIND_OF[base]} runs, "
            f"got a {run.kind} run")
    if base == "E3.6" and run.r is None:
        raise ValueError("manufacturing certification needs the run's terminal time")

    times = run.times
    certs = []
    for p in ps:
        lhs = run.lhs_trace(p)
        lhs_coarse = run.lhs_trace(p, coarse=True)
        slack = 1e-6 + 10.0 * np.abs(lhs - lhs_coarse)
        phi_n = run.phi_norm(p)
        f_sig = run.f_trace(p) if base != "E3.6" else None
        for mu in mus:
            n = len(times)
            rhs = np.full(n, math.nan)
            valid = np.zeros(n, dtype=bool)
            coef_f = np.full(n, math.nan)
            coef_u = np.full(n, math.nan)
            for k, t in enumerate(times):
                t = float(t)
                if base == "E3.6":
                    ok = mu_is_valid(base, p, mu, 1.0 / run.r)
                    if not ok:
                        continue
                    valid[k] = True
                    rhs[k] = rhs_manufacturing(p, mu, t, run.r, phi_n, run.b_trace)
                    coef_f[k] = boundary_coefficient(p, mu, 0.0, 1.0 / run.r)
                    coef_u[k] = boundary_coefficient(p, mu, 0.0, 1.0 / run.r,
                                                     factored=False)
                    continue
                vmin, vmax, a_max = run.ext.at(t)
                a_eff = a_max if base == "E2.10" else 0.0
                ok = mu_is_valid(base, p, mu, vmin, vmax, a_max)
                if not ok:
                    continue
                valid[k] = True
                rhs[k] = _rhs_core(p, mu, t, vmin, vmax, a_eff, phi_n,
                                   f_sig, run.b_trace)
                coef_f[k] = boundary_coefficient(p, mu, a_eff, vmin)
                coef_u[k] = boundary_coefficient(p, mu, a_eff, vmin, factored=False)
            margin = rhs - lhs
            ok_cells = margin[valid] + slack[valid]
            passed = bool(np.all(ok_cells >= 0.0)) if valid.any() else True
            certs.append(BoundCertificate(
                estimate_id=_SUP_TWIN[base] if p == INF else base,
                p=p, mu=mu, times=times, lhs=lhs, rhs=rhs, margin=margin,
                valid=valid, slack=slack,
                coefficient_factored=coef_f, coefficient_unfactored=coef_u,
                passed=passed,
            ))
    return certs


# ---------------------------------------------------------------------------
# Gain-versus-bias experiment for the two affine velocity profiles
# ---------------------------------------------------------------------------

@dataclass
class BiasReport:
    """Quadrature gains for the two affine stationary profiles.

    gamma1 belongs to the opening profile (slope theta - 1 < 0), gamma2 to
    the closing one (slope 1 - theta > 0); both use the L^p-gain reading
    (p-th root applied to the displayed integral), with the raw integrals
    reported alongside.  measured_gain* are realized LHS/||dv/dx|| ratios
    from actually solving the two stationary scenarios.
    """

    theta: float
    p: float
    gamma1: float
    gamma2: float
    raw_integral1: float
    raw_integral2: float
    richardson1: float
    richardson2: float
    measured_gain1: float
    measured_gain2: float


def _bias_integrals(theta: float, p: float, n: int) -> tuple[float, float]:
    xs = np.linspace(0.0, 1.0, n)
    g1 = (-np.log1p((theta - 1.0) * xs)) ** p
    g2 = (np.log1p((1.0 / theta - 1.0) * xs)) ** p
    return float(trapezoid(g1, xs)), float(trapezoid(g2, xs))


def _measured_gain(v_expr: str, rho0_expr: str, theta: float, p: float) -> float:
    grid = Grid(401, 2e-3, 0.3)
    rho = solve_continuity(1.0,
                           InitialProfile.from_expression(rho0_expr),
                           BoundarySignal.from_expression("0"),
                           VelocityField.from_expression(v_expr), grid)
    return lp_log_norm(rho.values[-1], 1.0, grid.xs, p) / (1.0 - theta)


def bias_experiment(theta: float, p: float, n: int = 10001) -> BiasReport:
    """Compare the gains the two affine velocity profiles realize.

    Quadrature at n nodes with a half-resolution Richardson indicator;
    also solves both stationary scenarios and reports the measured ratios.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    p = float(p)
    if not (math.isfinite(p) and p > 1.0):
        raise ValueError(f"the bias gains need finite p > 1, got {p}")
    i1, i2 = _bias_integrals(theta, p, n)
    c1, c2 = _bias_integrals(theta, p, n // 2 + 1)
    scale = 1.0 / (1.0 - theta)
    t = repr(theta)
    report = BiasReport(
        theta=theta, p=p,
        gamma1=scale * i1 ** (1.0 / p),
        gamma2=scale * i2 ** (1.0 / p),
        raw_integral1=i1, raw_integral2=i2,
        richardson1=abs(i1 - c1) / 3.0, richardson2=abs(i2 - c2) / 3.0,
        measured_gain1=_measured_gain(
            f"1 + ({t} - 1)*x", f"1/(1 + ({t} - 1)*x)", theta, p),
        measured_gain2=_measured_gain(
            f"{t} + (1 - {t})*x", f"{t}/({t} + (1 - {t})*x)", theta, p),
    )
    return report
