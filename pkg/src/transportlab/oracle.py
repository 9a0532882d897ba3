"""First-order upwind finite differences, kept as an independent cross-check.

The scheme shares nothing with the characteristics machinery beyond the
problem data: explicit Euler in time, backward differences in space (valid
because v > 0 means information always travels rightward), inflow cell
updated from the boundary signal.  It converges at first order only, so
agreement within a few grid spacings - improving under refinement - is
strong evidence that the characteristic solver integrates the right
equation.
"""

from __future__ import annotations

import numpy as np

from .fields import Grid
from .transport import SolutionField, TransportProblem

__all__ = ["OracleError", "upwind_solve"]


class OracleError(ValueError):
    pass


def upwind_solve(problem: TransportProblem, grid: Grid) -> SolutionField:
    """March w_t + v w_x = a w + f with upwind differences.

    Enforces the CFL condition dt * max v <= dx; raises OracleError when the
    grid violates it rather than returning an unstable answer.
    """
    problem.validate(grid)
    xs = grid.xs
    times = grid.times
    dx = grid.dx
    lam = grid.dt / dx

    ones = np.ones(grid.nx)
    v_rows = np.asarray([problem.v(t, xs) * ones for t in times])
    cfl = lam * float(v_rows.max())
    if cfl > 1.0 + 1e-12:
        raise OracleError(
            f"CFL number {cfl:.6g} exceeds 1; refine dt below dx / max v")

    w = np.empty((grid.nt + 1, grid.nx))
    w[0] = np.asarray(problem.phi(xs), dtype=float)
    w[0, 0] = float(problem.b(0.0))
    a = problem.coeffs.a
    f = problem.coeffs.f
    for n in range(grid.nt):
        t = float(times[n])
        row = w[n]
        a_row = np.asarray(a(t, xs), dtype=float) * np.ones(grid.nx)
        f_row = np.asarray(f(t, xs), dtype=float) * np.ones(grid.nx)
        nxt = w[n + 1]
        nxt[1:] = (row[1:]
                   - lam * v_rows[n, 1:] * (row[1:] - row[:-1])
                   + grid.dt * (a_row[1:] * row[1:] + f_row[1:]))
        nxt[0] = float(problem.b(float(times[n + 1])))
    return SolutionField(
        grid=grid, times=times, xs=xs, values=w,
        kind="w", component="full",
        separatrix=None, loci=[],
    )
