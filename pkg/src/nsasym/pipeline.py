"""Glue between a trajectory and a fully populated MomentTable."""
from __future__ import annotations

import logging

import numpy as np

from .coeffs import (
    Coefficient,
    MomentTable,
    renormalized_constant,
    initial_moments,
    orders_of,
    spacetime_moment,
)
from .expansion import ProfileBuilder
from .field_core import Grid
from .solver import Trajectory

log = logging.getLogger(__name__)


def history_column(traj: Trajectory, beta) -> np.ndarray:
    return traj.history_I[:, traj.beta_column(beta), :]


def build_table(traj: Trajectory, profile_grid: Grid | None = None, heat_mode: str = "hermite",
                max_order: int | None = None, run_id: str = "") -> tuple[MomentTable, ProfileBuilder]:
    """Moments of omega0, raw and renormalized space-time moments of I[u],
    profile moments and log coefficients, in dependency order."""
    n = traj.grid.n
    max_order = 2 * n if max_order is None else max_order
    table = MomentTable(n, provenance={"run_id": run_id, "t_end": float(traj.history_t[-1]),
                                       "dt": traj.dt, "grid": [traj.grid.n, traj.grid.L, traj.grid.N]})
    table.initial = initial_moments(traj.omega0, min(max_order, 2 * n) + 1)
    for k in range(1, min(max_order, n) + 1):
        for l, beta in orders_of(n, k):
            res = spacetime_moment(traj.history_t, history_column(traj, beta), l, beta, n)
            table.put(l, beta, "raw_I", Coefficient(res.value, res.error, res.tail_model))
    builder = ProfileBuilder(table, heat_mode, profile_grid)
    if max_order <= n:
        return table, builder
    builder.populate_profile_moments()
    for k in range(n + 1, max_order + 1):
        for l, beta in orders_of(n, k):
            coef, poly, _ = renormalized_constant(traj.history_t, history_column(traj, beta), l, beta, n, table)
            table.put(l, beta, "renormalized", coef)
            table.put(l, beta, "log_coeff", Coefficient(table.profile_moment(k + 2, l, beta), 0.0, "exact"))
            table.polynomials[(l, beta)] = poly
    return table, builder
