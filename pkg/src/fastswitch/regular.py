"""Outer (slow-time) part of the expansion: the averaged transport solution,
the inhomogeneous transport solves for the null-space coefficients, and the
range-component recursion.

The transport equation d c/dt = vhat(u) d c/du + g(t, u) is solved exactly
along the averaged characteristics (Duhamel), so there is no CFL restriction
and the homogeneous part is pure composition with the flow.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import (GridFunction, TestFunction, flow_positions, interp_apply,
                    interp_weights)
from .operators import (L_series_values, OperatorKit, TimeSeries,
                        projected_frak_L_series, velocity_power_values)


@dataclass
class RegularExpansion:
    order: int
    h_t: float
    c: list = dc_field(default_factory=list)     # state-constant TimeSeries
    U: list = dc_field(default_factory=list)     # full TimeSeries
    U_R: list = dc_field(default_factory=list)   # range components
    solvability: list = dc_field(default_factory=list)
    projection_defect: list = dc_field(default_factory=list)


class _AveragedDerivative:
    """Analytic time-derivative hook: d^n/dt^n c = (vhat d/du)^n c."""

    def __init__(self, kit: OperatorKit, values: np.ndarray):
        self.kit = kit
        self.values = values

    def __call__(self, order: int) -> np.ndarray:
        return velocity_power_values(self.kit.vhat, self.values, order)


def _cumulative_simpson_weights(i: int, h: float) -> np.ndarray:
    """Weights over nodes 0..i for ∫_0^{t_i}; composite Simpson with a
    quadratic end correction on odd panel counts."""
    w = np.zeros(i + 1)
    if i == 0:
        return w
    if i == 1:
        # single trapezoid panel; the O(h^3) local error is negligible here
        return h * np.array([0.5, 0.5])
    last = i if i % 2 == 0 else i - 1
    w[0] += 1.0
    w[last] += 1.0
    w[1:last:2] += 4.0
    w[2:last:2] += 2.0
    w *= 1.0 / 3.0
    if i % 2 == 1:
        # final panel via the quadratic through the last three nodes
        w[i - 2] += -1.0 / 12.0
        w[i - 1] += 8.0 / 12.0
        w[i] += 5.0 / 12.0
    return h * w


def averaged_flow_table(kit: OperatorKit, times: np.ndarray):
    """Interpolation stencils at the averaged-flow positions for every time."""
    pos = flow_positions(kit.vhat, 0, times)
    idx = []
    wts = []
    for row in pos:
        i, w = interp_weights(kit.fld.grid, row)
        idx.append(i)
        wts.append(w)
    return np.array(idx), np.array(wts)


def solve_c0(kit: OperatorKit, phi: TestFunction, times: np.ndarray,
             flow_table=None) -> TimeSeries:
    """Averaged transport solution c0(t, u) = φ(flow of vhat from u over t)."""
    grid = kit.fld.grid
    n = kit.model.n_states
    if flow_table is None:
        flow_table = averaged_flow_table(kit, times)
    idx, wts = flow_table
    phi_vals = phi(grid.nodes)
    vals = np.empty((len(times), n, grid.n_points))
    for i in range(len(times)):
        row = interp_apply(phi_vals, idx[i], wts[i])
        vals[i] = row[None, :]
    vals[0] = phi_vals[None, :]
    h_t = float(times[1] - times[0]) if len(times) > 1 else 1.0
    series = TimeSeries(vals, grid, h_t)
    series.derivative_hook = _AveragedDerivative(kit, vals)
    return series


def solve_ck(kit: OperatorKit, c_k0: np.ndarray, source: np.ndarray,
             times: np.ndarray, flow_table=None) -> TimeSeries:
    """Inhomogeneous averaged transport with initial data c_k0.

    source has shape (n_times, n_points); the solution is
    c(t_i, u) = c_k0(pos_i(u)) + ∫_0^{t_i} source(s, pos_{i-s}(u)) ds
    with composite Simpson over the shared time grid.
    """
    grid = kit.fld.grid
    n = kit.model.n_states
    n_t = len(times)
    h_t = float(times[1] - times[0]) if n_t > 1 else 1.0
    if flow_table is None:
        flow_table = averaged_flow_table(kit, times)
    idx, wts = flow_table
    c_k0 = np.asarray(c_k0, dtype=float).reshape(-1)
    out = np.empty((n_t, n, grid.n_points))
    for i in range(n_t):
        row = interp_apply(c_k0, idx[i], wts[i])
        if i > 0:
            w = _cumulative_simpson_weights(i, h_t)
            m = len(w)
            # source slice j evaluated at the flow positions for time t_{i-j}
            gathered = np.empty((m, grid.n_points))
            for j in range(m):
                gathered[j] = interp_apply(source[j], idx[i - j], wts[i - j])
            row = row + w @ gathered
        out[i] = row[None, :]
    out[0] = c_k0[None, :]
    return TimeSeries(out, grid, h_t)


def system_rhs_values(kit: OperatorKit, U_list: list, k: int) -> np.ndarray:
    """S_k(t) = Σ_{n=1..k} μ_n(x) L_n U_{k-n}(t)."""
    total = 0.0
    for n in range(1, k + 1):
        total = total + kit.mu(n)[None, :, None] * L_series_values(n, kit, U_list[k - n])
    return total


def regular_term(kit: OperatorKit, U_list: list, c_k: TimeSeries, k: int,
                 rhs_values: np.ndarray | None = None):
    """U_k = c_k ⊗ 1 + R0 S_k, with the projected-defect and solvability
    residuals of the order-k system equation."""
    if rhs_values is None:
        rhs_values = system_rhs_values(kit, U_list, k)
    u_r_vals = np.einsum("xy,tyu->txu", kit.R0, rhs_values)
    proj = kit.project_values(u_r_vals)
    defect = float(np.abs(proj).max())
    solv = float(np.abs(kit.project_values(rhs_values)).max())
    U_R = TimeSeries(u_r_vals, c_k.grid, c_k.h_t)
    U_k = TimeSeries(c_k.values + u_r_vals, c_k.grid, c_k.h_t)
    return U_k, U_R, solv, defect


def transport_sources(kit: OperatorKit, c_list: list, k: int) -> np.ndarray:
    """Source of the order-k coefficient equation:
    g_k(t) = - Σ_{j=1..k} (Π script-L_j c_{k-j})(t), shape (n_times, n_points)."""
    total = 0.0
    for j in range(1, k + 1):
        proj = projected_frak_L_series(j, kit, c_list[k - j])
        total = total + proj.values[:, 0, :]
    return -total


def time_derivatives_at_zero(series: TimeSeries, order: int) -> GridFunction:
    """U^(n)(0) via the one-sided end of the series' derivative stencils."""
    return GridFunction(series.derivative_values(order)[0], series.grid)
