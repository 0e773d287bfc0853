"""Operator algebra of the expansion: projector, potential operator, the
time-derivative series, and the L / script-L operator families.

Sign convention: the order-k transport operator is

    L_k U = sum_{j=0..k} (-1)^(j+1) C(k,j) V^(k-j) P U^(j)

which at k=1 reads L_1 U = P U' - V P U.  The binomial coefficients make the
family telescope to zero on solutions of dU/dt = V U when the velocity does
not depend on the state (the collapse tests pin this down; the "literal" form
without C(k,j) is kept only for the documented discrepancy check).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import (GridFunction, UGrid, VelocityField, fornberg_weights,
                    state_constant, u_derivative_values)
from .model import SemiMarkovModel, embedded_stationary, generator, semi_markov_stationary


@dataclass(frozen=True)
class ProjectorData:
    pi: np.ndarray


def projector_apply(pi, f: GridFunction) -> GridFunction:
    """(Π f)(x, u) = Σ_y π_y f(y, u): state-constant output."""
    p = pi.pi if isinstance(pi, ProjectorData) else np.asarray(pi)
    if f.n_states == 1:
        return f.copy()
    avg = p @ f.values
    return state_constant(avg, f.grid, f.n_states)


@dataclass
class PotentialData:
    R0: np.ndarray
    identity_residual: float
    commute_residual: float


def potential_build(Q: np.ndarray, pi: np.ndarray) -> PotentialData:
    """R0 = (Q + Π)^(-1) - Π with the defining identities verified at build."""
    n = Q.shape[0]
    Pi = np.ones((n, 1)) @ pi[None, :]
    A = Q + Pi
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError(
            f"Q + Pi nearly singular (condition number {cond:.3e})")
    R0 = np.linalg.inv(A) - Pi
    eye = np.eye(n)
    res1 = max(np.abs(R0 @ Q - (eye - Pi)).max(), np.abs(Q @ R0 - (eye - Pi)).max())
    res2 = max(np.abs(Pi @ R0).max(), np.abs(R0 @ Pi).max())
    return PotentialData(R0=R0, identity_residual=float(res1), commute_residual=float(res2))


def potential_apply(pot: PotentialData | np.ndarray, f: GridFunction) -> GridFunction:
    R0 = pot.R0 if isinstance(pot, PotentialData) else pot
    return GridFunction(np.tensordot(R0, f.values, axes=(1, 0)), f.grid)


def state_mix(P: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Apply a state-space matrix along the state axis of (..., n, n_points)."""
    return np.einsum("xy,...yu->...xu", P, values)


# -- time series ----------------------------------------------------------------


_WINDOW_CACHE: dict = {}


def _time_weights(n_times: int, order: int, h: float):
    """Per-row Fornberg stencils (window start, weights) for an order-th
    t-derivative, 4th-order accurate, one-sided near the ends."""
    key = (n_times, order)
    if key not in _WINDOW_CACHE:
        width = order + 4
        if width > n_times:
            raise ValueError(f"time grid too short for derivative order {order}")
        starts = np.clip(np.arange(n_times) - width // 2, 0, n_times - width)
        offsets = np.arange(width, dtype=float)
        rows = {}
        weights = np.empty((n_times, width))
        for i in range(n_times):
            x0 = i - starts[i]
            if x0 not in rows:
                rows[x0] = fornberg_weights(float(x0), offsets, order)
            weights[i] = rows[x0]
        _WINDOW_CACHE[key] = (starts, weights)
    starts, weights = _WINDOW_CACHE[key]
    return starts, weights / h**order


@dataclass
class TimeSeries:
    """Grid functions sampled on a uniform time grid, with finite-difference
    time derivatives (or an analytic derivative hook where one exists)."""

    values: np.ndarray  # (n_times, n_states, n_points)
    grid: UGrid
    h_t: float
    max_derivative: int = 8
    derivative_hook: object = None  # optional: order -> values array
    _deriv_cache: dict = dc_field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("TimeSeries values must be (time, state, point)")

    @property
    def n_times(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.h_t * np.arange(self.n_times)

    def at(self, i: int) -> GridFunction:
        return GridFunction(self.values[i], self.grid)

    def derivative_values(self, order: int) -> np.ndarray:
        if order == 0:
            return self.values
        if order > self.max_derivative:
            raise ValueError(f"derivative order {order} beyond cap {self.max_derivative}")
        if order not in self._deriv_cache:
            if self.derivative_hook is not None:
                self._deriv_cache[order] = self.derivative_hook(order)
            else:
                starts, weights = _time_weights(self.n_times, order, self.h_t)
                width = weights.shape[1]
                out = np.empty_like(self.values)
                for i in range(self.n_times):
                    win = self.values[starts[i]:starts[i] + width]
                    out[i] = np.tensordot(weights[i], win, axes=(0, 0))
                self._deriv_cache[order] = out
        return self._deriv_cache[order]

    def derivative(self, order: int) -> "TimeSeries":
        return TimeSeries(self.derivative_values(order), self.grid, self.h_t,
                          max_derivative=self.max_derivative)

    def map_values(self, fn) -> "TimeSeries":
        return TimeSeries(fn(self.values), self.grid, self.h_t,
                          max_derivative=self.max_derivative)


# -- operator kit ----------------------------------------------------------------


@dataclass
class OperatorKit:
    """Everything the expansion solves need: stationary data, projector,
    potential operator, moment tables."""

    model: SemiMarkovModel
    fld: VelocityField
    rho: np.ndarray
    pi: np.ndarray
    m_hat: float
    Q: np.ndarray
    potential: PotentialData
    vhat: VelocityField  # single-state averaged field

    @property
    def P(self) -> np.ndarray:
        return self.model.P

    @property
    def R0(self) -> np.ndarray:
        return self.potential.R0

    def mu(self, n: int) -> np.ndarray:
        return self.model.reduced_moments(n)

    def nu(self, n: int) -> np.ndarray:
        return self.model.nu_coefficients(n)

    def m(self, n: int) -> np.ndarray:
        return self.model.moments(n)

    def project_values(self, values: np.ndarray) -> np.ndarray:
        """Π along the state axis of (..., n, n_points), broadcast back."""
        avg = np.einsum("y,...yu->...u", self.pi, values)
        return np.repeat(avg[..., None, :], len(self.pi), axis=-2)


def build_kit(model: SemiMarkovModel, fld: VelocityField) -> OperatorKit:
    from .field import averaged_velocity

    rho = embedded_stationary(model)
    pi, m_hat = semi_markov_stationary(model, rho)
    Q = generator(model)
    pot = potential_build(Q, pi)
    vhat = averaged_velocity(pi, fld)
    return OperatorKit(model=model, fld=fld, rho=rho, pi=pi, m_hat=m_hat,
                       Q=Q, potential=pot, vhat=vhat)


# -- L operators -----------------------------------------------------------------


def velocity_power_values(fld: VelocityField, values: np.ndarray, power: int) -> np.ndarray:
    """(v(u;x) ∂_u)^power along the last two axes of (..., n_states, n_points)."""
    out = values
    for _ in range(power):
        out = fld.values * u_derivative_values(out, fld.grid)
    return out


def L_series_values(k: int, kit: OperatorKit, series: TimeSeries,
                    form: str = "binomial") -> np.ndarray:
    """L_k applied to a whole series; returns (n_times, n_states, n_points)."""
    if k < 1:
        raise ValueError("L order must be >= 1")
    if form not in ("binomial", "literal"):
        raise ValueError(f"unknown L form {form!r}")
    n = kit.model.n_states
    out = 0.0
    for j in range(k + 1):
        dv = series.derivative_values(j)
        if dv.shape[1] != n:
            dv = np.repeat(dv, n, axis=1)
        pu = state_mix(kit.P, dv)
        if form == "binomial":
            coeff = (-1.0) ** (j + 1) * math.comb(k, j)
        else:
            # printed-order form lacks C(k,j); reindexed j = k - n
            coeff = (-1.0) ** (k - j)
        out = out + coeff * velocity_power_values(kit.fld, pu, k - j)
    return out


def L_series(k: int, kit: OperatorKit, series: TimeSeries, form: str = "binomial") -> TimeSeries:
    return TimeSeries(L_series_values(k, kit, series, form), series.grid, series.h_t,
                      max_derivative=series.max_derivative)


def L_apply(k: int, kit: OperatorKit, series: TimeSeries, t_index: int,
            form: str = "binomial") -> GridFunction:
    """L_k U(t) at one time index."""
    vals = L_series_values(k, kit, series, form)
    return GridFunction(vals[t_index], series.grid)


def frak_L_series(k: int, kit: OperatorKit, c_series: TimeSeries) -> TimeSeries:
    """Unprojected recursion:  𝔏_k = Σ_{n=1..k} μ_n L_n R0 𝔏_{k-n} + μ_{k+1} L_{k+1},
    with 𝔏_0 = L_1."""
    if k < 0:
        raise ValueError("order must be >= 0")
    cache: list[TimeSeries] = [L_series(1, kit, c_series)]
    for j in range(1, k + 1):
        total = None
        for n in range(1, j + 1):
            inner = cache[j - n]
            r0_inner = inner.map_values(lambda v: state_mix(kit.R0, v))
            term = L_series_values(n, kit, r0_inner)
            term = kit.mu(n)[None, :, None] * term
            total = term if total is None else total + term
        tail = kit.mu(j + 1)[None, :, None] * L_series_values(j + 1, kit, c_series)
        total = tail if total is None else total + tail
        cache.append(TimeSeries(total, c_series.grid, c_series.h_t,
                                max_derivative=c_series.max_derivative))
    return cache[k]


def frak_L_apply(k: int, kit: OperatorKit, c_series: TimeSeries, t_index: int) -> GridFunction:
    """Π 𝔏_k c at one time index (state-constant)."""
    if k < 1:
        raise ValueError("projected script-L starts at order 1")
    series = frak_L_series(k, kit, c_series)
    return GridFunction(kit.project_values(series.values[t_index]), series.grid)


def projected_frak_L_series(k: int, kit: OperatorKit, c_series: TimeSeries) -> TimeSeries:
    series = frak_L_series(k, kit, c_series)
    return series.map_values(kit.project_values)
