"""Spatial discretization: u-grid, grid functions, velocity fields and flows.

The evolution semigroup is composition with the characteristic flow, so the
module provides exact flows for constant/linear fields, RK4 for tabulated
ones, and local Lagrange interpolation to evaluate grid functions at flowed
points.  Differentiation is 4th-order finite differences throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np


class DomainEscape(RuntimeError):
    """A characteristic left the padded grid window."""


def fornberg_weights(x0: float, nodes: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for the order-th derivative at x0 on
    arbitrary nodes (Fornberg's recursion)."""
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    if order >= n:
        raise ValueError("need more nodes than derivative order")
    c = np.zeros((n, order + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = nodes[0] - x0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            for k in range(mn, 0, -1):
                c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
            c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


@dataclass(frozen=True)
class UGrid:
    u_min: float
    u_max: float
    n_points: int = 257
    boundary_mode: str = "extrapolate"
    escape_margin: float | None = None

    def __post_init__(self):
        if self.n_points < 16:
            raise ValueError("grid needs at least 16 points")
        if not self.u_max > self.u_min:
            raise ValueError("u_max must exceed u_min")
        if self.boundary_mode not in ("extrapolate", "periodic"):
            raise ValueError(f"unknown boundary mode {self.boundary_mode!r}")
        if self.escape_margin is None:
            object.__setattr__(self, "escape_margin", 0.25 * (self.u_max - self.u_min))

    @property
    def spacing(self) -> float:
        return (self.u_max - self.u_min) / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.u_min, self.u_max, self.n_points)

    def check_inside(self, positions: np.ndarray, context: str = ""):
        if self.boundary_mode == "periodic":
            return
        lo = self.u_min - self.escape_margin
        hi = self.u_max + self.escape_margin
        pos = np.asarray(positions)
        if pos.min() < lo or pos.max() > hi:
            worst = pos.flat[np.abs(pos - 0.5 * (lo + hi)).argmax()]
            raise DomainEscape(f"characteristic reached u={worst:.4g} outside "
                               f"[{lo:.4g}, {hi:.4g}] ({context})")


@dataclass
class GridFunction:
    """Real values indexed by (state, grid point)."""

    values: np.ndarray
    grid: UGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[None, :]
        if self.values.shape[-1] != self.grid.n_points:
            raise ValueError("value array does not match grid size")

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "GridFunction":
        return GridFunction(self.values.copy(), self.grid)

    def __add__(self, other):
        return GridFunction(self.values + other.values, self.grid)

    def __sub__(self, other):
        return GridFunction(self.values - other.values, self.grid)

    def __mul__(self, scalar):
        return GridFunction(self.values * scalar, self.grid)

    __rmul__ = __mul__


def state_constant(values_1d: np.ndarray, grid: UGrid, n_states: int) -> GridFunction:
    return GridFunction(np.broadcast_to(np.asarray(values_1d, dtype=float),
                                        (n_states, grid.n_points)).copy(), grid)


def sup_norm(f: GridFunction | np.ndarray) -> float:
    vals = f.values if isinstance(f, GridFunction) else np.asarray(f)
    return float(np.abs(vals).max()) if vals.size else 0.0


# -- interpolation -------------------------------------------------------------


def interp_weights(grid: UGrid, positions: np.ndarray, order: int = 4):
    """Stencil indices and Lagrange weights to evaluate grid data at positions.

    order is the stencil width (4 = cubic, 6 = quintic).  Outside the grid the
    evaluation clamps to the end values in extrapolate mode and wraps in
    periodic mode.
    """
    pos = np.asarray(positions, dtype=float)
    n = grid.n_points
    p = (pos - grid.u_min) / grid.spacing
    if grid.boundary_mode == "periodic":
        p = np.mod(p, n - 1)
    else:
        p = np.clip(p, 0.0, n - 1.0)
    base = np.floor(p).astype(np.int64) - (order // 2 - 1)
    if grid.boundary_mode == "periodic":
        idx = np.mod(base[..., None] + np.arange(order), n - 1)
    else:
        base = np.clip(base, 0, n - order)
        idx = base[..., None] + np.arange(order)
    s = p - base
    w = np.ones(s.shape + (order,))
    for j in range(order):
        for m in range(order):
            if m != j:
                w[..., j] *= (s - m) / (j - m)
    return idx, w


def interp_apply(values: np.ndarray, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Evaluate 1-d grid data (last axis) at precomputed stencils."""
    return (values[..., idx] * w).sum(axis=-1)


def interp_eval(grid: UGrid, values: np.ndarray, positions: np.ndarray,
                order: int = 4) -> np.ndarray:
    idx, w = interp_weights(grid, positions, order)
    return interp_apply(values, idx, w)


# -- differentiation -----------------------------------------------------------

_DERIV_CACHE: dict = {}


def _deriv_stencils(n: int, h: float, periodic: bool):
    key = (n, h, periodic)
    if key in _DERIV_CACHE:
        return _DERIV_CACHE[key]
    if periodic:
        stencils = None  # handled by np.roll
    else:
        offsets = np.arange(5, dtype=float)
        stencils = [fornberg_weights(float(i), offsets, 1) / h for i in range(2)]
    _DERIV_CACHE[key] = stencils
    return stencils


def u_derivative_values(values: np.ndarray, grid: UGrid) -> np.ndarray:
    """4th-order first derivative along the last axis."""
    h = grid.spacing
    v = values
    out = np.empty_like(v)
    if grid.boundary_mode == "periodic":
        # unique nodes 0..n-2, node n-1 duplicates node 0
        core = v[..., :-1]
        d = (np.roll(core, 2, -1) - 8 * np.roll(core, 1, -1)
             + 8 * np.roll(core, -1, -1) - np.roll(core, -2, -1)) / (12 * h)
        out[..., :-1] = d
        out[..., -1] = d[..., 0]
        return out
    out[..., 2:-2] = (v[..., :-4] - 8 * v[..., 1:-3] + 8 * v[..., 3:-1] - v[..., 4:]) / (12 * h)
    left = _deriv_stencils(grid.n_points, h, False)
    for i, wts in enumerate(left):
        out[..., i] = np.tensordot(v[..., :5], wts, axes=(-1, 0))
        out[..., -1 - i] = -np.tensordot(v[..., -5:][..., ::-1], wts, axes=(-1, 0))
    return out


def u_derivative(f: GridFunction, order: int, max_order: int = 8) -> GridFunction:
    """Repeated 4th-order differentiation in u."""
    if order < 0 or order > max_order:
        raise ValueError(f"derivative order {order} outside [0, {max_order}]")
    vals = f.values
    for _ in range(order):
        vals = u_derivative_values(vals, f.grid)
    return GridFunction(vals, f.grid)


# -- velocity fields -----------------------------------------------------------


@dataclass(frozen=True)
class StateVelocity:
    """Velocity v(u) of a single state: constant, linear (a*u + b) or tabulated."""

    kind: str
    value: float = 0.0
    slope: float = 0.0
    intercept: float = 0.0
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "tabulated"):
            raise ValueError(f"unknown velocity kind {self.kind!r}")
        if self.kind == "tabulated" and self.table is None:
            raise ValueError("tabulated velocity needs values")


@dataclass
class VelocityField:
    """Per-state velocity specification evaluated on a grid."""

    grid: UGrid
    specs: tuple
    values: np.ndarray = dc_field(init=False)

    def __post_init__(self):
        self.specs = tuple(self.specs)
        rows = []
        for spec in self.specs:
            u = self.grid.nodes
            if spec.kind == "constant":
                rows.append(np.full(self.grid.n_points, spec.value))
            elif spec.kind == "linear":
                rows.append(spec.slope * u + spec.intercept)
            else:
                tab = np.asarray(spec.table, dtype=float)
                if tab.shape != (self.grid.n_points,):
                    raise ValueError("tabulated velocity must match the grid")
                rows.append(tab)
        self.values = np.array(rows)

    @property
    def n_states(self) -> int:
        return len(self.specs)

    def bound(self) -> float:
        """sup over grid and states of |v|, recorded for the boundedness check."""
        return float(np.abs(self.values).max())

    def eval_state(self, x: int, positions: np.ndarray) -> np.ndarray:
        spec = self.specs[x]
        pos = np.asarray(positions, dtype=float)
        if spec.kind == "constant":
            return np.full_like(pos, spec.value)
        if spec.kind == "linear":
            return spec.slope * pos + spec.intercept
        return interp_eval(self.grid, self.values[x], pos)


def flow(fld: VelocityField, x: int, u0, t: float, h_flow: float | None = None,
         check: bool = True) -> np.ndarray:
    """Characteristic position u_x(t) started from u0 (scalar or array).

    Closed form for constant and linear fields; RK4 with step <= h_flow for
    tabulated ones.
    """
    u0 = np.asarray(u0, dtype=float)
    spec = fld.specs[x]
    if spec.kind == "constant":
        out = u0 + spec.value * t
    elif spec.kind == "linear":
        a, b = spec.slope, spec.intercept
        if abs(a) < 1e-300:
            out = u0 + b * t
        else:
            ea = np.exp(a * t)
            out = u0 * ea + (b / a) * (ea - 1.0)
    else:
        if h_flow is None:
            h_flow = fld.grid.spacing / 4.0
        n_steps = max(1, int(math.ceil(abs(t) / h_flow)))
        dt = t / n_steps
        out = u0.copy()
        for _ in range(n_steps):
            out = _rk4_step(fld, x, out, dt)
    if check:
        fld.grid.check_inside(out, context=f"state {x}, t={t:.4g}")
    return out


def _rk4_step(fld: VelocityField, x: int, u: np.ndarray, dt: float) -> np.ndarray:
    k1 = fld.eval_state(x, u)
    k2 = fld.eval_state(x, u + 0.5 * dt * k1)
    k3 = fld.eval_state(x, u + 0.5 * dt * k2)
    k4 = fld.eval_state(x, u + dt * k3)
    return u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def flow_positions(fld: VelocityField, x: int, times: np.ndarray,
                   h_flow: float | None = None, check: bool = True) -> np.ndarray:
    """u_x(t) from every grid node, for each t in an increasing time array.

    Closed-form fields evaluate each time directly; tabulated fields advance
    incrementally so the cost stays linear in len(times).
    """
    times = np.asarray(times, dtype=float)
    nodes = fld.grid.nodes
    spec = fld.specs[x]
    if spec.kind in ("constant", "linear"):
        out = np.empty((len(times), len(nodes)))
        for i, t in enumerate(times):
            out[i] = flow(fld, x, nodes, float(t), check=False)
    else:
        if h_flow is None:
            h_flow = fld.grid.spacing / 4.0
        out = np.empty((len(times), len(nodes)))
        pos = nodes.copy()
        prev = 0.0
        for i, t in enumerate(times):
            dt = float(t) - prev
            if dt > 0:
                n_steps = max(1, int(math.ceil(dt / h_flow)))
                sub = dt / n_steps
                for _ in range(n_steps):
                    pos = _rk4_step(fld, x, pos, sub)
            out[i] = pos
            prev = float(t)
    if check:
        fld.grid.check_inside(out, context=f"state {x}, horizon {times[-1]:.4g}")
    return out


def semigroup_apply(fld: VelocityField, x: int, t: float, f: GridFunction,
                    order: int = 4) -> GridFunction:
    """(V_t(x) f)(u) = f(u_x(t)): composition with the flow, cubic interpolation."""
    pos = flow(fld, x, f.grid.nodes, t)
    vals = interp_eval(f.grid, f.values, pos, order=order)
    return GridFunction(vals, f.grid)


def velocity_operator_apply(fld: VelocityField, f: GridFunction) -> GridFunction:
    """(V f)(x, u) = v(u; x) ∂_u f(x, u)."""
    df = u_derivative_values(f.values, f.grid)
    if f.values.shape[0] == fld.n_states:
        vals = fld.values * df
    elif f.values.shape[0] == 1:
        vals = fld.values * df[0]
    else:
        raise ValueError("state dimensions of field and function disagree")
    return GridFunction(vals, f.grid)


def averaged_velocity(pi: np.ndarray, fld: VelocityField) -> VelocityField:
    """v̂(u) = Σ_x π_x v(u; x) as a single-state field.

    Keeps constant/linear structure when every state shares it, so averaged
    flows stay closed-form.
    """
    kinds = {s.kind for s in fld.specs}
    if kinds == {"constant"}:
        v = float(sum(p * s.value for p, s in zip(pi, fld.specs)))
        spec = StateVelocity("constant", value=v)
    elif kinds <= {"constant", "linear"}:
        a = float(sum(p * (s.slope if s.kind == "linear" else 0.0)
                      for p, s in zip(pi, fld.specs)))
        b = float(sum(p * (s.intercept if s.kind == "linear" else s.value)
                      for p, s in zip(pi, fld.specs)))
        spec = StateVelocity("linear", slope=a, intercept=b)
    else:
        tab = np.tensordot(pi, fld.values, axes=(0, 0))
        spec = StateVelocity("tabulated", table=tab)
    return VelocityField(fld.grid, (spec,))


# -- test functions ------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Smooth bounded initial data φ(u): gaussian, cosine bump, or a polynomial
    under a gaussian cap."""

    __test__ = False  # not a pytest class

    kind: str = "gaussian"
    center: float = 0.0
    width: float = 1.0
    coeffs: tuple = (1.0,)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        z = (u - self.center) / self.width
        if self.kind == "gaussian":
            return np.exp(-0.5 * z**2)
        if self.kind == "cosine_bump":
            # cos^4 bump: three continuous derivatives at the support edge
            return np.where(np.abs(z) < 1.0,
                            0.25 * (1.0 + np.cos(np.pi * np.clip(z, -1, 1))) ** 2, 0.0)
        if self.kind == "poly_capped":
            p = np.zeros_like(u)
            for c in reversed(self.coeffs):
                p = p * u + c
            return p * np.exp(-0.5 * z**2)
        raise ValueError(f"unknown test function kind {self.kind!r}")

    def on_grid(self, grid: UGrid, n_states: int = 1) -> GridFunction:
        return state_constant(self(grid.nodes), grid, n_states)
