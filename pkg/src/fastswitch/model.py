"""Finite-state semi-Markov model: sojourn laws, kernels, stationary structure.

The switching process is specified by an embedded transition matrix P and one
sojourn distribution per state.  Everything downstream (projector, potential
operator, boundary-layer solves) consumes the analytic moment data exposed
here, so all moment-like quantities are closed-form per family rather than
numerical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("exponential", "erlang", "uniform")

# Survival threshold used when auto-sizing the boundary-layer window.
_DECAY_TOL = 1e-10


class ModelError(ValueError):
    """Raised for structurally invalid model input."""


@dataclass(frozen=True)
class SojournDistribution:
    """Sojourn-time law of one state.

    family is one of "exponential" (rate), "erlang" (shape, rate) or
    "uniform" (a, b).  All three have every moment finite and an exponential
    moment in a neighbourhood of zero, which is what the layer solves rely on.
    """

    family: str
    rate: float = 0.0
    shape: int = 1
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown sojourn family {self.family!r}")
        if self.family in ("exponential", "erlang"):
            if not self.rate > 0:
                raise ModelError(f"{self.family} rate must be positive, got {self.rate}")
            if self.family == "erlang" and (self.shape < 1 or self.shape != int(self.shape)):
                raise ModelError(f"erlang shape must be a positive integer, got {self.shape}")
        else:
            if self.a < 0 or self.b <= self.a:
                raise ModelError(f"uniform needs 0 <= a < b, got a={self.a}, b={self.b}")

    # -- distribution functions ------------------------------------------------

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return 1.0 - self.survival(t)

    def survival(self, t):
        """F̄(t) = P(θ > t), vectorized, with F̄(t) = 1 for t < 0."""
        t = np.asarray(t, dtype=float)
        tp = np.maximum(t, 0.0)
        if self.family == "exponential":
            out = np.exp(-self.rate * tp)
        elif self.family == "erlang":
            lam_t = self.rate * tp
            acc = np.zeros_like(tp)
            term = np.ones_like(tp)
            for i in range(self.shape):
                if i > 0:
                    term = term * lam_t / i
                acc = acc + term
            out = np.exp(-lam_t) * acc
        else:
            out = np.clip((self.b - tp) / (self.b - self.a), 0.0, 1.0)
        return np.where(t < 0, 1.0, out)

    def density(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "exponential":
            out = self.rate * np.exp(-self.rate * np.maximum(t, 0.0))
        elif self.family == "erlang":
            m, lam = self.shape, self.rate
            tp = np.maximum(t, 0.0)
            out = lam**m * tp ** (m - 1) * np.exp(-lam * tp) / math.factorial(m - 1)
        else:
            out = np.where((t >= self.a) & (t <= self.b), 1.0 / (self.b - self.a), 0.0)
        return np.where(t < 0, 0.0, out)

    # -- moments ---------------------------------------------------------------

    def moment(self, k: int) -> float:
        """m_k = E[θ^k], exact."""
        if k < 0:
            raise ValueError("moment order must be >= 0")
        if k == 0:
            return 1.0
        if self.family == "exponential":
            return math.factorial(k) / self.rate**k
        if self.family == "erlang":
            m = self.shape
            num = 1.0
            for i in range(m, m + k):
                num *= i
            return num / self.rate**k
        return (self.b ** (k + 1) - self.a ** (k + 1)) / ((k + 1) * (self.b - self.a))

    def reduced_moment(self, k: int) -> float:
        """μ_k = m_k / (k! m_1); μ_1 = 1 identically."""
        if k < 1:
            raise ValueError("reduced moment order must be >= 1")
        if k == 1:
            return 1.0
        return self.moment(k) / (math.factorial(k) * self.moment(1))

    def nu_coefficient(self, k: int) -> float:
        """ν_k = (-1)^(k+1) (μ_(k+1) - m_k).

        For the gamma-type families the rational prefactor is evaluated
        exactly, so ν_1 of an exponential is a true zero, not a rounding
        residue.
        """
        if k < 1:
            raise ValueError("nu order must be >= 1")
        if self.family in ("exponential", "erlang"):
            from fractions import Fraction

            m = self.shape if self.family == "erlang" else 1
            rising = 1
            for i in range(m + 1, m + k + 1):
                rising *= i
            falling = 1
            for i in range(m, m + k):
                falling *= i
            coeff = Fraction(rising, math.factorial(k + 1)) - falling
            return (-1) ** (k + 1) * float(coeff) / self.rate**k
        return (-1) ** (k + 1) * (self.reduced_moment(k + 1) - self.moment(k))

    def partial_moment(self, n: int, tau) -> np.ndarray:
        """M_n(τ) = ∫_τ^∞ s^n F(ds), exact per family, vectorized in τ.

        Negative τ is treated as τ = 0 (the law has no mass below zero).
        """
        tau = np.maximum(np.asarray(tau, dtype=float), 0.0)
        if self.family == "exponential":
            lam = self.rate
            out = np.exp(-lam * tau)  # M_0
            for j in range(1, n + 1):
                out = tau**j * np.exp(-lam * tau) + (j / lam) * out
            return out
        if self.family == "erlang":
            m, lam = self.shape, self.rate
            coef = 1.0
            for i in range(m, m + n):
                coef *= i
            coef /= lam**n
            return coef * SojournDistribution("erlang", rate=lam, shape=m + n).survival(tau)
        c = np.clip(tau, self.a, self.b)
        return (self.b ** (n + 1) - c ** (n + 1)) / ((n + 1) * (self.b - self.a))

    def integrated_survival(self, k: int, tau) -> np.ndarray:
        """F̄^(k)(τ) = ∫_τ^∞ s^(k-1)/(k-1)! F̄(s) ds = [M_k(τ) - τ^k F̄(τ)] / k!."""
        if k < 1:
            raise ValueError("integrated survival order must be >= 1")
        tau = np.maximum(np.asarray(tau, dtype=float), 0.0)
        return (self.partial_moment(k, tau) - tau**k * self.survival(tau)) / math.factorial(k)

    # -- misc ------------------------------------------------------------------

    def cramer_margin(self) -> float:
        """Largest h with a verified finite exponential moment ∫ e^{ht} F(dt).

        Exponential and erlang admit any h below the rate; uniform laws are
        compactly supported, reported as a large capped value.
        """
        if self.family in ("exponential", "erlang"):
            return (1.0 - 1e-6) * self.rate
        return 1e6

    def decay_point(self, tol: float = _DECAY_TOL) -> float:
        """Smallest τ with F̄(τ) <= tol."""
        if self.family == "exponential":
            return -math.log(tol) / self.rate
        if self.family == "uniform":
            return self.b
        lo, hi = 0.0, 1.0
        while self.survival(hi) > tol:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.survival(mid) > tol:
                lo = mid
            else:
                hi = mid
        return hi

    def sample(self, rng: np.random.Generator, size=None):
        """Draw sojourns: inverse CDF for exponential/uniform, sum of
        exponentials for erlang."""
        if self.family == "exponential":
            u = rng.random(size)
            return -np.log1p(-u) / self.rate
        if self.family == "uniform":
            u = rng.random(size)
            return self.a + (self.b - self.a) * u
        shp = (self.shape,) if size is None else (self.shape,) + tuple(np.atleast_1d(size))
        u = rng.random(shp)
        return -np.log1p(-u).sum(axis=0) / self.rate


def sample_sojourn(dist: SojournDistribution, rng: np.random.Generator, size=None):
    return dist.sample(rng, size)


@dataclass(frozen=True)
class SemiMarkovModel:
    """Embedded transition matrix plus per-state sojourn distributions."""

    states: tuple
    P: np.ndarray
    sojourns: tuple

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "sojourns", tuple(self.sojourns))
        n = len(self.states)
        if n < 1:
            raise ModelError("need at least one state")
        if P.shape != (n, n):
            raise ModelError(f"P must be {n}x{n}, got {P.shape}")
        if len(self.sojourns) != n:
            raise ModelError("need one sojourn distribution per state")

    @property
    def n_states(self) -> int:
        return len(self.states)

    def mean_sojourns(self) -> np.ndarray:
        return np.array([d.moment(1) for d in self.sojourns])

    def moments(self, k: int) -> np.ndarray:
        return np.array([d.moment(k) for d in self.sojourns])

    def reduced_moments(self, k: int) -> np.ndarray:
        return np.array([d.reduced_moment(k) for d in self.sojourns])

    def nu_coefficients(self, k: int) -> np.ndarray:
        return np.array([d.nu_coefficient(k) for d in self.sojourns])


@dataclass
class ModelDiagnostics:
    row_sum_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nonnegative: bool = True
    irreducible: bool = True
    aperiodic: bool = True
    positive_means: bool = True
    cramer_margin: np.ndarray = field(default_factory=lambda: np.zeros(0))
    spectral_gap: float = 0.0
    messages: list = field(default_factory=list)

    @property
    def usable(self) -> bool:
        return (
            self.nonnegative
            and bool(np.all(self.row_sum_errors < 1e-12))
            and self.irreducible
            and self.positive_means
        )


def _adjacency(P: np.ndarray) -> np.ndarray:
    return P > 1e-15


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        i = stack.pop()
        for j in np.nonzero(adj[i])[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(j)
    return seen


def _is_irreducible(P: np.ndarray) -> bool:
    adj = _adjacency(P)
    return bool(_reachable(adj, 0).all() and _reachable(adj.T, 0).all())


def _period(P: np.ndarray) -> int:
    """gcd of cycle lengths of an irreducible chain, via BFS level differences."""
    adj = _adjacency(P)
    n = adj.shape[0]
    dist = np.full(n, -1)
    dist[0] = 0
    queue = [0]
    while queue:
        i = queue.pop(0)
        for j in np.nonzero(adj[i])[0]:
            if dist[j] < 0:
                dist[j] = dist[i] + 1
                queue.append(j)
    g = 0
    for i in range(n):
        for j in np.nonzero(adj[i])[0]:
            g = math.gcd(g, dist[i] + 1 - dist[j])
    return max(g, 1)


def validate_model(model: SemiMarkovModel) -> ModelDiagnostics:
    """Structural and ergodicity checks; reports violations, never raises."""
    P = model.P
    diag = ModelDiagnostics()
    diag.row_sum_errors = np.abs(P.sum(axis=1) - 1.0)
    for i, err in enumerate(diag.row_sum_errors):
        if err >= 1e-12:
            diag.messages.append(f"row {model.states[i]}: sum deviates from 1 by {err:.3e}")
    diag.nonnegative = bool((P >= -1e-15).all())
    if not diag.nonnegative:
        bad = np.argwhere(P < -1e-15)
        diag.messages.append(f"negative transition probabilities at {bad.tolist()}")
    diag.irreducible = _is_irreducible(P)
    if not diag.irreducible:
        diag.messages.append("embedded chain is not irreducible")
        diag.aperiodic = False
    else:
        diag.aperiodic = _period(P) == 1
        if not diag.aperiodic:
            diag.messages.append("embedded chain is periodic (flagged, not fatal)")
    means = model.mean_sojourns()
    diag.positive_means = bool((means > 0).all())
    if not diag.positive_means:
        diag.messages.append("some state has nonpositive mean sojourn")
    diag.cramer_margin = np.array([d.cramer_margin() for d in model.sojourns])
    eigvals = np.sort(np.abs(np.linalg.eigvals(P)))[::-1]
    diag.spectral_gap = float(1.0 - eigvals[1]) if len(eigvals) > 1 else 1.0
    return diag


def embedded_stationary(model: SemiMarkovModel) -> np.ndarray:
    """ρ with ρP = ρ, Σρ = 1, by a dense solve with a normalization row."""
    n = model.n_states
    if n == 1:
        return np.ones(1)
    A = model.P.T - np.eye(n)
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        rho = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"stationary solve failed for states {model.states}: {exc}") from exc
    resid = np.abs(rho @ model.P - rho).max()
    if resid > 1e-12 or rho.min() < -1e-12:
        raise ModelError(
            f"embedded stationary distribution unreliable (residual {resid:.3e}); "
            "is the chain irreducible?"
        )
    return np.maximum(rho, 0.0) / np.maximum(rho, 0.0).sum()


def semi_markov_stationary(model: SemiMarkovModel, rho: np.ndarray | None = None):
    """Normalized π_x = ρ_x m_1(x)/m̂ and m̂ = Σ ρ_x m_1(x)."""
    if rho is None:
        rho = embedded_stationary(model)
    m1 = model.mean_sojourns()
    m_hat = float(rho @ m1)
    pi = rho * m1 / m_hat
    return pi, m_hat


def generator(model: SemiMarkovModel) -> np.ndarray:
    """Q = diag(1/m_1) (P - I); rows sum to zero."""
    q = 1.0 / model.mean_sojourns()
    return q[:, None] * (model.P - np.eye(model.n_states))
