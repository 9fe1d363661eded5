"""Time integrators for the finite-difference system
``du = N^2 D u dt + sqrt(N) g(u) dW``.

LT    Lie-Trotter splitting: exact geometric-Brownian sub-step with f frozen at
      the old state, then the exact heat flow. Maps nonnegative data to
      nonnegative data.
EM    Euler-Maruyama.
SEM   semi-implicit Euler-Maruyama (implicit in the Laplacian).
SEXP  stochastic exponential Euler.

Every step function works on a single state of shape (N-1,) or on a batch of
independent paths of shape (S, N-1).
"""
from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .coefficients import Coefficient, CoefficientDomainError, InitialCondition
from .grid import (Discretization, TridiagonalOperator, heat_kernel_matrix, laplacian,
                   spectral_decomposition)
from .noise import NoiseIncrements

SCHEMES = ("LT", "EM", "SEM", "SEXP")


class IntegrationError(ValueError):
    pass


def normalize_scheme(kind: str) -> str:
    k = kind.upper()
    if k not in SCHEMES:
        raise IntegrationError(f"unknown scheme {kind!r}; choose from {', '.join(SCHEMES)}")
    return k


class TridiagonalSolver:
    """Thomas algorithm for a constant symmetric tridiagonal matrix, with the
    elimination coefficients computed once and reused for every right-hand side."""

    def __init__(self, op: TridiagonalOperator):
        b, c = op.diagonal, op.off_diagonal
        n = len(b)
        cp = np.zeros(max(n - 1, 0))
        denom = np.empty(n)
        denom[0] = b[0]
        for i in range(1, n):
            cp[i - 1] = c[i - 1] / denom[i - 1]
            denom[i] = b[i] - c[i - 1] * cp[i - 1]
        self.n = n
        self._sub = c
        self._cp = cp
        self._denom = denom

    def solve(self, d: np.ndarray) -> np.ndarray:
        """Solve along the last axis of ``d``."""
        n, a, cp, denom = self.n, self._sub, self._cp, self._denom
        x = np.empty_like(d, dtype=float)
        x[..., 0] = d[..., 0] / denom[0]
        for i in range(1, n):
            x[..., i] = (d[..., i] - a[i - 1] * x[..., i - 1]) / denom[i]
        for i in range(n - 2, -1, -1):
            x[..., i] -= cp[i] * x[..., i + 1]
        return x


@dataclass(frozen=True, eq=False)
class StepOperators:
    """Everything a one-step map needs that depends only on (N, tau)."""

    N: int
    tau: float
    kernel: np.ndarray          # exp(tau N^2 D), symmetric, entrywise >= 0
    laplacian: TridiagonalOperator
    sem_solver: TridiagonalSolver

    @property
    def sqrt_N(self) -> float:
        return float(np.sqrt(self.N))

    def apply_kernel(self, v: np.ndarray) -> np.ndarray:
        return v @ self.kernel

    def apply_laplacian(self, v: np.ndarray) -> np.ndarray:
        """N^2 D v."""
        return self.N**2 * self.laplacian.matvec(v)


@functools.lru_cache(maxsize=32)
def step_operators(N: int, tau: float) -> StepOperators:
    lap = laplacian(N)
    implicit = TridiagonalOperator(1.0 - tau * N**2 * lap.diagonal, -tau * N**2 * lap.off_diagonal)
    return StepOperators(N, tau, heat_kernel_matrix(spectral_decomposition(N), tau), lap,
                         TridiagonalSolver(implicit))


def noise_substep_exact(u, f_u, dW, tau, N):
    """Exact solution at time tau of dv = sqrt(N) f_u v dW started from u."""
    with np.errstate(over="ignore", invalid="ignore"):
        factor = np.exp(np.sqrt(N) * f_u * dW - N * np.square(f_u) * tau / 2)
        # zero is absorbing even when the factor overflows
        return np.where(np.asarray(u) == 0, 0.0, factor * u)


def lt_step(u: np.ndarray, ops: StepOperators, coeff: Coefficient, dW: np.ndarray) -> np.ndarray:
    f_u = coeff.f(u)
    return ops.apply_kernel(noise_substep_exact(u, f_u, dW, ops.tau, ops.N))


def baseline_step(kind: str, u: np.ndarray, ops: StepOperators, coeff: Coefficient,
                  dW: np.ndarray) -> np.ndarray:
    kind = normalize_scheme(kind)
    kick = ops.sqrt_N * coeff.g(u) * dW
    if kind == "EM":
        return u + ops.tau * ops.apply_laplacian(u) + kick
    if kind == "SEM":
        return ops.sem_solver.solve(u + kick)
    if kind == "SEXP":
        return ops.apply_kernel(u + kick)
    raise IntegrationError(f"{kind} is not a baseline scheme")


def step(kind: str, u, ops, coeff, dW):
    if kind == "LT":
        return lt_step(u, ops, coeff, dW)
    return baseline_step(kind, u, ops, coeff, dW)


@dataclass(frozen=True)
class SchemeState:
    values: np.ndarray
    time_index: int


@dataclass(frozen=True)
class BlowUp:
    step: int
    cause: str


@dataclass
class Trajectory:
    discretization: Discretization
    scheme: str
    snapshots: List[SchemeState] = field(default_factory=list)
    blow_up: Optional[BlowUp] = None

    @property
    def cfl_h(self) -> float:
        return self.discretization.cfl_h

    @property
    def cfl_h2(self) -> float:
        return self.discretization.cfl_h2

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time_index for s in self.snapshots]) * self.discretization.tau

    def values(self) -> np.ndarray:
        return np.array([s.values for s in self.snapshots])


def check_noise(d: Discretization, noise: NoiseIncrements) -> None:
    if noise.M != d.M or noise.N != d.N:
        raise IntegrationError(f"noise is {noise.M}x{noise.N} but grid is M={d.M}, N={d.N}")
    if not np.isclose(noise.tau, d.tau, rtol=1e-12, atol=0):
        raise IntegrationError(f"noise tau {noise.tau} != grid tau {d.tau}")


def warn_cfl(d: Discretization, gamma: float = 1.0) -> None:
    if d.cfl_h > gamma:
        warnings.warn(f"tau/h = {d.cfl_h:.4g} exceeds {gamma:g}; moment bounds and "
                      "convergence are not guaranteed", stacklevel=3)


def _first_failure(u, coeff) -> Optional[str]:
    if coeff.domain_min is not None and not np.all(coeff.in_domain(u)):
        return "domain"
    return None


def integrate(kind: str, d: Discretization, coeff: Coefficient, u0: InitialCondition,
              noise: NoiseIncrements, snapshot_stride: int = 1,
              check_positivity: bool = False) -> Trajectory:
    """Run one path for M steps, keeping every ``snapshot_stride``-th state and the last.

    A path stops at the first non-finite value or coefficient domain violation
    and records the failing step in ``blow_up``.  With ``check_positivity`` an LT
    path started from nonnegative data asserts nonnegativity after every step.
    """
    kind = normalize_scheme(kind)
    check_noise(d, noise)
    if snapshot_stride < 1:
        raise IntegrationError("snapshot_stride must be >= 1")
    warn_cfl(d)
    ops = step_operators(d.N, d.tau)
    u = u0.sample(d.x_interior)
    check_positivity = check_positivity and kind == "LT" and bool(np.all(u >= 0))
    traj = Trajectory(d, kind, [SchemeState(u.copy(), 0)])
    for m in range(d.M):
        cause = _first_failure(u, coeff)
        if cause is None:
            with np.errstate(over="ignore", invalid="ignore"):
                u = step(kind, u, ops, coeff, noise.data[m])
            if not np.all(np.isfinite(u)):
                cause = "non-finite"
        if cause is not None:
            traj.blow_up = BlowUp(m + 1 if cause == "non-finite" else m, cause)
            break
        if check_positivity:
            assert np.all(u >= 0), f"LT produced a negative value at step {m + 1}"
        if (m + 1) % snapshot_stride == 0 or m + 1 == d.M:
            traj.snapshots.append(SchemeState(u.copy(), m + 1))
    return traj


class BatchTracker:
    """Advance S paths of one scheme together, tracking for each path whether it
    ever went negative and whether (and when) it blew up.  Dead paths are frozen
    at zero and no longer touched."""

    def __init__(self, kind: str, u0: np.ndarray, ops: StepOperators, coeff: Coefficient):
        self.kind = normalize_scheme(kind)
        self.ops = ops
        self.coeff = coeff
        self.u = np.array(u0, dtype=float, copy=True)
        S = self.u.shape[0]
        self.m = 0
        self.alive = np.ones(S, dtype=bool)
        self.negative = np.any(self.u < 0, axis=1)
        self.blow_step = np.full(S, -1)

    def advance(self, dW: np.ndarray) -> np.ndarray:
        u, coeff = self.u, self.coeff
        if coeff.domain_min is not None:
            bad = self.alive & ~np.all(coeff.in_domain(u), axis=1)
            if bad.any():
                self._kill(bad, self.m)
                u[bad] = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            new = step(self.kind, u, self.ops, coeff, dW)
        self.m += 1
        bad = self.alive & ~np.all(np.isfinite(new), axis=1)
        if bad.any():
            self._kill(bad, self.m)
        new[~self.alive] = 0.0
        self.negative |= self.alive & np.any(new < 0, axis=1)
        self.u = new
        return new

    def _kill(self, mask, m):
        self.alive &= ~mask
        self.blow_step[mask] = m

    @property
    def blown_up(self) -> np.ndarray:
        return ~self.alive
