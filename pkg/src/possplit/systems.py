"""Two coupled stochastic heat equations

    du_i = u_i'' dt + g_i(u_1, u_2) dW_i,   i = 1, 2,

driven by equal or independent space-time white noises. Positivity of the
splitting scheme needs g_1(0, v2) = 0 and g_2(v1, 0) = 0, so that
f_1 = g_1/v_1 and f_2 = g_2/v_2 are bounded.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .coefficients import InitialCondition
from .grid import Discretization
from .integrators import (BlowUp, IntegrationError, StepOperators, check_noise,
                          noise_substep_exact, normalize_scheme, step_operators, warn_cfl)
from .noise import NoiseIncrements

NOISE_MODES = ("equal", "independent")

Pair = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SystemCoefficient:
    g1: Pair
    g2: Pair
    f1: Pair
    f2: Pair
    noise_mode: str = "independent"
    label: str = "system"

    def __post_init__(self):
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")

    @property
    def g(self) -> Tuple[Pair, Pair]:
        return self.g1, self.g2

    @property
    def f(self) -> Tuple[Pair, Pair]:
        return self.f1, self.f2


def _sinc(v):
    return np.sinc(np.asarray(v) / np.pi)


def _sincos(lam, noise_mode):
    return SystemCoefficient(
        g1=lambda v1, v2: lam * np.sin(v1) * np.cos(v2),
        g2=lambda v1, v2: lam * np.cos(v1) * np.sin(v2),
        f1=lambda v1, v2: lam * _sinc(v1) * np.cos(v2),
        f2=lambda v1, v2: lam * np.cos(v1) * _sinc(v2),
        noise_mode=noise_mode, label=f"sincos(lambda={lam:g})")


BUILTIN_SYSTEM_COEFFICIENTS = {"sincos": _sincos}


def builtin_system_coefficient(name: str, lam: float = 1.0,
                               noise_mode: str = "independent") -> SystemCoefficient:
    try:
        factory = BUILTIN_SYSTEM_COEFFICIENTS[name]
    except KeyError:
        raise ValueError(f"unknown system coefficient {name!r}") from None
    return factory(float(lam), noise_mode)


def decoupled_system_coefficient(c1, c2, noise_mode="independent") -> SystemCoefficient:
    """System whose components do not interact: g_i depends on v_i only."""
    return SystemCoefficient(
        g1=lambda v1, v2: c1.g(v1), g2=lambda v1, v2: c2.g(v2),
        f1=lambda v1, v2: c1.f(v1), f2=lambda v1, v2: c2.f(v2),
        noise_mode=noise_mode, label=f"({c1.label}, {c2.label})")


@dataclass(frozen=True)
class SystemState:
    component1: np.ndarray
    component2: np.ndarray
    time_index: int


def lt_system_step(u: Sequence[np.ndarray], ops: StepOperators, sc: SystemCoefficient,
                   dW: Sequence[np.ndarray]) -> List[np.ndarray]:
    """One splitting step; f_i is evaluated at the joint old state, then each
    component goes through the same heat kernel on its own."""
    u1, u2 = u
    return [ops.apply_kernel(noise_substep_exact(ui, fi(u1, u2), dWi, ops.tau, ops.N))
            for ui, fi, dWi in zip(u, sc.f, dW)]


def baseline_system_step(kind: str, u, ops: StepOperators, sc: SystemCoefficient, dW):
    u1, u2 = u
    kicks = [ops.sqrt_N * gi(u1, u2) * dWi for gi, dWi in zip(sc.g, dW)]
    if kind == "EM":
        return [ui + ops.tau * ops.apply_laplacian(ui) + k for ui, k in zip(u, kicks)]
    if kind == "SEM":
        return [ops.sem_solver.solve(ui + k) for ui, k in zip(u, kicks)]
    if kind == "SEXP":
        return [ops.apply_kernel(ui + k) for ui, k in zip(u, kicks)]
    raise IntegrationError(f"{kind} is not a baseline scheme")


def system_step(kind, u, ops, sc, dW):
    if kind == "LT":
        return lt_system_step(u, ops, sc, dW)
    return baseline_system_step(kind, u, ops, sc, dW)


@dataclass
class SystemTrajectory:
    discretization: Discretization
    scheme: str
    snapshots: List[SystemState] = field(default_factory=list)
    blow_up: Optional[BlowUp] = None

    def values(self) -> np.ndarray:
        """Array of shape (snapshots, 2, N-1)."""
        return np.array([[s.component1, s.component2] for s in self.snapshots])


def integrate_system(kind: str, d: Discretization, sc: SystemCoefficient,
                     u0: Tuple[InitialCondition, InitialCondition],
                     noise1: NoiseIncrements, noise2: Optional[NoiseIncrements] = None,
                     snapshot_stride: int = 1) -> SystemTrajectory:
    """Counterpart of :func:`possplit.integrators.integrate` for two components.

    With ``noise_mode == "equal"`` the second noise defaults to the first; it is
    an error to pass a different one.
    """
    kind = normalize_scheme(kind)
    if sc.noise_mode == "equal":
        if noise2 is not None and noise2 is not noise1 and not np.array_equal(noise2.data, noise1.data):
            raise IntegrationError("noise_mode='equal' but two different noises were given")
        noise2 = noise1
    elif noise2 is None:
        raise IntegrationError("noise_mode='independent' needs a second noise")
    check_noise(d, noise1)
    check_noise(d, noise2)
    warn_cfl(d)
    ops = step_operators(d.N, d.tau)
    x = d.x_interior
    u = [u0[0].sample(x), u0[1].sample(x)]
    traj = SystemTrajectory(d, kind, [SystemState(u[0].copy(), u[1].copy(), 0)])
    for m in range(d.M):
        with np.errstate(over="ignore", invalid="ignore"):
            u = system_step(kind, u, ops, sc, (noise1.data[m], noise2.data[m]))
        if not (np.all(np.isfinite(u[0])) and np.all(np.isfinite(u[1]))):
            traj.blow_up = BlowUp(m + 1, "non-finite")
            break
        if (m + 1) % snapshot_stride == 0 or m + 1 == d.M:
            traj.snapshots.append(SystemState(u[0].copy(), u[1].copy(), m + 1))
    return traj


class SystemBatchTracker:
    """Batched two-component analogue of :class:`possplit.integrators.BatchTracker`;
    negativity is tracked per component."""

    def __init__(self, kind, u0, ops, sc):
        self.kind = normalize_scheme(kind)
        self.ops = ops
        self.sc = sc
        self.u = [np.array(c, dtype=float, copy=True) for c in u0]
        S = self.u[0].shape[0]
        self.m = 0
        self.alive = np.ones(S, dtype=bool)
        self.negative = [np.any(c < 0, axis=1) for c in self.u]
        self.blow_step = np.full(S, -1)

    def advance(self, dW1, dW2):
        with np.errstate(over="ignore", invalid="ignore"):
            new = system_step(self.kind, self.u, self.ops, self.sc, (dW1, dW2))
        self.m += 1
        bad = self.alive & ~(np.all(np.isfinite(new[0]), axis=1) & np.all(np.isfinite(new[1]), axis=1))
        if bad.any():
            self.alive &= ~bad
            self.blow_step[bad] = self.m
        for i, c in enumerate(new):
            c[~self.alive] = 0.0
            self.negative[i] |= self.alive & np.any(c < 0, axis=1)
        self.u = new
        return new

    @property
    def blown_up(self):
        return ~self.alive
