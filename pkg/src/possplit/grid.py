"""Uniform grid on [0, 1] x [0, T], the Dirichlet finite-difference Laplacian
and the discrete heat semigroup ``exp(t N^2 D)``.

The semigroup is applied through the sine eigenbasis of ``D``: with
``lambda_j = 4 N^2 sin^2(j pi / 2N)`` and orthonormal eigenvectors
``V[n, j] = sqrt(2 h) sin(j pi x_n)`` one has
``exp(t N^2 D) = V diag(exp(-lambda_j t)) V^T``.
A scaling-and-squaring matrix exponential is kept as an independent oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

DENSE_ORACLE_CAP = 64

# Rounding residue tolerated (and clamped) on entries that are >= 0 in exact arithmetic.
KERNEL_CLAMP_TOL = 1e-14


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Discretization:
    """Space-time grid with ``N`` space intervals and ``M`` time steps on [0, T]."""

    N: int
    M: int
    T: float
    h: float = field(init=False)
    tau: float = field(init=False)
    cfl_h: float = field(init=False)
    cfl_h2: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "h", 1.0 / self.N)
        object.__setattr__(self, "tau", self.T / self.M)
        object.__setattr__(self, "cfl_h", self.tau / self.h)
        object.__setattr__(self, "cfl_h2", self.tau / self.h**2)

    @property
    def n_interior(self) -> int:
        return self.N - 1

    @property
    def x(self) -> np.ndarray:
        """All grid points x_0..x_N."""
        return np.arange(self.N + 1) / self.N

    @property
    def x_interior(self) -> np.ndarray:
        return np.arange(1, self.N) / self.N

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.tau

    def satisfies_cfl(self, gamma: float, order: int = 1) -> bool:
        """Check ``tau <= gamma h`` (order 1) or ``tau <= gamma h^2`` (order 2)."""
        ratio = self.cfl_h if order == 1 else self.cfl_h2
        return ratio <= gamma


def build_discretization(N: int, M: int, T: float) -> Discretization:
    if int(N) != N or N < 2:
        raise GridError(f"need N >= 2 space intervals (at least one interior node), got {N}")
    if int(M) != M or M < 1:
        raise GridError(f"need M >= 1 time steps, got {M}")
    if not (T > 0 and math.isfinite(T)):
        raise GridError(f"need a finite T > 0, got {T}")
    return Discretization(int(N), int(M), float(T))


def project_space(d: Discretization, x: float) -> float:
    """Largest grid point not exceeding ``x``; 1 maps to itself."""
    if not 0.0 <= x <= 1.0:
        raise GridError(f"x={x} outside [0, 1]")
    if x == 1.0:
        return 1.0
    n = math.floor(x * d.N)
    # x * N can round up across an integer when x sits just below a grid point
    if n / d.N > x:
        n -= 1
    return n / d.N


def project_time(d: Discretization, t: float) -> float:
    """Largest grid time not exceeding ``t``; T maps to itself."""
    if not 0.0 <= t <= d.T:
        raise GridError(f"t={t} outside [0, {d.T}]")
    if t == d.T:
        return d.T
    m = min(math.floor(t / d.tau), d.M - 1)
    if m * d.tau > t:
        m -= 1
    return m * d.tau


@dataclass(frozen=True)
class TridiagonalOperator:
    """Symmetric tridiagonal matrix stored by its diagonal and off-diagonal."""

    diagonal: np.ndarray
    off_diagonal: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.diagonal)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Apply to ``v`` along its last axis (batches allowed)."""
        out = self.diagonal * v
        out[..., :-1] += self.off_diagonal * v[..., 1:]
        out[..., 1:] += self.off_diagonal * v[..., :-1]
        return out

    def to_dense(self) -> np.ndarray:
        return (np.diag(self.diagonal)
                + np.diag(self.off_diagonal, 1)
                + np.diag(self.off_diagonal, -1))


def laplacian(N: int) -> TridiagonalOperator:
    """The (N-1)x(N-1) matrix with -2 on the diagonal and 1 next to it (no N^2 factor)."""
    if N < 2:
        raise GridError(f"need N >= 2, got {N}")
    return TridiagonalOperator(np.full(N - 1, -2.0), np.ones(N - 2))


@dataclass(frozen=True)
class SpectralDecomposition:
    N: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dimension(self) -> int:
        return self.N - 1


def spectral_decomposition(N: int) -> SpectralDecomposition:
    """Closed-form eigenpairs of ``-N^2 D``, eigenvectors scaled to be orthonormal."""
    if N < 2:
        raise GridError(f"need N >= 2, got {N}")
    j = np.arange(1, N)
    eigenvalues = 4.0 * N**2 * np.sin(j * np.pi / (2 * N)) ** 2
    xn = np.arange(1, N) / N
    eigenvectors = np.sqrt(2.0 / N) * np.sin(np.pi * np.outer(xn, j))
    eigenvalues.setflags(write=False)
    eigenvectors.setflags(write=False)
    return SpectralDecomposition(N, eigenvalues, eigenvectors)


def _check_time(t):
    if not t >= 0:
        raise GridError(f"negative time {t}")


def apply_heat_kernel(s: SpectralDecomposition, t: float, v: np.ndarray) -> np.ndarray:
    """Return ``exp(t N^2 D) v`` for ``v`` of length N-1 (or a batch along axis 0)."""
    _check_time(t)
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != s.dimension:
        raise GridError(f"vector length {v.shape[-1]} does not match N-1={s.dimension}")
    if t == 0:
        return v.copy()
    V = s.eigenvectors
    return ((v @ V) * np.exp(-s.eigenvalues * t)) @ V.T


def heat_kernel_matrix(s: SpectralDecomposition, t: float) -> np.ndarray:
    """Materialize ``exp(t N^2 D)`` from the eigenbasis as an exactly symmetric,
    entrywise nonnegative matrix.

    Entries that are nonnegative in exact arithmetic may come out as rounding
    residue of either sign; negative residue down to ``-KERNEL_CLAMP_TOL`` times
    the largest entry is set to zero. Anything more negative is a bug and raises.
    """
    _check_time(t)
    V = s.eigenvectors
    G = (V * np.exp(-s.eigenvalues * t)) @ V.T
    G = 0.5 * (G + G.T)
    worst = G.min()
    if worst < -KERNEL_CLAMP_TOL * max(G.max(), 1.0):
        raise ArithmeticError(f"heat kernel entry {worst:.3e} is too negative to be rounding")
    np.maximum(G, 0.0, out=G)
    G.setflags(write=False)
    return G


def dense_heat_kernel(N: int, t: float, cap: int = DENSE_ORACLE_CAP) -> np.ndarray:
    """Oracle: ``exp(t N^2 D)`` by scaling-and-squaring Pade, independent of the sine basis."""
    if N > cap:
        raise GridError(f"dense heat kernel is capped at N={cap}, got N={N}")
    _check_time(t)
    A = t * N**2 * laplacian(N).to_dense()
    G = scipy.linalg.expm(A)
    G[(G < 0) & (G >= -KERNEL_CLAMP_TOL)] = 0.0
    return G
