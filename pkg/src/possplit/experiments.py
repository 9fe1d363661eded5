"""Monte-Carlo experiments: positivity censuses, mean-square convergence
studies against a fine LT reference on the same Brownian path, a moment
diagnostic and a numerical probe of two heat-kernel inequalities.

Samples are processed in fixed chunks of consecutive sample indices. Chunks
may run on several threads, but their results are reduced in chunk order, so
a report depends only on its inputs and never on the worker count.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .coefficients import Coefficient, InitialCondition
from .grid import Discretization, build_discretization, spectral_decomposition
from .integrators import BatchTracker, normalize_scheme, step_operators, warn_cfl
from .noise import NoiseStream, coarsen_rows
from .systems import SystemBatchTracker, SystemCoefficient

log = logging.getLogger(__name__)

CHUNK_SIZE = 10
BLOCK_ROWS = 512
NOISE_FLOOR_FACTOR = 2.0


def _chunks(samples: int, chunk: int):
    return [range(i, min(i + chunk, samples)) for i in range(0, samples, chunk)]


def _map_chunks(fn, chunks, workers: int):
    if workers <= 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


def _stream_blocks(streams, M, block=BLOCK_ROWS):
    """Yield (S, b, N-1) noise blocks covering M steps."""
    done = 0
    while done < M:
        b = min(block, M - done)
        yield np.stack([s.next_rows(b) for s in streams])
        done += b


# -------------------------------------------------------------------- positivity

@dataclass
class SchemeCounts:
    positive: int = 0
    negative: int = 0
    blown_up: int = 0
    total: int = 0

    def add(self, other: "SchemeCounts") -> None:
        self.positive += other.positive
        self.negative += other.negative
        self.blown_up += other.blown_up
        self.total += other.total

    @classmethod
    def classify(cls, negative: np.ndarray, blown_up: np.ndarray) -> "SchemeCounts":
        # A path that did not finish is blown up, whatever its sign history.
        neg = negative & ~blown_up
        return cls(positive=int(np.sum(~neg & ~blown_up)), negative=int(np.sum(neg)),
                   blown_up=int(np.sum(blown_up)), total=len(negative))

    @property
    def fraction_positive(self) -> float:
        return self.positive / self.total if self.total else float("nan")


@dataclass
class PositivityReport:
    counts: Dict[str, SchemeCounts]
    config: Dict[str, object]

    def __getitem__(self, scheme: str) -> SchemeCounts:
        return self.counts[scheme]


def positivity_census(schemes: Sequence[str], d: Discretization, coeff: Coefficient,
                      u0: InitialCondition, samples: int, seed: int, workers: int = 1,
                      chunk: int = CHUNK_SIZE) -> PositivityReport:
    """Run every scheme on the same noise for each sample and count the paths
    that stay nonnegative at every step."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    schemes = [normalize_scheme(s) for s in schemes]
    warn_cfl(d)
    ops = step_operators(d.N, d.tau)
    u0_vec = u0.sample(d.x_interior, require_nonnegative=True)

    def run(idx):
        streams = [NoiseStream(seed, i, d.N, d.tau) for i in idx]
        trackers = [BatchTracker(s, np.tile(u0_vec, (len(idx), 1)), ops, coeff) for s in schemes]
        for block in _stream_blocks(streams, d.M):
            for r in range(block.shape[1]):
                dW = block[:, r, :]
                for t in trackers:
                    if t.alive.any():
                        t.advance(dW)
        return [SchemeCounts.classify(t.negative, t.blown_up) for t in trackers]

    counts = {s: SchemeCounts() for s in schemes}
    for res in _map_chunks(run, _chunks(samples, chunk), workers):
        for s, c in zip(schemes, res):
            counts[s].add(c)
    config = dict(tau=d.tau, h=d.h, N=d.N, M=d.M, T=d.T, coefficient=coeff.label,
                  initial_condition=u0.label, samples=samples, seed=seed)
    return PositivityReport(counts, config)


def system_positivity_census(schemes: Sequence[str], d: Discretization, sc: SystemCoefficient,
                             u0: Sequence[InitialCondition], samples: int, seed: int,
                             workers: int = 1, chunk: int = CHUNK_SIZE) -> PositivityReport:
    """Per-component census; keys are the scheme name followed by 1 or 2."""
    schemes = [normalize_scheme(s) for s in schemes]
    warn_cfl(d)
    ops = step_operators(d.N, d.tau)
    x = d.x_interior
    u0_vecs = [ic.sample(x, require_nonnegative=True) for ic in u0]

    def run(idx):
        s1 = [NoiseStream(seed, i, d.N, d.tau, stream=0) for i in idx]
        s2 = s1 if sc.noise_mode == "equal" else [NoiseStream(seed, i, d.N, d.tau, stream=1) for i in idx]
        start = [np.tile(v, (len(idx), 1)) for v in u0_vecs]
        trackers = [SystemBatchTracker(s, start, ops, sc) for s in schemes]
        blocks2 = None if s2 is s1 else _stream_blocks(s2, d.M)
        for b1 in _stream_blocks(s1, d.M):
            b2 = b1 if blocks2 is None else next(blocks2)
            for r in range(b1.shape[1]):
                for t in trackers:
                    if t.alive.any():
                        t.advance(b1[:, r, :], b2[:, r, :])
        return [[SchemeCounts.classify(t.negative[i], t.blown_up) for i in range(2)]
                for t in trackers]

    counts = {f"{s}{i + 1}": SchemeCounts() for s in schemes for i in range(2)}
    for res in _map_chunks(run, _chunks(samples, chunk), workers):
        for s, pair in zip(schemes, res):
            for i, c in enumerate(pair):
                counts[f"{s}{i + 1}"].add(c)
    config = dict(tau=d.tau, h=d.h, N=d.N, M=d.M, T=d.T, coefficient=sc.label,
                  noise_mode=sc.noise_mode, samples=samples, seed=seed)
    return PositivityReport(counts, config)


# ------------------------------------------------------------------- convergence

@dataclass
class ConvergenceReport:
    tau_values: List[float]
    errors: Dict[str, List[float]]
    stderr: Dict[str, List[float]]
    blown_up: Dict[str, List[int]]
    fitted_slope: Dict[str, float]
    slope_ci: Dict[str, float]
    fit_mask: Dict[str, List[bool]]
    reference: Dict[str, object]
    config: Dict[str, object] = field(default_factory=dict)


def _dyadic_factors(tau_list, tau_ref):
    factors = []
    for tau in tau_list:
        ratio = tau / tau_ref
        k = round(math.log2(ratio)) if ratio > 0 else -1
        if k < 0 or not math.isclose(ratio, 2.0**k, rel_tol=1e-9):
            raise ValueError(f"tau={tau} is not tau_ref={tau_ref} times a power of two")
        factors.append(2**k)
    if any(a <= b for a, b in zip(factors, factors[1:])):
        raise ValueError("tau_list must be strictly decreasing")
    return factors


def fit_slope(tau, err, mask=None, confidence=0.95):
    """Least-squares slope of log(err) against log(tau) and the half-width of its
    confidence interval. Needs at least two usable points; the interval needs three."""
    tau, err = np.asarray(tau, float), np.asarray(err, float)
    if mask is None:
        mask = np.isfinite(err) & (err > 0)
    mask = np.asarray(mask, bool)
    if mask.sum() < 2:
        return float("nan"), float("inf")
    x, y = np.log(tau[mask]), np.log(err[mask])
    res = stats.linregress(x, y)
    k = int(mask.sum())
    half = stats.t.ppf(0.5 + confidence / 2, k - 2) * res.stderr if k > 2 else float("inf")
    return float(res.slope), float(half)


def _reduce_moments(parts, S):
    """Combine per-chunk (sum d^2, sum d^4) arrays and return (error, stderr)."""
    s2 = sum(p[0] for p in parts)
    s4 = sum(p[1] for p in parts)
    mean = s2 / S
    i = np.unravel_index(np.argmax(mean), mean.shape)
    err = float(np.sqrt(mean[i]))
    if not math.isfinite(err):
        return float("inf"), float("inf")
    var = max(s4[i] / S - mean[i] ** 2, 0.0) * S / max(S - 1, 1)
    se_mean = math.sqrt(var / S)
    se = se_mean / (2 * err) if err > 0 else 0.0
    return err, se


def _convergence_core(schemes, N, tau_list, tau_ref, T, samples, seed, workers, chunk,
                      make_trackers, n_components, noise_streams):
    factors = _dyadic_factors(tau_list, tau_ref)
    M_ref = round(T / tau_ref)
    if not math.isclose(M_ref * tau_ref, T, rel_tol=1e-12) or M_ref % factors[0]:
        raise ValueError(f"T={T} is not a multiple of every tau in {tau_list}")
    d_ref = build_discretization(N, M_ref, T)
    stride = factors[-1]

    def run(idx):
        S = len(idx)
        # noise[c] has shape (S, M_ref, N-1)
        noise = [np.stack([s.next_rows(M_ref) for s in comp]) for comp in noise_streams(idx)]
        ref = make_trackers("LT", S, step_operators(N, d_ref.tau))
        snaps = [[c.copy() for c in ref.state()]]
        for m in range(M_ref):
            ref.advance([w[:, m, :] for w in noise])
            if (m + 1) % stride == 0:
                snaps.append([c.copy() for c in ref.state()])
        ref_blown = ref.blown_up.copy()
        out = {}
        for f in factors:
            coarse = [coarsen_rows(w, f, axis=1) for w in noise]
            Mf = M_ref // f
            ops = step_operators(N, d_ref.tau * f)
            for s in schemes:
                tr = make_trackers(s, S, ops)
                acc = [[np.zeros((Mf + 1, N - 1)), np.zeros((Mf + 1, N - 1))] for _ in range(n_components)]
                for m in range(Mf):
                    tr.advance([w[:, m, :] for w in coarse])
                    r = snaps[(m + 1) * f // stride]
                    with np.errstate(over="ignore", invalid="ignore"):
                        for c, (u, v) in enumerate(zip(tr.state(), r)):
                            d2 = np.square(u - v)
                            acc[c][0][m + 1] = d2.sum(axis=0)
                            acc[c][1][m + 1] = np.square(d2).sum(axis=0)
                out[(s, f)] = (acc, int(np.sum(tr.blown_up | ref_blown)))
        return out

    results = _map_chunks(run, _chunks(samples, chunk), workers)
    names = [f"{s}{c + 1}" if n_components > 1 else s for s in schemes for c in range(n_components)]
    errors = {n: [] for n in names}
    ses = {n: [] for n in names}
    blown = {n: [] for n in names}
    for s in schemes:
        for f in factors:
            nblown = sum(r[(s, f)][1] for r in results)
            for c in range(n_components):
                name = f"{s}{c + 1}" if n_components > 1 else s
                if nblown:
                    err, se = float("inf"), float("nan")
                else:
                    err, se = _reduce_moments([r[(s, f)][0][c] for r in results], samples)
                errors[name].append(err)
                ses[name].append(se)
                blown[name].append(nblown)
    slopes, cis, masks = {}, {}, {}
    for n in names:
        e, se = np.array(errors[n]), np.array(ses[n])
        mask = np.isfinite(e) & (e > 0) & (e > NOISE_FLOOR_FACTOR * np.nan_to_num(se, nan=np.inf))
        slopes[n], cis[n] = fit_slope(tau_list, e, mask)
        masks[n] = mask.tolist()
    return ConvergenceReport(list(tau_list), errors, ses, blown, slopes, cis, masks,
                             reference=dict(scheme="LT", tau_ref=tau_ref, M_ref=M_ref))


class _ScalarAdapter:
    def __init__(self, tracker):
        self.t = tracker

    def advance(self, dW):
        self.t.advance(dW[0])

    def state(self):
        return [self.t.u]

    @property
    def blown_up(self):
        return self.t.blown_up


class _SystemAdapter:
    def __init__(self, tracker):
        self.t = tracker

    def advance(self, dW):
        self.t.advance(dW[0], dW[1])

    def state(self):
        return self.t.u

    @property
    def blown_up(self):
        return self.t.blown_up


def convergence_study(schemes: Sequence[str], N: int, tau_list: Sequence[float], tau_ref: float,
                      T: float, coeff: Coefficient, u0: InitialCondition, samples: int,
                      seed: int, workers: int = 1, chunk: int = CHUNK_SIZE) -> ConvergenceReport:
    """Mean-square errors ``max_{m,n} sqrt(E|u_num(t_m, x_n) - u_ref(t_m, x_n)|^2)``
    on the grid of each step size, against LT run with ``tau_ref`` on the same path.

    Noise is drawn once per sample at ``tau_ref`` and summed up to each coarser
    step. A (scheme, tau) pair with any blown-up path gets an infinite error.
    """
    schemes = [normalize_scheme(s) for s in schemes]
    u0_vec = u0.sample(np.arange(1, N) / N)

    def make(kind, S, ops):
        return _ScalarAdapter(BatchTracker(kind, np.tile(u0_vec, (S, 1)), ops, coeff))

    def streams(idx):
        return [[NoiseStream(seed, i, N, tau_ref) for i in idx]]

    rep = _convergence_core(schemes, N, tau_list, tau_ref, T, samples, seed, workers, chunk,
                            make, 1, streams)
    rep.config = dict(N=N, h=1.0 / N, T=T, tau_ref=tau_ref, coefficient=coeff.label,
                      initial_condition=u0.label, samples=samples, seed=seed)
    return rep


def system_convergence_study(schemes: Sequence[str], N: int, tau_list: Sequence[float],
                             tau_ref: float, T: float, sc: SystemCoefficient,
                             u0: Sequence[InitialCondition], samples: int, seed: int,
                             workers: int = 1, chunk: int = CHUNK_SIZE) -> ConvergenceReport:
    """As :func:`convergence_study`, one error curve per component (``LT1``, ``LT2``, ...)."""
    schemes = [normalize_scheme(s) for s in schemes]
    x = np.arange(1, N) / N
    u0_vecs = [ic.sample(x) for ic in u0]

    def make(kind, S, ops):
        return _SystemAdapter(SystemBatchTracker(kind, [np.tile(v, (S, 1)) for v in u0_vecs], ops, sc))

    def streams(idx):
        s1 = [NoiseStream(seed, i, N, tau_ref, stream=0) for i in idx]
        if sc.noise_mode == "equal":
            # identical draws, so both components see the same increments
            return [s1, [NoiseStream(seed, i, N, tau_ref, stream=0) for i in idx]]
        return [s1, [NoiseStream(seed, i, N, tau_ref, stream=1) for i in idx]]

    rep = _convergence_core(schemes, N, tau_list, tau_ref, T, samples, seed, workers, chunk,
                            make, 2, streams)
    rep.config = dict(N=N, h=1.0 / N, T=T, tau_ref=tau_ref, coefficient=sc.label,
                      noise_mode=sc.noise_mode, samples=samples, seed=seed)
    return rep


# ------------------------------------------------------------------ diagnostics

@dataclass
class MomentSummary:
    max_second_moment: float
    ratio: float
    u0_sup: float
    argmax: tuple
    blown_up: int
    cfl_h: float


def moment_diagnostic(d: Discretization, coeff: Coefficient, u0: InitialCondition,
                      samples: int, seed: int, workers: int = 1,
                      chunk: int = CHUNK_SIZE) -> MomentSummary:
    """Largest sample mean of ``|u_{m,n}|^2`` over the LT grid, and its ratio to
    ``1 + max|u0|^2``."""
    warn_cfl(d)
    ops = step_operators(d.N, d.tau)
    u0_vec = u0.sample(d.x_interior)

    def run(idx):
        streams = [NoiseStream(seed, i, d.N, d.tau) for i in idx]
        tr = BatchTracker("LT", np.tile(u0_vec, (len(idx), 1)), ops, coeff)
        acc = np.zeros((d.M + 1, d.N - 1))
        acc[0] = np.square(tr.u).sum(axis=0)
        m = 0
        for block in _stream_blocks(streams, d.M):
            for r in range(block.shape[1]):
                m += 1
                acc[m] = np.square(tr.advance(block[:, r, :])).sum(axis=0)
        return acc, int(tr.blown_up.sum())

    parts = _map_chunks(run, _chunks(samples, chunk), workers)
    mean = sum(p[0] for p in parts) / samples
    nblown = sum(p[1] for p in parts)
    i = np.unravel_index(np.argmax(mean), mean.shape)
    sup0 = float(np.max(np.abs(u0_vec)))
    top = float(mean[i]) if not nblown else float("inf")
    return MomentSummary(top, top / (1 + sup0**2), sup0, (int(i[0]), int(i[1]) + 1), nblown, d.cfl_h)


def kernel_square_integral(N: int, t: float) -> float:
    """``max_x int_0^1 G^N(t, x, y)^2 dy`` for the interpolated discrete kernel.

    At a node ``x_i`` the integral is ``N sum_k G_ik(t)^2``; between nodes the
    integrand is a convex combination of the two neighbouring rows, so the
    maximum sits on a node.
    """
    s = spectral_decomposition(N)
    w = np.square(s.eigenvectors)
    return float(N * np.max(w @ np.exp(-2 * s.eigenvalues * t)))


def _interval_integral(lam, tau):
    """``int_a^{a+tau} (e^{-lam u} - e^{-lam (a+tau)})^2 du`` divided by ``e^{-2 lam a}``."""
    z = lam * tau
    return tau * (-np.expm1(-2 * z) / (2 * z)
                  - 2 * np.exp(-z) * (-np.expm1(-z)) / z
                  + np.exp(-2 * z))


def kernel_increment_integral(N: int, M: int, T: float, t: Optional[float] = None) -> float:
    """``max_x int_0^t int_0^1 |G^N(t-s,x,y) - G^N(t-l(s),x,y)|^2 dy ds`` with
    ``l`` the projection onto the grid ``t_m = m T / M``; ``t`` defaults to ``T``,
    which is where the integral is largest.

    Each time cell is integrated in closed form and the cells are summed as a
    geometric series, mode by mode.
    """
    tau = T / M
    t = T if t is None else t
    m = t / tau
    if not math.isclose(m, round(m), rel_tol=0, abs_tol=1e-9):
        raise ValueError("t must be a grid time")
    s = spectral_decomposition(N)
    lam = s.eigenvalues
    per_mode = _interval_integral(lam, tau) * (-np.expm1(-2 * lam * t)) / (-np.expm1(-2 * lam * tau))
    return float(N * np.max(np.square(s.eigenvectors) @ per_mode))


@dataclass
class KernelProbeSummary:
    N: int
    M: int
    T: float
    square_integral_constant: float   # max_t sqrt(t) * max_x int G^2 dy
    increment_constant: float         # increment integral / sqrt(tau)
    t_grid: np.ndarray


def kernel_inequality_probe(N: int, M: int, T: float, t_grid=None) -> KernelProbeSummary:
    if t_grid is None:
        t_grid = T * 2.0 ** -np.arange(0, 30)
    t_grid = np.asarray(t_grid, float)
    a = max(math.sqrt(t) * kernel_square_integral(N, t) for t in t_grid)
    b = kernel_increment_integral(N, M, T) / math.sqrt(T / M)
    return KernelProbeSummary(N, M, T, a, b, t_grid)
