"""Diffusion coefficients g, their companion maps f(v) = g(v)/v, and initial data.

Every evaluator is vectorized over numpy arrays. ``f`` is given in closed form
with the limit value ``f(0) = g'(0)``, never as ``g(v)/v``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class CoefficientDomainError(ArithmeticError):
    """An argument fell outside the set where ``g`` is defined (e.g. v <= -1 for log1p)."""


@dataclass(frozen=True)
class Coefficient:
    g: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]
    label: str
    lipschitz_bound: Optional[float] = None
    # the Lipschitz/bound metadata only holds for v >= 0
    positivity_domain_only: bool = False
    # g and f are undefined at or below this value
    domain_min: Optional[float] = None

    def in_domain(self, v) -> np.ndarray:
        if self.domain_min is None:
            return np.ones(np.shape(v), dtype=bool)
        return np.asarray(v) > self.domain_min

    def check_domain(self, v) -> None:
        if not np.all(self.in_domain(v)):
            raise CoefficientDomainError(f"{self.label}: argument <= {self.domain_min}")


def eval_f(c: Coefficient, v):
    """Evaluate ``f`` with a domain check; raises :class:`CoefficientDomainError`."""
    c.check_domain(v)
    return c.f(np.asarray(v, dtype=float))


def eval_g(c: Coefficient, v):
    c.check_domain(v)
    return c.g(np.asarray(v, dtype=float))


def _sinc(v):
    # sin(v)/v with value 1 at 0
    return np.sinc(np.asarray(v) / np.pi)


def _log1p_ratio(v):
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.log1p(v) / v
    return np.where(v == 0, 1.0, r)


def _linear(lam):
    return Coefficient(
        g=lambda v: lam * np.asarray(v, dtype=float),
        f=lambda v: np.full(np.shape(v), float(lam)),
        label=f"{lam:g}*v", lipschitz_bound=abs(lam))


def _log1p(lam):
    return Coefficient(
        g=lambda v: lam * np.log1p(v),
        f=lambda v: lam * _log1p_ratio(v),
        label=f"{lam:g}*ln(1+v)", lipschitz_bound=abs(lam),
        positivity_domain_only=True, domain_min=-1.0)


def _sin_plus(lam):
    return Coefficient(
        g=lambda v: lam * (np.asarray(v, dtype=float) + np.sin(v)),
        f=lambda v: lam * (1.0 + _sinc(v)),
        label=f"{lam:g}*(v+sin(v))", lipschitz_bound=2 * abs(lam))


def _rational(lam):
    return Coefficient(
        g=lambda v: lam * np.asarray(v, dtype=float) / (1.0 + np.square(v)),
        f=lambda v: lam / (1.0 + np.square(v)),
        label=f"{lam:g}*v/(1+v^2)", lipschitz_bound=abs(lam))


def _gauss_damped(lam):
    return Coefficient(
        g=lambda v: lam * np.asarray(v, dtype=float) * np.exp(-np.square(v)),
        f=lambda v: lam * np.exp(-np.square(v)),
        label=f"{lam:g}*v*exp(-v^2)", lipschitz_bound=abs(lam))


def _power125(lam):
    # Even extension of f to v < 0, so g(v) = v |v|^0.25 is odd.
    return Coefficient(
        g=lambda v: lam * np.asarray(v, dtype=float) * np.abs(v) ** 0.25,
        f=lambda v: lam * np.abs(np.asarray(v, dtype=float)) ** 0.25,
        label=f"{lam:g}*v^1.25", lipschitz_bound=None, positivity_domain_only=True)


def _zero(lam):
    return Coefficient(
        g=lambda v: np.zeros(np.shape(v)),
        f=lambda v: np.zeros(np.shape(v)),
        label="0", lipschitz_bound=0.0)


BUILTIN_COEFFICIENTS = {
    "linear": _linear,
    "log1p": _log1p,
    "sin_plus": _sin_plus,
    "rational": _rational,
    "gauss_damped": _gauss_damped,
    "power125": _power125,
    "zero": _zero,
}


def builtin_coefficient(name: str, lam: float = 1.0) -> Coefficient:
    try:
        factory = BUILTIN_COEFFICIENTS[name]
    except KeyError:
        raise ValueError(f"unknown coefficient {name!r}; choose from "
                         f"{', '.join(BUILTIN_COEFFICIENTS)}") from None
    return factory(float(lam))


def custom_coefficient(g, f, label="custom", lipschitz_bound=None, domain_min=None) -> Coefficient:
    """Wrap a user pair (g, f). ``f`` must be supplied explicitly, including f(0) = g'(0)."""
    return Coefficient(g=g, f=f, label=label, lipschitz_bound=lipschitz_bound, domain_min=domain_min)


@dataclass(frozen=True)
class InitialCondition:
    evaluator: Callable[[np.ndarray], np.ndarray]
    label: str

    def sample(self, x: np.ndarray, require_nonnegative: bool = False) -> np.ndarray:
        u = np.asarray(self.evaluator(np.asarray(x, dtype=float)), dtype=float)
        if require_nonnegative and np.any(u < 0):
            raise ValueError(f"initial condition {self.label} is negative on the grid")
        return u


def _sin_pi(x):
    u = np.sin(np.pi * x)
    # sin(pi) is 1.2e-16, not 0
    return np.where((x == 0) | (x == 1), 0.0, u)


BUILTIN_INITIAL_CONDITIONS = {
    "sin": InitialCondition(_sin_pi, "sin(pi x)"),
    "parabola": InitialCondition(lambda x: 4.0 * x * (1.0 - x), "4x(1-x)"),
}


def initial_condition(name: str = "sin") -> InitialCondition:
    try:
        return BUILTIN_INITIAL_CONDITIONS[name]
    except KeyError:
        raise ValueError(f"unknown initial condition {name!r}; choose from "
                         f"{', '.join(BUILTIN_INITIAL_CONDITIONS)}") from None
