"""Conditional signal distributions and their log-likelihood ratios.

Two families are supported: a Gaussian location shift (non-atomic, the
setting in which unanimity is guaranteed) and a finite table of atoms
(atomic, used by the exhaustive oracle).  Everything the voting engine needs
from a model goes through :func:`interval_llr`, the log-likelihood ratio of
the event ``a < X <= b`` where ``X`` is an agent's private LLR.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr, logsumexp, ndtr

# Below this mass both the numerator and denominator of an interval LLR are
# treated as underflowed.
UNDERFLOW_MASS = 1e-300
_LOG_UNDERFLOW = math.log(UNDERFLOW_MASS)
NORMALIZATION_TOL = 1e-12
# Narrow Gaussian intervals switch from log-CDF differences to quadrature when
# the two log-CDFs differ by less than this.
_NARROW_LOG_GAP = 1.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


class DomainError(ValueError):
    """A signal outside the model's support."""


class InconsistentHistoryError(RuntimeError):
    """A vote history that no signal vector could have produced."""


class SignalModel(ABC):
    """A pair of conditional signal laws (mu0, mu1)."""

    kind: str
    #: True when the LLR distribution has point masses.
    atomic: bool

    @abstractmethod
    def llr(self, signal):
        """Pointwise log-likelihood ratio ``log dmu1/dmu0``; vectorized."""

    @abstractmethod
    def log_interval_mass(self, lower, upper, state: int) -> np.ndarray:
        """``log P(lower < X <= upper | S=state)`` elementwise."""

    @abstractmethod
    def llr_cdf(self, x, state: int):
        """``P(X <= x | S=state)``."""

    @abstractmethod
    def sample(self, state: int, size: int | None, rng: np.random.Generator):
        """Draw ``size`` i.i.d. signals from mu_state (a scalar if size is None)."""

    @abstractmethod
    def swapped(self) -> "SignalModel":
        """The model with mu0 and mu1 exchanged."""

    @abstractmethod
    def describe(self) -> str:
        """The model in config-file syntax."""

    def llr_distributions(self) -> "LlrDistributions":
        return LlrDistributions(self)


@dataclass(frozen=True)
class GaussianModel(SignalModel):
    """mu_s = N(mean_s, sd^2).

    The LLR is affine in the signal, so conditioned on S=1 (resp. S=0) it is
    normal with mean +d^2/2 (resp. -d^2/2) and standard deviation d, where
    d = |mean1 - mean0| / sd.
    """

    mean0: float = -1.0
    mean1: float = 1.0
    sd: float = 1.0

    kind = "gaussian"
    atomic = False

    @property
    def separation(self) -> float:
        return abs(self.mean1 - self.mean0) / self.sd

    def llr_params(self, state: int) -> tuple[float, float]:
        """Mean and standard deviation of X given S=state."""
        d = self.separation
        half = 0.5 * d * d
        return (half if state == 1 else -half), d

    def llr(self, signal):
        arr = np.asarray(signal, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"signal {signal!r} is not a finite real")
        slope = (self.mean1 - self.mean0) / self.sd**2
        out = slope * (arr - 0.5 * (self.mean0 + self.mean1))
        return float(out) if out.ndim == 0 else out

    def log_interval_mass(self, lower, upper, state):
        m, s = self.llr_params(state)
        lo = (np.asarray(lower, dtype=float) - m) / s
        hi = (np.asarray(upper, dtype=float) - m) / s
        # Work in whichever tail is smaller to avoid cancellation.
        flip = lo > 0
        lo, hi = np.where(flip, -hi, lo), np.where(flip, -lo, hi)
        log_hi = log_ndtr(hi)
        log_lo = log_ndtr(lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            return log_hi + np.log1p(-np.exp(log_lo - log_hi))

    def interval_llrs(self, lower, upper) -> np.ndarray:
        """Unclamped interval LLRs; NaN marks an underflowed interval."""
        m, s = self.llr_params(1)
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        log1, gap1 = self._log_mass_and_gap(lower, upper, 1)
        log0, gap0 = self._log_mass_and_gap(lower, upper, 0)
        with np.errstate(invalid="ignore"):
            out = np.asarray(log1 - log0, dtype=float)
        out = np.where((log1 > _LOG_UNDERFLOW) | (log0 > _LOG_UNDERFLOW), out, np.nan)
        narrow = ((gap1 < _NARROW_LOG_GAP) | (gap0 < _NARROW_LOG_GAP)
                  | ~np.isfinite(out)) & np.isfinite(lower) & np.isfinite(upper)
        if np.any(narrow):
            a, b = lower[narrow], upper[narrow]
            h = (b - a) / s
            u1 = (a - m) / s
            # log phi(u1) - log phi(u1 + s) == a when the means are +-s^2/2.
            out = out.copy()
            out[narrow] = a + (_log_gauss_partial(u1, h) - _log_gauss_partial(u1 + s, h))
        return out

    def _log_mass_and_gap(self, lower, upper, state):
        m, s = self.llr_params(state)
        lo = (lower - m) / s
        hi = (upper - m) / s
        flip = lo > 0
        lo, hi = np.where(flip, -hi, lo), np.where(flip, -lo, hi)
        log_hi = log_ndtr(hi)
        log_lo = log_ndtr(lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            gap = log_hi - log_lo
            return log_hi + np.log1p(-np.exp(-gap)), gap

    def llr_cdf(self, x, state):
        m, s = self.llr_params(state)
        out = ndtr((np.asarray(x, dtype=float) - m) / s)
        return float(out) if np.ndim(out) == 0 else out

    def sample(self, state, size, rng):
        mean = self.mean1 if state == 1 else self.mean0
        return rng.normal(mean, self.sd, size)

    def swapped(self):
        return GaussianModel(self.mean1, self.mean0, self.sd)

    def describe(self):
        return f"gaussian mean0={self.mean0!r} mean1={self.mean1!r} sd={self.sd!r}"


def _log_gauss_partial(u, h):
    """``log int_0^h exp(-u t - t^2/2) dt`` by 32-point Gauss-Legendre.

    Only used where ``|u| h`` is of order one, where the rule is exact to
    rounding.
    """
    u = np.asarray(u, dtype=float)[..., None]
    h = np.asarray(h, dtype=float)[..., None]
    t = 0.5 * h * (1.0 + _GL_NODES)
    return logsumexp(-u * t - 0.5 * t * t, b=0.5 * h * _GL_WEIGHTS, axis=-1)


class Atom(NamedTuple):
    label: str
    p0: float
    p1: float


@dataclass(frozen=True)
class DiscreteModel(SignalModel):
    """A finite signal space; signals are atom indices."""

    atoms: tuple[Atom, ...]
    _llrs: np.ndarray = field(init=False, repr=False, compare=False)
    _p: tuple = field(init=False, repr=False, compare=False)

    kind = "discrete"
    atomic = True

    def __post_init__(self):
        atoms = tuple(Atom(str(a[0]), float(a[1]), float(a[2])) for a in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        p0 = np.array([a.p0 for a in atoms])
        p1 = np.array([a.p1 for a in atoms])
        with np.errstate(divide="ignore", invalid="ignore"):
            llrs = np.array([math.log(a.p1 / a.p0) if a.p0 > 0 and a.p1 > 0 else np.nan
                             for a in atoms])
        object.__setattr__(self, "_llrs", llrs)
        object.__setattr__(self, "_p", (p0, p1))

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[str, float, float]]) -> "DiscreteModel":
        return cls(tuple(Atom(*r) for r in rows))

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def atom_llrs(self) -> np.ndarray:
        return self._llrs

    def probabilities(self, state: int) -> np.ndarray:
        return self._p[state]

    def index_of(self, label: str) -> int:
        for k, a in enumerate(self.atoms):
            if a.label == label:
                return k
        raise DomainError(f"unknown atom {label!r}")

    def llr(self, signal):
        idx = np.asarray(signal)
        if not np.issubdtype(idx.dtype, np.integer) or np.any(idx < 0) or np.any(idx >= self.size):
            raise DomainError(f"signal {signal!r} is not an atom index in [0, {self.size})")
        out = self._llrs[idx]
        return float(out) if out.ndim == 0 else out

    def support(self) -> list[tuple[float, float, float]]:
        """Distinct LLR values with their merged masses (x, mass0, mass1)."""
        merged: dict[float, list[float]] = {}
        for x, a in zip(self._llrs, self.atoms):
            m = merged.setdefault(float(x), [0.0, 0.0])
            m[0] += a.p0
            m[1] += a.p1
        return [(x, m0, m1) for x, (m0, m1) in sorted(merged.items())]

    def interval_mass(self, lower, upper, state):
        lo = np.asarray(lower, dtype=float)[..., None]
        hi = np.asarray(upper, dtype=float)[..., None]
        inside = (self._llrs > lo) & (self._llrs <= hi)
        return (inside * self._p[state]).sum(axis=-1)

    def log_interval_mass(self, lower, upper, state):
        with np.errstate(divide="ignore"):
            return np.log(self.interval_mass(lower, upper, state))

    def llr_cdf(self, x, state):
        out = self.interval_mass(-np.inf, x, state)
        return float(out) if np.ndim(out) == 0 else out

    def sample(self, state, size, rng):
        return rng.choice(self.size, size=size, p=self._p[state])

    def swapped(self):
        return DiscreteModel(tuple(Atom(a.label, a.p1, a.p0) for a in self.atoms))

    def describe(self):
        body = ",".join(f"({a.label},{a.p0!r},{a.p1!r})" for a in self.atoms)
        return f"discrete atoms=[{body}]"


def hiring_model() -> DiscreteModel:
    """Committee example: a good candidate impresses 9 of 10 interviewers, a bad one 6."""
    return DiscreteModel.from_rows([("favorable", 0.6, 0.9), ("unfavorable", 0.4, 0.1)])


class LlrDistributions:
    """CDF views of the LLR under each state."""

    def __init__(self, model: SignalModel):
        self.model = model

    def cdf0(self, x):
        return self.model.llr_cdf(x, 0)

    def cdf1(self, x):
        return self.model.llr_cdf(x, 1)


def llr(model: SignalModel, signal):
    return model.llr(signal)


def sample_signal(model: SignalModel, state: int, rng: np.random.Generator):
    return model.sample(state, None, rng)


def interval_llrs(model: SignalModel, lower, upper) -> np.ndarray:
    """Vectorized :func:`interval_llr`.

    Results are clamped into ``(lower, upper]``, where the exact value is known
    to lie; rounding in the log-CDF differences can otherwise push very narrow
    intervals a few ulps outside.

    Raises:
        InconsistentHistoryError: a discrete model has no atom in some interval.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if model.atomic:
        mass1 = model.interval_mass(lower, upper, 1)
        mass0 = model.interval_mass(lower, upper, 0)
        empty = (mass1 <= 0) | (mass0 <= 0)
        if np.any(empty):
            k = np.flatnonzero(np.atleast_1d(empty))[0]
            lo, hi = np.broadcast_to(lower, empty.shape), np.broadcast_to(upper, empty.shape)
            raise InconsistentHistoryError(
                f"interval ({np.ravel(lo)[k]}, {np.ravel(hi)[k]}] has zero mass")
        out = np.log(mass1 / mass0)
    else:
        out = model.interval_llrs(lower, upper)
        under = ~np.isfinite(out)
        if np.any(under):
            out = np.where(under, _midpoint(lower, upper), out)
    out = np.where(out <= lower, np.nextafter(lower, np.inf), out)
    out = np.where(out > upper, upper, out)
    return out


def _midpoint(lower, upper):
    lo_inf = np.isneginf(lower)
    hi_inf = np.isposinf(upper)
    with np.errstate(invalid="ignore"):
        mid = 0.5 * (lower + upper)
    mid = np.where(lo_inf & ~hi_inf, upper, mid)
    mid = np.where(hi_inf & ~lo_inf, np.nextafter(lower, np.inf), mid)
    return np.where(lo_inf & hi_inf, 0.0, mid)


def interval_llr(model: SignalModel, a: float, b: float) -> float:
    """LLR of the event ``a < X <= b``.

    Equals ``log[(F1(b) - F1(a)) / (F0(b) - F0(a))]`` with F_s the CDF of the
    private LLR under state s.  ``interval_llr(m, -inf, inf) == 0``.
    """
    if not a <= b:
        raise ValueError(f"empty interval ({a}, {b}]")
    return float(interval_llrs(model, a, b))


@dataclass
class ModelReport:
    violations: list[str]
    #: E[exp(-X) | S=1]; identically 1 for a valid model.
    inverse_lr_mean: float
    inverse_lr_exact: bool = False

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_model(model: SignalModel) -> ModelReport:
    """Check the model's measure assumptions; never raises."""
    if isinstance(model, GaussianModel):
        return _validate_gaussian(model)
    if isinstance(model, DiscreteModel):
        return _validate_discrete(model)
    return ModelReport([f"unsupported model type {type(model).__name__}"], math.nan)


def _validate_gaussian(model: GaussianModel) -> ModelReport:
    problems = []
    values = (model.mean0, model.mean1, model.sd)
    if not all(math.isfinite(v) for v in values):
        return ModelReport(["parameters must be finite"], math.nan)
    if model.sd <= 0:
        return ModelReport([f"sd must be positive, got {model.sd}"], math.nan)
    if model.mean0 == model.mean1:
        problems.append("mean0 == mean1: the two states are indistinguishable")
        return ModelReport(problems, 1.0)
    m, s = model.llr_params(1)
    # Substitute X = m + s*z; the integrand peaks at z = -s.
    value, _ = integrate.quad(
        lambda z: math.exp(-m - s * z - 0.5 * z * z) / math.sqrt(2 * math.pi),
        -np.inf, np.inf, points=None, epsabs=1e-13, epsrel=1e-12,
    )
    return ModelReport(problems, value)


def _validate_discrete(model: DiscreteModel) -> ModelReport:
    problems = []
    if model.size < 2:
        problems.append("need at least two atoms")
    labels = [a.label for a in model.atoms]
    if len(set(labels)) != len(labels):
        problems.append("duplicate atom labels")
    for a in model.atoms:
        if not (math.isfinite(a.p0) and math.isfinite(a.p1)):
            problems.append(f"atom {a.label}: non-finite probability")
        elif a.p0 <= 0 or a.p1 <= 0:
            problems.append(f"atom {a.label}: probabilities must be strictly positive")
    for s in (0, 1):
        total = math.fsum(model.probabilities(s))
        if abs(total - 1.0) > NORMALIZATION_TOL:
            problems.append(f"p{s} column sums to {total!r}, not 1")
    if problems:
        return ModelReport(problems, math.nan)
    if len({float(x) for x in model.atom_llrs}) == 1:
        problems.append("every atom has the same likelihood ratio: mu0 == mu1")
    for x, m0, m1 in model.support():
        if abs(math.log(m1 / m0) - x) > 1e-9:
            problems.append(f"merged mass ratio at x={x} is inconsistent")
    # Exact rational arithmetic: sum_k p1 * (p0 / p1).
    total = sum((Fraction(a.p1) * (Fraction(a.p0) / Fraction(a.p1)) for a in model.atoms),
                Fraction(0))
    return ModelReport(problems, float(total), inverse_lr_exact=True)
