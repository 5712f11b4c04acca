"""Simulation data-generating processes and stratification variants.

Covariates: ``X1 ~ Bernoulli(1/2)`` and ``X2 | X1 ~ N(X1 - 0.5, 1)``. Every
potential outcome is normal given ``W = (X1, X2)`` with mean
``a0 + a1 X1 + a2 X2 + a3 X2^2`` and variance ``v0 + v1 X1``; the four cases
differ only in those coefficients. The adjustment covariate is ``X = X2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import stats

from .core import AllocationSpec
from .errors import ConfigError
from .estimators import Contrast

CASES = ("I", "II", "III", "IV")

_ROMAN = {"1": "I", "2": "II", "3": "III", "4": "IV"}


@dataclass(frozen=True)
class ArmModel:
    """Conditional mean and variance coefficients of one potential outcome."""

    a0: float
    a1: float
    a2: float
    a3: float
    v0: float
    v1: float

    def mean(self, x1, x2):
        return self.a0 + self.a1 * x1 + self.a2 * x2 + self.a3 * x2 * x2

    def var(self, x1):
        return self.v0 + self.v1 * x1


@dataclass(frozen=True)
class DGPSpec:
    """One of the four simulation cases; ``noise`` scales every outcome SD.

    ``x1_sd_form`` reads the case III/IV ``X1 + 0.5`` term as a standard
    deviation instead of a variance.
    """

    case: str = "I"
    phi: float = 1.0
    psi: float = 1.0
    noise: float = 1.0
    x1_sd_form: bool = False

    def __post_init__(self):
        case = str(self.case).strip().upper()
        case = _ROMAN.get(case, case)
        if case not in CASES:
            raise ConfigError(f"unknown case {self.case!r}; expected one of {', '.join(CASES)}")
        object.__setattr__(self, "case", case)

    @property
    def k(self) -> int:
        return 3 if self.case == "IV" else 2

    @cached_property
    def arms(self) -> tuple:
        phi, psi, s2 = self.phi, self.psi, self.noise**2
        arm2 = ArmModel(phi, 4.0, 2.0, 0.0, s2, 0.0)
        if self.case == "I":
            return ArmModel(0.0, 4.0, 2.0, 0.0, s2, 0.0), arm2
        if self.case == "II":
            return ArmModel(0.0, 4.0, -2.0, 0.0, s2, 0.0), arm2
        # default: X1 + 0.5 is a variance; SD form gives (X1 + 0.5)^2 = 0.25 + 2 X1 on {0, 1}
        v0, v1 = (0.25, 2.0) if self.x1_sd_form else (0.5, 1.0)
        arm1 = ArmModel(0.25, 3.0, 0.0, 0.2, v0 * s2, v1 * s2)
        if self.case == "III":
            return arm1, arm2
        return arm1, arm2, ArmModel(psi + 1.0, 2.0, -1.0, 0.0, s2, 0.0)

    def draw(self, n: int, gen: np.random.Generator):
        """``(x1, x2, y)`` for ``n`` subjects; ``y`` is ``(n, k)`` potential outcomes."""
        x1 = (gen.random(n) < 0.5).astype(np.int64)
        x2 = x1 - 0.5 + gen.standard_normal(n)
        eps = gen.standard_normal((n, self.k))
        y = np.empty((n, self.k))
        for t, arm in enumerate(self.arms):
            y[:, t] = arm.mean(x1, x2) + np.sqrt(arm.var(x1)) * eps[:, t]
        return x1, x2, y

    def arm_mean(self, t: int) -> float:
        """``E Y^(t)`` using ``E X1 = 1/2``, ``E X2 = 0`` and ``E X2^2 = 1.25``."""
        a = self.arms[t - 1]
        return a.a0 + a.a1 * 0.5 + a.a3 * 1.25

    def true_theta(self, contrast: Contrast = Contrast()) -> float:
        contrast.check(self.k)
        return self.arm_mean(contrast.t) - self.arm_mean(contrast.s)

    def default_contrasts(self) -> tuple:
        if self.k == 3:
            return Contrast(2, 1), Contrast(3, 1), Contrast(3, 2)
        return (Contrast(2, 1),)


def draw_subject(dgp: DGPSpec, gen: np.random.Generator):
    """A single subject ``(x1, x2, y_potential)``."""
    x1, x2, y = dgp.draw(1, gen)
    return int(x1[0]), float(x2[0]), y[0]


def true_theta(dgp: DGPSpec, contrast: Contrast = Contrast()) -> float:
    return dgp.true_theta(contrast)


_CUTS = {"X1": (), "X1_d2": (0.0,), "X1_d4": (-0.8, 0.0, 0.8)}


@dataclass(frozen=True)
class ZSpec:
    """Stratification variable: ``X1`` alone or ``X1`` with ``X2`` cut into bins.

    Bins are left-closed: ``[c_j, c_{j+1})``.
    """

    variant: str = "X1"

    def __post_init__(self):
        v = self.variant.strip().replace(",", "_").replace(" ", "")
        v = {"x1": "X1", "x1_d2": "X1_d2", "x1_d4": "X1_d4"}.get(v.lower(), v)
        if v not in _CUTS:
            raise ConfigError(f"unknown Z variant {self.variant!r}; expected X1, X1_d2 or X1_d4")
        object.__setattr__(self, "variant", v)

    @property
    def cutpoints(self) -> tuple:
        return _CUTS[self.variant]

    @property
    def arity(self) -> int:
        return 1 if not self.cutpoints else 2

    @property
    def levels(self) -> tuple:
        return (2,) if not self.cutpoints else (2, len(self.cutpoints) + 1)

    @property
    def label(self) -> str:
        return {"X1": "X1", "X1_d2": "X1,d2", "X1_d4": "X1,d4"}[self.variant]

    def strata(self) -> list:
        if not self.cutpoints:
            return [(0,), (1,)]
        return [(a, b) for a in range(2) for b in range(len(self.cutpoints) + 1)]

    def keys(self, x1, x2) -> list:
        x1 = np.asarray(x1).astype(np.int64)
        if not self.cutpoints:
            return [(int(a),) for a in x1]
        bins = np.searchsorted(np.asarray(self.cutpoints), np.asarray(x2), side="right")
        return list(zip(x1.tolist(), bins.tolist()))

    def bounds(self, z) -> tuple:
        """``(x1, lo, hi)`` with ``X2 in [lo, hi)`` for stratum ``z``."""
        edges = (-math.inf,) + self.cutpoints + (math.inf,)
        b = 0 if not self.cutpoints else z[1]
        return z[0], edges[b], edges[b + 1]

    def probabilities(self) -> dict:
        """Closed-form ``pr(Z = z)`` for every stratum."""
        out = {}
        for z in self.strata():
            x1, lo, hi = self.bounds(z)
            mu = x1 - 0.5
            out[z] = 0.5 * float(stats.norm.cdf(hi - mu) - stats.norm.cdf(lo - mu))
        return out

    def moments(self, z) -> tuple:
        """Exact ``E(X2^j | Z = z)`` for j = 1..4 (truncated normal moments)."""
        x1, lo, hi = self.bounds(z)
        mu = x1 - 0.5
        if math.isinf(lo) and math.isinf(hi):
            return mu, mu**2 + 1, mu**3 + 3 * mu, mu**4 + 6 * mu**2 + 3
        dist = stats.truncnorm(lo - mu, hi - mu, loc=mu, scale=1.0)
        return tuple(float(dist.moment(j)) for j in range(1, 5))


def expected_min_cell(n: int, zspec: ZSpec, alloc: AllocationSpec) -> float:
    """Smallest expected stratum-by-arm count ``min_{z,t} n pr(Z=z) pi_t``."""
    return n * min(zspec.probabilities().values()) * float(min(alloc.pi))
