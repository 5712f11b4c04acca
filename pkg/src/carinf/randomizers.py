"""Sequential covariate-adaptive treatment assignment.

Each randomizer consumes one stratum key at a time and returns a 1-based arm.
All randomness comes from a single :class:`~carinf.rng.UniformStream`, one
uniform per assignment (plus the shuffles of permuted blocks), so a fixed seed
and a fixed arrival order always reproduce the same assignments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .core import AllocationSpec, StratumKey
from .errors import ConfigError, ConfigMismatch
from .rng import UniformStream

SCHEMES = ("simple", "spb", "biased_coin", "urn", "minimization")

_ALIASES = {
    "simple": "simple",
    "spb": "spb",
    "stratpermutedblock": "spb",
    "permuted_block": "spb",
    "biased_coin": "biased_coin",
    "biasedcoin": "biased_coin",
    "stratbiasedcoin": "biased_coin",
    "urn": "urn",
    "straturn": "urn",
    "minimization": "minimization",
    "min": "minimization",
}


def scheme_name(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key not in _ALIASES:
        raise ConfigError(f"unknown scheme {name!r}; expected one of {', '.join(SCHEMES)}")
    return _ALIASES[key]


@dataclass(frozen=True)
class SchemeConfig:
    """Randomization scheme and its tuning constants.

    ``block_size`` defaults to twice the smallest integer block for the
    allocation (4 for 1:1, 6 for 1:2, 10 for 1:2:2). ``min_weights`` default
    to 1 for every margin.
    """

    scheme: str
    alloc: AllocationSpec
    margin_arity: int = 1
    block_size: int | None = None
    coin_p: float = 2 / 3
    urn_alpha: int = 1
    urn_beta: int = 1
    min_weights: tuple | None = None
    min_q: float = 0.8
    levels: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", scheme_name(self.scheme))
        if self.margin_arity < 1:
            raise ConfigError("margin_arity must be at least 1")
        unit = sum(self.alloc.base_vector)
        if self.block_size is None:
            object.__setattr__(self, "block_size", 2 * unit)
        elif self.block_size <= 0 or self.block_size % unit:
            raise ConfigError(
                f"block_size {self.block_size} is not a positive multiple of {unit} "
                f"(allocation {self.alloc.ratio})"
            )
        if self.min_weights is None:
            object.__setattr__(self, "min_weights", (1.0,) * self.margin_arity)
        else:
            w = tuple(float(v) for v in self.min_weights)
            if len(w) != self.margin_arity:
                raise ConfigError(f"min_weights needs {self.margin_arity} entries, got {len(w)}")
            if any(v < 0 for v in w) or sum(w) <= 0:
                raise ConfigError("min_weights must be nonnegative with a positive sum")
            object.__setattr__(self, "min_weights", w)
        if self.levels is not None and len(self.levels) != self.margin_arity:
            raise ConfigError("levels needs one entry per stratification factor")
        if self.scheme == "biased_coin":
            if self.alloc.k != 2:
                raise ConfigError("the stratified biased coin is implemented for two arms only")
            if not 0.5 < self.coin_p < 1:
                raise ConfigError("coin_p must lie in (1/2, 1)")
        if self.scheme == "urn":
            if self.alloc.pi != (Fraction(1, 2), Fraction(1, 2)):
                raise ConfigError("the urn design is implemented for 1:1 two-arm allocation only")
            if self.urn_alpha < 0 or self.urn_beta < 0 or self.urn_alpha + self.urn_beta == 0:
                raise ConfigError("urn_alpha and urn_beta must be nonnegative, not both zero")
        if self.scheme == "minimization" and not 0.5 < self.min_q <= 1:
            raise ConfigError("min_q must lie in (1/2, 1]")

    @property
    def label(self) -> str:
        return self.scheme


def _categorical(u: float, probs: Sequence[float], arms: Sequence[int]) -> int:
    acc = 0.0
    for prob, arm in zip(probs, arms):
        acc += prob
        if u < acc:
            return arm
    return arms[-1]


class Randomizer:
    """Common bookkeeping: per-stratum counts ``n_t(z)`` and imbalance ``D_t(z)``."""

    def __init__(self, cfg: SchemeConfig, rng=None):
        self.cfg = cfg
        self.k = cfg.alloc.k
        self.pi = cfg.alloc.pi
        self.pi_f = [float(p) for p in self.pi]
        self.uniform = rng if isinstance(rng, UniformStream) else UniformStream(rng)
        self.stratum_counts: dict = {}

    def _check(self, z: StratumKey) -> tuple:
        z = tuple(z)
        if len(z) != self.cfg.margin_arity:
            raise ConfigMismatch(
                f"stratum {z} has {len(z)} factor(s); scheme expects {self.cfg.margin_arity}"
            )
        levels = self.cfg.levels
        if levels is not None:
            for code, size in zip(z, levels):
                if not 0 <= code < size:
                    raise ConfigMismatch(f"stratum {z}: code {code} outside 0..{size - 1}")
        return z

    def counts(self, z: StratumKey) -> list:
        return list(self.stratum_counts.get(tuple(z), [0] * self.k))

    def imbalance(self, z: StratumKey, exact: bool = False):
        """``D_t(z) = n_t(z) - pi_t n(z)`` for t = 1..k (Fractions if ``exact``)."""
        c = self.counts(z)
        nz = sum(c)
        if exact:
            return [Fraction(ct) - p * nz for ct, p in zip(c, self.pi)]
        return np.array([ct - p * nz for ct, p in zip(c, self.pi_f)])

    def assign(self, z: StratumKey) -> int:
        z = self._check(z)
        counts = self.stratum_counts.get(z)
        if counts is None:
            counts = self.stratum_counts[z] = [0] * self.k
        arm = self._choose(z, counts)
        counts[arm - 1] += 1
        return arm

    def assign_many(self, keys: Iterable[StratumKey]) -> np.ndarray:
        return np.array([self.assign(z) for z in keys], dtype=np.int64)

    def _choose(self, z, counts) -> int:  # pragma: no cover - abstract
        raise NotImplementedError


class SimpleRandomizer(Randomizer):
    def _choose(self, z, counts):
        return _categorical(self.uniform.next(), self.pi_f, range(1, self.k + 1))


class PermutedBlockRandomizer(Randomizer):
    """Stratified permuted blocks holding exactly ``block_size * pi_t`` slots per arm."""

    def __init__(self, cfg, rng=None):
        super().__init__(cfg, rng)
        self.template = [
            arm
            for arm, p in enumerate(cfg.alloc.pi, start=1)
            for _ in range(int(p * cfg.block_size))
        ]
        self.pending: dict = {}

    def _new_block(self) -> list:
        block = list(self.template)
        for i in range(len(block) - 1, 0, -1):
            j = int(self.uniform.next() * (i + 1))
            block[i], block[j] = block[j], block[i]
        return block

    def _choose(self, z, counts):
        block = self.pending.get(z)
        if not block:
            block = self.pending[z] = self._new_block()
            block.reverse()
        return block.pop()

    def residual(self, z) -> int:
        """Number of slots left in the open block of stratum ``z``."""
        return len(self.pending.get(tuple(z), ()))


class BiasedCoinRandomizer(Randomizer):
    """Two-arm stratified biased coin on the sign of ``D_1(z)``."""

    def __init__(self, cfg, rng=None):
        super().__init__(cfg, rng)
        self.num, self.den = cfg.alloc.pi[0].numerator, cfg.alloc.pi[0].denominator
        self.p = cfg.coin_p

    def _choose(self, z, counts):
        u = self.uniform.next()
        # sign of D_1 = n_1 - pi_1 n(z), in integers
        sign = self.den * counts[0] - self.num * (counts[0] + counts[1])
        if sign == 0:
            return _categorical(u, self.pi_f, (1, 2))
        preferred, other = (1, 2) if sign < 0 else (2, 1)
        return preferred if u < self.p else other


class UrnRandomizer(Randomizer):
    """Wei's urn UD(alpha, beta) per stratum, 1:1."""

    def __init__(self, cfg, rng=None):
        super().__init__(cfg, rng)
        self.alpha, self.beta = cfg.urn_alpha, cfg.urn_beta

    def balls(self, z) -> tuple:
        n1, n2 = self.counts(z)
        return self.alpha + self.beta * n2, self.alpha + self.beta * n1

    def _choose(self, z, counts):
        b1 = self.alpha + self.beta * counts[1]
        b2 = self.alpha + self.beta * counts[0]
        return 1 if self.uniform.next() * (b1 + b2) < b1 else 2


class MinimizationRandomizer(Randomizer):
    """Pocock-Simon minimization over the marginal levels of the stratum key.

    The imbalance of a margin level is the sample variance over arms of the
    allocation-adjusted counts ``n_t / pi_t``; the score of a candidate arm is
    the weighted sum of those variances after hypothetically adding the new
    subject to it. A unique minimizer is taken with probability ``min_q``,
    the rest split over the other arms in proportion to ``pi``; tied
    minimizers share everything in proportion to ``pi``.
    """

    def __init__(self, cfg, rng=None):
        super().__init__(cfg, rng)
        self.inv_pi = [float(1 / p) for p in cfg.alloc.pi]
        self.weights = list(cfg.min_weights)
        self.q = cfg.min_q
        self.margins = [dict() for _ in range(cfg.margin_arity)]

    def margin_counts(self, factor: int, level: int) -> list:
        return list(self.margins[factor].get(level, [0] * self.k))

    def scores(self, z: StratumKey) -> list:
        """Weighted imbalance total for each candidate arm (lower is better)."""
        z = self._check(z)
        k, inv_pi = self.k, self.inv_pi
        totals = [0.0] * k
        for m, level in enumerate(z):
            w = self.weights[m]
            if w == 0:
                continue
            c = self.margins[m].get(level)
            a = [0.0] * k if c is None else [ci * r for ci, r in zip(c, inv_pi)]
            s1 = sum(a)
            s2 = sum(v * v for v in a)
            for t in range(k):
                r = inv_pi[t]
                t1 = s1 + r
                t2 = s2 + 2.0 * a[t] * r + r * r
                totals[t] += w * (t2 - t1 * t1 / k) / (k - 1)
        return totals

    def _choose(self, z, counts):
        totals = self.scores(z)
        best = min(totals)
        tol = 1e-9 * max(1.0, abs(best))
        minimizers = [t + 1 for t in range(self.k) if totals[t] - best <= tol]
        u = self.uniform.next()
        if len(minimizers) > 1:
            total = sum(self.pi_f[t - 1] for t in minimizers)
            return _categorical(u, [self.pi_f[t - 1] / total for t in minimizers], minimizers)
        best_arm = minimizers[0]
        if u < self.q:
            return best_arm
        others = [t for t in range(1, self.k + 1) if t != best_arm]
        total = sum(self.pi_f[t - 1] for t in others)
        u2 = (u - self.q) / (1.0 - self.q)
        return _categorical(u2, [self.pi_f[t - 1] / total for t in others], others)

    def assign(self, z):
        arm = super().assign(z)
        for m, level in enumerate(tuple(z)):
            c = self.margins[m].get(level)
            if c is None:
                c = self.margins[m][level] = [0] * self.k
            c[arm - 1] += 1
        return arm


_CLASSES = {
    "simple": SimpleRandomizer,
    "spb": PermutedBlockRandomizer,
    "biased_coin": BiasedCoinRandomizer,
    "urn": UrnRandomizer,
    "minimization": MinimizationRandomizer,
}


def make_randomizer(cfg: SchemeConfig, rng=None) -> Randomizer:
    """Fresh randomizer state for ``cfg`` driven by ``rng`` (Generator, UniformStream or seed)."""
    return _CLASSES[cfg.scheme](cfg, rng)


def assign_sequence(cfg: SchemeConfig, keys: Iterable[StratumKey], rng=None) -> np.ndarray:
    return make_randomizer(cfg, rng).assign_many(keys)


# ---------------------------------------------------------------------------
# empirical type classification


@dataclass
class TypeReport:
    """Scaling of ``|D_t(z)| / sqrt(n(z))`` across sample sizes for one scheme."""

    scheme: str
    n_grid: tuple
    stat: tuple  # median over replications and cells, per n
    slope: float  # log-log slope of stat against n
    cross_corr: float  # mean |corr(D_1(z), D_1(z'))| across strata at the largest n
    verdict: str
    reference: float | None = None  # median |N(0, v)| where a closed form exists
    extra: dict = field(default_factory=dict)


TYPE1 = "consistent with type 1"
TYPE2 = "consistent with type 2"
TYPE3 = "type 3 (inconclusive scaling)"


def _verdict(slope: float, cross_corr: float, reps: int) -> str:
    if slope < -0.3:
        return TYPE1
    corr_bound = 0.1 + 3.0 / math.sqrt(reps)
    if abs(slope) < 0.15 and cross_corr < corr_bound:
        return TYPE2
    return TYPE3


def classify_type(cfg: SchemeConfig, n_grid: Sequence[int], reps: int, draw_keys, seed: int = 0) -> TypeReport:
    """Empirical type of a scheme from the growth of its within-stratum imbalance.

    Parameters
    ----------
    cfg : scheme to study.
    n_grid : increasing sample sizes; each replication runs one sequence up to
        ``max(n_grid)`` and records ``D_t(z)`` at every prefix length in the grid.
    reps : number of replications (at least 200).
    draw_keys : callable ``(n, generator) -> list of stratum keys``.
    seed : master seed; replication ``r`` uses stream ``(seed, r)``.
    """
    from .rng import stream

    if reps < 200:
        raise ConfigError("classify_type needs at least 200 replications")
    grid = tuple(sorted(int(n) for n in n_grid))
    n_max = grid[-1]
    checkpoints = set(grid)
    stats = {n: [] for n in grid}
    last_d = []  # per replication: {z: D_1(z)} at n_max
    for r in range(reps):
        gen = stream(seed, r)
        keys = draw_keys(n_max, gen)
        rnd = make_randomizer(cfg, UniformStream(gen))
        for i, z in enumerate(keys, start=1):
            rnd.assign(z)
            if i in checkpoints:
                for zz, c in rnd.stratum_counts.items():
                    nz = sum(c)
                    for t in range(rnd.k):
                        stats[i].append(abs(c[t] - rnd.pi_f[t] * nz) / math.sqrt(nz))
        last_d.append({zz: c[0] - rnd.pi_f[0] * sum(c) for zz, c in rnd.stratum_counts.items()})
    med = tuple(float(np.median(stats[n])) for n in grid)
    if len(grid) > 1 and min(med) > 0:
        slope = float(np.polyfit(np.log(grid), np.log(med), 1)[0])
    else:
        slope = -math.inf if min(med) == 0 else 0.0
    strata = sorted({z for d in last_d for z in d})
    cross = 0.0
    if len(strata) > 1:
        mat = np.array([[d.get(z, 0.0) for z in strata] for d in last_d])
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.corrcoef(mat, rowvar=False)
        off = corr[~np.eye(len(strata), dtype=bool)]
        off = off[np.isfinite(off)]
        cross = float(np.mean(np.abs(off))) if off.size else 0.0
    reference = None
    if cfg.scheme == "simple":
        ref = [0.6744897501960817 * math.sqrt(p * (1 - p)) for p in rnd.pi_f]
        reference = float(np.mean(ref))
    elif cfg.scheme == "urn":
        reference = 0.6744897501960817 * math.sqrt(1 / 12)
    return TypeReport(
        scheme=cfg.scheme,
        n_grid=grid,
        stat=med,
        slope=slope,
        cross_corr=cross,
        verdict=_verdict(slope, cross, reps),
        reference=reference,
    )
