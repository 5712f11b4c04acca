"""Trial data model: allocation targets, strata, subjects and per-cell summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, IncompleteRecord

StratumKey = tuple  # tuple[int, ...]; tuples already hash and order lexicographically


def _to_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        # repr keeps 0.2 as 1/5 instead of the binary expansion
        return Fraction(repr(value))
    return Fraction(str(value).strip())


@dataclass(frozen=True)
class AllocationSpec:
    """Target allocation proportions ``pi[0..k-1]`` for arms ``1..k``.

    Proportions are held as exact fractions so that ``sum(pi) == 1`` can be
    checked without rounding slack.
    """

    pi: tuple

    def __post_init__(self):
        pi = tuple(_to_fraction(p) for p in self.pi)
        if len(pi) < 2:
            raise ConfigError("allocation needs at least two arms")
        if any(p <= 0 or p >= 1 for p in pi):
            raise ConfigError(f"allocation proportions must lie in (0, 1): {[str(q) for q in pi]}")
        if sum(pi) != 1:
            raise ConfigError(f"allocation proportions sum to {sum(pi)}, not 1")
        object.__setattr__(self, "pi", pi)

    @classmethod
    def parse(cls, text: str) -> "AllocationSpec":
        """Parse ``"1:2:2"`` (a ratio) or ``"1/3,2/3"`` / ``"0.5,0.5"`` (proportions)."""
        text = text.strip()
        try:
            if ":" in text:
                parts = [Fraction(p.strip()) for p in text.split(":")]
                total = sum(parts)
                if total <= 0:
                    raise ValueError
                return cls(tuple(p / total for p in parts))
            return cls(tuple(Fraction(p.strip()) for p in text.split(",")))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"cannot parse allocation {text!r}") from None

    @classmethod
    def equal(cls, k: int) -> "AllocationSpec":
        return cls(tuple(Fraction(1, k) for _ in range(k)))

    @property
    def k(self) -> int:
        return len(self.pi)

    @cached_property
    def pi_array(self) -> np.ndarray:
        return np.array([float(p) for p in self.pi])

    @cached_property
    def base_vector(self) -> tuple:
        """Smallest integer vector proportional to ``pi`` (``(1, 2, 2)`` for 1:2:2)."""
        lcm = reduce(lambda a, b: a * b // math.gcd(a, b), (p.denominator for p in self.pi))
        ints = [int(p * lcm) for p in self.pi]
        g = reduce(math.gcd, ints)
        return tuple(i // g for i in ints)

    @property
    def ratio(self) -> str:
        return ":".join(str(i) for i in self.base_vector)

    def __str__(self):
        return self.ratio


@dataclass(frozen=True)
class SubjectRecord:
    """One patient. ``arm`` is 1-based; ``arm``/``y`` are ``None`` until known."""

    id: object
    z: StratumKey
    x: tuple = ()
    arm: int | None = None
    y: float | None = None


@dataclass(frozen=True)
class StratumArmSummary:
    """Sufficient statistics of one (arm, stratum) cell, centred within the cell."""

    n_t_z: int
    ybar: float
    s2: float  # nan when n_t_z < 2
    xbar: np.ndarray
    gram: np.ndarray
    xy: np.ndarray


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Column-oriented trial data.

    Attributes
    ----------
    z : object array of stratum keys (tuples of small ints), length n
    x : (n, p) float array of adjustment covariates
    arm : (n,) int array, 1-based; 0 marks an unassigned subject
    y : (n,) float array; nan marks a missing outcome
    alloc : AllocationSpec
    ids : optional sequence of subject identifiers
    """

    z: tuple
    x: np.ndarray
    arm: np.ndarray
    y: np.ndarray
    alloc: AllocationSpec
    ids: tuple | None = None

    def __post_init__(self):
        n = len(self.z)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(n, -1) if n else x.reshape(0, 0)
        arm = np.asarray(self.arm, dtype=np.int64).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape[0] != n or arm.shape[0] != n or y.shape[0] != n:
            raise ConfigError("z, x, arm and y must all have one entry per subject")
        if np.any((arm < 0) | (arm > self.alloc.k)):
            bad = int(np.flatnonzero((arm < 0) | (arm > self.alloc.k))[0])
            raise ConfigError(f"subject {bad}: arm {arm[bad]} outside 1..{self.alloc.k}")
        object.__setattr__(self, "z", tuple(tuple(int(c) for c in key) for key in self.z))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "arm", arm)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_records(cls, records: Iterable[SubjectRecord], alloc: AllocationSpec) -> "TrialDataset":
        records = list(records)
        p = len(records[0].x) if records else 0
        x = np.array([list(r.x) for r in records], dtype=float).reshape(len(records), p)
        arm = [0 if r.arm is None else r.arm for r in records]
        y = [math.nan if r.y is None else r.y for r in records]
        return cls(
            z=tuple(r.z for r in records), x=x, arm=arm, y=y, alloc=alloc,
            ids=tuple(r.id for r in records),
        )

    @property
    def n(self) -> int:
        return len(self.z)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def records(self) -> Iterator[SubjectRecord]:
        ids = self.ids if self.ids is not None else range(self.n)
        for i, rid in enumerate(ids):
            arm = int(self.arm[i]) or None
            y = None if math.isnan(self.y[i]) else float(self.y[i])
            yield SubjectRecord(rid, self.z[i], tuple(self.x[i]), arm, y)

    def with_outcomes(self, arm, y) -> "TrialDataset":
        return TrialDataset(self.z, self.x, arm, y, self.alloc, self.ids)

    def scaled(self, a: float = 1.0, b: float = 0.0) -> "TrialDataset":
        """Copy with outcomes replaced by ``a * y + b``."""
        return TrialDataset(self.z, self.x, self.arm, a * self.y + b, self.alloc, self.ids)

    @cached_property
    def summary(self) -> "TrialSummary":
        return summarize(self)


@dataclass(frozen=True, eq=False)
class TrialSummary:
    """Per-stratum, per-arm sufficient statistics of a complete dataset.

    Arrays are indexed ``[stratum_index, arm - 1, ...]`` with strata in sorted
    key order. Cells with no subjects hold nan means.
    """

    strata: tuple
    alloc: AllocationSpec
    n: int
    n_z: np.ndarray  # (nz,)
    n_tz: np.ndarray  # (nz, k)
    ybar: np.ndarray  # (nz, k)
    syy: np.ndarray  # (nz, k) centred sum of squares
    xbar: np.ndarray  # (nz, k, p)
    gram: np.ndarray  # (nz, k, p, p)
    xy: np.ndarray  # (nz, k, p)
    xbar_z: np.ndarray  # (nz, p) pooled over all arms
    p: int = field(default=0)

    @property
    def k(self) -> int:
        return self.alloc.k

    @property
    def weights(self) -> np.ndarray:
        return self.n_z / self.n

    @property
    def s2(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.n_tz >= 2, self.syy / (self.n_tz - 1), np.nan)

    def index(self, z: StratumKey) -> int:
        return self.strata.index(tuple(z))

    def cell(self, arm: int, z: StratumKey) -> StratumArmSummary:
        i, t = self.index(z), arm - 1
        return StratumArmSummary(
            n_t_z=int(self.n_tz[i, t]),
            ybar=float(self.ybar[i, t]),
            s2=float(self.s2[i, t]),
            xbar=self.xbar[i, t].copy(),
            gram=self.gram[i, t].copy(),
            xy=self.xy[i, t].copy(),
        )

    @property
    def cells(self) -> Mapping:
        """Mapping ``(arm, stratum) -> StratumArmSummary`` over nonempty cells."""
        return {
            (t + 1, z): self.cell(t + 1, z)
            for i, z in enumerate(self.strata)
            for t in range(self.k)
            if self.n_tz[i, t] > 0
        }

    def pooled_covariance(self) -> np.ndarray:
        """Within-stratum sample covariance of X over all arms, divisor ``n(z) - 1``."""
        dev = self.xbar - self.xbar_z[:, None, :]
        dev = np.nan_to_num(dev)
        between = np.einsum("zt,ztp,ztq->zpq", self.n_tz, dev, dev)
        total = self.gram.sum(axis=1) + between
        with np.errstate(invalid="ignore", divide="ignore"):
            return total / (self.n_z - 1)[:, None, None]


def summarize(dataset: TrialDataset) -> TrialSummary:
    """Two-pass (mean, then centred sums) per-cell statistics of a complete dataset."""
    n, k, p = dataset.n, dataset.alloc.k, dataset.p
    if n == 0:
        raise IncompleteRecord("dataset is empty")
    missing = (dataset.arm == 0) | np.isnan(dataset.y)
    if missing.any():
        i = int(np.flatnonzero(missing)[0])
        rid = dataset.ids[i] if dataset.ids is not None else i
        raise IncompleteRecord(f"subject {rid!r} lacks an arm or an outcome")

    strata = tuple(sorted(set(dataset.z)))
    lookup = {z: i for i, z in enumerate(strata)}
    zi = np.fromiter((lookup[z] for z in dataset.z), dtype=np.int64, count=n)
    nz = len(strata)
    cell = zi * k + (dataset.arm - 1)
    ncell = nz * k

    counts = np.bincount(cell, minlength=ncell).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = np.where(counts > 0, 1.0 / counts, np.nan)
    y = dataset.y
    ybar = np.bincount(cell, weights=y, minlength=ncell) * inv
    yc = y - ybar[cell]
    syy = np.bincount(cell, weights=yc * yc, minlength=ncell)

    x = dataset.x
    xbar = np.empty((ncell, p))
    for j in range(p):
        xbar[:, j] = np.bincount(cell, weights=x[:, j], minlength=ncell) * inv
    xc = x - xbar[cell] if p else x
    gram = np.empty((ncell, p, p))
    xy = np.empty((ncell, p))
    for j in range(p):
        xy[:, j] = np.bincount(cell, weights=xc[:, j] * yc, minlength=ncell)
        for l in range(j, p):
            g = np.bincount(cell, weights=xc[:, j] * xc[:, l], minlength=ncell)
            gram[:, j, l] = g
            gram[:, l, j] = g

    n_z = np.bincount(zi, minlength=nz).astype(float)
    xbar_z = np.empty((nz, p))
    for j in range(p):
        xbar_z[:, j] = np.bincount(zi, weights=x[:, j], minlength=nz) / n_z

    return TrialSummary(
        strata=strata,
        alloc=dataset.alloc,
        n=n,
        n_z=n_z,
        n_tz=counts.reshape(nz, k),
        ybar=ybar.reshape(nz, k),
        syy=syy.reshape(nz, k),
        xbar=xbar.reshape(nz, k, p),
        gram=gram.reshape(nz, k, p, p),
        xy=xy.reshape(nz, k, p),
        xbar_z=xbar_z,
        p=p,
    )


def stratum_keys(columns: Sequence[Sequence[int]]) -> tuple:
    """Zip per-factor code columns into a tuple of stratum keys."""
    return tuple(zip(*[[int(c) for c in col] for col in columns]))
