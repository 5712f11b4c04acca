"""Seeded Monte Carlo replication of simulated trials.

A replication draws ``n`` subjects, assigns them one by one with the
scenario's randomizer, reveals the outcome of the assigned arm and runs every
estimator on every contrast. Replication ``r`` uses its own stream keyed by
``(master_seed, r)``, and results are reduced in replication order, so a
summary does not depend on the number of worker processes.

Any object with ``k``, ``draw(n, gen)``, ``true_theta(contrast)`` and
``default_contrasts()`` can serve as the data-generating process.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import TrialDataset
from .dgp import DGPSpec, ZSpec
from .errors import CarInfError, ConfigError
from .estimators import Contrast
from .inference import infer
from .randomizers import SchemeConfig, make_randomizer
from .rng import UniformStream, stream

ESTIMATOR_ORDER = ("U", "B", "A")
ESTIMATOR_LABELS = {"U": "theta_hat", "B": "theta_hat_B", "A": "theta_hat_A"}

SE_DEGENERATE = 1e-10
HIGH_FAIL_RATE = 0.01


@dataclass(frozen=True)
class ScenarioSpec:
    n: int
    dgp: DGPSpec
    zspec: ZSpec
    scheme: SchemeConfig
    contrasts: tuple | None = None
    reps: int = 2000
    master_seed: int = 2021
    estimators: tuple = ESTIMATOR_ORDER
    alpha: float = 0.05

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.scheme.alloc.k != self.dgp.k:
            raise ConfigError(
                f"allocation {self.scheme.alloc.ratio} has {self.scheme.alloc.k} arms "
                f"but case {getattr(self.dgp, 'case', '?')} has {self.dgp.k}"
            )
        if self.scheme.margin_arity != self.zspec.arity:
            raise ConfigError(
                f"scheme expects {self.scheme.margin_arity} stratification factor(s), "
                f"Z = {self.zspec.label} has {self.zspec.arity}"
            )
        contrasts = self.contrasts or self.dgp.default_contrasts()
        contrasts = tuple(Contrast.parse(c) if isinstance(c, str) else c for c in contrasts)
        for c in contrasts:
            c.check(self.dgp.k)
        object.__setattr__(self, "contrasts", contrasts)
        for tag in self.estimators:
            if tag not in ESTIMATOR_LABELS:
                raise ConfigError(f"unknown estimator {tag!r}; expected U, A or B")

    @property
    def alloc(self):
        return self.scheme.alloc

    @property
    def label(self) -> str:
        case = getattr(self.dgp, "case", "custom")
        return f"n={self.n} case={case} Z={self.zspec.label} {self.scheme.scheme} {self.alloc.ratio}"


@dataclass(frozen=True)
class ReplicationResult:
    """``values[c, e]`` is ``(estimate, se, covered)``; failed entries are nan."""

    rep: int
    values: np.ndarray  # (n_contrasts, n_estimators, 3)
    errors: tuple = ()  # (contrast index, estimator tag, error class name)


def simulate_trial(scenario: ScenarioSpec, rep: int):
    """The assigned dataset of replication ``rep`` plus ``(x1, x2, y_potential)``."""
    gen = stream(scenario.master_seed, rep)
    x1, x2, y_pot = scenario.dgp.draw(scenario.n, gen)
    keys = scenario.zspec.keys(x1, x2)
    rnd = make_randomizer(scenario.scheme, UniformStream(gen))
    arm = rnd.assign_many(keys)
    y = y_pot[np.arange(scenario.n), arm - 1]
    data = TrialDataset(z=keys, x=x2[:, None], arm=arm, y=y, alloc=scenario.alloc)
    return data, (x1, x2, y_pot)


def run_replication(scenario: ScenarioSpec, rep: int) -> ReplicationResult:
    data, _ = simulate_trial(scenario, rep)
    tags = scenario.estimators
    values = np.full((len(scenario.contrasts), len(tags), 3), np.nan)
    errors = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for ci, contrast in enumerate(scenario.contrasts):
            theta = scenario.dgp.true_theta(contrast)
            for ei, tag in enumerate(tags):
                try:
                    rep_ = infer(data, contrast, (tag,), scenario.alpha)[tag]
                except CarInfError as exc:
                    errors.append((ci, tag, type(exc).__name__))
                    continue
                values[ci, ei] = rep_.estimate, rep_.se, float(rep_.covers(theta))
    return ReplicationResult(rep, values, tuple(errors))


def _run_chunk(scenario: ScenarioSpec, reps: range) -> list:
    return [run_replication(scenario, r) for r in reps]


def run_replications(scenario: ScenarioSpec, workers: int = 1) -> list:
    """All replications in index order."""
    reps = range(scenario.reps)
    if workers <= 1 or scenario.reps < 2:
        return _run_chunk(scenario, reps)
    n_chunks = min(scenario.reps, 4 * workers)
    bounds = np.linspace(0, scenario.reps, n_chunks + 1).astype(int)
    chunks = [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_run_chunk, [scenario] * len(chunks), chunks)
        return [r for part in parts for r in part]


@dataclass(frozen=True)
class EstimatorSummary:
    contrast: Contrast
    estimator: str
    theta: float
    bias: float
    sd: float
    se_avg: float
    cp: float
    fail_count: int
    n_ok: int
    sd_undefined: bool = False
    cp_undefined: bool = False
    high_fail: bool = False

    @property
    def label(self) -> str:
        return ESTIMATOR_LABELS[self.estimator]

    @property
    def sd_mcse(self) -> float:
        """Approximate MC standard error of ``sd`` under normality."""
        if self.n_ok < 2 or not math.isfinite(self.sd):
            return math.nan
        return self.sd / math.sqrt(2 * (self.n_ok - 1))

    @property
    def cp_mcse(self) -> float:
        if self.n_ok < 1 or not math.isfinite(self.cp):
            return math.nan
        return math.sqrt(self.cp * (1 - self.cp) / self.n_ok)


@dataclass(frozen=True)
class SimSummary:
    scenario: ScenarioSpec
    rows: tuple
    errors: dict = field(default_factory=dict)  # error class name -> count

    def row(self, estimator: str, contrast: Contrast | str | None = None) -> EstimatorSummary:
        if contrast is None:
            contrast = self.scenario.contrasts[0]
        elif isinstance(contrast, str):
            contrast = Contrast.parse(contrast)
        for r in self.rows:
            if r.estimator == estimator and r.contrast == contrast:
                return r
        raise KeyError((estimator, str(contrast)))


def summarize_replications(scenario: ScenarioSpec, results: list) -> SimSummary:
    """Ordered reduction of replication results into bias / SD / SE / CP."""
    values = np.stack([r.values for r in sorted(results, key=lambda r: r.rep)])
    errors: dict = {}
    for r in results:
        for _, _, name in r.errors:
            errors[name] = errors.get(name, 0) + 1
    rows = []
    reps = len(results)
    for ci, contrast in enumerate(scenario.contrasts):
        theta = float(scenario.dgp.true_theta(contrast))
        for ei, tag in enumerate(scenario.estimators):
            v = values[:, ci, ei]
            ok = ~np.isnan(v[:, 0])
            n_ok = int(ok.sum())
            est, se, cov = v[ok, 0], v[ok, 1], v[ok, 2]
            bias = float(est.mean() - theta) if n_ok else math.nan
            sd = float(est.std(ddof=1)) if n_ok >= 2 else math.nan
            se_avg = float(se.mean()) if n_ok else math.nan
            cp_undefined = n_ok == 0 or float(se.max()) <= SE_DEGENERATE
            cp = math.nan if cp_undefined else float(cov.mean())
            fails = reps - n_ok
            rows.append(EstimatorSummary(
                contrast=contrast, estimator=tag, theta=theta, bias=bias, sd=sd,
                se_avg=se_avg, cp=cp, fail_count=fails, n_ok=n_ok,
                sd_undefined=n_ok < 2, cp_undefined=cp_undefined,
                high_fail=fails > HIGH_FAIL_RATE * reps,
            ))
    return SimSummary(scenario, tuple(rows), dict(sorted(errors.items())))


def monte_carlo(scenario: ScenarioSpec, workers: int = 1) -> SimSummary:
    return summarize_replications(scenario, run_replications(scenario, workers))


@dataclass(frozen=True)
class UVCheck:
    corr: float
    bound: float  # 3 / sqrt(reps)
    reps: int
    degenerate: bool  # V has no spread (homogeneous effects); corr set to 0

    @property
    def ok(self) -> bool:
        return abs(self.corr) <= self.bound


def uv_decomposition_check(scenario: ScenarioSpec, contrast: Contrast | None = None,
                           cond_means: dict | None = None) -> UVCheck:
    """Correlation across replications of the two parts of ``theta_hat - theta``.

    ``U = sum_z n(z)/n {(ybar_t(z) - mu_t(z)) - (ybar_s(z) - mu_s(z))}`` and
    ``V = sum_z n(z)/n (mu_t(z) - mu_s(z)) - theta`` where ``mu_t(z)`` is
    the exact conditional mean ``E(Y^(t) | Z = z)``. ``cond_means`` maps a
    stratum to its length-k vector of conditional means and defaults to the
    closed-form values of the scenario's case.
    """
    from .oracle import theorem1_exact

    contrast = contrast or scenario.contrasts[0]
    if cond_means is None:
        orc = theorem1_exact(scenario.dgp, scenario.zspec, scenario.alloc, contrast)
        cond_means = {z: orc.cond_mean[i] for i, z in enumerate(orc.strata)}
    theta = scenario.dgp.true_theta(contrast)
    t, s = contrast.t - 1, contrast.s - 1
    u = np.empty(scenario.reps)
    v = np.empty(scenario.reps)
    for r in range(scenario.reps):
        data, _ = simulate_trial(scenario, r)
        sm = data.summary
        mu = np.array([cond_means[z] for z in sm.strata])
        w = sm.weights
        with np.errstate(invalid="ignore"):
            dev = (sm.ybar[:, t] - mu[:, t]) - (sm.ybar[:, s] - mu[:, s])
        u[r] = np.nansum(w * dev)
        v[r] = w @ (mu[:, t] - mu[:, s]) - theta
    bound = 3.0 / math.sqrt(scenario.reps)
    if np.ptp(v) <= 1e-12 * max(1.0, np.abs(v).max()):
        return UVCheck(0.0, bound, scenario.reps, True)
    return UVCheck(float(np.corrcoef(u, v)[0, 1]), bound, scenario.reps, False)
