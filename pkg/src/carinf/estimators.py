"""Stratified and covariate-adjusted average treatment effect estimators.

``theta_hat`` is the stratum-size-weighted difference of arm means.
``theta_hat_A`` shifts each arm mean by ``(xbar_t(z) - xbar(z))' beta_t(z)``
using per-arm within-stratum slopes; ``theta_hat_B`` uses one slope per
stratum pooled over all arms. All functions accept a :class:`TrialDataset`
or a precomputed :class:`TrialSummary`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import TrialDataset, TrialSummary
from .errors import ConfigError, EmptyCell, InsufficientCell, SingularGram

RCOND_MIN = 1e-12
RECOMMENDED_CELL_SIZE = 10


class SmallCellWarning(UserWarning):
    """A stratum-arm cell is below the recommended size of 10."""


class DroppedStrataWarning(UserWarning):
    """Strata missing a contrasted arm were removed and the rest reweighted."""


@dataclass(frozen=True)
class Contrast:
    """Average treatment effect ``E(Y^(t) - Y^(s))`` between 1-based arms."""

    t: int = 2
    s: int = 1

    def __post_init__(self):
        if self.t == self.s:
            raise ConfigError("contrast needs two different arms")

    @classmethod
    def parse(cls, text: str) -> "Contrast":
        try:
            t, s = (int(v) for v in text.replace(" ", "").split("-"))
        except ValueError:
            raise ConfigError(f"cannot parse contrast {text!r}; expected e.g. '2-1'") from None
        return cls(t, s)

    def check(self, k: int) -> "Contrast":
        if not (1 <= self.t <= k and 1 <= self.s <= k):
            raise ConfigError(f"contrast {self} refers to an arm outside 1..{k}")
        return self

    def reversed(self) -> "Contrast":
        return Contrast(self.s, self.t)

    def __str__(self):
        return f"{self.t}-{self.s}"


ContrastSpec = Contrast


@dataclass(frozen=True)
class StratumCoefs:
    """Per-cell slopes ``beta_t[z, t-1]`` and pooled per-stratum slopes ``beta[z]``.

    Entries for cells that were not requested are nan.
    """

    strata: tuple
    beta_t_z: np.ndarray  # (nz, k, p)
    beta_z: np.ndarray  # (nz, p)


def as_summary(data) -> TrialSummary:
    if isinstance(data, TrialSummary):
        return data
    if isinstance(data, TrialDataset):
        return data.summary
    raise TypeError(f"expected TrialDataset or TrialSummary, got {type(data).__name__}")


def ols_slope(gram, xy) -> np.ndarray:
    """Solve ``gram @ b = xy`` for a symmetric PSD ``gram``.

    Raises :class:`SingularGram` when the reciprocal condition number of
    ``gram`` is below ``1e-12``.
    """
    gram = np.atleast_2d(np.asarray(gram, dtype=float))
    xy = np.atleast_1d(np.asarray(xy, dtype=float))
    p = gram.shape[0]
    if p == 0:
        return np.zeros(0)
    if p == 1:
        g = gram[0, 0]
        if not g > 0:
            raise SingularGram("covariate has zero spread within a cell")
        return xy / g
    eig = np.linalg.eigvalsh(gram)
    if not eig[-1] > 0 or eig[0] / eig[-1] < RCOND_MIN:
        raise SingularGram(f"cell covariate matrix is singular (eigenvalues {eig})")
    return scipy.linalg.solve(gram, xy, assume_a="sym")


def _used_strata(s: TrialSummary, contrast: Contrast, drop_incomplete: bool) -> np.ndarray:
    """Boolean mask of strata entering the estimator; raises EmptyCell otherwise."""
    contrast.check(s.k)
    t, u = contrast.t - 1, contrast.s - 1
    ok = (s.n_tz[:, t] > 0) & (s.n_tz[:, u] > 0)
    if ok.all():
        return ok
    bad = [
        (arm + 1, s.strata[i])
        for i in np.flatnonzero(~ok)
        for arm in (t, u)
        if s.n_tz[i, arm] == 0
    ]
    if not drop_incomplete:
        raise EmptyCell(bad)
    if not ok.any():
        raise EmptyCell(bad, "no stratum contains both contrasted arms")
    warnings.warn(
        f"dropped {int((~ok).sum())} stratum/strata missing arm {contrast.t} or {contrast.s}",
        DroppedStrataWarning,
        stacklevel=3,
    )
    return ok


def stratum_weights(data, contrast: Contrast = Contrast(), drop_incomplete_strata: bool = False):
    """``(mask, w)``: strata used and their weights ``n(z) / n`` (renormalized after drops)."""
    s = as_summary(data)
    mask = _used_strata(s, contrast, drop_incomplete_strata)
    w = np.where(mask, s.n_z, 0.0)
    return mask, w / w.sum()


def theta_hat(data, contrast: Contrast = Contrast(), drop_incomplete_strata: bool = False) -> float:
    """Stratified difference of means ``sum_z n(z)/n (ybar_t(z) - ybar_s(z))``."""
    s = as_summary(data)
    mask, w = stratum_weights(s, contrast, drop_incomplete_strata)
    diff = s.ybar[mask, contrast.t - 1] - s.ybar[mask, contrast.s - 1]
    return float(w[mask] @ diff)


def _check_cells(s: TrialSummary, mask, arms, floor: int, what: str):
    for t in arms:
        low = mask & (s.n_tz[:, t - 1] < floor)
        if low.any():
            i = int(np.flatnonzero(low)[0])
            raise InsufficientCell(t, s.strata[i], int(s.n_tz[i, t - 1]), floor, what)
        small = mask & (s.n_tz[:, t - 1] < RECOMMENDED_CELL_SIZE)
        if small.any():
            i = int(np.flatnonzero(small)[0])
            warnings.warn(
                f"arm {t} / stratum {s.strata[i]} has {int(s.n_tz[i, t - 1])} subjects "
                f"(fewer than {RECOMMENDED_CELL_SIZE})",
                SmallCellWarning,
                stacklevel=4,
            )


def cell_betas(data, arms, mask=None) -> np.ndarray:
    """Within-(t, z) least squares slopes for the given arms; other cells are nan."""
    s = as_summary(data)
    nz, k, p = len(s.strata), s.k, s.p
    if mask is None:
        mask = np.ones(nz, dtype=bool)
    _check_cells(s, mask, arms, s.p + 2, "a within-cell slope")
    out = np.full((nz, k, p), np.nan)
    for i in np.flatnonzero(mask):
        for t in arms:
            out[i, t - 1] = ols_slope(s.gram[i, t - 1], s.xy[i, t - 1])
    return out


def pooled_betas(data, mask=None) -> np.ndarray:
    """Per-stratum slope from normal equations pooled over all arms with arm-wise centring."""
    s = as_summary(data)
    nz, p = len(s.strata), s.p
    if mask is None:
        mask = np.ones(nz, dtype=bool)
    floor = p + s.k + 1
    out = np.full((nz, p), np.nan)
    for i in np.flatnonzero(mask):
        if s.n_z[i] < floor:
            raise InsufficientCell(None, s.strata[i], int(s.n_z[i]), floor, "a pooled slope")
        out[i] = ols_slope(s.gram[i].sum(axis=0), s.xy[i].sum(axis=0))
    return out


def beta_hats(data) -> StratumCoefs:
    """Per-arm and pooled slopes for every stratum and arm present in the data."""
    s = as_summary(data)
    return StratumCoefs(
        strata=s.strata,
        beta_t_z=cell_betas(s, range(1, s.k + 1)),
        beta_z=pooled_betas(s),
    )


def _adjusted_diff(s: TrialSummary, contrast: Contrast, mask, beta_t, beta_s) -> np.ndarray:
    t, u = contrast.t - 1, contrast.s - 1
    shift_t = np.einsum("zp,zp->z", s.xbar[:, t] - s.xbar_z, np.nan_to_num(beta_t))
    shift_s = np.einsum("zp,zp->z", s.xbar[:, u] - s.xbar_z, np.nan_to_num(beta_s))
    return ((s.ybar[:, t] - shift_t) - (s.ybar[:, u] - shift_s))[mask]


def theta_hat_A(data, contrast: Contrast = Contrast(), drop_incomplete_strata: bool = False,
                betas: np.ndarray | None = None) -> float:
    """Adjusted estimator with separate slopes ``beta_t(z)`` for each contrasted arm."""
    s = as_summary(data)
    mask, w = stratum_weights(s, contrast, drop_incomplete_strata)
    if s.p == 0:
        return theta_hat(s, contrast, drop_incomplete_strata)
    if betas is None:
        betas = cell_betas(s, (contrast.t, contrast.s), mask)
    diff = _adjusted_diff(s, contrast, mask, betas[:, contrast.t - 1], betas[:, contrast.s - 1])
    return float(w[mask] @ diff)


def theta_hat_B(data, contrast: Contrast = Contrast(), drop_incomplete_strata: bool = False,
                beta: np.ndarray | None = None) -> float:
    """Adjusted estimator with the pooled per-stratum slope ``beta(z)`` in both arms."""
    s = as_summary(data)
    mask, w = stratum_weights(s, contrast, drop_incomplete_strata)
    if s.p == 0:
        return theta_hat(s, contrast, drop_incomplete_strata)
    if beta is None:
        beta = pooled_betas(s, mask)
    diff = _adjusted_diff(s, contrast, mask, beta, beta)
    return float(w[mask] @ diff)


ESTIMATORS = {"U": theta_hat, "A": theta_hat_A, "B": theta_hat_B}
