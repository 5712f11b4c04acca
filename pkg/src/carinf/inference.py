"""Variance estimators, normal-theory intervals and the efficiency-gap formulas."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .estimators import (
    Contrast,
    as_summary,
    cell_betas,
    pooled_betas,
    stratum_weights,
    theta_hat,
    theta_hat_A,
    theta_hat_B,
    _check_cells,
)
from .errors import ConfigError

Z_975 = 1.959963984540054  # standard normal 0.975 quantile


@dataclass(frozen=True)
class VarianceComponents:
    """``sig2_main`` is the U, A or B term; ``sig2_V`` is clamped at zero."""

    sig2_main: float
    sig2_V: float
    n: int
    sig2_V_raw: float = 0.0

    @property
    def clamped(self) -> bool:
        return self.sig2_V_raw < 0

    @property
    def se(self) -> float:
        return float(np.sqrt((self.sig2_main + self.sig2_V) / self.n))


@dataclass(frozen=True)
class InferenceReport:
    estimator: str
    contrast: Contrast
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    alpha: float
    components: VarianceComponents | None = None

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def _residual_s2(s, arm: int, beta: np.ndarray) -> np.ndarray:
    """Per-stratum sample variance of ``y - x' beta`` within arm ``arm``."""
    i = arm - 1
    gram, xy, syy = s.gram[:, i], s.xy[:, i], s.syy[:, i]
    b = np.nan_to_num(beta)
    rss = syy - 2.0 * np.einsum("zp,zp->z", b, xy) + np.einsum("zp,zpq,zq->z", b, gram, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.maximum(rss, 0.0) / (s.n_tz[:, i] - 1)


def _need_two(s, contrast, mask):
    _check_cells(s, mask, (contrast.t, contrast.s), 2, "a sample variance")


def var_hat_U(data, contrast: Contrast = Contrast(), drop_incomplete_strata: bool = False) -> float:
    """``sum_z n(z)/n {S_t^2(z)/pi_t + S_s^2(z)/pi_s}``."""
    s = as_summary(data)
    mask, w = stratum_weights(s, contrast, drop_incomplete_strata)
    _need_two(s, contrast, mask)
    pi = s.alloc.pi_array
    s2 = s.s2
    per = s2[:, contrast.t - 1] / pi[contrast.t - 1] + s2[:, contrast.s - 1] / pi[contrast.s - 1]
    return float(w[mask] @ per[mask])


def var_hat_V(data, contrast: Contrast = Contrast(), theta_hat_value: float | None = None,
              drop_incomplete_strata: bool = False, clamp: bool = True) -> float:
    """Heterogeneity term ``sum_z n(z)/n (ybar_t(z) - ybar_s(z))^2 - theta_hat^2``."""
    s = as_summary(data)
    mask, w = stratum_weights(s, contrast, drop_incomplete_strata)
    if theta_hat_value is None:
        theta_hat_value = theta_hat(s, contrast, drop_incomplete_strata)
    diff = s.ybar[mask, contrast.t - 1] - s.ybar[mask, contrast.s - 1]
    raw = float(w[mask] @ diff**2 - theta_hat_value**2)
    return max(raw, 0.0) if clamp else raw


def var_hat_A(data, contrast: Contrast = Contrast(), drop_incomplete_strata: bool = False,
              betas: np.ndarray | None = None) -> float:
    """Residual variances around per-arm slopes plus ``(b_t - b_s)' Sigma(z) (b_t - b_s)``."""
    s = as_summary(data)
    mask, w = stratum_weights(s, contrast, drop_incomplete_strata)
    if s.p == 0:
        return var_hat_U(s, contrast, drop_incomplete_strata)
    t, u = contrast.t, contrast.s
    if betas is None:
        betas = cell_betas(s, (t, u), mask)
    pi = s.alloc.pi_array
    bt, bs = betas[:, t - 1], betas[:, u - 1]
    per = _residual_s2(s, t, bt) / pi[t - 1] + _residual_s2(s, u, bs) / pi[u - 1]
    d = np.nan_to_num(bt - bs)
    sigma = np.nan_to_num(s.pooled_covariance())
    per = per + np.einsum("zp,zpq,zq->z", d, sigma, d)
    return float(w[mask] @ per[mask])


def var_hat_B(data, contrast: Contrast = Contrast(), drop_incomplete_strata: bool = False,
              beta: np.ndarray | None = None) -> float:
    """Residual variances around the pooled per-stratum slope."""
    s = as_summary(data)
    mask, w = stratum_weights(s, contrast, drop_incomplete_strata)
    if s.p == 0:
        return var_hat_U(s, contrast, drop_incomplete_strata)
    _need_two(s, contrast, mask)
    if beta is None:
        beta = pooled_betas(s, mask)
    pi = s.alloc.pi_array
    t, u = contrast.t, contrast.s
    per = _residual_s2(s, t, beta) / pi[t - 1] + _residual_s2(s, u, beta) / pi[u - 1]
    return float(w[mask] @ per[mask])


def make_report(estimate: float, components: VarianceComponents, alpha: float = 0.05,
                estimator: str = "U", contrast: Contrast = Contrast()) -> InferenceReport:
    """Normal-quantile CI ``estimate +/- z_{1-alpha/2} SE`` and two-sided p-value.

    For ``alpha = 0.05`` the multiplier is 1.959964.
    """
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    se = components.se
    mult = Z_975 if alpha == 0.05 else float(stats.norm.ppf(1 - alpha / 2))
    if se > 0:
        p_value = float(2 * stats.norm.sf(abs(estimate) / se))
    else:
        p_value = 1.0 if estimate == 0 else 0.0
    return InferenceReport(
        estimator=estimator,
        contrast=contrast,
        estimate=float(estimate),
        se=se,
        ci_low=float(estimate - mult * se),
        ci_high=float(estimate + mult * se),
        p_value=p_value,
        alpha=alpha,
        components=components,
    )


def infer(data, contrast: Contrast = Contrast(), estimators=("U", "B", "A"), alpha: float = 0.05,
          drop_incomplete_strata: bool = False) -> dict:
    """Estimate, SE, CI and p-value for each requested estimator tag.

    Returns ``{tag: InferenceReport}``. Errors from any estimator propagate.
    """
    s = as_summary(data)
    contrast.check(s.k)
    kw = dict(drop_incomplete_strata=drop_incomplete_strata)
    est_u = theta_hat(s, contrast, **kw)
    raw_v = var_hat_V(s, contrast, est_u, clamp=False, **kw)
    out = {}
    for tag in estimators:
        if tag == "U":
            est, main = est_u, var_hat_U(s, contrast, **kw)
        elif tag == "A":
            mask, _ = stratum_weights(s, contrast, drop_incomplete_strata)
            betas = cell_betas(s, (contrast.t, contrast.s), mask) if s.p else None
            est = theta_hat_A(s, contrast, betas=betas, **kw)
            main = var_hat_A(s, contrast, betas=betas, **kw)
        elif tag == "B":
            mask, _ = stratum_weights(s, contrast, drop_incomplete_strata)
            beta = pooled_betas(s, mask) if s.p else None
            est = theta_hat_B(s, contrast, beta=beta, **kw)
            main = var_hat_B(s, contrast, beta=beta, **kw)
        else:
            raise ConfigError(f"unknown estimator {tag!r}; expected U, A or B")
        comp = VarianceComponents(main, max(raw_v, 0.0), s.n, raw_v)
        out[tag] = make_report(est, comp, alpha, tag, contrast)
    return out


def theorem2_gaps(beta_t, beta_s, beta_pooled_limit, Sigma_z, weights, pi) -> tuple:
    """Population efficiency gaps ``(sigma2_U - sigma2_A, sigma2_B - sigma2_A)``.

    Parameters
    ----------
    beta_t, beta_s : (nz, p) slopes of the two contrasted arms per stratum.
    beta_pooled_limit : (nz, p) allocation-weighted slope ``sum_l pi_l beta_l(z)``.
    Sigma_z : (nz, p, p) covariance of X within each stratum.
    weights : (nz,) stratum probabilities.
    pi : ``(pi_t, pi_s)``.
    """
    bt = np.atleast_2d(np.asarray(beta_t, dtype=float))
    bs = np.atleast_2d(np.asarray(beta_s, dtype=float))
    bp = np.atleast_2d(np.asarray(beta_pooled_limit, dtype=float))
    sig = np.asarray(Sigma_z, dtype=float)
    if sig.ndim == 2:
        sig = sig[None]
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    pt, ps = float(pi[0]), float(pi[1])

    def quad(a):
        return np.einsum("zp,zpq,zq->z", a, sig, a)

    comb = ps * bt + pt * bs
    diff = quad(bt - bs)
    gap_u = w @ quad(comb) / (pt * ps * (pt + ps)) + (w @ diff) * (1.0 / (pt + ps) - 1.0)
    gap_b = w @ quad(bt - bp) / pt + w @ quad(bs - bp) / ps - w @ diff
    return float(gap_u), float(gap_b)
