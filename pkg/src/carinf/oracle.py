"""Population limiting variances of the three estimators for the simulation cases.

Because every conditional mean is a quadratic in ``X2`` for fixed ``X1``, all
population quantities in a stratum follow from the stratum probability and
``E(X2^j | Z = z)`` for j <= 4. :func:`theorem1_oracle` estimates those
moments by stratified, antithetic Monte Carlo; :func:`theorem1_exact` uses the
closed-form truncated-normal moments. Outcome noise enters only through its
known conditional variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AllocationSpec
from .dgp import DGPSpec, ZSpec
from .estimators import Contrast
from .rng import stream


@dataclass(frozen=True)
class OracleResult:
    sig2_U: float
    sig2_A: float
    sig2_B: float
    sig2_V: float
    theta: float
    strata: tuple
    pr: np.ndarray  # (nz,)
    beta: np.ndarray  # (nz, k) per-arm population slopes
    beta_pooled: np.ndarray  # (nz,) sum_t pi_t beta_t(z)
    sigma: np.ndarray  # (nz,) var(X | Z = z)
    cond_mean: np.ndarray  # (nz, k) E(Y^(t) | Z = z)

    def as_tuple(self) -> tuple:
        return self.sig2_U, self.sig2_A, self.sig2_B, self.sig2_V

    def sd(self, estimator: str, n: int) -> float:
        """Asymptotic SD of an estimator at sample size ``n``."""
        main = {"U": self.sig2_U, "A": self.sig2_A, "B": self.sig2_B}[estimator]
        return float(np.sqrt((main + self.sig2_V) / n))


def sigma2_from_moments(dgp: DGPSpec, strata, pr, moments, alloc: AllocationSpec,
                        contrast: Contrast = Contrast()) -> OracleResult:
    """Evaluate the limiting-variance expressions from per-stratum moments of ``X2``.

    ``moments[i]`` holds ``(M1, M2, M3, M4)`` for stratum ``strata[i]`` whose
    first code is the ``X1`` value.
    """
    contrast.check(dgp.k)
    pi = alloc.pi_array
    pr = np.asarray(pr, dtype=float)
    m = np.asarray(moments, dtype=float)
    x1 = np.array([z[0] for z in strata], dtype=float)
    m1, m2, m3, m4 = m.T
    var_x = m2 - m1**2
    cov_x_x2sq = m3 - m1 * m2
    var_x2sq = m4 - m2**2

    k = dgp.k
    nz = len(strata)
    cmean = np.empty((nz, k))
    beta = np.empty((nz, k))
    noise = np.empty((nz, k))
    for t, arm in enumerate(dgp.arms):
        cmean[:, t] = arm.a0 + arm.a1 * x1 + arm.a2 * m1 + arm.a3 * m2
        beta[:, t] = (arm.a2 * var_x + arm.a3 * cov_x_x2sq) / var_x
        noise[:, t] = arm.var(x1)
    beta_pooled = beta @ pi

    def resid_var(t, b):
        arm = dgp.arms[t]
        d = arm.a2 - b
        return d**2 * var_x + arm.a3**2 * var_x2sq + 2 * d * arm.a3 * cov_x_x2sq + noise[:, t]

    t, s = contrast.t - 1, contrast.s - 1
    zero = np.zeros(nz)
    sig_u = pr @ (resid_var(t, zero) / pi[t] + resid_var(s, zero) / pi[s])
    sig_a = pr @ (
        resid_var(t, beta[:, t]) / pi[t]
        + resid_var(s, beta[:, s]) / pi[s]
        + (beta[:, t] - beta[:, s]) ** 2 * var_x
    )
    sig_b = pr @ (resid_var(t, beta_pooled) / pi[t] + resid_var(s, beta_pooled) / pi[s])
    eff = cmean[:, t] - cmean[:, s]
    theta = float(pr @ eff)
    sig_v = float(pr @ eff**2 - theta**2)
    return OracleResult(
        sig2_U=float(sig_u), sig2_A=float(sig_a), sig2_B=float(sig_b), sig2_V=max(sig_v, 0.0),
        theta=theta, strata=tuple(strata), pr=pr, beta=beta, beta_pooled=beta_pooled,
        sigma=var_x, cond_mean=cmean,
    )


def theorem1_exact(dgp: DGPSpec, zspec: ZSpec, alloc: AllocationSpec,
                   contrast: Contrast = Contrast()) -> OracleResult:
    strata = zspec.strata()
    probs = zspec.probabilities()
    return sigma2_from_moments(
        dgp, strata, [probs[z] for z in strata], [zspec.moments(z) for z in strata], alloc, contrast
    )


def theorem1_oracle(dgp: DGPSpec, zspec: ZSpec, alloc: AllocationSpec,
                    contrast: Contrast = Contrast(), n_oracle: int = 10**7,
                    seed: int = 0, chunk: int = 10**6) -> OracleResult:
    """Monte Carlo estimate of the population variances from ``n_oracle`` covariate draws.

    Draws are split evenly between ``X1 = 0`` and ``X1 = 1`` and the ``X2``
    noise is used in antithetic pairs ``(e, -e)``.
    """
    strata = zspec.strata()
    index = {z: i for i, z in enumerate(strata)}
    nz = len(strata)
    power = np.zeros((nz, 5))
    cuts = np.asarray(zspec.cutpoints)
    gen = stream(seed, 0, 0x0AC1E)
    per_x1 = n_oracle // 2
    for x1 in (0, 1):
        left = per_x1
        while left > 0:
            half = min(chunk, left) // 2 or 1
            e = gen.standard_normal(half)
            x2 = (x1 - 0.5) + np.concatenate([e, -e])
            left -= 2 * half
            bins = np.searchsorted(cuts, x2, side="right") if cuts.size else np.zeros(x2.size, int)
            for b in np.unique(bins):
                sel = x2[bins == b]
                z = (x1,) if not cuts.size else (x1, int(b))
                pw = np.ones_like(sel)
                for j in range(5):
                    power[index[z], j] += pw.sum()
                    pw = pw * sel
    total = power[:, 0].sum()
    pr = power[:, 0] / total
    moments = power[:, 1:] / power[:, :1]
    return sigma2_from_moments(dgp, strata, pr, moments, alloc, contrast)
