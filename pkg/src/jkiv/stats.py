"""Test statistics: jackknife K, sup-score, conditioning, Anderson-Rubin.

All statistics are pure functions of their inputs and safe to evaluate in
parallel across bootstrap draws or Monte Carlo replications.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .hat import HatMatrix


@dataclass(frozen=True)
class FirstStage:
    """Leave-one-out first-stage estimates.

    ``Pi_hat[i, l] = sum_{j != i} h_ij r_hat[j, l]`` (the zero diagonal of
    the hat matrix makes this a plain matrix product) and
    ``Pi_eps[i, l] = eps_i * Pi_hat[i, l]``.
    """

    Pi_hat: np.ndarray
    Pi_eps: np.ndarray


@dataclass(frozen=True)
class StatisticValue:
    """A nonnegative statistic with a degeneracy flag and diagnostics."""

    value: float
    degenerate: bool = False
    extras: dict = field(default_factory=dict)


def first_stage(hat: HatMatrix, r_hat, eps) -> FirstStage:
    """Form jackknife-linear first-stage estimates from a hat matrix."""
    R = np.asarray(r_hat, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    e = np.asarray(eps, dtype=np.float64).reshape(-1)
    if R.shape[0] != hat.n or e.shape[0] != hat.n:
        raise ValueError(
            f"dimension mismatch: hat is {hat.n}x{hat.n}, r_hat has {R.shape[0]} rows, "
            f"eps has {e.shape[0]}"
        )
    Pi_hat = hat.H @ R
    return FirstStage(Pi_hat=Pi_hat, Pi_eps=e[:, None] * Pi_hat)


def jk_statistic(eps, fs: FirstStage, sing_tol: float = 1e-10) -> StatisticValue:
    """Jackknife K statistic.

    ``eps' Pi_hat (Pi_eps' Pi_eps)^{-1} Pi_hat' eps`` via a symmetric
    solve.  If the smallest eigenvalue of the denominator matrix is within
    ``sing_tol`` (relative) of singular the statistic is flagged
    degenerate with value zero.  For a single endogenous variable this
    reduces to ``(sum_i eps_i Pi_i)^2 / sum_i eps_i^2 Pi_i^2``.
    """
    e = np.asarray(eps, dtype=np.float64).reshape(-1)
    D = fs.Pi_eps.T @ fs.Pi_eps
    eigs = np.linalg.eigvalsh(D)
    lam_min, lam_max = float(eigs[0]), float(eigs[-1])
    if lam_min <= sing_tol * max(lam_max, 1.0):
        return StatisticValue(
            value=0.0, degenerate=True, extras={"lambda_min": lam_min}
        )
    g = fs.Pi_hat.T @ e
    value = float(g @ scipy.linalg.solve(D, g, assume_a="pos"))
    return StatisticValue(value=max(value, 0.0), extras={"lambda_min": lam_min})


def sup_score(eps, Z) -> StatisticValue:
    """Sup-score statistic: largest self-normalized instrument score.

    ``max_l |sum_i eps_i z_li| / sqrt(sum_i z_li^2)``.
    """
    e = np.asarray(eps, dtype=np.float64).reshape(-1)
    Zm = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    norms = np.sqrt(np.sum(Zm**2, axis=0))
    if np.any(norms == 0.0):
        bad = np.nonzero(norms == 0.0)[0]
        raise ValueError(f"instrument columns {bad.tolist()} are identically zero")
    value = float(np.max(np.abs(e @ Zm) / norms))
    return StatisticValue(value=value)


def conditioning_statistic(hat: HatMatrix, r_hat) -> StatisticValue:
    """Normalized leave-one-out first-stage detector.

    For one endogenous variable,
    ``max_i |sum_{j != i} h_ij r_j| / sqrt(sum_{j != i} h_ij^2)``;
    with several, the minimum over endogenous indices of the per-column
    maximum.  Rows of the hat matrix with zero norm are excluded from the
    maximum and reported in ``extras``.
    """
    R = np.asarray(r_hat, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    w = np.sqrt(np.sum(hat.H**2, axis=1))
    valid = w > 0.0
    if not np.any(valid):
        raise ValueError("every row of the hat matrix has zero norm")
    fits = hat.H @ R
    per_col = np.max(np.abs(fits[valid]) / w[valid, None], axis=0)
    excluded = np.nonzero(~valid)[0]
    return StatisticValue(
        value=float(np.min(per_col)),
        extras={"excluded_rows": excluded.tolist(), "per_column": per_col.tolist()},
    )


def anderson_rubin(eps, Z) -> StatisticValue:
    """Classical Anderson-Rubin statistic in F form.

    ``(n - d_z)/d_z * (eps' P_Z eps) / (eps' M_Z eps)``; compare to an
    F(d_z, n - d_z) critical value.
    """
    e = np.asarray(eps, dtype=np.float64).reshape(-1)
    Zm = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    n, d_z = Zm.shape
    if d_z >= n:
        raise ValueError(f"Anderson-Rubin needs d_z < n, got d_z={d_z}, n={n}")
    svals = np.linalg.svd(Zm, compute_uv=False)
    if svals[-1] <= 1e-10 * svals[0]:
        raise ValueError("instrument matrix is rank deficient; prune collinear columns")
    Q, _ = np.linalg.qr(Zm)
    proj = Q.T @ e
    num = float(proj @ proj)
    denom = float(e @ e) - num
    if denom <= 0.0:
        raise ValueError("residual variation is zero: eps lies in the instrument span")
    value = (n - d_z) / d_z * num / denom
    return StatisticValue(value=max(value, 0.0))
