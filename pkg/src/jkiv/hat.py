"""Zero-diagonal hat matrices and balanced-design diagnostics.

A hat matrix maps partialled-out endogenous observations to leave-one-out
first-stage fitted values.  Every constructor here returns a matrix with
an exactly zero diagonal (the jackknife form).  The recommended choice is
the ridge hat with its penalty set so that the effective degrees of
freedom do not exceed a fraction of the sample size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CollinearityError


@dataclass(frozen=True)
class HatMatrix:
    """An n-by-n weight matrix with zero diagonal.

    Attributes
    ----------
    H : ndarray of shape (n, n)
        The weights; ``H[i, i] == 0`` for all i.
    kind : {"ridge", "projection", "custom"}
        Construction provenance.
    ridge_penalty : float or None
        The ridge penalty used (present iff ``kind == "ridge"``).
    dof : float
        Effective degrees of freedom of the smoother at construction
        (trace before the diagonal was deleted).
    removed_diag : ndarray or None
        Absolute diagonal mass removed by control partialling, recorded
        for diagnostics; None unless the matrix went through
        :func:`partial_out_hat`.
    """

    H: np.ndarray
    kind: str
    ridge_penalty: float | None = None
    dof: float = 0.0
    removed_diag: np.ndarray | None = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError(f"hat matrix must be square, got shape {H.shape}")
        if not np.all(np.isfinite(H)):
            raise ValueError("hat matrix contains non-finite entries")
        if H.size and np.max(np.abs(np.diag(H))) != 0.0:
            raise ValueError("hat matrix diagonal is not exactly zero")
        H = np.ascontiguousarray(H)
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @property
    def n(self) -> int:
        return self.H.shape[0]


def _masked_squared_svals(Z: np.ndarray) -> np.ndarray:
    """Squared singular values of Z with numerically-zero ones removed."""
    svals = np.linalg.svd(np.atleast_2d(Z), compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return np.empty(0)
    tol = svals[0] * max(Z.shape) * np.finfo(np.float64).eps
    return svals[svals > tol] ** 2


def _dof_at(s2: np.ndarray, lam: float) -> float:
    return float(np.sum(s2 / (s2 + lam))) if s2.size else 0.0


def effective_dof(Z, lam: float) -> float:
    """Effective degrees of freedom of the ridge smoother on Z.

    Computed from singular values as ``sum_k s_k^2 / (s_k^2 + lam)``;
    zero singular values contribute nothing, so a rank-deficient Z at
    ``lam = 0`` returns its numerical rank.
    """
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    return _dof_at(_masked_squared_svals(Z), lam)


def _zero_diag_symmetric(H: np.ndarray) -> np.ndarray:
    H = 0.5 * (H + H.T)
    np.fill_diagonal(H, 0.0)
    return H


def ridge_hat(Z, dof_fraction: float = 0.2) -> HatMatrix:
    """Deleted-diagonal ridge hat matrix with an effective-dof cap.

    The penalty is the smallest ``lam >= 0`` at which the effective
    degrees of freedom of ``Z (Z'Z + lam I)^{-1} Z'`` drop to
    ``dof_fraction * n``.  It is located by doubling an upper bracket
    from the largest squared singular value and bisecting; bisection is
    exact up to tolerance because the dof is strictly decreasing in lam.
    """
    if not 0 < dof_fraction <= 1:
        raise ValueError(f"dof_fraction must be in (0, 1], got {dof_fraction}")
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    n = Z.shape[0]
    U, svals, _ = np.linalg.svd(Z, full_matrices=False)
    if svals.size == 0 or svals[0] == 0.0:
        raise ValueError("instrument matrix is identically zero")
    tol = svals[0] * max(Z.shape) * np.finfo(np.float64).eps
    keep = svals > tol
    s2 = svals[keep] ** 2
    target = dof_fraction * n

    if _dof_at(s2, 0.0) <= target:
        lam_star = 0.0
        weights = np.ones(s2.size)
        U = U[:, keep]
    else:
        lo, hi = 0.0, float(s2[0])
        while _dof_at(s2, hi) > target:
            hi *= 2.0
        # dof-gap rule plus a relative width bound so lam_star is a tight infimum
        while (_dof_at(s2, lo) - _dof_at(s2, hi)) >= 1e-6 or (hi - lo) > 1e-9 * max(hi, 1.0):
            mid = 0.5 * (lo + hi)
            if _dof_at(s2, mid) > target:
                lo = mid
            else:
                hi = mid
        lam_star = hi
        weights = s2 / (s2 + lam_star)
        U = U[:, keep]
    H = _zero_diag_symmetric((U * weights) @ U.T)
    return HatMatrix(H=H, kind="ridge", ridge_penalty=lam_star, dof=_dof_at(s2, lam_star))


def projection_hat_deleted(Z) -> HatMatrix:
    """Deleted-diagonal projection onto the column span of Z."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    U, svals, _ = np.linalg.svd(Z, full_matrices=False)
    if svals.size == 0 or svals[0] == 0.0:
        raise ValueError("instrument matrix is identically zero")
    tol = svals[0] * max(Z.shape) * np.finfo(np.float64).eps
    U = U[:, svals > tol]
    H = _zero_diag_symmetric(U @ U.T)
    return HatMatrix(H=H, kind="projection", dof=float(U.shape[1]))


def custom_hat(H_raw) -> HatMatrix:
    """Wrap a user-supplied square matrix, deleting its diagonal."""
    H = np.asarray(H_raw, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"custom hat matrix must be square, got shape {H.shape}")
    dof = float(np.trace(H))
    H = H.copy()
    np.fill_diagonal(H, 0.0)
    return HatMatrix(H=H, kind="custom", dof=dof)


def partial_out_hat(hat: HatMatrix, Z1) -> HatMatrix:
    """Conjugate a hat matrix by the annihilator of the controls.

    Returns ``M2 H M2`` with the diagonal forced back to zero, where
    ``M2`` projects onto the orthocomplement of the control columns.  The
    removed diagonal magnitudes are kept on the result as a diagnostic
    (they are small, on the order of the number of controls).
    """
    Z1 = np.atleast_2d(np.asarray(Z1, dtype=np.float64))
    if Z1.shape[1] == 0:
        return hat
    if Z1.shape[0] != hat.n:
        raise ValueError(
            f"controls have {Z1.shape[0]} rows but hat matrix is {hat.n}x{hat.n}"
        )
    svals = np.linalg.svd(Z1, compute_uv=False)
    if svals[-1] <= 1e-10 * svals[0]:
        raise CollinearityError("control block is rank deficient")
    Q, _ = np.linalg.qr(Z1)
    T = hat.H - Q @ (Q.T @ hat.H)
    T = T - (T @ Q) @ Q.T
    removed = np.abs(np.diag(T)).copy()
    T = T.copy()
    np.fill_diagonal(T, 0.0)
    return HatMatrix(
        H=T,
        kind=hat.kind,
        ridge_penalty=hat.ridge_penalty,
        dof=hat.dof,
        removed_diag=removed,
    )


@dataclass(frozen=True)
class DesignDiagnostics:
    """Checks that the hat matrix spreads weight across observations.

    ``leverage_ratio`` compares the q-th quantile of the squared row
    norms of H to their maximum; ``fitted_ratio`` does the same for the
    squared leave-one-out fits (first endogenous column, with the minimum
    across columns also reported).  ``row_col_ratio`` is the largest
    squared column norm over the largest squared row norm, and
    ``eig_ratio`` is the share of the spectrum of HH' (squared) carried
    by eigenvalues after the first.  Each check carries a pass/warn flag.
    """

    leverage_ratio: float
    fitted_ratio: float
    fitted_ratio_min: float
    row_col_ratio: float
    eig_ratio: float
    q: float
    flags: dict

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "leverage_ratio": self.leverage_ratio,
            "fitted_ratio": self.fitted_ratio,
            "fitted_ratio_min": self.fitted_ratio_min,
            "row_col_ratio": self.row_col_ratio,
            "eig_ratio": self.eig_ratio,
            "flags": dict(self.flags),
        }


def _quantile_over_max(values: np.ndarray, q: float) -> float:
    top = float(np.max(values))
    if top <= 0.0:
        return 0.0
    return float(np.percentile(values, q)) / top


def design_diagnostics(hat: HatMatrix, r_hat, q: float = 25.0) -> DesignDiagnostics:
    """Balanced-design diagnostics for a hat matrix and first-stage inputs.

    Parameters
    ----------
    hat : HatMatrix
    r_hat : ndarray of shape (n, d_x) or (n,)
        Partialled-out endogenous variables.
    q : float in (0, 100)
        Quantile compared against the maximum in the ratio checks.
    """
    if not 0 < q < 100:
        raise ValueError(f"q must be in (0, 100), got {q}")
    H = hat.H
    R = np.asarray(r_hat, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    row_sq = np.sum(H**2, axis=1)
    col_sq = np.sum(H**2, axis=0)
    leverage_ratio = _quantile_over_max(row_sq, q)
    fits_sq = (H @ R) ** 2
    per_col = [_quantile_over_max(fits_sq[:, j], q) for j in range(R.shape[1])]
    fitted_ratio = per_col[0]
    fitted_ratio_min = min(per_col)
    max_row = float(np.max(row_sq))
    row_col_ratio = float(np.max(col_sq)) / max_row if max_row > 0 else 0.0
    svals = np.linalg.svd(H, compute_uv=False)
    fourth = svals**4
    total = float(np.sum(fourth))
    eig_ratio = float(np.sum(fourth[1:])) / total if total > 0 else 0.0
    flags = {
        "leverage": "warn" if leverage_ratio < 0.01 else "pass",
        "fitted": "warn" if fitted_ratio < 0.01 else "pass",
        "eigenvalues": "warn" if eig_ratio < 0.01 else "pass",
        "row_col": "warn" if row_col_ratio > 100 else "pass",
    }
    return DesignDiagnostics(
        leverage_ratio=leverage_ratio,
        fitted_ratio=fitted_ratio,
        fitted_ratio_min=fitted_ratio_min,
        row_col_ratio=row_col_ratio,
        eig_ratio=eig_ratio,
        q=q,
        flags=flags,
    )
