"""Estimation of the conditional-slope nuisance parameter.

Under the null, each endogenous variable satisfies
``x_l = rho_l(z) * eps(beta0) + r_l`` with ``r_l`` uncorrelated with the
null residual.  ``rho_l`` is recovered by an l1-penalized regression of
``x_l`` on ``eps(beta0) * b(z)`` for a user-chosen basis ``b``, with the
penalty picked by K-fold cross-validation, optionally followed by an
unpenalized refit on the selected support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._solver import cd_gram, cd_solve
from .data import PartialledData
from .streams import child_rng, child_seed


class ConvergenceError(RuntimeError):
    """Coordinate descent failed to meet its optimality certificate."""

    def __init__(self, message: str, kkt_violation: float):
        super().__init__(message)
        self.kkt_violation = kkt_violation


@dataclass(frozen=True)
class BasisSpec:
    """Rule producing the regression basis b(z_i) from the instruments.

    kind
        "instruments_plus_intercept" (default), "instruments_only", or
        "custom" with a precomputed (n, d_b) matrix in ``values``.
    """

    kind: str = "instruments_plus_intercept"
    values: np.ndarray | None = None

    def build(self, Z: np.ndarray) -> np.ndarray:
        if self.kind == "instruments_plus_intercept":
            return np.column_stack([np.ones(Z.shape[0]), Z])
        if self.kind == "instruments_only":
            if Z.shape[1] == 0:
                raise ValueError("no instruments available for the basis")
            return np.asarray(Z, dtype=np.float64)
        if self.kind == "custom":
            if self.values is None:
                raise ValueError("custom basis requires values")
            B = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
            if B.shape[0] != Z.shape[0]:
                raise ValueError(
                    f"custom basis has {B.shape[0]} rows, expected {Z.shape[0]}"
                )
            if B.shape[1] < 1:
                raise ValueError("basis must have at least one column")
            if not np.all(np.isfinite(B)):
                raise ValueError("custom basis contains non-finite values")
            return B
        raise ValueError(f"unknown basis kind '{self.kind}'")


@dataclass(frozen=True)
class RhoModel:
    """Fitted conditional slopes and the partialled-out endogenous block.

    Attributes
    ----------
    phi : ndarray of shape (d_b, d_x) or None
        Basis coefficients per endogenous index (None when the slopes
        were supplied directly).
    support : tuple of tuples
        Indices of nonzero coefficients per endogenous index.
    lam : tuple of float
        Penalty used per endogenous index (NaN when supplied directly).
    method : {"lasso", "post_lasso", "known"}
    rho_values : ndarray of shape (n, d_x)
        Fitted slopes rho_l(z_i).
    r_hat : ndarray of shape (n, d_x)
        x_l - rho_l(z) * eps(beta0).
    """

    phi: np.ndarray | None
    support: tuple
    lam: tuple
    method: str
    rho_values: np.ndarray
    r_hat: np.ndarray

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "lambda": [None if np.isnan(l) else float(l) for l in self.lam],
            "support": [list(map(int, s)) for s in self.support],
            "coefficients": None if self.phi is None else self.phi.tolist(),
        }


def null_residuals(y, X, beta0) -> np.ndarray:
    """Residuals y - X beta0 implied by the hypothesized coefficient."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    b = np.atleast_1d(np.asarray(beta0, dtype=np.float64))
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if b.shape[0] != X.shape[1]:
        raise ValueError(f"beta0 has length {b.shape[0]}, expected {X.shape[1]}")
    return y - X @ b


def _standardize(design: np.ndarray):
    s = np.sqrt(np.mean(design**2, axis=0))
    skip = s == 0.0
    s_safe = np.where(skip, 1.0, s)
    C = np.asfortranarray(design / s_safe)
    return C, s_safe, skip


def lasso_fit(
    response,
    design,
    lam: float,
    *,
    tol: float = 1e-7,
    kkt_tol: float = 1e-6,
    max_sweeps: int = 100_000,
    warm_start: np.ndarray | None = None,
    debug: bool = False,
) -> np.ndarray:
    """Minimize ``mean((response - design @ phi)^2) + lam * ||phi||_1``.

    Cyclic coordinate descent on columns standardized to unit empirical
    second moment, mapped back to the original scale.  At return the KKT
    conditions hold: the gradient is within ``kkt_tol`` of ``lam`` in
    absolute value on zero coordinates and of ``-lam * sign(phi_j)`` on
    active ones.

    Raises
    ------
    ConvergenceError
        If the certificate is not met within ``max_sweeps`` sweeps.
    """
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    y = np.ascontiguousarray(response, dtype=np.float64).reshape(-1)
    X = np.atleast_2d(np.asarray(design, dtype=np.float64))
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"design has {X.shape[0]} rows but response has {y.shape[0]}")
    scale = float(np.sqrt(np.mean(y**2)))
    if scale == 0.0 or lam >= lambda_max(y, X):
        # at or above the zero-solution boundary, decided by the same
        # arithmetic as lambda_max so the tie never activates a coordinate
        return np.zeros(X.shape[1])
    C, s, skip = _standardize(X)
    psi = np.zeros(X.shape[1])
    if warm_start is not None:
        psi = np.asarray(warm_start, dtype=np.float64) * s
        psi[skip] = 0.0
    coef_tol = tol * scale

    if debug:
        objective = lambda p: float(
            np.mean((y - X @ (p / s)) ** 2) + lam * np.sum(np.abs(p / s))
        )
        prev = objective(psi)
        total = 0
        while total < max_sweeps:
            used, kkt, done = cd_solve(C, y, psi, s, skip, lam, coef_tol, kkt_tol, 1)
            total += used
            cur = objective(psi)
            if cur > prev + 1e-12 * (1.0 + abs(prev)):
                raise RuntimeError(
                    f"objective increased across a sweep: {prev} -> {cur}"
                )
            prev = cur
            if done:
                break
        else:
            raise ConvergenceError(
                f"coordinate descent did not converge in {max_sweeps} sweeps "
                f"(KKT violation {kkt:.3e})",
                kkt,
            )
    else:
        _, kkt, done = cd_solve(C, y, psi, s, skip, lam, coef_tol, kkt_tol, max_sweeps)
        if not done:
            raise ConvergenceError(
                f"coordinate descent did not converge in {max_sweeps} sweeps "
                f"(KKT violation {kkt:.3e})",
                kkt,
            )
    phi = psi / s
    phi[skip] = 0.0
    return phi


def lambda_max(response, design) -> float:
    """Smallest penalty at which the l1 solution is identically zero."""
    y = np.asarray(response, dtype=np.float64).reshape(-1)
    X = np.atleast_2d(np.asarray(design, dtype=np.float64))
    return float(np.max(np.abs(2.0 * (X.T @ y) / y.shape[0]))) if X.size else 0.0


def _lambda_grid(lmax: float, n_points: int = 100) -> np.ndarray:
    return np.geomspace(lmax, 1e-4 * lmax, n_points)


def cross_validate_lambda(response, design, k_folds: int = 10, seed: int = 0) -> float:
    """Pick the penalty minimizing K-fold out-of-fold squared error.

    A 100-point log-spaced grid from ``lambda_max`` down to
    ``1e-4 * lambda_max`` is evaluated with warm starts along the path;
    folds come from a seeded random permutation.  Ties resolve to the
    larger penalty.  ``k_folds = n`` gives leave-one-out.
    """
    y = np.ascontiguousarray(response, dtype=np.float64).reshape(-1)
    X = np.atleast_2d(np.asarray(design, dtype=np.float64))
    n = y.shape[0]
    if not 2 <= k_folds <= n:
        raise ValueError(f"k_folds must be in [2, {n}], got {k_folds}")
    lmax = lambda_max(y, X)
    if lmax <= 0.0:
        return 1.0  # design orthogonal to response: any penalty gives the zero fit
    grid = _lambda_grid(lmax)
    perm = child_rng(seed, "cv-folds").permutation(n)
    folds = np.array_split(perm, k_folds)
    sq_err = np.zeros(grid.size)
    for heldout in folds:
        mask = np.ones(n, dtype=bool)
        mask[heldout] = False
        C, s, skip = _standardize(X[mask])
        y_tr = np.ascontiguousarray(y[mask])
        scale = float(np.sqrt(np.mean(y_tr**2)))
        n_tr = y_tr.shape[0]
        # warm-started path fits with cached inner products; out-of-fold
        # errors need neither the final fit's certificate nor its 1e-7
        # polish to rank penalties on the grid
        G = np.ascontiguousarray(C.T @ C)
        psi = np.zeros(X.shape[1])
        grad = (C.T @ y_tr) / n_tr
        coef_tol = 1e-5 * max(scale, 1e-300)
        X_out = X[heldout]
        y_out = y[heldout]
        for g, lam in enumerate(grid):
            cd_gram(G, psi, grad, s, skip, lam, n_tr, coef_tol, 10_000)
            phi = psi / s
            phi[skip] = 0.0
            resid = y_out - X_out @ phi
            sq_err[g] += float(resid @ resid)
    mse = sq_err / n
    best = 0
    for g in range(1, grid.size):
        if mse[g] < mse[best]:
            best = g
    return float(grid[best])


def post_lasso_refit(response, design, support) -> np.ndarray:
    """Unpenalized least-squares refit on the selected columns.

    Returns zeros off the support; an empty support gives the zero
    vector.  Collinear support columns are handled by the pseudo-inverse.
    """
    y = np.asarray(response, dtype=np.float64).reshape(-1)
    X = np.atleast_2d(np.asarray(design, dtype=np.float64))
    support = sorted(int(j) for j in support)
    if len(support) >= y.shape[0]:
        raise ValueError(
            f"support size {len(support)} must be smaller than n={y.shape[0]}"
        )
    phi = np.zeros(X.shape[1])
    if not support:
        return phi
    coef, *_ = np.linalg.lstsq(X[:, support], y, rcond=None)
    phi[support] = coef
    return phi


def estimate_rho(
    data: PartialledData,
    beta0,
    basis: BasisSpec | None = None,
    method: str = "lasso",
    *,
    lam: float | None = None,
    k_folds: int = 10,
    seed: int = 0,
    rho_known=None,
) -> RhoModel:
    """Fit the conditional slopes and form the partialled endogenous block.

    For each endogenous index the design has rows ``eps_i(beta0) * b(z_i)``
    and the response is the endogenous column; the penalty comes from
    :func:`cross_validate_lambda` unless ``lam`` fixes it.  With
    ``method="known"`` the caller supplies the slope values directly
    (the testing oracle) and no estimation runs.
    """
    basis = basis or BasisSpec()
    eps = null_residuals(data.y, data.X, beta0)
    n, d_x = data.X.shape

    if method == "known":
        rho_values = np.asarray(rho_known, dtype=np.float64)
        if rho_values.ndim == 1:
            rho_values = rho_values[:, None]
        if rho_values.shape != (n, d_x):
            raise ValueError(
                f"known rho values have shape {rho_values.shape}, expected {(n, d_x)}"
            )
        r_hat = data.X - rho_values * eps[:, None]
        return RhoModel(
            phi=None,
            support=tuple(() for _ in range(d_x)),
            lam=tuple(float("nan") for _ in range(d_x)),
            method="known",
            rho_values=rho_values.copy(),
            r_hat=r_hat,
        )
    if method not in ("lasso", "post_lasso"):
        raise ValueError(f"unknown rho method '{method}'")

    B = basis.build(data.Z)
    design = eps[:, None] * B
    d_b = B.shape[1]
    phi = np.zeros((d_b, d_x))
    support = []
    lams = []
    for ell in range(d_x):
        resp = data.X[:, ell]
        lam_ell = (
            float(lam)
            if lam is not None
            else cross_validate_lambda(resp, design, k_folds, child_seed(seed, "cv", ell))
        )
        coef = lasso_fit(resp, design, lam_ell)
        sel = tuple(int(j) for j in np.nonzero(coef)[0])
        if method == "post_lasso":
            coef = post_lasso_refit(resp, design, sel)
            sel = tuple(int(j) for j in np.nonzero(coef)[0])
        phi[:, ell] = coef
        support.append(sel)
        lams.append(lam_ell)
    rho_values = B @ phi
    r_hat = data.X - rho_values * eps[:, None]
    return RhoModel(
        phi=phi,
        support=tuple(support),
        lam=tuple(lams),
        method=method,
        rho_values=rho_values,
        r_hat=r_hat,
    )
