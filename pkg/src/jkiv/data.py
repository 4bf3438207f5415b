"""Dataset ingestion, validation, collinearity pruning, and control partialling.

A dataset consists of an outcome ``y``, endogenous regressors ``X``,
instruments ``Z``, and optional included exogenous controls ``Z1``.  All
inference routines operate on :class:`PartialledData`, in which the
controls have been residualized out of every block by least squares.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Base class for dataset construction failures."""


class MissingColumnError(DataError):
    """A column named in the schema is absent from the file."""


class DuplicateOutcomeError(DataError):
    """More than one column was assigned the outcome role."""


class NonNumericCellError(DataError):
    """A cell could not be parsed as a number."""


class NonFiniteCellError(DataError):
    """A cell parsed to NaN or infinity."""


class CollinearityError(ValueError):
    """A matrix is rank deficient beyond what pruning can repair."""


_ROLES = ("outcome", "endogenous", "instrument", "control")


def _as_float_matrix(a, name: str, *, allow_empty_cols: bool = False) -> np.ndarray:
    out = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if out.ndim != 2:
        raise DataError(f"{name} must be a 2-d array, got ndim={out.ndim}")
    if out.shape[1] == 0 and not allow_empty_cols:
        raise DataError(f"{name} must have at least one column")
    return out


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class IVDataset:
    """Raw observations for a linear IV model.

    Parameters
    ----------
    y : ndarray of shape (n,)
        Outcomes.
    X : ndarray of shape (n, d_x)
        Endogenous regressors.
    Z : ndarray of shape (n, d_z)
        Instruments (excluded from the structural equation).
    Z1 : ndarray of shape (n, d_c), optional
        Included exogenous controls; defaults to no controls.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    Z1: np.ndarray | None = None
    y_name: str = "y"
    x_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()
    control_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        X = _as_float_matrix(self.X, "X")
        Z = _as_float_matrix(self.Z, "Z")
        Z1 = self.Z1
        if Z1 is None:
            Z1 = np.empty((y.shape[0], 0))
        Z1 = _as_float_matrix(Z1, "Z1", allow_empty_cols=True)
        n = y.shape[0]
        for name, block in (("X", X), ("Z", Z), ("Z1", Z1)):
            if block.shape[0] != n:
                raise DataError(
                    f"{name} has {block.shape[0]} rows but y has {n}"
                )
        if n < 2:
            raise DataError(f"need at least 2 observations, got n={n}")
        if n <= Z1.shape[1]:
            raise DataError(
                f"need n > number of controls, got n={n}, d_c={Z1.shape[1]}"
            )
        for name, block in (("y", y), ("X", X), ("Z", Z), ("Z1", Z1)):
            if not np.all(np.isfinite(block)):
                raise DataError(f"non-finite values in block '{name}'")
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "Z", _readonly(Z))
        object.__setattr__(self, "Z1", _readonly(Z1))
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{j}" for j in range(X.shape[1])))
        if not self.z_names:
            object.__setattr__(self, "z_names", tuple(f"z{j}" for j in range(Z.shape[1])))
        if not self.control_names:
            object.__setattr__(
                self, "control_names", tuple(f"c{j}" for j in range(Z1.shape[1]))
            )

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_z(self) -> int:
        return self.Z.shape[1]

    @property
    def d_c(self) -> int:
        return self.Z1.shape[1]


@dataclass(frozen=True)
class PartialledData:
    """Control-residualized blocks ready for testing.

    ``y``, ``X``, and ``Z`` are the residuals of the corresponding raw
    blocks after projecting out the controls.  When the source dataset has
    no controls the blocks are the raw arrays themselves.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    d_c: int
    source: IVDataset = field(repr=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_z(self) -> int:
        return self.Z.shape[1]


def load_csv(path, schema) -> IVDataset:
    """Read a comma-separated file into an :class:`IVDataset`.

    Parameters
    ----------
    path : str or path-like
        File with a header row; '.' decimal separator, no quoting.
    schema : mapping
        Maps each role in {"outcome", "endogenous", "instrument",
        "control"} to a column name or list of column names.  The outcome
        role must name exactly one column.

    Raises
    ------
    MissingColumnError, DuplicateOutcomeError, NonNumericCellError,
    NonFiniteCellError, DataError
        Each with the offending row/column identified.
    """
    roles: dict[str, list[str]] = {}
    for role, cols in schema.items():
        if role not in _ROLES:
            raise DataError(f"unknown role '{role}' in schema")
        if isinstance(cols, str):
            cols = [cols]
        roles[role] = list(cols)
    outcome = roles.get("outcome", [])
    if len(outcome) != 1:
        raise DuplicateOutcomeError(
            f"schema must assign exactly one outcome column, got {outcome}"
        )
    endog = roles.get("endogenous", [])
    instr = roles.get("instrument", [])
    controls = roles.get("control", [])
    if not endog:
        raise DataError("schema assigns no endogenous column")
    if not instr:
        raise DataError("schema assigns no instrument column")
    used = outcome + endog + instr + controls
    seen: set[str] = set()
    for c in used:
        if c in seen:
            raise DataError(f"column '{c}' assigned more than one role")
        seen.add(c)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        index: dict[str, int] = {}
        for j, h in enumerate(header):
            index.setdefault(h, j)
        for c in used:
            if c not in index:
                raise MissingColumnError(f"column '{c}' not found in {path}")
        raw_rows = [row for row in reader]

    if not raw_rows:
        raise DataError(f"{path}: no data rows")
    cols = {c: np.empty(len(raw_rows)) for c in used}
    for i, row in enumerate(raw_rows):
        for c in used:
            j = index[c]
            cell = row[j].strip() if j < len(row) else ""
            try:
                value = float(cell)
            except ValueError:
                raise NonNumericCellError(
                    f"row {i + 1}, column '{c}': cannot parse {cell!r}"
                ) from None
            if not np.isfinite(value):
                raise NonFiniteCellError(
                    f"row {i + 1}, column '{c}': non-finite value {cell!r}"
                )
            cols[c][i] = value

    stack = lambda names: (
        np.column_stack([cols[c] for c in names]) if names else np.empty((len(raw_rows), 0))
    )
    return IVDataset(
        y=cols[outcome[0]],
        X=stack(endog),
        Z=stack(instr),
        Z1=stack(controls),
        y_name=outcome[0],
        x_names=tuple(endog),
        z_names=tuple(instr),
        control_names=tuple(controls),
    )


def drop_collinear_instruments(Z, tol: float = 1e-10):
    """Greedily drop instrument columns that are numerically collinear.

    Columns are scanned left to right; a column is dropped iff its
    distance to the span of the retained columns to its left is within
    ``tol`` (relative to the largest singular value of ``Z``).

    Returns
    -------
    Z_kept : ndarray
        Retained columns, full numerical column rank.
    dropped : list of int
        Dropped column indices, ascending.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    Z = _as_float_matrix(Z, "Z")
    smax = float(np.linalg.svd(Z, compute_uv=False)[0]) if Z.size else 0.0
    threshold = tol * smax
    kept: list[int] = []
    dropped: list[int] = []
    basis: list[np.ndarray] = []
    for j in range(Z.shape[1]):
        v = Z[:, j].astype(np.float64)
        # two Gram-Schmidt passes for numerical stability
        for _ in range(2):
            for q in basis:
                v = v - (q @ v) * q
        norm = float(np.linalg.norm(v))
        if norm <= threshold:
            dropped.append(j)
        else:
            kept.append(j)
            basis.append(v / norm)
    if not kept:
        raise CollinearityError("all instrument columns are numerically zero")
    return Z[:, kept].copy(), dropped


def _residualize(Q: np.ndarray, A: np.ndarray) -> np.ndarray:
    # two projection passes keep Q'resid at machine scale
    R = A - Q @ (Q.T @ A)
    return R - Q @ (Q.T @ R)


def partial_out_controls(dataset: IVDataset) -> PartialledData:
    """Residualize y, X, and Z against the included controls.

    With no controls the blocks are passed through unchanged.  Raises
    :class:`CollinearityError` if the control block is rank deficient;
    prune collinear controls before calling.
    """
    if dataset.d_c == 0:
        return PartialledData(
            y=dataset.y, X=dataset.X, Z=dataset.Z, d_c=0, source=dataset
        )
    Z1 = dataset.Z1
    svals = np.linalg.svd(Z1, compute_uv=False)
    if svals[-1] <= 1e-10 * svals[0]:
        raise CollinearityError(
            "control block is rank deficient; drop collinear controls first"
        )
    Q, _ = np.linalg.qr(Z1)
    y = _residualize(Q, dataset.y[:, None])[:, 0]
    X = _residualize(Q, dataset.X)
    Z = _residualize(Q, dataset.Z)
    return PartialledData(
        y=_readonly(y), X=_readonly(X), Z=_readonly(Z), d_c=dataset.d_c, source=dataset
    )
