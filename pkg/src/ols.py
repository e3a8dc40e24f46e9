"""Dense least-squares engine shared by every estimator.

Solves with a column-pivoted QR decomposition (never the normal
equations), so collinear dummy sets are caught with a stable rank test and
reported by name.  Robust covariance is the HC0/HC1 sandwich

    (X'WX)^-1  X'W diag(e^2) W X  (X'WX)^-1

with HC1 scaling by n / (n - k).  No intercept is ever added: callers
build every column themselves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (
    DegreesOfFreedomError,
    DimensionMismatch,
    NonFiniteInput,
    RankDeficient,
    UnknownColumn,
)
from .models import HcVariant

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Design matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignMatrix:
    """Named regressors (rows x columns), optionally with positive row weights."""
    columns: tuple[str, ...]
    values: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        columns = tuple(self.columns)
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise DimensionMismatch(f"design values must be 2-D, got {values.ndim}-D")
        if values.shape[1] != len(columns):
            raise DimensionMismatch(
                f"{len(columns)} column name(s) for a design with {values.shape[1]} column(s)"
            )
        if len(set(columns)) != len(columns):
            dupes = sorted({c for c in columns if columns.count(c) > 1})
            raise DimensionMismatch(f"duplicate column names: {', '.join(dupes)}")
        if not np.all(np.isfinite(values)):
            bad = [columns[j] for j in range(values.shape[1]) if not np.all(np.isfinite(values[:, j]))]
            raise NonFiniteInput(f"non-finite entries in column(s): {', '.join(bad)}")
        values.setflags(write=False)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "values", values)

        if self.weights is not None:
            w = np.array(self.weights, dtype=np.float64, copy=True).ravel()
            if w.shape[0] != values.shape[0]:
                raise DimensionMismatch(f"{w.shape[0]} weight(s) for {values.shape[0]} row(s)")
            if not np.all(np.isfinite(w)):
                raise NonFiniteInput("non-finite weights")
            if not np.all(w > 0):
                raise NonFiniteInput("weights must be strictly positive")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @classmethod
    def from_columns(
        cls,
        columns: Mapping[str, Sequence[float] | np.ndarray],
        weights: Optional[Sequence[float] | np.ndarray] = None,
    ) -> DesignMatrix:
        names = tuple(columns)
        if not names:
            raise DimensionMismatch("a design needs at least one column")
        arrays = [np.asarray(columns[name], dtype=np.float64).ravel() for name in names]
        lengths = {a.shape[0] for a in arrays}
        if len(lengths) != 1:
            raise DimensionMismatch(f"columns differ in length: {sorted(lengths)}")
        return cls(names, np.column_stack(arrays), weights)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    def index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise UnknownColumn(f"column {name!r} not in design ({', '.join(self.columns)})") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def drop(self, name: str) -> DesignMatrix:
        j = self.index(name)
        keep = [i for i in range(len(self.columns)) if i != j]
        return DesignMatrix(
            tuple(self.columns[i] for i in keep), self.values[:, keep], self.weights
        )


# ---------------------------------------------------------------------------
# Fit result
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OlsFit:
    columns: tuple[str, ...]
    coefficients: np.ndarray
    residuals: np.ndarray
    xtx_inverse: np.ndarray
    robust_cov: np.ndarray
    dof_residual: int
    hc_variant: HcVariant

    @property
    def params(self) -> dict[str, float]:
        return {c: float(b) for c, b in zip(self.columns, self.coefficients)}

    def coef(self, name: str) -> float:
        return float(self.coefficients[self._index(name)])

    def cov(self, a: str, b: str) -> float:
        return float(self.robust_cov[self._index(a), self._index(b)])

    def se(self, name: str) -> float:
        return float(np.sqrt(self.cov(name, name)))

    def _index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise UnknownColumn(f"column {name!r} not in fit ({', '.join(self.columns)})") from None


# ---------------------------------------------------------------------------
# Core solver
# ---------------------------------------------------------------------------

class _Solution(NamedTuple):
    coef: np.ndarray          # original column order
    residuals: np.ndarray     # y - X b (unweighted scale)
    r_factor: np.ndarray      # R of the pivoted QR of sqrt(W) X
    perm: np.ndarray
    sqrt_w: Optional[np.ndarray]


def _rank_tolerance(r_diag: np.ndarray, shape: tuple[int, int]) -> float:
    if r_diag.size == 0:
        return 0.0
    return max(shape) * np.finfo(np.float64).eps * float(r_diag[0])


def _dependent_set(
    design: DesignMatrix, r: np.ndarray, perm: np.ndarray, rank: int
) -> list[str]:
    """Smallest group of columns that are jointly collinear.

    Expresses the first rejected pivot column in terms of the accepted
    ones; the representation is unique, so its support plus the rejected
    column is a minimal dependent set.
    """
    j = int(perm[rank])
    if rank == 0:
        return [design.columns[j]]
    r11 = r[:rank, :rank]
    r12 = r[:rank, rank]
    c = sla.solve_triangular(r11, r12)
    scale = max(1.0, float(np.max(np.abs(c))))
    support = [int(perm[i]) for i in range(rank) if abs(c[i]) > 1e-8 * scale]
    members = sorted(support + [j])
    return [design.columns[i] for i in members]


def _solve(design: DesignMatrix, response: np.ndarray) -> _Solution:
    X = design.values
    y = response
    sqrt_w = None
    if design.weights is not None:
        sqrt_w = np.sqrt(design.weights)
        X = X * sqrt_w[:, None]
        y = y * sqrt_w

    q, r, perm = sla.qr(X, mode="economic", pivoting=True)
    r_diag = np.abs(np.diag(r))
    tol = _rank_tolerance(r_diag, X.shape)
    rank = int(np.sum(r_diag > tol))
    k = X.shape[1]
    if rank < k:
        raise RankDeficient(_dependent_set(design, r, perm, rank))

    z = sla.solve_triangular(r, q.T @ y)
    coef = np.empty(k)
    coef[perm] = z
    residuals = response - design.values @ coef
    return _Solution(coef, residuals, r, perm, sqrt_w)


def _check_response(design: DesignMatrix, response) -> np.ndarray:
    y = np.asarray(response, dtype=np.float64).ravel()
    if y.shape[0] != design.rows:
        raise DimensionMismatch(f"response has {y.shape[0]} value(s) for {design.rows} design row(s)")
    if not np.all(np.isfinite(y)):
        raise NonFiniteInput("response contains non-finite values")
    return y


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def fit_ols(
    design: DesignMatrix,
    response: Sequence[float] | np.ndarray,
    hc: HcVariant = HcVariant.HC1,
) -> OlsFit:
    """(Weighted) least squares with heteroskedasticity-robust covariance.

    Raises:
        RankDeficient: collinear columns (message lists a minimal dependent set).
        DimensionMismatch / NonFiniteInput: malformed inputs.
        DegreesOfFreedomError: HC1 requested with no residual degrees of freedom.
    """
    hc = HcVariant(hc)
    y = _check_response(design, response)
    sol = _solve(design, y)

    n, k = design.values.shape
    dof = n - k  # full rank is guaranteed past _solve

    r_inv = sla.solve_triangular(sol.r_factor, np.eye(k))
    bread = np.empty((k, k))
    bread[np.ix_(sol.perm, sol.perm)] = r_inv @ r_inv.T

    Xw = design.values if sol.sqrt_w is None else design.values * sol.sqrt_w[:, None]
    ew = sol.residuals if sol.sqrt_w is None else sol.residuals * sol.sqrt_w
    scores = Xw * ew[:, None]
    meat = scores.T @ scores
    cov = bread @ meat @ bread
    if hc is HcVariant.HC1:
        if dof <= 0:
            raise DegreesOfFreedomError(
                f"HC1 needs residual degrees of freedom (n={n}, k={k}); use HC0"
            )
        cov = cov * (n / dof)
    cov = (cov + cov.T) / 2.0

    return OlsFit(
        columns=design.columns,
        coefficients=sol.coef,
        residuals=sol.residuals,
        xtx_inverse=(bread + bread.T) / 2.0,
        robust_cov=cov,
        dof_residual=dof,
        hc_variant=hc,
    )


def fwl_residualize(design: DesignMatrix, target_column: str) -> tuple[np.ndarray, dict[str, float]]:
    """Partial every other column out of *target_column*.

    Returns the residualized target and the auxiliary regression
    coefficients (target on the remaining columns).
    """
    target = design.column(target_column)
    others = [c for c in design.columns if c != target_column]
    if not others:
        return target.copy(), {}
    rest = design.drop(target_column)
    sol = _solve(rest, target)
    return sol.residuals, {c: float(b) for c, b in zip(rest.columns, sol.coef)}
