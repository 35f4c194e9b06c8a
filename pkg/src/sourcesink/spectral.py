"""Perron eigen-data of the mean offspring matrix.

The mean matrix ``A`` has ``A[i, j] = m[i] * D[i, j]``: the mean number of
offspring an individual in patch ``i`` sends to patch ``j`` per generation.
Expected patch counts propagate as a row vector, ``E Z_{n+1} = (E Z_n) A``,
so the long-term growth rate is the dominant eigenvalue ``rho`` of ``A``,
the asymptotic spatial profile is the left Perron vector, and the lineage
occupancy of a random survivor is the normalized entrywise product of the
left and right Perron vectors.

Everything here is plain power iteration with a diagonal shift; no general
eigensolver is needed for the Perron pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ValidationError
from .graph import MetapopGraph, validate_graph

POWER_TOL = 1e-12
POWER_MAX_ITER = 10**6


@dataclass(frozen=True)
class SpectralData:
    """Dominant eigenvalue with both Perron vectors, each normalized to sum 1.

    ``periodic_warning`` is set when the support graph is periodic: ``rho``
    is still valid but the occupancy interpretation of the eigenvectors is
    not (it needs aperiodicity).
    """

    rho: float
    left: np.ndarray
    right: np.ndarray
    residual: float
    periodic_warning: bool = False


def mean_matrix(g: MetapopGraph) -> np.ndarray:
    """Entrywise product A[i, j] = m[i] * D[i, j]."""
    return g.m[:, None] * g.D


def _power_right(A: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER):
    """Dominant eigenpair of a non-negative matrix by shifted power iteration.

    The shift A + cI (c = max row sum) makes every class primitive, so the
    iteration converges for any irreducible A; the Rayleigh quotient of the
    unshifted matrix is the eigenvalue estimate.  Exits only once both the
    Rayleigh quotient has settled and the eigen-residual is small.
    """
    k = A.shape[0]
    if k == 1:
        return float(A[0, 0]), np.array([1.0])
    c = float(A.sum(axis=1).max())
    S = A + c * np.eye(k)
    x = np.full(k, 1.0 / k)
    lam = 0.0
    for _ in range(max_iter):
        y = S @ x
        s = y.sum()
        if s == 0.0:
            return 0.0, x
        y /= s
        Ay = A @ y
        lam_new = float(y @ Ay) / float(y @ y)
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            if np.abs(Ay - lam_new * y).max() <= 1e-12 * max(1.0, abs(lam_new)):
                return lam_new, y
        lam = lam_new
        x = y
    raise ConvergenceError("power iteration did not converge", residual=abs(lam))


def perron_value(A: np.ndarray, tol: float = 1e-13, max_iter: int = 10**5) -> float:
    """Spectral radius of a non-negative matrix (value only, no raise).

    Used for threshold decisions where A may be reducible or defective and
    the eigenvector need not exist in a usable form; the Rayleigh estimate
    at the iteration cap is returned as-is.
    """
    A = np.asarray(A, dtype=float)
    k = A.shape[0]
    if k == 0:
        return 0.0
    if k == 1:
        return float(A[0, 0])
    c = float(A.sum(axis=1).max())
    if c == 0.0:
        return 0.0
    S = A + c * np.eye(k)
    x = np.full(k, 1.0 / k)
    lam = 0.0
    for _ in range(max_iter):
        x = S @ x
        s = x.sum()
        if s == 0.0:
            return 0.0
        x /= s
        lam_new = float(x @ (A @ x)) / float(x @ x)
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    return lam


def growth_rate(A: np.ndarray) -> SpectralData:
    """Perron data of a mean matrix.

    Requires positive means (no zero row) and an irreducible support graph;
    a periodic support is allowed but flagged, since then only ``rho``
    carries the usual meaning.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError("mean matrix must be square")
    if np.any(A < 0) or not np.all(np.isfinite(A)):
        raise ValidationError("mean matrix entries must be finite and >= 0")
    k = A.shape[0]
    row_mass = A.sum(axis=1)
    if np.any(row_mass == 0):
        raise ValidationError("mean matrix has a zero row (a patch with zero mean)")
    support = MetapopGraph(m=np.ones(k), D=A / row_mass[:, None])
    report = validate_graph(support)
    if not report.irreducible:
        raise ValidationError("mean matrix support is not irreducible")
    rho, right = _power_right(A)
    _, left = _power_right(A.T)
    right = right / right.sum()
    left = left / left.sum()
    residual = float(
        max(np.abs(A @ right - rho * right).max(), np.abs(left @ A - rho * left).max())
    )
    return SpectralData(
        rho=rho,
        left=left,
        right=right,
        residual=residual,
        periodic_warning=not report.aperiodic,
    )


def occupancy_spectral(sd: SpectralData) -> np.ndarray:
    """Lineage occupancy of a random survivor: left * right, normalized."""
    phi = sd.left * sd.right
    return phi / phi.sum()


def stable_geographic_distribution(sd: SpectralData) -> np.ndarray:
    """Asymptotic spatial profile of expected counts (the left Perron vector)."""
    return sd.left
