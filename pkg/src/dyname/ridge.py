"""Closed-form ridge regression in primal and dual form.

The primal route solves the D x D normal equations; the dual route solves
the n x n Gram system and is the production path, since per-step expert
fitting uses a handful of samples against a wide feature space. Both return
the same prediction for any positive regularization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lstsq

from .errors import SingularSystem
from .periods import ExpertBatch

DEFAULT_LAMBDA = 1e-4


@dataclass(frozen=True)
class RidgeProblem:
    """Single-channel fitting problem: features Z [n x D], targets Y [n x H],
    regularization lam >= 0, and the query feature z_query [D]."""

    Z: np.ndarray
    Y: np.ndarray
    lam: float
    z_query: np.ndarray


def _spd_solve(
    A: np.ndarray, B: np.ndarray, *, refine: bool = False, consume: bool = False
) -> np.ndarray:
    """Solve A X = B for symmetric positive-definite A, Cholesky first.

    ``refine`` adds one pass of iterative refinement (A must stay intact),
    for regularizations small enough that a bare factor-solve loses digits.
    ``consume`` lets the factorization overwrite A, skipping a copy; it also
    waives the generic-solver fallback, which only matters for the
    zero-regularization case where A may fail to be definite.
    """
    destroy = consume and not refine
    try:
        factor = cho_factor(A, lower=True, overwrite_a=destroy, check_finite=False)
        x = cho_solve(factor, B, check_finite=False)
        if refine:
            x += cho_solve(factor, B - A @ x, check_finite=False)
        return x
    except (LinAlgError, np.linalg.LinAlgError):
        if destroy:
            raise SingularSystem("Cholesky factorization failed") from None
        try:
            return np.linalg.solve(A, B)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from None


# Conditioning threshold on (top Gram eigenvalue) / lam. Beyond it the
# primal abandons the normal equations, whose formation alone costs too many
# digits there (no amount of solve refinement recovers them), for the
# lam-augmented least-squares system; the dual's small Gram instead takes a
# refinement pass, which is nearly free at n <= 16. The margin is generous:
# the Cholesky route's error tail approaches 1e-6 within a decade of 2e7.
_ILL_CONDITIONED_KAPPA = 3e6


def solve_primal(problem: RidgeProblem) -> np.ndarray:
    """Predict via the explicit weight matrix (Z'Z + lam I)^-1 Z'Y.

    Costs O(D^3); kept as the reference route and for timing comparisons.
    """
    Z, Y, lam = problem.Z, problem.Y, problem.lam
    d = Z.shape[1]
    scale = float(np.sum(Z * Z))  # upper bound on the top Gram eigenvalue
    if 0.0 < lam * _ILL_CONDITIONED_KAPPA < scale:
        augmented = np.vstack([Z, np.sqrt(lam) * np.eye(d)])
        rhs = np.vstack([Y, np.zeros((d, Y.shape[1]))])
        weights, *_ = lstsq(augmented, rhs, lapack_driver="gelsy", check_finite=False)
        return problem.z_query @ weights
    gram = Z.T @ Z
    gram.flat[:: d + 1] += lam
    weights = _spd_solve(gram, Z.T @ Y, refine=lam > 0.0, consume=lam > 0.0)
    return problem.z_query @ weights


def solve_dual(problem: RidgeProblem) -> np.ndarray:
    """Predict via the n x n Gram system (z Z')(Z Z' + lam I)^-1 Y.

    Mathematically identical to :func:`solve_primal` for lam > 0 but the
    factorization cost moves from the feature dimension to the sample count.
    """
    alpha = dual_coefficients(problem.Z, problem.Y, problem.lam)
    return (problem.z_query @ problem.Z.T) @ alpha


def dual_coefficients(Z: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    """Dual coefficients alpha = (Z Z' + lam I)^-1 Y, shape [n x H]."""
    n = Z.shape[0]
    gram = Z @ Z.T
    gram.flat[:: n + 1] += lam
    scale = float(np.sum(Z * Z))
    refine = 0.0 < lam * _ILL_CONDITIONED_KAPPA < scale
    return _spd_solve(gram, Y, refine=refine, consume=lam > 0.0)


def predict_expert(
    batch: ExpertBatch,
    feature_map,
    z_query: np.ndarray,
    lam: float = DEFAULT_LAMBDA,
    *,
    solver: str = "dual",
    return_query_maps: bool = False,
):
    """Fit one specialized expert on its batch and predict for the query.

    Regression runs independently per channel: ``feature_map`` maps a
    [n x L x C] stack to [n x C x D] features, ``z_query`` is [C x D], and
    the assembled prediction is [H x C]. With ``return_query_maps`` the
    per-channel linear maps Z' alpha [D x H] are also returned; they are the
    exact sensitivity of the prediction to the query feature.
    """
    Z_all = feature_map(batch.X)
    C = Z_all.shape[1]
    horizon = batch.Y.shape[1]
    pred = np.empty((horizon, C))
    query_maps = np.empty((C, Z_all.shape[2], horizon)) if return_query_maps else None
    for c in range(C):
        Z = Z_all[:, c, :]
        Y = batch.Y[:, :, c]
        if solver == "dual":
            alpha = dual_coefficients(Z, Y, lam)
            pred[:, c] = (z_query[c] @ Z.T) @ alpha
            if query_maps is not None:
                query_maps[c] = Z.T @ alpha
        else:
            pred[:, c] = solve_primal(RidgeProblem(Z=Z, Y=Y, lam=lam, z_query=z_query[c]))
            if query_maps is not None:
                query_maps[c] = Z.T @ dual_coefficients(Z, Y, lam)
    if return_query_maps:
        return pred, query_maps
    return pred
