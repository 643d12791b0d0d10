"""
Common Spatial Patterns: baseline and penalized training, patterns, and
log-variance features
"""
import logging
from typing import Optional, Union

import numpy as np
from scipy import linalg

from models.spatial_filters import SpatialFilterBank
from models.trial_set import CovarianceEstimate
from utils.numerics import gen_sym_eig, ridge_if_singular, check_symmetric, symmetrize

logger = logging.getLogger(__name__)

DEFAULT_FILTERS_PER_CLASS = 3
LOG_FLOOR = 1e-12

MatrixLike = Union[CovarianceEstimate, np.ndarray]


def _matrix(cov: MatrixLike) -> np.ndarray:
    return cov.matrix if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=float)


def _check_pair(S1: np.ndarray, S2: np.ndarray, m: int):
    if S1.shape != S2.shape:
        raise ValueError(f"class covariances differ in shape: {S1.shape} vs {S2.shape}")
    if m < 1:
        raise ValueError(f"filters per class must be positive, got {m}")
    if 2 * m > S1.shape[0]:
        raise ValueError(f"2m = {2 * m} filters requested but only {S1.shape[0]} channels")


def _unit_columns(W: np.ndarray) -> np.ndarray:
    return W / np.linalg.norm(W, axis=0, keepdims=True)


def rayleigh_quotients(W: np.ndarray, numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    num = np.einsum('ck,cd,dk->k', W, numerator, W)
    den = np.einsum('ck,cd,dk->k', W, denominator, W)
    return num / den


def csp_train(cov1: MatrixLike, cov2: MatrixLike, m: int = DEFAULT_FILTERS_PER_CLASS) -> SpatialFilterBank:
    """
    Solve S1 w = lambda (S1 + S2) w and keep the m filters with the largest
    and the m with the smallest eigenvalues.
    """
    S1, S2 = check_symmetric(_matrix(cov1), "class-1 covariance"), check_symmetric(_matrix(cov2), "class-2 covariance")
    _check_pair(S1, S2, m)
    pairs = gen_sym_eig(S1, ridge_if_singular(S1 + S2))
    keep = np.r_[np.arange(m), np.arange(len(pairs) - m, len(pairs))]
    bank = SpatialFilterBank(
        filters=_unit_columns(pairs.vectors[:, keep]),
        eigenvalues=np.clip(pairs.values[keep], 0.0, 1.0),
        m=m,
        method="csp",
    )
    return bank.with_patterns(compute_patterns(bank, 0.5 * (S1 + S2)))


def penalized_csp_train(cov1: MatrixLike, cov2: MatrixLike, penalty: np.ndarray,
                        m: int = DEFAULT_FILTERS_PER_CLASS, method: str = "penalized-csp") -> SpatialFilterBank:
    """
    CSP with a penalty matrix added to the denominator.

    Class-1 filters are the top-m solutions of S1 w = lambda (S1 + S2 + P) w,
    class-2 filters the top-m solutions of the mirrored problem with S2 in the
    numerator.
    """
    S1, S2 = check_symmetric(_matrix(cov1), "class-1 covariance"), check_symmetric(_matrix(cov2), "class-2 covariance")
    _check_pair(S1, S2, m)
    penalty = check_symmetric(penalty, "penalty")
    if penalty.shape != S1.shape:
        raise ValueError(f"penalty shape {penalty.shape} does not match covariances {S1.shape}")
    denominator = ridge_if_singular(S1 + S2 + penalty)

    first = gen_sym_eig(S1, denominator).head(m)
    second = gen_sym_eig(S2, denominator).head(m)
    # class-2 filters ordered as in csp_train: strongest last
    W = _unit_columns(np.hstack([first.vectors, second.vectors[:, ::-1]]))
    eigenvalues = np.clip(rayleigh_quotients(W, S1, denominator), 0.0, 1.0)
    bank = SpatialFilterBank(W, eigenvalues, m, method=method)
    return bank.with_patterns(compute_patterns(bank, 0.5 * (S1 + S2)))


def compute_patterns(bank: Union[SpatialFilterBank, np.ndarray], pooled: MatrixLike) -> np.ndarray:
    """Forward model A = S W (W^T S W)^-1, so that A^T W = I"""
    W = bank.filters if isinstance(bank, SpatialFilterBank) else np.asarray(bank, dtype=float)
    S = _matrix(pooled)
    SW = S @ W
    gram = symmetrize(W.T @ SW)
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise ValueError("W^T S W is singular; patterns are undefined for these filters")
    return linalg.solve(gram, SW.T, assume_a='sym').T


def log_variance_features(bank: SpatialFilterBank, trial: np.ndarray) -> np.ndarray:
    """ln(w^T (X X^T / T) w + eps) for every filter of the bank"""
    trial = np.asarray(trial, dtype=float)
    if trial.ndim != 2 or trial.shape[0] != bank.channels:
        raise ValueError(f"trial shape {trial.shape} does not match {bank.channels} channels")
    projected = bank.filters.T @ trial
    return np.log(np.mean(projected ** 2, axis=1) + LOG_FLOOR)


def extract_features(bank: SpatialFilterBank, trials: np.ndarray) -> np.ndarray:
    """Log-variance features of a stack of trials, shape (n_trials, 2m)"""
    trials = np.asarray(trials, dtype=float)
    if trials.ndim != 3 or trials.shape[1] != bank.channels:
        raise ValueError(f"trials shape {trials.shape} does not match {bank.channels} channels")
    projected = bank.filters.T @ trials
    return np.log(np.mean(projected ** 2, axis=2) + LOG_FLOOR)


def full_spectrum(cov1: MatrixLike, cov2: MatrixLike, penalty: Optional[np.ndarray] = None):
    """All generalized eigenpairs of the (optionally penalized) CSP problem"""
    S1, S2 = _matrix(cov1), _matrix(cov2)
    denominator = S1 + S2 if penalty is None else S1 + S2 + penalty
    return gen_sym_eig(S1, ridge_if_singular(denominator))
