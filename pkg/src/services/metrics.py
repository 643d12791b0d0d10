"""
Subject divergence, subspace similarity and significance testing
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg

from models.spatial_filters import SpatialFilterBank
from models.trial_set import SubjectRecord
from services.csp import DEFAULT_FILTERS_PER_CLASS, csp_train, extract_features, full_spectrum
from services.ss_csp import nonstationary_directions
from utils.numerics import (NumericsError, OrthonormalBasis, check_symmetric, is_positive_definite,
                            principal_angle_similarity, random_orthonormal, ridge_if_singular)

logger = logging.getLogger(__name__)

DEFAULT_PERMUTATIONS = 2 ** 10
DISCRIMINATIVE_DIM = 6
NONSTATIONARY_DIM = 5
LOWER_QUANTILE = 0.01

SubspaceKind = Literal["discriminative", "nonstationary"]


def _cho(S: np.ndarray, name: str):
    S = check_symmetric(S, name)
    ok, smallest = is_positive_definite(S)
    if not ok:
        raise NumericsError(f"{name} is not positive definite (smallest eigenvalue {smallest:.6e})")
    return linalg.cho_factor(S, lower=True)


def _trace_solve(factor, S: np.ndarray) -> float:
    return float(np.trace(linalg.cho_solve(factor, S)))


def symmetric_kl(cov_i: np.ndarray, cov_j: np.ndarray) -> float:
    """KL(N(0, cov_i) || N(0, cov_j)) + KL(N(0, cov_j) || N(0, cov_i))"""
    Si, Sj = np.asarray(cov_i, dtype=float), np.asarray(cov_j, dtype=float)
    if Si.shape != Sj.shape:
        raise NumericsError(f"shape mismatch: {Si.shape} vs {Sj.shape}")
    fi, fj = _cho(Si, "first covariance"), _cho(Sj, "second covariance")
    value = 0.5 * (_trace_solve(fj, Si) + _trace_solve(fi, Sj)) - Si.shape[0]
    return max(value, 0.0)


def discriminative_subspace(rec: SubjectRecord, d: int = DISCRIMINATIVE_DIM) -> OrthonormalBasis:
    """
    Orthonormalized span of the d most discriminative CSP filters of the
    training session, ranked by max(lambda, 1 - lambda) over the whole
    spectrum. Ties keep the descending-eigenvalue order.
    """
    C = rec.channels
    if not 1 <= d <= C:
        raise ValueError(f"d must lie in [1, {C}], got {d}")
    covs = rec.train_class_covariances
    pairs = full_spectrum(covs[1], covs[2])
    scores = np.maximum(pairs.values, 1.0 - pairs.values)
    ranked = np.argsort(-scores, kind="stable")[:d]
    return OrthonormalBasis.from_span(pairs.vectors[:, ranked])


def _subspace(rec: SubjectRecord, kind: SubspaceKind, d: int) -> OrthonormalBasis:
    if kind == "discriminative":
        return discriminative_subspace(rec, d)
    if kind == "nonstationary":
        return OrthonormalBasis(nonstationary_directions(rec, d).vectors)
    raise ValueError(f"unknown subspace kind '{kind}'")


@dataclass(frozen=True, eq=False)
class SimilarityReport:
    """Pairwise mean-squared-cosine similarity between subjects' subspaces"""
    pairwise: np.ndarray
    mean: float
    subspace_kind: str
    dimension: int
    subject_ids: List[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.pairwise, index=self.subject_ids, columns=self.subject_ids)

    def to_dict(self) -> Dict:
        return {
            'subspace_kind': self.subspace_kind,
            'dimension': self.dimension,
            'mean': self.mean,
            'subject_ids': self.subject_ids,
            'pairwise': self.pairwise.tolist(),
        }


def subject_similarity_report(records: Sequence[SubjectRecord], kind: SubspaceKind = "discriminative",
                              d: Optional[int] = None) -> SimilarityReport:
    if len(records) < 2:
        raise ValueError(f"similarity needs at least 2 subjects, got {len(records)}")
    if d is None:
        d = DISCRIMINATIVE_DIM if kind == "discriminative" else NONSTATIONARY_DIM
    bases = [_subspace(r, kind, d) for r in records]
    n = len(records)
    pairwise = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            pairwise[i, j] = pairwise[j, i] = principal_angle_similarity(bases[i], bases[j])
    upper = pairwise[np.triu_indices(n, k=1)]
    report = SimilarityReport(pairwise, float(upper.mean()), kind, d, [r.subject_id for r in records])
    logger.info(f"{kind} similarity (d={d}) over {n} subjects: mean {report.mean:.3f}")
    return report


@dataclass(frozen=True, eq=False)
class NullDistribution:
    """Similarity scores of a reference subspace against random subspaces"""
    scores: np.ndarray
    dimension: int
    reference_dim: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.scores, q))

    def quantile_of(self, score: float) -> float:
        """Fraction of null scores at or below `score`"""
        return float(np.mean(self.scores <= score))


def random_subspace_null(reference: OrthonormalBasis, d: int, n_draws: int = 10000, seed=0) -> NullDistribution:
    """Scores against n_draws uniformly random d-dimensional subspaces, one derived seed per draw"""
    if not isinstance(reference, OrthonormalBasis):
        reference = OrthonormalBasis(reference)
    if not 1 <= d <= reference.ambient_dim:
        raise ValueError(f"d must lie in [1, {reference.ambient_dim}], got {d}")
    if n_draws < 1:
        raise ValueError(f"n_draws must be positive, got {n_draws}")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(n_draws)
    scores = np.array([
        principal_angle_similarity(reference, random_orthonormal(reference.ambient_dim, d, np.random.default_rng(child)))
        for child in children
    ])
    return NullDistribution(scores, d, reference.k)


@dataclass(frozen=True)
class PermutationTestResult:
    observed_mean_difference: float
    p_value: float
    n_permutations: int
    exhaustive: bool


def _sign_flips(n: int, n_permutations: int, seed) -> np.ndarray:
    if 2 ** n <= n_permutations:
        bits = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
        return 1.0 - 2.0 * bits
    rng = np.random.default_rng(seed)
    random_flips = rng.choice([-1.0, 1.0], size=(n_permutations - 1, n))
    return np.vstack([np.ones((1, n)), random_flips])


def paired_permutation_test(perf_a: Sequence[float], perf_b: Sequence[float],
                            n_permutations: int = DEFAULT_PERMUTATIONS, seed=0) -> PermutationTestResult:
    """
    One-sided paired permutation test of mean(perf_a - perf_b) > 0.

    Per-subject differences are sign-flipped: exhaustively when 2^n fits in
    n_permutations, otherwise with n_permutations - 1 seeded random flips
    plus the identity. p = #{flipped statistic >= observed} / total.
    """
    a, b = np.asarray(perf_a, dtype=float).ravel(), np.asarray(perf_b, dtype=float).ravel()
    if len(a) != len(b):
        raise ValueError(f"paired test needs equal lengths, got {len(a)} and {len(b)}")
    if len(a) == 0:
        raise ValueError("paired test needs at least one subject")
    diffs = a - b
    observed = float(np.mean(diffs))
    signs = _sign_flips(len(diffs), n_permutations, seed)
    stats = signs @ diffs / len(diffs)
    tol = 1e-12 * max(1.0, abs(observed))
    p_value = float(np.sum(stats >= observed - tol)) / len(stats)
    return PermutationTestResult(observed, p_value, len(stats), 2 ** len(diffs) <= n_permutations)


def divergence_report(records: Sequence[SubjectRecord]) -> pd.DataFrame:
    """
    Per subject: mean symmetric KL of its training covariance to the other
    subjects' training and test covariances, and between its own sessions.
    """
    if len(records) < 2:
        raise ValueError(f"divergence report needs at least 2 subjects, got {len(records)}")
    rows = []
    for rec in records:
        own_train = rec.session_covariance("train").matrix
        others = [o for o in records if o.subject_id != rec.subject_id]
        rows.append({
            'subject': rec.subject_id,
            'kl_other_train': float(np.mean([symmetric_kl(own_train, o.session_covariance("train").matrix)
                                             for o in others])),
            'kl_other_test': float(np.mean([symmetric_kl(own_train, o.session_covariance("test").matrix)
                                            for o in others])),
            'kl_train_test': symmetric_kl(own_train, rec.session_covariance("test").matrix),
        })
    return pd.DataFrame(rows)


def feature_shift(bank: SpatialFilterBank, record: SubjectRecord) -> float:
    """Symmetric KL between Gaussian fits of the training and test log-variance features"""
    train = extract_features(bank, record.train.trials)
    test = extract_features(bank, record.test.trials)
    mu_p, mu_q = train.mean(axis=0), test.mean(axis=0)
    S_p = ridge_if_singular(np.atleast_2d(np.cov(train, rowvar=False)))
    S_q = ridge_if_singular(np.atleast_2d(np.cov(test, rowvar=False)))
    delta = mu_q - mu_p
    Sp_inv_S_q = linalg.solve(S_p, S_q, assume_a='pos')
    Sq_inv_S_p = linalg.solve(S_q, S_p, assume_a='pos')
    mean_term = delta @ (linalg.solve(S_p, delta, assume_a='pos') + linalg.solve(S_q, delta, assume_a='pos'))
    value = 0.5 * (np.trace(Sp_inv_S_q) + np.trace(Sq_inv_S_p) + mean_term) - len(mu_p)
    return max(float(value), 0.0)


def noise_overlap_analysis(record: SubjectRecord, dims: Sequence[int] = range(1, 11),
                           m: int = DEFAULT_FILTERS_PER_CLASS, n_draws: int = 10000,
                           seed=0) -> pd.DataFrame:
    """
    Similarity between the subject's CSP span and its top-d non-stationary
    directions, located within the random-subspace null distribution.
    """
    covs = record.train_class_covariances
    csp_span = OrthonormalBasis.from_span(csp_train(covs[1], covs[2], m).filters)
    seeds = np.random.SeedSequence(seed).spawn(len(dims))
    rows = []
    for d, child in zip(dims, seeds):
        observed = principal_angle_similarity(csp_span, nonstationary_directions(record, d).vectors)
        null = random_subspace_null(csp_span, d, n_draws, child)
        quantile = null.quantile_of(observed)
        rows.append({
            'dimension': d,
            'similarity': observed,
            'null_mean': null.mean,
            'null_q01': null.quantile(LOWER_QUANTILE),
            'quantile': quantile,
            'lower_1pct': quantile <= LOWER_QUANTILE,
        })
    logger.info(f"Noise overlap for '{record.subject_id}' over dims {list(dims)}")
    return pd.DataFrame(rows)
