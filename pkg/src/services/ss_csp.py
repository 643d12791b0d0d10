"""
Stationary-subspace CSP

Directions along which the donors' data change most between their training
and test sessions are aggregated into a common non-stationary subspace. The
target's CSP is then either penalized for using that subspace (ssCSP) or
computed in its orthogonal complement (ss+mtCSP).
"""
import logging
from typing import List, Optional, Sequence

import numpy as np

from models.spatial_filters import SpatialFilterBank
from models.transfer_config import InfeasibleSubspaceError, MtCspConfig, NonstationaryDirections, SsCspConfig
from models.trial_set import Scope, SubjectRecord
from services.csp import DEFAULT_FILTERS_PER_CLASS, csp_train, penalized_csp_train
from services.mt_csp import mtcsp_train_target
from utils.numerics import OrthonormalBasis, pca_no_mean, project_out, sym_eig

logger = logging.getLogger(__name__)

DEGENERATE_RTOL = 1e-10


def _directions(subject_id: str, difference: np.ndarray, l: int, scale: float,
                adaptive_threshold: Optional[float] = None) -> NonstationaryDirections:
    C = difference.shape[0]
    if not 1 <= l <= C:
        raise ValueError(f"l must lie in [1, {C}], got {l}")
    pairs = sym_eig(difference, "descending_abs_value")
    magnitudes = np.abs(pairs.values)
    degenerate = bool(magnitudes.max(initial=0.0) <= DEGENERATE_RTOL * max(scale, np.finfo(float).tiny))

    if adaptive_threshold is not None and not degenerate:
        mass = np.cumsum(magnitudes) / magnitudes.sum()
        l = min(l, int(np.searchsorted(mass, adaptive_threshold - 1e-12)) + 1)
    if degenerate:
        logger.warning(f"Subject '{subject_id}': training and test covariances coincide; "
                       f"non-stationary directions are arbitrary")
    return NonstationaryDirections(subject_id, pairs.vectors[:, :l], pairs.values[:l], degenerate)


def nonstationary_directions(rec: SubjectRecord, l: int, scope: Scope = "pooled",
                             adaptive_threshold: Optional[float] = None) -> NonstationaryDirections:
    """
    Top-l eigenvectors of Sigma_train - Sigma_test by |eigenvalue|.

    With `adaptive_threshold`, the smallest l (never more than the given l)
    whose |eigenvalue| mass reaches that fraction of the total is used.
    """
    train = rec.session_covariance("train", scope).matrix
    test = rec.session_covariance("test", scope).matrix
    scale = max(np.trace(train), np.trace(test)) / train.shape[0]
    return _directions(rec.subject_id, train - test, l, scale, adaptive_threshold)


def common_nonstationary_subspace(dirs: Sequence[NonstationaryDirections], nu: int) -> OrthonormalBasis:
    """Top-nu principal directions (without centering) of all donors' directions"""
    if not dirs:
        raise ValueError("no donor directions to aggregate")
    C = dirs[0].vectors.shape[0]
    if nu == 0:
        return OrthonormalBasis.empty(C)
    P = np.hstack([d.vectors for d in dirs])
    if nu > P.shape[1]:
        raise InfeasibleSubspaceError(f"nu = {nu} exceeds the {P.shape[1]} aggregated donor directions")
    return pca_no_mean(P, nu)


def noise_only_directions(donors: Sequence[SubjectRecord], l: int, m: int = DEFAULT_FILTERS_PER_CLASS,
                          scope: Scope = "pooled",
                          adaptive_threshold: Optional[float] = None) -> List[NonstationaryDirections]:
    """Non-stationary directions of every donor after removing its own CSP span"""
    result = []
    for donor in donors:
        covs = donor.train_class_covariances
        span = OrthonormalBasis.from_span(csp_train(covs[1], covs[2], m).filters)
        train = project_out(donor.session_covariance("train", scope).matrix, span, as_covariance=True)
        test = project_out(donor.session_covariance("test", scope).matrix, span, as_covariance=True)
        scale = max(np.trace(donor.session_covariance("train", scope).matrix),
                    np.trace(donor.session_covariance("test", scope).matrix)) / train.shape[0]
        result.append(_directions(donor.subject_id, train - test, l, scale, adaptive_threshold))
    return result


def noise_only_subspace(donors: Sequence[SubjectRecord], l: int, nu: int,
                        m: int = DEFAULT_FILTERS_PER_CLASS, scope: Scope = "pooled",
                        adaptive_threshold: Optional[float] = None) -> OrthonormalBasis:
    """Common non-stationary subspace computed from CSP-deflated donor data"""
    if not donors:
        raise ValueError("noise-only subspace needs at least one donor")
    return common_nonstationary_subspace(
        noise_only_directions(donors, l, m, scope, adaptive_threshold), nu
    )


def _exclude_target(target_id: str, donors: Sequence[SubjectRecord]) -> List[SubjectRecord]:
    kept = [d for d in donors if d.subject_id != target_id]
    if len(kept) != len(donors):
        logger.warning(f"Removed target '{target_id}' from its own donor list")
    return kept


def build_penalty_subspace(target_id: str, donors: Sequence[SubjectRecord], cfg: SsCspConfig,
                           m: int = DEFAULT_FILTERS_PER_CLASS) -> OrthonormalBasis:
    """Common non-stationary subspace of the donors, never using the target's own data"""
    donors = _exclude_target(target_id, donors)
    if not donors:
        raise ValueError(f"ssCSP for '{target_id}' needs at least one donor")
    if cfg.nu == 0:
        return OrthonormalBasis.empty(donors[0].channels)
    cfg.check_donor_count(len(donors))

    if cfg.noise_only:
        return noise_only_subspace(donors, cfg.l, cfg.nu, m, cfg.session_scope, cfg.adaptive_l_threshold)
    dirs = [nonstationary_directions(d, cfg.l, cfg.session_scope, cfg.adaptive_l_threshold) for d in donors]
    return common_nonstationary_subspace(dirs, cfg.nu)


def sscsp_train(target: SubjectRecord, donors: Sequence[SubjectRecord], cfg: SsCspConfig,
                m: int = DEFAULT_FILTERS_PER_CLASS) -> SpatialFilterBank:
    """CSP of the target penalized by penalty * P P^T on the donors' common non-stationary subspace P"""
    basis = build_penalty_subspace(target.subject_id, donors, cfg, m)
    covs = target.train_class_covariances
    penalty = cfg.penalty * basis.projector()
    bank = penalized_csp_train(covs[1], covs[2], penalty, m, method="sscsp")
    logger.debug(f"ssCSP for '{target.subject_id}': l={cfg.l}, nu={cfg.nu}, penalty subspace dim {basis.k}")
    return SpatialFilterBank(bank.filters, bank.eigenvalues, m, bank.patterns, method="sscsp",
                             info={'l': cfg.l, 'nu': cfg.nu, 'noise_only': cfg.noise_only})


def ss_mt_csp_train(target: SubjectRecord, donors: Sequence[SubjectRecord], ss_cfg: SsCspConfig,
                    mt_cfg: MtCspConfig, m: int = DEFAULT_FILTERS_PER_CLASS) -> SpatialFilterBank:
    """mtCSP computed in the orthogonal complement of the donors' common non-stationary subspace"""
    basis = build_penalty_subspace(target.subject_id, donors, ss_cfg, m)
    donors = [d for d in donors if d.subject_id != target.subject_id]
    if basis.k == 0:
        return mtcsp_train_target(target, donors, mt_cfg, m)
    complement = basis.complement()
    if complement.k < 2 * m:
        raise InfeasibleSubspaceError(f"complement of dimension {complement.k} cannot hold {2 * m} filters")
    bank = mtcsp_train_target(target, donors, mt_cfg, m, basis=complement)
    bank.info.update({'l': ss_cfg.l, 'nu': ss_cfg.nu})
    return bank


def penalty_alignment(bank: SpatialFilterBank, basis: OrthonormalBasis) -> float:
    """Largest |cos| between any filter and any penalty direction"""
    if basis.k == 0:
        return 0.0
    W = bank.filters / np.linalg.norm(bank.filters, axis=0, keepdims=True)
    return float(np.abs(W.T @ basis.columns).max())
