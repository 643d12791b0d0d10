"""
covCSP: class covariances shrunk towards the average of other subjects
"""
import logging
from typing import List, Sequence, Union

import numpy as np

from models.spatial_filters import SpatialFilterBank
from models.transfer_config import CovCspConfig
from models.trial_set import CLASSES, CovarianceEstimate, SubjectRecord
from services.csp import DEFAULT_FILTERS_PER_CLASS, csp_train
from utils.numerics import symmetrize, tree_sum

logger = logging.getLogger(__name__)


def _as_config(cfg: Union[CovCspConfig, float]) -> CovCspConfig:
    return cfg if isinstance(cfg, CovCspConfig) else CovCspConfig(lam=float(cfg))


def covcsp_covariance(target: CovarianceEstimate, others: Sequence[CovarianceEstimate],
                      lam: Union[CovCspConfig, float]) -> CovarianceEstimate:
    """(1 - lam) * target + lam * mean(others)"""
    lam = _as_config(lam).lam
    mismatched = [o.subject_id or "?" for o in others if o.scope != target.scope]
    if mismatched:
        raise ValueError(f"class scope of donors {mismatched} differs from target scope {target.scope!r}")
    if lam == 0.0:
        return target
    if not others:
        raise ValueError("covCSP with lambda > 0 needs at least one donor covariance")
    for o in others:
        if o.matrix.shape != target.matrix.shape:
            raise ValueError(f"donor '{o.subject_id}' covariance shape {o.matrix.shape} "
                             f"differs from target {target.matrix.shape}")

    donor_mean = tree_sum(np.stack([o.matrix for o in others])) / len(others)
    return target.with_matrix(symmetrize((1.0 - lam) * target.matrix + lam * donor_mean))


def covcsp_train(target: SubjectRecord, donors: List[SubjectRecord], lam: Union[CovCspConfig, float],
                 m: int = DEFAULT_FILTERS_PER_CLASS) -> SpatialFilterBank:
    """CSP on covCSP-regularized training class covariances of the target"""
    cfg = _as_config(lam)
    donors = [d for d in donors if d.subject_id != target.subject_id]
    shrunk = {
        c: covcsp_covariance(target.train_class_covariances[c],
                             [d.train_class_covariances[c] for d in donors], cfg)
        for c in CLASSES
    }
    logger.debug(f"covCSP for '{target.subject_id}' with lambda={cfg.lam} and {len(donors)} donors")
    bank = csp_train(shrunk[1], shrunk[2], m)
    return SpatialFilterBank(bank.filters, bank.eigenvalues, bank.m, bank.patterns,
                             method="covcsp", info={'lambda': cfg.lam, 'donors': len(donors)})
