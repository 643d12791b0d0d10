"""
Configuration and result types of the multi-subject CSP methods
"""
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Literal, Optional

import numpy as np

from models.spatial_filters import SpatialFilterBank

PENALTY_STRENGTH = 1e5


class InfeasibleSubspaceError(ValueError):
    """The requested subspace dimensions cannot be met by the available donor directions"""


@dataclass(frozen=True)
class CovCspConfig:
    """Shrinkage weight towards the donor-average covariance"""
    lam: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"covCSP lambda must lie in [0, 1], got {self.lam}")


@dataclass(frozen=True)
class MtCspConfig:
    """
    Multi-task CSP trade-off between the global part w0 (lambda1) and the
    subject-specific parts v_i (lambda2).
    """
    lambda1: float = 1.0
    lambda2: float = 1.0
    max_iterations: int = 200
    objective_tolerance: float = 1e-8
    solver: Literal["joint", "alternating"] = "joint"
    include_target: bool = True

    def __post_init__(self):
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError(f"mtCSP lambdas must be positive, got {self.lambda1}, {self.lambda2}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be positive, got {self.max_iterations}")
        if self.solver not in ("joint", "alternating"):
            raise ValueError(f"unknown mtCSP solver '{self.solver}'")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(eq=False)
class MtCspSolution:
    """
    Filters of every subject with their decomposition w_i = w0 + v_i.

    global_parts: C x 2m, specific_parts: n x C x 2m (unnormalized, sharing
    one scale per filter), objective_trace: one list of accepted objective
    values per filter.
    """
    global_parts: np.ndarray
    specific_parts: np.ndarray
    per_subject_filters: List[SpatialFilterBank]
    objective_trace: List[List[float]] = field(default_factory=list)
    subject_ids: List[str] = field(default_factory=list)

    def bank_for(self, subject_id: str) -> SpatialFilterBank:
        if subject_id not in self.subject_ids:
            raise KeyError(f"subject '{subject_id}' is not part of this solution")
        return self.per_subject_filters[self.subject_ids.index(subject_id)]

    @property
    def final_objectives(self) -> List[float]:
        return [trace[-1] for trace in self.objective_trace]


@dataclass(frozen=True)
class SsCspConfig:
    """
    Stationary-subspace CSP: l directions per donor, nu-dimensional common
    subspace removed with a penalty of strength `penalty`.

    nu = 0 removes nothing. `adaptive_l_threshold` picks, per donor, the
    smallest l (at most `l`) whose |eigenvalue| mass reaches that fraction of
    the total. `session_scope` selects pooled or single-class session
    covariances, and `noise_only` deflates each donor by its own CSP span first.
    """
    l: int = 5
    nu: int = 5
    penalty: float = PENALTY_STRENGTH
    adaptive_l_threshold: Optional[float] = None
    session_scope: object = "pooled"
    noise_only: bool = False

    def __post_init__(self):
        if self.l < 1:
            raise ValueError(f"l must be at least 1, got {self.l}")
        if self.nu < 0:
            raise ValueError(f"nu must be non-negative, got {self.nu}")
        if self.penalty < 0:
            raise ValueError(f"penalty must be non-negative, got {self.penalty}")
        if self.adaptive_l_threshold is not None and not 0 < self.adaptive_l_threshold <= 1:
            raise ValueError(f"adaptive_l_threshold must lie in (0, 1], got {self.adaptive_l_threshold}")
        if self.session_scope not in ("pooled", 1, 2):
            raise ValueError(f"session_scope must be 'pooled', 1 or 2, got {self.session_scope!r}")

    def check_donor_count(self, n_donors: int):
        if self.nu > self.l * n_donors:
            raise InfeasibleSubspaceError(f"nu = {self.nu} exceeds l * donors = {self.l * n_donors}")


@dataclass(frozen=True, eq=False)
class NonstationaryDirections:
    """Leading eigenvectors of Sigma_train - Sigma_test, ordered by |eigenvalue|"""
    subject_id: str
    vectors: np.ndarray
    eigenvalues: np.ndarray
    degenerate: bool = False

    @property
    def l(self) -> int:
        return self.vectors.shape[1]
