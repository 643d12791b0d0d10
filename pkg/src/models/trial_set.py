"""
Epoch containers and covariance estimation
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Literal, Optional, Union

import numpy as np

from utils.numerics import tree_sum, symmetrize

logger = logging.getLogger(__name__)

CLASSES = (1, 2)
Scope = Union[int, Literal["pooled"]]
Session = Literal["train", "test"]


@dataclass(frozen=True, eq=False)
class TrialSet:
    """Labeled band-passed epochs of one session, shape (n_trials, C, T)"""
    trials: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        trials = np.array(self.trials, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).ravel()
        if trials.ndim != 3:
            raise ValueError(f"trials must have shape (n_trials, C, T), got {trials.shape}")
        if trials.shape[1] < 1 or trials.shape[2] < 1:
            raise ValueError(f"channels and samples must be positive, got {trials.shape[1:]}")
        if len(labels) != trials.shape[0]:
            raise ValueError(f"{len(labels)} labels for {trials.shape[0]} trials")
        bad = set(np.unique(labels).tolist()) - set(CLASSES)
        if bad:
            raise ValueError(f"labels must be 1 or 2, found {sorted(bad)}")
        trials.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "labels", labels)

    @property
    def n_trials(self) -> int:
        return self.trials.shape[0]

    @property
    def channels(self) -> int:
        return self.trials.shape[1]

    @property
    def samples(self) -> int:
        return self.trials.shape[2]

    def class_count(self, c: int) -> int:
        return int(np.sum(self.labels == c))

    def of_class(self, c: int) -> np.ndarray:
        return self.trials[self.labels == c]

    def has_both_classes(self) -> bool:
        return all(self.class_count(c) > 0 for c in CLASSES)

    def __repr__(self) -> str:
        return (f"TrialSet(n_trials={self.n_trials}, channels={self.channels}, "
                f"samples={self.samples}, class_counts={[self.class_count(c) for c in CLASSES]})")


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    """Channel covariance with provenance"""
    matrix: np.ndarray
    scope: Scope
    session: Session
    subject_id: str = ""

    def with_matrix(self, matrix: np.ndarray) -> "CovarianceEstimate":
        return CovarianceEstimate(matrix, self.scope, self.session, self.subject_id)


def _mean_scatter(trials: np.ndarray, normalize_trace: bool) -> np.ndarray:
    # per-trial X X^T / T, reduced in a fixed pairwise order
    scatters = np.einsum('nct,ndt->ncd', trials, trials) / trials.shape[2]
    if normalize_trace:
        traces = np.trace(scatters, axis1=1, axis2=2)
        traces[traces == 0] = 1.0
        scatters = scatters / traces[:, None, None]
    return symmetrize(tree_sum(scatters) / trials.shape[0])


def class_covariance(ts: TrialSet, c: int, subject_id: str = "", session: Session = "train",
                     normalize_trace: bool = False) -> CovarianceEstimate:
    """Average of X X^T / T over the trials of class c"""
    if c not in CLASSES:
        raise ValueError(f"class must be 1 or 2, got {c}")
    trials = ts.of_class(c)
    if trials.shape[0] == 0:
        raise ValueError(f"no trials of class {c} in session '{session}' of subject '{subject_id}'")
    return CovarianceEstimate(_mean_scatter(trials, normalize_trace), c, session, subject_id)


def session_covariance(ts: TrialSet, subject_id: str = "", session: Session = "train",
                       normalize_trace: bool = False, scope: Scope = "pooled") -> CovarianceEstimate:
    """Average of X X^T / T over all trials, or over one class when scope is 1 or 2"""
    if scope != "pooled":
        return class_covariance(ts, scope, subject_id, session, normalize_trace)
    if ts.n_trials == 0:
        raise ValueError(f"session '{session}' of subject '{subject_id}' has no trials")
    return CovarianceEstimate(_mean_scatter(ts.trials, normalize_trace), "pooled", session, subject_id)


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    """Training and test sessions of one subject"""
    subject_id: str
    train: TrialSet
    test: TrialSet
    metadata: Dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.train.channels != self.test.channels:
            raise ValueError(
                f"subject '{self.subject_id}': train has {self.train.channels} channels, "
                f"test has {self.test.channels}"
            )

    @property
    def channels(self) -> int:
        return self.train.channels

    def session(self, name: Session) -> TrialSet:
        if name not in ("train", "test"):
            raise ValueError(f"unknown session '{name}'")
        return self.train if name == "train" else self.test

    # Estimates are cached on the record; records are immutable.
    @cached_property
    def train_class_covariances(self) -> Dict[int, CovarianceEstimate]:
        return {c: class_covariance(self.train, c, self.subject_id, "train") for c in CLASSES}

    @cached_property
    def test_class_covariances(self) -> Dict[int, CovarianceEstimate]:
        return {c: class_covariance(self.test, c, self.subject_id, "test")
                for c in CLASSES if self.test.class_count(c) > 0}

    def session_covariance(self, name: Session, scope: Scope = "pooled") -> CovarianceEstimate:
        if scope == "pooled":
            return self._pooled[name]
        covs = self.train_class_covariances if name == "train" else self.test_class_covariances
        if scope not in covs:
            raise ValueError(f"subject '{self.subject_id}' has no class-{scope} trials in '{name}'")
        return covs[scope]

    @cached_property
    def _pooled(self) -> Dict[str, CovarianceEstimate]:
        return {name: session_covariance(self.session(name), self.subject_id, name)
                for name in ("train", "test")}

    def __str__(self) -> str:
        return f"SubjectRecord(id='{self.subject_id}', train={self.train.n_trials}, test={self.test.n_trials})"


def find_subject(records, subject_id: str) -> Optional[SubjectRecord]:
    return next((r for r in records if r.subject_id == subject_id), None)
