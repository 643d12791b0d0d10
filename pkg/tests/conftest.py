"""
Shared fixtures: small toy populations and records with exact covariances
"""
import numpy as np
import pytest

from models.toy_spec import PopulationSpec, ToySpec
from models.trial_set import SubjectRecord, TrialSet
from services.toy_generator import gen_population


SMALL_SPEC = ToySpec(d_dis=4, d_ndis=8, d_stat=9, d_nstat=3,
                     trials_per_class=40, samples_per_trial=50)


def scatter_trial(diagonal) -> np.ndarray:
    """Square trial X whose X X^T / T equals diag(diagonal)"""
    diagonal = np.asarray(diagonal, dtype=float)
    T = len(diagonal)
    return np.diag(np.sqrt(diagonal * T))


def record_from_diagonals(subject_id, train1, train2, test1=None, test2=None) -> SubjectRecord:
    """
    Record with one trial per class and session whose class covariances are
    exactly the given diagonal matrices. Test diagonals default to training.
    """
    test1 = train1 if test1 is None else test1
    test2 = train2 if test2 is None else test2
    train = TrialSet(np.stack([scatter_trial(train1), scatter_trial(train2)]), [1, 2])
    test = TrialSet(np.stack([scatter_trial(test1), scatter_trial(test2)]), [1, 2])
    return SubjectRecord(subject_id, train, test)


def relabel(record: SubjectRecord, subject_id: str) -> SubjectRecord:
    return SubjectRecord(subject_id, record.train, record.test)


@pytest.fixture
def small_spec():
    return SMALL_SPEC


@pytest.fixture(scope="session")
def small_population():
    """Four subjects on a 12-channel montage sharing A and B"""
    return gen_population(SMALL_SPEC, PopulationSpec(n_subjects=4, eta=0.0, perturb_target="A", seed=11))


@pytest.fixture(scope="session")
def default_population():
    """Five subjects with the default 80-channel mixing model, eta = 0"""
    return gen_population(ToySpec(), PopulationSpec(n_subjects=5, eta=0.0, perturb_target="A", seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spd(dim: int, rng: np.random.Generator, floor: float = 0.5) -> np.ndarray:
    G = rng.standard_normal((dim, dim))
    return G @ G.T / dim + floor * np.eye(dim)
