"""
Synthetic multi-subject populations

Every subject mixes discriminative/non-discriminative sources through a
rotation A and stationary/non-stationary noise sources through a rotation B.
Subject 1 holds the base rotations; the other subjects receive perturbed
copies of A, B or both, with the perturbation weight eta controlling how
far they drift from subject 1.
"""
import logging
from typing import List, Tuple

import numpy as np

from models.toy_spec import GroundTruth, PopulationSpec, ToySpec
from models.trial_set import SubjectRecord, TrialSet
from utils.numerics import perturb_rotation, rand_rotation

logger = logging.getLogger(__name__)


def _labels(spec: ToySpec) -> np.ndarray:
    return np.tile([1, 2], spec.trials_per_class)


def gen_subject_session(spec: ToySpec, A: np.ndarray, B: np.ndarray, session: str, seed) -> TrialSet:
    """Trials x(t) = A [s_dis; s_ndis] + B [s_stat; s_nstat] with labels alternating 1, 2"""
    D = spec.dim
    for name, R in (("A", A), ("B", B)):
        if np.shape(R) != (D, D):
            raise ValueError(f"mixing matrix {name} has shape {np.shape(R)}, expected {(D, D)}")
    if session not in ("train", "test"):
        raise ValueError(f"unknown session '{session}'")

    rng = np.random.default_rng(seed)
    labels = _labels(spec)
    n, T = len(labels), spec.samples_per_trial
    signal_std = np.sqrt(np.stack([spec.signal_variances(c) for c in labels]))
    noise_std = np.sqrt(spec.noise_variances(session))

    signal = rng.standard_normal((n, D, T)) * signal_std[:, :, None]
    noise = rng.standard_normal((n, D, T)) * noise_std[None, :, None]
    trials = np.asarray(A) @ signal + np.asarray(B) @ noise
    return TrialSet(trials, labels)


class ToyPopulationGenerator:
    """Generate seeded synthetic populations for transfer experiments"""

    def __init__(self, spec: ToySpec = None):
        self.spec = spec or ToySpec()

    def _mixing(self, pop: PopulationSpec, seeds) -> Tuple[List[np.ndarray], List[np.ndarray], np.ndarray, np.ndarray]:
        base_a, base_b, perturb_root = seeds
        A, M_a = rand_rotation(self.spec.dim, base_a)
        B, M_b = rand_rotation(self.spec.dim, base_b)
        mixing_a, mixing_b = [A], [B]
        for child in perturb_root.spawn(pop.n_subjects - 1):
            seed_a, seed_b = child.spawn(2)
            mixing_a.append(perturb_rotation(M_a, pop.eta, seed_a) if pop.perturb_target in ("A", "both") else A)
            mixing_b.append(perturb_rotation(M_b, pop.eta, seed_b) if pop.perturb_target in ("B", "both") else B)
        return mixing_a, mixing_b, M_a, M_b

    def generate(self, pop: PopulationSpec) -> Tuple[List[SubjectRecord], GroundTruth]:
        base_a, base_b, perturb_root, data_root = np.random.SeedSequence(pop.seed).spawn(4)
        mixing_a, mixing_b, M_a, M_b = self._mixing(pop, (base_a, base_b, perturb_root))

        records = []
        subject_ids = [f"S{i + 1}" for i in range(pop.n_subjects)]
        for subject_id, A, B, child in zip(subject_ids, mixing_a, mixing_b, data_root.spawn(pop.n_subjects)):
            train_seed, test_seed = child.spawn(2)
            records.append(SubjectRecord(
                subject_id,
                gen_subject_session(self.spec, A, B, "train", train_seed),
                gen_subject_session(self.spec, A, B, "test", test_seed),
                metadata={'eta': pop.eta, 'perturb': pop.perturb_target, 'seed': pop.seed},
            ))

        truth = GroundTruth(self.spec, mixing_a, mixing_b, M_a, M_b, subject_ids)
        logger.info(f"Generated {pop.n_subjects} toy subjects (perturb={pop.perturb_target}, "
                    f"eta={pop.eta}, seed={pop.seed})")
        return records, truth


def gen_population(spec: ToySpec, pop: PopulationSpec) -> Tuple[List[SubjectRecord], GroundTruth]:
    return ToyPopulationGenerator(spec).generate(pop)
