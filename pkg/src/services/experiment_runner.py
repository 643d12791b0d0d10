"""
Method pipelines, leave-one-subject-out parameter selection and experiment sweeps
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from models.experiment import TRANSFER_METHODS, ExperimentConfig, MethodSpec, ResultTable
from models.lda import accuracy, lda_train
from models.spatial_filters import SpatialFilterBank
from models.toy_spec import PopulationSpec
from models.transfer_config import CovCspConfig, InfeasibleSubspaceError, MtCspConfig, SsCspConfig
from models.trial_set import SubjectRecord
from services.cov_csp import covcsp_train
from services.csp import DEFAULT_FILTERS_PER_CLASS, csp_train, extract_features
from services.mt_csp import MtCspError, mtcsp_train_target
from services.ss_csp import ss_mt_csp_train, sscsp_train
from services.toy_generator import gen_population
from utils.database import DatasetError, load_dataset
from utils.numerics import NumericsError

logger = logging.getLogger(__name__)

MT_KEYS = ("lambda1", "lambda2", "max_iterations", "objective_tolerance", "solver", "include_target")
SS_KEYS = ("l", "nu", "penalty", "adaptive_l_threshold", "session_scope")

Progress = Optional[Callable[[str], None]]


class ExperimentError(RuntimeError):
    """A pipeline or I/O failure, tagged with the subject and method it happened for"""

    def __init__(self, message: str, subject: str = "", method: str = ""):
        context = ", ".join(p for p in (f"subject '{subject}'" if subject else "",
                                        f"method '{method}'" if method else "") if p)
        super().__init__(f"{message} ({context})" if context else message)
        self.subject = subject
        self.method = method


@dataclass(frozen=True, eq=False)
class PipelineResult:
    train_accuracy: float
    test_accuracy: float
    bank: SpatialFilterBank


def _mt_config(params: Dict) -> MtCspConfig:
    return MtCspConfig(**{k: params[k] for k in MT_KEYS if k in params})


def _ss_config(params: Dict, noise_only: bool = False) -> SsCspConfig:
    values = {k: params[k] for k in SS_KEYS if k in params}
    return SsCspConfig(noise_only=noise_only, **values)


def train_filters(method: str, target: SubjectRecord, donors: Sequence[SubjectRecord], params: Dict,
                  m: int = DEFAULT_FILTERS_PER_CLASS) -> SpatialFilterBank:
    """Spatial filters of `target` for one method and one parameter point"""
    donors = [d for d in donors if d.subject_id != target.subject_id]
    if method in TRANSFER_METHODS and not donors:
        raise ValueError(f"method '{method}' transfers from other subjects and needs at least one donor")
    covs = target.train_class_covariances
    if method == "csp":
        return csp_train(covs[1], covs[2], m)
    if method == "covcsp":
        return covcsp_train(target, donors, CovCspConfig(lam=params.get("lam", 0.0)), m)
    if method == "mtcsp":
        return mtcsp_train_target(target, donors, _mt_config(params), m)
    if method == "sscsp":
        return sscsp_train(target, donors, _ss_config(params), m)
    if method == "sscsp-noise-only":
        return sscsp_train(target, donors, _ss_config(params, noise_only=True), m)
    if method == "ss+mtcsp":
        return ss_mt_csp_train(target, donors, _ss_config(params), _mt_config(params), m)
    raise ValueError(f"unknown method '{method}'")


def run_pipeline(method: str, target: SubjectRecord, donors: Sequence[SubjectRecord], params: Dict,
                 m: int = DEFAULT_FILTERS_PER_CLASS) -> PipelineResult:
    """Train filters, fit LDA on the target's training features and score its test session"""
    bank = train_filters(method, target, donors, params, m)
    train_features = extract_features(bank, target.train.trials)
    model = lda_train(train_features, target.train.labels)
    train_acc = accuracy(model, train_features, target.train.labels)
    test_acc = accuracy(model, extract_features(bank, target.test.trials), target.test.labels)
    return PipelineResult(train_acc, test_acc, bank)


def _feasible_points(method: MethodSpec, n_pool: int) -> List[Dict]:
    points = method.points()
    if method.name in ("sscsp", "sscsp-noise-only"):
        # each pseudo-target keeps n_pool - 1 donors
        points = [p for p in points if p.get("nu", 0) <= p.get("l", 1) * (n_pool - 1)]
    if not points:
        raise ValueError(f"no grid point of '{method.name}' is feasible with {n_pool - 1} donors per pseudo-target")
    return points


def loso_select_params(method: MethodSpec, subjects: Sequence[SubjectRecord], target_id: str,
                       m: int = DEFAULT_FILTERS_PER_CLASS) -> Dict:
    """
    Pick the grid point with the best mean test accuracy when every other
    subject in turn plays the target and the rest are its donors. The
    target's own data is never used.
    """
    if method.components:
        selected = {}
        for component in method.components:
            selected.update(loso_select_params(component, subjects, target_id, m))
        return selected

    pool = [s for s in subjects if s.subject_id != target_id]
    if len(subjects) < 3 or len(pool) < 2:
        raise ValueError(f"leave-one-subject-out selection needs at least 3 subjects, got {len(subjects)}")
    points = _feasible_points(method, len(pool))
    if len(points) == 1:
        return points[0]

    best, best_score = None, -np.inf
    for point in points:
        scores = []
        for pseudo_target in pool:
            donors = [d for d in pool if d.subject_id != pseudo_target.subject_id]
            assert all(d.subject_id != target_id for d in donors) and pseudo_target.subject_id != target_id
            try:
                scores.append(run_pipeline(method.name, pseudo_target, donors, point, m).test_accuracy)
            except (MtCspError, NumericsError, InfeasibleSubspaceError) as e:
                logger.warning(f"Skipping {method.name} point {point} for '{pseudo_target.subject_id}': {e}")
                scores = None
                break
        if scores is None:
            continue
        score = float(np.mean(scores))
        if score > best_score:
            best, best_score = point, score

    if best is None:
        raise ExperimentError("every grid point failed during parameter selection", target_id, method.name)
    logger.info(f"Selected {method.name} parameters {best} for '{target_id}' (LOSO accuracy {best_score:.3f})")
    return best


def _evaluate(method: MethodSpec, records: Sequence[SubjectRecord], target: SubjectRecord,
              m: int) -> Tuple[Dict, PipelineResult]:
    donors = [r for r in records if r.subject_id != target.subject_id]
    if len(method.points()) == 1 and not method.components:
        params = method.points()[0]
    else:
        params = loso_select_params(method, records, target.subject_id, m)
    return params, run_pipeline(method.name, target, donors, params, m)


def run_toy_experiment(config: ExperimentConfig, progress: Progress = None) -> ResultTable:
    """
    Toy sweep over scenarios, eta values and repetitions. Repetition r uses
    seed config.seed + r; only subject 1, the perturbation reference, is scored.
    """
    if not config.is_toy:
        raise ValueError("toy experiment needs a population spec")
    table = ResultTable(toy=True)
    for scenario in config.scenarios:
        for eta in config.eta_grid:
            for rep in range(config.repetitions):
                pop = PopulationSpec(config.population.n_subjects, eta, scenario, config.seed + rep)
                records, _ = gen_population(config.toy_spec, pop)
                target = records[0]
                for method in config.methods:
                    try:
                        params, result = _evaluate(method, records, target, config.m)
                    except ExperimentError:
                        raise
                    except Exception as e:
                        raise ExperimentError(f"toy run failed (scenario {scenario}, eta {eta}, rep {rep}): {e}",
                                              target.subject_id, method.name) from e
                    table.add(target.subject_id, method.name, params, result.train_accuracy,
                              result.test_accuracy, rep, scenario, eta)
                if progress:
                    progress(f"scenario {scenario}, eta {eta}, repetition {rep + 1}/{config.repetitions}")
    logger.info(f"Toy experiment finished with {len(table)} rows")
    return table


def run_real_experiment(config: ExperimentConfig, records: Optional[List[SubjectRecord]] = None,
                        progress: Progress = None) -> ResultTable:
    """Every subject of the dataset in turn is the target; the others are donors"""
    if records is None:
        if not config.dataset:
            raise ValueError("real-data experiment needs a dataset path")
        try:
            records = load_dataset(config.dataset)
        except (DatasetError, OSError) as e:
            raise ExperimentError(f"cannot load dataset '{config.dataset}': {e}") from e

    table = ResultTable()
    for target in records:
        for method in config.methods:
            try:
                params, result = _evaluate(method, records, target, config.m)
            except ExperimentError:
                raise
            except Exception as e:
                raise ExperimentError(f"pipeline failed: {e}", target.subject_id, method.name) from e
            table.add(target.subject_id, method.name, params, result.train_accuracy, result.test_accuracy)
            if progress:
                progress(f"{target.subject_id} / {method.name}: test accuracy {result.test_accuracy:.3f}")
    logger.info(f"Experiment on {len(records)} subjects finished with {len(table)} rows")
    return table


def export_patterns(records: Sequence[SubjectRecord], method: MethodSpec,
                    m: int = DEFAULT_FILTERS_PER_CLASS) -> pd.DataFrame:
    """Long-format spatial patterns (subject, filter, channel, pattern, eigenvalue) for every subject"""
    rows = []
    for target in records:
        try:
            _, result = _evaluate(method, records, target, m)
        except Exception as e:
            raise ExperimentError(f"pattern export failed: {e}", target.subject_id, method.name) from e
        bank = result.bank
        for k in range(bank.filters.shape[1]):
            for channel in range(bank.channels):
                rows.append({
                    'subject': target.subject_id,
                    'filter': k,
                    'channel': channel,
                    'pattern': float(bank.patterns[channel, k]),
                    'eigenvalue': float(bank.eigenvalues[k]),
                })
    return pd.DataFrame(rows)
