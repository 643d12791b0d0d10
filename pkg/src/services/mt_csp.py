"""
Multi-task CSP

Every subject's filter is split into a global part shared by all subjects
and a subject-specific part, w_i = w0 + v_i, and the sum of the subjects'
regularized Rayleigh quotients

    J = sum_i  w_i^T S_ic w_i / (w_i^T (S_i1 + S_i2) w_i + lambda1 |w0|^2 + lambda2 |v_i|^2)

is maximized over z = (w0, v_1, ..., v_n). J does not change when z is
scaled, so the search runs on the unit sphere. Filters are extracted one at
a time; the k-th filter of subject i is kept conjugate to that subject's
earlier filters of the same class (w_i^T S_ic w_k = 0) by searching only in
the null space of those constraints.
"""
import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from models.spatial_filters import SpatialFilterBank
from models.transfer_config import MtCspConfig, MtCspSolution
from models.trial_set import CLASSES, CovarianceEstimate, SubjectRecord
from services.csp import (DEFAULT_FILTERS_PER_CLASS, compute_patterns, csp_train,
                          rayleigh_quotients)
from utils.numerics import OrthonormalBasis, check_symmetric, symmetrize

logger = logging.getLogger(__name__)

MAX_HALVINGS = 30
GRADIENT_STEP = 0.5
RANK_RTOL = 1e-10
TINY_PROJECTION = 1e-8

CovariancePair = Union[Mapping[int, object], Sequence[object]]


class MtCspError(RuntimeError):
    """Optimization failure; `trace` holds the objective values reached so far"""

    def __init__(self, message: str, trace: Optional[List[float]] = None):
        super().__init__(message)
        self.trace = list(trace or [])


def _matrix(cov) -> np.ndarray:
    return cov.matrix if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=float)


def _pair(subject: CovariancePair) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(subject, Mapping):
        return _matrix(subject[1]), _matrix(subject[2])
    first, second = subject
    return _matrix(first), _matrix(second)


@dataclass(frozen=True, eq=False)
class _Problem:
    """Objective of one filter: numerator class covariances S_i, denominators D_i"""
    numerators: np.ndarray
    denominators: np.ndarray
    lambda1: float
    lambda2: float

    @property
    def n(self) -> int:
        return self.numerators.shape[0]

    @property
    def channels(self) -> int:
        return self.numerators.shape[1]

    def blocks(self, z: np.ndarray) -> np.ndarray:
        return z.reshape(self.n + 1, self.channels)

    def filters(self, z: np.ndarray) -> np.ndarray:
        Z = self.blocks(z)
        return Z[0][None, :] + Z[1:]

    def terms(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        Z = self.blocks(z)
        W = Z[0][None, :] + Z[1:]
        a = np.einsum('ic,icd,id->i', W, self.numerators, W)
        b = (np.einsum('ic,icd,id->i', W, self.denominators, W)
             + self.lambda1 * float(Z[0] @ Z[0]) + self.lambda2 * np.sum(Z[1:] ** 2, axis=1))
        return a, b

    def objective(self, z: np.ndarray) -> float:
        a, b = self.terms(z)
        return float(np.sum(a / b))

    def reduced(self, z: np.ndarray, V: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        """Objective, gradient V^T grad J and Hessian V^T H V at z"""
        n, C, q = self.n, self.channels, V.shape[1]
        Z = self.blocks(z)
        W = Z[0][None, :] + Z[1:]
        Vb = V.reshape(n + 1, C, q)
        EV = Vb[0][None] + Vb[1:]

        SW = np.einsum('icd,id->ic', self.numerators, W)
        DW = np.einsum('icd,id->ic', self.denominators, W)
        a = np.einsum('ic,ic->i', W, SW)
        b = (np.einsum('ic,ic->i', W, DW)
             + self.lambda1 * float(Z[0] @ Z[0]) + self.lambda2 * np.sum(Z[1:] ** 2, axis=1))

        EVt = EV.transpose(0, 2, 1)
        ga = 2.0 * np.einsum('iqc,ic->iq', EVt, SW)
        gb = 2.0 * (np.einsum('iqc,ic->iq', EVt, DW)
                    + self.lambda1 * (Vb[0].T @ Z[0])[None, :]
                    + self.lambda2 * np.einsum('icq,ic->iq', Vb[1:], Z[1:]))
        Ha = 2.0 * (EVt @ (self.numerators @ EV))
        Hb = 2.0 * (EVt @ (self.denominators @ EV)
                    + self.lambda1 * (Vb[0].T @ Vb[0])[None]
                    + self.lambda2 * (Vb[1:].transpose(0, 2, 1) @ Vb[1:]))

        gradient = np.sum(ga / b[:, None] - (a / b ** 2)[:, None] * gb, axis=0)
        cross = np.einsum('iq,ir->iqr', ga, gb)
        hessian = np.sum(
            Ha / b[:, None, None]
            - (cross + cross.transpose(0, 2, 1)) / (b ** 2)[:, None, None]
            - (a / b ** 2)[:, None, None] * Hb
            + (2.0 * a / b ** 3)[:, None, None] * np.einsum('iq,ir->iqr', gb, gb),
            axis=0,
        )
        return float(np.sum(a / b)), gradient, symmetrize(hessian)


def _null_space(K: np.ndarray, dim: int) -> np.ndarray:
    if K.shape[0] == 0:
        return np.eye(dim)
    return linalg.null_space(K)


def _embed(columns: np.ndarray, start: int, total: int) -> np.ndarray:
    out = np.zeros((total, columns.shape[1]))
    out[start:start + columns.shape[0]] = columns
    return out


def _ascent_step(problem: _Problem, z: np.ndarray, value: float,
                 directions: np.ndarray, trace: List[float]) -> Optional[Tuple[np.ndarray, float]]:
    """One damped Newton step, or a backtracking gradient step when H is not negative definite"""
    tangent = linalg.orth(directions - np.outer(z, z @ directions))
    if tangent.shape[1] == 0:
        return None
    _, g, H = problem.reduced(z, tangent)
    g_norm = np.linalg.norm(g)
    if g_norm == 0.0 or not np.isfinite(g_norm):
        return None

    attempts = []
    if linalg.eigvalsh(H).max() < 0:
        attempts.append((-linalg.solve(H, g, assume_a='sym'), 1.0))
    attempts.append((g / g_norm, GRADIENT_STEP))

    for direction, t in attempts:
        move = tangent @ direction
        for _ in range(MAX_HALVINGS + 1):
            candidate = z + t * move
            candidate /= np.linalg.norm(candidate)
            cand_value = problem.objective(candidate)
            if not np.isfinite(cand_value):
                raise MtCspError(f"non-finite objective {cand_value} during line search", trace)
            if cand_value > value:
                return candidate, cand_value
            t *= 0.5
    return None


def _maximize(problem: _Problem, z: np.ndarray, subspaces: List[np.ndarray],
              cfg: MtCspConfig) -> Tuple[np.ndarray, List[float]]:
    value = problem.objective(z)
    trace = [value]
    if not np.isfinite(value):
        raise MtCspError(f"non-finite objective {value} at the initial point", trace)

    quiet = 0
    for iteration in range(cfg.max_iterations):
        step = _ascent_step(problem, z, value, subspaces[iteration % len(subspaces)], trace)
        if step is None:
            quiet += 1
        else:
            z, new_value = step
            gain = new_value - value
            value = new_value
            trace.append(value)
            quiet = quiet + 1 if gain <= cfg.objective_tolerance * max(1.0, abs(value)) else 0
        if quiet >= len(subspaces):
            break
    return z, trace


def _initial_point(problem: _Problem, init_filters: np.ndarray, N: np.ndarray) -> np.ndarray:
    """
    Start from the best of three splits of the per-subject CSP filters:
    shared mean plus residuals, purely specific, and purely global.
    """
    n, C = init_filters.shape
    W = init_filters * np.where(init_filters @ init_filters[0] < 0, -1.0, 1.0)[:, None]
    mean = W.mean(axis=0)
    candidates = [
        np.vstack([mean, W - mean]),
        np.vstack([np.zeros(C), W]),
        np.vstack([mean, np.zeros((n, C))]),
    ]

    best, best_value = None, -np.inf
    for Z in candidates:
        z = Z.ravel()
        projected = N @ (N.T @ z)
        norm = np.linalg.norm(projected)
        if norm < TINY_PROJECTION * max(np.linalg.norm(z), 1.0):
            continue
        projected /= norm
        value = problem.objective(projected)
        if np.isfinite(value) and value > best_value:
            best, best_value = projected, value
    if best is None:
        best = N[:, 0].copy()
    return best


def _extract(problem: _Problem, init_filters: np.ndarray, m: int,
             cfg: MtCspConfig) -> Tuple[np.ndarray, List[List[float]]]:
    """Sequentially extract m conjugate filters; returns z per filter, shape (m, (n+1)C)"""
    n, C = problem.n, problem.channels
    dim = (n + 1) * C
    solutions, traces = [], []
    for k in range(m):
        rows = []
        for z_prev in solutions:
            W_prev = problem.filters(z_prev)
            for i in range(n):
                row = np.zeros((n + 1, C))
                s = problem.numerators[i] @ W_prev[i]
                row[0] = s
                row[i + 1] = s
                rows.append(row.ravel())
        K = np.array(rows).reshape(len(rows), dim)
        if K.shape[0] and np.linalg.matrix_rank(K, tol=RANK_RTOL * max(np.abs(K).max(), 1.0)) < K.shape[0]:
            raise MtCspError(f"conjugacy constraints of filter {k + 1} lost rank", traces[-1] if traces else [])

        N = _null_space(K, dim)
        if cfg.solver == "joint":
            subspaces = [N]
        else:
            subspaces = [_embed(_null_space(K[:, :C], C), 0, dim),
                         _embed(_null_space(K[:, C:], n * C), C, dim)]

        z0 = _initial_point(problem, init_filters[:, :, k], N)
        z, trace = _maximize(problem, z0, subspaces, cfg)
        logger.debug(f"mtCSP filter {k + 1}/{m}: J {trace[0]:.6f} -> {trace[-1]:.6f} "
                     f"in {len(trace) - 1} accepted steps")
        solutions.append(z)
        traces.append(trace)
    return np.array(solutions), traces


def mtcsp_train(subjects: Sequence[CovariancePair], cfg: MtCspConfig,
                m: int = DEFAULT_FILTERS_PER_CLASS,
                init: Optional[Sequence[SpatialFilterBank]] = None,
                subject_ids: Optional[Sequence[str]] = None) -> MtCspSolution:
    """
    Train multi-task CSP filters for all subjects at once.

    `subjects` holds one (class-1, class-2) covariance pair per subject.
    `init` holds one filter bank per subject (default: that subject's CSP).
    m filters are extracted against class 1 and m against class 2.
    """
    pairs = [_pair(s) for s in subjects]
    if not pairs:
        raise ValueError("mtCSP needs at least one subject")
    C = pairs[0][0].shape[0]
    for idx, (S1, S2) in enumerate(pairs):
        check_symmetric(S1, f"subject {idx + 1} class-1 covariance")
        check_symmetric(S2, f"subject {idx + 1} class-2 covariance")
        if S1.shape != (C, C) or S2.shape != (C, C):
            raise ValueError(f"subject {idx + 1} has covariances of shape {S1.shape}, expected {(C, C)}")
    if 2 * m > C:
        raise ValueError(f"2m = {2 * m} filters requested but only {C} channels")

    if init is None:
        init = [csp_train(S1, S2, m) for S1, S2 in pairs]
    if len(init) != len(pairs):
        raise ValueError(f"{len(init)} initial filter banks for {len(pairs)} subjects")
    if any(bank.m < m for bank in init):
        raise ValueError(f"initial filter banks must hold at least {m} filters per class")
    if subject_ids is None:
        subject_ids = [getattr(s[1] if isinstance(s, Mapping) else s[0], 'subject_id', '') or f"S{i + 1}"
                       for i, s in enumerate(subjects)]

    denominators = np.stack([S1 + S2 for S1, S2 in pairs])
    n = len(pairs)
    traces, sets = [], {}
    for c in CLASSES:
        problem = _Problem(np.stack([p[c - 1] for p in pairs]), denominators, cfg.lambda1, cfg.lambda2)
        # strongest filter first for the sequential extraction
        init_filters = np.stack([(b.class1_filters if c == 1 else b.class2_filters[:, ::-1])[:, :m] for b in init])
        Z, class_traces = _extract(problem, init_filters, m, cfg)
        sets[c] = Z.reshape(m, n + 1, C)
        traces.extend(class_traces if c == 1 else class_traces[::-1])

    blocks = np.concatenate([sets[1], sets[2][::-1]], axis=0)
    global_parts = blocks[:, 0, :].T
    specific_parts = blocks[:, 1:, :].transpose(1, 2, 0)

    banks = []
    for i, (S1, S2) in enumerate(pairs):
        W = global_parts + specific_parts[i]
        W = W / np.linalg.norm(W, axis=0, keepdims=True)
        eigenvalues = np.clip(rayleigh_quotients(W, S1, S1 + S2), 0.0, 1.0)
        bank = SpatialFilterBank(W, eigenvalues, m, method="mtcsp",
                                 info={'lambda1': cfg.lambda1, 'lambda2': cfg.lambda2})
        banks.append(bank.with_patterns(compute_patterns(bank, 0.5 * (S1 + S2))))

    logger.info(f"mtCSP trained for {n} subjects (lambda1={cfg.lambda1:g}, lambda2={cfg.lambda2:g}, "
                f"solver={cfg.solver})")
    return MtCspSolution(global_parts, specific_parts, banks, traces, list(subject_ids))


def global_filter_bank(solution: MtCspSolution, cov1, cov2) -> SpatialFilterBank:
    """Bank made of the normalized global parts, for a subject that took no part in training"""
    S1, S2 = _matrix(cov1), _matrix(cov2)
    W = solution.global_parts
    norms = np.linalg.norm(W, axis=0, keepdims=True)
    if np.any(norms == 0):
        raise MtCspError("global filter part vanished; lambda1 drives w0 to zero")
    W = W / norms
    m = W.shape[1] // 2
    bank = SpatialFilterBank(W, np.clip(rayleigh_quotients(W, S1, S1 + S2), 0.0, 1.0), m, method="mtcsp-global")
    return bank.with_patterns(compute_patterns(bank, 0.5 * (S1 + S2)))


def mtcsp_train_target(target: SubjectRecord, donors: Sequence[SubjectRecord], cfg: MtCspConfig,
                       m: int = DEFAULT_FILTERS_PER_CLASS,
                       basis: Optional[OrthonormalBasis] = None) -> SpatialFilterBank:
    """
    Filters for `target` from mtCSP over the target (when cfg.include_target)
    and its donors. With `basis`, every covariance is first mapped into the
    coordinates of that basis and the target filters are mapped back.
    """
    donors = [d for d in donors if d.subject_id != target.subject_id]
    records = ([target] if cfg.include_target else []) + donors
    if not records:
        raise ValueError("mtCSP needs the target or at least one donor")

    Q = basis.columns if basis is not None else None

    def mapped(rec: SubjectRecord, c: int) -> np.ndarray:
        S = rec.train_class_covariances[c].matrix
        return S if Q is None else symmetrize(Q.T @ S @ Q)

    pairs = [(mapped(r, 1), mapped(r, 2)) for r in records]
    solution = mtcsp_train(pairs, cfg, m, subject_ids=[r.subject_id for r in records])

    T1, T2 = mapped(target, 1), mapped(target, 2)
    bank = solution.bank_for(target.subject_id) if cfg.include_target else global_filter_bank(solution, T1, T2)
    info = {'lambda1': cfg.lambda1, 'lambda2': cfg.lambda2, 'donors': len(donors),
            'objective': solution.final_objectives}
    if Q is None:
        return SpatialFilterBank(bank.filters, bank.eigenvalues, m, bank.patterns, method="mtcsp", info=info)

    S1, S2 = (target.train_class_covariances[c].matrix for c in CLASSES)
    W = Q @ bank.filters
    W = W / np.linalg.norm(W, axis=0, keepdims=True)
    lifted = SpatialFilterBank(W, np.clip(rayleigh_quotients(W, S1, S1 + S2), 0.0, 1.0), m,
                               method="ss+mtcsp", info=info)
    return lifted.with_patterns(compute_patterns(lifted, 0.5 * (S1 + S2)))
