import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose

from models.transfer_config import CovCspConfig, MtCspConfig, NonstationaryDirections, SsCspConfig
from models.trial_set import CovarianceEstimate
from services.cov_csp import covcsp_covariance, covcsp_train
from services.csp import csp_train, penalized_csp_train
from services.mt_csp import mtcsp_train_target
from services.ss_csp import (build_penalty_subspace, common_nonstationary_subspace, noise_only_directions,
                             noise_only_subspace, nonstationary_directions, penalty_alignment, ss_mt_csp_train,
                             sscsp_train)
from utils.numerics import principal_angle_similarity, random_orthonormal

from conftest import random_spd, record_from_diagonals, relabel

FAST_MT = MtCspConfig(lambda1=1.0, lambda2=1.0, max_iterations=40)


def _cov(matrix, subject_id="", scope=1):
    return CovarianceEstimate(np.asarray(matrix, dtype=float), scope, "train", subject_id)


def _abs_cosines(a, b):
    a = a / np.linalg.norm(a, axis=0)
    b = b / np.linalg.norm(b, axis=0)
    return np.abs(np.sum(a * b, axis=0))


# covCSP

def test_covcsp_lambda_zero_returns_target():
    target = _cov(np.diag([1.0, 2.0]))
    assert covcsp_covariance(target, [_cov(np.eye(2))], 0.0) is target
    assert covcsp_covariance(target, [], 0.0) is target


def test_covcsp_lambda_one_is_donor_mean():
    shrunk = covcsp_covariance(_cov(np.diag([5.0, 5.0])), [_cov(np.diag([2.0, 0.0])), _cov(np.diag([0.0, 2.0]))], 1.0)
    assert_allclose(shrunk.matrix, np.eye(2))


def test_covcsp_halfway():
    shrunk = covcsp_covariance(_cov(np.eye(2)), [_cov(3.0 * np.eye(2))], CovCspConfig(lam=0.5))
    assert_allclose(shrunk.matrix, 2.0 * np.eye(2))


def test_covcsp_is_affine_in_lambda(rng):
    target = _cov(np.diag(rng.uniform(1, 2, 3)))
    donors = [_cov(np.diag(rng.uniform(1, 2, 3))) for _ in range(3)]
    at = {lam: covcsp_covariance(target, donors, lam).matrix for lam in (0.0, 0.3, 1.0)}
    assert_allclose(at[0.3], 0.7 * at[0.0] + 0.3 * at[1.0])


@pytest.mark.parametrize("lam", [-0.1, 1.5])
def test_covcsp_rejects_lambda_outside_unit_interval(lam):
    with pytest.raises(ValueError):
        covcsp_covariance(_cov(np.eye(2)), [_cov(np.eye(2))], lam)


def test_covcsp_rejects_mixed_scopes():
    with pytest.raises(ValueError, match="scope"):
        covcsp_covariance(_cov(np.eye(2), scope=1), [_cov(np.eye(2), scope=2)], 0.5)


def test_covcsp_with_identical_donors_matches_csp(small_population):
    records, _ = small_population
    target = records[0]
    donors = [relabel(target, f"copy{i}") for i in range(4)]
    covs = target.train_class_covariances
    plain = csp_train(covs[1], covs[2], m=2)
    shrunk = covcsp_train(target, donors, 0.9, m=2)
    assert shrunk.method == "covcsp"
    assert np.all(_abs_cosines(plain.filters, shrunk.filters) >= 1 - 1e-8)


def test_covcsp_drops_target_from_donors(small_population):
    records, _ = small_population
    bank = covcsp_train(records[0], records, 0.5, m=2)
    assert bank.info["donors"] == len(records) - 1


# non-stationary directions

def test_nonstationary_directions_diagonal_example():
    rec = record_from_diagonals("S1", [3.0, 1.0], [3.0, 1.0], [1.0, 1.0], [1.0, 1.0])
    dirs = nonstationary_directions(rec, 1)
    assert dirs.eigenvalues[0] == pytest.approx(2.0)
    assert_allclose(np.abs(dirs.vectors[:, 0]), [1.0, 0.0], atol=1e-12)
    assert not dirs.degenerate


def test_nonstationary_directions_single_class_scope():
    rec = record_from_diagonals("S1", [3.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0])
    assert nonstationary_directions(rec, 1).eigenvalues[0] == pytest.approx(1.0)
    assert nonstationary_directions(rec, 1, scope=1).eigenvalues[0] == pytest.approx(2.0)
    assert nonstationary_directions(rec, 1, scope=2).degenerate


def test_stationary_subject_is_flagged_degenerate(caplog):
    rec = record_from_diagonals("S1", [2.0, 1.0], [1.0, 2.0])
    with caplog.at_level(logging.WARNING):
        dirs = nonstationary_directions(rec, 2)
    assert dirs.degenerate
    assert "coincide" in caplog.text


def test_adaptive_l_keeps_only_needed_directions():
    rec = record_from_diagonals("S1", [4.0, 1.0, 1.0, 1.0], [4.0, 1.0, 1.0, 1.0],
                                [1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0])
    assert nonstationary_directions(rec, 3, adaptive_threshold=0.9).l == 1
    assert nonstationary_directions(rec, 3).l == 3


def test_nonstationary_directions_rejects_bad_l():
    rec = record_from_diagonals("S1", [2.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        nonstationary_directions(rec, 3)


def test_common_subspace_of_agreeing_donors():
    recs = [record_from_diagonals(f"D{i}", [1.0, 1.0, 1.0], [1.0, 1.0, 1.0],
                                  [1.0, 1.0, 3.0 + i], [1.0, 1.0, 3.0 + i]) for i in range(3)]
    basis = common_nonstationary_subspace([nonstationary_directions(r, 1) for r in recs], 1)
    assert_allclose(np.abs(basis.columns[:, 0]), [0.0, 0.0, 1.0], atol=1e-12)


def test_common_subspace_with_nu_zero_is_empty():
    rec = record_from_diagonals("D1", [2.0, 1.0], [1.0, 2.0], [1.0, 1.0], [1.0, 1.0])
    assert common_nonstationary_subspace([nonstationary_directions(rec, 1)], 0).k == 0


def test_common_subspace_ignores_donor_order_and_signs(small_population):
    records, _ = small_population
    dirs = [nonstationary_directions(r, 2) for r in records[1:]]
    flipped = NonstationaryDirections(dirs[0].subject_id, -dirs[0].vectors, dirs[0].eigenvalues, dirs[0].degenerate)
    reference = common_nonstationary_subspace(dirs, 3)
    shuffled = common_nonstationary_subspace([dirs[2], flipped, dirs[1]], 3)
    assert principal_angle_similarity(reference, shuffled) >= 1 - 1e-10


def test_toy_common_subspace_recovers_shared_noise(default_population):
    records, truth = default_population
    basis = build_penalty_subspace("S1", records[1:], SsCspConfig(l=5, nu=5), m=3)
    assert basis.k == 5
    assert principal_angle_similarity(basis, truth.nonstationary_span(0)) >= 0.85


def test_noise_only_subspace_agrees_with_plain_subspace(default_population):
    records, _ = default_population
    plain = build_penalty_subspace("S1", records[1:], SsCspConfig(l=5, nu=5), m=3)
    deflated = noise_only_subspace(records[1:], l=5, nu=5, m=3)
    assert principal_angle_similarity(plain, deflated) >= 0.8


def test_noise_only_flags_donor_whose_change_is_discriminative():
    donor = record_from_diagonals("D1", [4.0, 1.0, 1.0, 1.0], [1.0, 4.0, 1.0, 1.0],
                                  [8.0, 1.0, 1.0, 1.0], [2.0, 4.0, 1.0, 1.0])
    dirs = noise_only_directions([donor], l=1, m=1)
    assert dirs[0].degenerate


# ssCSP

def test_sscsp_penalty_orthogonal_to_target_discrimination_keeps_csp():
    target = record_from_diagonals("T", [4.0, 1.0, 1.0, 1.0], [1.0, 4.0, 1.0, 1.0])
    donors = [record_from_diagonals(f"D{i}", [1.0] * 4, [1.0] * 4, [1.0, 1.0, 1.0, 3.0], [1.0, 1.0, 1.0, 3.0])
              for i in range(2)]
    covs = target.train_class_covariances
    plain = csp_train(covs[1], covs[2], m=1)
    bank = sscsp_train(target, donors, SsCspConfig(l=1, nu=1), m=1)
    assert bank.method == "sscsp"
    assert np.all(_abs_cosines(plain.filters, bank.filters) >= 0.999)


def test_sscsp_with_nu_zero_matches_csp(small_population):
    records, _ = small_population
    covs = records[0].train_class_covariances
    plain = csp_train(covs[1], covs[2], m=2)
    bank = sscsp_train(records[0], records[1:], SsCspConfig(l=2, nu=0), m=2)
    assert np.all(_abs_cosines(plain.filters, bank.filters) >= 1 - 1e-8)


def test_sscsp_filters_avoid_penalty_subspace(small_population):
    records, _ = small_population
    cfg = SsCspConfig(l=2, nu=2)
    basis = build_penalty_subspace("S1", records[1:], cfg, m=2)
    bank = sscsp_train(records[0], records[1:], cfg, m=2)
    assert penalty_alignment(bank, basis) <= 1e-3


def test_penalized_filters_avoid_random_penalty_subspaces(rng):
    worst = 0.0
    for _ in range(100):
        S1, S2 = random_spd(8, rng), random_spd(8, rng)
        basis = random_orthonormal(8, 2, rng)
        bank = penalized_csp_train(S1, S2, 1e5 * basis.projector(), m=2)
        worst = max(worst, penalty_alignment(bank, basis))
    assert worst <= 1e-3


def test_sscsp_with_copies_of_target_avoids_its_own_nonstationarity(small_population):
    records, _ = small_population
    target = records[0]
    copies = [relabel(target, f"copy{i}") for i in range(3)]
    own = nonstationary_directions(target, 2)
    bank = sscsp_train(target, copies, SsCspConfig(l=2, nu=2), m=2)
    W = bank.filters / np.linalg.norm(bank.filters, axis=0)
    assert np.abs(W.T @ own.vectors).max() <= 1e-3


def test_sscsp_removes_target_from_donors(small_population, caplog):
    records, _ = small_population
    with caplog.at_level(logging.WARNING):
        bank = sscsp_train(records[0], records, SsCspConfig(l=2, nu=2), m=2)
    assert "Removed target" in caplog.text
    assert bank.filters.shape == (records[0].channels, 4)


def test_sscsp_without_donors_fails(small_population):
    records, _ = small_population
    with pytest.raises(ValueError, match="donor"):
        sscsp_train(records[0], [], SsCspConfig(l=2, nu=2), m=2)


def test_sscsp_rejects_nu_beyond_available_directions(small_population):
    records, _ = small_population
    with pytest.raises(ValueError, match="nu"):
        sscsp_train(records[0], records[1:2], SsCspConfig(l=1, nu=2), m=2)


def test_sscsp_config_validation():
    with pytest.raises(ValueError):
        SsCspConfig(l=0)
    with pytest.raises(ValueError):
        SsCspConfig(nu=-1)
    with pytest.raises(ValueError):
        SsCspConfig(session_scope="both")


def test_noise_only_sscsp_trains(small_population):
    records, _ = small_population
    bank = sscsp_train(records[0], records[1:], SsCspConfig(l=2, nu=2, noise_only=True), m=2)
    assert bank.info["noise_only"] is True


# ss+mtCSP

def test_ss_mt_with_nu_zero_is_plain_mtcsp(small_population):
    records, _ = small_population
    combined = ss_mt_csp_train(records[0], records[1:], SsCspConfig(l=2, nu=0), FAST_MT, m=2)
    plain = mtcsp_train_target(records[0], records[1:], FAST_MT, m=2)
    assert np.array_equal(combined.filters, plain.filters)


def test_ss_mt_filters_lie_in_complement(small_population):
    records, _ = small_population
    cfg = SsCspConfig(l=2, nu=3)
    basis = build_penalty_subspace("S1", records[1:], cfg, m=2)
    bank = ss_mt_csp_train(records[0], records[1:], cfg, FAST_MT, m=2)
    assert bank.method == "ss+mtcsp"
    assert np.abs(basis.columns.T @ bank.filters).max() <= 1e-10
    assert_allclose(bank.patterns.T @ bank.filters, np.eye(4), atol=1e-8)


def test_ss_mt_with_subject_specific_filters_matches_sscsp(small_population):
    records, _ = small_population
    cfg = SsCspConfig(l=2, nu=2)
    specific = MtCspConfig(lambda1=1e4, lambda2=1e-4)
    combined = ss_mt_csp_train(records[0], records[1:], cfg, specific, m=2)
    penalized = sscsp_train(records[0], records[1:], cfg, m=2)
    assert np.all(_abs_cosines(penalized.filters, combined.filters) >= 0.99)
