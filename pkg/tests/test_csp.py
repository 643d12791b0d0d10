import numpy as np
import pytest
from numpy.testing import assert_allclose

from models.spatial_filters import SpatialFilterBank
from services.csp import compute_patterns, csp_train, extract_features, log_variance_features, penalized_csp_train
from utils.numerics import OrthonormalBasis, principal_angle_similarity

from conftest import random_spd


def test_csp_diagonal_example():
    bank = csp_train(np.diag([4.0, 1.0]), np.diag([1.0, 4.0]), m=1)
    assert_allclose(bank.eigenvalues, [0.8, 0.2])
    assert_allclose(np.abs(bank.filters), np.eye(2), atol=1e-12)
    assert_allclose(np.abs(bank.patterns), np.eye(2), atol=1e-12)


def test_csp_equal_classes_gives_one_half():
    S = np.diag([2.0, 3.0])
    assert_allclose(csp_train(S, S, m=1).eigenvalues, [0.5, 0.5])


def test_csp_filters_are_unit_norm_and_ordered(rng):
    bank = csp_train(random_spd(8, rng), random_spd(8, rng), m=3)
    assert_allclose(np.linalg.norm(bank.filters, axis=0), 1.0)
    assert np.all(bank.eigenvalues[:3] >= bank.eigenvalues[3:].max())
    assert np.all((bank.eigenvalues >= 0) & (bank.eigenvalues <= 1))


def test_csp_rejects_too_many_filters():
    with pytest.raises(ValueError, match="channels"):
        csp_train(np.eye(3), np.eye(3), m=2)


def test_csp_is_scale_invariant(rng):
    S1, S2 = random_spd(6, rng), random_spd(6, rng)
    a = csp_train(S1, S2, m=2)
    b = csp_train(7.0 * S1, 7.0 * S2, m=2)
    assert_allclose(a.eigenvalues, b.eigenvalues)
    assert_allclose(np.abs(np.sum(a.filters * b.filters, axis=0)), 1.0, atol=1e-10)


def test_patterns_are_dual_to_filters(rng):
    S1, S2 = random_spd(6, rng), random_spd(6, rng)
    bank = csp_train(S1, S2, m=2)
    assert_allclose(bank.patterns.T @ bank.filters, np.eye(4), atol=1e-10)
    assert_allclose(compute_patterns(bank, 0.5 * (S1 + S2)), bank.patterns)


def test_penalized_csp_avoids_penalized_direction():
    penalty = np.zeros((3, 3))
    penalty[0, 0] = 1e5
    bank = penalized_csp_train(np.diag([4.0, 1.0, 1.0]), np.diag([1.0, 1.0, 4.0]), penalty, m=1)
    assert np.abs(bank.filters[0]).max() <= 1e-3


def test_penalized_csp_with_zero_penalty_matches_csp(rng):
    S1, S2 = random_spd(6, rng), random_spd(6, rng)
    plain = csp_train(S1, S2, m=2)
    penalized = penalized_csp_train(S1, S2, np.zeros((6, 6)), m=2)
    assert_allclose(np.abs(np.sum(plain.filters * penalized.filters, axis=0)), 1.0, atol=1e-8)


def test_penalized_csp_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="penalty"):
        penalized_csp_train(np.eye(3), np.eye(3), np.eye(2), m=1)


def test_log_variance_shift_under_scaling(rng):
    bank = csp_train(random_spd(4, rng), random_spd(4, rng), m=1)
    X = rng.standard_normal((4, 50))
    assert_allclose(log_variance_features(bank, 2.0 * X), log_variance_features(bank, X) + np.log(4.0), atol=1e-9)


def test_extract_features_matches_single_trial(rng):
    bank = csp_train(random_spd(4, rng), random_spd(4, rng), m=1)
    trials = rng.standard_normal((3, 4, 20))
    features = extract_features(bank, trials)
    assert features.shape == (3, 2)
    assert_allclose(features[1], log_variance_features(bank, trials[1]))


def test_features_reject_wrong_channel_count(rng):
    bank = csp_train(random_spd(4, rng), random_spd(4, rng), m=1)
    with pytest.raises(ValueError):
        log_variance_features(bank, np.zeros((3, 10)))


def test_bank_round_trip(rng):
    bank = csp_train(random_spd(4, rng), random_spd(4, rng), m=1)
    copy = SpatialFilterBank.from_dict(bank.to_dict())
    assert_allclose(copy.filters, bank.filters)
    assert_allclose(copy.patterns, bank.patterns)
    assert copy.m == 1 and copy.method == "csp"


def test_class1_filters_find_discriminative_sources(default_population):
    records, truth = default_population
    covs = records[0].train_class_covariances
    bank = csp_train(covs[1], covs[2], m=3)
    class1_span = OrthonormalBasis.from_span(bank.class1_filters)
    assert principal_angle_similarity(class1_span, truth.discriminative_span(0)) >= 0.8
