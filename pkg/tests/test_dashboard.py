import pytest

pytest.importorskip("gradio")

from app.gradio_interface import MultiSubjectCspInterface  # noqa: E402


@pytest.fixture
def dashboard():
    return MultiSubjectCspInterface(build_ui=False)


def test_similarity_needs_a_population(dashboard):
    status, frame = dashboard.similarity_report("discriminative", 6)
    assert status.startswith("⚠️")
    assert frame.empty


def test_generate_population_reports_ground_truth(dashboard):
    status, frame = dashboard.generate_population(3, 0.0, "A", 0, 10)
    assert status.startswith("✅")
    assert list(frame["subject"]) == ["S1", "S2", "S3"]
    assert (frame["discriminative"] == 1.0).all()

    status, table = dashboard.similarity_report("nonstationary", 3)
    assert status.startswith("Mean nonstationary similarity")
    assert len(table) == 3


def test_invalid_population_is_reported(dashboard):
    status, _ = dashboard.generate_population(3, -1.0, "A", 0, 10)
    assert status.startswith("❌")


def test_quick_experiment_needs_methods(dashboard):
    status, _, _ = dashboard.quick_experiment([], 0.0, "A", 1)
    assert status.startswith("⚠️")


def test_quick_experiment_runs_csp(dashboard):
    status, summary, results = dashboard.quick_experiment(["csp"], 0.0, "A", 1)
    assert status.startswith("✅")
    assert list(summary["method"]) == ["csp"]
    assert len(results) == 1
