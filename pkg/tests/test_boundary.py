import numpy as np
import pytest

from latent_bridge import boundary
from latent_bridge.boundary import BoundaryError, Hyperplane, SvmConfig

FAST = SvmConfig(epochs=40)


@pytest.fixture(scope="module")
def separable():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((600, 5))
    normal = np.array([0.6, -0.8, 0.0, 0.0, 0.0])
    labels = np.where(z @ normal - 0.2 >= 0, 1, -1)
    return z, labels, normal


def test_recovers_true_direction(separable):
    z, labels, normal = separable
    h = boundary.fit_boundary(z, labels, FAST)
    assert np.isclose(np.linalg.norm(h.normal), 1.0)
    assert h.normal @ normal > 0.98
    assert h.train_accuracy > 0.97 and h.validation_accuracy > 0.95


def test_objective_never_increases(separable):
    z, labels, _ = separable
    hist = np.array(boundary.fit_boundary(z, labels, FAST).objective_history)
    assert len(hist) == FAST.epochs + 1
    assert np.all(np.diff(hist) <= 0)


def test_scaling_invariance(separable):
    z, labels, _ = separable
    a = boundary.fit_boundary(z, labels, FAST)
    b = boundary.fit_boundary(7.5 * z, labels, FAST)
    np.testing.assert_array_equal(boundary.classify_latent(a, z), boundary.classify_latent(b, 7.5 * z))


def test_deterministic(separable):
    z, labels, _ = separable
    a = boundary.fit_boundary(z, labels, FAST, attribute_id=2)
    b = boundary.fit_boundary(z, labels, FAST, attribute_id=2)
    np.testing.assert_array_equal(a.normal, b.normal)
    assert a.attribute_id == 2


def test_label_checks(separable):
    z, labels, _ = separable
    with pytest.raises(BoundaryError, match="one class"):
        boundary.fit_boundary(z, np.ones(len(z)), FAST)
    with pytest.raises(BoundaryError, match="-1 or \\+1"):
        boundary.fit_boundary(z, np.where(labels > 0, 1, 0), FAST)
    with pytest.raises(BoundaryError):
        boundary.fit_boundary(z, labels[:-1], FAST)
    with pytest.raises(BoundaryError):
        SvmConfig(C=0)


def test_signed_distance_and_tie():
    h = Hyperplane(np.array([1.0, 0.0]), 0.5)
    assert boundary.signed_distance(h, [2.0, 9.0]) == 1.5
    assert boundary.classify_latent(h, [0.5, 3.0]) == 1
    np.testing.assert_array_equal(boundary.classify_latent(h, [[0.0, 0.0], [1.0, 0.0]]), [-1, 1])


def test_conditionalize_orthogonal_to_held():
    n1 = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    n2 = np.array([0.0, 1.0, 0.0])
    primary = Hyperplane(n1, 0.8, attribute_id=0)
    held = Hyperplane(n2, -0.3, attribute_id=1)
    c = boundary.conditionalize(primary, held)
    assert abs(c.normal @ n2) < 1e-12
    assert np.isclose(np.linalg.norm(c.normal), 1.0)
    # moving along the new normal leaves the held attribute's score unchanged
    z = np.array([0.2, -0.4, 1.0])
    assert np.isclose(boundary.signed_distance(held, z + 3 * c.normal), boundary.signed_distance(held, z))


def test_conditionalize_keeps_orthogonal_primary():
    primary = Hyperplane(np.array([1.0, 0.0]), 0.4)
    held = Hyperplane(np.array([0.0, 1.0]), 1.0, attribute_id=1)
    c = boundary.conditionalize(primary, held)
    np.testing.assert_allclose(c.normal, primary.normal)
    assert np.isclose(c.offset, primary.offset)


def test_conditionalize_parallel_rejected():
    h = Hyperplane(np.array([0.0, 1.0]), 0.0)
    with pytest.raises(BoundaryError, match="parallel"):
        boundary.conditionalize(h, Hyperplane(np.array([0.0, -1.0]), 1.0, attribute_id=1))


def test_save_load(tmp_path, separable):
    z, labels, _ = separable
    h = boundary.fit_boundary(z, labels, FAST)
    boundary.save_boundary(tmp_path / "b.json", h, {"extra": True})
    back = boundary.load_boundary(tmp_path / "b.json")
    np.testing.assert_array_equal(back.normal, h.normal)
    assert back.offset == h.offset and back.validation_accuracy == h.validation_accuracy
