import numpy as np
import pytest

from latent_bridge import bridge, manipulator, neuroclassifier as nc, toyworld
from latent_bridge.boundary import Hyperplane, SvmConfig, fit_boundary
from latent_bridge.manipulator import ManipulationPolicy, PipelineError, WorldOracle


def true_plane(world, k):
    return Hyperplane(world.attr_normals[k].copy(), float(world.attr_offsets[k]), attribute_id=k)


def test_edit_latent_moves_along_normal():
    h = Hyperplane(np.array([0.0, 1.0]), 0.0)
    np.testing.assert_allclose(manipulator.edit_latent([1.0, 1.0], h, -1, 2.0, 0.5), [1.0, 0.0])


def test_step_scale_is_distance_spread(small_world, small_dataset):
    h = true_plane(small_world, 0)
    d = small_dataset.train_latents @ h.normal - h.offset
    assert np.isclose(manipulator.step_scale_for(h, small_dataset.train_latents), d.std())


def test_already_consistent_is_untouched(small_world):
    h = true_plane(small_world, 0)
    oracle = WorldOracle(small_world)
    z = h.offset * h.normal + 0.7 * h.normal
    out, steps, ok = manipulator.reconcile_attribute(z, h, 1, oracle, (1, 2, 3), 0.5)
    assert ok and steps == 0 and out is not None
    np.testing.assert_array_equal(out, z)


def test_abstain_leaves_latent(small_world):
    h = true_plane(small_world, 1)
    z = np.zeros(6)
    out, steps, ok = manipulator.reconcile_attribute(z, h, nc.ABSTAIN, WorldOracle(small_world), (1, 2, 3), 1.0)
    np.testing.assert_array_equal(out, z)
    assert ok and steps == 0


@pytest.mark.parametrize("dist,expected_step", [(0.4, 1.0), (1.5, 2.0), (2.9, 3.0)])
def test_smallest_sufficient_step_is_used(small_world, dist, expected_step):
    h = true_plane(small_world, 0)
    z = (h.offset - dist) * h.normal
    out, steps, ok = manipulator.reconcile_attribute(z, h, 1, WorldOracle(small_world), (1.0, 2.0, 3.0), 1.0)
    assert ok and steps == expected_step
    # every candidate restarts from the original latent
    np.testing.assert_allclose(out, z + expected_step * h.normal)


def test_out_of_reach_reports_unresolved(small_world):
    h = true_plane(small_world, 0)
    z = (h.offset + 4.0) * h.normal
    out, steps, ok = manipulator.reconcile_attribute(z, h, -1, WorldOracle(small_world), (1.0, 2.0, 3.0), 1.0)
    assert not ok and steps == 3.0
    np.testing.assert_allclose(out, z - 3.0 * h.normal)


def test_policy_validation():
    with pytest.raises(PipelineError):
        ManipulationPolicy(steps=(2, 1))
    with pytest.raises(PipelineError):
        ManipulationPolicy(step_scale={0: -1.0})
    p = ManipulationPolicy(steps=[1, 2], step_scale={"1": 0.5}, attributes=[1, 0])
    assert p.steps == (1.0, 2.0) and p.step_scale == {1: 0.5} and p.attributes == (1, 0)


@pytest.fixture(scope="module")
def pipeline_parts(small_world, small_dataset):
    ds = small_dataset
    mapping = bridge.fit_mapping(ds.train_latents, ds.train_brain)
    svm = SvmConfig(epochs=30)
    planes = [fit_boundary(ds.train_latents, ds.train_labels[:, k], svm, attribute_id=k) for k in range(2)]
    cfg = nc.MlpConfig(input_dim=24, epochs=3, seed=2)
    mlps = [nc.train(nc.init_model(cfg), ds.train_brain, ds.train_labels[:, k], cfg) for k in range(2)]
    return ds, mapping, planes, mlps


def test_pipeline_records(small_world, pipeline_parts):
    ds, mapping, planes, mlps = pipeline_parts
    oracle = WorldOracle(small_world)
    records = manipulator.reconstruct_pipeline(ds, mapping, planes, mlps, oracle)
    assert [r.stimulus_index for r in records] == list(range(6))
    decoded = bridge.brain_batch_to_latents(mapping, ds.test_trial_brain)
    for r in records:
        np.testing.assert_allclose(r.raw_latent, decoded[ds.test_trial_stimulus == r.stimulus_index].mean(axis=0))
        np.testing.assert_allclose(r.observation, oracle.observe(r.edited_latent))
        assert r.order == [0, 1]
        for o in r.outcomes:
            assert o.vote == nc.vote_direction(mlps[o.attribute_id], ds.trials_of(r.stimulus_index))


def test_pipeline_attribute_order_and_errors(small_world, pipeline_parts):
    ds, mapping, planes, mlps = pipeline_parts
    oracle = WorldOracle(small_world)
    recs = manipulator.reconstruct_pipeline(ds, mapping, planes, mlps, oracle, ManipulationPolicy(attributes=(1,)))
    assert [o.attribute_id for o in recs[0].outcomes] == [1]
    with pytest.raises(PipelineError):
        manipulator.reconstruct_pipeline(ds, mapping, planes, mlps[:1], oracle)
    with pytest.raises(PipelineError, match="no fitted boundary"):
        manipulator.reconstruct_pipeline(ds, mapping, planes, mlps, oracle, ManipulationPolicy(attributes=(4,)))


def test_records_roundtrip(tmp_path, small_world, pipeline_parts):
    ds, mapping, planes, mlps = pipeline_parts
    records = manipulator.reconstruct_pipeline(ds, mapping, planes, mlps, WorldOracle(small_world))
    manipulator.save_records(tmp_path / "r.json", records, {"k": 1})
    back = manipulator.load_records(tmp_path / "r.json")
    assert [r.to_dict() for r in back] == [r.to_dict() for r in records]
    with pytest.raises(KeyError):
        back[0].vote_for(9)


def test_oracle_matches_toyworld_inversion(small_world):
    oracle = WorldOracle(small_world)
    x = toyworld.generate_observation(small_world, np.random.default_rng(8).standard_normal((20, 6)))
    np.testing.assert_allclose(oracle.invert(x), toyworld.invert_observation(small_world, x), atol=1e-12)
    for k in range(2):
        np.testing.assert_array_equal(oracle.classify(x, k), toyworld.oracle_image_classifier(small_world, x, k))
