import json

import numpy as np
import pytest

from latent_bridge import evaluation, toyworld
from latent_bridge.evaluation import EvalReport, EvaluationError
from latent_bridge.manipulator import ReconstructionRecord, WorldOracle


def record(i, raw, edited, obs, order=(0,)):
    return ReconstructionRecord(i, np.asarray(raw, float), np.asarray(edited, float), np.asarray(obs, float), [], list(order))


def test_accuracy():
    assert evaluation.accuracy([1, -1, 1], [1, 1, 1]) == pytest.approx(2 / 3)
    with pytest.raises(EvaluationError):
        evaluation.accuracy([], [])
    with pytest.raises(EvaluationError):
        evaluation.accuracy([1], [1, 1])


def test_abstentions_count_as_misses():
    assert evaluation.vote_accuracy([0, 1], [1, 1]) == 0.5


def test_trial_accuracy_maps_stimuli():
    preds = [1, 1, -1, -1]
    stim = [0, 0, 1, 1]
    assert evaluation.trial_accuracy(preds, stim, [1, 1]) == 0.5


def test_two_afc_perfect_and_inverted():
    targets = np.eye(5) * 10
    recs = [record(i, [0], [0], targets[i] + 0.1) for i in range(5)]
    assert evaluation.two_afc(recs, targets) == 1.0
    # every reconstruction sits on some other target: never strictly closer to its own
    swapped = [record(i, [0], [0], targets[(i + 1) % 5]) for i in range(5)]
    assert evaluation.two_afc(swapped, targets, seed=3) < 1.0


def test_two_afc_never_pairs_with_itself():
    # an exact reconstruction ties with itself, so any self-pairing would
    # cost a point; over many seeds the score must stay perfect
    targets = np.random.default_rng(2).standard_normal((3, 4))
    recs = [record(i, [0], [0], targets[i]) for i in range(3)]
    assert all(evaluation.two_afc(recs, targets, seed=s) == 1.0 for s in range(200))
    with pytest.raises(EvaluationError):
        evaluation.two_afc(recs[:1], targets)


def test_two_afc_null_is_chance():
    rng = np.random.default_rng(0)
    targets = rng.standard_normal((200, 10))
    recs = [record(i, [0], [0], targets[i]) for i in range(200)]
    noise = rng.standard_normal((200, 10))
    assert abs(evaluation.two_afc(recs, targets, reconstructions=noise) - 0.5) < 0.1


def test_attribute_consistency(small_world):
    rng = np.random.default_rng(1)
    z = rng.standard_normal((8, 6))
    truths = toyworld.true_labels(small_world, z)
    oracle = WorldOracle(small_world)
    recs = [record(i, -z[i], z[i], oracle.observe(z[i]), order=(0, 1)) for i in range(8)]
    edited = evaluation.attribute_consistency(recs, oracle, truths, use_edited=True)
    assert edited == {0: 1.0, 1: 1.0}
    raw = evaluation.attribute_consistency(recs, oracle, truths, use_edited=False)
    flipped = toyworld.true_labels(small_world, -z)
    assert raw[0] == pytest.approx(np.mean(flipped[:, 0] == truths[:, 0]))


def test_report_roundtrip_and_validation(tmp_path):
    rep = EvalReport({0: {"trial_acc": 0.5, "vote_acc": 1.0, "raw_consistency": 0.25, "edited_consistency": 0.75}},
                     0.8, config={"a": 1}, seeds={"world": 7}, timestamp="t", version="v0")
    evaluation.write_report(rep, tmp_path / "r.json")
    text = (tmp_path / "r.json").read_text()
    assert text == evaluation.canonical_json(rep.to_dict())
    assert evaluation.read_report(tmp_path / "r.json") == rep
    assert list(json.loads(text)) == sorted(json.loads(text))
    with pytest.raises(EvaluationError):
        EvalReport({}, 1.5)
    with pytest.raises(OSError, match="cannot write report"):
        evaluation.write_report(rep, tmp_path / "missing" / "r.json")


def test_summary_table():
    rep = EvalReport({1: {"trial_acc": 0.5, "vote_acc": 1.0, "raw_consistency": 0.25, "edited_consistency": 0.75}}, 0.8)
    table = evaluation.summary_table(rep)
    assert "50.00%" in table and "100.00%" in table and "2AFC accuracy: 80.00%" in table
