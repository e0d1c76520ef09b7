"""Hyperplane-walking attribute edits and the per-stimulus reconstruction loop."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import bridge, neuroclassifier, toyworld
from .boundary import Hyperplane, signed_distance
from .neuroclassifier import ABSTAIN
from .numerics import solve_least_squares


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class ManipulationPolicy:
    steps: tuple = (1.0, 2.0, 3.0)
    # attribute id -> scale; missing ids fall back to the training-latent spread
    step_scale: dict = field(default_factory=dict)
    attributes: tuple | None = None

    def __post_init__(self):
        steps = tuple(float(s) for s in self.steps)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "step_scale", {int(k): float(v) for k, v in dict(self.step_scale).items()})
        if self.attributes is not None:
            object.__setattr__(self, "attributes", tuple(int(a) for a in self.attributes))
        if not steps or steps[0] <= 0 or any(b <= a for a, b in zip(steps, steps[1:])):
            raise PipelineError(f"steps must be positive and strictly increasing, got {list(steps)}")
        bad = {k: v for k, v in self.step_scale.items() if not v > 0}
        if bad:
            raise PipelineError(f"step_scale entries must be positive, got {bad}")

    def to_dict(self) -> dict:
        return {
            "steps": list(self.steps),
            "step_scale": {str(k): v for k, v in sorted(self.step_scale.items())},
            "attributes": None if self.attributes is None else list(self.attributes),
        }


class WorldOracle:
    """Generator plus image-attribute classifier of a toy world."""

    def __init__(self, world: toyworld.World):
        self.world = world
        # left pseudoinverse of the generator, computed once; same result as
        # toyworld.invert_observation without a fresh SVD per call
        p = world.gen_matrix.shape[0]
        self._inverse = solve_least_squares(world.gen_matrix, np.eye(p))

    def observe(self, z) -> np.ndarray:
        return toyworld.generate_observation(self.world, z)

    def invert(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.world.gen_offset) @ self._inverse.T

    def classify(self, x, k: int):
        return toyworld.true_attribute(self.world, self.invert(x), k)


@dataclass
class AttributeOutcome:
    attribute_id: int
    vote: int
    steps_applied: float
    resolved: bool
    step_scale: float


@dataclass
class ReconstructionRecord:
    stimulus_index: int
    raw_latent: np.ndarray
    edited_latent: np.ndarray
    observation: np.ndarray
    outcomes: list[AttributeOutcome]
    order: list[int]

    def to_dict(self) -> dict:
        return {
            "stimulus_index": self.stimulus_index,
            "raw_latent": self.raw_latent.tolist(),
            "edited_latent": self.edited_latent.tolist(),
            "observation": self.observation.tolist(),
            "attribute_order": list(self.order),
            "attributes": [
                {
                    "attribute_id": o.attribute_id,
                    "vote": o.vote,
                    "steps_applied": o.steps_applied,
                    "resolved": o.resolved,
                    "step_scale": o.step_scale,
                }
                for o in self.outcomes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReconstructionRecord":
        return cls(
            stimulus_index=int(d["stimulus_index"]),
            raw_latent=np.asarray(d["raw_latent"], dtype=np.float64),
            edited_latent=np.asarray(d["edited_latent"], dtype=np.float64),
            observation=np.asarray(d["observation"], dtype=np.float64),
            outcomes=[AttributeOutcome(**o) for o in d["attributes"]],
            order=[int(a) for a in d["attribute_order"]],
        )

    def vote_for(self, attribute_id: int) -> int:
        for o in self.outcomes:
            if o.attribute_id == attribute_id:
                return o.vote
        raise KeyError(attribute_id)


def edit_latent(z, h: Hyperplane, alpha: int, step: float, scale: float) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) + (alpha * step * scale) * h.normal


def step_scale_for(h: Hyperplane, train_latents) -> float:
    """Spread of the training latents' signed distances to ``h``."""
    return float(np.std(signed_distance(h, np.atleast_2d(train_latents))))


def reconcile_attribute(z, h: Hyperplane, target, oracle: WorldOracle, steps, scale: float):
    """Walk ``z`` along ``h.normal`` until the oracle agrees with ``target``.

    Candidate steps are tried in order, each measured from the original
    ``z``. Returns ``(edited, steps_applied, resolved)``; when no step
    agrees the largest edit is returned with ``resolved=False``.
    """
    z = np.asarray(z, dtype=np.float64)
    if target == ABSTAIN:
        return z, 0.0, True
    k = h.attribute_id
    if oracle.classify(oracle.observe(z), k) == target:
        return z, 0.0, True
    edited = z
    for step in steps:
        edited = edit_latent(z, h, target, step, scale)
        if oracle.classify(oracle.observe(edited), k) == target:
            return edited, float(step), True
    return edited, float(steps[-1]), False


def reconstruct_pipeline(
    dataset: toyworld.Dataset,
    mapping: bridge.MappingModel,
    boundaries: list[Hyperplane],
    mlps: list,
    oracle: WorldOracle,
    policy: ManipulationPolicy = ManipulationPolicy(),
) -> list[ReconstructionRecord]:
    by_id = {h.attribute_id: h for h in boundaries}
    if len(boundaries) != len(mlps) or len(by_id) != len(boundaries):
        raise PipelineError(f"{len(boundaries)} boundaries and {len(mlps)} classifiers do not align one-to-one")
    order = list(policy.attributes) if policy.attributes is not None else [h.attribute_id for h in boundaries]
    missing = [a for a in order if a not in by_id]
    if missing:
        raise PipelineError(f"policy names attributes {missing} that have no fitted boundary")
    mlp_for = {h.attribute_id: m for h, m in zip(boundaries, mlps)}
    scales = {
        a: policy.step_scale.get(a) or step_scale_for(by_id[a], dataset.train_latents)
        for a in order
    }

    decoded = bridge.brain_batch_to_latents(mapping, dataset.test_trial_brain)
    predictions = {a: neuroclassifier.predict_batch(mlp_for[a], dataset.test_trial_brain) for a in order}

    records = []
    for s in range(dataset.n_test_stimuli):
        rows = dataset.test_trial_stimulus == s
        if not rows.any():
            raise PipelineError(f"test stimulus {s} has no trials")
        raw = decoded[rows].mean(axis=0)
        z = raw
        outcomes = []
        for a in order:
            vote = neuroclassifier.majority(predictions[a][rows])
            z, steps_applied, resolved = reconcile_attribute(z, by_id[a], vote, oracle, policy.steps, scales[a])
            outcomes.append(AttributeOutcome(a, vote, steps_applied, resolved, scales[a]))
        records.append(ReconstructionRecord(s, raw, z, oracle.observe(z), outcomes, order))
    return records


def save_records(path: str | os.PathLike, records: list[ReconstructionRecord], extra: dict | None = None) -> None:
    payload = {"records": [r.to_dict() for r in records]}
    payload.update(extra or {})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_records(path: str | os.PathLike) -> list[ReconstructionRecord]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return [ReconstructionRecord.from_dict(d) for d in payload["records"]]
