"""Accuracy, vote accuracy, attribute consistency and the 2AFC proxy."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .manipulator import ReconstructionRecord, WorldOracle
from .numerics import make_rng


class EvaluationError(ValueError):
    pass


def accuracy(predictions, truths) -> float:
    p = np.asarray(predictions).reshape(-1)
    t = np.asarray(truths).reshape(-1)
    if p.size == 0:
        raise EvaluationError("accuracy of an empty prediction list is undefined")
    if p.shape != t.shape:
        raise EvaluationError(f"{p.size} predictions vs {t.size} truths")
    return float(np.count_nonzero(p == t)) / p.size


def vote_accuracy(votes, truths) -> float:
    # abstentions (0) never equal a +/-1 truth, so they count as misses
    return accuracy(votes, truths)


def attribute_consistency(records: list[ReconstructionRecord], oracle: WorldOracle, truths, use_edited: bool = True) -> dict[int, float]:
    """Per attribute, the fraction of stimuli whose reconstruction the oracle
    labels like the original stimulus. ``truths`` is the T x m label matrix."""
    if not records:
        raise EvaluationError("no reconstruction records")
    truths = np.asarray(truths)
    latents = np.array([r.edited_latent if use_edited else r.raw_latent for r in records])
    obs = oracle.observe(latents)
    stim = np.array([r.stimulus_index for r in records])
    out = {}
    for a in records[0].order:
        labels = oracle.classify(obs, a)
        out[a] = accuracy(labels, truths[stim, a])
    return out


def two_afc(records: list[ReconstructionRecord], target_observations, seed: int = 0, reconstructions=None) -> float:
    """Automated two-alternative forced choice.

    Each reconstruction is paired with one randomly drawn other stimulus; it
    scores when it lies strictly closer to its own stimulus' observation.
    ``reconstructions`` overrides the records' observations (used for null
    baselines).
    """
    targets = np.asarray(target_observations, dtype=np.float64)
    n = len(records)
    if n < 2:
        raise EvaluationError(f"2AFC needs at least 2 stimuli, got {n}")
    recon = np.array([r.observation for r in records]) if reconstructions is None else np.asarray(reconstructions)
    stim = np.array([r.stimulus_index for r in records])
    rng = make_rng(seed, 2)
    # uniform over the other n-1 stimuli, never the target itself
    offsets = rng.integers(1, n, size=n)
    other = stim[(np.arange(n) + offsets) % n]
    d_target = np.linalg.norm(recon - targets[stim], axis=1)
    d_other = np.linalg.norm(recon - targets[other], axis=1)
    return float(np.mean(d_target < d_other))


def trial_accuracy(predictions, trial_stimulus, truths) -> float:
    return accuracy(predictions, np.asarray(truths)[np.asarray(trial_stimulus)])


@dataclass
class EvalReport:
    attributes: dict            # attribute id -> {trial_acc, vote_acc, raw_consistency, edited_consistency}
    two_afc_acc: float
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    timestamp: str = ""
    version: str = ""

    def __post_init__(self):
        fractions = [self.two_afc_acc] + [v for m in self.attributes.values() for v in m.values()]
        if any(not 0.0 <= f <= 1.0 for f in fractions):
            raise EvaluationError("report fractions must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "attributes": {str(k): dict(v) for k, v in self.attributes.items()},
            "two_afc_acc": self.two_afc_acc,
            "config": self.config,
            "seeds": self.seeds,
            "timestamp": self.timestamp,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            attributes={int(k): dict(v) for k, v in d["attributes"].items()},
            two_afc_acc=d["two_afc_acc"],
            config=d.get("config", {}),
            seeds=d.get("seeds", {}),
            timestamp=d.get("timestamp", ""),
            version=d.get("version", ""),
        )


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_report(report: EvalReport, path: str | os.PathLike) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(report.to_dict()))
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc


def read_report(path: str | os.PathLike) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))


def summary_table(report: EvalReport) -> str:
    lines = [
        f"{'attribute':>9}  {'trial acc':>9}  {'vote acc':>8}  {'raw cons':>8}  {'edited cons':>11}",
    ]
    for k in sorted(report.attributes):
        m = report.attributes[k]
        lines.append(
            f"{k:>9}  {100 * m['trial_acc']:>8.2f}%  {100 * m['vote_acc']:>7.2f}%  "
            f"{100 * m['raw_consistency']:>7.2f}%  {100 * m['edited_consistency']:>10.2f}%"
        )
    lines.append(f"2AFC accuracy: {100 * report.two_afc_acc:.2f}%")
    return "\n".join(lines) + "\n"
