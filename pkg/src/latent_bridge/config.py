"""Run configuration: one JSON file covering every stage."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .boundary import SvmConfig
from .manipulator import ManipulationPolicy
from .neuroclassifier import MlpConfig
from .toyworld import WorldConfig


class ConfigError(ValueError):
    pass


DEFAULT_THRESHOLDS = {
    # edited minus raw attribute consistency, averaged over attributes
    "min_consistency_gain": 0.0,
    # vote accuracy may trail per-trial accuracy by at most this much;
    # one stimulus out of the default 20 is 0.05
    "max_vote_deficit": 0.05,
    "min_two_afc": 0.55,
}

_SECTIONS = {"world", "svm", "mlp", "policy", "ridge", "seed", "out", "thresholds"}


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = WorldConfig()
    svm: SvmConfig = SvmConfig()
    mlp: dict = field(default_factory=dict)     # MlpConfig fields minus input_dim
    policy: ManipulationPolicy = ManipulationPolicy()
    ridge: float = 0.0
    seed: int = 7
    out: str = "runs/default"
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))

    def mlp_config(self) -> MlpConfig:
        return MlpConfig(input_dim=self.world.voxel_dim, **{**self.mlp, "seed": self.seed})

    def to_dict(self) -> dict:
        return {
            "world": self.world.to_dict(),
            "svm": dataclasses.asdict(self.svm),
            "mlp": {k: v for k, v in self.mlp_config().to_dict().items() if k != "input_dim"},
            "policy": self.policy.to_dict(),
            "ridge": self.ridge,
            "seed": self.seed,
            "out": self.out,
            "thresholds": dict(sorted(self.thresholds.items())),
        }


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _reject_unknown(section: str, given: dict, allowed: set[str]) -> None:
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")


def from_dict(raw: dict, seed: int | None = None, ridge: float | None = None, out: str | None = None) -> RunConfig:
    """Validate a parsed config; command-line overrides win over file values."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown("<root>", raw, _SECTIONS)
    seed = int(raw.get("seed", 7) if seed is None else seed)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    ridge = float(raw.get("ridge", 0.0) if ridge is None else ridge)
    if ridge < 0:
        raise ConfigError(f"ridge must be >= 0, got {ridge}")

    sections = {name: dict(raw.get(name) or {}) for name in ("world", "svm", "mlp", "policy", "thresholds")}
    _reject_unknown("world", sections["world"], _fields(WorldConfig))
    _reject_unknown("svm", sections["svm"], _fields(SvmConfig))
    _reject_unknown("mlp", sections["mlp"], _fields(MlpConfig) - {"input_dim"})
    _reject_unknown("policy", sections["policy"], _fields(ManipulationPolicy))
    _reject_unknown("thresholds", sections["thresholds"], set(DEFAULT_THRESHOLDS))

    try:
        world = WorldConfig(**{**sections["world"], "seed": seed})
        svm = SvmConfig(**{**sections["svm"], "seed": seed})
        mlp = {k: v for k, v in sections["mlp"].items() if k != "seed"}
        policy = ManipulationPolicy(**sections["policy"])
        cfg = RunConfig(
            world=world,
            svm=svm,
            mlp=mlp,
            policy=policy,
            ridge=ridge,
            seed=seed,
            out=str(raw.get("out", "runs/default") if out is None else out),
            thresholds={**DEFAULT_THRESHOLDS, **sections["thresholds"]},
        )
        cfg.mlp_config()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if policy.attributes is not None:
        bad = [a for a in policy.attributes if not 0 <= a < world.attribute_count]
        if bad:
            raise ConfigError(f"policy.attributes {bad} outside 0..{world.attribute_count - 1}")
    return cfg


def load(path: str | os.PathLike | None, **overrides) -> RunConfig:
    if path is None:
        return from_dict({}, **overrides)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    return from_dict(raw, **overrides)
