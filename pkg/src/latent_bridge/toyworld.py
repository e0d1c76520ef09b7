"""Synthetic ground truth: an affine "generator", a linear brain, and
attribute hyperplanes in latent space.

The generator ``x = A z + a0`` stands in for the image GAN, its
least-squares inverse stands in for the image encoder, and the brain
responds to a stimulus latent with ``y = B [z; 1] + noise``.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lbm
from .numerics import make_rng, solve_least_squares

# sub-stream ids for make_rng(seed, stream)
_WORLD_STREAM = 0
_DATASET_STREAM = 1

_CALIBRATION_SAMPLES = 10_000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    latent_dim: int = 64
    obs_dim: int = 128
    voxel_dim: int = 256
    attribute_count: int = 3
    noise_std: float = 0.1
    # per-voxel std of the noiseless response to a generic latent direction
    signal_std: float = 0.01
    # extra response gain along the attribute directions
    attribute_gain: float = 16.0
    n_train: int = 2000
    n_test_stimuli: int = 20
    trials_per_test: tuple[int, int] = (39, 53)
    seed: int = 7

    def __post_init__(self):
        # JSON round-trips give lists
        object.__setattr__(self, "trials_per_test", tuple(int(t) for t in self.trials_per_test))
        self.validate()

    def validate(self) -> None:
        counts = {
            "latent_dim": self.latent_dim,
            "obs_dim": self.obs_dim,
            "voxel_dim": self.voxel_dim,
            "attribute_count": self.attribute_count,
            "n_train": self.n_train,
            "n_test_stimuli": self.n_test_stimuli,
        }
        for name, value in counts.items():
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.obs_dim < self.latent_dim:
            raise ConfigError(
                f"obs_dim ({self.obs_dim}) must be >= latent_dim ({self.latent_dim}) "
                "for the generator to be invertible"
            )
        if self.voxel_dim < self.latent_dim + 1:
            raise ConfigError(f"voxel_dim ({self.voxel_dim}) must be >= latent_dim + 1 ({self.latent_dim + 1})")
        if len(self.trials_per_test) != 2:
            raise ConfigError("trials_per_test must be a [low, high] pair")
        lo, hi = self.trials_per_test
        if lo < 1 or hi < lo:
            raise ConfigError(f"trials_per_test range [{lo}, {hi}] is empty or non-positive")
        if not self.noise_std >= 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if not self.signal_std > 0:
            raise ConfigError(f"signal_std must be > 0, got {self.signal_std}")
        if not self.attribute_gain > 0:
            raise ConfigError(f"attribute_gain must be > 0, got {self.attribute_gain}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["trials_per_test"] = list(self.trials_per_test)
        return d


@dataclass(frozen=True, eq=False)
class World:
    gen_matrix: np.ndarray      # p x d
    gen_offset: np.ndarray      # p
    brain_map: np.ndarray       # V x (d+1), last column is the bias response
    attr_normals: np.ndarray    # m x d, unit rows
    attr_offsets: np.ndarray    # m
    config: WorldConfig

    @property
    def latent_dim(self) -> int:
        return self.gen_matrix.shape[1]

    @property
    def attribute_count(self) -> int:
        return self.attr_normals.shape[0]


@dataclass(frozen=True, eq=False)
class Dataset:
    train_latents: np.ndarray
    train_brain: np.ndarray
    train_obs: np.ndarray
    train_labels: np.ndarray
    test_stimulus_latents: np.ndarray
    test_trial_stimulus: np.ndarray   # stimulus index of each test trial
    test_trial_brain: np.ndarray      # one brain response per row
    test_labels: np.ndarray

    @property
    def n_test_stimuli(self) -> int:
        return self.test_stimulus_latents.shape[0]

    @property
    def test_trials(self) -> list[tuple[int, np.ndarray]]:
        return [(int(i), row) for i, row in zip(self.test_trial_stimulus, self.test_trial_brain)]

    def trials_of(self, stimulus: int) -> np.ndarray:
        return self.test_trial_brain[self.test_trial_stimulus == stimulus]


def _full_column_rank(a: np.ndarray) -> bool:
    s = np.linalg.svd(a, compute_uv=False)
    return s[-1] > s[0] * max(a.shape) * np.finfo(np.float64).eps * 1e3


def build_world(config: WorldConfig) -> World:
    config.validate()
    rng = make_rng(config.seed, _WORLD_STREAM)
    d, p, v, m = config.latent_dim, config.obs_dim, config.voxel_dim, config.attribute_count

    while True:
        gen = rng.standard_normal((p, d)) / np.sqrt(d)
        if _full_column_rank(gen):
            break
    gen_offset = rng.standard_normal(p)
    normals = rng.standard_normal((m, d))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    # random voxel tuning, scaled so a generic latent moves each voxel by
    # ~signal_std, with attribute directions amplified by attribute_gain
    brain_map = rng.standard_normal((v, d + 1)) * (config.signal_std / np.sqrt(d + 1))
    basis, _ = np.linalg.qr(normals.T)
    emphasis = np.eye(d) + (config.attribute_gain - 1.0) * (basis @ basis.T)
    brain_map[:, :d] = brain_map[:, :d] @ emphasis
    target_ratio = rng.uniform(0.40, 0.60, size=m)
    prior = rng.standard_normal((_CALIBRATION_SAMPLES, d))
    proj = prior @ normals.T
    # offset at the (1 - ratio) quantile leaves `ratio` of the prior on the + side
    offsets = np.array([np.quantile(proj[:, k], 1.0 - target_ratio[k]) for k in range(m)])

    return World(gen, gen_offset, brain_map, normals, offsets, config)


def generate_observation(world: World, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z @ world.gen_matrix.T + world.gen_offset


def invert_observation(world: World, x) -> np.ndarray:
    """Least-squares latent for observation(s) ``x`` (rows if 2-D)."""
    x = np.asarray(x, dtype=np.float64)
    rhs = (x - world.gen_offset).T
    z = solve_least_squares(world.gen_matrix, rhs)
    return z.T


def _sign(values) -> np.ndarray:
    return np.where(np.asarray(values) >= 0, 1, -1)


def _check_attribute(world: World, k: int) -> None:
    if not 0 <= k < world.attribute_count:
        raise IndexError(f"attribute index {k} out of range for {world.attribute_count} attributes")


def true_attribute(world: World, z, k: int):
    """sign(n_k . z - b_k) with sign(0) = +1; vectorised over rows of z."""
    _check_attribute(world, k)
    score = np.asarray(z, dtype=np.float64) @ world.attr_normals[k] - world.attr_offsets[k]
    out = _sign(score)
    return int(out) if out.ndim == 0 else out


def true_labels(world: World, z) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return _sign(z @ world.attr_normals.T - world.attr_offsets)


def oracle_image_classifier(world: World, x, k: int):
    return true_attribute(world, invert_observation(world, x), k)


def simulate_brain(world: World, z, rng: np.random.Generator) -> np.ndarray:
    """Noisy brain response(s) to latent(s) ``z``."""
    z = np.asarray(z, dtype=np.float64)
    clean = z @ world.brain_map[:, :-1].T + world.brain_map[:, -1]
    noise_std = world.config.noise_std
    if noise_std == 0:
        return clean
    return clean + noise_std * rng.standard_normal(clean.shape)


def build_dataset(world: World) -> Dataset:
    cfg = world.config
    rng = make_rng(cfg.seed, _DATASET_STREAM)
    d = cfg.latent_dim

    train_latents = rng.standard_normal((cfg.n_train, d))
    train_brain = simulate_brain(world, train_latents, rng)
    train_obs = generate_observation(world, train_latents)

    test_latents = rng.standard_normal((cfg.n_test_stimuli, d))
    lo, hi = cfg.trials_per_test
    counts = rng.integers(lo, hi + 1, size=cfg.n_test_stimuli)
    trial_stimulus = np.repeat(np.arange(cfg.n_test_stimuli), counts)
    trial_brain = simulate_brain(world, test_latents[trial_stimulus], rng)

    return Dataset(
        train_latents=train_latents,
        train_brain=train_brain,
        train_obs=train_obs,
        train_labels=true_labels(world, train_latents),
        test_stimulus_latents=test_latents,
        test_trial_stimulus=trial_stimulus,
        test_trial_brain=trial_brain,
        test_labels=true_labels(world, test_latents),
    )


# -- serialisation ---------------------------------------------------------

DATASET_FILES = (
    "train_latents.lbm",
    "train_brain.lbm",
    "train_obs.lbm",
    "train_labels.lbm",
    "test_stim_latents.lbm",
    "test_trials.lbm",
    "test_labels.lbm",
)


def world_to_dict(world: World) -> dict:
    return {
        "config": world.config.to_dict(),
        "gen_matrix": world.gen_matrix.tolist(),
        "gen_offset": world.gen_offset.tolist(),
        "brain_map": world.brain_map.tolist(),
        "attr_normals": world.attr_normals.tolist(),
        "attr_offsets": world.attr_offsets.tolist(),
    }


def world_from_dict(d: dict) -> World:
    return World(
        gen_matrix=np.asarray(d["gen_matrix"], dtype=np.float64),
        gen_offset=np.asarray(d["gen_offset"], dtype=np.float64),
        brain_map=np.asarray(d["brain_map"], dtype=np.float64),
        attr_normals=np.asarray(d["attr_normals"], dtype=np.float64),
        attr_offsets=np.asarray(d["attr_offsets"], dtype=np.float64),
        config=WorldConfig(**d["config"]),
    )


def save_dataset(directory: str | os.PathLike, world: World, dataset: Dataset) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    lbm.save(out / "train_latents.lbm", dataset.train_latents)
    lbm.save(out / "train_brain.lbm", dataset.train_brain)
    lbm.save(out / "train_obs.lbm", dataset.train_obs)
    lbm.save(out / "train_labels.lbm", dataset.train_labels)
    lbm.save(out / "test_stim_latents.lbm", dataset.test_stimulus_latents)
    trials = np.column_stack([dataset.test_trial_stimulus.astype(np.float64), dataset.test_trial_brain])
    lbm.save(out / "test_trials.lbm", trials)
    lbm.save(out / "test_labels.lbm", dataset.test_labels)
    with open(out / "world.json", "w", encoding="utf-8") as fh:
        json.dump(world_to_dict(world), fh, sort_keys=True)
        fh.write("\n")


def load_world(directory: str | os.PathLike) -> World:
    with open(Path(directory) / "world.json", encoding="utf-8") as fh:
        return world_from_dict(json.load(fh))


def load_dataset(directory: str | os.PathLike) -> Dataset:
    src = Path(directory)
    missing = [name for name in DATASET_FILES if not (src / name).is_file()]
    if missing:
        raise FileNotFoundError(f"dataset directory {src} is missing {', '.join(missing)}")
    trials = lbm.load(src / "test_trials.lbm")
    return Dataset(
        train_latents=lbm.load(src / "train_latents.lbm"),
        train_brain=lbm.load(src / "train_brain.lbm"),
        train_obs=lbm.load(src / "train_obs.lbm"),
        train_labels=lbm.load(src / "train_labels.lbm").astype(int),
        test_stimulus_latents=lbm.load(src / "test_stim_latents.lbm"),
        test_trial_stimulus=trials[:, 0].astype(int),
        test_trial_brain=trials[:, 1:],
        test_labels=lbm.load(src / "test_labels.lbm").astype(int),
    )
