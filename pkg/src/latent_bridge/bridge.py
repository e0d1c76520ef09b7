"""Linear brain decoder.

A mapping ``W`` with ``Y = [Z | 1] @ W`` is fitted by least squares on the
training stimuli. Decoding applies the right pseudoinverse of ``W``, drops
the bias coordinate and aligns the decoded codes with the training latent
statistics.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lbm
from .numerics import ShapeError, as_matrix, column_stats, right_pinv_apply, solve_least_squares


class ZeroVarianceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MappingModel:
    w: np.ndarray                   # (d+1) x V, last row is the bias response
    train_latent_means: np.ndarray
    train_latent_stds: np.ndarray
    ridge_used: float = 0.0
    # mean of the decoded training brain rows; used for single-vector decoding
    decoded_train_means: np.ndarray | None = None

    @property
    def latent_dim(self) -> int:
        return self.w.shape[0] - 1

    @property
    def voxel_dim(self) -> int:
        return self.w.shape[1]


def augment(latents) -> np.ndarray:
    latents = as_matrix(latents, "latents")
    return np.hstack([latents, np.ones((latents.shape[0], 1))])


def fit_mapping(latents, brain, ridge: float = 0.0) -> MappingModel:
    latents = as_matrix(latents, "latents")
    brain = as_matrix(brain, "brain")
    n, d = latents.shape
    if brain.shape[0] != n:
        raise ShapeError(f"latents have {n} rows but brain has {brain.shape[0]}")
    if n < 2:
        raise ShapeError(f"need at least 2 training rows, got {n}")
    if ridge == 0 and n < d + 1:
        raise ShapeError(f"{n} rows cannot determine a {d + 1}-row mapping without ridge; set ridge > 0")

    means, stds = column_stats(latents)
    flat = np.flatnonzero(stds == 0)
    if flat.size:
        raise ZeroVarianceError(f"latent dimension {int(flat[0])} has zero variance in the training set")

    w = solve_least_squares(augment(latents), brain, ridge)
    decoded = right_pinv_apply(brain, w, ridge)[:, :-1]
    return MappingModel(
        w=w,
        train_latent_means=means,
        train_latent_stds=stds,
        ridge_used=float(ridge),
        decoded_train_means=decoded.mean(axis=0),
    )


def _check_latent(model: MappingModel, z: np.ndarray) -> None:
    if z.shape[-1] != model.latent_dim:
        raise ShapeError(f"latent has length {z.shape[-1]}, model expects {model.latent_dim}")


def latent_to_brain(model: MappingModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    _check_latent(model, z)
    return z @ model.w[:-1] + model.w[-1]


def decode_raw(model: MappingModel, ys) -> np.ndarray:
    """Pseudoinverse decode without normalisation; bias coordinate dropped."""
    ys = np.asarray(ys, dtype=np.float64)
    if ys.shape[-1] != model.voxel_dim:
        raise ShapeError(f"brain response has length {ys.shape[-1]}, model expects {model.voxel_dim}")
    return right_pinv_apply(ys, model.w, model.ridge_used)[..., :-1]


def brain_to_latent(model: MappingModel, y, normalize: bool = True) -> np.ndarray:
    """Decode a single brain response.

    One sample has no spread of its own, so normalisation here is a pure
    shift that moves the decoder's training-set mean onto the training
    latent mean. No variance scaling is applied.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ShapeError(f"brain_to_latent takes one response vector, got shape {y.shape}")
    z = decode_raw(model, y)
    if normalize and model.decoded_train_means is not None:
        z = z + (model.train_latent_means - model.decoded_train_means)
    return z


def align_to_training(model: MappingModel, codes) -> np.ndarray:
    """Per-dimension affine map taking the batch mean/std to the training ones."""
    codes = as_matrix(codes, "codes")
    means, stds = column_stats(codes)
    safe = np.where(stds > 0, stds, 1.0)
    return (codes - means) / safe * model.train_latent_stds + model.train_latent_means


def brain_batch_to_latents(model: MappingModel, ys) -> np.ndarray:
    ys = as_matrix(ys, "ys")
    if ys.shape[0] < 2:
        raise ShapeError(f"batch decoding needs at least 2 responses for normalisation, got {ys.shape[0]}")
    return align_to_training(model, decode_raw(model, ys))


def residual_diagnostics(model: MappingModel, latents, brain) -> dict:
    z = augment(latents)
    brain = as_matrix(brain, "brain")
    resid = z @ model.w - brain
    normal_eq = z.T @ resid
    return {
        "relative_residual": float(np.linalg.norm(resid) / max(np.linalg.norm(brain), 1e-300)),
        "normal_equation_residual": float(
            np.linalg.norm(normal_eq) / max(np.linalg.norm(z.T @ brain), 1e-300)
        ),
    }


def save_mapping(directory: str | os.PathLike, model: MappingModel, extra: dict | None = None) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    lbm.save(out / "mapping.lbm", model.w)
    meta = {
        "train_latent_means": model.train_latent_means.tolist(),
        "train_latent_stds": model.train_latent_stds.tolist(),
        "decoded_train_means": None if model.decoded_train_means is None else model.decoded_train_means.tolist(),
        "ridge_used": model.ridge_used,
    }
    meta.update(extra or {})
    with open(out / "mapping.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_mapping(directory: str | os.PathLike) -> MappingModel:
    src = Path(directory)
    with open(src / "mapping.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    decoded = meta.get("decoded_train_means")
    return MappingModel(
        w=lbm.load(src / "mapping.lbm"),
        train_latent_means=np.asarray(meta["train_latent_means"]),
        train_latent_stds=np.asarray(meta["train_latent_stds"]),
        ridge_used=float(meta["ridge_used"]),
        decoded_train_means=None if decoded is None else np.asarray(decoded),
    )
