"""Attribute hyperplanes in latent space, fitted with a linear SVM."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .numerics import as_matrix, make_rng


class BoundaryError(ValueError):
    pass


@dataclass(frozen=True)
class SvmConfig:
    C: float = 1.0
    epochs: int = 200
    learning_rate: float = 2.0
    lr_decay: float = 0.02
    batch_size: int = 32
    seed: int = 7

    def __post_init__(self):
        if not self.C > 0:
            raise BoundaryError(f"C must be positive, got {self.C}")
        if self.epochs < 1:
            raise BoundaryError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0 or self.lr_decay < 0:
            raise BoundaryError("learning_rate must be > 0 and lr_decay >= 0")
        if self.batch_size < 1:
            raise BoundaryError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True, eq=False)
class Hyperplane:
    normal: np.ndarray
    offset: float
    attribute_id: int = 0
    validation_accuracy: float = float("nan")
    train_accuracy: float = float("nan")
    objective_history: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "attribute_id": self.attribute_id,
            "normal": self.normal.tolist(),
            "offset": self.offset,
            "validation_accuracy": self.validation_accuracy,
            "train_accuracy": self.train_accuracy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperplane":
        return cls(
            normal=np.asarray(d["normal"], dtype=np.float64),
            offset=float(d["offset"]),
            attribute_id=int(d["attribute_id"]),
            validation_accuracy=float(d.get("validation_accuracy", float("nan"))),
            train_accuracy=float(d.get("train_accuracy", float("nan"))),
        )


def signed_distance(h: Hyperplane, z):
    out = np.asarray(z, dtype=np.float64) @ h.normal - h.offset
    return float(out) if np.ndim(out) == 0 else out


def classify_latent(h: Hyperplane, z):
    out = np.where(np.asarray(signed_distance(h, z)) >= 0, 1, -1)
    return int(out) if out.ndim == 0 else out


def _objective(w, b, x, y, lam) -> float:
    margins = y * (x @ w - b)
    return 0.5 * lam * float(w @ w) + float(np.mean(np.maximum(0.0, 1.0 - margins)))


def _check_labels(labels: np.ndarray) -> None:
    bad = ~np.isin(labels, (-1, 1))
    if bad.any():
        raise BoundaryError(f"labels must be -1 or +1, found {labels[bad][0]!r}")
    if np.all(labels == labels[0]):
        raise BoundaryError(f"only one class present (all labels are {int(labels[0]):+d})")


def _train_svm(x, y, cfg: SvmConfig, rng):
    """Mini-batch subgradient descent on lam/2 |w|^2 + mean hinge.

    An epoch whose end-of-epoch objective is worse than the previous one is
    rolled back and the step size halved, so the recorded objective never
    increases.
    """
    n, d = x.shape
    lam = 1.0 / (cfg.C * n)
    w = np.zeros(d)
    b = 0.0
    best = _objective(w, b, x, y, lam)
    history = [best]
    shrink = 1.0
    for epoch in range(cfg.epochs):
        lr = shrink * cfg.learning_rate / (1.0 + cfg.lr_decay * epoch)
        w_try, b_try = w.copy(), b
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            active = yb * (xb @ w_try - b_try) < 1.0
            grad_w = lam * w_try - (yb[active] @ xb[active]) / len(idx)
            grad_b = np.sum(yb[active]) / len(idx)
            w_try -= lr * grad_w
            b_try -= lr * grad_b
        obj = _objective(w_try, b_try, x, y, lam)
        if obj <= best:
            w, b, best = w_try, b_try, obj
        else:
            shrink *= 0.5
        history.append(best)
    return w, b, history


def fit_boundary(latents, labels, cfg: SvmConfig = SvmConfig(), attribute_id: int = 0) -> Hyperplane:
    x = as_matrix(latents, "latents")
    y = np.asarray(labels).reshape(-1)
    if y.shape[0] != x.shape[0]:
        raise BoundaryError(f"{x.shape[0]} latents but {y.shape[0]} labels")
    if x.shape[0] < 4:
        raise BoundaryError(f"need at least 4 samples, got {x.shape[0]}")
    _check_labels(y)
    y = y.astype(np.float64)

    rng = make_rng(cfg.seed, attribute_id)
    order = rng.permutation(x.shape[0])
    n_train = int(round(0.8 * x.shape[0]))
    tr, va = order[:n_train], order[n_train:]
    if np.all(y[tr] == y[tr][0]):
        raise BoundaryError("training split holds a single class; supply more balanced data")

    # standardise per feature so the fit is invariant to rescaling the latents
    mu = x[tr].mean(axis=0)
    sd = x[tr].std(axis=0)
    sd[sd == 0] = 1.0
    xs = (x - mu) / sd

    w_s, b_s, history = _train_svm(xs[tr], y[tr], cfg, rng)
    norm = np.linalg.norm(w_s)
    if norm == 0:
        raise BoundaryError("SVM collapsed to a zero normal; classes may be inseparable at this C")
    # back to raw coordinates: w_s.(x-mu)/sd - b_s = (w_s/sd).x - (b_s + w_s.(mu/sd))
    w = w_s / sd
    b = b_s + float(w_s @ (mu / sd))
    scale = np.linalg.norm(w)
    normal, offset = w / scale, b / scale

    plane = Hyperplane(normal, offset, attribute_id)
    train_acc = float(np.mean(classify_latent(plane, x[tr]) == y[tr]))
    val_acc = float(np.mean(classify_latent(plane, x[va]) == y[va])) if va.size else float("nan")
    return dataclasses.replace(
        plane, validation_accuracy=val_acc, train_accuracy=train_acc, objective_history=tuple(history)
    )


def conditionalize(primary: Hyperplane, held: Hyperplane) -> Hyperplane:
    """Project the held attribute's direction out of the primary normal.

    The new boundary passes through the point of the primary boundary closest
    to the origin, so orthogonal normals leave the primary untouched.
    """
    n1, n2 = primary.normal, held.normal
    cos = float(n1 @ n2)
    if abs(cos) >= 1.0 - 1e-9:
        raise BoundaryError(
            f"attributes {primary.attribute_id} and {held.attribute_id} have parallel normals "
            "and are fully entangled"
        )
    direction = n1 - cos * n2
    direction /= np.linalg.norm(direction)
    # remove the rounding residue along n2
    direction -= (direction @ n2) * n2
    direction /= np.linalg.norm(direction)
    anchor = primary.offset * n1
    return dataclasses.replace(primary, normal=direction, offset=float(direction @ anchor))


def save_boundary(path: str | os.PathLike, h: Hyperplane, extra: dict | None = None) -> None:
    payload = h.to_dict()
    payload.update(extra or {})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_boundary(path: str | os.PathLike) -> Hyperplane:
    with open(path, encoding="utf-8") as fh:
        return Hyperplane.from_dict(json.load(fh))
