"""File-backed pipeline stages.

Each stage reads the artifacts of the previous one from the run directory
and writes its own, so any stage can be rerun or resumed on its own::

    <out>/run_config.json
    <out>/dataset/         simulate
    <out>/bridge/          fit-bridge
    <out>/boundaries/      fit-boundaries
    <out>/classifiers/     fit-fmri-classifier
    <out>/reconstructions.json
    <out>/report.json, <out>/summary.txt
"""
from __future__ import annotations

import datetime as _dt
import json
import logging
import shutil
from pathlib import Path

import numpy as np

from . import __version__, bridge, config as config_mod, evaluation, manipulator, neuroclassifier, toyworld
from .boundary import fit_boundary, load_boundary, save_boundary

log = logging.getLogger("latent_bridge")

STAGES = ("simulate", "fit-bridge", "fit-boundaries", "fit-fmri-classifier", "reconstruct", "evaluate")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")


class MissingArtifactError(FileNotFoundError):
    pass


def version_string() -> str:
    return f"v{__version__}"


def _provenance(cfg: config_mod.RunConfig) -> dict:
    return {"provenance": {"run_config": cfg.to_dict(), "version": version_string()}}


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(evaluation.canonical_json(payload))


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing {path}; run the '{producer}' stage first")
    return path


class Run:
    """Paths of one run directory."""

    def __init__(self, cfg: config_mod.RunConfig, out: str | Path | None = None):
        self.cfg = cfg
        self.root = Path(out if out is not None else cfg.out)

    @property
    def dataset_dir(self) -> Path:
        return self.root / "dataset"

    @property
    def bridge_dir(self) -> Path:
        return self.root / "bridge"

    @property
    def boundary_dir(self) -> Path:
        return self.root / "boundaries"

    @property
    def classifier_dir(self) -> Path:
        return self.root / "classifiers"

    @property
    def records_path(self) -> Path:
        return self.root / "reconstructions.json"

    @property
    def report_path(self) -> Path:
        return self.root / "report.json"

    def load_world(self) -> toyworld.World:
        _require(self.dataset_dir / "world.json", "simulate")
        return toyworld.load_world(self.dataset_dir)

    def load_dataset(self) -> toyworld.Dataset:
        _require(self.dataset_dir, "simulate")
        return toyworld.load_dataset(self.dataset_dir)

    def attribute_ids(self) -> list[int]:
        return list(range(self.cfg.world.attribute_count))

    def load_boundaries(self):
        return [load_boundary(_require(self.boundary_dir / f"boundary_{k}.json", "fit-boundaries"))
                for k in self.attribute_ids()]

    def load_classifiers(self):
        for k in self.attribute_ids():
            _require(self.classifier_dir / f"mlp_{k}.json", "fit-fmri-classifier")
            _require(self.classifier_dir / f"mlp_{k}.lbm", "fit-fmri-classifier")
        return [neuroclassifier.load_model(self.classifier_dir, k) for k in self.attribute_ids()]

    def load_mapping(self) -> bridge.MappingModel:
        _require(self.bridge_dir / "mapping.lbm", "fit-bridge")
        return bridge.load_mapping(self.bridge_dir)


def simulate(run: Run, force: bool = False) -> Path:
    root = run.root
    if root.exists() and any(root.iterdir()):
        if not force:
            raise FileExistsError(f"output directory {root} is not empty; pass --force to overwrite")
        shutil.rmtree(root)
    root.mkdir(parents=True, exist_ok=True)
    _write_json(root / "run_config.json", _provenance(run.cfg))
    world = toyworld.build_world(run.cfg.world)
    dataset = toyworld.build_dataset(world)
    toyworld.save_dataset(run.dataset_dir, world, dataset)
    log.info("simulated %d training rows and %d test trials into %s",
             dataset.train_latents.shape[0], dataset.test_trial_brain.shape[0], run.dataset_dir)
    return run.dataset_dir


def fit_bridge(run: Run) -> Path:
    ds = run.load_dataset()
    model = bridge.fit_mapping(ds.train_latents, ds.train_brain, run.cfg.ridge)
    diag = bridge.residual_diagnostics(model, ds.train_latents, ds.train_brain)
    bridge.save_mapping(run.bridge_dir, model, {"diagnostics": diag, **_provenance(run.cfg)})
    log.info("bridge fitted, relative residual %.3e", diag["relative_residual"])
    return run.bridge_dir


def fit_boundaries(run: Run) -> Path:
    ds = run.load_dataset()
    run.boundary_dir.mkdir(parents=True, exist_ok=True)
    for k in run.attribute_ids():
        h = fit_boundary(ds.train_latents, ds.train_labels[:, k], run.cfg.svm, attribute_id=k)
        save_boundary(run.boundary_dir / f"boundary_{k}.json", h, _provenance(run.cfg))
        log.info("attribute %d: SVM validation accuracy %.4f", k, h.validation_accuracy)
    return run.boundary_dir


def fit_classifiers(run: Run) -> Path:
    ds = run.load_dataset()
    cfg = run.cfg.mlp_config()
    for k in run.attribute_ids():
        model = neuroclassifier.train(neuroclassifier.init_model(cfg), ds.train_brain, ds.train_labels[:, k], cfg)
        train_acc = neuroclassifier.accuracy_on(model, ds.train_brain, ds.train_labels[:, k])
        neuroclassifier.save_model(run.classifier_dir, model, k, {"train_accuracy": train_acc, **_provenance(run.cfg)})
        log.info("attribute %d: classifier training accuracy %.4f", k, train_acc)
    return run.classifier_dir


def reconstruct(run: Run) -> Path:
    ds = run.load_dataset()
    world = run.load_world()
    mapping = run.load_mapping()
    boundaries = run.load_boundaries()
    mlps = run.load_classifiers()
    records = manipulator.reconstruct_pipeline(
        ds, mapping, boundaries, mlps, manipulator.WorldOracle(world), run.cfg.policy
    )
    manipulator.save_records(run.records_path, records, _provenance(run.cfg))
    return run.records_path


def build_report(cfg, world, ds, records, mlps, timestamp: str = "") -> evaluation.EvalReport:
    oracle = manipulator.WorldOracle(world)
    raw = evaluation.attribute_consistency(records, oracle, ds.test_labels, use_edited=False)
    edited = evaluation.attribute_consistency(records, oracle, ds.test_labels, use_edited=True)
    per_attr = {}
    for k in records[0].order:
        model = mlps[k]
        preds = neuroclassifier.predict_batch(model, ds.test_trial_brain)
        per_attr[k] = {
            "trial_acc": evaluation.trial_accuracy(preds, ds.test_trial_stimulus, ds.test_labels[:, k]),
            "vote_acc": evaluation.vote_accuracy([r.vote_for(k) for r in records], ds.test_labels[records_index(records), k]),
            "raw_consistency": raw[k],
            "edited_consistency": edited[k],
        }
    targets = toyworld.generate_observation(world, ds.test_stimulus_latents)
    return evaluation.EvalReport(
        attributes=per_attr,
        two_afc_acc=evaluation.two_afc(records, targets, seed=cfg.seed),
        config=cfg.to_dict(),
        seeds={"world": cfg.world.seed, "svm": cfg.svm.seed, "mlp": cfg.seed, "two_afc": cfg.seed},
        timestamp=timestamp,
        version=version_string(),
    )


def records_index(records) -> np.ndarray:
    return np.array([r.stimulus_index for r in records])


def evaluate(run: Run) -> Path:
    ds = run.load_dataset()
    world = run.load_world()
    records = manipulator.load_records(_require(run.records_path, "reconstruct"))
    mlps = run.load_classifiers()
    stamp = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()
    report = build_report(run.cfg, world, ds, records, mlps, timestamp=stamp)
    evaluation.write_report(report, run.report_path)
    (run.root / "summary.txt").write_text(evaluation.summary_table(report), encoding="utf-8")
    return run.report_path


def threshold_failures(report: evaluation.EvalReport, thresholds: dict) -> list[str]:
    attrs = report.attributes.values()
    gain = float(np.mean([m["edited_consistency"] - m["raw_consistency"] for m in attrs]))
    deficit = max(m["trial_acc"] - m["vote_acc"] for m in attrs)
    failures = []
    if gain < thresholds["min_consistency_gain"]:
        failures.append(f"consistency gain {gain:.4f} < {thresholds['min_consistency_gain']}")
    if deficit > thresholds["max_vote_deficit"]:
        failures.append(f"vote accuracy trails trial accuracy by {deficit:.4f} > {thresholds['max_vote_deficit']}")
    if report.two_afc_acc < thresholds["min_two_afc"]:
        failures.append(f"2AFC {report.two_afc_acc:.4f} < {thresholds['min_two_afc']}")
    return failures


_RUNNERS = {
    "fit-bridge": fit_bridge,
    "fit-boundaries": fit_boundaries,
    "fit-fmri-classifier": fit_classifiers,
    "reconstruct": reconstruct,
    "evaluate": evaluate,
}


def run_stage(name: str, run: Run, force: bool = False):
    try:
        if name == "simulate":
            return simulate(run, force=force)
        return _RUNNERS[name](run)
    except StageError:
        raise
    except (OSError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def run_all(run: Run, force: bool = False, start: str = "simulate") -> tuple[Path, list[str]]:
    """Run every stage from ``start`` on; returns the report path and the
    list of unmet thresholds."""
    if start not in STAGES:
        raise ValueError(f"unknown stage {start!r}; choose from {', '.join(STAGES)}")
    for name in STAGES[STAGES.index(start):]:
        log.info("running stage %s", name)
        run_stage(name, run, force=force)
    report = evaluation.read_report(run.report_path)
    return run.report_path, threshold_failures(report, run.cfg.thresholds)


def run_in_memory(cfg: config_mod.RunConfig):
    """Whole pipeline without touching disk. Returns (report, records, artifacts)."""
    world = toyworld.build_world(cfg.world)
    ds = toyworld.build_dataset(world)
    mapping = bridge.fit_mapping(ds.train_latents, ds.train_brain, cfg.ridge)
    boundaries = [fit_boundary(ds.train_latents, ds.train_labels[:, k], cfg.svm, attribute_id=k)
                  for k in range(cfg.world.attribute_count)]
    mcfg = cfg.mlp_config()
    mlps = [neuroclassifier.train(neuroclassifier.init_model(mcfg), ds.train_brain, ds.train_labels[:, k], mcfg)
            for k in range(cfg.world.attribute_count)]
    records = manipulator.reconstruct_pipeline(ds, mapping, boundaries, mlps, manipulator.WorldOracle(world), cfg.policy)
    report = build_report(cfg, world, ds, records, mlps)
    artifacts = {"world": world, "dataset": ds, "mapping": mapping, "boundaries": boundaries, "mlps": mlps}
    return report, records, artifacts
