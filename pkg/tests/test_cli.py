import json
import logging

import pytest

from latent_bridge import cli, config, pipeline, toyworld
from latent_bridge.config import ConfigError

from conftest import SMALL

SMALL_RUN = {
    "world": {k: v for k, v in SMALL.items() if k != "seed"},
    "svm": {"epochs": 20},
    "mlp": {"epochs": 2, "batch_size": 32},
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL_RUN))
    return p


def test_defaults():
    cfg = config.load(None)
    assert cfg.seed == 7 and cfg.world.seed == 7 and cfg.svm.seed == 7
    assert cfg.mlp_config().input_dim == cfg.world.voxel_dim
    assert cfg.to_dict()["thresholds"] == dict(sorted(config.DEFAULT_THRESHOLDS.items()))


def test_overrides_win(cfg_file):
    cfg = config.load(cfg_file, seed=11, ridge=0.5, out="x")
    assert (cfg.seed, cfg.world.seed, cfg.svm.seed, cfg.mlp_config().seed) == (11, 11, 11, 11)
    assert cfg.ridge == 0.5 and cfg.out == "x"


@pytest.mark.parametrize("raw,match", [
    ({"bogus": 1}, "bogus"),
    ({"world": {"latent_dims": 3}}, "latent_dims"),
    ({"mlp": {"input_dim": 3}}, "input_dim"),
    ({"ridge": -1}, "ridge"),
    ({"seed": -1}, "seed"),
    ({"world": {"obs_dim": 2}}, "obs_dim"),
    ({"policy": {"attributes": [7]}}, "policy.attributes"),
    ({"mlp": {"dropout_p": 2}}, "dropout_p"),
])
def test_invalid_configs(raw, match):
    with pytest.raises(ConfigError, match=match):
        config.from_dict(raw)


def test_json_error_has_line_number(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "seed": 3,\n  oops\n}')
    with pytest.raises(ConfigError, match=r"bad.json:3:"):
        config.load(p)


def test_cli_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{")
    assert cli.main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "bad.json:1:" in capsys.readouterr().err


def test_simulate_manifest_and_refusal(tmp_path, cfg_file, capsys):
    out = tmp_path / "run"
    assert cli.main(["simulate", "--config", str(cfg_file), "--out", str(out)]) == 0
    names = sorted(p.name for p in (out / "dataset").iterdir())
    assert names == sorted(list(toyworld.DATASET_FILES) + ["world.json"])
    assert cli.main(["simulate", "--config", str(cfg_file), "--out", str(out)]) == 2
    assert "not empty" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(cfg_file), "--out", str(out), "--force"]) == 0


def test_simulate_twice_is_byte_identical(tmp_path, cfg_file):
    for name in ("a", "b"):
        cli.main(["simulate", "--config", str(cfg_file), "--out", str(tmp_path / name)])
    for f in (tmp_path / "a" / "dataset").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / "dataset" / f.name).read_bytes(), f.name


def test_stage_needs_previous_artifacts(tmp_path, cfg_file, capsys):
    out = tmp_path / "run"
    cli.main(["simulate", "--config", str(cfg_file), "--out", str(out)])
    capsys.readouterr()
    code = cli.main(["run-all", "--stage", "reconstruct", "--out", str(out), "--config", str(cfg_file)])
    err = capsys.readouterr().err
    assert code == 2
    assert "reconstruct" in err and "fit-bridge" in err


def test_stages_one_by_one_and_provenance(tmp_path, cfg_file, capsys):
    out = tmp_path / "run"
    assert cli.main(["simulate", "--config", str(cfg_file), "--out", str(out), "--seed", "5"]) == 0
    # later stages pick up the stored config without --config
    for stage in pipeline.STAGES[1:]:
        assert cli.main([stage, "--out", str(out)]) == 0, stage
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["seed"] == 5
    assert report["config"]["world"]["voxel_dim"] == 24
    assert report["version"] == pipeline.version_string()
    assert "2AFC accuracy" in capsys.readouterr().out
    for path in [out / "bridge" / "mapping.json", out / "boundaries" / "boundary_0.json",
                 out / "classifiers" / "mlp_1.json", out / "reconstructions.json"]:
        prov = json.loads(path.read_text())["provenance"]
        assert prov["run_config"]["seed"] == 5 and prov["version"] == pipeline.version_string()


def test_run_all_exit_code_follows_thresholds(tmp_path, cfg_file):
    raw = dict(SMALL_RUN, thresholds={"min_two_afc": 1.0, "min_consistency_gain": -1.0, "max_vote_deficit": 1.0})
    strict = tmp_path / "strict.json"
    strict.write_text(json.dumps(raw))
    out = tmp_path / "run"
    report_path, failures = pipeline.run_all(pipeline.Run(config.load(strict, out=str(out))))
    report = json.loads(report_path.read_text())
    expected = 0 if report["two_afc_acc"] >= 1.0 else 1
    assert cli.main(["run-all", "--config", str(strict), "--out", str(out), "--force"]) == expected
    raw["thresholds"]["min_two_afc"] = 0.0
    strict.write_text(json.dumps(raw))
    assert cli.main(["run-all", "--config", str(strict), "--out", str(out), "--force"]) == 0


def test_rerunning_a_stage_is_byte_identical(tmp_path, cfg_file):
    out = tmp_path / "run"
    cli.main(["run-all", "--config", str(cfg_file), "--out", str(out)])
    first = {p: p.read_bytes() for p in out.rglob("*") if p.is_file() and p.name != "report.json"}
    for stage in pipeline.STAGES[1:]:
        cli.main([stage, "--out", str(out)])
    for p, data in first.items():
        assert p.read_bytes() == data, p


def test_log_level_from_environment(monkeypatch):
    monkeypatch.setenv("LATENT_BRIDGE_LOG", "debug")
    root = logging.getLogger()
    saved = root.handlers[:], root.level
    root.handlers = []
    try:
        cli._setup_logging()
        assert root.level == logging.DEBUG
    finally:
        root.handlers, root.level = saved[0], saved[1]


def test_parser_lists_subcommands():
    parser = cli.build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["nope"])
    args = parser.parse_args(["run-all", "--stage", "evaluate", "--seed", "3", "--ridge", "0.1"])
    assert (args.stage, args.seed, args.ridge) == ("evaluate", 3, 0.1)
