import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import yaml

from maemgan.cli import ExperimentPlan, cmd_ablate, load_plan, main
from maemgan.config import ConfigError, TrainConfig, canonical_text, load_config, parse_config, to_dict

TINY = {"batch_size": 8, "total_steps": 3, "eval_every": 1,
        "model": {"z_dim": 2, "m": 2, "gen_hidden": [8], "disc_hidden": [8]},
        "metrics": {"eval_samples": 200, "min_count": 2}}


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def test_defaults():
    c = TrainConfig()
    assert (c.n_critic, c.batch_size, c.gp_center) == (5, 64, 1.0)
    assert (c.optimizer.lr, c.optimizer.beta1, c.optimizer.beta2) == (1e-4, 0.5, 0.9)
    assert c.model.m == 8 and c.buffer.capacity == 1024
    assert c.buffer_min_entries == 64


def test_unknown_key_names_key_and_valid_keys():
    with pytest.raises(ConfigError, match=r"unknown key 'lamda'.*lambda_norm"):
        parse_config({"weights": {"lamda": 0.1}})
    with pytest.raises(ConfigError, match="unknown key 'sed'"):
        parse_config({"sed": 1})


@pytest.mark.parametrize("bad", [
    {"dataset": {"sigma": -0.1}}, {"n_critic": 0}, {"batch_size": 1}, {"gp_center": 0.5},
    {"buffer": {"source": "somewhere"}}, {"weights": {"w_ent": -1}}, {"seed": "x"},
])
def test_validation_errors(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_canonical_round_trip_is_fixed_point(tmp_path):
    cfg = parse_config({**TINY, "seed": 4, "weights": {"w_ent": 0.25}})
    text = canonical_text(cfg)
    again = load_config(write_yaml(tmp_path / "c.yaml", yaml.safe_load(text)))
    assert again == cfg
    assert canonical_text(again) == text


def test_load_config_overrides_and_missing(tmp_path):
    cfg = load_config(write_yaml(tmp_path / "c.yaml", TINY), {"seed": 9, "total_steps": 1})
    assert cfg.seed == 9 and cfg.total_steps == 1
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.yaml")


def test_cli_run_exit_codes(tmp_path):
    good = write_yaml(tmp_path / "good.yaml", TINY)
    out = tmp_path / "out"
    assert main(["run", str(good), "--out", str(out), "--seed", "5", "--steps", "2"]) == 0
    assert len((out / "metrics.jsonl").read_text().splitlines()) == 2
    snap = yaml.safe_load((out / "config.snapshot").read_text())
    assert snap["seed"] == 5 and snap["total_steps"] == 2

    bad = write_yaml(tmp_path / "bad.yaml", {**TINY, "dataset": {"sigma": -1.0}})
    assert main(["run", str(bad), "--out", str(tmp_path / "never")]) == 1
    assert not (tmp_path / "never").exists()
    typo = write_yaml(tmp_path / "typo.yaml", {**TINY, "weights": {"lamda": 0.1}})
    assert main(["run", str(typo), "--out", str(tmp_path / "never")]) == 1
    assert main(["run", str(tmp_path / "missing.yaml")]) == 3


def test_cli_run_twice_is_byte_identical(tmp_path):
    good = write_yaml(tmp_path / "good.yaml", TINY)
    main(["run", str(good), "--out", str(tmp_path / "a")])
    main(["run", str(good), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a/metrics.jsonl").read_bytes() == (tmp_path / "b/metrics.jsonl").read_bytes()


def test_cli_run_nan_abort_exit_code(tmp_path, monkeypatch):
    from maemgan import cli
    from maemgan.trainer import TrainingDiverged

    def boom(config, out_dir):
        raise TrainingDiverged(0, "non-finite loss components ['maf']", [])

    monkeypatch.setattr(cli, "run", boom)
    assert main(["run", str(write_yaml(tmp_path / "c.yaml", TINY)), "--out", str(tmp_path / "o")]) == 2


def test_default_config_command_parses(capsys):
    assert main(["default-config"]) == 0
    assert parse_config(yaml.safe_load(capsys.readouterr().out)) == TrainConfig()


def test_plan_validation(tmp_path):
    with pytest.raises(ConfigError, match="duplicate"):
        ExperimentPlan({}, [("a", {}), ("a", {})], [0])
    with pytest.raises(ConfigError, match="seed"):
        ExperimentPlan({}, [("a", {})], [])
    p = write_yaml(tmp_path / "p.yaml", {"base": TINY, "variants": {"x": {"weights": {"lamda": 1}}}})
    with pytest.raises(ConfigError, match="lamda"):
        load_plan(p)


def test_ablate_summary_matches_hand_recomputation(tmp_path, capsys):
    plan = write_yaml(tmp_path / "plan.yaml", {
        "base": TINY, "seeds": [0, 1, 2],
        "variants": {"full": {}, "no_rbmaem": {"switches": {"enable_rbmaem": False}}},
    })
    root = tmp_path / "abl"
    assert cmd_ablate(plan, out=root) == 0
    lines = (root / "summary.tsv").read_text().splitlines()
    header = lines[0].split("\t")
    assert len(lines) == 3
    for line in lines[1:]:
        row = dict(zip(header, line.split("\t")))
        finals = [json.loads((root / row["variant"] / f"seed_{s}" / "metrics.jsonl")
                             .read_text().splitlines()[-1]) for s in (0, 1, 2)]
        for key in ("mode_coverage", "i_variance", "high_quality_ratio", "embedding_entropy_nats"):
            vals = [f[key] for f in finals]
            assert float(row[f"{key}_mean"]) == pytest.approx(sum(vals) / 3, rel=1e-12, abs=1e-15)
            assert float(row[f"{key}_std"]) == pytest.approx(np.std(vals, ddof=1), rel=1e-9, abs=1e-15)
    assert "no_rbmaem" in (root / "summary.txt").read_text()
    assert len((root / "runs.tsv").read_text().splitlines()) == 7


def test_ablate_marks_failed_runs(tmp_path, monkeypatch):
    from maemgan import cli
    from maemgan.trainer import TrainingDiverged

    real_run = cli.run

    def sometimes(config, out_dir):
        if config.seed == 1:
            raise TrainingDiverged(2, "injected", [])
        return real_run(config, out_dir)

    monkeypatch.setattr(cli, "run", sometimes)
    plan = write_yaml(tmp_path / "plan.yaml", {"base": TINY, "seeds": [0, 1], "variants": {"a": {}}})
    assert cmd_ablate(plan, out=tmp_path / "abl") == 0
    row = (tmp_path / "abl" / "summary.tsv").read_text().splitlines()[1].split("\t")
    assert row[:4] == ["a", "2", "1", "FAILED"]


def test_plot_writes_valid_svgs(tmp_path):
    good = write_yaml(tmp_path / "good.yaml", TINY)
    out = tmp_path / "run"
    main(["run", str(good), "--out", str(out)])
    assert main(["plot", str(out)]) == 0
    for name in ("samples.svg", "metrics.svg"):
        root = ET.parse(out / name).getroot()
        assert root.tag.endswith("svg")


def test_plot_zero_step_and_collapsed_runs(tmp_path):
    good = write_yaml(tmp_path / "good.yaml", TINY)
    out = tmp_path / "run"
    main(["run", str(good), "--out", str(out), "--steps", "0"])
    assert main(["plot", str(out)]) == 0
    (out / "samples_final.csv").write_text("0.5,0.5\n" * 100)
    assert main(["plot", str(out)]) == 0
    assert (out / "samples.svg").stat().st_size > 0


def test_plot_missing_files(tmp_path, caplog):
    assert main(["plot", str(tmp_path)]) == 3
    assert "samples_final.csv" in caplog.text
