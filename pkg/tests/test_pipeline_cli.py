import json
import shutil
import subprocess
import sys

import pytest

from advgraph.cli import main
from advgraph.pipeline import (PipelineConfig, PipelineError, artifact_digests, load_evaluation,
                               read_manifest, run_all, run_stage, stage_seed, with_overrides)

TINY = {"charset_size": 66, "n_triplets": 40, "glyph_epochs": 1, "glyph_dim": 16, "n2v_dim": 16,
        "n2v_walks": 4, "n2v_length": 20, "keywords_per_class": 2, "texts_per_class": 40,
        "test_per_class": 8, "text_length": "6,9", "sem_dim": 16, "sem_epochs": 1, "clf_epochs": 3,
        "clf_filters": 8, "sweep_budgets": "0,2"}


def write_config(d, **extra):
    d.mkdir(parents=True, exist_ok=True)
    body = "".join(f"{k} = {v}\n" for k, v in {**TINY, **extra}.items())
    (d / "advgraph.cfg").write_text(body, encoding="utf-8")
    return d / "advgraph.cfg"


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = PipelineConfig.load(write_config(d))
    run_all(cfg)
    return cfg


def test_stage_seeds_are_named_and_stable():
    assert stage_seed(0, "glyph") == stage_seed(0, "glyph")
    assert stage_seed(0, "glyph") != stage_seed(0, "node2vec")
    assert stage_seed(0, "glyph") != stage_seed(1, "glyph")
    assert 0 <= stage_seed(123, "x") < 2 ** 31


def test_config_parsing_and_validation(tmp_path):
    p = write_config(tmp_path, seed=7)
    cfg = PipelineConfig.load(p, {"clf_lr": "0.01"})
    assert cfg["seed"] == 7 and cfg["clf_lr"] == 0.01 and cfg["text_length"] == (6, 9)
    assert PipelineConfig.load(p).dumps() == PipelineConfig.load(p).dumps()
    for bad in ({"nonsense": "1"}, {"graph_k": "-1"}, {"clf_epochs": "x"},
                {"graph_branch": "false", "semantic_branch": "false"}, {"text_length": "5,2"},
                {"sweep_budgets": "3,1"}):
        with pytest.raises(PipelineError):
            PipelineConfig.load(p, bad)
    with pytest.raises(PipelineError, match="not found"):
        PipelineConfig.load(tmp_path / "missing.cfg")
    (tmp_path / "bad.cfg").write_text("seed 3\n", encoding="utf-8")
    with pytest.raises(PipelineError, match="bad.cfg:1"):
        PipelineConfig.load(tmp_path / "bad.cfg")


def test_attack_before_training_fails_with_guidance(tmp_path, capsys):
    p = write_config(tmp_path)
    assert main(["attack", "--config", str(p)]) == 1
    err = capsys.readouterr().err
    assert "missing model bundle" in err and "advgraph train-clf" in err


def test_missing_upstream_names_the_stage(tmp_path):
    cfg = PipelineConfig.load(write_config(tmp_path))
    with pytest.raises(PipelineError, match="advgraph fixture"):
        run_stage("train-glyph", cfg)
    with pytest.raises(PipelineError, match="unknown command"):
        run_stage("fly", cfg)


def test_cli_rejects_bad_overrides(tmp_path, capsys):
    p = write_config(tmp_path)
    assert main(["fixture", "--config", str(p), "bogus=1"]) == 1
    assert "unknown config key" in capsys.readouterr().err
    assert main(["fixture", "--config", str(p), "novalue"]) == 1
    assert main(["fixture"]) == 1


def test_init_writes_config_once(tmp_path, capsys):
    assert main(["init", str(tmp_path / "w")]) == 0
    cfg = PipelineConfig.load(tmp_path / "w" / "advgraph.cfg")
    assert cfg["charset_size"] == 200
    assert main(["init", str(tmp_path / "w")]) == 1
    assert "already exists" in capsys.readouterr().err


def test_module_entry_point_version():
    out = subprocess.run([sys.executable, "-m", "advgraph.cli", "--version"], capture_output=True,
                         text=True, check=True)
    assert out.stdout.startswith("advgraph ")


def test_run_all_artifacts_and_manifests(tiny_run):
    cfg = tiny_run
    for name in ("baseline", "defended"):
        ev = load_evaluation(cfg, name)
        assert 0 <= ev["clean_accuracy"] <= 1 and 0 <= ev["asr"] <= 1
        man = read_manifest(cfg, "train-clf", name)
        assert set(man) >= {"stage", "version", "backend", "seed", "stage_seed", "config", "inputs", "outputs"}
        bundle = json.loads((cfg.model_dir(name) / "manifest.json").read_text())
        assert len(bundle["config_sha256"]) == 64
        rows = (cfg.model_dir(name) / "sweep.xy").read_text().splitlines()
        assert rows[0] == "# budget asr" and rows[1].startswith("0 0.0")
    base = json.loads((cfg.model_dir("baseline") / "manifest.json").read_text())
    assert "graph_embedding" not in base["files"]
    assert "defended" in cfg.path("report").read_text()


def test_report_refuses_changed_artifacts(tiny_run, tmp_path):
    d = tmp_path / "copy"
    shutil.copytree(tiny_run.workdir, d)
    cfg = PipelineConfig.load(d / "advgraph.cfg")
    run_stage("report", cfg)
    with open(cfg.model_dir("baseline") / "attack.jsonl", "a", encoding="utf-8") as f:
        f.write("\n")
    with pytest.raises(PipelineError, match="changed since"):
        run_stage("report", cfg)


def test_report_refuses_mixed_upstream(tiny_run, tmp_path):
    d = tmp_path / "copy"
    shutil.copytree(tiny_run.workdir, d)
    cfg = PipelineConfig.load(d / "advgraph.cfg")
    # retrain the defended model on a different training corpus
    cfg_b = with_overrides(cfg, texts_per_class=41)
    run_stage("synth", cfg_b)
    for stage in ("train-clf", "attack", "evaluate"):
        run_stage(stage, cfg_b)
    with pytest.raises(PipelineError, match="manifests disagree on upstream"):
        run_stage("report", cfg)


def test_rerun_is_byte_identical(tiny_run, tmp_path):
    d = tmp_path / "again"
    d.mkdir()
    shutil.copy(tiny_run.workdir / "advgraph.cfg", d / "advgraph.cfg")
    run_all(PipelineConfig.load(d / "advgraph.cfg"))
    assert artifact_digests(d) == artifact_digests(tiny_run.workdir)


def test_ablation_semantic_only_and_graph_only(tiny_run, tmp_path):
    d = tmp_path / "copy"
    shutil.copytree(tiny_run.workdir, d)
    cfg = with_overrides(PipelineConfig.load(d / "advgraph.cfg"), model="graph-only",
                         semantic_branch=False)
    run_stage("train-clf", cfg)
    files = json.loads((cfg.model_dir() / "manifest.json").read_text())["files"]
    assert "graph_embedding" in files and "semantic_embedding" not in files
