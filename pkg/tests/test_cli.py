import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

import genzsl.cli as cli
from genzsl.cli import TOY_CONFIG, RunConfig, main
from genzsl.dataset import load_bundle
from genzsl.evaluation import EvalReport, feature_confusion_score, harmonic_mean, synthesize
from genzsl.dataset import compute_prototypes
from genzsl.model import load_checkpoint
from genzsl.training import TrainingAborted, TrainLog

SMALL = {
    "seed": 5,
    "mode": "S4",
    "protocol": "both",
    "synthetic": {"n_seen_classes": 4, "n_unseen_classes": 2, "d_visual": 12, "d_semantic": 5,
                  "samples_per_class": 20},
    "model": {"g_hidden": 16, "d_hidden": 16, "dprime_hidden": 8, "phi_hidden": 16},
    "train": {"epochs": 2, "batch_size": 32, "learning_rate": 1e-3},
    "eval": {"per_class": 20},
}


def tree_digest(path):
    h = hashlib.sha256()
    for f in sorted(Path(path).rglob("*")):
        if f.is_file():
            h.update(str(f.relative_to(path)).encode())
            h.update(f.read_bytes())
    return h.hexdigest()


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return p


@pytest.fixture
def trained(config, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config), "--out", str(out), "--quiet"]) == 0
    return out


# -- prepare ---------------------------------------------------------------------

def test_prepare_synthetic_six_classes(tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["prepare", "--synthetic", "--seen", "4", "--unseen", "2", "--seed", "7", "--out", str(out)]) == 0
    ds = load_bundle(out)
    assert ds.class_count == 6 and len(ds.seen_classes) == 4
    assert "6 classes" in capsys.readouterr().out


def test_prepare_twice_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        main(["prepare", "--synthetic", "--seen", "4", "--unseen", "2", "--seed", "7", "--out", str(tmp_path / name)])
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_prepare_without_source_fails(tmp_path, capsys):
    assert main(["prepare", "--out", str(tmp_path / "x")]) != 0
    assert "prepare needs" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_prepare_from_config_matches_training_data(config, tmp_path):
    out = tmp_path / "b"
    assert main(["prepare", "--config", str(config), "--out", str(out)]) == 0
    from_bundle = load_bundle(out)
    direct = cli.load_run_config(config).load_dataset()
    assert np.array_equal(from_bundle.features, direct.features)


def test_prepare_from_mat_files(tmp_path):
    from scipy.io import savemat
    rng = np.random.default_rng(0)
    n, d, k = 30, 6, 3
    labels = np.repeat(np.arange(1, k + 1), 10)
    savemat(tmp_path / "res101.mat", {"features": rng.random((d, n)), "labels": labels[:, None]})
    seen_rows = np.flatnonzero(labels < 3) + 1
    savemat(tmp_path / "att_splits.mat", {
        "att": rng.random((4, k)), "trainval_loc": seen_rows[::2, None], "test_seen_loc": seen_rows[1::2, None],
        "test_unseen_loc": (np.flatnonzero(labels == 3) + 1)[:, None]})
    out = tmp_path / "b"
    assert main(["prepare", "--mat-features", str(tmp_path / "res101.mat"),
                 "--mat-splits", str(tmp_path / "att_splits.mat"), "--out", str(out)]) == 0
    ds = load_bundle(out)
    assert ds.seen_classes == (0, 1) and ds.unseen_classes == (2,)
    assert ds.features.shape == (n, d)
    assert main(["prepare", "--mat-features", str(tmp_path / "res101.mat"), "--out", str(out)]) == 1


# -- train ---------------------------------------------------------------------------

def test_train_writes_artifacts(trained):
    assert (trained / "checkpoint" / "model.json").is_file()
    log = TrainLog.from_jsonl(trained / "train_log.jsonl")
    assert {r["epoch"] for r in log.records} == {0, 1}
    frozen = json.loads((trained / "config.json").read_text())
    assert frozen["resolved"]["seeds"] == {"dataset": 5, "init": 6, "train": 7, "eval": 8}


def test_train_s1_logs_zero_boundary_and_cycle(config, tmp_path):
    out = tmp_path / "s1"
    assert main(["train", "--config", str(config), "--out", str(out), "--mode", "S1", "--quiet"]) == 0
    log = TrainLog.from_jsonl(out / "train_log.jsonl")
    assert all(r["boundary"] == 0.0 and r["cycle"] == 0.0 and r["dprime_loss"] == 0.0 for r in log.records)


def test_train_twice_identical_checkpoints(config, tmp_path, trained):
    again = tmp_path / "again"
    main(["train", "--config", str(config), "--out", str(again), "--quiet"])
    assert tree_digest(trained / "checkpoint") == tree_digest(again / "checkpoint")


def test_frozen_config_reproduces_run(trained, tmp_path):
    rerun = tmp_path / "rerun"
    assert main(["train", "--config", str(trained / "config.json"), "--out", str(rerun), "--quiet"]) == 0
    assert tree_digest(trained / "checkpoint") == tree_digest(rerun / "checkpoint")


def test_seed_override_changes_run(config, tmp_path, trained):
    other = tmp_path / "other"
    main(["train", "--config", str(config), "--out", str(other), "--seed", "6", "--quiet"])
    assert tree_digest(trained / "checkpoint") != tree_digest(other / "checkpoint")


def test_train_missing_bundle_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert main(["train", "--dataset", str(missing), "--out", str(tmp_path / "r")]) == 1
    assert str(missing) in capsys.readouterr().err


def test_train_from_bundle(tmp_path):
    b = tmp_path / "b"
    main(["prepare", "--synthetic", "--seen", "3", "--unseen", "2", "--d-visual", "8", "--d-semantic", "4",
          "--samples-per-class", "10", "--out", str(b)])
    cfg = {k: v for k, v in SMALL.items() if k != "synthetic"}
    cfg["dataset"] = str(b)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "r"), "--epochs", "1", "--quiet"]) == 0


def test_training_abort_exits_2(config, tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise TrainingAborted("non-finite critic loss: nan", {"epoch": 0, "step": 3})
    monkeypatch.setattr(cli, "train", boom)
    assert main(["train", "--config", str(config), "--out", str(tmp_path / "r")]) == 2
    assert "aborted" in capsys.readouterr().err


def test_real_divergence_exits_2(tmp_path):
    cfg = json.loads(json.dumps(SMALL))
    cfg["train"]["learning_rate"] = 1e39  # overflows float32 weights
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "r"), "--quiet"]) == 2
    assert not (tmp_path / "r" / "checkpoint").exists()


@pytest.mark.parametrize("argv", [
    ["train", "--mode", "S9"],
    ["frobnicate"],
    [],
    ["train", "--seed", "abc"],
])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


@pytest.mark.parametrize("patch", [
    {"extra": 1},
    {"train": {"epochs": 1, "bogus": 2}},
    {"dataset": "x"},
    {"mode": "S7"},
])
def test_bad_configs_exit_1(tmp_path, patch):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({**SMALL, **patch}))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "r")]) == 1


def test_invalid_json_exits_1(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["train", "--config", str(p)]) == 1


# -- eval and fcs --------------------------------------------------------------------

def _report(out):
    return json.loads((out / "report.json").read_text())


def test_eval_zsl_only_reports_zsl(config, trained):
    assert main(["eval", "--config", str(config), "--out", str(trained), "--protocol", "zsl"]) == 0
    r = _report(trained)
    present = {k for k in ("zsl_acc", "gzsl_unseen", "gzsl_seen", "gzsl_harmonic") if r.get(k) is not None}
    assert present == {"zsl_acc"}


def test_eval_gzsl_harmonic_consistent(config, trained):
    assert main(["eval", "--config", str(config), "--out", str(trained), "--protocol", "gzsl"]) == 0
    r = _report(trained)
    assert r["gzsl_harmonic"] == harmonic_mean(r["gzsl_unseen"], r["gzsl_seen"])
    assert r.get("zsl_acc") is None


def test_eval_is_repeatable(config, trained):
    main(["eval", "--config", str(config), "--out", str(trained)])
    first = (trained / "report.json").read_bytes()
    main(["eval", "--config", str(config), "--out", str(trained)])
    assert (trained / "report.json").read_bytes() == first
    assert EvalReport.from_json(trained / "report.json").fcs is not None


def test_eval_export_projection_rows(config, trained):
    assert main(["eval", "--config", str(config), "--out", str(trained), "--export-projection"]) == 0
    ds = cli.load_run_config(config).load_dataset()
    with open(trained / "projection.csv") as fh:
        rows = list(csv.DictReader(fh))
    expected = 20 * len(ds.unseen_classes) + len(ds.idx_test_seen) + len(ds.idx_test_unseen)
    assert len(rows) == expected
    assert sum(r["id"].startswith("synth-") for r in rows) == 20 * len(ds.unseen_classes)


def test_eval_dimension_mismatch(trained, tmp_path, capsys):
    b = tmp_path / "b"
    main(["prepare", "--synthetic", "--d-visual", "9", "--out", str(b)])
    assert main(["eval", "--dataset", str(b), "--out", str(trained)]) == 1
    assert "do not match" in capsys.readouterr().err


def test_eval_missing_checkpoint(config, tmp_path):
    assert main(["eval", "--config", str(config), "--out", str(tmp_path / "empty")]) == 1


def _fcs(config, out, *extra):
    assert main(["fcs", "--config", str(config), "--out", str(out), *extra]) == 0
    return json.loads((out / "fcs.json").read_text())


def test_fcs_cap_semantics(tmp_path, trained):
    cfg = json.loads(json.dumps(SMALL))
    cfg["eval"]["per_class"] = 300
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    r = _fcs(p, trained, "--cap", "1000")
    assert r["n_samples"] == 600
    assert sum(r["nearest_prototype_histogram"].values()) == 600
    assert _fcs(p, trained, "--cap", "50")["n_samples"] == 50


def test_fcs_repeatable_and_matches_library(config, trained):
    a = _fcs(config, trained)
    b = _fcs(config, trained)
    assert a == b
    run = cli.load_run_config(config)
    ds = run.load_dataset()
    params = load_checkpoint(trained / "checkpoint")
    ecfg = run.eval_config()
    synth = synthesize(params, ds.class_embeddings, sorted(ds.unseen_classes), ecfg.per_class, ecfg.seed)
    idx = ds.idx_train_seen
    protos = compute_prototypes(ds.features[idx], ds.labels[idx], ds.seen_classes)
    assert a["fcs"] == feature_confusion_score(synth, protos)


# -- ablate -------------------------------------------------------------------------

def test_ablate_ladder(config, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(config), "--out", str(out), "--quiet"]) == 0
    with open(out / "ablation_summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["mode"] for r in rows] == ["S1", "S2", "S3", "S4"]
    digests = {tree_digest(out / m / "checkpoint_epoch0") for m in ("S1", "S2", "S3", "S4")}
    assert len(digests) == 1
    for r, m in zip(rows, ("S1", "S2", "S3", "S4")):
        rep = _report(out / m)
        assert float(r["gzsl_harmonic"]) == rep["gzsl_harmonic"]
    # S3 and S4 share the trained model and differ only in scoring
    assert tree_digest(out / "S3" / "checkpoint") == tree_digest(out / "S4" / "checkpoint")


# -- config plumbing -------------------------------------------------------------------

def test_run_config_seed_fan_out():
    run = RunConfig.from_dict(SMALL)
    assert [run.seed_for(k) for k in ("dataset", "init", "train", "eval")] == [5, 6, 7, 8]
    ds = run.load_dataset()
    assert run.train_config(ds).seed == 7 and run.model_config(ds).init_seed == 6
    assert run.eval_config("S4").fuse and not run.eval_config("S3").fuse


def test_toy_config_is_valid_and_shipped():
    run = RunConfig.from_dict(TOY_CONFIG)
    spec = run.synthetic_spec()
    assert (spec.n_seen_classes, spec.n_unseen_classes, spec.d_visual, spec.d_semantic, spec.cluster_spread) == \
        (6, 3, 32, 8, 0.15)
    assert run.train_config(run.load_dataset()).epochs == 100
    shipped = Path(__file__).resolve().parents[1] / "configs" / "toy.json"
    if shipped.is_file():
        assert json.loads(shipped.read_text()) == TOY_CONFIG
