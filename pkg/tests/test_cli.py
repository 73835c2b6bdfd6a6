import json

import pytest
import yaml

from swapcon.cli import main
from swapcon.scenarios import kyoto_like_spec

CONFIG = {
    "split": {"test_per_class": 150},
    "embedder": {"d": 12, "eb_bin_count": 12},
    "network": {"trunk_layers": 2, "trunk_width": 16, "head_layers": 1, "head_width": 8},
    "contrastive": {"batch_size": 64, "epochs": 1},
    "finetune": {"max_epochs": 1, "eval_every": 10, "batch_size": 64},
    "gbdt": {"n_trees": 5, "max_depth": 3},
}


def _drift_yaml(path, rename=None):
    text = json.dumps(kyoto_like_spec(seed=0, records_per_period=(3000, 800, 800)).to_dict())
    for old, new in (rename or {}).items():
        text = text.replace(f'"{old}"', f'"{new}"')
    path.write_text(yaml.safe_dump(json.loads(text)))
    return path


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.yaml"
    cfg.write_text(yaml.safe_dump(CONFIG))
    drift = _drift_yaml(root / "drift.yaml")
    assert main(["ingest", "--synthetic", str(drift), "--config", str(cfg),
                 "--out", str(root / "ingest")]) == 0
    return root, cfg, root / "ingest" / "splits"


def _chain(root, cfg, splits, tag, name="run"):
    base = ["--config", str(cfg)]
    pre, ft, ev = root / f"{tag}_pre", root / f"{tag}_ft", root / f"{tag}_ev"
    assert main(["pretrain", "--splits", str(splits), "--out", str(pre), *base]) == 0
    assert main(["finetune", "--splits", str(splits), "--checkpoint", str(pre / "pretrained.ckpt"),
                 "--out", str(ft), *base]) == 0
    assert main(["eval", "--splits", str(splits), "--checkpoint", str(ft / "finetuned.ckpt"),
                 "--name", name, "--out", str(ev), *base]) == 0
    return pre, ft, ev


def test_ingest_writes_splits(work):
    root, _, splits = work
    assert sorted(p.name for p in splits.glob("*.csv")) == sorted(
        ["pretrain.csv", "finetune.csv", "validation.csv", "test_iid.csv", "test_near.csv",
         "test_far.csv"])
    rep = json.loads((root / "ingest" / "ingest_report.json").read_text())
    assert rep["splits"]["test_far"]["benign"] == 150


def test_missing_input_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    assert main(["ingest", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_pretrain_finetune_eval_chain(work):
    root, cfg, splits = work
    pre, ft, ev = _chain(root, cfg, splits, "a")
    rows = (ev / "auc.csv").read_text().splitlines()
    assert rows[0] == "split,auc,n_pos,n_neg,tied_pairs"
    assert [r.split(",")[0] for r in rows[1:]] == ["IID", "NEAR", "FAR"]
    assert (pre / "loss_curve.csv").exists() and (ft / "training_log.csv").exists()


def test_outputs_are_deterministic(work):
    root, cfg, splits = work
    a = _chain(root, cfg, splits, "d1")
    b = _chain(root, cfg, splits, "d2")
    for da, db in zip(a, b):
        names = sorted(p.name for p in da.iterdir())
        assert names == sorted(p.name for p in db.iterdir())
        for n in names:
            if n == "metadata.json":
                continue
            assert (da / n).read_bytes() == (db / n).read_bytes(), n


def test_schema_hash_refusal(work, tmp_path, capsys):
    root, cfg, splits = work
    other = _drift_yaml(tmp_path / "other.yaml", {"src_bytes": "bytes_out"})
    assert main(["ingest", "--synthetic", str(other), "--config", str(cfg),
                 "--out", str(tmp_path / "ing")]) == 0
    assert main(["pretrain", "--splits", str(splits), "--config", str(cfg),
                 "--out", str(tmp_path / "pre")]) == 0
    capsys.readouterr()
    code = main(["finetune", "--splits", str(tmp_path / "ing" / "splits"), "--config", str(cfg),
                 "--checkpoint", str(tmp_path / "pre" / "pretrained.ckpt"),
                 "--out", str(tmp_path / "ft")])
    err = capsys.readouterr().err
    assert code == 2 and "schema hash mismatch" in err
    hashes = [w for w in err.replace(":", " ").split() if len(w) >= 16 and w.isalnum()]
    assert len(set(hashes)) == 2


def test_config_errors_listed_together(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({
        "bogus": 1,
        "network": {"trunk_width": "wide", "depth": 3},
        "contrastive": {"temperature": -1.0},
        "experiment": {"repetitions": 0},
    }))
    assert main(["pretrain", "--splits", str(tmp_path), "--config", str(bad),
                 "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    for needle in ("bogus", "network.trunk_width", "network.depth", "temperature",
                   "repetitions"):
        assert needle in err, needle


def test_report_builds_freeze_table(work, tmp_path):
    root, cfg, splits = work
    runs = tmp_path / "runs"
    for k in range(7):
        (runs / f"f{k}").mkdir(parents=True)
        (runs / f"f{k}" / "result.json").write_text(json.dumps({
            "variant": f"3+3/pre/freeze{k}", "rep": 0, "seed": 0, "status": "ok", "reason": "",
            "auc": {"IID": 0.9 - 0.01 * k, "NEAR": 0.8, "FAR": 0.7}}))
    assert main(["report", "--runs", str(runs), "--table", "2", "--out", str(tmp_path / "r")]) == 0
    rows = (tmp_path / "r" / "table2.csv").read_text().splitlines()
    assert rows[0].split(",")[1:] == [f"3+3/pre/freeze{k}" for k in range(7)]
    assert rows[1].split(",")[1:3] == ["90.00", "89.00"]


def test_report_names_missing_variants(tmp_path, capsys):
    (tmp_path / "runs").mkdir()
    (tmp_path / "runs" / "result.json").write_text(json.dumps({
        "variant": "gbdt", "rep": 0, "status": "ok", "reason": "",
        "auc": {"IID": 1, "NEAR": 1, "FAR": 1}}))
    assert main(["report", "--runs", str(tmp_path / "runs"), "--table", "5",
                 "--out", str(tmp_path / "r")]) == 2
    assert "knn" in capsys.readouterr().err


def test_baseline_and_drift_summary(work, tmp_path):
    root, cfg, splits = work
    assert main(["baseline", "--splits", str(splits), "--kind", "knn", "--config", str(cfg),
                 "--out", str(tmp_path / "k")]) == 0
    assert json.loads((tmp_path / "k" / "result.json").read_text())["variant"] == "knn"
    assert main(["drift-summary", "--splits", str(splits), "--feature", "src_bytes",
                 "--bins", "10", "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "drift_src_bytes.csv").exists()


def test_unknown_command_is_usage_error(tmp_path):
    assert main(["frobnicate", "--out", str(tmp_path)]) == 1
