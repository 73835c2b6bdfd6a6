"""Command-line pipeline: ingest, pretrain, finetune, eval, baseline, report, paper.

Every stage reads and writes files only.  Each output directory gets the
resolved config (``config.resolved.yaml``) and a ``metadata.json`` which
is the only file carrying timestamps.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 internal
failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import sys
import traceback
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(n)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _prepare_out(args, cfg) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "config.resolved.yaml", cfg.dump())
    _write_json(out / "metadata.json", {
        "command": args.command,
        "argv": sys.argv[1:],
        "started": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "version": _version(),
    })
    return out


def _version() -> str:
    from . import __version__
    return __version__


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"missing {what}: {path}")
    return path


def _load_splits(split_dir):
    from .flowdata import SPLIT_NAMES, DatasetSplits

    d = _require(Path(split_dir), "split directory")
    _require(d / "schema.json", "split schema")
    for name in SPLIT_NAMES:
        _require(d / f"{name}.csv", f"split file '{name}'")
    return DatasetSplits.load(d)


def _load_ckpt(path, splits):
    from .neuralnet import load_checkpoint

    net, emb, opt, header = load_checkpoint(_require(Path(path), "checkpoint"))
    want = splits.schema.schema_hash()
    have = header.get("schema_hash")
    if have != want:
        raise DataError(f"schema hash mismatch: checkpoint {have} vs split files {want}")
    if emb is None:
        raise DataError(f"checkpoint {path} carries no embedder")
    return net, emb, opt, header


def _auc_rows(scores_by_split) -> tuple[str, dict]:
    from .evalharness import auc

    lines = ["split,auc,n_pos,n_neg,tied_pairs"]
    result = {}
    for s, (sc, y) in scores_by_split.items():
        r = auc(sc, y)
        lines.append(f"{s},{r.auc!r},{r.n_pos},{r.n_neg},{r.tie_count}")
        result[s] = r.auc
    return "\n".join(lines) + "\n", result


def _experiment_spec(cfg, variants):
    from dataclasses import asdict

    from .evalharness import ExperimentSpec
    from .finetune import FinetuneConfig

    exp = cfg.experiment
    seeds = exp.seeds or [cfg.seed + r for r in range(exp.repetitions)]
    return ExperimentSpec(
        variants=variants, repetitions=exp.repetitions, seeds=list(seeds),
        trunk_width=cfg.network.trunk_width, head_width=cfg.network.head_width,
        embedder=cfg.embedder, contrastive=cfg.contrastive,
        finetune=FinetuneConfig(**asdict(cfg.finetune), head_width=cfg.network.head_width,
                                seed=cfg.seed),
        gbdt=cfg.gbdt, knn_k=exp.knn_k, baseline_train=exp.baseline_train,
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_ingest(args, cfg) -> int:
    from .flowdata import chronological_split, drifted_table, kyoto_schema, load_kyoto

    out = _prepare_out(args, cfg)
    errors = []
    if args.synthetic:
        spec = _drift_spec(args.synthetic, cfg.seed)
        table = drifted_table(spec)
        source = {"synthetic": str(args.synthetic), "drift_spec": spec.to_dict()}
    else:
        if args.input is None:
            raise UsageError("ingest needs an input path or --synthetic")
        path = _require(Path(args.input), "input path")
        table, errors = load_kyoto(path, kyoto_schema())
        source = {"input": str(path)}
    if errors:
        print(f"{len(errors)} unparseable line(s) skipped", file=sys.stderr)
        for f, lineno, msg in errors[:10]:
            print(f"  {f}:{lineno}: {msg}", file=sys.stderr)
    if len(table) == 0:
        raise DataError("no records parsed")
    splits = chronological_split(table, cfg.split)
    splits.save(out / "splits")
    _write_json(out / "ingest_report.json", {
        "source": source,
        "records": len(table),
        "parse_errors": len(errors),
        "parse_error_sample": [list(e) for e in errors[:50]],
        "schema_hash": splits.schema.schema_hash(),
        "splits": {k: {"rows": len(v), "benign": v.class_counts()[0],
                       "malicious": v.class_counts()[1]}
                   for k, v in splits.as_dict().items()},
    })
    print(f"wrote six splits to {out / 'splits'}")
    return EXIT_OK


def _drift_spec(src, seed):
    from .config import ConfigError
    from .flowdata import DriftSpec
    from .scenarios import kyoto_like_spec

    if src == "kyoto-like":
        return kyoto_like_spec(seed=seed)
    import yaml

    path = _require(Path(src), "drift spec")
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    raw.setdefault("seed", seed)
    try:
        spec = DriftSpec.from_dict(raw)
        spec.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    return spec


def cmd_pretrain(args, cfg) -> int:
    from .contrastive import pretrain, write_loss_curve
    from .embed import fit
    from .neuralnet import build_trunk, save_checkpoint

    splits = _load_splits(args.splits)
    out = _prepare_out(args, cfg)
    emb = fit(splits.pretrain_set, cfg.embedder, seed=cfg.seed)
    net = build_trunk(emb.input_width, cfg.network.trunk_layers, cfg.network.trunk_width,
                      seed=cfg.seed)
    net, emb, curve = pretrain(net, emb, splits.pretrain_set, cfg.contrastive)
    emb.frozen = True
    save_checkpoint(out / "pretrained.ckpt", net, emb,
                    seeds={"seed": cfg.seed, "pretrained": cfg.contrastive.epochs > 0})
    write_loss_curve(out / "loss_curve.csv", curve)
    print(f"pretrained {cfg.network.trunk_layers}-block trunk -> {out / 'pretrained.ckpt'}")
    return EXIT_OK


def cmd_finetune(args, cfg) -> int:
    from dataclasses import asdict

    from .finetune import FinetuneConfig, attach_head, finetune, write_training_log
    from .neuralnet import save_checkpoint

    splits = _load_splits(args.splits)
    net, emb, _, header = _load_ckpt(args.checkpoint, splits)
    n = cfg.network
    ft = FinetuneConfig(**asdict(cfg.finetune), mode="partial" if n.freeze else "full",
                        frozen_prefix=n.freeze, head_layers=n.head_layers,
                        head_width=n.head_width, seed=cfg.seed)
    out = _prepare_out(args, cfg)
    model = attach_head(net, n.head_layers, n.head_width, seed=cfg.seed)
    model, log = finetune(model, emb, splits.finetune_set, splits.validation_set, ft)
    save_checkpoint(out / "finetuned.ckpt", model, emb,
                    seeds=dict(header.get("seeds") or {}, finetune_seed=cfg.seed))
    write_training_log(out / "training_log.csv", log)
    print(f"best validation AUC {model.meta['best_val_auc']:.4f} at step {model.meta['best_step']}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    from .finetune import score_table

    splits = _load_splits(args.splits)
    net, emb, _, _ = _load_ckpt(args.checkpoint, splits)
    out = _prepare_out(args, cfg)
    tests = {"IID": splits.test_iid, "NEAR": splits.test_near, "FAR": splits.test_far}
    text, result = _auc_rows({s: (score_table(net, emb, t), t.labels) for s, t in tests.items()})
    _write_text(out / "auc.csv", text)
    name = args.name or Path(args.checkpoint).resolve().parent.name
    _write_json(out / "result.json", {"variant": name, "rep": 0, "seed": cfg.seed,
                                      "status": "ok", "reason": "", "auc": result})
    sys.stdout.write(text)
    return EXIT_OK


def cmd_baseline(args, cfg) -> int:
    from .baselines import gbdt_fit, gbdt_score, knn_fit, knn_score, save_gbdt, save_knn
    from .flowdata import FlowTable

    splits = _load_splits(args.splits)
    out = _prepare_out(args, cfg)
    train = splits.finetune_set
    if cfg.experiment.baseline_train == "all":
        train = FlowTable.concat([splits.pretrain_set, splits.finetune_set])
    tests = {"IID": splits.test_iid, "NEAR": splits.test_near, "FAR": splits.test_far}
    if args.kind == "gbdt":
        model = gbdt_fit(train, cfg.gbdt)
        save_gbdt(out / "gbdt.model", model)
        scores = {s: (gbdt_score(model, t), t.labels) for s, t in tests.items()}
    else:
        model = knn_fit(train, cfg.experiment.knn_k)
        save_knn(out / "knn.model", model)
        scores = {s: (knn_score(model, t), t.labels) for s, t in tests.items()}
    text, result = _auc_rows(scores)
    _write_text(out / "auc.csv", text)
    _write_json(out / "result.json", {"variant": args.name or args.kind, "rep": 0,
                                      "seed": cfg.seed, "status": "ok", "reason": "",
                                      "auc": result})
    sys.stdout.write(text)
    return EXIT_OK


def _collect_cells(run_dir: Path) -> list[dict]:
    cells = []
    for p in sorted(run_dir.rglob("cells.jsonl")):
        cells += [json.loads(line) for line in p.read_text().splitlines() if line.strip()]
    for p in sorted(run_dir.rglob("result.json")):
        cells.append(json.loads(p.read_text()))
    return cells


def cmd_report(args, cfg) -> int:
    from .evalharness import SPLITS, ExperimentReport, paper_tables

    run_dir = _require(Path(args.runs), "run directory")
    cells = _collect_cells(run_dir)
    if not cells:
        raise DataError(f"no result.json or cells.jsonl under {run_dir}")
    present = list(dict.fromkeys(c["variant"] for c in cells))
    if args.table:
        order = [v.id for v in paper_tables()[args.table]]
        missing = [v for v in order if v not in present]
        if missing:
            raise DataError(f"table {args.table} needs runs for: {', '.join(missing)}")
        variants = order
    else:
        variants = present
    # repeated cells (same variant and rep) collapse to the last one found
    dedup = {(c["variant"], c.get("rep", 0)): c for c in cells if c["variant"] in variants}
    report = ExperimentReport(variants, SPLITS, list(dedup.values()))
    out = _prepare_out(args, cfg)
    stem = f"table{args.table}" if args.table else "table"
    _write_text(out / f"{stem}.csv", report.to_csv())
    _write_text(out / f"{stem}.txt", report.to_text())
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_paper(args, cfg) -> int:
    from .evalharness import ExperimentReport, paper_tables, run_matrix, unique_variants

    out = _prepare_out(args, cfg)
    if args.splits:
        splits = _load_splits(args.splits)
    else:
        sub = argparse.Namespace(**{**vars(args), "command": "ingest",
                                    "out": str(out / "ingest")})
        cmd_ingest(sub, cfg)
        splits = _load_splits(out / "ingest" / "splits")
    tables = paper_tables()
    keys = [str(k) for k in cfg.experiment.tables]
    unknown = [k for k in keys if k not in tables]
    if unknown:
        raise UsageError(f"unknown table(s) {unknown}; choose from {sorted(tables)}")
    variants = unique_variants(tables, keys)
    spec = _experiment_spec(cfg, variants)

    def progress(cell):
        aucs = " ".join(f"{s}={100 * a:.2f}" for s, a in cell["auc"].items())
        print(f"[rep {cell['rep']}] {cell['variant']}: {cell['status']} {aucs}", flush=True)

    report = run_matrix(spec, splits, on_cell=progress)
    _write_text(out / "cells.jsonl", report.to_jsonl())
    for k in keys:
        ids = [v.id for v in tables[k]]
        sub = ExperimentReport(ids, report.splits, [c for c in report.cells if c["variant"] in ids])
        _write_text(out / f"table{k}.csv", sub.to_csv())
        _write_text(out / f"table{k}.txt", sub.to_text())
        print(f"\nTable {k}\n{sub.to_text()}")
    failed = [c for c in report.cells if c["status"] != "ok"]
    return EXIT_INTERNAL if failed and len(failed) == len(report.cells) else EXIT_OK


def cmd_drift(args, cfg) -> int:
    from .evalharness import drift_summary, histogram_w1

    splits = _load_splits(args.splits)
    names = splits.schema.feature_names
    if args.feature not in [c.name for c in splits.schema.numeric_columns]:
        raise UsageError(f"{args.feature!r} is not a numeric feature of {names}")
    out = _prepare_out(args, cfg)
    periods = [splits.test_iid, splits.test_near, splits.test_far]
    summ = drift_summary(periods, args.feature, bins=args.bins)
    _write_text(out / f"drift_{args.feature}.csv", summ.to_csv())
    for name, p in (("NEAR", 1), ("FAR", 2)):
        w1 = histogram_w1(summ.histograms[0], summ.histograms[p], summ.edges)
        print(f"{args.feature}: W1(IID, {name}) = {w1:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "ingest": cmd_ingest, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
    "eval": cmd_eval, "baseline": cmd_baseline, "report": cmd_report, "paper": cmd_paper,
    "drift-summary": cmd_drift,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--threads", type=int, help="BLAS / numba thread count")

    p = _Parser(prog="swapcon", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"swapcon {_version()}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="parse raw data and build the six splits")
    s.add_argument("input", nargs="?", help="Kyoto2006+ file or directory")
    s.add_argument("--synthetic", help="DriftSpec YAML, or 'kyoto-like' for the built-in scenario")

    s = sub.add_parser("pretrain", parents=[common], help="contrastive pretraining of a trunk")
    s.add_argument("--splits", required=True)

    s = sub.add_parser("finetune", parents=[common], help="attach a head and finetune")
    s.add_argument("--splits", required=True)
    s.add_argument("--checkpoint", required=True)

    s = sub.add_parser("eval", parents=[common], help="AUC on the IID / NEAR / FAR tests")
    s.add_argument("--splits", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--name", help="variant label used by report")

    s = sub.add_parser("baseline", parents=[common], help="fit and score GBDT or KNN")
    s.add_argument("--splits", required=True)
    s.add_argument("--kind", choices=("gbdt", "knn"), required=True)
    s.add_argument("--name")

    s = sub.add_parser("report", parents=[common], help="assemble AUC tables from run outputs")
    s.add_argument("--runs", required=True, help="directory holding result.json / cells.jsonl")
    s.add_argument("--table", choices=("1", "2", "3", "4", "5"))

    s = sub.add_parser("paper", parents=[common], help="run the full experiment matrix")
    s.add_argument("input", nargs="?")
    s.add_argument("--splits", help="existing split directory (skips ingest)")
    s.add_argument("--synthetic")

    s = sub.add_parser("drift-summary", parents=[common], help="per-period feature drift")
    s.add_argument("--splits", required=True)
    s.add_argument("--feature", required=True)
    s.add_argument("--bins", type=int, default=50)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _set_threads(args.threads)
        from .config import ConfigError, load_config

        try:
            cfg = load_config(args.config, seed=args.seed)
            return COMMANDS[args.command](args, cfg)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        from .container import CheckpointError
        from .flowdata import FlowDataError

        if isinstance(exc, (FlowDataError, CheckpointError, FileNotFoundError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
