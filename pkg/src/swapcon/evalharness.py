"""AUC, per-period drift summaries and the experiment-matrix runner."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .baselines import GbdtConfig, gbdt_fit, gbdt_score, knn_fit, knn_score
from .contrastive import ContrastiveConfig, pretrain
from .embed import EmbedderSpec, fit as fit_embedder
from .finetune import FinetuneConfig, attach_head, finetune, score_table
from .flowdata import DatasetSplits, FlowTable
from .neuralnet import build_trunk

log = logging.getLogger(__name__)

SPLITS = ("IID", "NEAR", "FAR")
QUANTILES = (1, 5, 25, 50, 75, 95, 99)


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------

@dataclass
class AucResult:
    auc: float
    n_pos: int
    n_neg: int
    tie_count: int

    @property
    def percent(self) -> float:
        return 100.0 * self.auc


def auc(scores, labels) -> AucResult:
    """Rank-based ROC AUC; each tied (pos, neg) pair counts one half."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = (np.asarray(labels).reshape(-1) != 0).astype(np.int64)
    if s.shape != y.shape:
        raise EvalError("scores and labels differ in length")
    if np.isnan(s).any():
        raise EvalError("scores contain NaN")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise EvalError("AUC needs both classes present")
    order = np.argsort(s, kind="stable")
    twice_u, ties = _kernels.auc_counts(s[order], y[order])
    return AucResult(twice_u / (2.0 * n_pos * n_neg), n_pos, n_neg, int(ties))


# ---------------------------------------------------------------------------
# drift summaries
# ---------------------------------------------------------------------------

@dataclass
class DriftSummary:
    feature: str
    edges: np.ndarray
    quantile_levels: tuple = QUANTILES
    quantiles: list[np.ndarray] = field(default_factory=list)
    histograms: list[np.ndarray] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["period", "kind", "key", "value"])
        for p, (q, h, n) in enumerate(zip(self.quantiles, self.histograms, self.counts)):
            w.writerow([p, "count", "", n])
            for lvl, v in zip(self.quantile_levels, q):
                w.writerow([p, "quantile", lvl, repr(float(v))])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], h):
                w.writerow([p, "bin", f"{lo!r}:{hi!r}", int(c)])
        return buf.getvalue()


def drift_summary(periods, feature: str, bins: int = 50) -> DriftSummary:
    """Quantiles and shared-edge histograms of one feature per period.

    ``periods`` is a sequence of FlowTables or 1-D value arrays.
    """
    values = []
    for p, item in enumerate(periods):
        v = item.column(feature) if isinstance(item, FlowTable) else np.asarray(item)
        v = np.asarray(v, dtype=np.float64)
        if v.size == 0:
            raise EvalError(f"period {p} is empty")
        values.append(v)
    pooled = np.concatenate(values)
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    out = DriftSummary(feature, edges)
    for v in values:
        out.quantiles.append(np.percentile(v, QUANTILES, method="linear"))
        out.histograms.append(np.histogram(v, bins=edges)[0])
        out.counts.append(int(v.size))
    return out


def histogram_w1(counts_a, counts_b, edges) -> float:
    """Wasserstein-1 distance between two histograms on shared edges."""
    a = np.asarray(counts_a, dtype=np.float64)
    b = np.asarray(counts_b, dtype=np.float64)
    cdf_gap = np.cumsum(a / a.sum() - b / b.sum())[:-1]
    return float(np.sum(np.abs(cdf_gap) * np.diff(np.asarray(edges))[:-1]))


# ---------------------------------------------------------------------------
# experiment matrix
# ---------------------------------------------------------------------------

@dataclass
class VariantSpec:
    """One table column.

    ``kind`` is ``swapcon``, ``gbdt`` or ``knn``.  For swapcon variants
    ``freeze`` counts frozen leading blocks (0 = full finetuning).
    """

    id: str
    kind: str = "swapcon"
    trunk_layers: int = 3
    head_layers: int = 3
    pretrain: bool = True
    freeze: int = 0
    embedding: str = "EB"


@dataclass
class ExperimentSpec:
    variants: list[VariantSpec]
    splits: tuple[str, ...] = SPLITS
    repetitions: int = 3
    seeds: list[int] | None = None
    trunk_width: int = 256
    head_width: int = 128
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    gbdt: GbdtConfig = field(default_factory=GbdtConfig)
    knn_k: int = 5
    baseline_train: str = "finetune"  # or "all" (pretrain + finetune, labelled)

    def __post_init__(self):
        if self.repetitions < 1:
            raise EvalError("repetitions must be >= 1")
        if self.seeds is not None and len(self.seeds) < self.repetitions:
            raise EvalError("need one seed per repetition")
        ids = [v.id for v in self.variants]
        if len(set(ids)) != len(ids):
            raise EvalError(f"duplicate variant ids: {ids}")

    def seed_for(self, rep: int) -> int:
        return self.seeds[rep] if self.seeds is not None else rep


@dataclass
class ExperimentReport:
    variants: list[str]
    splits: tuple[str, ...]
    cells: list[dict]

    def mean_table(self) -> dict[str, dict[str, float]]:
        """``table[split][variant]`` = mean AUC (0..1) over successful runs."""
        table = {s: {} for s in self.splits}
        for v in self.variants:
            runs = [c for c in self.cells if c["variant"] == v and c["status"] == "ok"]
            for s in self.splits:
                vals = [c["auc"][s] for c in runs]
                table[s][v] = float(np.mean(vals)) if vals else math.nan
        return table

    def to_csv(self) -> str:
        table = self.mean_table()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["AUC", *self.variants])
        for s in self.splits:
            w.writerow([s, *(_fmt(table[s][v]) for v in self.variants)])
        return buf.getvalue()

    def to_text(self) -> str:
        table = self.mean_table()
        head = ["AUC(%)", *self.variants]
        rows = [[s, *(_fmt(table[s][v]) for v in self.variants)] for s in self.splits]
        widths = [max(len(r[i]) for r in [head, *rows]) for i in range(len(head))]
        lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [head, *rows]]
        failed = [c for c in self.cells if c["status"] != "ok"]
        for c in failed:
            lines.append(f"! {c['variant']} rep {c['rep']}: {c['reason']}")
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        return "".join(json.dumps(c, sort_keys=True) + "\n" for c in self.cells)

    @classmethod
    def from_jsonl(cls, text: str, variants=None, splits=SPLITS) -> "ExperimentReport":
        cells = [json.loads(line) for line in text.splitlines() if line.strip()]
        if variants is None:
            variants = list(dict.fromkeys(c["variant"] for c in cells))
        return cls(list(variants), tuple(splits), cells)


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{100.0 * v:.2f}"


def _test_tables(splits: DatasetSplits, names) -> dict[str, FlowTable]:
    tests = splits.tests()
    return {s: tests[s] for s in names}


def run_matrix(spec: ExperimentSpec, splits: DatasetSplits, on_cell=None) -> ExperimentReport:
    """Train and score every (variant, repetition) cell.

    Pretrained trunks are shared between variants that agree on trunk
    depth and embedding within a repetition.  A failing cell is recorded
    with its reason and the remaining cells still run.
    """
    tests = _test_tables(splits, spec.splits)
    cells = []
    for rep in range(spec.repetitions):
        seed = spec.seed_for(rep)
        trunks: dict = {}
        for v in spec.variants:
            cell = {"variant": v.id, "rep": rep, "seed": seed, "status": "ok", "reason": "",
                    "auc": {}}
            try:
                scores = _run_cell(spec, v, splits, tests, seed, trunks)
                for s, (sc, y) in scores.items():
                    cell["auc"][s] = auc(sc, y).auc
            except Exception as exc:  # noqa: BLE001 - recorded, other cells continue
                log.warning("variant %s rep %d failed: %s", v.id, rep, exc)
                cell["status"] = "failed"
                cell["reason"] = f"{type(exc).__name__}: {exc}"
            cells.append(cell)
            if on_cell is not None:
                on_cell(cell)
    return ExperimentReport([v.id for v in spec.variants], tuple(spec.splits), cells)


def _baseline_train(spec: ExperimentSpec, splits: DatasetSplits) -> FlowTable:
    if spec.baseline_train == "all":
        return FlowTable.concat([splits.pretrain_set, splits.finetune_set])
    return splits.finetune_set


def _run_cell(spec: ExperimentSpec, v: VariantSpec, splits: DatasetSplits, tests, seed, trunks):
    if v.kind == "gbdt":
        model = gbdt_fit(_baseline_train(spec, splits), spec.gbdt)
        return {s: (gbdt_score(model, t), t.labels) for s, t in tests.items()}
    if v.kind == "knn":
        model = knn_fit(_baseline_train(spec, splits), spec.knn_k)
        return {s: (knn_score(model, t), t.labels) for s, t in tests.items()}
    if v.kind != "swapcon":
        raise EvalError(f"unknown variant kind {v.kind!r}")
    net, emb = pretrained_trunk(spec, v, splits, seed, trunks)
    ft_cfg = FinetuneConfig(**{**asdict(spec.finetune),
                               "mode": "partial" if v.freeze > 0 else "full",
                               "frozen_prefix": v.freeze, "head_layers": v.head_layers,
                               "seed": seed})
    model = attach_head(net, v.head_layers, spec.head_width, seed=seed)
    model, _ = finetune(model, emb, splits.finetune_set, splits.validation_set, ft_cfg)
    return {s: (score_table(model, emb, t), t.labels) for s, t in tests.items()}


def pretrained_trunk(spec: ExperimentSpec, v: VariantSpec, splits: DatasetSplits, seed: int,
                     cache: dict | None = None):
    """Trunk (and embedder) for a variant, pretrained unless ``v.pretrain`` is off."""
    key = (v.trunk_layers, v.embedding.upper(), v.pretrain)
    if cache is not None and key in cache:
        net, emb = cache[key]
        return net.copy(), emb
    fields = {**asdict(spec.embedder), "strategy": v.embedding}
    if v.embedding.upper() == "PLE":
        fields["ple_bin_count"] = fields["d"]
    emb_spec = EmbedderSpec(**fields)
    emb = fit_embedder(splits.pretrain_set, emb_spec, seed=seed)
    net = build_trunk(emb.input_width, v.trunk_layers, spec.trunk_width, seed=seed)
    if v.pretrain:
        cfg = ContrastiveConfig(**{**asdict(spec.contrastive), "seed": seed})
        net, emb, _ = pretrain(net, emb, splits.pretrain_set, cfg)
    emb.frozen = True
    if cache is not None:
        cache[key] = (net, emb)
        return net.copy(), emb
    return net, emb


# ---------------------------------------------------------------------------
# result table layouts
# ---------------------------------------------------------------------------

def _arm(size: tuple[int, int], pretrain: bool, fix: bool, embedding: str = "EB") -> VariantSpec:
    t, h = size
    pre = "pre" if pretrain else "nopre"
    tag = "fix" if fix else "nofix"
    emb = "" if embedding == "EB" else f"/{embedding}"
    return VariantSpec(f"{t}+{h}/{pre}/{tag}{emb}", trunk_layers=t, head_layers=h,
                       pretrain=pretrain, freeze=t if fix else 0, embedding=embedding)


def paper_tables() -> dict[str, list[VariantSpec]]:
    """Column layouts of the five result tables, keyed ``"1"`` .. ``"5"``.

    1. 3+3 with/without pretraining, fixed/not fixed
    2. pretrained 3+3 with 0..6 frozen leading layers
    3. table 1 plus the same four arms at 2+1
    4. pretrained, fixed 2+1 under EB / PLE / LE
    5. best SwapCon arm against GBDT and KNN
    """
    four = lambda size: [_arm(size, p, f) for p in (True, False) for f in (True, False)]
    sweep = [VariantSpec(f"3+3/pre/freeze{k}", trunk_layers=3, head_layers=3, pretrain=True, freeze=k)
             for k in range(7)]
    return {
        "1": four((3, 3)),
        "2": sweep,
        "3": four((3, 3)) + four((2, 1)),
        "4": [_arm((2, 1), True, True, e) for e in ("EB", "PLE", "LE")],
        "5": [_arm((2, 1), True, True, "PLE"), VariantSpec("gbdt", kind="gbdt"),
              VariantSpec("knn", kind="knn")],
    }


def unique_variants(tables: dict[str, list[VariantSpec]], keys) -> list[VariantSpec]:
    seen: dict[str, VariantSpec] = {}
    for k in keys:
        for v in tables[k]:
            seen.setdefault(v.id, v)
    return list(seen.values())
