"""Per-feature embedding blocks of a fixed width ``d``.

Numeric features use one of three strategies:

* ``EB``  exponential binning, one-hot over geometrically spaced bins
* ``PLE`` piecewise linear ("thermometer") encoding over equal-width bins
* ``LE``  a per-feature linear encoder ``x * w + b`` trained during
  pretraining and frozen afterwards

Categorical features are always one-hot over the fitted vocabulary with a
reserved unknown slot.  All blocks share width ``d`` so that swap
augmentation can permute them freely.

One-hot blocks (EB numerics and categoricals) start at index 0 by default
(``shared`` layout).  The ``disjoint`` layout gives each feature its own
index range inside the block, so a block still identifies its feature
after the blocks are shuffled; it needs enough width for every range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flowdata import UNKNOWN, FeatureSchema, FlowRecord, FlowTable, NUMERIC

STRATEGIES = ("EB", "PLE", "LE")
LAYOUTS = ("disjoint", "shared")


class EmbeddingError(ValueError):
    pass


@dataclass
class EmbedderSpec:
    strategy: str = "EB"
    d: int = 128
    eb_bin_count: int = 16
    eb_base: float = 2.0
    ple_bin_count: int = 128
    layout: str = "shared"

    def __post_init__(self):
        self.strategy = self.strategy.upper()
        if self.layout not in LAYOUTS:
            raise EmbeddingError(f"unknown layout {self.layout!r}; choose from {LAYOUTS}")
        if self.strategy not in STRATEGIES:
            raise EmbeddingError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.d < 1 or self.eb_bin_count < 1 or self.ple_bin_count < 1:
            raise EmbeddingError("block width and bin counts must be positive")
        if self.strategy == "PLE" and self.ple_bin_count != self.d:
            raise EmbeddingError(f"PLE needs T == d, got T={self.ple_bin_count}, d={self.d}")
        if self.strategy == "EB" and self.eb_bin_count > self.d:
            raise EmbeddingError(f"EB bin count {self.eb_bin_count} exceeds block width {self.d}")
        if self.eb_base <= 1.0:
            raise EmbeddingError("eb_base must be > 1")


@dataclass
class EmbeddedSample:
    blocks: np.ndarray  # (F, d)
    label: int | None = None


# ---------------------------------------------------------------------------
# boundaries
# ---------------------------------------------------------------------------

def exponential_boundaries(lo: float, hi: float, n_bins: int, base: float = 2.0) -> np.ndarray:
    """``lo`` followed by ``lo + (hi - lo) * base**(t - n_bins)`` for t = 1..n_bins.

    Bins are narrowest next to ``lo``.  Collapsed boundaries (tiny ranges)
    are dropped so the result stays strictly increasing.
    """
    if hi <= lo:
        return np.array([lo], dtype=np.float64)
    t = np.arange(1, n_bins + 1, dtype=np.float64)
    b = np.concatenate([[lo], lo + (hi - lo) * base ** (t - n_bins)])
    b[-1] = hi
    keep = np.r_[True, np.diff(b) > 0]
    return b[keep]


def equal_width_boundaries(lo: float, hi: float, n_bins: int) -> np.ndarray:
    if hi <= lo:
        return np.array([lo], dtype=np.float64)
    b = np.linspace(lo, hi, n_bins + 1)
    b[-1] = hi
    return b


# ---------------------------------------------------------------------------
# single-value encoders
# ---------------------------------------------------------------------------

def _eb_index(x, boundaries):
    n_bins = max(len(boundaries) - 1, 1)
    t = np.searchsorted(boundaries, x, side="right") - 1
    return np.clip(t, 0, n_bins - 1)


def embed_eb(x: float, boundaries, d: int | None = None, offset: int = 0) -> np.ndarray:
    """One-hot of the bin holding ``x`` (clamped at both ends), zero-padded to ``d``."""
    boundaries = np.asarray(boundaries, dtype=np.float64)
    width = d if d is not None else max(len(boundaries) - 1, 1)
    out = np.zeros(width)
    out[offset + int(_eb_index(x, boundaries))] = 1.0
    return out


def _ple_batch(x, boundaries, width):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape + (width,))
    if len(boundaries) < 2:
        return out
    lo = boundaries[:-1]
    span = np.diff(boundaries)
    t = len(lo)
    out[..., :t] = np.clip((x[..., None] - lo) / span, 0.0, 1.0)
    return out


def embed_ple(x: float, boundaries, d: int | None = None) -> np.ndarray:
    """Component t is ``clip((x - b_t) / (b_{t+1} - b_t), 0, 1)``."""
    boundaries = np.asarray(boundaries, dtype=np.float64)
    width = d if d is not None else max(len(boundaries) - 1, 1)
    return _ple_batch(x, boundaries, width)


def embed_le(x: float, w, bias) -> np.ndarray:
    return x * np.asarray(w, dtype=np.float64) + np.asarray(bias, dtype=np.float64)


def build_vocab(symbols, d: int) -> dict[str, int]:
    vocab = {s: i for i, s in enumerate(sorted({str(s) for s in symbols}))}
    if len(vocab) + 1 > d:
        raise EmbeddingError(
            f"vocabulary of {len(vocab)} symbols plus the unknown slot exceeds block width {d}"
        )
    return vocab


def embed_categorical(s: str, vocab: dict[str, int], d: int, offset: int = 0) -> np.ndarray:
    """One-hot at the symbol's index; unseen symbols use index ``len(vocab)``."""
    out = np.zeros(d)
    out[offset + vocab.get(str(s), len(vocab))] = 1.0
    return out


# ---------------------------------------------------------------------------
# fitted embedder
# ---------------------------------------------------------------------------

@dataclass
class FittedEmbedder:
    spec: EmbedderSpec
    schema: FeatureSchema
    boundaries: list[np.ndarray]
    constant: list[bool]
    lo: np.ndarray
    hi: np.ndarray
    vocabs: list[dict[str, int]]
    le_w: np.ndarray | None = None  # (P, d)
    le_b: np.ndarray | None = None  # (P, d)
    frozen: bool = False
    offsets: list[int] | None = None  # one-hot start index per feature, schema order

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def n_features(self) -> int:
        return self.schema.n_features

    @property
    def input_width(self) -> int:
        return self.n_features * self.d

    @property
    def trainable(self) -> bool:
        return self.spec.strategy == "LE" and not self.frozen

    def le_inputs(self, numeric: np.ndarray) -> np.ndarray:
        """Numeric values rescaled to the fitted range (0 at min, 1 at max)."""
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return (numeric - self.lo) / span

    def _cat_codes(self, j: int, symbols: np.ndarray) -> np.ndarray:
        vocab = self.vocabs[j]
        unk = len(vocab)
        return np.fromiter((vocab.get(str(s), unk) for s in symbols), dtype=np.int64,
                           count=len(symbols))

    def embed_arrays(self, numeric: np.ndarray, categorical: np.ndarray) -> np.ndarray:
        """Embed column arrays into a ``(B, F, d)`` tensor in schema order."""
        numeric = np.asarray(numeric, dtype=np.float64)
        B = numeric.shape[0]
        d = self.d
        out = np.zeros((B, self.n_features, d))
        rows = np.arange(B)
        offsets = self.offsets or [0] * self.n_features
        ni = ci = 0
        for f, col in enumerate(self.schema.columns):
            if col.kind == NUMERIC:
                x = numeric[:, ni]
                if self.spec.strategy == "EB":
                    out[rows, f, offsets[f] + _eb_index(x, self.boundaries[ni])] = 1.0
                elif self.spec.strategy == "PLE":
                    out[:, f, :] = _ple_batch(x, self.boundaries[ni], d)
                else:
                    span = self.hi[ni] - self.lo[ni] if self.hi[ni] > self.lo[ni] else 1.0
                    xs = (x - self.lo[ni]) / span
                    out[:, f, :] = xs[:, None] * self.le_w[ni] + self.le_b[ni]
                ni += 1
            else:
                out[rows, f, offsets[f] + self._cat_codes(ci, categorical[:, ci])] = 1.0
                ci += 1
        return out

    def embed_table(self, table: FlowTable, idx=None) -> np.ndarray:
        self._check_schema(table.schema)
        if idx is None:
            return self.embed_arrays(table.numeric, table.categorical)
        return self.embed_arrays(table.numeric[idx], table.categorical[idx])

    def _check_schema(self, schema: FeatureSchema) -> None:
        if schema.feature_names != self.schema.feature_names or any(
            a.kind != b.kind for a, b in zip(schema.columns, self.schema.columns)
        ):
            raise EmbeddingError(
                f"schema mismatch: embedder fitted on {self.schema.feature_names}, "
                f"got {schema.feature_names}"
            )

    def le_grads(self, numeric: np.ndarray, grad_blocks: np.ndarray):
        """Gradients of the LE weights given d(loss)/d(blocks) of shape (B, F, d)."""
        xs = self.le_inputs(numeric)
        num_f = [f for f, c in enumerate(self.schema.columns) if c.kind == NUMERIC]
        g = grad_blocks[:, num_f, :]  # (B, P, d)
        dw = np.einsum("bp,bpd->pd", xs, g)
        db = g.sum(axis=0)
        return dw, db

    # -- serialization ----------------------------------------------------
    def state(self) -> tuple[dict, dict[str, np.ndarray]]:
        header = {
            "spec": {
                "strategy": self.spec.strategy, "d": self.spec.d,
                "eb_bin_count": self.spec.eb_bin_count, "eb_base": self.spec.eb_base,
                "ple_bin_count": self.spec.ple_bin_count, "layout": self.spec.layout,
            },
            "offsets": list(self.offsets) if self.offsets is not None else None,
            "schema": self.schema.to_dict(),
            "constant": [bool(c) for c in self.constant],
            "vocabs": [sorted(v.items(), key=lambda kv: kv[1]) for v in self.vocabs],
            "frozen": bool(self.frozen),
            "n_boundaries": [int(len(b)) for b in self.boundaries],
        }
        arrays = {"emb.lo": self.lo, "emb.hi": self.hi}
        for j, b in enumerate(self.boundaries):
            arrays[f"emb.boundaries.{j}"] = b
        if self.le_w is not None:
            arrays["emb.le_w"] = self.le_w
            arrays["emb.le_b"] = self.le_b
        return header, arrays

    @classmethod
    def from_state(cls, header: dict, arrays: dict[str, np.ndarray]) -> "FittedEmbedder":
        spec = EmbedderSpec(**header["spec"])
        schema = FeatureSchema.from_dict(header["schema"])
        n = len(header["n_boundaries"])
        return cls(
            spec=spec, schema=schema,
            boundaries=[arrays[f"emb.boundaries.{j}"] for j in range(n)],
            constant=list(header["constant"]),
            lo=arrays["emb.lo"], hi=arrays["emb.hi"],
            vocabs=[{s: int(i) for s, i in v} for v in header["vocabs"]],
            le_w=arrays.get("emb.le_w"), le_b=arrays.get("emb.le_b"),
            frozen=bool(header["frozen"]),
            offsets=header.get("offsets"),
        )


def fit(records: FlowTable, spec: EmbedderSpec, seed: int = 0) -> FittedEmbedder:
    """Fit bin boundaries, LE initial weights and categorical vocabularies."""
    if len(records) == 0:
        raise EmbeddingError("cannot fit an embedder on an empty record set")
    schema = records.schema
    lo = records.numeric.min(axis=0) if records.numeric.shape[1] else np.zeros(0)
    hi = records.numeric.max(axis=0) if records.numeric.shape[1] else np.zeros(0)
    boundaries, constant = [], []
    for j in range(records.numeric.shape[1]):
        constant.append(bool(hi[j] <= lo[j]))
        if spec.strategy == "EB":
            boundaries.append(exponential_boundaries(lo[j], hi[j], spec.eb_bin_count, spec.eb_base))
        else:
            boundaries.append(equal_width_boundaries(lo[j], hi[j], spec.ple_bin_count))
    vocabs = [build_vocab(records.categorical[:, j], spec.d)
              for j in range(records.categorical.shape[1])]
    offsets = _slot_offsets(schema, spec, boundaries, vocabs)
    le_w = le_b = None
    if spec.strategy == "LE":
        rng = np.random.default_rng([int(seed), 7])
        r = spec.d ** -0.5
        P = records.numeric.shape[1]
        le_w = rng.uniform(-r, r, size=(P, spec.d))
        le_b = rng.uniform(-r, r, size=(P, spec.d))
    return FittedEmbedder(spec, schema, boundaries, constant, lo, hi, vocabs, le_w, le_b,
                          offsets=offsets)


def _slot_offsets(schema, spec: EmbedderSpec, boundaries, vocabs) -> list[int]:
    offsets = [0] * schema.n_features
    if spec.layout == "shared":
        return offsets
    pos = ni = ci = 0
    for f, col in enumerate(schema.columns):
        if col.kind == NUMERIC:
            if spec.strategy == "EB":
                offsets[f] = pos
                pos += max(len(boundaries[ni]) - 1, 1)
            ni += 1
        else:
            offsets[f] = pos
            pos += len(vocabs[ci]) + 1
            ci += 1
    if pos > spec.d:
        raise EmbeddingError(
            f"disjoint layout needs {pos} one-hot slots but block width is {spec.d}; "
            "lower eb_bin_count, raise d, or use layout='shared'"
        )
    return offsets


def embed_record(r: FlowRecord, e: FittedEmbedder) -> EmbeddedSample:
    if len(r.numeric_values) != len(e.schema.numeric_columns) or len(r.categorical_values) != len(
        e.schema.categorical_columns
    ):
        raise EmbeddingError("record does not match the embedder's schema")
    num = np.array([r.numeric_values], dtype=np.float64)
    cat = np.array([r.categorical_values], dtype=object)
    return EmbeddedSample(e.embed_arrays(num, cat)[0], r.label)


__all__ = [
    "EmbedderSpec", "EmbeddedSample", "FittedEmbedder", "EmbeddingError", "UNKNOWN",
    "fit", "embed_eb", "embed_ple", "embed_le", "embed_categorical", "embed_record",
    "exponential_boundaries", "equal_width_boundaries", "build_vocab",
]
