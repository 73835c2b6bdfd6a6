"""YAML run configuration with exhaustive validation.

A config is a mapping of sections onto the library's config dataclasses.
Unknown keys, wrong types and rejected values are collected and reported
together instead of stopping at the first problem.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .baselines import GbdtConfig
from .contrastive import ContrastiveConfig
from .embed import EmbedderSpec
from .flowdata import SplitConfig


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclass
class NetConfig:
    trunk_layers: int = 3
    trunk_width: int = 256
    head_layers: int = 3
    head_width: int = 128
    freeze: int = 0


@dataclass
class TrainConfig:
    max_epochs: int = 2
    eval_every: int = 200
    patience: int = 1
    batch_size: int = 128
    lr: float = 1e-3


@dataclass
class ExperimentConfig:
    repetitions: int = 3
    seeds: list[int] | None = None
    baseline_train: str = "finetune"
    knn_k: int = 5
    tables: list[str] = field(default_factory=lambda: ["1", "2", "3", "4", "5"])


# section name -> (dataclass, keys that the runner fills in itself)
SECTIONS = {
    "split": (SplitConfig, {"seed"}),
    "embedder": (EmbedderSpec, set()),
    "network": (NetConfig, set()),
    "contrastive": (ContrastiveConfig, {"seed"}),
    "finetune": (TrainConfig, set()),
    "gbdt": (GbdtConfig, set()),
    "experiment": (ExperimentConfig, set()),
}


@dataclass
class RunConfig:
    seed: int = 0
    split: SplitConfig = field(default_factory=SplitConfig)
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    network: NetConfig = field(default_factory=NetConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    finetune: TrainConfig = field(default_factory=TrainConfig)
    gbdt: GbdtConfig = field(default_factory=GbdtConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        for name, (_, hidden) in SECTIONS.items():
            d = dataclasses.asdict(getattr(self, name))
            out[name] = {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in d.items() if k not in hidden}
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)


def _type_ok(value, annotation) -> bool:
    hint = annotation if not isinstance(annotation, str) else None
    if hint is None:
        text = annotation.replace(" ", "")
        if text.startswith("tuple") or text.startswith("list"):
            return isinstance(value, (list, tuple)) or (value is None and "None" in text)
        if "None" in text and value is None:
            return True
        base = text.split("|")[0]
        hint = {"int": int, "float": float, "str": str, "bool": bool}.get(base)
        if hint is None:
            return True
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    origin = typing.get_origin(hint)
    if origin in (list, tuple):
        return isinstance(value, (list, tuple))
    return isinstance(value, hint) if isinstance(hint, type) else True


def parse_config(raw: dict | None, seed: int | None = None) -> RunConfig:
    """Build a :class:`RunConfig`; ``seed`` (if given) overrides the file."""
    raw = {} if raw is None else raw
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError([f"top level must be a mapping, got {type(raw).__name__}"])
    for key in raw:
        if key != "seed" and key not in SECTIONS:
            problems.append(f"unknown section {key!r} (known: seed, {', '.join(SECTIONS)})")
    run_seed = raw.get("seed", 0) if seed is None else seed
    if not _type_ok(run_seed, "int"):
        problems.append(f"seed: expected an integer, got {run_seed!r}")
        run_seed = 0
    built = {}
    for name, (cls, hidden) in SECTIONS.items():
        section = raw.get(name) or {}
        if not isinstance(section, dict):
            problems.append(f"{name}: expected a mapping, got {type(section).__name__}")
            section = {}
        fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in hidden}
        kwargs, ok = {}, True
        for key, value in section.items():
            if key not in fields:
                problems.append(f"{name}.{key}: unknown key (known: {', '.join(fields)})")
                ok = False
            elif not _type_ok(value, fields[key].type):
                problems.append(f"{name}.{key}: expected {fields[key].type}, got {value!r}")
                ok = False
            else:
                kwargs[key] = value
        if "seed" in hidden:
            kwargs["seed"] = run_seed
        # build from the well-typed keys anyway so value errors are listed too
        try:
            obj = cls(**kwargs)
        except (ValueError, TypeError) as exc:
            problems.append(f"{name}: {exc}")
            continue
        if ok:
            built[name] = obj
    exp = built.get("experiment")
    if exp is not None:
        if exp.baseline_train not in ("finetune", "all"):
            problems.append("experiment.baseline_train: must be 'finetune' or 'all'")
        if exp.repetitions < 1:
            problems.append("experiment.repetitions: must be >= 1")
        if exp.seeds is not None and len(exp.seeds) < exp.repetitions:
            problems.append("experiment.seeds: need one seed per repetition")
    net = built.get("network")
    if net is not None:
        if net.trunk_layers < 1 or net.head_layers < 1:
            problems.append("network: trunk_layers and head_layers must be >= 1")
        if not 0 <= net.freeze <= net.trunk_layers + net.head_layers:
            problems.append("network.freeze: must lie between 0 and trunk_layers + head_layers")
    if problems:
        raise ConfigError(problems)
    return RunConfig(seed=int(run_seed), **built)


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    if path is None:
        return parse_config({}, seed)
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML: {exc}"]) from None
    return parse_config(raw, seed)
