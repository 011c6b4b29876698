"""Experiment configuration: nested sections, a dotted key-value file format,
and command-line overrides (`--set section.key=value`)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


@dataclass
class DataCfg:
    source: str = "synthetic"  # "synthetic" or a catalog directory path
    n_items: int = 2000
    n_users: int = 2000
    n_clusters: int = 64
    n_v: int = 4
    n_t: int = 8
    d_v: int = 32
    d_t: int = 32
    p_intra: float = 0.8
    n_pref: int = 1
    item_noise: float = 0.3
    row_noise: float = 0.3
    cold_frac: float = 0.05
    p_cold_last: float = 0.1
    max_len: int = 15


@dataclass
class ModelCfg:
    branches: str = "v,t,id"  # subset of {v, t, id}; "id" alone = classical baseline
    fst: str = "imt"  # imt | separate | dnn
    item_layers: int = 2
    separate_layers: int = 2
    heads: int = 2
    d: int = 32
    dropout: float = 0.1
    id_mask: bool = True
    id_init: str = "avg_modal"  # avg_modal | text | image | random
    backbone: str = "self_attention"  # self_attention | recurrent
    seq_layers: int = 2
    gru_layers: int = 1
    max_len: int = 15

    @property
    def branch_list(self):
        return tuple(b.strip() for b in self.branches.split(",") if b.strip())


@dataclass
class TrainCfg:
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 30
    patience: int = 5
    sample_cut: bool = True
    fusion: str = "collaborative"  # collaborative | early | late


@dataclass
class DistillCfg:
    enabled: bool = True
    T: float = 0.5
    alpha: float = 20.0


@dataclass
class EvalCfg:
    ks: list = field(default_factory=lambda: [10, 20])
    groups: int = 8
    val_users: int = 0  # 0 = evaluate on all users


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: DataCfg = field(default_factory=DataCfg)
    model: ModelCfg = field(default_factory=ModelCfg)
    train: TrainCfg = field(default_factory=TrainCfg)
    distill: DistillCfg = field(default_factory=DistillCfg)
    eval: EvalCfg = field(default_factory=EvalCfg)

    def validate(self):
        valid_branches = {"v", "t", "id"}
        bl = self.model.branch_list
        if not bl or not set(bl) <= valid_branches or len(set(bl)) != len(bl):
            raise ValueError(f"model.branches must be a subset of v,t,id; got {self.model.branches!r}")
        if self.model.fst not in ("imt", "separate", "dnn"):
            raise ValueError(f"model.fst must be imt|separate|dnn, got {self.model.fst!r}")
        if self.train.fusion not in ("collaborative", "early", "late"):
            raise ValueError(
                f"train.fusion must be collaborative|early|late, got {self.train.fusion!r}"
            )
        if not self.eval.ks:
            raise ValueError("eval.ks must be nonempty")
        if self.model.max_len != self.data.max_len:
            raise ValueError("model.max_len must equal data.max_len")
        return self

    def to_flat(self):
        flat = {"seed": self.seed}
        for section in ("data", "model", "train", "distill", "eval"):
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                flat[f"{section}.{f.name}"] = getattr(obj, f.name)
        return flat

    def copy(self):
        return ExperimentConfig(
            seed=self.seed,
            data=dataclasses.replace(self.data),
            model=dataclasses.replace(self.model),
            train=dataclasses.replace(self.train),
            distill=dataclasses.replace(self.distill),
            eval=dataclasses.replace(self.eval, ks=list(self.eval.ks)),
        )


def _coerce(raw, target_type, key):
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except (ValueError, json.JSONDecodeError):
            pass  # bare string value
    if target_type is bool:
        if isinstance(raw, bool):
            return raw
        if isinstance(raw, str) and raw.lower() in ("true", "false"):
            return raw.lower() == "true"
        raise ValueError(f"{key}: expected true/false, got {raw!r}")
    if target_type is int:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ValueError(f"{key}: expected an integer, got {raw!r}")
        if isinstance(raw, float) and not raw.is_integer():
            raise ValueError(f"{key}: expected an integer, got {raw!r}")
        return int(raw)
    if target_type is float:
        if not isinstance(raw, (int, float)) or isinstance(raw, bool):
            raise ValueError(f"{key}: expected a number, got {raw!r}")
        return float(raw)
    if target_type is list:
        if not isinstance(raw, list):
            raise ValueError(f"{key}: expected a JSON list, got {raw!r}")
        return raw
    return str(raw)


def apply_setting(cfg, key, raw):
    """Assign one dotted key (e.g. model.d) on an ExperimentConfig."""
    if key == "seed":
        cfg.seed = _coerce(raw, int, key)
        return
    if "." not in key:
        raise ValueError(f"unknown config key {key!r}; expected seed or section.name")
    section_name, field_name = key.split(".", 1)
    if not hasattr(cfg, section_name) or section_name not in (
        "data",
        "model",
        "train",
        "distill",
        "eval",
    ):
        raise ValueError(
            f"unknown config section {section_name!r}; "
            "expected one of data, model, train, distill, eval"
        )
    section = getattr(cfg, section_name)
    fields = {f.name: f for f in dataclasses.fields(section)}
    if field_name not in fields:
        raise ValueError(
            f"unknown config key {key!r}; accepted keys in [{section_name}]: "
            + ", ".join(sorted(fields))
        )
    target_type = type(getattr(section, field_name))
    setattr(section, field_name, _coerce(raw, target_type, key))


def load_config(path=None, overrides=()):
    """Build a validated config from an optional file plus --set overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = (part.strip() for part in line.split("=", 1))
                apply_setting(cfg, key, raw)
    for ov in overrides:
        if "=" not in ov:
            raise ValueError(f"override {ov!r} must look like key=value")
        key, raw = (part.strip() for part in ov.split("=", 1))
        apply_setting(cfg, key, raw)
    return cfg.validate()
