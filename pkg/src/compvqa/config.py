"""Flat ``key=value`` run configuration.

One setting per line, ``#`` starts a comment. Command-line ``--key value``
overrides file values. Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

from .errors import ConfigError


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str
    choices: tuple | None = None
    is_path: bool = False


def _int_list(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(";", ",").split(",") if x.strip())


def _float_nonneg(text: str) -> float:
    v = float(text)
    if v < 0:
        raise ValueError("must be >= 0")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


def _opt_path(text: str):
    return text or ""


RUN_KEYS: dict[str, Key] = {
    "c_dim": Key(_pos_int, 1024, "output size C of the question encoder"),
    "k_dim": Key(_pos_int, 1024, "joint embedding size K (must equal c_dim)"),
    "embed_dim": Key(_pos_int, 300, "learned word embedding size"),
    "glimpses_image": Key(_pos_int, 4, "image-graph glimpses"),
    "glimpses_question": Key(_pos_int, 4, "question-graph glimpses"),
    "m_max": Key(_pos_int, 15, "question length after truncation/padding"),
    "n_objects": Key(_pos_int, 100, "objects per image (must match the features)"),
    "d_obj": Key(_pos_int, 2048, "object feature size (must match the features)"),
    "dropout": Key(float, 0.2, "dropout after every linear map"),
    "lambda": Key(_float_nonneg, 0.1, "weight of the answer/attribute distance loss"),
    "distance": Key(str, "mse", "distance between answers and attribute sums", ("mse", "cosine")),
    "head_mode": Key(str, "an", "attribute head variant", ("an", "sum", "lcr", "none")),
    "init": Key(str, "he", "novel answer embedding initialisation", ("he", "attribute")),
    "batch_size": Key(_pos_int, 128, "base-stage mini-batch size"),
    "novel_batch_size": Key(_pos_int, 1, "novel-stage mini-batch size (small sets need many updates)"),
    "seed": Key(int, 0, "master seed; sub-streams derive from it"),
    "shots": Key(_pos_int, 1, "examples per novel answer in the novel stage"),
    "epochs": Key(_pos_int, 15, "base-stage epochs (novel stage follows its schedule)"),
    "eval_mode": Key(str, "soft", "accuracy of the argmax: soft VQA score or exact match", ("soft", "exact")),
    "data_dir": Key(_opt_path, "", "dataset directory (jsonl + features.cvqa + manifest.json)", is_path=True),
    "run_dir": Key(_opt_path, "", "output directory for this run", is_path=True),
    "base_run": Key(_opt_path, "", "base-stage run directory used by train-novel", is_path=True),
}

SYNTH_KEYS: dict[str, Key] = {
    "groups": Key(str, "action:riding,eating,cutting,holding,washing;"
                       "object:elephant,pizza,cake,horse,bench,couch,apple,paper;"
                       "color:red,yellow,white,black",
                  "attribute groups as name:a,b,c;name:..."),
    "n_base_combos": Key(_pos_int, 60, "base combinations"),
    "n_novel_combos": Key(_pos_int, 15, "novel combinations"),
    "base_combos": Key(str, "", "explicit base combinations 'a b c;d e f' (overrides n_base_combos)"),
    "novel_combos": Key(str, "", "explicit novel combinations (overrides n_novel_combos)"),
    "examples_per_base": Key(_pos_int, 200, "training questions per base combination"),
    "novel_pool": Key(_pos_int, 20, "training questions per novel combination"),
    "val_per_base": Key(_pos_int, 10, "validation questions per base combination"),
    "val_per_novel": Key(_pos_int, 30, "validation questions per novel combination"),
    "shots": Key(_int_list, (1, 5, 10), "few-shot samples stored in the manifest"),
    "d_obj": Key(_pos_int, 32, "object feature size"),
    "n_objects": Key(_pos_int, 6, "objects per image"),
    "noise": Key(_float_nonneg, 1.0, "feature noise scale"),
    "seed": Key(int, 0, "generator seed"),
}


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Config:
    """Typed view over a key schema; values are accessible as ``cfg["key"]``."""

    def __init__(self, schema: Mapping[str, Key], values: Mapping[str, Any] | None = None):
        self.schema = dict(schema)
        self.values = {k: spec.default for k, spec in self.schema.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in self.schema:
            raise ConfigError(f"unknown config key {key!r}")
        spec = self.schema[key]
        if isinstance(value, str):
            try:
                value = spec.parse(value.strip())
            except ValueError as exc:
                raise ConfigError(f"bad value {value!r} for {key}: {exc}") from None
        if spec.choices and value not in spec.choices:
            raise ConfigError(f"{key} must be one of {spec.choices}, got {value!r}")
        self.values[key] = value

    def __getitem__(self, key):
        return self.values[key]

    def __eq__(self, other):
        return isinstance(other, Config) and self.values == other.values

    def update(self, overrides: Mapping[str, Any]) -> "Config":
        for k, v in overrides.items():
            if v is not None:
                self.set(k, v)
        return self

    @classmethod
    def parse(cls, schema, text: str, source="<config>") -> "Config":
        cfg = cls(schema)
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                cfg.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
        return cfg

    @classmethod
    def load(cls, schema, path) -> "Config":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        return cls.parse(schema, path.read_text(encoding="utf-8"), str(path))

    def to_text(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in self.values.items())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def run_config(values=None) -> Config:
    cfg = Config(RUN_KEYS, values)
    return cfg


def validate_run(cfg: Config, need_paths=()) -> None:
    if cfg["c_dim"] != cfg["k_dim"]:
        raise ConfigError(f"c_dim ({cfg['c_dim']}) must equal k_dim ({cfg['k_dim']})")
    if not 0.0 <= cfg["dropout"] < 1.0:
        raise ConfigError("dropout must lie in [0, 1)")
    for key in need_paths:
        value = cfg[key]
        if not value:
            raise ConfigError(f"{key} is required (set it in the config or pass --{key})")
        if not Path(value).exists():
            raise ConfigError(f"{key} path {value} does not exist")


def synth_config_from(cfg: Config):
    """Translate a synth ``Config`` into :class:`compvqa.synthetic.SynthConfig`."""
    from .synthetic import SynthConfig

    groups = {}
    for chunk in cfg["groups"].split(";"):
        if not chunk.strip():
            continue
        if ":" not in chunk:
            raise ConfigError(f"group spec {chunk!r} needs name:attr,attr")
        name, attrs = chunk.split(":", 1)
        groups[name.strip()] = [a.strip() for a in attrs.split(",") if a.strip()]

    def combos(text):
        return [c.split() for c in text.split(";") if c.strip()] or None

    base, novel = combos(cfg["base_combos"]), combos(cfg["novel_combos"])
    return SynthConfig(
        groups=groups, n_base_combos=cfg["n_base_combos"], n_novel_combos=cfg["n_novel_combos"],
        examples_per_base=cfg["examples_per_base"], novel_pool=cfg["novel_pool"],
        val_per_base=cfg["val_per_base"], val_per_novel=cfg["val_per_novel"], shots=tuple(cfg["shots"]),
        d_obj=cfg["d_obj"], n_objects=cfg["n_objects"], noise=cfg["noise"], seed=cfg["seed"],
        base_combos=base, novel_combos=novel if novel else ([] if base else None),
    )
