"""Synthetic compositional VQA data.

Every answer is one attribute from each group (for instance action, object,
colour). An image is ``n_objects`` feature vectors: each attribute of the
answer occupies its own randomly chosen object slot as a noisy copy of a fixed
prototype, the remaining slots hold noise only. Base/novel membership is
derived by running :func:`build_splits` on the generated training records, so
base combinations get ``examples_per_base`` questions (>= the base threshold)
and novel combinations get ``novel_pool`` questions (inside the novel band).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .dataset import AnnotationRecord, SplitManifest, build_splits, sample_few_shot, write_jsonl
from .errors import ConfigError

DEFAULT_GROUPS = {
    "action": ["riding", "eating", "cutting", "holding", "washing"],
    "object": ["elephant", "pizza", "cake", "horse", "bench", "couch", "apple", "paper"],
    "color": ["red", "yellow", "white", "black"],
}

TEMPLATES = [
    "what is happening in the picture",
    "what is the {g0} and the {g1} and its {g2}",
    "describe the {g1} its {g2} and the {g0}",
    "which {g0} {g1} and {g2} are shown",
    "what {g2} {g1} is being used for what {g0}",
    "what is going on here",
]


@dataclass
class SynthConfig:
    groups: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_GROUPS.items()})
    n_base_combos: int = 60
    n_novel_combos: int = 15
    examples_per_base: int = 200
    novel_pool: int = 20
    val_per_base: int = 10
    val_per_novel: int = 30
    shots: tuple = (1, 5, 10)
    d_obj: int = 32
    n_objects: int = 6
    noise: float = 1.0
    seed: int = 0
    base_threshold: int = 40
    novel_low: int = 10
    base_combos: list | None = None
    novel_combos: list | None = None

    def validate(self):
        if any(len(v) == 0 for v in self.groups.values()):
            raise ConfigError("every attribute group needs at least one attribute")
        if self.n_objects < len(self.groups):
            raise ConfigError(f"n_objects={self.n_objects} cannot hold one slot per group ({len(self.groups)})")
        if self.examples_per_base < self.base_threshold:
            raise ConfigError("examples_per_base must reach the base threshold")
        if not self.novel_low <= self.novel_pool < self.base_threshold:
            raise ConfigError("novel_pool must fall inside [novel_low, base_threshold)")
        if self.shots and max(self.shots) > self.novel_pool:
            raise ConfigError("novel_pool must cover the largest shot count")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")


def answer_text(combo) -> str:
    return " ".join(combo)


def choose_combos(config: SynthConfig, rng: np.random.Generator):
    """Pick base and novel combinations; novel ones only use attributes seen in base."""
    if config.base_combos is not None or config.novel_combos is not None:
        base = [tuple(c) for c in (config.base_combos or [])]
        novel = [tuple(c) for c in (config.novel_combos or [])]
        seen = {u for c in base for u in c}
        for c in novel:
            missing = [u for u in c if u not in seen]
            if missing:
                raise ConfigError(f"novel combination {answer_text(c)!r} uses unseen attributes {missing}")
        if set(base) & set(novel):
            raise ConfigError("a combination cannot be both base and novel")
        return base, novel
    universe = list(itertools.product(*config.groups.values()))
    need = config.n_base_combos + config.n_novel_combos
    if need > len(universe):
        raise ConfigError(f"{need} combinations requested but only {len(universe)} exist")
    for _ in range(1000):
        picked = [universe[i] for i in rng.choice(len(universe), size=need, replace=False)]
        base, novel = picked[:config.n_base_combos], picked[config.n_base_combos:]
        seen = {u for c in base for u in c}
        if all(u in seen for c in novel for u in c):
            return base, novel
    raise ConfigError("could not draw novel combinations covered by base attributes")


class _Renderer:
    def __init__(self, config: SynthConfig, rng: np.random.Generator):
        self.config = config
        attrs = [u for g in config.groups.values() for u in g]
        self.prototypes = {u: rng.normal(0.0, 1.0, config.d_obj) for u in attrs}
        self.group_names = list(config.groups)

    def image(self, combo, rng) -> np.ndarray:
        cfg = self.config
        feats = cfg.noise * rng.normal(0.0, 1.0, (cfg.n_objects, cfg.d_obj))
        slots = rng.choice(cfg.n_objects, size=len(combo), replace=False)
        for slot, u in zip(slots, combo):
            feats[slot] += self.prototypes[u]
        return feats.astype(np.float32)

    def question(self, rng) -> list[str]:
        tpl = TEMPLATES[rng.integers(len(TEMPLATES))]
        names = {f"g{i}": n for i, n in enumerate(self.group_names)}
        return tpl.format(**{k: names.get(k, "thing") for k in ("g0", "g1", "g2")}).split()


def generate(config: SynthConfig):
    """Build records, features and manifest in memory.

    Returns ``(splits, features, manifest)`` where ``splits`` maps
    ``train_base/train_novel/val_base/val_novel`` to record lists.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    base, novel = choose_combos(config, rng)
    render = _Renderer(config, rng)
    features: dict[str, np.ndarray] = {}
    splits = {"train_base": [], "train_novel": [], "val_base": [], "val_novel": []}
    qid = 0
    plan = [("train_base", base, config.examples_per_base), ("train_novel", novel, config.novel_pool),
            ("val_base", base, config.val_per_base), ("val_novel", novel, config.val_per_novel)]
    for split, combos, per in plan:
        for combo in combos:
            for _ in range(per):
                key = f"{split}_{qid:07d}"
                features[key] = render.image(combo, rng)
                splits[split].append(AnnotationRecord(qid, key, render.question(rng),
                                                      [(answer_text(combo), 10)], "other"))
                qid += 1

    manifest = build_splits(splits["train_base"] + splits["train_novel"],
                            config.base_threshold, config.novel_low,
                            val_records=splits["val_base"] + splits["val_novel"])
    expected = ({answer_text(c) for c in base}, {answer_text(c) for c in novel})
    if (set(manifest.base), set(manifest.novel)) != expected:
        raise ConfigError("generated counts do not reproduce the intended base/novel split")
    manifest.shots = {str(k): sample_few_shot(manifest, k, config.seed) for k in config.shots}
    return splits, features, manifest


def gen_synthetic(config: SynthConfig, out_dir) -> SplitManifest:
    """Write ``{split}.jsonl``, ``features.cvqa``, ``manifest.json`` and ``synth.json`` to ``out_dir``."""
    splits, features, manifest = generate(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, records in splits.items():
        write_jsonl(out / f"{name}.jsonl", records)
    checkpoint.save(out / "features.cvqa", features)
    manifest.save(out / "manifest.json")
    cfg = asdict(config)
    cfg["shots"] = list(config.shots)
    (out / "synth.json").write_text(json.dumps(cfg, indent=1) + "\n", encoding="utf-8")
    return manifest
