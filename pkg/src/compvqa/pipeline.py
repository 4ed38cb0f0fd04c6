"""Loading dataset directories and running the two stages end to end."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .dataset import EncodedSplit, QuestionVocab, SplitManifest, encode_records, read_jsonl
from .errors import DataError
from .estimators import CompositionalVQA, NovelAnswerClassifier
from .validation import pack_inputs

SPLITS = ("train_base", "train_novel", "val_base", "val_novel")


@dataclass
class DatasetBundle:
    root: Path
    manifest: SplitManifest
    records: dict
    features: dict
    vocab: QuestionVocab
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def load(cls, root) -> "DatasetBundle":
        root = Path(root)
        if not (root / "manifest.json").exists():
            raise DataError(f"{root} has no manifest.json")
        manifest = SplitManifest.load(root / "manifest.json")
        records = {s: read_jsonl(root / f"{s}.jsonl") for s in SPLITS if (root / f"{s}.jsonl").exists()}
        features = checkpoint.load(root / "features.cvqa")
        train = records.get("train_base", []) + records.get("train_novel", [])
        return cls(root, manifest, records, features, QuestionVocab.from_records(train))

    @property
    def n_objects(self) -> int:
        return next(iter(self.features.values())).shape[0]

    @property
    def d_obj(self) -> int:
        return next(iter(self.features.values())).shape[1]

    def encode(self, split: str, answers, m_max: int, qids=None) -> EncodedSplit:
        key = (split, tuple(answers), m_max)
        if key not in self._cache:
            self._cache[key] = encode_records(self.records[split], self.features, self.vocab, answers, m_max)
        enc = self._cache[key]
        if qids is not None:
            wanted = set(int(q) for q in qids)
            enc = enc.subset(np.array([q in wanted for q in enc.qids]))
        return enc

    def base_split(self, split: str, m_max: int) -> EncodedSplit:
        return self.encode(split, self.manifest.base, m_max)

    def novel_split(self, split: str, m_max: int, shots: int | None = None) -> EncodedSplit:
        qids = None
        if shots is not None:
            per_answer = self.manifest.shots.get(str(shots))
            if per_answer is None:
                raise DataError(f"manifest has no {shots}-shot sample")
            qids = [q for a in self.manifest.novel for q in per_answer[a]]
        return self.encode(split, self.manifest.novel, m_max, qids)


def X_of(split: EncodedSplit) -> np.ndarray:
    return pack_inputs(split.tokens, split.objects)


def base_estimator(bundle: DatasetBundle, **params) -> CompositionalVQA:
    m = bundle.manifest
    return CompositionalVQA(base_decomposition=m.decomposition_of(m.base), n_attributes=len(m.attributes),
                            vocab_size=len(bundle.vocab), n_objects=bundle.n_objects, d_obj=bundle.d_obj,
                            **params)


def novel_estimator(bundle: DatasetBundle, base: CompositionalVQA, **params) -> NovelAnswerClassifier:
    m = bundle.manifest
    return NovelAnswerClassifier(base_model=base, novel_decomposition=m.decomposition_of(m.novel), **params)
