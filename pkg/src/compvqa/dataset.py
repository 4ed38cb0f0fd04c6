"""Base/novel answer splits, attribute vocabulary, and dataset files.

Answer counts are question-level: an answer's count is the number of
questions for which at least one annotator gave it.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from os import PathLike
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bgn import PAD, UNK
from .errors import DataError, UsageError

STOPWORDS = frozenset({"and", "is", "do", "&", "are"})
_TOKEN = re.compile(r"[^\W_]+|&")


@dataclass
class AnnotationRecord:
    question_id: int
    image_id: str
    tokens: list
    answers: list  # [(answer text, annotator count)]
    answer_type: str | None = "other"

    def __post_init__(self):
        if not self.answers:
            raise DataError(f"question {self.question_id} has no answers")
        for text, count in self.answers:
            if not 0 <= count <= 10:
                raise DataError(f"question {self.question_id}: count {count} for {text!r} outside [0, 10]")

    def to_json(self) -> dict:
        obj = {"qid": self.question_id, "tokens": list(self.tokens), "image": self.image_id,
               "answers": [{"text": t, "count": int(c)} for t, c in self.answers]}
        if self.answer_type != "other":
            obj["answer_type"] = self.answer_type
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "AnnotationRecord":
        return cls(int(obj["qid"]), str(obj["image"]), list(obj["tokens"]),
                   [(a["text"], int(a["count"])) for a in obj["answers"]],
                   obj.get("answer_type", "other"))


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def tokenize_answer(answer: str) -> list[str]:
    """Attributes of an answer: lowercase word tokens minus stopwords, deduplicated.

    An empty result means the answer cannot be composed from attributes.
    """
    if not answer or not answer.strip():
        raise UsageError("cannot tokenize an empty answer")
    out: list[str] = []
    for tok in tokenize(answer):
        if tok not in STOPWORDS and tok not in out:
            out.append(tok)
    return out


def soft_label(count: int) -> float:
    if not 0 <= count <= 10:
        raise UsageError(f"annotator count {count} outside [0, 10]")
    return min(count / 3.0, 1.0)


# ------------------------------------------------------------------ manifest


@dataclass
class SplitManifest:
    base: list = field(default_factory=list)
    novel: list = field(default_factory=list)
    attributes: list = field(default_factory=list)
    decomposition: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    questions: dict = field(default_factory=dict)
    novel_examples: dict = field(default_factory=dict)
    shots: dict = field(default_factory=dict)

    @property
    def attribute_index(self) -> dict:
        return {a: i for i, a in enumerate(self.attributes)}

    def decomposition_of(self, answers: Sequence[str]) -> list[list[int]]:
        return [list(self.decomposition[a]) for a in answers]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SplitManifest":
        obj = json.loads(text)
        return cls(**{k: obj.get(k, v.default_factory()) for k, v in cls.__dataclass_fields__.items()})

    def save(self, path: str | PathLike) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | PathLike) -> "SplitManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def summary(self) -> dict:
        q = self.questions
        return {"base_answers": len(self.base), "novel_answers": len(self.novel),
                "attributes": len(self.attributes),
                **{f"{k}_questions": len(v) for k, v in sorted(q.items())}}


def _answer_counts(records: Iterable[AnnotationRecord]) -> Counter:
    counts: Counter = Counter()
    for r in records:
        counts.update({t for t, c in r.answers if c > 0})
    return counts


def build_splits(records: Sequence[AnnotationRecord], base_threshold: int = 40, novel_low: int = 10,
                 val_records: Sequence[AnnotationRecord] = (),
                 answer_types: Iterable[str] | None = ("other",)) -> SplitManifest:
    """Split answers by training count: base ``t >= base_threshold``; novel
    ``novel_low <= t < base_threshold`` and composed only of base attributes.

    Validation questions are assigned using the training-count membership.
    ``answer_types=None`` keeps every record regardless of its type tag.
    """
    types = None if answer_types is None else set(answer_types)

    def keep(r):
        return types is None or r.answer_type is None or r.answer_type in types

    train = [r for r in records if keep(r)]
    val = [r for r in val_records if keep(r)]
    counts = _answer_counts(train)

    base = sorted(a for a, c in counts.items() if c >= base_threshold)
    attrs_of = {a: tokenize_answer(a) for a in counts if a.strip()}
    attributes = sorted({u for a in base for u in attrs_of.get(a, [])})
    known = set(attributes)
    novel = sorted(
        a for a, c in counts.items()
        if novel_low <= c < base_threshold and attrs_of.get(a) and set(attrs_of[a]) <= known
    )
    index = {u: i for i, u in enumerate(attributes)}
    decomposition = {a: [index[u] for u in attrs_of.get(a, [])] for a in base + novel}

    base_set, novel_set = set(base), set(novel)

    def ids(recs, wanted):
        return sorted(r.question_id for r in recs if any(t in wanted and c > 0 for t, c in r.answers))

    novel_examples = {a: [] for a in novel}
    for r in train:
        for t in {t for t, c in r.answers if c > 0 and t in novel_set}:
            novel_examples[t].append(r.question_id)
    novel_examples = {a: sorted(q) for a, q in novel_examples.items()}

    return SplitManifest(
        base=base, novel=novel, attributes=attributes, decomposition=decomposition,
        thresholds={"base": base_threshold, "novel_low": novel_low},
        counts={a: counts[a] for a in base + novel},
        questions={"train_base": ids(train, base_set), "train_novel": ids(train, novel_set),
                   "val_base": ids(val, base_set), "val_novel": ids(val, novel_set)},
        novel_examples=novel_examples,
    )


def sample_few_shot(manifest: SplitManifest, k: int, seed: int) -> dict[str, list[int]]:
    """Exactly ``k`` training question ids per novel answer, sorted, drawn without replacement."""
    if k < 1:
        raise UsageError(f"shots must be >= 1, got {k}")
    rng = np.random.default_rng([int(seed), int(k)])
    out = {}
    for answer in manifest.novel:
        pool = sorted(manifest.novel_examples.get(answer, []))
        if len(pool) < k:
            raise DataError(f"novel answer {answer!r} has {len(pool)} training examples, fewer than {k}")
        picked = rng.choice(len(pool), size=k, replace=False)
        out[answer] = sorted(pool[i] for i in picked)
    return out


# ----------------------------------------------------------------- file I/O


def write_jsonl(path: str | PathLike, records: Iterable[AnnotationRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def read_jsonl(path: str | PathLike) -> list[AnnotationRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(AnnotationRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad record ({exc})") from None
    return out


def _load_json(path) -> object:
    raw = Path(path).read_bytes()
    if not raw.strip():
        return None
    try:
        return json.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON at byte offset {exc.pos}: {exc.msg}") from None


def load_vqa_records(annotations_path, questions_path=None) -> list[AnnotationRecord]:
    """Parse VQA v2 annotation JSON (plus optional question JSON) into records.

    Extra fields are ignored. Answers are aggregated into per-text annotator
    counts after lowercasing and stripping.
    """
    ann = _load_json(annotations_path)
    if ann is None:
        return []
    items = ann.get("annotations", []) if isinstance(ann, dict) else ann
    questions = {}
    if questions_path is not None:
        qobj = _load_json(questions_path) or {}
        for q in qobj.get("questions", []):
            questions[q["question_id"]] = q.get("question", "")
    out = []
    try:
        for a in items:
            qid = int(a["question_id"])
            counts = Counter(str(x["answer"]).strip().lower() for x in a.get("answers", []))
            counts.pop("", None)
            if not counts:
                mca = str(a.get("multiple_choice_answer", "")).strip().lower()
                if not mca:
                    continue
                counts[mca] = 1
            answers = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            out.append(AnnotationRecord(qid, str(a.get("image_id", "")), tokenize(questions.get(qid, "")),
                                        [(t, min(c, 10)) for t, c in answers], a.get("answer_type")))
    except (KeyError, TypeError) as exc:
        raise DataError(f"{annotations_path}: annotation missing field {exc}") from None
    return out


# ------------------------------------------------------------ array encoding


class QuestionVocab:
    """Word -> index map with PAD=0 and UNK=1."""

    def __init__(self, words: Iterable[str] = ()):
        self.words = ["<pad>", "<unk>"] + sorted(set(words) - {"<pad>", "<unk>"})
        self.index = {w: i for i, w in enumerate(self.words)}

    @classmethod
    def from_records(cls, records: Iterable[AnnotationRecord]) -> "QuestionVocab":
        return cls(w for r in records for w in r.tokens)

    def __len__(self):
        return len(self.words)

    def encode(self, tokens: Sequence[str], m_max: int) -> np.ndarray:
        """Truncate or right-pad to ``m_max`` indices."""
        ids = [self.index.get(t, UNK) for t in tokens[:m_max]]
        return np.array(ids + [PAD] * (m_max - len(ids)), dtype=np.int64)

    def to_json(self) -> str:
        return json.dumps(self.words)

    @classmethod
    def from_json(cls, text: str) -> "QuestionVocab":
        words = json.loads(text)
        vocab = cls()
        vocab.words = list(words)
        vocab.index = {w: i for i, w in enumerate(words)}
        return vocab


@dataclass
class EncodedSplit:
    qids: np.ndarray
    tokens: np.ndarray
    objects: np.ndarray
    labels: np.ndarray  # soft scores over the given answer list

    def __len__(self):
        return len(self.qids)

    def subset(self, idx) -> "EncodedSplit":
        return EncodedSplit(self.qids[idx], self.tokens[idx], self.objects[idx], self.labels[idx])

    def targets(self) -> list[list[int]]:
        return [list(np.flatnonzero(row > 0)) for row in self.labels]


def encode_records(records: Sequence[AnnotationRecord], features: dict, vocab: QuestionVocab,
                   answers: Sequence[str], m_max: int) -> EncodedSplit:
    """Turn records into arrays; labels are soft scores over ``answers``."""
    col = {a: i for i, a in enumerate(answers)}
    n = len(records)
    labels = np.zeros((n, len(answers)))
    tokens = np.zeros((n, m_max), dtype=np.int64)
    objs = []
    for i, r in enumerate(records):
        tokens[i] = vocab.encode(r.tokens, m_max)
        for text, count in r.answers:
            if text in col:
                labels[i, col[text]] = max(labels[i, col[text]], soft_label(count))
        try:
            objs.append(np.asarray(features[r.image_id], dtype=np.float64))
        except KeyError:
            raise DataError(f"no object features for image {r.image_id!r}") from None
    objects = np.stack(objs) if objs else np.zeros((0, 0, 0))
    return EncodedSplit(np.array([r.question_id for r in records], dtype=np.int64), tokens, objects, labels)
