"""Corpus ingestion, label indexing, train/validation split and synthetic corpora.

Corpus files are UTF-8 JSON lines::

    {"id": "x1", "sections": {"title": "...", "abstract": "..."}, "labels": ["cs.LG"]}
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import tokenize
from .errors import CorpusError

log = logging.getLogger(__name__)

VALIDATION_FRACTION = 0.10
MAX_MALFORMED_FRACTION = 0.10
DEFAULT_SECTION_NAMES = ("abstract", "title", "keywords")


@dataclass(frozen=True)
class DocumentRecord:
    id: str
    sections: dict[str, str]
    labels: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "sections": dict(self.sections), "labels": list(self.labels)},
            ensure_ascii=False,
        )


class LabelIndex:
    """Lexicographically ordered label names mapped to class indices."""

    def __init__(self, names):
        self.names = tuple(sorted(set(names)))
        self.index = {n: i for i, n in enumerate(self.names)}

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        return isinstance(other, LabelIndex) and self.names == other.names

    def __repr__(self):
        return f"LabelIndex({len(self.names)} labels)"

    def encode(self, labels: Sequence[str]) -> np.ndarray:
        row = np.zeros(len(self.names))
        for name in labels:
            row[self.index[name]] = 1.0
        return row

    def encode_many(self, records: Sequence[DocumentRecord]) -> np.ndarray:
        if not records:
            return np.zeros((0, len(self.names)))
        return np.stack([self.encode(r.labels) for r in records])


@dataclass
class Corpus:
    records: list[DocumentRecord]
    labels: LabelIndex
    section_names: tuple[str, ...]
    missing_filled: int = 0
    malformed: list[tuple[int, str]] = field(default_factory=list)


def discover_sections(path) -> list[str]:
    """Section names in order of first appearance in a corpus file."""
    seen: dict[str, None] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                continue
            if isinstance(obj, dict) and isinstance(obj.get("sections"), dict):
                for name in obj["sections"]:
                    seen.setdefault(name, None)
    return list(seen)


def _parse_line(line: str, declared: Sequence[str]) -> tuple[DocumentRecord, int]:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    doc_id, sections, labels = obj.get("id"), obj.get("sections"), obj.get("labels")
    if not isinstance(doc_id, str) or not doc_id:
        raise ValueError("'id' must be a non-empty string")
    if not isinstance(sections, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in sections.items()
    ):
        raise ValueError("'sections' must map strings to strings")
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise ValueError("'labels' must be an array of strings")
    missing = sum(1 for name in declared if name not in sections)
    ordered = {name: sections.get(name, "") for name in declared}
    return DocumentRecord(doc_id, ordered, tuple(dict.fromkeys(labels))), missing


def load_corpus(path, declared_sections: Sequence[str] | None = None, labels: LabelIndex | None = None) -> Corpus:
    """Read a JSON-lines corpus.

    Sections not listed in ``declared_sections`` are dropped; declared ones that
    are absent become empty text and are counted in ``missing_filled``.
    Malformed lines are skipped and reported unless they exceed 10% of lines.
    Passing ``labels`` fixes the label space; unknown labels are then malformed.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc
    declared = tuple(declared_sections) if declared_sections else tuple(discover_sections(path))

    records: list[DocumentRecord] = []
    malformed: list[tuple[int, str]] = []
    missing_total = 0
    seen_ids: set[str] = set()
    n_lines = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        n_lines += 1
        try:
            rec, missing = _parse_line(line, declared)
            if rec.id in seen_ids:
                raise ValueError(f"duplicate id {rec.id!r}")
            if labels is not None:
                unknown = [x for x in rec.labels if x not in labels.index]
                if unknown:
                    raise ValueError(f"labels outside the label space: {unknown}")
        except (json.JSONDecodeError, ValueError) as exc:
            malformed.append((lineno, str(exc)))
            continue
        seen_ids.add(rec.id)
        missing_total += missing
        records.append(rec)

    if n_lines == 0:
        raise CorpusError(f"empty corpus: {path}")
    if len(malformed) > MAX_MALFORMED_FRACTION * n_lines:
        first = "; ".join(f"line {n}: {msg}" for n, msg in malformed[:5])
        raise CorpusError(f"{len(malformed)} of {n_lines} lines malformed in {path} ({first})")
    for lineno, msg in malformed:
        log.warning("%s:%d skipped: %s", path, lineno, msg)
    if missing_total:
        log.info("%s: filled %d missing sections with empty text", path, missing_total)

    index = labels if labels is not None else LabelIndex(x for r in records for x in r.labels)
    return Corpus(records, index, declared, missing_total, malformed)


def save_corpus(records: Sequence[DocumentRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def validation_size(n: int, fraction: float = VALIDATION_FRACTION) -> int:
    return int(math.floor(fraction * n + 0.5))


def split(
    records: Sequence[DocumentRecord], fraction: float = VALIDATION_FRACTION, seed: int = 0
) -> tuple[list[DocumentRecord], list[DocumentRecord]]:
    """Seeded document-level shuffle, then the first ``round(fraction*N)`` go to validation."""
    if len(records) < 10:
        raise CorpusError(f"need at least 10 records to split, got {len(records)}")
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"validation fraction must be in [0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(records))
    n_val = validation_size(len(records), fraction)
    val = [records[i] for i in order[:n_val]]
    train = [records[i] for i in order[n_val:]]
    return train, val


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n_sections: int = 3
    n_classes: int = 8
    n_docs: int = 2000
    informative: int = 0
    noise: float = 0.3
    seed: int = 0
    section_length: int = 20
    signatures_per_label: int = 5
    signature_slots: int = 3
    noise_vocab: int = 200
    max_labels: int = 3

    def section_names(self) -> tuple[str, ...]:
        if self.n_sections <= len(DEFAULT_SECTION_NAMES):
            return DEFAULT_SECTION_NAMES[: self.n_sections]
        return tuple(f"section{k}" for k in range(self.n_sections))

    def label_names(self) -> tuple[str, ...]:
        width = len(str(self.n_classes - 1))
        return tuple(f"c{j:0{width}d}" for j in range(self.n_classes))

    def validate(self):
        if self.n_sections < 1:
            raise ValueError("need at least one section")
        if self.n_classes < 1:
            raise ValueError("need at least one class")
        if self.n_docs < 1:
            raise ValueError("need at least one document")
        if not 0 <= self.informative < self.n_sections:
            raise ValueError(f"informative section {self.informative} outside [0, {self.n_sections})")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError(f"noise level must be in [0, 1], got {self.noise}")
        if self.section_length < 0 or self.signatures_per_label < 1 or self.signature_slots < 1:
            raise ValueError("lengths and signature counts must be positive")
        if self.noise_vocab < 1 or self.max_labels < 1:
            raise ValueError("noise vocabulary and max labels must be positive")


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    records: list[DocumentRecord]
    signatures: dict[str, list[str]]

    @property
    def section_names(self) -> tuple[str, ...]:
        return self.spec.section_names()

    def manifest(self) -> dict:
        return {
            "format": "lsw-synthetic 1",
            "seed": self.spec.seed,
            "spec": {k: getattr(self.spec, k) for k in self.spec.__dataclass_fields__},
            "section_names": list(self.section_names),
            "informative_section": self.section_names[self.spec.informative],
            "signatures": self.signatures,
        }

    def write(self, corpus_path, manifest_path=None) -> Path:
        corpus_path = Path(corpus_path)
        save_corpus(self.records, corpus_path)
        manifest_path = Path(manifest_path) if manifest_path else corpus_path.with_suffix(".manifest.json")
        manifest_path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return manifest_path


def gen_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    """Corpus where only one section carries label-identifying tokens.

    Each label owns a few signature words. The informative section holds
    ``signature_slots`` signature draws per gold label, each replaced by a
    noise word with probability ``noise``, padded with noise words to
    ``section_length``. Every other section is pure noise from the same pool.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    labels = spec.label_names()
    names = spec.section_names()
    signatures = {lab: [f"sig{lab}x{j}" for j in range(spec.signatures_per_label)] for lab in labels}
    width = len(str(spec.noise_vocab - 1))
    pool = [f"w{i:0{width}d}" for i in range(spec.noise_vocab)]
    max_labels = min(spec.max_labels, spec.n_classes)
    # fewer labels are more likely: weights 1, 1/2, 1/3, ...
    count_p = np.array([1.0 / (i + 1) for i in range(max_labels)])
    count_p /= count_p.sum()
    doc_width = len(str(spec.n_docs - 1))

    def noise_words(n):
        return [pool[i] for i in rng.integers(0, len(pool), size=n)]

    records = []
    for i in range(spec.n_docs):
        n_lab = int(rng.choice(max_labels, p=count_p)) + 1
        gold = sorted(labels[j] for j in rng.choice(spec.n_classes, size=n_lab, replace=False))
        sections = {}
        for k, name in enumerate(names):
            if k == spec.informative:
                words = []
                for lab in gold:
                    for _ in range(spec.signature_slots):
                        if rng.random() < spec.noise:
                            words.append(pool[int(rng.integers(0, len(pool)))])
                        else:
                            words.append(signatures[lab][int(rng.integers(0, spec.signatures_per_label))])
                words += noise_words(max(0, spec.section_length - len(words)))
                rng.shuffle(words)
            else:
                words = noise_words(spec.section_length)
            sections[name] = " ".join(words)
        records.append(DocumentRecord(f"syn{i:0{doc_width}d}", sections, tuple(gold)))
    return SyntheticCorpus(spec, records, signatures)


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------


def signature_section_counts(records: Sequence[DocumentRecord], signatures: dict[str, list[str]]) -> dict[str, int]:
    """How often signature words occur in each section."""
    sig_words = {w for words in signatures.values() for w in words}
    counts: Counter[str] = Counter()
    for rec in records:
        for name, text in rec.sections.items():
            counts[name] += sum(1 for t in tokenize(text) if t in sig_words)
    return {name: counts.get(name, 0) for name in (records[0].sections if records else ())}


def _binary_mi(n11: int, n10: int, n01: int, n00: int) -> float:
    n = n11 + n10 + n01 + n00
    total = 0.0
    for joint, a, b in (
        (n11, n11 + n10, n11 + n01),
        (n10, n11 + n10, n10 + n00),
        (n01, n01 + n00, n11 + n01),
        (n00, n01 + n00, n10 + n00),
    ):
        if joint:
            total += joint / n * math.log(joint * n / (a * b))
    return total


def section_label_information(records: Sequence[DocumentRecord], section: str, labels: LabelIndex) -> float:
    """Mean over labels of the best token-presence/label mutual information (nats).

    Counting estimate: for each label, the most informative token in
    ``section`` is found by its 2x2 presence table against the label.
    """
    n = len(records)
    if n == 0:
        return 0.0
    token_docs: dict[str, set[int]] = {}
    for i, rec in enumerate(records):
        for tok in set(tokenize(rec.sections.get(section, ""))):
            token_docs.setdefault(tok, set()).add(i)
    best = []
    for lab in labels.names:
        pos = {i for i, r in enumerate(records) if lab in r.labels}
        top = 0.0
        for docs in token_docs.values():
            n11 = len(docs & pos)
            n10 = len(docs) - n11
            n01 = len(pos) - n11
            n00 = n - n11 - n10 - n01
            top = max(top, _binary_mi(n11, n10, n01, n00))
        best.append(top)
    return float(np.mean(best))
