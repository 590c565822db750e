"""Seeded synthetic corpora with exact gold event annotations.

Sentences come from ``word/TAG`` templates with an ``{EVENT}`` slot and an
optional ``{DISTRACTOR}`` slot. Attribute values are drawn per event and
rendered as cue words around it, so every attribute is recoverable from
context. Test events can be swapped for out-of-vocabulary event words.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from clinevent.corpus import (
    AnnotationSet,
    Degree,
    Document,
    EventAnnotation,
    EventType,
    Modality,
    Polarity,
    write_corpus_annotations,
)
from clinevent.errors import ConfigError
from clinevent.textproc import format_tagged_sentence, tokenize
from clinevent.validator import SynthSpecValidator

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
ATTRIBUTES = ("modality", "degree", "polarity", "type", "doctimerel")
LEFT_CUE_ORDER = ("doctimerel", "modality", "polarity", "degree")
RIGHT_CUE_ORDER = ("type",)
EVENT_SLOT = "{EVENT}"
DISTRACTOR_SLOT = "{DISTRACTOR}"
NO_SPACE_BEFORE = frozenset(".,;:?!)")

DEFAULT_ATTRIBUTES = {
    "modality": {Modality.ACTUAL.value: 1.0},
    "degree": {Degree.NA.value: 1.0},
    "polarity": {Polarity.POS.value: 1.0},
    "type": {EventType.NA.value: 1.0},
}


@dataclass(frozen=True)
class LexEntry:
    word: str
    pos: str
    attributes: dict[str, dict[str, float]] = field(default_factory=dict)


@dataclass
class GeneratorSpec:
    seed: int
    documents: dict[str, int]
    events: list[LexEntry]
    templates: list[str]
    sentences_per_document: tuple[int, int] = (14, 18)
    oov_rate: float = 0.0
    oov_events: list[LexEntry] = field(default_factory=list)
    distractors: list[LexEntry] = field(default_factory=list)
    attributes: dict[str, dict[str, float]] = field(default_factory=dict)
    cues: dict[str, dict[str, str]] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> GeneratorSpec:
        def entries(key: str) -> list[LexEntry]:
            return [LexEntry(e["word"], e["pos"], dict(e.get("attributes", {}))) for e in data.get(key, [])]

        low, high = data.get("sentences_per_document", (14, 18))
        return cls(
            seed=int(data["seed"]),
            documents={split: int(data["documents"][split]) for split in SPLITS},
            events=entries("events"),
            templates=list(data["templates"]),
            sentences_per_document=(int(low), int(high)),
            oov_rate=float(data.get("oov_rate", 0.0)),
            oov_events=entries("oov_events"),
            distractors=entries("distractors"),
            attributes=dict(data.get("attributes", {})),
            cues={name: dict(values) for name, values in data.get("cues", {}).items()},
        )


def load_spec(path: str | Path) -> GeneratorSpec:
    """Read and validate a YAML generator spec."""
    return GeneratorSpec.from_mapping(SynthSpecValidator().load(Path(path)))


@dataclass
class _Item:
    word: str
    pos: str
    event: dict[str, str] | None = None


@dataclass
class SyntheticCorpus:
    splits: dict[str, list[tuple[Document, AnnotationSet]]]
    tagged: list[list[tuple[str, str]]]
    oov_words: frozenset[str] = frozenset()
    oov_count: int = 0

    def events(self, split: str) -> int:
        return sum(len(annotation_set) for _, annotation_set in self.splits[split])


def _split_tagged(item: str) -> tuple[str, str]:
    word, _, pos = item.rpartition("/")
    return word, pos


def _draw(rng: np.random.Generator, distribution: Mapping[str, float]) -> str:
    labels = list(distribution)
    weights = np.array([distribution[label] for label in labels], dtype=np.float64)
    return labels[int(rng.choice(len(labels), p=weights / weights.sum()))]


def _check(spec: GeneratorSpec) -> None:
    if not spec.templates:
        msg = "generator spec has an empty template grammar"
        raise ConfigError(msg)
    if not spec.events:
        msg = "generator spec has an empty event lexicon"
        raise ConfigError(msg)
    if any(EVENT_SLOT not in template.split(" ") for template in spec.templates):
        msg = f"every template needs an {EVENT_SLOT} slot"
        raise ConfigError(msg)
    if spec.oov_rate > 0 and not spec.oov_events:
        msg = "oov_rate > 0 needs oov_events"
        raise ConfigError(msg)
    low, high = spec.sentences_per_document
    if not 1 <= low <= high:
        msg = f"sentences_per_document must satisfy 1 <= min <= max, got {low}, {high}"
        raise ConfigError(msg)


def _sentence(spec: GeneratorSpec, rng: np.random.Generator) -> list[_Item]:
    template = spec.templates[int(rng.integers(len(spec.templates)))]
    entry = spec.events[int(rng.integers(len(spec.events)))]
    values = {}
    for name in ATTRIBUTES:
        distribution = entry.attributes.get(name) or spec.attributes.get(name) or DEFAULT_ATTRIBUTES.get(name)
        if distribution:
            values[name] = _draw(rng, distribution)

    def cues(order: tuple[str, ...]) -> list[_Item]:
        out = []
        for name in order:
            cue = spec.cues.get(name, {}).get(values.get(name, ""))
            if cue:
                out.append(_Item(*_split_tagged(cue)))
        return out

    items: list[_Item] = []
    for slot in template.split(" "):
        if slot == EVENT_SLOT:
            items.extend(cues(LEFT_CUE_ORDER))
            items.append(_Item(entry.word, entry.pos, values))
            items.extend(cues(RIGHT_CUE_ORDER))
        elif slot == DISTRACTOR_SLOT:
            if spec.distractors:
                distractor = spec.distractors[int(rng.integers(len(spec.distractors)))]
                items.append(_Item(distractor.word, distractor.pos))
        else:
            items.append(_Item(*_split_tagged(slot)))
    return items


def _render(doc_id: str, sentences: list[list[_Item]]) -> tuple[Document, AnnotationSet]:
    parts: list[str] = []
    length = 0
    events = []
    words = []
    for s, sentence in enumerate(sentences):
        if s:
            parts.append("\n")
            length += 1
        for i, item in enumerate(sentence):
            if i and item.word not in NO_SPACE_BEFORE:
                parts.append(" ")
                length += 1
            begin = length
            parts.append(item.word)
            length += len(item.word)
            words.append(item.word)
            if item.event is not None:
                events.append(
                    EventAnnotation(
                        begin=begin,
                        end=length,
                        modality=Modality(item.event.get("modality", Modality.ACTUAL)),
                        degree=Degree(item.event.get("degree", Degree.NA)),
                        polarity=Polarity(item.event.get("polarity", Polarity.POS)),
                        event_type=EventType(item.event.get("type", EventType.NA)),
                        doctimerel=item.event.get("doctimerel"),
                    )
                )
    text = "".join(parts) + "\n"
    if tokenize(text).surfaces != words:
        msg = f"{doc_id}: template words do not survive tokenization; use single-token words"
        raise ConfigError(msg)
    return Document(id=doc_id, text=text), AnnotationSet.of(doc_id, events)


def generate(spec: GeneratorSpec) -> SyntheticCorpus:
    """Build the train/dev/test corpus; a pure function of ``spec``."""
    _check(spec)
    rng = np.random.default_rng(spec.seed)
    low, high = spec.sentences_per_document
    drafts: dict[str, list[tuple[str, list[list[_Item]]]]] = {}
    for split in SPLITS:
        drafts[split] = []
        for d in range(spec.documents[split]):
            count = int(rng.integers(low, high + 1))
            drafts[split].append((f"{split}_{d:03d}", [_sentence(spec, rng) for _ in range(count)]))

    test_events = [item for _, doc in drafts["test"] for sentence in doc for item in sentence if item.event is not None]
    # rounding first keeps floor(0.29 * 100) at 29
    oov_count = math.floor(round(spec.oov_rate * len(test_events), 9))
    oov_words = set()
    if oov_count:
        for index in sorted(rng.choice(len(test_events), size=oov_count, replace=False)):
            entry = spec.oov_events[int(rng.integers(len(spec.oov_events)))]
            test_events[index].word, test_events[index].pos = entry.word, entry.pos
            oov_words.add(entry.word)

    splits = {split: [_render(doc_id, sentences) for doc_id, sentences in drafts[split]] for split in SPLITS}
    tagged = [[(item.word, item.pos) for item in sentence] for _, doc in drafts["train"] for sentence in doc]
    corpus = SyntheticCorpus(splits=splits, tagged=tagged, oov_words=frozenset(oov_words), oov_count=oov_count)
    logger.info(
        "generated %s events (%d test events use unseen words)",
        "/".join(str(corpus.events(split)) for split in SPLITS),
        oov_count,
    )
    return corpus


def write_corpus(corpus: SyntheticCorpus, out_dir: str | Path) -> Path:
    """Write ``{split}/text``, ``{split}/ann`` and ``train/tagged.txt`` under ``out_dir``."""
    out_dir = Path(out_dir)
    for split, pairs in corpus.splits.items():
        text_dir = out_dir / split / "text"
        text_dir.mkdir(parents=True, exist_ok=True)
        for document, _ in pairs:
            (text_dir / f"{document.id}.txt").write_bytes(document.text.encode("utf-8"))
        write_corpus_annotations(out_dir / split / "ann", pairs)
    tagged = "".join(format_tagged_sentence(sentence) + "\n" for sentence in corpus.tagged)
    (out_dir / "train" / "tagged.txt").write_bytes(tagged.encode("utf-8"))
    return out_dir
