"""Documents, standoff event annotations and their alignment to tokens."""

from __future__ import annotations

import logging
from bisect import bisect_right
from collections.abc import Collection, Iterable, Sequence
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from xml.etree import ElementTree

from clinevent.errors import CorpusError
from clinevent.renderer import get_renderer
from clinevent.textproc import TokenSequence

logger = logging.getLogger(__name__)

ANN_SUFFIX = ".ann.xml"

OUTSIDE = "O"
BEGIN = "B-EVENT"
INSIDE = "I-EVENT"
BIO_LABELS = (OUTSIDE, BEGIN, INSIDE)


class Modality(StrEnum):
    ACTUAL = "ACTUAL"
    HYPOTHETICAL = "HYPOTHETICAL"
    HEDGED = "HEDGED"
    GENERIC = "GENERIC"


class Degree(StrEnum):
    MOST = "MOST"
    LITTLE = "LITTLE"
    NA = "N/A"


class Polarity(StrEnum):
    POS = "POS"
    NEG = "NEG"


class EventType(StrEnum):
    ASPECTUAL = "ASPECTUAL"
    EVIDENTIAL = "EVIDENTIAL"
    NA = "N/A"


DOCTIMEREL_VALUES = ("BEFORE", "OVERLAP", "AFTER", "BEFORE-OVERLAP")

# property element name -> (EventAnnotation field, value enum)
PROPERTY_FIELDS = {
    "ContextualModality": ("modality", Modality),
    "Degree": ("degree", Degree),
    "Polarity": ("polarity", Polarity),
    "Type": ("event_type", EventType),
}


@dataclass(frozen=True)
class Document:
    """A raw note. ``text`` is never altered; every offset indexes into it."""

    id: str
    text: str


@dataclass(frozen=True)
class EventAnnotation:
    begin: int
    end: int
    modality: Modality = Modality.ACTUAL
    degree: Degree = Degree.NA
    polarity: Polarity = Polarity.POS
    event_type: EventType = EventType.NA
    doctimerel: str | None = None

    def __post_init__(self) -> None:
        for name, (field_name, kind) in PROPERTY_FIELDS.items():
            value = getattr(self, field_name)
            try:
                object.__setattr__(self, field_name, kind(value))
            except ValueError:
                msg = f"unrecognized {name} value {value!r}"
                raise CorpusError(msg) from None

    @property
    def span(self) -> tuple[int, int]:
        return (self.begin, self.end)

    def value(self, field_name: str) -> str | None:
        value = getattr(self, field_name)
        return None if value is None else str(value)

    def validate(self, text_length: int, doctimerel_values: Collection[str] = DOCTIMEREL_VALUES) -> None:
        """Raise CorpusError unless the span fits the text and DocTimeRel is known."""
        if not 0 <= self.begin < self.end <= text_length:
            msg = f"span {self.begin},{self.end} invalid for text of length {text_length}"
            raise CorpusError(msg)
        if self.doctimerel is not None and self.doctimerel not in doctimerel_values:
            msg = f"unrecognized DocTimeRel value {self.doctimerel!r}"
            raise CorpusError(msg)


@dataclass(frozen=True)
class AnnotationSet:
    """Events of one document, sorted by span with no duplicate spans."""

    doc_id: str
    events: tuple[EventAnnotation, ...] = ()

    def __post_init__(self) -> None:
        spans = [event.span for event in self.events]
        if spans != sorted(spans):
            msg = f"{self.doc_id}: events are not sorted by span"
            raise CorpusError(msg)
        for previous, current in zip(spans, spans[1:], strict=False):
            if previous == current:
                msg = f"{self.doc_id}: duplicate event span {current[0]},{current[1]}"
                raise CorpusError(msg)

    @classmethod
    def of(cls, doc_id: str, events: Iterable[EventAnnotation]) -> AnnotationSet:
        return cls(doc_id=doc_id, events=tuple(sorted(events, key=lambda event: event.span)))

    @property
    def spans(self) -> list[tuple[int, int]]:
        return [event.span for event in self.events]

    def __len__(self) -> int:
        return len(self.events)


def load_document(path: str | Path) -> Document:
    """Read a note byte-for-byte; invalid UTF-8 is rejected, never repaired."""
    path = Path(path)
    data = path.read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        msg = f"{path}: invalid UTF-8 at byte {e.start}"
        raise CorpusError(msg) from e
    return Document(id=path.stem, text=text)


def _child_text(element: ElementTree.Element, tag: str, entity_id: str) -> str:
    child = element.find(tag)
    if child is None or child.text is None:
        msg = f"entity {entity_id}: missing <{tag}>"
        raise CorpusError(msg)
    return child.text.strip()


def _parse_span(text: str, entity_id: str) -> tuple[int, int]:
    if ";" in text:
        msg = f"entity {entity_id}: discontinuous span {text!r} is not supported"
        raise CorpusError(msg)
    try:
        begin, end = (int(part) for part in text.split(","))
    except ValueError as e:
        msg = f"entity {entity_id}: malformed span {text!r}"
        raise CorpusError(msg) from e
    return begin, end


def parse_annotations(
    standoff_text: str,
    document: Document,
    doctimerel_values: Collection[str] = DOCTIMEREL_VALUES,
) -> AnnotationSet:
    """Parse a standoff document into the events of ``document``."""
    try:
        root = ElementTree.fromstring(standoff_text)
    except ElementTree.ParseError as e:
        msg = f"{document.id}: malformed standoff markup: {e}"
        raise CorpusError(msg) from e

    if root.tag == "data":
        container = root.find("annotations")
        if container is None:
            return AnnotationSet(doc_id=document.id)
    elif root.tag == "annotations":
        container = root
    else:
        msg = f"{document.id}: unexpected root element <{root.tag}>"
        raise CorpusError(msg)

    events = []
    for entity in container.findall("entity"):
        entity_id = (entity.findtext("id") or "?").strip()
        kind = _child_text(entity, "type", entity_id)
        if kind != "EVENT":
            logger.debug("%s: skipping %s entity %s", document.id, kind, entity_id)
            continue
        begin, end = _parse_span(_child_text(entity, "span", entity_id), entity_id)

        properties = entity.find("properties")
        if properties is None:
            msg = f"entity {entity_id}: missing <properties>"
            raise CorpusError(msg)
        values = {}
        for tag, (field_name, enum) in PROPERTY_FIELDS.items():
            raw = _child_text(properties, tag, entity_id)
            try:
                values[field_name] = enum(raw)
            except ValueError as e:
                msg = f"entity {entity_id}: unrecognized {tag} value {raw!r}"
                raise CorpusError(msg) from e
        doctimerel = properties.findtext("DocTimeRel")
        if doctimerel is not None:
            doctimerel = doctimerel.strip()

        event = EventAnnotation(begin=begin, end=end, doctimerel=doctimerel, **values)
        try:
            event.validate(len(document.text), doctimerel_values)
        except CorpusError as e:
            msg = f"{document.id}: entity {entity_id}: {e}"
            raise CorpusError(msg) from e
        events.append(event)

    return AnnotationSet.of(document.id, events)


def write_annotations(
    annotation_set: AnnotationSet,
    document: Document,
    doctimerel_values: Collection[str] = DOCTIMEREL_VALUES,
) -> str:
    """Render events as a standoff document that parses back to the same set."""
    for event in annotation_set.events:
        event.validate(len(document.text), doctimerel_values)
    return get_renderer().render_annotations(annotation_set)


def token_range(tokens: TokenSequence, begin: int, end: int) -> range:
    """Indices of the tokens that overlap the character span [begin, end)."""
    ends = [token.end for token in tokens]
    first = bisect_right(ends, begin)
    last = first
    while last < len(tokens) and tokens[last].begin < end:
        last += 1
    return range(first, last)


def align_to_tokens(annotation_set: AnnotationSet, tokens: TokenSequence) -> list[str]:
    """Per-token BIO labels; a token partially inside an event counts as inside."""
    for token in tokens:
        if token.end > tokens.text_length:
            msg = f"token {token.surface!r} ends at {token.end}, past the text end {tokens.text_length}"
            raise CorpusError(msg)
    labels = [OUTSIDE] * len(tokens)
    for event in annotation_set.events:
        for position, index in enumerate(token_range(tokens, event.begin, event.end)):
            if position == 0 and labels[index] == OUTSIDE:
                labels[index] = BEGIN
            elif labels[index] == OUTSIDE:
                labels[index] = INSIDE
    return labels


def anchor_index(tokens: TokenSequence, begin: int, end: int, anchor: str = "first") -> int | None:
    """Token index a span's attribute window is centred on, or None if no token overlaps."""
    indices = token_range(tokens, begin, end)
    if not indices:
        return None
    return indices[0] if anchor == "first" else indices[-1]


def event_anchors(
    annotation_set: AnnotationSet, tokens: TokenSequence, anchor: str = "first"
) -> list[tuple[EventAnnotation, int | None]]:
    """Pair every event with its anchor token index, or None when no token overlaps it."""
    return [(event, anchor_index(tokens, event.begin, event.end, anchor)) for event in annotation_set.events]


@dataclass(frozen=True)
class CorpusCounts:
    documents: int
    events: int


def corpus_counts(annotation_sets: Iterable[AnnotationSet]) -> CorpusCounts:
    """Document and event totals of a corpus."""
    documents = events = 0
    for annotation_set in annotation_sets:
        documents += 1
        events += len(annotation_set)
    return CorpusCounts(documents=documents, events=events)


def read_annotation_dir(ann_dir: Path, documents: Sequence[Document]) -> dict[str, AnnotationSet]:
    """Parse ``<doc_id>.ann.xml`` for each document; a missing file means no events."""
    sets = {}
    for document in documents:
        path = ann_dir / f"{document.id}{ANN_SUFFIX}"
        if path.exists():
            sets[document.id] = parse_annotations(path.read_text(encoding="utf-8"), document)
        else:
            sets[document.id] = AnnotationSet(doc_id=document.id)
    return sets


def load_documents(text_dir: Path) -> list[Document]:
    """Every non-hidden file of a directory as a document, sorted by name."""
    paths = sorted(p for p in Path(text_dir).iterdir() if p.is_file() and not p.name.startswith("."))
    return [load_document(path) for path in paths]


def load_corpus(split_dir: str | Path) -> list[tuple[Document, AnnotationSet]]:
    """Read a ``text/`` + ``ann/`` corpus directory into (document, events) pairs."""
    split_dir = Path(split_dir)
    documents = load_documents(split_dir / "text")
    ann_dir = split_dir / "ann"
    if ann_dir.is_dir():
        known = {document.id for document in documents}
        orphans = sorted(
            p.name for p in ann_dir.glob(f"*{ANN_SUFFIX}") if p.name.removesuffix(ANN_SUFFIX) not in known
        )
        if orphans:
            msg = f"{split_dir}: annotation files without text: {', '.join(orphans)}"
            raise CorpusError(msg)
        sets = read_annotation_dir(ann_dir, documents)
    else:
        sets = {document.id: AnnotationSet(doc_id=document.id) for document in documents}
    return [(document, sets[document.id]) for document in documents]


def write_corpus_annotations(out_dir: str | Path, pairs: Iterable[tuple[Document, AnnotationSet]]) -> list[Path]:
    """Write one ``<doc_id>.ann.xml`` per document and return the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for document, annotation_set in pairs:
        path = out_dir / f"{document.id}{ANN_SUFFIX}"
        path.write_text(write_annotations(annotation_set, document), encoding="utf-8")
        written.append(path)
    return written
