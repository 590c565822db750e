"""Span identification, BIO decoding and attribute classification."""

from __future__ import annotations

import logging
from collections.abc import Collection, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

from clinevent.corpus import (
    BEGIN,
    BIO_LABELS,
    DOCTIMEREL_VALUES,
    INSIDE,
    OUTSIDE,
    AnnotationSet,
    Degree,
    Document,
    EventAnnotation,
    EventType,
    Modality,
    Polarity,
    align_to_tokens,
    event_anchors,
    token_range,
)
from clinevent.errors import CorpusError, PipelineError
from clinevent.features import VocabularySet, WindowInstance, encode_sequence, iter_windows, window_from_encoded
from clinevent.network import ModelBundle, load_model
from clinevent.textproc import TaggerModel, TokenSequence, tag, tokenize
from clinevent.training import predict_indices

logger = logging.getLogger(__name__)

MODEL_SUFFIX = ".clnx"


class Task(StrEnum):
    SPAN = "span"
    MODALITY = "modality"
    DEGREE = "degree"
    POLARITY = "polarity"
    TYPE = "type"
    DOCTIMEREL = "doctimerel"


ATTRIBUTE_TASKS = (Task.MODALITY, Task.DEGREE, Task.POLARITY, Task.TYPE)

# task -> EventAnnotation field
TASK_FIELDS = {
    Task.MODALITY: "modality",
    Task.DEGREE: "degree",
    Task.POLARITY: "polarity",
    Task.TYPE: "event_type",
    Task.DOCTIMEREL: "doctimerel",
}

_ENUMS = {Task.MODALITY: Modality, Task.DEGREE: Degree, Task.POLARITY: Polarity, Task.TYPE: EventType}


@dataclass(frozen=True)
class LabelScheme:
    """Ordered class labels of one task; the order is stored with the model."""

    task: Task
    classes: tuple[str, ...]

    def index(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            msg = f"{label!r} is not a {self.task} label ({', '.join(self.classes)})"
            raise CorpusError(msg) from None

    def __contains__(self, label: str) -> bool:
        return label in self.classes


def label_scheme(task: Task | str, doctimerel_values: Sequence[str] = DOCTIMEREL_VALUES) -> LabelScheme:
    """Class labels of a task in their stored order."""
    task = Task(task)
    if task is Task.SPAN:
        return LabelScheme(task, BIO_LABELS)
    if task is Task.DOCTIMEREL:
        return LabelScheme(task, tuple(doctimerel_values))
    return LabelScheme(task, tuple(member.value for member in _ENUMS[task]))


def prepare_tokens(document: Document, tagger: TaggerModel) -> TokenSequence:
    """Tokenize, shape and POS-tag a whole document."""
    return tag(tagger, tokenize(document.text, document.id))


def build_instances(
    task: Task | str,
    corpus: Iterable[tuple[Document, AnnotationSet]],
    vocabularies: VocabularySet,
    tagger: TaggerModel | None,
    window: int,
    anchor: str = "first",
    token_sequences: Mapping[str, TokenSequence] | None = None,
    doctimerel_values: Sequence[str] = DOCTIMEREL_VALUES,
) -> list[WindowInstance]:
    """Labeled windows: one per token for SPAN, one per gold event otherwise.

    DOCTIMEREL instances are built only for events that carry a value.
    """
    task = Task(task)
    scheme = label_scheme(task, doctimerel_values)
    instances: list[WindowInstance] = []
    unaligned = 0
    for document, annotation_set in corpus:
        if token_sequences is not None:
            tokens = token_sequences[document.id]
        elif tagger is not None:
            tokens = prepare_tokens(document, tagger)
        else:
            msg = "build_instances needs a tagger or pre-tagged token sequences"
            raise PipelineError(msg)
        encoded = encode_sequence(tokens, vocabularies)
        if task is Task.SPAN:
            labels = align_to_tokens(annotation_set, tokens)
            windows = iter_windows(encoded, window)
            instances.extend(w.with_label(scheme.index(label)) for w, label in zip(windows, labels, strict=True))
            continue
        for event, center in event_anchors(annotation_set, tokens, anchor):
            if center is None:
                unaligned += 1
                continue
            value = event.value(TASK_FIELDS[task])
            if value is None:
                continue
            instances.append(window_from_encoded(encoded, center, window).with_label(scheme.index(value)))
    if unaligned:
        logger.warning("%s: %d events overlap no token and were skipped", task, unaligned)
    return instances


def bio_decode(tags: Sequence[str], offsets: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Character spans of B/I runs; an I that follows O starts a new span."""
    if len(tags) != len(offsets):
        msg = f"{len(tags)} tags for {len(offsets)} tokens"
        raise ValueError(msg)
    spans = []
    current: list[int] | None = None
    for label, (begin, end) in zip(tags, offsets, strict=True):
        if label == BEGIN or (label == INSIDE and current is None):
            if current is not None:
                spans.append((current[0], current[1]))
            current = [begin, end]
        elif label == INSIDE:
            current[1] = end
        elif label == OUTSIDE:
            if current is not None:
                spans.append((current[0], current[1]))
            current = None
        else:
            msg = f"unknown BIO tag {label!r}"
            raise ValueError(msg)
    if current is not None:
        spans.append((current[0], current[1]))
    return spans


def _require_tagger(model: ModelBundle) -> TaggerModel:
    if model.tagger is None:
        msg = f"{model.hyper.task} model has no POS tagger"
        raise PipelineError(msg)
    return model.tagger


def identify_spans(
    span_model: ModelBundle, document: Document, tokens: TokenSequence | None = None
) -> list[tuple[int, int]]:
    """Predict a BIO label for every token and decode character spans."""
    if tokens is None:
        tokens = prepare_tokens(document, _require_tagger(span_model))
    if not len(tokens):
        return []
    windows = iter_windows(encode_sequence(tokens, span_model.vocabularies), span_model.hyper.window)
    tags = [span_model.labels[i] for i in predict_indices(span_model, windows)]
    return bio_decode(tags, tokens.offsets)


def classify_attributes(
    attribute_models: Mapping[Task, ModelBundle],
    document: Document,
    spans: Sequence[tuple[int, int]],
    tokens: TokenSequence | None = None,
) -> list[EventAnnotation]:
    """Run every attribute model on the window anchored at each span.

    Attributes without a model keep their default value. Spans that overlap
    no token are skipped and counted in a warning.
    """
    if not spans:
        return []
    if tokens is None:
        taggers = [model.tagger for model in attribute_models.values() if model.tagger is not None]
        if not taggers:
            msg = "no attribute model carries a POS tagger"
            raise PipelineError(msg)
        tokens = prepare_tokens(document, taggers[0])

    aligned = [span for span in spans if token_range(tokens, *span)]
    if len(aligned) < len(spans):
        logger.warning("%s: %d spans overlap no token and were skipped", document.id, len(spans) - len(aligned))
    values: list[dict[str, str]] = [{} for _ in aligned]
    for task, model in attribute_models.items():
        encoded = encode_sequence(tokens, model.vocabularies)
        windows = []
        for begin, end in aligned:
            indices = token_range(tokens, begin, end)
            center = indices[0] if model.hyper.anchor == "first" else indices[-1]
            windows.append(window_from_encoded(encoded, center, model.hyper.window))
        for slot, index in zip(values, predict_indices(model, windows), strict=True):
            slot[TASK_FIELDS[Task(task)]] = model.labels[int(index)]

    doctimerel_model = attribute_models.get(Task.DOCTIMEREL)
    doctimerel_values = doctimerel_model.labels if doctimerel_model is not None else DOCTIMEREL_VALUES
    events = []
    for (begin, end), predicted in zip(aligned, values, strict=True):
        event = EventAnnotation(
            begin=begin,
            end=end,
            modality=Modality(predicted.get("modality", Modality.ACTUAL)),
            degree=Degree(predicted.get("degree", Degree.NA)),
            polarity=Polarity(predicted.get("polarity", Polarity.POS)),
            event_type=EventType(predicted.get("event_type", EventType.NA)),
            doctimerel=predicted.get("doctimerel"),
        )
        event.validate(len(document.text), doctimerel_values)
        events.append(event)
    return events


@dataclass
class ModelSet:
    """One trained model per task, keyed by task."""

    models: dict[Task, ModelBundle] = field(default_factory=dict)

    @classmethod
    def load_dir(cls, directory: str | Path) -> ModelSet:
        """Load every ``<task>.clnx`` present in a directory."""
        directory = Path(directory)
        if not directory.is_dir():
            msg = f"model directory not found: {directory}"
            raise FileNotFoundError(msg)
        models = {}
        for task in Task:
            path = directory / f"{task.value}{MODEL_SUFFIX}"
            if path.exists():
                models[task] = load_model(path)
                logger.debug("loaded %s model from %s", task, path)
        return cls(models)

    @property
    def tasks(self) -> list[Task]:
        return list(self.models)

    def get(self, task: Task | str) -> ModelBundle:
        """The model for ``task``; PipelineError when the set has none."""
        try:
            return self.models[Task(task)]
        except KeyError:
            msg = f"no model for task {task}"
            raise PipelineError(msg) from None

    @property
    def tagger(self) -> TaggerModel:
        """POS tagger of the span model, else of the first attribute model that has one."""
        for model in sorted(self.models.values(), key=lambda m: m.hyper.task != Task.SPAN):
            if model.tagger is not None:
                return model.tagger
        msg = "no model in the set carries a POS tagger"
        raise PipelineError(msg)


def extract(
    model_set: ModelSet,
    document: Document,
    gold_spans: AnnotationSet | None = None,
    tasks: Collection[Task | str] | None = None,
) -> AnnotationSet:
    """System spans then attributes, or attributes over ``gold_spans`` only.

    ``tasks`` defaults to every attribute task with a model in the set.
    """
    if tasks is None:
        tasks = [task for task in model_set.tasks if task is not Task.SPAN]
    requested = [Task(task) for task in tasks if Task(task) is not Task.SPAN]
    attribute_models = {task: model_set.get(task) for task in requested}
    tokens = prepare_tokens(document, model_set.tagger)
    if gold_spans is None:
        spans = identify_spans(model_set.get(Task.SPAN), document, tokens)
    else:
        spans = gold_spans.spans
    events = classify_attributes(attribute_models, document, spans, tokens)
    return AnnotationSet.of(document.id, events)


def extract_corpus(
    model_set: ModelSet,
    documents: Sequence[Document],
    gold: Mapping[str, AnnotationSet] | None = None,
    tasks: Collection[Task | str] | None = None,
    workers: int = 1,
) -> list[AnnotationSet]:
    """Extract every document, in input order; ``workers > 1`` uses a thread pool."""

    def run(document: Document) -> AnnotationSet:
        gold_spans = None
        if gold is not None:
            gold_spans = gold.get(document.id, AnnotationSet(doc_id=document.id))
        return extract(model_set, document, gold_spans, tasks)

    if workers <= 1:
        return [run(document) for document in documents]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, documents))
