"""Tuple-set precision/recall/F1 and the memorization baseline."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace

from clinevent.corpus import (
    OUTSIDE,
    AnnotationSet,
    Degree,
    Document,
    EventAnnotation,
    EventType,
    Modality,
    Polarity,
    align_to_tokens,
    token_range,
)
from clinevent.errors import EvaluationError
from clinevent.network import ModelBundle
from clinevent.pipeline import TASK_FIELDS, Task, bio_decode, classify_attributes, identify_spans, prepare_tokens
from clinevent.renderer import get_renderer
from clinevent.textproc import TaggerModel, tokenize

logger = logging.getLogger(__name__)

ALL_TASKS = tuple(Task)

_DEFAULTS = {
    Task.MODALITY: Modality.ACTUAL.value,
    Task.DEGREE: Degree.NA.value,
    Task.POLARITY: Polarity.POS.value,
    Task.TYPE: EventType.NA.value,
}


@dataclass(frozen=True)
class MetricReport:
    task: str
    precision: float
    recall: float
    f1: float
    system: int
    human: int
    overlap: int

    def line(self) -> str:
        """``task<TAB>P<TAB>R<TAB>F1<TAB>|S|<TAB>|H|<TAB>|S∩H|``."""
        return "\t".join(
            [
                self.task,
                f"{self.precision:.6f}",
                f"{self.recall:.6f}",
                f"{self.f1:.6f}",
                str(self.system),
                str(self.human),
                str(self.overlap),
            ]
        )

    def as_dict(self) -> dict[str, float | int]:
        """Metric fields keyed by name."""
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "system": self.system,
            "human": self.human,
            "overlap": self.overlap,
        }


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    total = precision + recall
    return 2 * precision * recall / total if total > 0 else 0.0


def prf(system_items: Iterable[tuple], human_items: Iterable[tuple], task: str = "span") -> MetricReport:
    """Exact-match P, R and F1 of two item sets; an empty side scores 0."""
    system = set(system_items)
    human = set(human_items)
    overlap = len(system & human)
    precision = overlap / len(system) if system else 0.0
    recall = overlap / len(human) if human else 0.0
    return MetricReport(
        task=str(task),
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        system=len(system),
        human=len(human),
        overlap=overlap,
    )


def _by_doc(annotation_sets: Mapping[str, AnnotationSet] | Iterable[AnnotationSet]) -> dict[str, AnnotationSet]:
    if isinstance(annotation_sets, Mapping):
        return dict(annotation_sets)
    return {annotation_set.doc_id: annotation_set for annotation_set in annotation_sets}


def task_items(annotation_sets: Mapping[str, AnnotationSet] | Iterable[AnnotationSet], task: Task | str) -> set[tuple]:
    """(doc, begin, end) items for SPAN, (doc, begin, end, value) otherwise."""
    task = Task(task)
    items: set[tuple] = set()
    for doc_id, annotation_set in _by_doc(annotation_sets).items():
        for event in annotation_set.events:
            if task is Task.SPAN:
                items.add((doc_id, event.begin, event.end))
                continue
            value = event.value(TASK_FIELDS[task])
            if value is not None:
                items.add((doc_id, event.begin, event.end, value))
    return items


def evaluate(
    system: Mapping[str, AnnotationSet] | Iterable[AnnotationSet],
    gold: Mapping[str, AnnotationSet] | Iterable[AnnotationSet],
    task: Task | str,
) -> MetricReport:
    """Corpus-level (micro) scores of one task."""
    system, gold = _by_doc(system), _by_doc(gold)
    if set(system) != set(gold):
        missing = sorted(set(gold) - set(system))
        extra = sorted(set(system) - set(gold))
        msg = f"document sets differ (missing from system: {missing or '-'}; not in gold: {extra or '-'})"
        raise EvaluationError(msg)
    return prf(task_items(system, task), task_items(gold, task), Task(task).value)


def evaluate_all(
    system: Mapping[str, AnnotationSet] | Iterable[AnnotationSet],
    gold: Mapping[str, AnnotationSet] | Iterable[AnnotationSet],
    tasks: Sequence[Task | str] = ALL_TASKS,
) -> list[MetricReport]:
    """One report per task, in the order given."""
    system, gold = _by_doc(system), _by_doc(gold)
    return [evaluate(system, gold, task) for task in tasks]


def report_lines(reports: Iterable[MetricReport]) -> list[str]:
    """Tab-separated report rows."""
    return [report.line() for report in reports]


def render_report(reports: Iterable[MetricReport]) -> str:
    """Aligned plain-text table, three decimals."""
    return get_renderer().render_report(reports)


def _most_frequent(counts: Counter, prior: Counter) -> str:
    # count, then corpus-wide frequency, then lexicographic order
    return min(counts, key=lambda label: (-counts[label], -prior[label], label))


@dataclass
class MemorizeModel:
    """Most-frequent-label lookup per lowercased token."""

    span_lexicon: dict[str, str] = field(default_factory=dict)
    attribute_lexicons: dict[str, dict[str, str]] = field(default_factory=dict)
    majority: dict[str, str | None] = field(default_factory=dict)

    def majority_only(self) -> MemorizeModel:
        """The same model with per-token attribute lexicons dropped."""
        return replace(self, attribute_lexicons={})

    def attribute(self, task: Task, surfaces: Sequence[str]) -> str | None:
        """Memorized value of the first known surface, else the training majority."""
        lexicon = self.attribute_lexicons.get(task.value, {})
        for surface in surfaces:
            if surface in lexicon:
                return lexicon[surface]
        return self.majority.get(task.value, _DEFAULTS.get(task))


def train_memorize(corpus: Iterable[tuple[Document, AnnotationSet]]) -> MemorizeModel:
    """Count labels per lowercased token over a training corpus."""
    span_counts: dict[str, Counter] = defaultdict(Counter)
    span_prior: Counter = Counter()
    value_counts: dict[Task, dict[str, Counter]] = {task: defaultdict(Counter) for task in TASK_FIELDS}
    value_prior: dict[Task, Counter] = {task: Counter() for task in TASK_FIELDS}

    for document, annotation_set in corpus:
        tokens = tokenize(document.text, document.id)
        for token, label in zip(tokens, align_to_tokens(annotation_set, tokens), strict=True):
            span_counts[token.surface.lower()][label] += 1
            span_prior[label] += 1
        for event in annotation_set.events:
            surfaces = [tokens[i].surface.lower() for i in token_range(tokens, event.begin, event.end)]
            for task, field_name in TASK_FIELDS.items():
                value = event.value(field_name)
                if value is None:
                    continue
                value_prior[task][value] += 1
                for surface in surfaces:
                    value_counts[task][surface][value] += 1

    model = MemorizeModel(
        span_lexicon={surface: _most_frequent(counts, span_prior) for surface, counts in span_counts.items()},
        attribute_lexicons={
            task.value: {surface: _most_frequent(counts, value_prior[task]) for surface, counts in lexicon.items()}
            for task, lexicon in value_counts.items()
        },
        majority={
            task.value: _most_frequent(prior, prior) if prior else _DEFAULTS.get(task)
            for task, prior in value_prior.items()
        },
    )
    logger.info("memorize lexicon: %d token types", len(model.span_lexicon))
    return model


def run_memorize(
    model: MemorizeModel,
    documents: Sequence[Document],
    gold_spans: Mapping[str, AnnotationSet] | None = None,
) -> list[AnnotationSet]:
    """Lexicon lookup per token, BIO decode, then attribute lookup per span token."""
    results = []
    for document in documents:
        tokens = tokenize(document.text, document.id)
        if gold_spans is None:
            tags = [model.span_lexicon.get(token.surface.lower(), OUTSIDE) for token in tokens]
            spans = bio_decode(tags, tokens.offsets)
        else:
            spans = gold_spans.get(document.id, AnnotationSet(doc_id=document.id)).spans
        events = []
        for begin, end in spans:
            surfaces = [tokens[i].surface.lower() for i in token_range(tokens, begin, end)]
            events.append(
                EventAnnotation(
                    begin=begin,
                    end=end,
                    modality=Modality(model.attribute(Task.MODALITY, surfaces)),
                    degree=Degree(model.attribute(Task.DEGREE, surfaces)),
                    polarity=Polarity(model.attribute(Task.POLARITY, surfaces)),
                    event_type=EventType(model.attribute(Task.TYPE, surfaces)),
                    doctimerel=model.attribute(Task.DOCTIMEREL, surfaces),
                )
            )
        results.append(AnnotationSet.of(document.id, events))
    return results


def majority_baseline(
    model: MemorizeModel,
    documents: Sequence[Document],
    gold_spans: Mapping[str, AnnotationSet],
) -> list[AnnotationSet]:
    """Every gold span gets the training majority value of each attribute."""
    return run_memorize(model.majority_only(), documents, gold_spans)


def dev_scorer(
    task: Task | str,
    corpus: Sequence[tuple[Document, AnnotationSet]],
    tagger: TaggerModel,
) -> Callable[[ModelBundle], float]:
    """F1 of a model on a dev corpus: system spans for SPAN, gold spans otherwise."""
    task = Task(task)
    gold = {document.id: annotation_set for document, annotation_set in corpus}
    tokens = {document.id: prepare_tokens(document, tagger) for document, _ in corpus}

    def score(model: ModelBundle) -> float:
        system = []
        for document, annotation_set in corpus:
            if task is Task.SPAN:
                spans = identify_spans(model, document, tokens[document.id])
                events = [EventAnnotation(begin, end) for begin, end in spans]
            else:
                events = classify_attributes({task: model}, document, annotation_set.spans, tokens[document.id])
            system.append(AnnotationSet.of(document.id, events))
        return evaluate(system, gold, task).f1

    return score
