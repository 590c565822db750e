"""Tests for tuple-set scoring and the memorization baseline."""

import numpy as np
import pytest

from clinevent.corpus import AnnotationSet, Document, EventAnnotation, Modality, Polarity
from clinevent.errors import EvaluationError
from clinevent.evaluation import (
    ALL_TASKS,
    evaluate,
    evaluate_all,
    f1_score,
    majority_baseline,
    prf,
    render_report,
    report_lines,
    run_memorize,
    task_items,
    train_memorize,
)
from clinevent.pipeline import Task

# Reported (P, R, F1) triples: span, modality, degree, polarity, type.
REPORTED_ROWS = {
    "memorize": [(0.878, 0.834, 0.855), (0.810, 0.770, 0.789), (0.874, 0.831, 0.852), (0.812, 0.772, 0.792), (0.855, 0.813, 0.833)],
    "run4": [(0.908, 0.842, 0.874), (0.842, 0.780, 0.810), (0.904, 0.838, 0.869), (0.876, 0.812, 0.842), (0.877, 0.813, 0.844)],
    "run5": [(0.900, 0.850, 0.874), (0.837, 0.790, 0.813), (0.896, 0.845, 0.870), (0.861, 0.813, 0.836), (0.869, 0.820, 0.844)],
    "max": [(0.915, 0.891, 0.903), (0.866, 0.843, 0.855), (0.911, 0.887, 0.899), (0.900, 0.875, 0.887), (0.894, 0.870, 0.882)],
    "doctimerel": [(0.788, 0.788, 0.788), (0.786, 0.786, 0.786)],
}


def brute_force(system, human):
    """P, R and F1 by explicit counting over lists."""
    system, human = list(dict.fromkeys(system)), list(dict.fromkeys(human))
    overlap = 0
    for item in system:
        for other in human:
            if item == other:
                overlap += 1
    precision = overlap / len(system) if system else 0.0
    recall = overlap / len(human) if human else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1, overlap


class TestPrf:
    """Test exact-match precision, recall and F1."""

    def test_identical_sets(self):
        """Test that system == gold scores 1 everywhere."""
        items = {("d", 0, 3), ("d", 5, 9)}
        report = prf(items, items)
        assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)

    def test_disjoint_and_empty(self):
        """Test zero scores for disjoint and empty sides."""
        assert prf({("d", 0, 3)}, {("d", 0, 4)}).f1 == 0.0
        empty = prf(set(), set())
        assert (empty.precision, empty.recall, empty.f1) == (0.0, 0.0, 0.0)

    def test_ten_event_fixture(self):
        """Test a hand-built fixture with known overlaps."""
        human = {("d", i, i + 2) for i in range(0, 40, 4)}
        system = {("d", i, i + 2) for i in range(0, 24, 4)} | {("d", 1, 2), ("d", 50, 51)}
        report = prf(system, human)
        assert (report.system, report.human, report.overlap) == (8, 10, 6)
        assert report.precision == 0.75
        assert report.recall == 0.6
        assert report.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35)

    def test_random_pairs_match_brute_force(self):
        """Test prf against explicit counting on 1000 random pairs."""
        rng = np.random.default_rng(17)
        for _ in range(1000):
            universe = [("d", int(b), int(b) + 1, str(v)) for b, v in rng.integers(0, 6, size=(12, 2))]
            system = [universe[i] for i in rng.integers(0, 12, size=int(rng.integers(0, 10)))]
            human = [universe[i] for i in rng.integers(0, 12, size=int(rng.integers(0, 10)))]
            report = prf(system, human)
            precision, recall, f1, overlap = brute_force(system, human)
            assert report.overlap == overlap
            assert report.precision == pytest.approx(precision)
            assert report.recall == pytest.approx(recall)
            assert report.f1 == pytest.approx(f1)

    @pytest.mark.parametrize(
        ("precision", "recall", "f1"),
        [triple for rows in REPORTED_ROWS.values() for triple in rows],
    )
    def test_reported_f1_arithmetic(self, precision, recall, f1):
        """Test that F1 recomputed from reported P and R matches within 0.001."""
        assert abs(f1_score(precision, recall) - f1) <= 0.001

    def test_report_line(self):
        """Test the tab-separated machine-readable line."""
        report = prf({("d", i) for i in range(217)}, {("d", i) for i in range(20, 254)})
        assert report.line() == "span\t0.907834\t0.841880\t0.873614\t217\t234\t197"


class TestEvaluate:
    """Test corpus-level scoring of annotation sets."""

    @pytest.fixture
    def gold(self):
        """Two documents of gold events."""
        return [
            AnnotationSet.of("a", [EventAnnotation(0, 4, polarity=Polarity.NEG), EventAnnotation(10, 14)]),
            AnnotationSet.of("b", [EventAnnotation(3, 8, modality=Modality.HEDGED, doctimerel="AFTER")]),
        ]

    def test_span_and_attributes(self, gold):
        """Test that attribute items need the span and the value to match."""
        system = [
            AnnotationSet.of("a", [EventAnnotation(0, 4), EventAnnotation(10, 14)]),
            AnnotationSet.of("b", [EventAnnotation(3, 8, modality=Modality.HEDGED, doctimerel="AFTER")]),
        ]
        reports = {report.task: report for report in evaluate_all(system, gold)}
        assert reports["span"].f1 == 1.0
        assert reports["polarity"].overlap == 2
        assert reports["polarity"].f1 == pytest.approx(2 / 3)
        assert reports["modality"].f1 == 1.0
        assert reports["doctimerel"].f1 == 1.0
        assert [report.task for report in evaluate_all(system, gold)] == [task.value for task in ALL_TASKS]

    def test_type_items_use_values(self, gold):
        """Test the value strings inside TYPE items."""
        assert ("a", 0, 4, "N/A") in task_items(gold, Task.TYPE)
        assert ("b", 3, 8) in task_items(gold, "span")

    def test_doctimerel_items_skip_missing_values(self, gold):
        """Test that events without DocTimeRel contribute no items."""
        assert task_items(gold, Task.DOCTIMEREL) == {("b", 3, 8, "AFTER")}

    def test_document_sets_must_match(self, gold):
        """Test that missing system documents are an evaluation error."""
        with pytest.raises(EvaluationError, match="missing from system"):
            evaluate(gold[:1], gold, Task.SPAN)

    def test_rendered_report(self, gold):
        """Test the aligned three-decimal table."""
        text = render_report(evaluate_all(gold, gold, [Task.SPAN, Task.POLARITY]))
        lines = text.splitlines()
        assert lines[0].split() == ["task", "P", "R", "F1", "|S|", "|H|", "|S∩H|"]
        assert lines[1].split() == ["span", "1.000", "1.000", "1.000", "3", "3", "3"]
        assert len(lines) == 3

    def test_report_lines(self, gold):
        """Test one machine-readable line per task."""
        lines = report_lines(evaluate_all(gold, gold, [Task.SPAN]))
        assert lines == ["span\t1.000000\t1.000000\t1.000000\t3\t3\t3"]


class TestMemorize:
    """Test the memorization and majority baselines."""

    def test_reproduces_training_note(self, note, note_events):
        """Test that memorize recovers its own training note."""
        model = train_memorize([(note, note_events)])
        assert run_memorize(model, [note]) == [note_events]

    def test_label_ties_use_corpus_frequency(self):
        """Test that a token seen equally often as B and O falls back to the more frequent label."""
        corpus = [
            (Document("a", "fever today"), AnnotationSet.of("a", [EventAnnotation(0, 5)])),
            (Document("b", "no fever"), AnnotationSet("b")),
        ]
        model = train_memorize(corpus)
        assert model.span_lexicon["fever"] == "O"
        assert run_memorize(model, [Document("c", "fever")]) == [AnnotationSet("c")]

    def test_value_ties_are_lexicographic(self):
        """Test that equal counts and priors pick the smallest value."""
        corpus = [
            (
                Document("a", "pain pain"),
                AnnotationSet.of("a", [EventAnnotation(0, 4), EventAnnotation(5, 9, polarity=Polarity.NEG)]),
            )
        ]
        model = train_memorize(corpus)
        assert model.attribute_lexicons["polarity"]["pain"] == "NEG"

    def test_case_insensitive_lookup(self, note, note_events):
        """Test that lexicon keys are lowercased."""
        model = train_memorize([(note, note_events)])
        result = run_memorize(model, [Document("x", "Bleeding again")])
        assert result[0].spans == [(0, 8)]
        assert result[0].events[0].polarity == "NEG"

    def test_unseen_words_get_majority(self, note, note_events):
        """Test attribute fallback for tokens missing from the lexicon."""
        model = train_memorize([(note, note_events)])
        gold = {"x": AnnotationSet.of("x", [EventAnnotation(0, 7)])}
        result = run_memorize(model, [Document("x", "syncope.")], gold)
        assert result[0].events[0].event_type == "ASPECTUAL"
        assert result[0].events[0].polarity == "POS"

    def test_majority_baseline(self, note, note_events):
        """Test that every gold span gets the training majority values."""
        model = train_memorize([(note, note_events)])
        result = majority_baseline(model, [note], {"note": note_events})
        assert result[0].spans == note_events.spans
        assert {event.event_type for event in result[0].events} == {"ASPECTUAL"}
        assert {event.polarity for event in result[0].events} == {"POS"}
        assert {event.modality for event in result[0].events} == {"ACTUAL"}
