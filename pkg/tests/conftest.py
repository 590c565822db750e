"""Shared fixtures: a clinical note, tagged tokens and small model factories."""

import pytest

from clinevent.corpus import AnnotationSet, Document, EventAnnotation, EventType, Modality, Polarity
from clinevent.features import build_vocabularies
from clinevent.network import init_model
from clinevent.textproc import tokenize, train_tagger

NOTE = (
    "April 23, 2014: The patient did not have any postoperative bleeding so we will "
    "resume chemotherapy with a larger bolus on Friday even if there is slight nausea."
)


def _span(word: str) -> tuple[int, int]:
    begin = NOTE.index(word)
    return begin, begin + len(word)


@pytest.fixture(scope="session")
def note():
    """The example note as a document."""
    return Document(id="note", text=NOTE)


@pytest.fixture(scope="session")
def note_events():
    """The five events of the example note with their attributes."""
    return AnnotationSet.of(
        "note",
        [
            EventAnnotation(*_span("bleeding"), polarity=Polarity.NEG),
            EventAnnotation(*_span("resume"), event_type=EventType.ASPECTUAL),
            EventAnnotation(*_span("chemotherapy"), event_type=EventType.ASPECTUAL),
            EventAnnotation(*_span("bolus"), event_type=EventType.ASPECTUAL),
            EventAnnotation(*_span("nausea"), modality=Modality.HYPOTHETICAL, event_type=EventType.ASPECTUAL),
        ],
    )


def simple_tags(words):
    """Coarse tags good enough to train a tagger on any sentence."""
    return ["CD" if word.isdigit() else "NN" if word[:1].isalpha() else "PUNCT" for word in words]


@pytest.fixture(scope="session")
def note_tagger():
    """Tagger trained on the note's own tokens."""
    words = tokenize(NOTE).surfaces
    return train_tagger([list(zip(words, simple_tags(words), strict=True))], epochs=3)


@pytest.fixture
def tagged_tokens():
    """A short tagged token sequence."""
    tokens = tokenize("Patient reports severe pain , no fever since 2014 .", "short")
    return tokens.with_tags(["NN", "VBZ", "JJ", "NN", ",", "DT", "NN", "IN", "CD", "."])


@pytest.fixture
def vocabularies(tagged_tokens):
    """Vocabularies built from the short sequence."""
    return build_vocabularies([tagged_tokens])


@pytest.fixture
def model_factory(vocabularies):
    """Build small seeded models for gradient and forward-pass checks."""

    def make(
        seed=0,
        *,
        dims=(4, 2, 2),
        filters=3,
        hidden=4,
        window=2,
        kernel_width=2,
        labels=("A", "B", "C"),
        keep_prob=0.5,
        init_scale=0.5,
        max_norm=3.0,
        norm_targets=("mlp", "softmax"),
    ):
        return init_model(
            vocabularies,
            labels,
            "modality",
            window=window,
            kernel_width=kernel_width,
            filters=filters,
            hidden=hidden,
            dims=dims,
            keep_prob=keep_prob,
            max_norm=max_norm,
            norm_targets=norm_targets,
            init_scale=init_scale,
            seed=seed,
        )

    return make
