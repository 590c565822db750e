"""Offset-preserving tokenization, word shapes and an averaged-perceptron POS tagger."""

from __future__ import annotations

import logging
import re
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from nltk.tokenize import RegexpTokenizer

from clinevent.errors import CorpusError, TrainingError

logger = logging.getLogger(__name__)

TOKEN_PATTERN = r"\w+|\$[\d\.]+|\S+"

# ASCII \w keeps spans identical across platforms and locales.
_tokenizer = RegexpTokenizer(TOKEN_PATTERN, flags=re.ASCII | re.MULTILINE | re.DOTALL)

START = "<START>"
END = "<END>"


@dataclass(frozen=True, slots=True)
class Token:
    """A surface string with its character offsets into the source text."""

    surface: str
    begin: int
    end: int
    pos: str | None = None
    shape: str | None = None


@dataclass(frozen=True)
class TokenSequence:
    """Tokens of one document, ordered by offset and non-overlapping."""

    doc_id: str
    tokens: tuple[Token, ...]
    text_length: int

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, index: int) -> Token:
        return self.tokens[index]

    @property
    def surfaces(self) -> list[str]:
        return [token.surface for token in self.tokens]

    @property
    def offsets(self) -> list[tuple[int, int]]:
        return [(token.begin, token.end) for token in self.tokens]

    def with_tags(self, tags: Sequence[str]) -> TokenSequence:
        """Return a copy whose tokens carry the given POS tags."""
        if len(tags) != len(self.tokens):
            msg = f"{len(tags)} tags for {len(self.tokens)} tokens"
            raise ValueError(msg)
        tokens = tuple(replace(token, pos=pos) for token, pos in zip(self.tokens, tags, strict=True))
        return replace(self, tokens=tokens)


def word_shape(surface: str) -> str:
    """Map lowercase letters to x, uppercase to X, digits to d; keep everything else."""
    if not surface:
        msg = "word_shape requires a non-empty string"
        raise ValueError(msg)
    chars = []
    for char in surface:
        if char.isdigit():
            chars.append("d")
        elif char.islower():
            chars.append("x")
        elif char.isupper():
            chars.append("X")
        else:
            chars.append(char)
    return "".join(chars)


def tokenize(text: str, doc_id: str = "") -> TokenSequence:
    """Split text into tokens that carry exact character offsets and shapes."""
    tokens = tuple(
        Token(surface=text[begin:end], begin=begin, end=end, shape=word_shape(text[begin:end]))
        for begin, end in _tokenizer.span_tokenize(text)
    )
    return TokenSequence(doc_id=doc_id, tokens=tokens, text_length=len(text))


@dataclass
class TaggerModel:
    """Feature weights of a finalized averaged perceptron."""

    weights: dict[str, dict[str, float]]
    tags: tuple[str, ...]
    averaged: bool = True

    def predict(self, features: Iterable[str]) -> str:
        """Highest-scoring tag for a feature list."""
        return _best_tag(self.weights, self.tags, features)


def _features(words: Sequence[str], shapes: Sequence[str], i: int, prev_tag: str) -> list[str]:
    word = words[i].lower()
    return [
        f"w={word}",
        f"suf1={word[-1:]}",
        f"suf2={word[-2:]}",
        f"suf3={word[-3:]}",
        f"shape={shapes[i]}",
        f"p1={prev_tag}",
        f"w-1={words[i - 1].lower() if i > 0 else START}",
        f"w+1={words[i + 1].lower() if i + 1 < len(words) else END}",
    ]


def _best_tag(weights: dict[str, dict[str, float]], tags: Sequence[str], features: Iterable[str]) -> str:
    scores = dict.fromkeys(tags, 0.0)
    for feature in features:
        for tag, weight in weights.get(feature, {}).items():
            scores[tag] += weight
    # tags are sorted, so min() over (-score, tag) picks the smallest tag on ties
    return min(tags, key=lambda tag: (-scores[tag], tag))


@dataclass
class _Perceptron:
    tags: tuple[str, ...]
    weights: dict[str, dict[str, float]] = field(default_factory=dict)
    totals: dict[tuple[str, str], float] = field(default_factory=lambda: defaultdict(float))
    stamps: dict[tuple[str, str], int] = field(default_factory=lambda: defaultdict(int))
    instances: int = 0

    def update(self, truth: str, guess: str, features: list[str]) -> None:
        """Perceptron update for one token; no change when the guess is right."""
        self.instances += 1
        if truth == guess:
            return
        for feature in features:
            row = self.weights.setdefault(feature, {})
            self._bump(feature, truth, row, 1.0)
            self._bump(feature, guess, row, -1.0)

    def _bump(self, feature: str, tag: str, row: dict[str, float], delta: float) -> None:
        key = (feature, tag)
        weight = row.get(tag, 0.0)
        self.totals[key] += (self.instances - self.stamps[key]) * weight
        self.stamps[key] = self.instances
        row[tag] = weight + delta

    def average(self) -> dict[str, dict[str, float]]:
        """Averaged weights, rounded to 32-bit values, zero weights dropped."""
        averaged: dict[str, dict[str, float]] = {}
        for feature, row in self.weights.items():
            out = {}
            for tag, weight in row.items():
                key = (feature, tag)
                total = self.totals[key] + (self.instances - self.stamps[key]) * weight
                value = float(np.float32(total / self.instances))
                if value:
                    out[tag] = value
            if out:
                averaged[feature] = out
        return averaged


def train_tagger(
    tagged_sentences: Sequence[Sequence[tuple[str, str]]],
    epochs: int = 5,
    seed: int = 13,
) -> TaggerModel:
    """Train an averaged perceptron over (word, tag) sentences.

    Sentence order is reshuffled every epoch from ``seed``; averaged weights
    are rounded to 32-bit values so the model survives serialization exactly.
    """
    if epochs < 1:
        msg = f"epochs must be >= 1, got {epochs}"
        raise TrainingError(msg)
    sentences = [list(sentence) for sentence in tagged_sentences if sentence]
    if not sentences:
        msg = "tagger training set is empty"
        raise TrainingError(msg)

    tags = tuple(sorted({tag for sentence in sentences for _, tag in sentence}))
    perceptron = _Perceptron(tags=tags)
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        correct = total = 0
        for index in rng.permutation(len(sentences)):
            words = [word for word, _ in sentences[index]]
            shapes = [word_shape(word) for word in words]
            prev = START
            for i, (_, gold) in enumerate(sentences[index]):
                features = _features(words, shapes, i, prev)
                guess = _best_tag(perceptron.weights, tags, features)
                perceptron.update(gold, guess, features)
                prev = guess
                correct += guess == gold
                total += 1
        logger.debug("tagger epoch %d: %d/%d correct", epoch + 1, correct, total)
    return TaggerModel(weights=perceptron.average(), tags=tags, averaged=True)


def tag_words(model: TaggerModel, words: Sequence[str]) -> list[str]:
    """Greedy left-to-right tagging of a word list."""
    shapes = [word_shape(word) for word in words]
    tags: list[str] = []
    prev = START
    for i in range(len(words)):
        prev = model.predict(_features(words, shapes, i, prev))
        tags.append(prev)
    return tags


def tag(model: TaggerModel, tokens: TokenSequence) -> TokenSequence:
    """Fill the POS tag of every token."""
    return tokens.with_tags(tag_words(model, tokens.surfaces))


def tagger_accuracy(model: TaggerModel, tagged_sentences: Iterable[Sequence[tuple[str, str]]]) -> float:
    """Token-level tag accuracy on gold-tagged sentences."""
    correct = total = 0
    for sentence in tagged_sentences:
        predicted = tag_words(model, [word for word, _ in sentence])
        correct += sum(p == gold for p, (_, gold) in zip(predicted, sentence, strict=True))
        total += len(sentence)
    return correct / total if total else 0.0


def read_tagged_corpus(lines: Iterable[str]) -> list[list[tuple[str, str]]]:
    """Parse ``word/TAG`` sentences, one per line; blank lines are skipped."""
    sentences = []
    for number, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        sentence = []
        for item in line.split(" "):
            word, sep, pos = item.rpartition("/")
            if not sep or not word or not pos:
                msg = f"line {number}: expected word/TAG, got {item!r}"
                raise CorpusError(msg)
            sentence.append((word, pos))
        sentences.append(sentence)
    return sentences


def format_tagged_sentence(sentence: Iterable[tuple[str, str]]) -> str:
    """A sentence as space-separated ``word/TAG`` items."""
    return " ".join(f"{word}/{pos}" for word, pos in sentence)
