"""Tests for tokenization, word shapes and the POS tagger."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from clinevent.errors import CorpusError, TrainingError
from clinevent.network import load_tagger, save_tagger
from clinevent.textproc import (
    format_tagged_sentence,
    read_tagged_corpus,
    tag,
    tag_words,
    tagger_accuracy,
    tokenize,
    train_tagger,
    word_shape,
)

ASCII_WHITESPACE = " \t\n\r\f\v"


def expected_shape(surface):
    out = []
    for char in surface:
        if char.isdigit():
            out.append("d")
        elif char.islower():
            out.append("x")
        elif char.isupper():
            out.append("X")
        else:
            out.append(char)
    return "".join(out)


class TestWordShape:
    """Test the character-class shape mapping."""

    @pytest.mark.parametrize(
        ("surface", "shape"),
        [
            ("Bleeding", "Xxxxxxxx"),
            ("2014", "dddd"),
            ("B12", "Xdd"),
            ("mg/dL", "xx/xX"),
            (",", ","),
        ],
    )
    def test_examples(self, surface, shape):
        """Test documented shape examples."""
        assert word_shape(surface) == shape

    def test_empty_string_rejected(self):
        """Test that an empty surface has no shape."""
        with pytest.raises(ValueError, match="non-empty"):
            word_shape("")


class TestTokenize:
    """Test offset-preserving tokenization."""

    def test_note_example(self):
        """Test the leading tokens of a dated note."""
        tokens = tokenize("April 23, 2014: The patient", "n1")
        assert tokens.surfaces == ["April", "23", ",", "2014", ":", "The", "patient"]
        assert tokens.offsets[:3] == [(0, 5), (6, 8), (8, 9)]
        assert tokens[0].shape == "Xxxxx"
        assert tokens.doc_id == "n1"
        assert tokens.text_length == 27

    def test_empty_and_whitespace(self):
        """Test that blank texts have no tokens."""
        assert len(tokenize("")) == 0
        assert len(tokenize(" \n\t ")) == 0

    def test_dollar_amounts(self):
        """Test that a dollar amount stays one token."""
        assert tokenize("paid $12.50 today").surfaces == ["paid", "$12.50", "today"]

    def test_non_ascii_is_kept_verbatim(self):
        """Test that non-ASCII characters keep exact offsets."""
        text = "fièvre 38°C"
        tokens = tokenize(text)
        for token in tokens:
            assert text[token.begin : token.end] == token.surface
        assert "".join(tokens.surfaces) == text.replace(" ", "")

    def test_random_strings_keep_offsets_and_shapes(self):
        """Test offset fidelity and shape conformance over 10^5 random strings."""
        rng = np.random.default_rng(7)
        alphabet = list("abcXYZ019$.,;:-/()'") + [" ", "\n", "\t", "é", "Ü", "°", "日"]
        violations = []
        for _ in range(100_000):
            length = int(rng.integers(0, 16))
            text = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=length))
            tokens = tokenize(text)
            previous_end = 0
            covered = 0
            for token in tokens:
                ok = (
                    token.begin >= previous_end
                    and token.end > token.begin
                    and text[token.begin : token.end] == token.surface
                    and not any(char in ASCII_WHITESPACE for char in token.surface)
                    and token.shape == expected_shape(token.surface)
                )
                if not ok:
                    violations.append((text, token))
                previous_end = token.end
                covered += token.end - token.begin
            if covered != sum(char not in ASCII_WHITESPACE for char in text):
                violations.append((text, None))
        assert violations == []

    def test_with_tags_length_mismatch(self):
        """Test that tags must match the token count."""
        with pytest.raises(ValueError, match="2 tags for 3 tokens"):
            tokenize("a b c").with_tags(["NN", "NN"])


class TestTagger:
    """Test the averaged-perceptron POS tagger."""

    @pytest.fixture
    def sentences(self):
        """A tiny tagged corpus."""
        return read_tagged_corpus(
            [
                "The/DT patient/NN has/VBZ nausea/NN ./.",
                "",
                "The/DT nurse/NN reported/VBD fever/NN ./.",
                "No/DT bleeding/NN was/VBD seen/VBN ./.",
            ]
        )

    def test_disjoint_two_word_corpus(self):
        """Test that two words with disjoint tags are both recovered."""
        model = train_tagger([[("dog", "NN"), ("runs", "VBZ")]])
        assert tag_words(model, ["dog", "runs"]) == ["NN", "VBZ"]

    def test_training_sentences_reproduced(self, sentences):
        """Test that a converged tagger reproduces its training tags."""
        model = train_tagger(sentences, epochs=10)
        assert tagger_accuracy(model, sentences) == 1.0

    def test_tag_fills_token_pos(self, sentences):
        """Test that tagging a token sequence fills every POS slot."""
        model = train_tagger(sentences, epochs=10)
        tagged = tag(model, tokenize("The patient has nausea."))
        assert [token.pos for token in tagged] == ["DT", "NN", "VBZ", "NN", "."]

    def test_training_is_deterministic(self, sentences):
        """Test that one seed gives identical weights."""
        first = train_tagger(sentences, seed=3)
        second = train_tagger(sentences, seed=3)
        assert first.weights == second.weights

    def test_empty_corpus_rejected(self):
        """Test that training needs at least one sentence."""
        with pytest.raises(TrainingError, match="empty"):
            train_tagger([])

    def test_zero_epochs_rejected(self, sentences):
        """Test that training needs at least one epoch."""
        with pytest.raises(TrainingError):
            train_tagger(sentences, epochs=0)

    def test_save_load_round_trip(self, sentences):
        """Test that a saved tagger reloads with identical weights."""
        model = train_tagger(sentences)
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "tagger.clnx"
            save_tagger(model, path)
            loaded = load_tagger(path)
        assert loaded.tags == model.tags
        assert loaded.weights == model.weights


class TestTaggedCorpus:
    """Test the word/TAG corpus format."""

    def test_read_and_format(self):
        """Test parsing and formatting of one sentence."""
        sentences = read_tagged_corpus(["mg/dL/NN is/VBZ ok/JJ"])
        assert sentences == [[("mg/dL", "NN"), ("is", "VBZ"), ("ok", "JJ")]]
        assert format_tagged_sentence(sentences[0]) == "mg/dL/NN is/VBZ ok/JJ"

    def test_missing_tag_rejected(self):
        """Test that an item without a tag names its line."""
        with pytest.raises(CorpusError, match="line 2"):
            read_tagged_corpus(["a/DT", "word"])
