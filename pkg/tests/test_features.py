"""Tests for vocabularies, embeddings and context windows."""

import numpy as np
import pytest

from clinevent.errors import CorpusError, ShapeError
from clinevent.features import (
    PAD,
    PAD_INDEX,
    UNK,
    UNK_INDEX,
    FeatureKind,
    Vocabulary,
    build_vocabularies,
    embed,
    embed_rows,
    encode_sequence,
    extract_window,
    init_embeddings,
    iter_windows,
    load_pretrained,
)
from clinevent.textproc import tokenize


class TestVocabulary:
    """Test string to index mapping."""

    def test_reserved_entries(self, vocabularies):
        """Test that PAD and UNK occupy indices 0 and 1."""
        for vocab in vocabularies:
            assert vocab.word(PAD_INDEX) == PAD
            assert vocab.word(UNK_INDEX) == UNK

    def test_token_lookup_is_lowercased(self, vocabularies):
        """Test case-insensitive token lookup and UNK fallback."""
        assert vocabularies.token.index("PATIENT") == vocabularies.token.index("patient")
        assert vocabularies.token.index("patient") > UNK_INDEX
        assert vocabularies.token.index("tachycardia") == UNK_INDEX

    def test_pos_lookup_is_exact(self, vocabularies):
        """Test that tags and shapes keep their case."""
        assert vocabularies.pos.index("NN") > UNK_INDEX
        assert vocabularies.pos.index("nn") == UNK_INDEX

    def test_first_occurrence_order(self, vocabularies):
        """Test that entries follow first occurrence in the corpus."""
        assert vocabularies.token.entries[2:5] == ["patient", "reports", "severe"]
        assert len(vocabularies.token) == 12

    def test_untagged_tokens_rejected(self):
        """Test that vocabularies need POS tags."""
        with pytest.raises(CorpusError, match="no POS"):
            build_vocabularies([tokenize("fever")])

    def test_bad_prefix_rejected(self):
        """Test that a vocabulary must start with the reserved entries."""
        with pytest.raises(CorpusError):
            Vocabulary(FeatureKind.TOKEN, ["fever"])


class TestEmbeddings:
    """Test embedding tables and pretrained vectors."""

    def test_pad_row_is_zero(self, vocabularies):
        """Test that initialization zeroes the PAD row."""
        table = init_embeddings(vocabularies.token, 5, np.random.default_rng(0))
        assert table.matrix.shape == (12, 5)
        assert not table.matrix[PAD_INDEX].any()
        assert np.abs(table.matrix).max() <= 0.05

    def test_pretrained_rows_overwritten(self, vocabularies):
        """Test that GloVe lines replace matching rows only."""
        base = init_embeddings(vocabularies.token, 3, np.random.default_rng(0))
        lines = ["fever 0.5 -0.25 1.0", "unrelated 9 9 9", "", f"{PAD} 1 1 1"]
        table = load_pretrained(lines, vocabularies.token, dim=3, table=base)
        index = vocabularies.token.index("fever")
        assert table.matrix[index].tolist() == [0.5, -0.25, 1.0]
        assert not table.matrix[PAD_INDEX].any()
        other = vocabularies.token.index("pain")
        assert np.array_equal(table.matrix[other], base.matrix[other])

    def test_pretrained_wrong_dimension(self, vocabularies):
        """Test that a short vector line names its line number."""
        with pytest.raises(CorpusError, match="line 2"):
            load_pretrained(["fever 1 2 3", "pain 1 2"], vocabularies.token, dim=3)


class TestWindows:
    """Test window extraction and encoding."""

    @pytest.mark.parametrize(("width", "rows"), [(4, 9), (5, 11)])
    def test_sequence_length(self, tagged_tokens, vocabularies, width, rows):
        """Test that a window has 2w+1 rows."""
        window = extract_window(tagged_tokens, 3, width, vocabularies)
        assert window.rows.shape == (rows, 3)

    def test_edges_are_padded(self, tagged_tokens, vocabularies):
        """Test PAD rows before the first token."""
        window = extract_window(tagged_tokens, 0, 4, vocabularies)
        assert not window.rows[:4].any()
        assert window.rows[4, 0] == vocabularies.token.index("patient")

    def test_iter_windows_match_extract(self, tagged_tokens, vocabularies):
        """Test that batch windows equal single extraction."""
        encoded = encode_sequence(tagged_tokens, vocabularies)
        for window in iter_windows(encoded, 2):
            single = extract_window(tagged_tokens, window.center, 2, vocabularies)
            assert np.array_equal(window.rows, single.rows)

    def test_unknown_token_maps_to_unk(self, vocabularies):
        """Test that an unseen token gets the UNK index."""
        tokens = tokenize("tachycardia").with_tags(["NN"])
        window = extract_window(tokens, 0, 1, vocabularies)
        assert window.rows[1, 0] == UNK_INDEX

    def test_requires_token_sequence(self, vocabularies):
        """Test that raw strings are rejected."""
        with pytest.raises(TypeError):
            encode_sequence(["fever"], vocabularies)

    def test_center_out_of_range(self, tagged_tokens, vocabularies):
        """Test that the center must be a token index."""
        with pytest.raises(IndexError):
            extract_window(tagged_tokens, len(tagged_tokens), 2, vocabularies)


class TestEmbed:
    """Test window embedding lookup."""

    def test_concatenated_rows(self, tagged_tokens, vocabularies):
        """Test the (2w+1) x d embedding of a window."""
        rng = np.random.default_rng(1)
        tables = [init_embeddings(vocab, dim, rng) for vocab, dim in zip(vocabularies, (4, 2, 3), strict=True)]
        window = extract_window(tagged_tokens, 1, 2, vocabularies)
        matrix = embed(window, tables)
        assert matrix.shape == (5, 9)
        token, pos, shape = window.rows[2]
        expected = np.concatenate([tables[0].matrix[token], tables[1].matrix[pos], tables[2].matrix[shape]])
        assert np.array_equal(matrix[2], expected)

    def test_index_out_of_bounds(self, vocabularies):
        """Test that indices beyond a table raise ShapeError."""
        rng = np.random.default_rng(1)
        tables = [init_embeddings(vocab, 2, rng) for vocab in vocabularies]
        rows = np.array([[0, 0, 0], [99, 0, 0]])
        with pytest.raises(ShapeError):
            embed_rows(rows, tables)
