"""Tests for token sequences, edit distances, chunking and neighbourhoods."""

import math
from functools import lru_cache

import pytest

from src.editcert.seqcore import (
    ALL_OP_SETS,
    DELETIONS,
    HAMMING,
    INSERTIONS,
    LCS_OPS,
    LEVENSHTEIN,
    UNREACHABLE,
    Alphabet,
    AlphabetMismatchError,
    ChunkMap,
    ChunkVocabulary,
    EditOpSet,
    NeighborhoodTooLargeError,
    TokenSeq,
    apply_chunking,
    edit_distance,
    enumerate_neighborhood,
    hamming_distance,
    lcs_distance,
    lcs_length,
    neighborhood_shells,
    neighborhood_size_lower_bound,
    read_chunk_map,
    write_chunk_map,
)
from src.editcert.seqcore import _general_edit_distance
from tests.helpers import random_seq, seq, small


def recursive_lcs(xs, ys) -> int:
    if not xs or not ys:
        return 0
    if xs[-1] == ys[-1]:
        return 1 + recursive_lcs(xs[:-1], ys[:-1])
    return max(recursive_lcs(xs[:-1], ys), recursive_lcs(xs, ys[:-1]))


@lru_cache(maxsize=None)
def recursive_distance(xs, ys, deletion: bool, insertion: bool, substitution: bool) -> float:
    """Edit distance straight from its definition; math.inf when unreachable."""
    if not xs and not ys:
        return 0
    best = math.inf

    def step(a, b):
        return recursive_distance(a, b, deletion, insertion, substitution)

    if xs and ys and xs[0] == ys[0]:
        best = min(best, step(xs[1:], ys[1:]))
    if substitution and xs and ys:
        best = min(best, 1 + step(xs[1:], ys[1:]))
    if deletion and xs:
        best = min(best, 1 + step(xs[1:], ys))
    if insertion and ys:
        best = min(best, 1 + step(xs, ys[1:]))
    return best


def as_number(d):
    return math.inf if d is UNREACHABLE else d


def random_pair(rng, size=3, max_len=6):
    return (random_seq(rng, size, int(rng.integers(0, max_len + 1))),
            random_seq(rng, size, int(rng.integers(0, max_len + 1))))


class TestTokenSeq:

    def test_rejects_out_of_range_tokens(self):
        with pytest.raises(ValueError):
            TokenSeq((0, 3), Alphabet(3))

    def test_bytes_conversion(self):
        x = TokenSeq.from_bytes(b"\x00\xff")
        assert x.tokens == (0, 255)
        assert x.to_bytes() == b"\x00\xff"

    def test_large_alphabet_has_no_byte_form(self):
        with pytest.raises(ValueError):
            TokenSeq((300,), Alphabet(1000)).to_bytes()


class TestEditOpSet:

    def test_parse(self):
        assert EditOpSet.parse("del,ins,sub") == LEVENSHTEIN
        assert EditOpSet.parse("sub") == HAMMING
        assert EditOpSet.parse("ins+del") == LCS_OPS
        assert EditOpSet.parse_list("del,ins,sub;sub") == [LEVENSHTEIN, HAMMING]

    def test_parse_rejects_unknown(self):
        with pytest.raises(ValueError):
            EditOpSet.parse("del,swap")

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            EditOpSet()

    def test_key_and_dual(self):
        assert LEVENSHTEIN.key == "del+ins+sub"
        assert DELETIONS.dual() == INSERTIONS
        assert LCS_OPS.is_symmetric and not DELETIONS.is_symmetric
        assert len(ALL_OP_SETS) == 7


class TestDistances:

    def test_lcs_length(self):
        assert lcs_length(seq(""), seq("XYZ")) == 0
        assert lcs_length(seq("ACGT"), seq("AGT")) == 3
        assert lcs_length(seq("AB"), seq("BA")) == 1

    def test_lcs_distance(self):
        assert lcs_distance(seq("ACGT"), seq("ACGT")) == 0
        assert lcs_distance(seq("ACGT"), seq("AGT")) == 1
        assert lcs_distance(seq("AB"), seq("BA")) == 2

    def test_levenshtein(self):
        assert edit_distance(seq("kitten"), seq("sitting"), LEVENSHTEIN) == 3

    def test_identity_is_zero_for_every_op_set(self):
        for ops in ALL_OP_SETS:
            assert edit_distance(seq("AB"), seq("AB"), ops) == 0

    def test_unreachable(self):
        assert edit_distance(seq("AB"), seq("ABC"), HAMMING) is UNREACHABLE
        assert edit_distance(seq("AC"), seq("ABC"), DELETIONS) is UNREACHABLE
        assert edit_distance(seq("ABC"), seq("AC"), INSERTIONS) is UNREACHABLE
        assert edit_distance(seq("AB"), seq("BA"), DELETIONS) is UNREACHABLE

    def test_one_directional_sets(self):
        assert edit_distance(seq("ABC"), seq("AC"), DELETIONS) == 1
        assert edit_distance(seq("AC"), seq("ABC"), INSERTIONS) == 1
        assert edit_distance(seq("ABC"), seq("XB"), EditOpSet(deletion=True, substitution=True)) == 2

    def test_hamming(self):
        assert hamming_distance(seq("AAB"), seq("AAB")) == 0
        assert hamming_distance(seq("AAB"), seq("ABB")) == 1
        assert hamming_distance(seq("AB"), seq("ABC")) is UNREACHABLE

    def test_alphabet_mismatch(self):
        with pytest.raises(AlphabetMismatchError):
            lcs_length(small([0, 1], 2), small([0, 1], 3))

    def test_dual_reverses_direction(self, rng):
        for _ in range(50):
            a = random_seq(rng, 3, int(rng.integers(0, 7)))
            b = random_seq(rng, 3, int(rng.integers(0, 7)))
            for ops in ALL_OP_SETS:
                assert edit_distance(a, b, ops) == edit_distance(b, a, ops.dual())

    def test_matches_breadth_first_shells(self, rng):
        for _ in range(10):
            x = random_seq(rng, 2, 3)
            for ops in ALL_OP_SETS:
                for d, shell in enumerate(neighborhood_shells(x, 2, ops)):
                    for tokens in shell:
                        assert edit_distance(x, small(tokens, 2), ops) == d

    def test_lcs_matches_recursive_definition(self, rng):
        for _ in range(200):
            a, b = random_pair(rng)
            assert lcs_length(a, b) == recursive_lcs(a.tokens, b.tokens)

    def test_every_op_set_matches_recursive_definition(self, rng):
        for _ in range(150):
            a, b = random_pair(rng)
            for ops in ALL_OP_SETS:
                expected = recursive_distance(a.tokens, b.tokens, ops.deletion, ops.insertion, ops.substitution)
                assert as_number(edit_distance(a, b, ops)) == expected
                assert as_number(_general_edit_distance(a, b, ops)) == expected

    def test_table_agrees_with_closed_forms(self, rng):
        for _ in range(300):
            a, b = random_pair(rng, max_len=8)
            assert _general_edit_distance(a, b, LCS_OPS) == lcs_distance(a, b)
            assert _general_edit_distance(a, b, HAMMING) == hamming_distance(a, b)
            assert _general_edit_distance(a, b, DELETIONS) == edit_distance(a, b, DELETIONS)
            assert _general_edit_distance(a, b, INSERTIONS) == edit_distance(a, b, INSERTIONS)

    def test_more_ops_never_increase_distance(self, rng):
        def flags(ops):
            return (ops.deletion, ops.insertion, ops.substitution)

        pairs = [(sub, sup) for sub in ALL_OP_SETS for sup in ALL_OP_SETS
                 if sub != sup and all(s <= t for s, t in zip(flags(sub), flags(sup)))]
        assert len(pairs) == 12
        for _ in range(150):
            a, b = random_pair(rng)
            for small_ops, large_ops in pairs:
                assert as_number(edit_distance(a, b, large_ops)) <= as_number(edit_distance(a, b, small_ops))

    def test_triangle_inequality_for_symmetric_sets(self, rng):
        for _ in range(100):
            a, b, c = (random_seq(rng, 3, int(rng.integers(0, 9))) for _ in range(3))
            for ops in (LEVENSHTEIN, LCS_OPS, HAMMING):
                ab, bc, ac = edit_distance(a, b, ops), edit_distance(b, c, ops), edit_distance(a, c, ops)
                if UNREACHABLE in (ab, bc):
                    continue
                assert ac <= ab + bc


class TestChunking:

    def test_partition(self):
        x = apply_chunking(TokenSeq.from_bytes(b"AABB"), ChunkMap((0, 2)))
        assert len(x) == 2
        assert x[0] != x[1]

    def test_single_chunk(self):
        assert len(apply_chunking(TokenSeq.from_bytes(b"AB"), ChunkMap((0,)))) == 1

    def test_identical_chunks_share_a_token(self):
        x = apply_chunking(TokenSeq.from_bytes(b"ABAB"), ChunkMap((0, 2)))
        assert x.tokens == (0, 0)

    def test_invalid_boundaries(self):
        with pytest.raises(ValueError):
            ChunkMap((1, 3))
        with pytest.raises(ValueError):
            ChunkMap((0, 2, 2))
        with pytest.raises(ValueError):
            apply_chunking(TokenSeq.from_bytes(b"AB"), ChunkMap((0, 2)))

    def test_shared_vocabulary_and_persistence(self, tmp_path):
        vocab = ChunkVocabulary()
        first = apply_chunking(TokenSeq.from_bytes(b"AABBCC"), ChunkMap((0, 2, 4)), vocab)
        second = apply_chunking(TokenSeq.from_bytes(b"CCAA"), ChunkMap((0, 2)), vocab)
        assert second.tokens == (first[2], first[0])

        vocab.save(tmp_path / "model.txt.chunks")
        reloaded = ChunkVocabulary.load(tmp_path / "model.txt.chunks")
        assert reloaded.chunks == vocab.chunks
        assert reloaded.decode(first) == b"AABBCC"

        write_chunk_map(ChunkMap((0, 3, 5)), tmp_path / "x.map")
        assert read_chunk_map(tmp_path / "x.map").boundaries == (0, 3, 5)


class TestNeighborhoods:

    def test_radius_zero(self):
        assert enumerate_neighborhood(seq("AB"), 0, LEVENSHTEIN) == {seq("AB")}

    def test_levenshtein_ball_of_two_byte_sequence(self):
        assert len(enumerate_neighborhood(seq("AB"), 1, LEVENSHTEIN)) == 1279

    def test_substitution_ball(self):
        assert enumerate_neighborhood(small([0], 2), 1, HAMMING) == {small([0], 2), small([1], 2)}

    def test_lower_bound(self):
        assert neighborhood_size_lower_bound(2, 1, 256) == 1278
        assert neighborhood_size_lower_bound(17, 0, 5) == 1
        assert neighborhood_size_lower_bound(10240, 128, 256) > 10**308

    def test_lower_bound_below_exact_size(self, rng):
        for _ in range(5):
            x = random_seq(rng, 3, 4)
            for r in range(2):
                exact = len(enumerate_neighborhood(x, r, LEVENSHTEIN))
                assert neighborhood_size_lower_bound(len(x), r, 3) <= exact

    def test_cap(self):
        with pytest.raises(NeighborhoodTooLargeError):
            enumerate_neighborhood(seq("ABCDEFGHIJ"), 3, LEVENSHTEIN, cap=1000)
