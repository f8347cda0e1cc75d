#!/usr/bin/env python3
"""
Sequence Core

Token sequences over finite alphabets and the edit-distance machinery the
certificates are stated in:

- Levenshtein, LCS and Hamming distances, plus op-restricted edit distance
  for any combination of {del, ins, sub}
- Byte-to-chunk reinterpretation with a persistent chunk vocabulary
- Exact neighbourhood enumeration (for oracle checks on tiny inputs) and the
  closed-form lower bound on the neighbourhood size

All functions are pure and safe to call concurrently.

Author: EditCert Project
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

from .config import DEFAULT_NEIGHBORHOOD_CAP, VOCAB_HEADER

logger = logging.getLogger(__name__)


class AlphabetMismatchError(ValueError):
    """Two sequences were compared over different alphabets."""


class NeighborhoodTooLargeError(ValueError):
    """Neighbourhood enumeration would exceed the configured size cap."""


class LengthCapError(ValueError):
    """Input too long for exact (exponential-time) enumeration."""


class Distance(Enum):
    """Distinguished edit-distance values."""
    UNREACHABLE = "unreachable"

    def __repr__(self) -> str:
        return "Unreachable"


UNREACHABLE = Distance.UNREACHABLE

DistanceValue = Union[int, Distance]


@dataclass(frozen=True)
class Alphabet:
    """Finite token alphabet; tokens are the integers in [0, size)."""
    size: int

    def __post_init__(self):
        if not isinstance(self.size, int) or self.size < 1:
            raise ValueError(f"Alphabet size must be a positive integer, got {self.size!r}")

    def extended(self) -> "Alphabet":
        """Alphabet with one extra token appended (used for the ablation null token)."""
        return Alphabet(self.size + 1)


BYTE_ALPHABET = Alphabet(256)


@dataclass(frozen=True)
class TokenSeq:
    """An immutable sequence of tokens drawn from an alphabet."""
    tokens: Tuple[int, ...]
    alphabet: Alphabet = BYTE_ALPHABET

    def __post_init__(self):
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if self.tokens:
            lo, hi = min(self.tokens), max(self.tokens)
            if lo < 0 or hi >= self.alphabet.size:
                raise ValueError(
                    f"Token out of range for alphabet of size {self.alphabet.size}: "
                    f"min={lo}, max={hi}"
                )

    @classmethod
    def from_bytes(cls, data: bytes) -> "TokenSeq":
        return cls(tuple(data), BYTE_ALPHABET)

    def to_bytes(self) -> bytes:
        if self.alphabet.size > 256:
            raise ValueError("Only sequences over an alphabet of at most 256 tokens map to bytes")
        return bytes(self.tokens)

    def with_tokens(self, tokens: Iterable[int]) -> "TokenSeq":
        """New sequence over the same alphabet."""
        return TokenSeq(tuple(tokens), self.alphabet)

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[int]:
        return iter(self.tokens)

    def __getitem__(self, index):
        return self.tokens[index]


@dataclass(frozen=True)
class EditOpSet:
    """Which elementary edit ops are allowed."""
    deletion: bool = False
    insertion: bool = False
    substitution: bool = False

    def __post_init__(self):
        if not (self.deletion or self.insertion or self.substitution):
            raise ValueError("An edit op set needs at least one of del, ins, sub")

    @property
    def key(self) -> str:
        """Canonical string, e.g. 'del+ins+sub'."""
        names = []
        if self.deletion:
            names.append("del")
        if self.insertion:
            names.append("ins")
        if self.substitution:
            names.append("sub")
        return "+".join(names)

    @classmethod
    def parse(cls, text: str) -> "EditOpSet":
        """Parse 'del,ins,sub', 'del+ins' or 'sub' style op lists."""
        names = {part.strip().lower() for part in text.replace("+", ",").split(",") if part.strip()}
        unknown = names - {"del", "ins", "sub"}
        if unknown:
            raise ValueError(f"Unknown edit ops: {sorted(unknown)}")
        return cls("del" in names, "ins" in names, "sub" in names)

    @classmethod
    def parse_list(cls, text: str) -> List["EditOpSet"]:
        """Parse a ';'-separated list of op sets, e.g. 'del,ins,sub;sub'."""
        return [cls.parse(chunk) for chunk in text.split(";") if chunk.strip()]

    def dual(self) -> "EditOpSet":
        """Swap del and ins: d_O(a, b) == d_dual(O)(b, a)."""
        return EditOpSet(self.insertion, self.deletion, self.substitution)

    @property
    def is_symmetric(self) -> bool:
        return self.deletion == self.insertion

    def __str__(self) -> str:
        return self.key


LEVENSHTEIN = EditOpSet(True, True, True)
LCS_OPS = EditOpSet(True, True, False)
HAMMING = EditOpSet(False, False, True)
DELETIONS = EditOpSet(True, False, False)
INSERTIONS = EditOpSet(False, True, False)

ALL_OP_SETS: Tuple[EditOpSet, ...] = tuple(
    EditOpSet(d, i, s)
    for d in (False, True) for i in (False, True) for s in (False, True)
    if d or i or s
)


def _check_same_alphabet(a: TokenSeq, b: TokenSeq) -> None:
    if a.alphabet != b.alphabet:
        raise AlphabetMismatchError(
            f"Alphabet mismatch: {a.alphabet.size} vs {b.alphabet.size}"
        )


def lcs_length(a: TokenSeq, b: TokenSeq) -> int:
    """Length of a longest common subsequence (two-row dynamic programme)."""
    _check_same_alphabet(a, b)
    xs, ys = a.tokens, b.tokens
    if len(xs) < len(ys):
        xs, ys = ys, xs
    if not ys:
        return 0

    prev = [0] * (len(ys) + 1)
    for x_tok in xs:
        cur = [0] * (len(ys) + 1)
        for j, y_tok in enumerate(ys, 1):
            if x_tok == y_tok:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] > prev[j] else prev[j]
        prev = cur
    return prev[-1]


def lcs_distance(a: TokenSeq, b: TokenSeq) -> int:
    """Edit distance with O = {del, ins}: |a| + |b| - 2 * LCS(a, b)."""
    return len(a) + len(b) - 2 * lcs_length(a, b)


def hamming_distance(a: TokenSeq, b: TokenSeq) -> DistanceValue:
    """Number of differing positions, or UNREACHABLE for unequal lengths."""
    _check_same_alphabet(a, b)
    if len(a) != len(b):
        return UNREACHABLE
    return sum(1 for x_tok, y_tok in zip(a.tokens, b.tokens) if x_tok != y_tok)


def _is_subsequence(short: Sequence[int], long: Sequence[int]) -> bool:
    it = iter(long)
    return all(tok in it for tok in short)


def edit_distance(a: TokenSeq, b: TokenSeq, ops: EditOpSet) -> DistanceValue:
    """
    Minimum number of allowed ops transforming ``a`` into ``b``.

    Returns UNREACHABLE when no sequence of allowed ops gets there (for example
    sub-only with unequal lengths).
    """
    _check_same_alphabet(a, b)
    if ops == HAMMING:
        return hamming_distance(a, b)
    if ops == LCS_OPS:
        return lcs_distance(a, b)
    if ops == DELETIONS:
        if len(b) <= len(a) and _is_subsequence(b.tokens, a.tokens):
            return len(a) - len(b)
        return UNREACHABLE
    if ops == INSERTIONS:
        if len(a) <= len(b) and _is_subsequence(a.tokens, b.tokens):
            return len(b) - len(a)
        return UNREACHABLE
    return _general_edit_distance(a, b, ops)


def _general_edit_distance(a: TokenSeq, b: TokenSeq, ops: EditOpSet) -> DistanceValue:
    """Wagner-Fischer table restricted to the allowed ops."""
    xs, ys = a.tokens, b.tokens
    inf = len(xs) + len(ys) + 1
    can_del, can_ins, can_sub = ops.deletion, ops.insertion, ops.substitution

    prev = [j if can_ins else inf for j in range(len(ys) + 1)]
    prev[0] = 0
    for i, x_tok in enumerate(xs, 1):
        cur = [i if can_del else inf] + [inf] * len(ys)
        for j, y_tok in enumerate(ys, 1):
            best = inf
            if x_tok == y_tok:
                best = prev[j - 1]
            elif can_sub:
                best = prev[j - 1] + 1
            if can_del and prev[j] + 1 < best:
                best = prev[j] + 1
            if can_ins and cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev = cur

    result = prev[-1]
    return UNREACHABLE if result >= inf else result


# ---------------------------------------------------------------------------
# Chunking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChunkMap:
    """Start offsets of chunks within a byte sequence."""
    boundaries: Tuple[int, ...]

    def __post_init__(self):
        if not isinstance(self.boundaries, tuple):
            object.__setattr__(self, "boundaries", tuple(int(b) for b in self.boundaries))
        if not self.boundaries or self.boundaries[0] != 0:
            raise ValueError("Chunk map must start with offset 0")
        if any(b2 <= b1 for b1, b2 in zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("Chunk map offsets must be strictly increasing")

    def validate_for(self, byte_length: int) -> None:
        if self.boundaries[-1] >= byte_length:
            raise ValueError(
                f"Chunk boundary {self.boundaries[-1]} out of range for {byte_length} bytes"
            )

    def split(self, data: bytes) -> List[bytes]:
        self.validate_for(len(data))
        ends = self.boundaries[1:] + (len(data),)
        return [data[start:end] for start, end in zip(self.boundaries, ends)]


def read_chunk_map(path: Path) -> ChunkMap:
    """Read a sidecar file: one decimal offset per line, first line '0'."""
    with open(path, 'r') as f:
        offsets = [int(line.strip()) for line in f if line.strip()]
    return ChunkMap(tuple(offsets))


def write_chunk_map(chunk_map: ChunkMap, path: Path) -> None:
    with open(path, 'w') as f:
        for offset in chunk_map.boundaries:
            f.write(f"{offset}\n")


@dataclass
class ChunkVocabulary:
    """
    Interns distinct byte chunks into a dense integer alphabet.

    Ids are assigned in first-seen order and persisted next to models so the
    same chunk keeps the same id across runs.
    """
    chunks: List[bytes] = field(default_factory=list)
    index: Dict[bytes, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.chunks and not self.index:
            self.index = {chunk: i for i, chunk in enumerate(self.chunks)}

    def intern(self, chunk: bytes) -> int:
        chunk_id = self.index.get(chunk)
        if chunk_id is None:
            chunk_id = len(self.chunks)
            self.chunks.append(chunk)
            self.index[chunk] = chunk_id
        return chunk_id

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(max(1, len(self.chunks)))

    def decode(self, seq: TokenSeq) -> bytes:
        return b"".join(self.chunks[t] for t in seq.tokens)

    def save(self, path: Path) -> None:
        with open(path, 'w') as f:
            f.write(f"{VOCAB_HEADER}\n")
            for chunk in self.chunks:
                f.write(f"{chunk.hex()}\n")
        logger.debug(f"Saved chunk vocabulary ({len(self.chunks)} chunks) to {path}")

    @classmethod
    def load(cls, path: Path) -> "ChunkVocabulary":
        with open(path, 'r') as f:
            header = f.readline().strip()
            if header != VOCAB_HEADER:
                raise ValueError(f"Not a chunk vocabulary file: {path}")
            chunks = [bytes.fromhex(line.strip()) for line in f if line.strip()]
        return cls(chunks=chunks)


def apply_chunking(data: TokenSeq, chunk_map: ChunkMap,
                   vocabulary: Optional[ChunkVocabulary] = None) -> TokenSeq:
    """
    Reinterpret a byte sequence as a sequence of chunk tokens.

    Identical chunk contents share a token. Pass a shared ``vocabulary`` to
    intern chunks across a corpus; without one a fresh vocabulary is used.
    """
    if data.alphabet != BYTE_ALPHABET:
        raise AlphabetMismatchError("Chunking expects a byte sequence (alphabet of 256)")
    vocabulary = vocabulary if vocabulary is not None else ChunkVocabulary()
    pieces = chunk_map.split(data.to_bytes())
    ids = tuple(vocabulary.intern(piece) for piece in pieces)
    return TokenSeq(ids, vocabulary.alphabet)


# ---------------------------------------------------------------------------
# Neighbourhoods
# ---------------------------------------------------------------------------

def neighborhood_size_lower_bound(length: int, radius: int, alphabet_size: int) -> int:
    """
    Lower bound on the size of the Levenshtein ball of ``radius`` around a
    sequence of ``length`` tokens:

        sum_{i=0}^{r} (A-1)^i * sum_{j=i-r}^{r} C(length + j, i)

    Binomials with a negative upper index count as zero. Exact integer result.
    """
    if length < 0 or radius < 0 or alphabet_size < 1:
        raise ValueError("length and radius must be non-negative, alphabet_size positive")
    total = 0
    for i in range(radius + 1):
        inner = sum(
            math.comb(length + j, i)
            for j in range(i - radius, radius + 1)
            if length + j >= 0
        )
        total += (alphabet_size - 1) ** i * inner
    return total


def _one_op_neighbors(tokens: Tuple[int, ...], ops: EditOpSet, alphabet_size: int) -> Iterator[Tuple[int, ...]]:
    n = len(tokens)
    if ops.deletion:
        for i in range(n):
            yield tokens[:i] + tokens[i + 1:]
    if ops.insertion:
        for i in range(n + 1):
            head, tail = tokens[:i], tokens[i:]
            for c in range(alphabet_size):
                yield head + (c,) + tail
    if ops.substitution:
        for i in range(n):
            head, tail = tokens[:i], tokens[i + 1:]
            for c in range(alphabet_size):
                if c != tokens[i]:
                    yield head + (c,) + tail


def neighborhood_shells(x: TokenSeq, radius: int, ops: EditOpSet,
                        cap: int = DEFAULT_NEIGHBORHOOD_CAP) -> Iterator[Set[Tuple[int, ...]]]:
    """
    Yield the token tuples at edit distance exactly 0, 1, ..., ``radius`` from
    ``x`` (ops transform ``x`` into the neighbour), breadth first.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    seen: Set[Tuple[int, ...]] = {x.tokens}
    shell: Set[Tuple[int, ...]] = {x.tokens}
    yield shell
    for _ in range(radius):
        nxt: Set[Tuple[int, ...]] = set()
        for tokens in shell:
            for cand in _one_op_neighbors(tokens, ops, x.alphabet.size):
                if cand not in seen:
                    seen.add(cand)
                    nxt.add(cand)
            if len(seen) > cap:
                raise NeighborhoodTooLargeError(
                    f"Neighbourhood exceeds cap of {cap:,} sequences"
                )
        shell = nxt
        yield shell


def enumerate_neighborhood(x: TokenSeq, radius: int, ops: EditOpSet,
                           cap: int = DEFAULT_NEIGHBORHOOD_CAP) -> Set[TokenSeq]:
    """
    Exact set {x' : d_O(x, x') <= radius}.

    Refuses up front when the closed-form lower bound already exceeds ``cap``.
    """
    bound = neighborhood_size_lower_bound(len(x), radius, x.alphabet.size)
    if bound > cap:
        raise NeighborhoodTooLargeError(
            f"Neighbourhood lower bound {bound:,} exceeds cap of {cap:,}"
        )
    members: Set[TokenSeq] = set()
    for shell in neighborhood_shells(x, radius, ops, cap):
        members.update(TokenSeq(tokens, x.alphabet) for tokens in shell)
    return members
