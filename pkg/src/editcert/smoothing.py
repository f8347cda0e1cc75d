#!/usr/bin/env python3
"""
Smoothing Mechanisms

Randomised perturbations used to build the smoothed classifier:

- DeletionMechanism: every token is deleted independently with probability
  ``p_del``; the output is the subsequence of retained tokens
- AblationMechanism: all but a uniformly chosen size-k subset of positions
  are replaced by a null token appended to the alphabet

Every draw is addressed by a SeedSpec (master seed, sample index). The
random stream behind a draw is a counter-based Philox generator keyed by
the master seed, so draws can be evaluated in any order or in parallel and
still reproduce bit for bit.

Author: EditCert Project
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .config import (
    EXACT_ABLATION_MAX_LEN,
    EXACT_DELETION_MAX_LEN,
    STREAM_CERTIFY,
)
from .seqcore import Alphabet, LengthCapError, TokenSeq

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one perturbed draw: (master_seed, sample_index) on a stream."""
    master_seed: int
    sample_index: int
    stream: int = STREAM_CERTIFY

    def __post_init__(self):
        if self.sample_index < 0:
            raise ValueError("sample_index must be non-negative")

    def generator(self) -> np.random.Generator:
        """Counter-based generator; independent of any other draw's state."""
        key = np.array([self.master_seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)
        counter = np.array([0, self.sample_index & _MASK64, 0, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))


def derive_seed(master_seed: int, index: int, stream: int) -> int:
    """Derive a 63-bit child seed, e.g. one certification seed per manifest row."""
    rng = SeedSpec(master_seed, index, stream).generator()
    return int(rng.integers(0, 2**63 - 1, dtype=np.int64))


@dataclass(frozen=True)
class DeletionMechanism:
    """Deletion smoothing: i.i.d. token deletion with probability p_del."""
    p_del: float

    def __post_init__(self):
        if not 0.0 < self.p_del < 1.0:
            raise ValueError(f"p_del must lie in the open interval (0, 1), got {self.p_del}")

    @property
    def name(self) -> str:
        return "del"

    @property
    def p(self) -> float:
        return self.p_del

    def output_alphabet(self, alphabet: Alphabet) -> Alphabet:
        return alphabet

    def sample(self, x: TokenSeq, seed: SeedSpec) -> TokenSeq:
        return sample_deletion(x, self, seed)

    def sample_for_training(self, x: TokenSeq, seed: SeedSpec, min_preserved: int = 0) -> TokenSeq:
        return sample_deletion(x, self, seed, min_preserved=min_preserved)


@dataclass(frozen=True)
class AblationMechanism:
    """Ablation smoothing: keep k(n) = ceil((1 - p_ab) n) positions, null out the rest."""
    p_ab: float

    def __post_init__(self):
        if not 0.0 < self.p_ab < 1.0:
            raise ValueError(f"p_ab must lie in the open interval (0, 1), got {self.p_ab}")

    @property
    def name(self) -> str:
        return "abn"

    @property
    def p(self) -> float:
        return self.p_ab

    def retained_count(self, n: int) -> int:
        """k(n), computed on the decimal value of p_ab so 0.9 * 10 is exactly 1."""
        if n < 1:
            raise ValueError("Ablation needs a non-empty input")
        keep = (1 - Fraction(repr(self.p_ab))) * n
        return min(n, max(1, math.ceil(keep)))

    @staticmethod
    def null_token(alphabet: Alphabet) -> int:
        return alphabet.size

    def output_alphabet(self, alphabet: Alphabet) -> Alphabet:
        return alphabet.extended()

    def sample(self, x: TokenSeq, seed: SeedSpec) -> TokenSeq:
        return sample_ablation(x, self, seed)

    def sample_for_training(self, x: TokenSeq, seed: SeedSpec, min_preserved: int = 0) -> TokenSeq:
        return sample_ablation(x, self, seed, min_preserved=min_preserved)


Mechanism = Union[DeletionMechanism, AblationMechanism]


def sample_deletion(x: TokenSeq, mech: DeletionMechanism, seed: SeedSpec,
                    min_preserved: int = 0) -> TokenSeq:
    """
    Draw one deletion perturbation of ``x``.

    ``min_preserved`` is a training-time stabiliser: when fewer than
    min(min_preserved, |x|) tokens survive, randomly chosen deleted positions
    are restored. Certification draws must leave it at 0.
    """
    n = len(x)
    if n == 0:
        return x
    rng = seed.generator()
    keep = rng.random(n) >= mech.p_del

    floor = min(min_preserved, n)
    shortfall = floor - int(keep.sum())
    if shortfall > 0:
        deleted = np.flatnonzero(~keep)
        keep[rng.choice(deleted, size=shortfall, replace=False)] = True

    tokens = np.asarray(x.tokens)[keep]
    return TokenSeq(tuple(int(t) for t in tokens), x.alphabet)


def _partial_fisher_yates(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """First k entries of a uniformly shuffled range(n)."""
    perm = np.arange(n)
    swaps = rng.integers(np.arange(k), n)
    for i, j in enumerate(swaps):
        perm[i], perm[j] = perm[j], perm[i]
    return perm[:k]


def sample_ablation(x: TokenSeq, mech: AblationMechanism, seed: SeedSpec,
                    min_preserved: int = 0) -> TokenSeq:
    """
    Draw one ablation perturbation of ``x`` over the alphabet extended by the
    null token. Exactly k(|x|) positions keep their token (more if a training
    ``min_preserved`` floor applies).
    """
    n = len(x)
    if n == 0:
        raise ValueError("Ablation is undefined for the empty sequence")
    k = max(mech.retained_count(n), min(min_preserved, n))
    kept = _partial_fisher_yates(n, k, seed.generator())

    null = mech.null_token(x.alphabet)
    out = np.full(n, null, dtype=np.int64)
    src = np.asarray(x.tokens, dtype=np.int64)
    out[kept] = src[kept]
    return TokenSeq(tuple(int(t) for t in out), mech.output_alphabet(x.alphabet))


def exact_deletion_distribution(x: TokenSeq, mech: DeletionMechanism,
                                max_len: int = EXACT_DELETION_MAX_LEN) -> Dict[TokenSeq, float]:
    """Exact output distribution of deletion smoothing over distinct subsequences (|x| <= 20)."""
    n = len(x)
    if n > max_len:
        raise LengthCapError(f"Exact deletion distribution needs |x| <= {max_len}, got {n}")

    p = mech.p_del
    probs: Dict[Tuple[int, ...], float] = {}
    for k in range(n + 1):
        weight = (1.0 - p) ** k * p ** (n - k)
        for idx in combinations(range(n), k):
            out = tuple(x.tokens[i] for i in idx)
            probs[out] = probs.get(out, 0.0) + weight
    return {TokenSeq(tokens, x.alphabet): prob for tokens, prob in probs.items()}


def exact_ablation_distribution(x: TokenSeq, mech: AblationMechanism,
                                max_len: int = EXACT_ABLATION_MAX_LEN) -> Dict[TokenSeq, float]:
    """Exact output distribution of ablation smoothing: uniform over size-k position subsets."""
    n = len(x)
    if n > max_len:
        raise LengthCapError(f"Exact ablation distribution needs |x| <= {max_len}, got {n}")
    k = mech.retained_count(n)
    null = mech.null_token(x.alphabet)
    weight = 1.0 / math.comb(n, k)

    probs: Dict[Tuple[int, ...], float] = {}
    for idx in combinations(range(n), k):
        kept = set(idx)
        out = tuple(x.tokens[i] if i in kept else null for i in range(n))
        probs[out] = probs.get(out, 0.0) + weight
    out_alphabet = mech.output_alphabet(x.alphabet)
    return {TokenSeq(tokens, out_alphabet): prob for tokens, prob in probs.items()}


def mechanism_from_name(name: str, p: float) -> Mechanism:
    """Build a mechanism from its CLI name ('del' or 'abn')."""
    name = name.lower()
    if name == "del":
        return DeletionMechanism(p)
    if name == "abn":
        return AblationMechanism(p)
    raise ValueError(f"Unknown mechanism '{name}' (expected 'del' or 'abn')")


def perturb(x: TokenSeq, mech: Mechanism, seed: SeedSpec,
            min_preserved: Optional[int] = None) -> TokenSeq:
    """Mechanism-agnostic draw; a non-None ``min_preserved`` marks a training draw."""
    if min_preserved is None:
        return mech.sample(x, seed)
    return mech.sample_for_training(x, seed, min_preserved)
