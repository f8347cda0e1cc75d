"""Small sequence builders and stub launchers shared by the tests."""

import sys
from pathlib import Path
from typing import List

import numpy as np

from src.editcert.seqcore import BYTE_ALPHABET, Alphabet, TokenSeq

STUB_DIR = Path(__file__).parent / "stubs"


def seq(text: str, alphabet: Alphabet = BYTE_ALPHABET) -> TokenSeq:
    """Byte sequence from an ASCII string, e.g. seq("ACGT")."""
    return TokenSeq(tuple(text.encode("ascii")), alphabet)


def small(tokens, size: int) -> TokenSeq:
    """Sequence over a tiny alphabet {0, ..., size - 1}."""
    return TokenSeq(tuple(int(t) for t in tokens), Alphabet(size))


def random_seq(rng: np.random.Generator, size: int, length: int) -> TokenSeq:
    return small(rng.integers(0, size, size=length), size)


def stub_command(*args: str) -> List[str]:
    return [sys.executable, str(STUB_DIR / "line_classifier.py"), *args]
