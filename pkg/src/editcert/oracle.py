#!/usr/bin/env python3
"""
Exact Oracles

Ground truth for the certificates on inputs small enough to enumerate:

- exact smoothed confidences under the deletion mechanism (all 2^|x|
  retained-index sets), with a vectorised path for lookup-table classifiers
- exhaustive soundness verification of a certified radius over the
  enumerated edit-distance ball, including the radius where the prediction
  first flips
- property checkers for the LCS-distance bound, the closed-form radii versus
  brute-force minimisation over op counts, and deletion-vs-ablation dominance
- seeded trial suites used by ``editcert verify``

Author: EditCert Project
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .certify import (
    NOT_CERTIFIABLE,
    UNBOUNDED,
    Radius,
    certified_radius,
    nu_threshold,
    rho_bound,
    smoothed_argmax,
    tally_votes,
    theorem1_bound,
)
from .classifiers import BaseClassifier
from .config import (
    DOMINANCE_MAX_LEN,
    DOMINANCE_P_VALUES,
    EXACT_CONFIDENCE_MAX_LEN,
    FAST_EXACT_MAX_LEN,
    ORACLE_ALPHABET,
    ORACLE_FRONTIER_EXTRA,
    ORACLE_LENGTH,
    ORACLE_P_DEL,
    ORACLE_TRIALS,
    ORACLE_UNBOUNDED_CHECK,
    SOUNDNESS_TOLERANCE,
    STREAM_ORACLE,
    STREAM_THEOREM1,
    RADIUS_CHECK_MAX_RADIUS,
    RADIUS_CHECK_MU_GRID,
    RADIUS_CHECK_NU_GRID,
    RADIUS_CHECK_P_GRID,
    THEOREM1_MAX_LEN,
    THEOREM1_P_VALUES,
    THEOREM1_TOLERANCE,
    THEOREM1_TRIAL_MAX_LEN,
    THEOREM1_TRIALS,
    DEFAULT_NEIGHBORHOOD_CAP,
)
from .seqcore import (
    ALL_OP_SETS,
    LEVENSHTEIN,
    Alphabet,
    EditOpSet,
    LengthCapError,
    TokenSeq,
    lcs_distance,
    neighborhood_shells,
)
from .smoothing import AblationMechanism, DeletionMechanism, SeedSpec, exact_deletion_distribution

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExactConfidence:
    """Exact per-class smoothed confidences."""
    probs: Tuple[float, ...]

    def __post_init__(self):
        if any(p < -1e-12 or p > 1 + 1e-12 for p in self.probs):
            raise ValueError(f"Confidences must lie in [0, 1]: {self.probs}")
        if abs(sum(self.probs) - 1.0) > 1e-10:
            raise ValueError(f"Confidences must sum to 1, got {sum(self.probs)}")

    def __getitem__(self, y: int) -> float:
        return self.probs[y]

    def __len__(self) -> int:
        return len(self.probs)


class LookupTableClassifier(BaseClassifier):
    """
    Classifier defined by an explicit label for every sequence up to
    ``max_len`` tokens. Sequences are indexed by length offset plus their
    base-A value (first token most significant).
    """

    def __init__(self, alphabet: Alphabet, labels: np.ndarray, num_classes: int = 2):
        self.alphabet = alphabet
        self.num_classes = num_classes
        self.max_concurrency = 64
        self.labels = np.asarray(labels, dtype=np.int64)
        self.offsets = [0]
        self.max_len = -1
        while self.offsets[-1] + alphabet.size ** (self.max_len + 1) <= len(self.labels):
            self.offsets.append(self.offsets[-1] + alphabet.size ** (self.max_len + 1))
            self.max_len += 1
        if self.offsets[-1] != len(self.labels):
            raise ValueError("Label table size does not cover whole lengths")

    @staticmethod
    def table_size(alphabet_size: int, max_len: int) -> int:
        return sum(alphabet_size ** k for k in range(max_len + 1))

    @classmethod
    def random(cls, alphabet: Alphabet, max_len: int, num_classes: int,
               rng: np.random.Generator) -> "LookupTableClassifier":
        labels = rng.integers(0, num_classes, size=cls.table_size(alphabet.size, max_len))
        return cls(alphabet, labels, num_classes)

    def extended(self, max_len: int, rng: np.random.Generator) -> "LookupTableClassifier":
        """Same labels, plus fresh random labels for lengths up to ``max_len``."""
        if max_len <= self.max_len:
            return self
        extra = self.table_size(self.alphabet.size, max_len) - len(self.labels)
        labels = np.concatenate([self.labels, rng.integers(0, self.num_classes, size=extra)])
        return LookupTableClassifier(self.alphabet, labels, self.num_classes)

    def code(self, tokens: Sequence[int]) -> int:
        if len(tokens) > self.max_len:
            raise ValueError(f"Sequence of length {len(tokens)} beyond table (max {self.max_len})")
        value = 0
        for t in tokens:
            value = value * self.alphabet.size + int(t)
        return self.offsets[len(tokens)] + value

    def query(self, x: TokenSeq) -> int:
        return int(self.labels[self.code(x.tokens)])


@lru_cache(maxsize=32)
def _mask_tables(length: int, alphabet_size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Positional weights (2^L x L) and kept counts (2^L) for every retained-index mask."""
    masks = np.arange(2 ** length, dtype=np.int64)
    bits = (masks[:, None] >> np.arange(length, dtype=np.int64)[None, :]) & 1
    kept = bits.sum(axis=1)
    kept_after = np.cumsum(bits[:, ::-1], axis=1)[:, ::-1] - bits
    weights = bits * alphabet_size ** kept_after
    return weights, kept


def _table_confidences(seqs: np.ndarray, table: LookupTableClassifier, p_del: float) -> np.ndarray:
    """Exact confidences (N x K) for same-length sequences under a lookup-table base."""
    length = seqs.shape[1]
    weights, kept = _mask_tables(length, table.alphabet.size)
    offsets = np.asarray(table.offsets, dtype=np.int64)
    codes = seqs @ weights.T + offsets[kept][None, :]
    labels = table.labels[codes]
    probs = (1.0 - p_del) ** kept * p_del ** (length - kept)
    return np.stack([(labels == y) @ probs for y in range(table.num_classes)], axis=1)


def _check_deletion(mech) -> DeletionMechanism:
    if not isinstance(mech, DeletionMechanism):
        raise TypeError("Exact confidences are implemented for the deletion mechanism")
    return mech


def exact_confidence(x: TokenSeq, base: BaseClassifier, mech: DeletionMechanism,
                     max_len: int = EXACT_CONFIDENCE_MAX_LEN, vectorized: bool = True) -> ExactConfidence:
    """
    Exact smoothed confidence of every class at ``x``, aggregated over the
    deduplicated output distribution. Lookup-table bases take a vectorised
    path unless ``vectorized`` is False.
    """
    mech = _check_deletion(mech)
    if len(x) > max_len:
        raise LengthCapError(f"Exact confidence needs |x| <= {max_len}, got {len(x)}")
    if vectorized and isinstance(base, LookupTableClassifier) and len(x) <= FAST_EXACT_MAX_LEN:
        row = _table_confidences(np.asarray([x.tokens], dtype=np.int64).reshape(1, len(x)),
                                 base, mech.p_del)[0]
        return ExactConfidence(tuple(float(v) for v in row))

    mu = np.zeros(base.num_classes)
    for z, prob in exact_deletion_distribution(x, mech, max_len).items():
        mu[base.query(z)] += prob
    return ExactConfidence(tuple(float(v) for v in mu))


def exact_confidence_direct(x: TokenSeq, base: BaseClassifier, mech: DeletionMechanism,
                            max_len: int = EXACT_CONFIDENCE_MAX_LEN) -> ExactConfidence:
    """Independent path: one base query per retained-index set."""
    mech = _check_deletion(mech)
    n = len(x)
    if n > max_len:
        raise LengthCapError(f"Exact confidence needs |x| <= {max_len}, got {n}")
    mu = [0.0] * base.num_classes
    for k in range(n + 1):
        weight = (1.0 - mech.p_del) ** k * mech.p_del ** (n - k)
        for idx in combinations(range(n), k):
            z = x.with_tokens(x.tokens[i] for i in idx)
            mu[base.query(z)] += weight
    return ExactConfidence(tuple(mu))


def exact_confidences(seqs: Iterable[Tuple[int, ...]], alphabet: Alphabet,
                      base: BaseClassifier, mech: DeletionMechanism) -> Dict[Tuple[int, ...], np.ndarray]:
    """Batch exact confidences, grouped by length for the vectorised path."""
    by_length: Dict[int, List[Tuple[int, ...]]] = {}
    for tokens in seqs:
        by_length.setdefault(len(tokens), []).append(tokens)

    out: Dict[Tuple[int, ...], np.ndarray] = {}
    for length, group in by_length.items():
        if isinstance(base, LookupTableClassifier) and length <= FAST_EXACT_MAX_LEN:
            matrix = np.asarray(group, dtype=np.int64).reshape(len(group), length)
            for tokens, row in zip(group, _table_confidences(matrix, base, mech.p_del)):
                out[tokens] = row
        else:
            for tokens in group:
                out[tokens] = np.asarray(exact_confidence(TokenSeq(tokens, alphabet), base, mech).probs)
    return out


def monte_carlo_confidence(x: TokenSeq, base: BaseClassifier, mech: DeletionMechanism,
                           samples: int, master_seed: int) -> np.ndarray:
    """Empirical confidences from seeded draws of the smoothing mechanism."""
    counts = tally_votes(x, base, mech, master_seed, 0, samples, base.num_classes)
    return counts / samples


@dataclass
class SoundnessReport:
    """Result of checking one certificate against the enumerated ball."""
    passed: bool
    prediction: int
    mu: Tuple[float, ...]
    nu: float
    radius: Radius
    checked_radius: int
    neighbors_checked: int
    flip_radius: Optional[int]
    counterexample: Optional[Tuple[int, ...]] = None


def _keeps_prediction(mu: np.ndarray, eta: np.ndarray, y: int) -> bool:
    margins = mu - eta
    return margins[y] >= margins.max() - SOUNDNESS_TOLERANCE


def verify_certificate_soundness(x: TokenSeq, base: BaseClassifier, mech: DeletionMechanism,
                                 eta: Sequence[float], ops: EditOpSet,
                                 frontier_extra: int = ORACLE_FRONTIER_EXTRA,
                                 cap: int = DEFAULT_NEIGHBORHOOD_CAP) -> SoundnessReport:
    """
    Compute the certificate from exact confidences, then check every input in
    {x' : d_ops(x', x) <= r*} keeps the smoothed prediction. The search runs
    ``frontier_extra`` radii further to locate where the prediction first flips.
    """
    mech = _check_deletion(mech)
    eta_arr = np.asarray(eta, dtype=float)
    mu = np.asarray(exact_confidence(x, base, mech).probs)
    y = smoothed_argmax(mu, eta_arr)
    nu = nu_threshold(eta_arr, y, base.num_classes)
    radius = certified_radius(min(1.0, float(mu[y])), nu, mech.p_del, ops)

    if radius == NOT_CERTIFIABLE:
        checked = -1
    elif radius == UNBOUNDED:
        checked = ORACLE_UNBOUNDED_CHECK
    else:
        checked = int(radius)
    search = max(checked, 0) + frontier_extra

    passed, flip, counterexample, seen = True, None, None, 0
    # d_ops(x', x) <= r  <=>  x' reachable from x with the dual ops
    for d, shell in enumerate(neighborhood_shells(x, search, ops.dual(), cap)):
        confidences = exact_confidences(shell, x.alphabet, base, mech)
        seen += len(shell)
        for tokens, mu_n in confidences.items():
            if not _keeps_prediction(mu_n, eta_arr, y):
                if flip is None:
                    flip = d
                if d <= checked:
                    passed, counterexample = False, tokens
                break
        if flip is not None:
            break

    if not passed:
        logger.error(f"Certificate violated at radius {flip} for x={x.tokens}, ops={ops}")
    return SoundnessReport(passed, y, tuple(float(v) for v in mu), nu, radius,
                           checked, seen, flip, counterexample)


@dataclass
class Theorem1Check:
    exact: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.exact >= self.bound - THEOREM1_TOLERANCE


def check_theorem1(x: TokenSeq, x_tilde: TokenSeq, base: BaseClassifier,
                   mech: DeletionMechanism) -> Theorem1Check:
    """Exact confidence at x~ of the class predicted at x, and its LCS-distance lower bound."""
    if len(x) > THEOREM1_MAX_LEN or len(x_tilde) > THEOREM1_MAX_LEN:
        raise LengthCapError(f"Both inputs must have length <= {THEOREM1_MAX_LEN}")
    mu_x = exact_confidence(x, base, mech)
    y = smoothed_argmax(mu_x.probs, [0.0] * len(mu_x))
    exact = exact_confidence(x_tilde, base, mech)[y]
    bound = theorem1_bound(mu_x[y], mech.p_del, len(x), len(x_tilde), lcs_distance(x, x_tilde))
    return Theorem1Check(exact, bound)


def _decompositions(r: int, ops: EditOpSet) -> Iterable[Tuple[int, int, int]]:
    """(n_sub, n_ins, n_del) summing to r, restricted to the allowed ops."""
    for n_sub in range(r + 1 if ops.substitution else 1):
        for n_ins in range(r - n_sub + 1 if ops.insertion else 1):
            n_del = r - n_sub - n_ins
            if n_del and not ops.deletion:
                continue
            yield n_sub, n_ins, n_del


def brute_force_radius(mu: float, nu: float, p_del: float, ops: EditOpSet,
                       max_radius: int = RADIUS_CHECK_MAX_RADIUS) -> Radius:
    """
    Largest r such that every op-count decomposition of every r' <= r keeps
    the confidence bound at or above ``nu``. Returns ``max_radius + 1`` if
    nothing up to ``max_radius`` fails.
    """
    for r in range(max_radius + 1):
        worst = min(rho_bound(mu, p_del, *counts) for counts in _decompositions(r, ops))
        if worst < nu - 1e-12:
            return NOT_CERTIFIABLE if r == 0 else r - 1
    return max_radius + 1


@dataclass
class SuiteResult:
    """Pass count of a verification suite."""
    name: str
    passed: int
    total: int
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def summary_line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.passed}/{self.total} {self.name}"


def check_closed_form_radii(mu_grid: Sequence[float] = RADIUS_CHECK_MU_GRID,
                            nu_grid: Sequence[float] = RADIUS_CHECK_NU_GRID,
                            p_grid: Sequence[float] = RADIUS_CHECK_P_GRID,
                            max_radius: int = RADIUS_CHECK_MAX_RADIUS) -> SuiteResult:
    """Closed-form radii versus brute-force minimisation, every op set."""
    result = SuiteResult("closed-form radii vs brute force", 0, 0)
    for mu in mu_grid:
        for nu in nu_grid:
            for p in p_grid:
                for ops in ALL_OP_SETS:
                    result.total += 1
                    closed = certified_radius(mu, nu, p, ops)
                    if closed == UNBOUNDED or (isinstance(closed, int) and closed > max_radius):
                        closed = max_radius + 1
                    brute = brute_force_radius(mu, nu, p, ops, max_radius)
                    if closed == brute:
                        result.passed += 1
                    else:
                        result.failures.append(f"mu={mu} nu={nu} p={p} ops={ops}: {closed} vs {brute}")
    return result


def check_dominance(max_len: int = DOMINANCE_MAX_LEN,
                    p_values: Sequence[float] = DOMINANCE_P_VALUES) -> SuiteResult:
    """
    Deletion smoothing's Hamming bound p^r dominates the ablation bound
    C(n - r, k) / C(n, k) for equal p, every n <= max_len and r <= n - k.
    Checked in exact rational arithmetic (mu cancels on both sides).
    """
    result = SuiteResult("deletion vs ablation dominance", 0, 0)
    for p in p_values:
        p_exact = Fraction(repr(p))
        mech = AblationMechanism(p)
        for n in range(1, max_len + 1):
            k = mech.retained_count(n)
            for r in range(n - k + 1):
                result.total += 1
                if p_exact ** r >= Fraction(math.comb(n - r, k), math.comb(n, k)):
                    result.passed += 1
                else:
                    result.failures.append(f"p={p} n={n} r={r}")
    return result


def _random_seq(rng: np.random.Generator, alphabet: Alphabet, length: int) -> TokenSeq:
    return TokenSeq(tuple(int(t) for t in rng.integers(0, alphabet.size, size=length)), alphabet)


def run_soundness_trials(trials: int = ORACLE_TRIALS, alphabet_size: int = ORACLE_ALPHABET,
                         length: int = ORACLE_LENGTH, p_del: float = ORACLE_P_DEL,
                         ops: EditOpSet = LEVENSHTEIN, seed: int = 0, num_classes: int = 2,
                         eta: Optional[Sequence[float]] = None,
                         frontier_extra: int = ORACLE_FRONTIER_EXTRA) -> Tuple[SuiteResult, List[SoundnessReport]]:
    """Seeded soundness trials over random lookup-table classifiers."""
    alphabet = Alphabet(alphabet_size)
    mech = DeletionMechanism(p_del)
    eta = tuple(eta) if eta is not None else (0.5,) * num_classes
    result = SuiteResult(f"certificate soundness ({ops})", 0, 0)
    reports: List[SoundnessReport] = []

    for trial in range(trials):
        rng = SeedSpec(seed, trial, STREAM_ORACLE).generator()
        x = _random_seq(rng, alphabet, length)
        base = LookupTableClassifier.random(alphabet, length, num_classes, rng)

        mu = exact_confidence(x, base, mech)
        y = smoothed_argmax(mu.probs, eta)
        radius = certified_radius(min(1.0, mu[y]), nu_threshold(eta, y, num_classes), p_del, ops)
        reach = ORACLE_UNBOUNDED_CHECK if radius == UNBOUNDED else (radius if isinstance(radius, int) else 0)
        growth = reach + frontier_extra if ops.deletion else 0
        base = base.extended(length + growth, rng)

        report = verify_certificate_soundness(x, base, mech, eta, ops, frontier_extra)
        reports.append(report)
        result.total += 1
        if report.passed:
            result.passed += 1
        else:
            result.failures.append(f"trial {trial}: x={x.tokens} radius={report.radius}")
        logger.debug(f"Trial {trial}: radius {report.radius}, flip {report.flip_radius}, "
                     f"{report.neighbors_checked} neighbours")
    return result, reports


def run_theorem1_trials(trials: int = THEOREM1_TRIALS, p_values: Sequence[float] = THEOREM1_P_VALUES,
                        max_len: int = THEOREM1_TRIAL_MAX_LEN, alphabet_size: int = 2,
                        seed: int = 0, num_classes: int = 2) -> SuiteResult:
    """Random pairs and random tables: exact confidence never falls below the LCS bound."""
    alphabet = Alphabet(alphabet_size)
    result = SuiteResult("LCS-distance confidence bound", 0, 0)
    for trial in range(trials):
        rng = SeedSpec(seed, trial, STREAM_THEOREM1).generator()
        mech = DeletionMechanism(p_values[trial % len(p_values)])
        base = LookupTableClassifier.random(alphabet, max_len, num_classes, rng)
        x = _random_seq(rng, alphabet, int(rng.integers(0, max_len + 1)))
        x_tilde = _random_seq(rng, alphabet, int(rng.integers(0, max_len + 1)))
        check = check_theorem1(x, x_tilde, base, mech)
        result.total += 1
        if check.holds:
            result.passed += 1
        else:
            result.failures.append(
                f"trial {trial}: x={x.tokens} x~={x_tilde.tokens} exact={check.exact} bound={check.bound}"
            )
    return result
