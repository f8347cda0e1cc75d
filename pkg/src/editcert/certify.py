#!/usr/bin/env python3
"""
Certification

Certificate mathematics and the probabilistic certification procedure for
smoothed sequence classifiers:

- ``nu_threshold``: confidence the predicted class must provably keep
- ``certified_radius``: closed-form edit-distance radius for every op set
- ``rho_bound`` / ``theorem1_bound``: confidence lower bounds at a perturbed input
- ``abn_certified_radius``: Hamming radius of the ablation baseline
- ``binomial_lcb``: one-sided Clopper-Pearson lower confidence bound
- ``predict`` / ``certify``: the Monte Carlo prediction and certification
  pipeline (prediction sample, independent bound sample, abstention)

Author: EditCert Project
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from mpmath.ctx_mp import MPContext
from scipy.optimize import brentq
from scipy.special import betainc

from .classifiers import BaseClassifier
from .config import (
    ABN_EXACT_MAX_LEN,
    DEFAULT_ALPHA,
    DEFAULT_ETA,
    DEFAULT_N_BND,
    DEFAULT_N_PRED,
    DEFAULT_NUM_CLASSES,
    LCB_XTOL,
    RADIUS_FLOOR_GUARD,
    RADIUS_PRECISION_DPS,
    STREAM_CERTIFY,
    ConfigError,
)
from .seqcore import HAMMING, EditOpSet, TokenSeq
from .smoothing import AblationMechanism, DeletionMechanism, Mechanism, SeedSpec

logger = logging.getLogger(__name__)

ABSTAIN = -1


class RadiusFlag(Enum):
    """Non-integer certified radius outcomes."""
    UNBOUNDED = "unbounded"
    NOT_CERTIFIABLE = "not_certifiable"

    def __repr__(self) -> str:
        return self.name


UNBOUNDED = RadiusFlag.UNBOUNDED
NOT_CERTIFIABLE = RadiusFlag.NOT_CERTIFIABLE

Radius = Union[int, RadiusFlag]


class BaseClassifierError(RuntimeError):
    """A base-classifier query failed while certifying."""

    def __init__(self, sample_index: int, message: str):
        super().__init__(f"Base classifier failed on sample {sample_index}: {message}")
        self.sample_index = sample_index


# Dedicated context: mpmath.mp is process-global and not safe to re-precision
# from several threads.
_MP = MPContext()
_MP.dps = RADIUS_PRECISION_DPS


def nu_threshold(eta: Sequence[float], y: int, num_classes: int) -> float:
    """Confidence level class ``y`` must provably exceed for the prediction to hold."""
    if num_classes < 2 or len(eta) != num_classes:
        raise ValueError(f"Need one threshold per class for K >= 2, got {len(eta)} for K={num_classes}")
    if not 0 <= y < num_classes:
        raise ValueError(f"Invalid class index {y} for K={num_classes}")

    eta_y = float(eta[y])
    eta_min = min(float(e) for i, e in enumerate(eta) if i != y)
    if num_classes == 2:
        return (1.0 + eta_y - eta_min) / 2.0
    if eta_y >= eta_min:
        return 0.5 + eta_y - eta_min
    return 1.0 + eta_y - eta_min


def _floor_log_ratio(numerator: float, p: float) -> int:
    q = _MP.log(_MP.mpf(numerator)) / _MP.log(_MP.mpf(p))
    return int(_MP.floor(q + RADIUS_FLOOR_GUARD))


def certified_radius(mu: float, nu: float, p_del: float, ops: EditOpSet) -> Radius:
    """
    Largest edit-distance radius over which a prediction with confidence
    ``mu`` is guaranteed to keep confidence above ``nu``.

    Radii certify the region {x' : d_ops(x', x) <= r}.
    """
    if not 0.0 < p_del < 1.0:
        raise ValueError(f"p_del must lie in (0, 1), got {p_del}")
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    if nu < 0.0:
        raise ValueError(f"nu must be non-negative, got {nu}")
    if nu > 1.0 or mu < nu:
        return NOT_CERTIFIABLE

    mu_m, nu_m = _MP.mpf(mu), _MP.mpf(nu)
    if ops.substitution:
        arg = 1 + nu_m - mu_m
        if arg == 0:
            return UNBOUNDED
        return _floor_log_ratio(arg, p_del)
    if ops.deletion:
        if nu_m == 0:
            return UNBOUNDED
        return _floor_log_ratio(nu_m / mu_m, p_del)
    # insertions only
    if mu_m == 1:
        return UNBOUNDED
    return _floor_log_ratio((1 - mu_m) / (1 - nu_m), p_del)


def radius_upper_bound(nu: float, p_del: float, ops: EditOpSet) -> Radius:
    """Radius reachable with perfect confidence (mu = 1)."""
    return certified_radius(1.0, nu, p_del, ops)


def rho_bound(mu: float, p_del: float, n_sub: int, n_ins: int, n_del: int) -> float:
    """Confidence lower bound after the given op counts (may be negative)."""
    return p_del ** (n_del - n_ins) * (mu - 1.0 + p_del ** (n_sub + n_ins))


def theorem1_bound(mu: float, p_del: float, len_x: int, len_xt: int, d_lcs: int) -> float:
    """Confidence lower bound at x~ in terms of the LCS distance to x."""
    if d_lcs < abs(len_x - len_xt):
        raise ValueError(f"LCS distance {d_lcs} below length difference {abs(len_x - len_xt)}")
    twice = d_lcs + len_x - len_xt
    if twice % 2:
        raise ValueError("d_lcs + |x| - |x~| must be even")
    return p_del ** (len_xt - len_x) * (mu - 1.0 + p_del ** (twice // 2))


def _ablation_ratio_ok(n: int, k: int, r: int, target: float) -> bool:
    """C(n-r, k) / C(n, k) >= target (within the floor guard)."""
    if n <= ABN_EXACT_MAX_LEN:
        ratio = Fraction(math.comb(n - r, k), math.comb(n, k))
        return ratio >= Fraction(target) - Fraction(1, 10**12)
    log_ratio = (math.lgamma(n - r + 1) - math.lgamma(n - r - k + 1)
                 - math.lgamma(n + 1) + math.lgamma(n - k + 1))
    return math.exp(log_ratio) >= target - RADIUS_FLOOR_GUARD


def abn_certified_radius(mu: float, nu: float, p_ab: float, length: int) -> Radius:
    """
    Hamming radius certified by the ablation mechanism: the largest r in
    [0, length - k] with mu - 1 + C(length - r, k) / C(length, k) >= nu.
    """
    if length < 1:
        raise ValueError("length must be positive")
    if nu > 1.0 or mu < nu - RADIUS_FLOOR_GUARD:
        return NOT_CERTIFIABLE
    k = AblationMechanism(p_ab).retained_count(length)
    target = 1.0 + nu - mu

    lo, hi = 0, length - k
    if not _ablation_ratio_ok(length, k, lo, target):
        return NOT_CERTIFIABLE
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _ablation_ratio_ok(length, k, mid, target):
            lo = mid
        else:
            hi = mid - 1
    return lo


def binomial_lcb(k: int, n: int, alpha: float) -> float:
    """One-sided Clopper-Pearson lower bound on p given k successes in n trials."""
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, n], got k={k}, n={n}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if k == 0:
        return 0.0
    if k == n:
        return alpha ** (1.0 / n)
    # Pr[Bin(n, p) >= k] = I_p(k, n - k + 1)
    return float(brentq(lambda p: betainc(k, n - k + 1, p) - alpha, 0.0, 1.0, xtol=LCB_XTOL))


@dataclass
class SmoothingConfig:
    """Parameters of one certification run."""
    mechanism: Mechanism = field(default_factory=lambda: DeletionMechanism(0.995))
    n_pred: int = DEFAULT_N_PRED
    n_bnd: int = DEFAULT_N_BND
    alpha: float = DEFAULT_ALPHA
    eta: Tuple[float, ...] = (DEFAULT_ETA,) * DEFAULT_NUM_CLASSES
    num_classes: int = DEFAULT_NUM_CLASSES

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be at least 2, got {self.num_classes}")
        if len(self.eta) != self.num_classes:
            raise ConfigError(f"Expected {self.num_classes} thresholds, got {len(self.eta)}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.n_pred < 1 or self.n_bnd < 1:
            raise ConfigError("n_pred and n_bnd must be positive")
        if not isinstance(self.mechanism, (DeletionMechanism, AblationMechanism)):
            raise ConfigError(f"Unsupported mechanism: {self.mechanism!r}")


@dataclass
class CertifiedVerdict:
    """Outcome of certifying one input."""
    prediction: int
    mu_hat: Tuple[float, ...]
    mu_lcb: float
    nu: Optional[float]
    radius: Dict[EditOpSet, Radius]
    master_seed: int
    n_pred: int
    n_bnd: int
    length: int
    eta: Tuple[float, ...] = ()

    @property
    def abstain(self) -> bool:
        return self.prediction == ABSTAIN

    @property
    def mu_hat_predicted(self) -> Optional[float]:
        """Empirical confidence of the class argmax(mu_hat - eta) picked before abstaining."""
        if not self.abstain:
            return self.mu_hat[self.prediction]
        eta = self.eta or (0.0,) * len(self.mu_hat)
        return self.mu_hat[smoothed_argmax(self.mu_hat, eta)]


def smoothed_argmax(mu: Sequence[float], eta: Sequence[float]) -> int:
    """argmax_y (mu_y - eta_y); ties go to the lowest class index."""
    margins = np.asarray(mu, dtype=float) - np.asarray(eta, dtype=float)
    return int(np.argmax(margins))


def _query_one(x: TokenSeq, base: BaseClassifier, mech: Mechanism,
               master_seed: int, sample_index: int, num_classes: int) -> int:
    z = mech.sample(x, SeedSpec(master_seed, sample_index, STREAM_CERTIFY))
    try:
        y = base.query(z)
    except Exception as e:
        logger.debug(f"Query failed at sample {sample_index}: {e}")
        raise BaseClassifierError(sample_index, str(e)) from e
    if not isinstance(y, (int, np.integer)) or not 0 <= y < num_classes:
        raise BaseClassifierError(sample_index, f"class {y!r} outside [0, {num_classes})")
    return int(y)


def tally_votes(x: TokenSeq, base: BaseClassifier, mech: Mechanism, master_seed: int,
                start: int, count: int, num_classes: int) -> np.ndarray:
    """Vote counts over sample indices [start, start + count)."""
    indices = range(start, start + count)
    workers = max(1, int(getattr(base, "max_concurrency", 1)))

    if workers == 1:
        labels = [_query_one(x, base, mech, master_seed, i, num_classes) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            labels = list(pool.map(
                lambda i: _query_one(x, base, mech, master_seed, i, num_classes), indices
            ))
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)


def _check_input(x: TokenSeq, base: BaseClassifier, cfg: SmoothingConfig) -> None:
    cfg.validate()
    base_classes = getattr(base, "num_classes", cfg.num_classes)
    if base_classes != cfg.num_classes:
        raise ConfigError(f"Base classifier has {base_classes} classes, config expects {cfg.num_classes}")
    if isinstance(cfg.mechanism, AblationMechanism) and len(x) == 0:
        raise ValueError("Ablation smoothing cannot certify the empty sequence")


def predict(x: TokenSeq, base: BaseClassifier, cfg: SmoothingConfig,
            master_seed: int) -> Tuple[int, np.ndarray]:
    """Smoothed prediction from the prediction sample; returns (class, vote counts)."""
    _check_input(x, base, cfg)
    counts = tally_votes(x, base, cfg.mechanism, master_seed, 0, cfg.n_pred, cfg.num_classes)
    return smoothed_argmax(counts / cfg.n_pred, cfg.eta), counts


def certify(x: TokenSeq, base: BaseClassifier, cfg: SmoothingConfig,
            ops_list: List[EditOpSet], master_seed: int) -> CertifiedVerdict:
    """
    Certify ``x``: predict from ``n_pred`` draws, bound the predicted class's
    confidence from ``n_bnd`` fresh draws, abstain below its threshold and
    otherwise compute one radius per requested op set.
    """
    y_hat, pred_counts = predict(x, base, cfg, master_seed)
    mu_hat = tuple(float(c) / cfg.n_pred for c in pred_counts)

    bnd_counts = tally_votes(x, base, cfg.mechanism, master_seed,
                             cfg.n_pred, cfg.n_bnd, cfg.num_classes)
    mu_lcb = binomial_lcb(int(bnd_counts[y_hat]), cfg.n_bnd, cfg.alpha)

    if mu_lcb < cfg.eta[y_hat]:
        logger.debug(f"Abstaining: lcb {mu_lcb:.6f} < eta {cfg.eta[y_hat]}")
        return CertifiedVerdict(
            prediction=ABSTAIN, mu_hat=mu_hat, mu_lcb=mu_lcb, nu=None,
            radius={ops: NOT_CERTIFIABLE for ops in ops_list},
            master_seed=master_seed, n_pred=cfg.n_pred, n_bnd=cfg.n_bnd, length=len(x),
            eta=tuple(cfg.eta),
        )

    nu = nu_threshold(cfg.eta, y_hat, cfg.num_classes)
    mech = cfg.mechanism
    radius: Dict[EditOpSet, Radius] = {}
    for ops in ops_list:
        if isinstance(mech, DeletionMechanism):
            radius[ops] = certified_radius(mu_lcb, nu, mech.p_del, ops)
        elif ops == HAMMING:
            radius[ops] = abn_certified_radius(mu_lcb, nu, mech.p_ab, len(x))
        else:
            radius[ops] = NOT_CERTIFIABLE

    return CertifiedVerdict(
        prediction=y_hat, mu_hat=mu_hat, mu_lcb=mu_lcb, nu=nu, radius=radius,
        master_seed=master_seed, n_pred=cfg.n_pred, n_bnd=cfg.n_bnd, length=len(x),
        eta=tuple(cfg.eta),
    )
