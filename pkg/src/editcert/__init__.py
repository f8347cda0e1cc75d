"""
EditCert: Edit-Distance Certified Robustness

Randomized smoothing for sequence classifiers with certificates against
bounded edit-distance perturbations (deletions, insertions, substitutions).

Components:
- seqcore.py: token sequences, edit op sets, distances, chunking, neighborhoods
- smoothing.py: deletion and ablation mechanisms with reproducible seeding
- certify.py: smoothed prediction, confidence bounds and certified radii
- classifiers.py: base classifier interface and the histogram model
- endpoints.py: subprocess and HTTP classifier endpoints
- oracle.py: exact confidences and exhaustive certificate checks
- metrics.py: run records and certified accuracy metrics
- synthetic.py: planted-motif corpus generator
- pipeline.py: command-line batch driver
"""

__version__ = "0.1.0"
__author__ = "EditCert Project"

from .certify import (
    ABSTAIN,
    NOT_CERTIFIABLE,
    UNBOUNDED,
    CertifiedVerdict,
    SmoothingConfig,
    certified_radius,
    certify,
    predict,
)
from .classifiers import BaseClassifier, HistogramModel
from .seqcore import (
    HAMMING,
    LCS_OPS,
    LEVENSHTEIN,
    Alphabet,
    EditOpSet,
    TokenSeq,
    edit_distance,
)
from .smoothing import AblationMechanism, DeletionMechanism, SeedSpec

__all__ = [
    'ABSTAIN',
    'NOT_CERTIFIABLE',
    'UNBOUNDED',
    'CertifiedVerdict',
    'SmoothingConfig',
    'certified_radius',
    'certify',
    'predict',
    'BaseClassifier',
    'HistogramModel',
    'HAMMING',
    'LCS_OPS',
    'LEVENSHTEIN',
    'Alphabet',
    'EditOpSet',
    'TokenSeq',
    'edit_distance',
    'AblationMechanism',
    'DeletionMechanism',
    'SeedSpec',
]
