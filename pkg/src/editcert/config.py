#!/usr/bin/env python3
"""
EditCert Configuration

Configuration settings and constants for the edit-distance certification
pipeline: smoothing defaults, enumeration caps, endpoint settings, training
defaults and file format headers.

Author: EditCert Project
"""

from pathlib import Path
from typing import List

# Smoothing defaults
DEFAULT_P_DEL = 0.995
DEFAULT_P_AB = 0.995
DEFAULT_N_PRED = 1000
DEFAULT_N_BND = 4000
DEFAULT_ALPHA = 0.05
DEFAULT_ETA = 0.5  # per class
DEFAULT_NUM_CLASSES = 2
DEFAULT_OPS = "del,ins,sub"

# Floors of certified radii are taken after adding this guard
RADIUS_FLOOR_GUARD = 1e-12
# Working precision (decimal digits) for radius logarithms
RADIUS_PRECISION_DPS = 40

# Clopper-Pearson root finding tolerance
LCB_XTOL = 1e-12

# Exact binomial ratios switch to log space above this length
ABN_EXACT_MAX_LEN = 10_000

# Enumeration caps
DEFAULT_NEIGHBORHOOD_CAP = 10**7
EXACT_DELETION_MAX_LEN = 20
EXACT_ABLATION_MAX_LEN = 16
EXACT_CONFIDENCE_MAX_LEN = 20
THEOREM1_MAX_LEN = 14

# Oracle suite defaults
ORACLE_TRIALS = 200
ORACLE_ALPHABET = 3
ORACLE_LENGTH = 5
ORACLE_P_DEL = 0.6
ORACLE_FRONTIER_EXTRA = 2
THEOREM1_TRIALS = 1000
THEOREM1_P_VALUES = (0.3, 0.5, 0.8)
THEOREM1_TRIAL_MAX_LEN = 8
SOUNDNESS_TOLERANCE = 1e-12
THEOREM1_TOLERANCE = 1e-10
# Vectorised exact confidences materialise a 2^L x L mask table
FAST_EXACT_MAX_LEN = 14
# Radius actually checked when a certificate is unbounded
ORACLE_UNBOUNDED_CHECK = 3
RADIUS_CHECK_MAX_RADIUS = 12
RADIUS_CHECK_MU_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0)
RADIUS_CHECK_NU_GRID = (0.5, 0.6, 0.75, 0.9, 0.95)
RADIUS_CHECK_P_GRID = (0.5, 0.7, 0.9, 0.95, 0.99, 0.999)
DOMINANCE_MAX_LEN = 30
DOMINANCE_P_VALUES = (0.5, 0.9, 0.95, 0.99)

# Training defaults
DEFAULT_EPOCHS = 30
DEFAULT_LEARNING_RATE = 2.0
DEFAULT_BATCH_SIZE = 32
DEFAULT_L2 = 0.0
DEFAULT_MIN_PRESERVED = 0
DEFAULT_TRAIN_P_DEL = 0.9
# log1p(length) is divided by this so the length feature stays near [0, 1]
LOG_LENGTH_SCALE = 14.0

# Calibration defaults
DEFAULT_TARGET_FPR = 0.005
DEFAULT_CALIBRATION_SAMPLES = 200

# Random stream tags (Philox key word 1)
STREAM_CERTIFY = 0
STREAM_TRAIN = 1
STREAM_TRAIN_ORDER = 2
STREAM_CALIBRATE = 3
STREAM_ROW_SEED = 4
STREAM_ORACLE = 5
STREAM_GEN = 6
STREAM_THEOREM1 = 7

# External endpoint settings
ENDPOINT_RETRIES = 2
ENDPOINT_TIMEOUT = 30.0  # seconds
ENDPOINT_HANDSHAKE_WAIT = 0.5  # seconds to wait for a CAPS line
ENDPOINT_BACKOFF = 0.2  # seconds, multiplied by the attempt number
HTTP_PREDICT_PATH = "/predict"

# Synthetic corpus defaults
GEN_LENGTH = 256
GEN_MOTIF = (7, 13, 42, 99)
GEN_MOTIF_COUNT = 20
GEN_N_TRAIN = 200
GEN_N_VAL = 200
GEN_N_TEST = 100

# Metrics
DEFAULT_RADIUS_GRID: List[int] = [0, 1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024]

# File format headers
MODEL_HEADER = "editcert-histmodel v1"
VOCAB_HEADER = "editcert-chunkvocab v1"
VOCAB_SUFFIX = ".chunks"

# Default paths
DEFAULT_RECORDS_FILE = Path("runs/records.jsonl")
DEFAULT_MODEL_FILE = Path("runs/model.txt")

# Batch driver
PROGRESS_EVERY = 50

# Logging configuration
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_VERIFY = 3


class ConfigError(ValueError):
    """Invalid smoothing, training or run configuration."""

