#!/usr/bin/env python3
"""
Synthetic Corpus Generator

Seeded planted-motif byte corpora for exercising the full pipeline:
class-1 files embed a fixed token motif a number of times at random
non-overlapping offsets, class-0 files never contain any motif token.

Writes ``train/``, ``val/`` and ``test/`` splits of raw byte files plus one
manifest CSV per split (``path,label[,chunks]``, paths relative to the
output directory). Identical arguments give byte-identical corpora.

Author: EditCert Project
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .config import (
    GEN_LENGTH,
    GEN_MOTIF,
    GEN_MOTIF_COUNT,
    GEN_N_TEST,
    GEN_N_TRAIN,
    GEN_N_VAL,
    STREAM_GEN,
)
from .seqcore import ChunkMap, write_chunk_map
from .smoothing import SeedSpec

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MAX_CHUNK = 8


@dataclass
class CorpusSpec:
    """Shape of a planted-motif corpus."""
    n_train: int = GEN_N_TRAIN
    n_val: int = GEN_N_VAL
    n_test: int = GEN_N_TEST
    length: int = GEN_LENGTH
    motif: Sequence[int] = GEN_MOTIF
    motif_count: int = GEN_MOTIF_COUNT
    with_chunks: bool = False

    def __post_init__(self):
        if self.motif_count * len(self.motif) > self.length:
            raise ValueError("Motif occurrences do not fit in the sequence length")
        if any(not 0 <= t < 256 for t in self.motif):
            raise ValueError("Motif tokens must be bytes")

    def split_sizes(self) -> Dict[str, int]:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}


def planted_motif_sequence(rng: np.random.Generator, label: int, spec: CorpusSpec) -> np.ndarray:
    """One byte sequence of the planted-motif family."""
    motif = np.asarray(spec.motif, dtype=np.uint8)
    background = np.setdiff1d(np.arange(256, dtype=np.uint8), motif)
    seq = rng.choice(background, size=spec.length)
    if label == 1:
        m = len(motif)
        slack = spec.length - spec.motif_count * m
        # sorted draws from [0, slack] spaced by the motif length never overlap
        starts = np.sort(rng.integers(0, slack + 1, size=spec.motif_count)) + np.arange(spec.motif_count) * m
        for start in starts:
            seq[start:start + m] = motif
    return seq.astype(np.uint8)


def random_chunk_map(rng: np.random.Generator, length: int) -> ChunkMap:
    """Boundaries with chunk sizes uniform in [1, MAX_CHUNK]."""
    offsets: List[int] = [0]
    while True:
        nxt = offsets[-1] + int(rng.integers(1, MAX_CHUNK + 1))
        if nxt >= length:
            break
        offsets.append(nxt)
    return ChunkMap(tuple(offsets))


def generate_corpus(output_dir: Path, seed: int, spec: Optional[CorpusSpec] = None) -> Dict[str, Path]:
    """Write the corpus; returns the manifest path of each split."""
    spec = spec or CorpusSpec()
    output_dir = Path(output_dir)
    manifests: Dict[str, Path] = {}
    file_index = 0

    for split, count in spec.split_sizes().items():
        split_dir = output_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        for i in range(count):
            rng = SeedSpec(seed, file_index, STREAM_GEN).generator()
            file_index += 1
            label = i % 2
            data = planted_motif_sequence(rng, label, spec)

            rel = Path(split) / f"{split}_{i:05d}.bin"
            (output_dir / rel).write_bytes(data.tobytes())
            row = {"path": rel.as_posix(), "label": label}
            if spec.with_chunks:
                chunk_rel = rel.with_suffix(".map")
                write_chunk_map(random_chunk_map(rng, spec.length), output_dir / chunk_rel)
                row["chunks"] = chunk_rel.as_posix()
            rows.append(row)

        manifest = output_dir / f"{split}.csv"
        columns = ["path", "label", "chunks"] if spec.with_chunks else ["path", "label"]
        pd.DataFrame(rows, columns=columns).to_csv(manifest, index=False)
        manifests[split] = manifest
        logger.info(f"Wrote {count} {split} files and manifest {manifest}")

    return manifests
