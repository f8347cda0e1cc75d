#!/usr/bin/env python3
"""
EditCert Command-Line Pipeline

Batch driver and command-line front end for edit-distance certification:
corpus generation, noise-injected training, threshold calibration, batch
certification, metrics and oracle verification.

Usage:
    python -m src.editcert.pipeline gen --out data/synth --seed 7
    python -m src.editcert.pipeline train --manifest data/synth/train.csv --model-out runs/model.txt
    python -m src.editcert.pipeline calibrate --manifest data/synth/val.csv --model runs/model.txt --p-del 0.9
    python -m src.editcert.pipeline certify --manifest data/synth/test.csv --model runs/model.txt --p-del 0.9
    python -m src.editcert.pipeline metrics --records runs/records.jsonl --manifest data/synth/test.csv
    python -m src.editcert.pipeline verify

Author: EditCert Project
"""

import argparse
import asyncio
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import aiofiles
import numpy as np
import pandas as pd
from dotenv import dotenv_values

from .certify import SmoothingConfig, certify
from .classifiers import (
    BaseClassifier,
    ConstantClassifier,
    TrainConfig,
    calibrate_threshold,
    empirical_fpr,
    load_model,
    save_model,
    smoothed_effective_scores,
    train_histogram,
)
from .config import (
    DEFAULT_ALPHA,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CALIBRATION_SAMPLES,
    DEFAULT_EPOCHS,
    DEFAULT_ETA,
    DEFAULT_L2,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MIN_PRESERVED,
    DEFAULT_MODEL_FILE,
    DEFAULT_N_BND,
    DEFAULT_N_PRED,
    DEFAULT_NUM_CLASSES,
    DEFAULT_OPS,
    DEFAULT_P_AB,
    DEFAULT_P_DEL,
    DEFAULT_RADIUS_GRID,
    DEFAULT_RECORDS_FILE,
    DEFAULT_TARGET_FPR,
    DEFAULT_TRAIN_P_DEL,
    ENDPOINT_RETRIES,
    ENDPOINT_TIMEOUT,
    EXIT_INPUT,
    EXIT_OK,
    EXIT_USAGE,
    EXIT_VERIFY,
    GEN_LENGTH,
    GEN_MOTIF_COUNT,
    GEN_N_TEST,
    GEN_N_TRAIN,
    GEN_N_VAL,
    LOG_FORMAT,
    ORACLE_ALPHABET,
    ORACLE_LENGTH,
    ORACLE_P_DEL,
    ORACLE_TRIALS,
    PROGRESS_EVERY,
    STREAM_ROW_SEED,
    THEOREM1_TRIALS,
    VOCAB_SUFFIX,
    ConfigError,
)
from .endpoints import EndpointError, make_endpoint
from .metrics import (
    RunRecord,
    compute_metrics,
    error_record,
    format_report,
    read_records,
    record_from_verdict,
    write_metrics_csv,
)
from .oracle import (
    check_closed_form_radii,
    check_dominance,
    run_soundness_trials,
    run_theorem1_trials,
)
from .seqcore import (
    BYTE_ALPHABET,
    ChunkVocabulary,
    EditOpSet,
    TokenSeq,
    apply_chunking,
    read_chunk_map,
)
from .smoothing import derive_seed, mechanism_from_name
from .synthetic import CorpusSpec, generate_corpus

logger = logging.getLogger(__name__)


class ManifestError(ValueError):
    """Manifest is missing, malformed or inconsistent."""


@dataclass
class ManifestRow:
    """One manifest entry; ``path`` is kept exactly as written in the manifest."""
    index: int
    path: str
    file: Path
    label: int
    chunks: Optional[Path] = None


def load_manifest(manifest_path: Path, num_classes: int = DEFAULT_NUM_CLASSES) -> List[ManifestRow]:
    """Read a ``path,label[,chunks]`` CSV; relative paths resolve against its directory."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"Manifest not found: {manifest_path}")
    df = pd.read_csv(manifest_path, dtype=str, keep_default_na=False)
    if not {"path", "label"} <= set(df.columns):
        raise ManifestError(f"Manifest {manifest_path} needs columns path,label (got {list(df.columns)})")

    base_dir = manifest_path.parent
    rows = []
    for i, rec in enumerate(df.to_dict("records")):
        try:
            label = int(rec["label"])
        except ValueError:
            raise ManifestError(f"Row {i + 1}: label {rec['label']!r} is not an integer")
        if not 0 <= label < num_classes:
            raise ManifestError(f"Row {i + 1}: label {label} outside [0, {num_classes})")
        chunks = rec.get("chunks") or None
        rows.append(ManifestRow(
            index=i,
            path=rec["path"],
            file=base_dir / rec["path"],
            label=label,
            chunks=base_dir / chunks if chunks else None,
        ))
    return rows


def load_sequence(row: ManifestRow, vocabulary: Optional[ChunkVocabulary]) -> TokenSeq:
    """Raw bytes, or chunk tokens when the row has a chunk-map sidecar."""
    data = TokenSeq.from_bytes(row.file.read_bytes())
    if row.chunks is None:
        return data
    if vocabulary is None:
        raise ManifestError("Chunked rows need a chunk vocabulary")
    return apply_chunking(data, read_chunk_map(row.chunks), vocabulary)


def load_dataset(rows: Sequence[ManifestRow],
                 vocabulary: Optional[ChunkVocabulary]) -> List[Tuple[TokenSeq, int]]:
    """Load every row (errors propagate); chunked sequences share the final vocabulary alphabet."""
    chunked = {row.chunks is not None for row in rows}
    if len(chunked) > 1:
        raise ManifestError("Manifest mixes raw and chunked rows")
    dataset = [(load_sequence(row, vocabulary), row.label) for row in rows]
    if chunked == {True}:
        dataset = [(TokenSeq(x.tokens, vocabulary.alphabet), y) for x, y in dataset]
    return dataset


def vocabulary_path(model_path: Path) -> Path:
    return Path(str(model_path) + VOCAB_SUFFIX)


def parse_eta(text: Optional[str], num_classes: int) -> Tuple[float, ...]:
    """One threshold for every class, or a single value applied to all."""
    if text is None or str(text).strip() == "":
        return (DEFAULT_ETA,) * num_classes
    values = tuple(float(v) for v in str(text).split(",") if v.strip())
    if len(values) == 1:
        return values * num_classes
    if len(values) != num_classes:
        raise ConfigError(f"--eta needs 1 or {num_classes} values, got {len(values)}")
    return values


class EditCertPipeline:
    """
    Batch certification of a manifest: per-row jobs on a bounded worker
    pool, records streamed to a JSON-lines file and rewritten in manifest
    order at the end so any thread count gives identical output.
    """

    def __init__(self, base: BaseClassifier, cfg: SmoothingConfig, ops_list: List[EditOpSet],
                 master_seed: int, threads: int = 1, timing: bool = False):
        cfg.validate()
        if threads < 1:
            raise ConfigError("threads must be positive")
        if not ops_list:
            raise ConfigError("At least one edit op set is required")
        self.base = base
        self.cfg = cfg
        self.ops_list = ops_list
        self.master_seed = master_seed
        self.threads = threads
        self.timing = timing

        self.stats = {
            'total_rows': 0,
            'certified_rows': 0,
            'abstained_rows': 0,
            'not_certifiable_rows': 0,
            'failed_rows': 0,
            'failed_paths': [],
            'elapsed_s': 0.0,
        }

    def certify_row(self, row: ManifestRow, x: Optional[TokenSeq], read_error: Optional[str]) -> RunRecord:
        """Certify one row; failures become error records."""
        seed = derive_seed(self.master_seed, row.index, STREAM_ROW_SEED)
        if read_error is not None:
            return error_record(row.path, self.ops_list, seed, read_error)

        start = time.perf_counter()
        try:
            verdict = certify(x, self.base, self.cfg, self.ops_list, seed)
        except ConfigError:
            raise
        except Exception as e:
            logger.warning(f"Certification failed for {row.path}: {e}")
            return error_record(row.path, self.ops_list, seed, str(e))
        record = record_from_verdict(row.path, verdict, seed)
        if self.timing:
            record.elapsed_s = round(time.perf_counter() - start, 6)
        return record

    def _update_stats(self, record: RunRecord) -> None:
        self.stats['total_rows'] += 1
        if record.error is not None:
            self.stats['failed_rows'] += 1
            self.stats['failed_paths'].append(record.path)
        elif record.abstain:
            self.stats['abstained_rows'] += 1
        elif all(v is None for v in record.radius.values()):
            self.stats['not_certifiable_rows'] += 1
        else:
            self.stats['certified_rows'] += 1

    async def certify_manifest(self, rows: List[ManifestRow],
                               sequences: Dict[int, Tuple[Optional[TokenSeq], Optional[str]]],
                               out_path: Path) -> List[RunRecord]:
        """Certify every row, streaming records to ``out_path``."""
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        semaphore = asyncio.Semaphore(self.threads)
        write_lock = asyncio.Lock()
        results: Dict[int, RunRecord] = {}
        started = time.perf_counter()

        async with aiofiles.open(out_path, 'w') as f:

            async def certify_with_semaphore(row: ManifestRow):
                async with semaphore:
                    x, read_error = sequences[row.index]
                    record = await asyncio.to_thread(self.certify_row, row, x, read_error)
                async with write_lock:
                    await f.write(record.to_json_line())
                    await f.flush()
                    results[row.index] = record
                    self._update_stats(record)
                    if len(results) % PROGRESS_EVERY == 0:
                        logger.info(f"Certified {len(results)}/{len(rows)} rows")

            await asyncio.gather(*(certify_with_semaphore(row) for row in rows))

        # canonical manifest order
        ordered = [results[row.index] for row in rows]
        async with aiofiles.open(out_path, 'w') as f:
            for record in ordered:
                await f.write(record.to_json_line())

        self.stats['elapsed_s'] = time.perf_counter() - started
        logger.info(f"Wrote {len(ordered)} records to {out_path}")
        return ordered

    def print_processing_statistics(self) -> None:
        """Print run statistics and failed rows."""
        print("\n" + "=" * 60)
        print("🔏 Edit-Distance Certification Report")
        print("=" * 60)

        print(f"\n📊 Summary Statistics:")
        print(f"   Total rows:                    {self.stats['total_rows']:>6}")
        print(f"   Certified predictions:         {self.stats['certified_rows']:>6}")
        print(f"   Predictions without radius:    {self.stats['not_certifiable_rows']:>6}")
        print(f"   Abstentions:                   {self.stats['abstained_rows']:>6}")
        print(f"   Failed rows:                   {self.stats['failed_rows']:>6}")
        print(f"   Elapsed:                       {self.stats['elapsed_s']:>6.1f}s")

        if self.stats['total_rows'] > 0:
            rate = self.stats['certified_rows'] / self.stats['total_rows'] * 100
            print(f"\n📈 Certified rate:                {rate:>6.1f}%")

        if self.stats['failed_paths']:
            print(f"\n❌ Failed Rows ({len(self.stats['failed_paths'])}):")
            for i, path in enumerate(self.stats['failed_paths'][:10], 1):
                print(f"   {i:>2}. {path}")
            if len(self.stats['failed_paths']) > 10:
                print(f"   ... and {len(self.stats['failed_paths']) - 10} more")
        print("=" * 60)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    spec = CorpusSpec(
        n_train=args.n_train, n_val=args.n_val, n_test=args.n_test,
        length=args.length, motif_count=args.motif_count, with_chunks=args.chunks,
    )
    manifests = generate_corpus(Path(args.out), args.seed, spec)
    for split, path in manifests.items():
        print(f"{split}: {path}")
    return EXIT_OK


def _training_mechanism(args: argparse.Namespace):
    if args.mechanism == "none":
        return None
    p = args.p_ab if args.mechanism == "abn" else args.p_del
    return mechanism_from_name(args.mechanism, p)


def cmd_train(args: argparse.Namespace) -> int:
    rows = load_manifest(Path(args.manifest))
    vocabulary = ChunkVocabulary()
    dataset = load_dataset(rows, vocabulary)
    cfg = TrainConfig(
        epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size, l2=args.l2,
        mechanism=_training_mechanism(args), min_preserved=args.min_preserved,
    )
    alphabet = vocabulary.alphabet if len(vocabulary) else BYTE_ALPHABET
    model = train_histogram(dataset, cfg, args.seed, alphabet)

    model_path = Path(args.model_out)
    save_model(model, model_path)
    if len(vocabulary):
        vocabulary.save(vocabulary_path(model_path))

    accuracy = float(np.mean([model.query(x) == y for x, y in dataset])) if dataset else 0.0
    print(f"Trained model written to {model_path} (training accuracy {accuracy:.4f})")
    return EXIT_OK


def _load_model_and_vocabulary(model_path: Path):
    model = load_model(model_path)
    vocab_file = vocabulary_path(model_path)
    vocabulary = ChunkVocabulary.load(vocab_file) if vocab_file.exists() else ChunkVocabulary()
    return model, vocabulary


def cmd_calibrate(args: argparse.Namespace) -> int:
    model_path = Path(args.model)
    model, vocabulary = _load_model_and_vocabulary(model_path)
    rows = load_manifest(Path(args.manifest))
    validation = load_dataset(rows, vocabulary)
    eta = parse_eta(args.eta, 2)

    mechanism = None
    if args.mode == "smoothed":
        p = args.p_ab if args.mechanism == "abn" else args.p_del
        mechanism = mechanism_from_name(args.mechanism, p)
    model.threshold = calibrate_threshold(
        model, validation, args.target_fpr, mechanism, args.samples, args.seed, eta,
    )

    benign = [x for x, y in validation if y == 0]
    if mechanism is None:
        scores = model.decision_scores(benign)
    else:
        scores = smoothed_effective_scores(model, benign, mechanism, args.samples, args.seed, eta)
    fpr = empirical_fpr(scores, model.threshold)

    save_model(model, Path(args.model_out) if args.model_out else model_path)
    print(f"Threshold: {model.threshold!r}")
    print(f"Empirical FPR: {fpr:.6f} on {len(benign)} benign examples (target {args.target_fpr})")
    return EXIT_OK


def _build_base(args: argparse.Namespace) -> Tuple[BaseClassifier, ChunkVocabulary]:
    if args.model:
        model, vocabulary = _load_model_and_vocabulary(Path(args.model))
        return model, vocabulary
    if args.endpoint:
        endpoint = make_endpoint(args.endpoint, args.num_classes, args.endpoint_retries,
                                 args.endpoint_timeout, args.endpoint_concurrency)
        return endpoint, ChunkVocabulary()
    if args.constant is None:
        raise ConfigError("One of --model, --endpoint or --constant is required")
    return ConstantClassifier(args.constant, args.num_classes), ChunkVocabulary()


def _read_all(rows: List[ManifestRow], vocabulary: ChunkVocabulary) -> Dict[int, Tuple[Optional[TokenSeq], Optional[str]]]:
    """Read every row up front, in manifest order, so chunk ids do not depend on scheduling."""
    loaded: Dict[int, Tuple[Optional[TokenSeq], Optional[str]]] = {}
    for row in rows:
        try:
            loaded[row.index] = (load_sequence(row, vocabulary), None)
        except (OSError, ValueError) as e:
            logger.warning(f"Cannot read {row.path}: {e}")
            loaded[row.index] = (None, f"unreadable input: {e}")

    # chunked rows read early carry a smaller alphabet than the final vocabulary
    for row in rows:
        x, err = loaded[row.index]
        if x is not None and row.chunks is not None:
            loaded[row.index] = (TokenSeq(x.tokens, vocabulary.alphabet), err)
    return loaded


def cmd_certify(args: argparse.Namespace) -> int:
    p = args.p_ab if args.mechanism == "abn" else args.p_del
    try:
        mechanism = mechanism_from_name(args.mechanism, p)
    except ValueError as e:
        raise ConfigError(str(e))
    cfg = SmoothingConfig(
        mechanism=mechanism, n_pred=args.n_pred, n_bnd=args.n_bnd, alpha=args.alpha,
        eta=parse_eta(args.eta, args.num_classes), num_classes=args.num_classes,
    )
    try:
        ops_list = EditOpSet.parse_list(args.ops)
    except ValueError as e:
        raise ConfigError(str(e))

    rows = load_manifest(Path(args.manifest), args.num_classes)
    base, vocabulary = _build_base(args)
    try:
        pipeline = EditCertPipeline(base, cfg, ops_list, args.seed, args.threads, args.timing)
        sequences = _read_all(rows, vocabulary)
        asyncio.run(pipeline.certify_manifest(rows, sequences, Path(args.out)))
    finally:
        close = getattr(base, "close", None)
        if close is not None:
            close()

    if not args.quiet:
        pipeline.print_processing_statistics()
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    records = read_records(Path(args.records))
    rows = load_manifest(Path(args.manifest), args.num_classes)
    labels = {row.path: row.label for row in rows}
    grid = [int(v) for v in str(args.radius_grid).split(",") if v.strip()]
    eta = parse_eta(args.eta, args.num_classes) if args.p_del is not None else None

    report = compute_metrics(records, labels, grid, p_del=args.p_del, eta=eta)
    text = format_report(report)
    print(text, end="")
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(text)
    if args.csv:
        write_metrics_csv(report, Path(args.csv))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    suites = {s.strip() for s in args.suites.split(",") if s.strip()}
    unknown = suites - {"soundness", "theorem1", "radii", "dominance"}
    if unknown:
        raise ConfigError(f"Unknown verification suites: {sorted(unknown)}")

    ok = True
    if "soundness" in suites:
        for ops in EditOpSet.parse_list(args.ops):
            result, _ = run_soundness_trials(
                trials=args.trials, alphabet_size=args.alphabet, length=args.length,
                p_del=args.p_del, ops=ops, seed=args.seed,
            )
            print(result.summary_line())
            ok &= result.ok
    if "theorem1" in suites:
        result = run_theorem1_trials(trials=args.theorem1_trials, seed=args.seed)
        print(result.summary_line())
        ok &= result.ok
    if "radii" in suites:
        result = check_closed_form_radii()
        print(result.summary_line())
        ok &= result.ok
    if "dominance" in suites:
        result = check_dominance()
        print(result.summary_line())
        ok &= result.ok
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class EditCertArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, help="key=value file overriding flag defaults")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--quiet", action="store_true", help="Warnings only, no summary report")


def _add_smoothing(parser: argparse.ArgumentParser, p_del_default: float) -> None:
    parser.add_argument("--mechanism", choices=["del", "abn"], default="del",
                        help="Smoothing mechanism: deletion (del) or ablation (abn)")
    parser.add_argument("--p-del", type=float, default=p_del_default, help="Deletion probability")
    parser.add_argument("--p-ab", type=float, default=DEFAULT_P_AB, help="Ablation probability")
    parser.add_argument("--eta", type=str, default=None,
                        help=f"Per-class decision thresholds, CSV (default {DEFAULT_ETA} each)")


def build_parser() -> argparse.ArgumentParser:
    parser = EditCertArgumentParser(
        prog="editcert",
        description="Certified robustness of sequence classifiers against edit-distance attacks",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Generate a planted-motif corpus, train, calibrate and certify
  editcert gen --out data/synth --seed 7
  editcert train --manifest data/synth/train.csv --model-out runs/model.txt --p-del 0.9
  editcert calibrate --manifest data/synth/val.csv --model runs/model.txt --p-del 0.9
  editcert certify --manifest data/synth/test.csv --model runs/model.txt --p-del 0.9 --threads 8
  editcert metrics --records runs/records.jsonl --manifest data/synth/test.csv

  # Certify against an external detector
  editcert certify --manifest files.csv --endpoint "python detector.py" --ops "del,ins,sub;sub"

  # Exhaustive oracle checks of the certificates
  editcert verify
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a synthetic planted-motif corpus")
    _add_common(gen)
    gen.add_argument("--out", type=str, required=True, help="Output directory")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n-train", type=int, default=GEN_N_TRAIN)
    gen.add_argument("--n-val", type=int, default=GEN_N_VAL)
    gen.add_argument("--n-test", type=int, default=GEN_N_TEST)
    gen.add_argument("--length", type=int, default=GEN_LENGTH)
    gen.add_argument("--motif-count", type=int, default=GEN_MOTIF_COUNT)
    gen.add_argument("--chunks", action="store_true", help="Also write chunk-map sidecars")
    gen.set_defaults(handler=cmd_gen)

    train = sub.add_parser("train", help="Train the histogram model with noise injection")
    _add_common(train)
    train.add_argument("--manifest", type=str, required=True)
    train.add_argument("--model-out", type=str, default=str(DEFAULT_MODEL_FILE))
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    train.add_argument("--lr", type=float, default=DEFAULT_LEARNING_RATE)
    train.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)
    train.add_argument("--l2", type=float, default=DEFAULT_L2)
    train.add_argument("--min-preserved", type=int, default=DEFAULT_MIN_PRESERVED,
                       help="Training draws keep at least this many tokens")
    train.add_argument("--mechanism", choices=["del", "abn", "none"], default="del")
    train.add_argument("--p-del", type=float, default=DEFAULT_TRAIN_P_DEL)
    train.add_argument("--p-ab", type=float, default=DEFAULT_P_AB)
    train.set_defaults(handler=cmd_train)

    calibrate = sub.add_parser("calibrate", help="Calibrate the base threshold to a target FPR")
    _add_common(calibrate)
    calibrate.add_argument("--manifest", type=str, required=True, help="Validation manifest")
    calibrate.add_argument("--model", type=str, default=str(DEFAULT_MODEL_FILE))
    calibrate.add_argument("--model-out", type=str, default=None, help="Defaults to --model")
    calibrate.add_argument("--target-fpr", type=float, default=DEFAULT_TARGET_FPR)
    calibrate.add_argument("--mode", choices=["smoothed", "base"], default="smoothed")
    calibrate.add_argument("--samples", type=int, default=DEFAULT_CALIBRATION_SAMPLES)
    calibrate.add_argument("--seed", type=int, default=0)
    _add_smoothing(calibrate, DEFAULT_P_DEL)
    calibrate.set_defaults(handler=cmd_calibrate)

    cert = sub.add_parser("certify", help="Certify every row of a manifest")
    _add_common(cert)
    cert.add_argument("--manifest", type=str, required=True)
    source = cert.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", type=str, help="Histogram model file")
    source.add_argument("--endpoint", type=str, help="http(s):// URL or command line of a classifier")
    source.add_argument("--constant", type=int, help="Constant base classifier (debugging)")
    _add_smoothing(cert, DEFAULT_P_DEL)
    cert.add_argument("--n-pred", type=int, default=DEFAULT_N_PRED)
    cert.add_argument("--n-bnd", type=int, default=DEFAULT_N_BND)
    cert.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    cert.add_argument("--num-classes", type=int, default=DEFAULT_NUM_CLASSES)
    cert.add_argument("--ops", type=str, default=DEFAULT_OPS, help="Op sets, e.g. 'del,ins,sub;sub'")
    cert.add_argument("--seed", type=int, default=0)
    cert.add_argument("--threads", type=int, default=1)
    cert.add_argument("--out", type=str, default=str(DEFAULT_RECORDS_FILE))
    cert.add_argument("--timing", action="store_true", help="Add elapsed_s to records")
    cert.add_argument("--endpoint-retries", type=int, default=ENDPOINT_RETRIES)
    cert.add_argument("--endpoint-timeout", type=float, default=ENDPOINT_TIMEOUT)
    cert.add_argument("--endpoint-concurrency", type=int, default=1,
                      help="In-flight queries for HTTP endpoints")
    cert.set_defaults(handler=cmd_certify)

    metrics = sub.add_parser("metrics", help="Compute metrics from run records")
    _add_common(metrics)
    metrics.add_argument("--records", type=str, default=str(DEFAULT_RECORDS_FILE))
    metrics.add_argument("--manifest", type=str, required=True, help="Label manifest")
    metrics.add_argument("--radius-grid", type=str, default=",".join(str(r) for r in DEFAULT_RADIUS_GRID))
    metrics.add_argument("--num-classes", type=int, default=DEFAULT_NUM_CLASSES)
    metrics.add_argument("--p-del", type=float, default=None, help="Report the mu=1 upper bound for this p_del")
    metrics.add_argument("--eta", type=str, default=None)
    metrics.add_argument("--csv", type=str, default=None, help="Write the certified accuracy curve here")
    metrics.add_argument("--report", type=str, default=None, help="Also write the text report here")
    metrics.set_defaults(handler=cmd_metrics)

    verify = sub.add_parser("verify", help="Run exhaustive oracle checks")
    _add_common(verify)
    verify.add_argument("--suites", type=str, default="soundness,theorem1,radii,dominance")
    verify.add_argument("--trials", type=int, default=ORACLE_TRIALS)
    verify.add_argument("--theorem1-trials", type=int, default=THEOREM1_TRIALS)
    verify.add_argument("--alphabet", type=int, default=ORACLE_ALPHABET)
    verify.add_argument("--length", type=int, default=ORACLE_LENGTH)
    verify.add_argument("--p-del", type=float, default=ORACLE_P_DEL)
    verify.add_argument("--ops", type=str, default=DEFAULT_OPS)
    verify.add_argument("--seed", type=int, default=0)
    verify.set_defaults(handler=cmd_verify)

    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def apply_config_file(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Turn ``--config`` key=value pairs into defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or not known.command:
        return
    config_path = Path(known.config)
    if not config_path.exists():
        raise ConfigError(f"Config file not found: {config_path}")

    try:
        subparser = _subparser(parser, known.command)
    except KeyError:
        return
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in dotenv_values(config_path).items():
        dest = key.strip().lower().lstrip("-").replace("-", "_")
        action = actions.get(dest)
        if action is None or dest in ("help", "config"):
            raise ConfigError(f"Unknown config key '{key}' for '{known.command}'")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[dest] = str(value).strip().lower() in ("1", "true", "yes", "on")
        else:
            # argparse runs string defaults through the action's type
            defaults[dest] = value
        if action.required:
            action.required = False
        for group in subparser._mutually_exclusive_groups:
            if action in group._group_actions:
                group.required = False
    subparser.set_defaults(**defaults)
    logger.debug(f"Applied {len(defaults)} defaults from {config_path}")


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main command-line interface for the EditCert pipeline."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        apply_config_file(parser, argv)
    except ConfigError as e:
        print(f"editcert: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    setup_logging(args.verbose, args.quiet)

    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE
    except EndpointError as e:
        logger.error(f"Classifier endpoint unavailable: {e}")
        return EXIT_INPUT
    except (OSError, ValueError, pd.errors.ParserError) as e:
        # ManifestError, JoinError and LengthCapError are ValueErrors
        logger.error(f"Input error: {e}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
