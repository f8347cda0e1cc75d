"""Tests for manifest handling, the batch driver and the command-line interface."""

import json

import numpy as np
import pandas as pd
import pytest

from src.editcert.config import ConfigError
from src.editcert.metrics import read_records
from src.editcert.pipeline import ManifestError, load_dataset, load_manifest, main, parse_eta
from src.editcert.seqcore import ChunkVocabulary, LEVENSHTEIN

LEV = LEVENSHTEIN.key
FAST = ["--n-pred", "20", "--n-bnd", "50", "--quiet"]


def records_of(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


class TestManifest:

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "absent.csv")

    def test_paths_resolve_against_manifest_directory(self, write_manifest, tmp_path):
        manifest = write_manifest([b"AB", b"C"], labels=[0, 1])
        rows = load_manifest(manifest)
        assert [r.path for r in rows] == ["files/f000.bin", "files/f001.bin"]
        assert rows[1].file == tmp_path / "files/f001.bin"
        assert [r.label for r in rows] == [0, 1]
        assert rows[0].chunks is None

    @pytest.mark.parametrize("text", [
        "file,label\na.bin,0\n",
        "path,label\na.bin,spam\n",
        "path,label\na.bin,2\n",
    ])
    def test_malformed(self, tmp_path, text):
        manifest = tmp_path / "m.csv"
        manifest.write_text(text)
        with pytest.raises(ManifestError):
            load_manifest(manifest)

    def test_mixed_rows_rejected(self, tmp_path):
        (tmp_path / "a.bin").write_bytes(b"AB")
        (tmp_path / "a.map").write_text("0\n")
        manifest = tmp_path / "m.csv"
        manifest.write_text("path,label,chunks\na.bin,0,a.map\na.bin,1,\n")
        with pytest.raises(ManifestError):
            load_dataset(load_manifest(manifest), ChunkVocabulary())

    def test_chunked_rows_share_final_alphabet(self, tmp_path):
        (tmp_path / "a.bin").write_bytes(b"AABB")
        (tmp_path / "b.bin").write_bytes(b"CCDD")
        (tmp_path / "m.map").write_text("0\n2\n")
        manifest = tmp_path / "m.csv"
        manifest.write_text("path,label,chunks\na.bin,0,m.map\nb.bin,1,m.map\n")
        vocabulary = ChunkVocabulary()
        dataset = load_dataset(load_manifest(manifest), vocabulary)
        assert [x.tokens for x, _ in dataset] == [(0, 1), (2, 3)]
        assert all(x.alphabet == vocabulary.alphabet for x, _ in dataset)


def test_parse_eta():
    assert parse_eta(None, 2) == (0.5, 0.5)
    assert parse_eta("0.3", 3) == (0.3, 0.3, 0.3)
    assert parse_eta("0.2,0.8", 2) == (0.2, 0.8)
    with pytest.raises(ConfigError):
        parse_eta("0.2,0.3,0.5", 2)


class TestCertifyCommand:

    def test_constant_classifier(self, write_manifest, tmp_path):
        manifest = write_manifest([b"ABCDEFGH"] * 3)
        out = tmp_path / "records.jsonl"
        code = main(["certify", "--manifest", str(manifest), "--constant", "1", "--out", str(out), *FAST])
        assert code == 0
        records = records_of(out)
        assert [r["path"] for r in records] == [f"files/f{i:03d}.bin" for i in range(3)]
        assert all(r["pred"] == 1 and r["len"] == 8 for r in records)
        assert len({r["radius"][LEV] for r in records}) == 1
        assert len({r["seed"] for r in records}) == 3

    def test_saturated_defaults(self, write_manifest, tmp_path):
        manifest = write_manifest([b"A" * 32])
        out = tmp_path / "records.jsonl"
        assert main(["certify", "--manifest", str(manifest), "--constant", "1",
                     "--out", str(out), "--quiet"]) == 0
        assert records_of(out)[0]["radius"] == {LEV: 137}

    def test_several_op_sets(self, write_manifest, tmp_path):
        manifest = write_manifest([b"ABCD"])
        out = tmp_path / "records.jsonl"
        assert main(["certify", "--manifest", str(manifest), "--constant", "0", "--p-del", "0.9",
                     "--ops", "del,ins,sub;sub;ins", "--out", str(out), *FAST]) == 0
        radius = records_of(out)[0]["radius"]
        assert set(radius) == {LEV, "sub", "ins"}

    def test_empty_manifest(self, tmp_path):
        manifest = tmp_path / "empty.csv"
        manifest.write_text("path,label\n")
        out = tmp_path / "records.jsonl"
        assert main(["certify", "--manifest", str(manifest), "--constant", "1", "--out", str(out), *FAST]) == 0
        assert out.read_text() == ""

    def test_unreadable_row_becomes_error_record(self, write_manifest, tmp_path):
        manifest = write_manifest([b"ABC", b"DEF"])
        (tmp_path / "files/f001.bin").unlink()
        out = tmp_path / "records.jsonl"
        assert main(["certify", "--manifest", str(manifest), "--constant", "1", "--out", str(out), *FAST]) == 0
        first, second = records_of(out)
        assert "error" not in first
        assert second["error"].startswith("unreadable input")
        assert second["radius"] == {LEV: None}

    def test_thread_count_does_not_change_output(self, write_manifest, tmp_path):
        manifest = write_manifest([bytes(range(i, i + 12)) for i in range(8)])
        outputs = []
        for threads in ("1", "4"):
            out = tmp_path / f"records{threads}.jsonl"
            main(["certify", "--manifest", str(manifest), "--constant", "1", "--p-del", "0.5",
                  "--threads", threads, "--out", str(out), *FAST])
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]

    def test_missing_source_is_usage_error(self, write_manifest):
        manifest = write_manifest([b"AB"])
        with pytest.raises(SystemExit) as excinfo:
            main(["certify", "--manifest", str(manifest)])
        assert excinfo.value.code == 1

    def test_missing_manifest(self, tmp_path):
        code = main(["certify", "--manifest", str(tmp_path / "absent.csv"), "--constant", "1", *FAST])
        assert code == 2

    def test_invalid_op_set(self, write_manifest):
        manifest = write_manifest([b"AB"])
        assert main(["certify", "--manifest", str(manifest), "--constant", "1", "--ops", "swap", *FAST]) == 1


class TestConfigFile:

    def test_values_become_defaults(self, write_manifest, tmp_path):
        manifest = write_manifest([b"ABCD"])
        config = tmp_path / "run.env"
        out = tmp_path / "records.jsonl"
        config.write_text(f"n_pred=10\nn_bnd=10\nconstant=1\nout={out}\nquiet=true\n")
        assert main(["certify", "--manifest", str(manifest), "--config", str(config)]) == 0
        assert records_of(out)[0]["mu_lcb"] == pytest.approx(0.05 ** 0.1)

    def test_flags_override_config(self, write_manifest, tmp_path):
        manifest = write_manifest([b"ABCD"])
        config = tmp_path / "run.env"
        out = tmp_path / "records.jsonl"
        config.write_text("n_bnd=10\n")
        assert main(["certify", "--manifest", str(manifest), "--constant", "1", "--config", str(config),
                     "--n-pred", "5", "--n-bnd", "20", "--out", str(out), "--quiet"]) == 0
        assert records_of(out)[0]["mu_lcb"] == pytest.approx(0.05 ** 0.05)

    def test_unknown_key(self, tmp_path):
        config = tmp_path / "run.env"
        config.write_text("bogus=1\n")
        assert main(["verify", "--config", str(config)]) == 1

    def test_missing_file(self, tmp_path):
        assert main(["verify", "--config", str(tmp_path / "absent.env")]) == 1


class TestOtherCommands:

    def test_verify_soundness(self, capsys):
        code = main(["verify", "--suites", "soundness", "--trials", "10", "--quiet"])
        assert code == 0
        assert capsys.readouterr().out.startswith("PASS 10/10")

    def test_verify_unknown_suite(self):
        assert main(["verify", "--suites", "everything", "--quiet"]) == 1

    def test_metrics(self, write_manifest, tmp_path, capsys):
        manifest = write_manifest([b"ABCD", b"EFGH"], labels=[1, 0])
        records = tmp_path / "records.jsonl"
        main(["certify", "--manifest", str(manifest), "--constant", "1", "--out", str(records), *FAST])
        capsys.readouterr()

        csv = tmp_path / "curve.csv"
        report = tmp_path / "report.txt"
        code = main(["metrics", "--records", str(records), "--manifest", str(manifest), "--radius-grid", "0,1",
                     "--csv", str(csv), "--report", str(report), "--p-del", "0.995", "--quiet"])
        assert code == 0
        out = capsys.readouterr().out
        assert "Clean accuracy:        0.5000" in out
        assert "UB 138" in out
        assert report.read_text() == out
        assert csv.exists()

    def test_metrics_join_failure(self, write_manifest, tmp_path):
        manifest = write_manifest([b"ABCD"])
        records = tmp_path / "records.jsonl"
        records.write_text(json.dumps({"path": "elsewhere.bin", "pred": 1, "radius": {}}) + "\n")
        assert main(["metrics", "--records", str(records), "--manifest", str(manifest), "--quiet"]) == 2

    def test_gen(self, tmp_path, capsys):
        code = main(["gen", "--out", str(tmp_path / "synth"), "--n-train", "4", "--n-val", "2",
                     "--n-test", "2", "--length", "64", "--motif-count", "3", "--quiet"])
        assert code == 0
        assert (tmp_path / "synth/train.csv").exists()
        assert len(list((tmp_path / "synth/test").glob("*.bin"))) == 2


@pytest.mark.slow
class TestEndToEnd:

    def run_pipeline(self, root, chunks=False):
        data = root / "synth"
        model = root / "model.txt"
        gen = ["gen", "--out", str(data), "--seed", "7", "--n-test", "40", "--quiet"]
        assert main(gen + (["--chunks"] if chunks else [])) == 0
        assert main(["train", "--manifest", str(data / "train.csv"), "--model-out", str(model),
                     "--p-del", "0.9", "--quiet"]) == 0
        assert main(["calibrate", "--manifest", str(data / "val.csv"), "--model", str(model),
                     "--p-del", "0.9", "--quiet"]) == 0
        return data, model

    def certify(self, data, model, out, threads="1"):
        assert main(["certify", "--manifest", str(data / "test.csv"), "--model", str(model), "--p-del", "0.9",
                     "--threads", threads, "--out", str(out), "--quiet"]) == 0
        return read_records(out)

    def test_planted_motif_corpus(self, tmp_path):
        data, model = self.run_pipeline(tmp_path)
        records = self.certify(data, model, tmp_path / "r1.jsonl")
        labels = [i % 2 for i in range(40)]
        accuracy = np.mean([r.pred == y for r, y in zip(records, labels)])
        assert accuracy >= 0.95
        radii = [r.radius[LEV] for r in records if isinstance(r.radius[LEV], int)]
        assert 4 <= np.median(radii) <= 6

        again = self.certify(data, model, tmp_path / "r4.jsonl", threads="4")
        assert (tmp_path / "r1.jsonl").read_bytes() == (tmp_path / "r4.jsonl").read_bytes()
        assert again == records

    def test_calibrated_fpr_and_monotone_curve(self, tmp_path, capsys):
        data, model = self.run_pipeline(tmp_path)
        reported = [line for line in capsys.readouterr().out.splitlines() if line.startswith("Empirical FPR:")]
        assert len(reported) == 1
        assert float(reported[0].split()[2]) <= 0.005

        records = tmp_path / "records.jsonl"
        self.certify(data, model, records)
        curve_csv = tmp_path / "curve.csv"
        assert main(["metrics", "--records", str(records), "--manifest", str(data / "test.csv"),
                     "--p-del", "0.9", "--csv", str(curve_csv), "--quiet"]) == 0
        curve = pd.read_csv(curve_csv)
        assert set(curve["ops"]) == {LEV}
        for _, group in curve.groupby("ops"):
            accuracy = group.sort_values("radius")["cert_acc"].to_numpy()
            assert np.all(np.diff(accuracy) <= 0)

    def test_chunked_corpus(self, tmp_path):
        data, model = self.run_pipeline(tmp_path, chunks=True)
        assert (tmp_path / "model.txt.chunks").exists()
        records = self.certify(data, model, tmp_path / "records.jsonl")
        assert len(records) == 40
        assert all(r.error is None for r in records)
