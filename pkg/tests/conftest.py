"""Shared fixtures for the EditCert tests."""

import numpy as np
import pytest


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def write_manifest(tmp_path):
    """Write byte files plus a manifest; returns the manifest path."""

    def _write(contents, labels=None, name="manifest.csv"):
        lines = ["path,label"]
        for i, data in enumerate(contents):
            rel = f"files/f{i:03d}.bin"
            target = tmp_path / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
            label = labels[i] if labels is not None else 1
            lines.append(f"{rel},{label}")
        manifest = tmp_path / name
        manifest.write_text("\n".join(lines) + "\n")
        return manifest

    return _write
