import json
from pathlib import Path

import numpy as np
import pytest
import torch

from gestsynth.synthetic import SynthConfig, synth_dataset
from gestsynth.training import TrainConfig, VaeTrainConfig, train, train_vae
from gestsynth.vae import load_vae

# Small-but-real artifacts shared across test modules. Sizes are chosen so the
# whole suite stays desk-scale; the acceptance module builds its own larger
# runs.

TINY_GEN = dict(template_dim=16, audio_feature_dim=64, audio_hidden=16,
                base_channels=16, max_channels=64)
TINY_MEL = dict(mel_bins=32)


@pytest.fixture(scope="session")
def toy_data_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("toy_data")
    synth_dataset(SynthConfig(n_clips=48, n_modes=4, seed=5, test_fraction=0.25), out)
    return out


@pytest.fixture(scope="session")
def toy_vae(toy_data_dir):
    out = toy_data_dir / "vae_run"
    result = train_vae(
        VaeTrainConfig(
            manifest=str(toy_data_dir / "train.jsonl"),
            out_dir=str(out),
            epochs=600,
            batch_size=16,
            lr=1e-3,
            seed=0,
            template_dim=16,
            base_channels=24,
            max_channels=96,
            mel=TINY_MEL,
        )
    )
    return load_vae(result.checkpoint_path), result.checkpoint_path


@pytest.fixture(scope="session")
def bp_clip_run(toy_data_dir):
    cfg = TrainConfig(
        variant="bp_clip",
        manifest=str(toy_data_dir / "train.jsonl"),
        out_dir=str(toy_data_dir / "bp_clip_run"),
        epochs=10,
        batch_size=32,
        lr=1e-3,
        seed=0,
        generator=dict(TINY_GEN),
        mel=dict(TINY_MEL),
    )
    result = train(cfg)
    return cfg, result


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" in nodeid:
                name = nodeid.split("::")[-1]
                lines.append((name, "PASS" if status == "passed" else "FAIL"))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, verdict in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {name}")
