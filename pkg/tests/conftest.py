import os
import sys

import numpy as np
import pytest
import torch
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from bootlm.model import BootModel, ModelConfig  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def tiny_config(**overrides) -> ModelConfig:
    """The gradient-suite configuration: d=16, h=2, V=11, 2 enc / 1 dec layers."""
    base = dict(vocab_size=11, hidden=16, heads=2, ff_inner=24, n_encoder_layers=2,
                n_decoder_layers=1, max_relative_distance=4, seq_len=8,
                encoder_dropout=0.0, decoder_dropout=0.0, dtype="float64", init_std=0.3)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny():
    torch.manual_seed(0)
    return BootModel(tiny_config())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, in criterion order."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = getattr(rep, "nodeid", "").rpartition("::")[2]
            if not name.startswith("test_criterion_") or (rep.when != "call" and outcome != "error"):
                continue
            number = int(name.split("_")[2])
            detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
            lines[number] = f"criterion {number:2d} {'PASS' if outcome == 'passed' else 'FAIL'}  {name}  {detail}"
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number].rstrip())
