import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bootlm.errors import InvalidP, LengthMismatch
from bootlm.masking import (
    MaskConfig,
    MaskPlan,
    build_mask_plan,
    sample_geometric_length,
    split_for_autoencoder,
)


def test_geometric_degenerate_and_first_mass(rng):
    assert all(sample_geometric_length(1.0, rng) == 1 for _ in range(100))
    draws = np.array([sample_geometric_length(1 / 3, rng) for _ in range(30_000)])
    assert abs((draws == 1).mean() - 1 / 3) < 0.015


def test_geometric_mean():
    rng = np.random.default_rng(7)
    draws = [sample_geometric_length(1 / 3, rng) for _ in range(100_000)]
    assert abs(np.mean(draws) - 3.0) < 0.05


def test_geometric_truncation_by_rejection(rng):
    draws = [sample_geometric_length(1 / 3, rng, max_span=2) for _ in range(20_000)]
    assert max(draws) == 2
    # renormalized: P(1) = p / (p + p(1-p)) = 3/5
    assert abs(np.mean(np.array(draws) == 1) - 0.6) < 0.02


@pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
def test_invalid_p(p, rng):
    with pytest.raises(InvalidP):
        sample_geometric_length(p, rng)


def test_budget_examples(rng):
    cfg = MaskConfig()
    assert len(build_mask_plan(20, cfg, rng).masked_positions) == 3
    assert len(build_mask_plan(1, cfg, rng).masked_positions) == 1
    assert cfg.budget(100) == 15
    assert cfg.budget(256) == 39


def test_same_seed_same_plan():
    a = build_mask_plan(128, MaskConfig(), np.random.default_rng(3))
    b = build_mask_plan(128, MaskConfig(), np.random.default_rng(3))
    assert a == b


@given(st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_plan_invariants(length, seed):
    cfg = MaskConfig()
    plan = build_mask_plan(length, cfg, np.random.default_rng(seed))
    pos = plan.masked_positions
    assert len(pos) == min(length, max(1, math.ceil(round(0.15 * length, 9))))
    assert len(set(pos)) == len(pos)
    assert all(0 <= p < length for p in pos)
    assert all(1 <= n <= cfg.max_span for _, n in plan.spans)


@given(st.lists(st.integers(0, 50), min_size=1, max_size=40), st.integers(0, 2**32 - 1))
def test_split_reassembles(tokens, seed):
    plan = build_mask_plan(len(tokens), MaskConfig(), np.random.default_rng(seed))
    views = split_for_autoencoder(tokens, plan)
    assert list(views.reassemble()) == tokens
    assert len(views.encoder_tokens) + len(views.masked_positions) == len(tokens)
    assert np.all(np.diff(views.encoder_positions) > 0)


def test_split_examples():
    views = split_for_autoencoder([10, 11, 12, 13], MaskPlan.from_positions(4, [1, 3]))
    assert list(views.encoder_tokens) == [10, 12]
    assert list(views.encoder_positions) == [0, 2]
    assert dict(zip(views.masked_positions, views.target_tokens)) == {1: 11, 3: 13}

    empty = split_for_autoencoder([1, 2, 3], MaskPlan.from_positions(3, []))
    assert list(empty.encoder_tokens) == [1, 2, 3] and len(empty.target_tokens) == 0

    full = split_for_autoencoder([1, 2, 3], MaskPlan.from_positions(3, [0, 1, 2]))
    assert len(full.encoder_tokens) == 0 and list(full.target_tokens) == [1, 2, 3]


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        split_for_autoencoder([1, 2], MaskPlan.from_positions(3, [0]))


def test_overlapping_spans_rejected():
    with pytest.raises(ValueError):
        MaskPlan(10, ((0, 3), (2, 2)))
