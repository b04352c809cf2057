"""Span masking and the encoder/decoder split of a masked sequence."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidP, LengthMismatch


@dataclass(frozen=True)
class MaskConfig:
    budget_fraction: float = 0.15
    geometric_p: float = 1 / 3
    max_span: int | None = 10

    def __post_init__(self):
        if not 0.0 < self.budget_fraction < 1.0:
            raise ValueError(f"budget_fraction must be in (0, 1), got {self.budget_fraction}")
        if not 0.0 < self.geometric_p <= 1.0:
            raise InvalidP(f"geometric_p must be in (0, 1], got {self.geometric_p}")
        if self.max_span is not None and self.max_span < 1:
            raise ValueError(f"max_span must be >= 1, got {self.max_span}")

    def budget(self, length: int) -> int:
        """Number of positions masked in a sequence of ``length`` tokens."""
        # round first: 0.15 * 100 evaluates to 15.000000000000002
        return min(length, max(1, math.ceil(round(self.budget_fraction * length, 9))))


@dataclass(frozen=True)
class MaskPlan:
    length: int
    spans: tuple[tuple[int, int], ...]
    # span lengths as drawn, before truncation to the remaining budget
    drawn_lengths: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        spans = tuple(sorted((int(s), int(n)) for s, n in self.spans))
        object.__setattr__(self, "spans", spans)
        end = 0
        for start, n in spans:
            if n < 1 or start < end or start + n > self.length:
                raise ValueError(f"invalid span ({start}, {n}) for length {self.length}")
            end = start + n

    @property
    def masked_positions(self) -> tuple[int, ...]:
        return tuple(p for start, n in self.spans for p in range(start, start + n))

    @property
    def masked_fraction(self) -> float:
        return len(self.masked_positions) / self.length

    @classmethod
    def from_positions(cls, length: int, positions: Sequence[int]) -> "MaskPlan":
        """Plan masking exactly ``positions`` (grouped into maximal runs)."""
        spans: list[list[int]] = []
        for p in sorted(set(int(p) for p in positions)):
            if spans and spans[-1][0] + spans[-1][1] == p:
                spans[-1][1] += 1
            else:
                spans.append([p, 1])
        return cls(length, tuple((s, n) for s, n in spans))


@dataclass(frozen=True)
class AutoencoderViews:
    encoder_tokens: np.ndarray
    encoder_positions: np.ndarray
    masked_positions: np.ndarray
    target_tokens: np.ndarray

    @property
    def length(self) -> int:
        return len(self.encoder_tokens) + len(self.masked_positions)

    def reassemble(self) -> np.ndarray:
        out = np.empty(self.length, dtype=np.result_type(self.encoder_tokens, self.target_tokens))
        out[self.encoder_positions] = self.encoder_tokens
        out[self.masked_positions] = self.target_tokens
        return out


def sample_geometric_length(p: float, rng: np.random.Generator, max_span: int | None = None) -> int:
    """Draw k >= 1 with P(k) = (1-p)^(k-1) p; values above ``max_span`` are redrawn."""
    if not 0.0 < p <= 1.0:
        raise InvalidP(f"p must be in (0, 1], got {p}")
    while True:
        k = int(rng.geometric(p))
        if max_span is None or k <= max_span:
            return k


def build_mask_plan(length: int, config: MaskConfig, rng: np.random.Generator) -> MaskPlan:
    """Sample non-overlapping spans until exactly ``config.budget(length)`` positions are masked."""
    if length < 1:
        raise ValueError("length must be >= 1")
    target = config.budget(length)
    free = np.ones(length, dtype=bool)
    spans, drawn = [], []
    masked = 0
    while masked < target:
        k = sample_geometric_length(config.geometric_p, rng, config.max_span)
        drawn.append(k)
        k = min(k, target - masked)
        while True:
            # start s is valid iff free[s:s+k] are all free
            window = np.convolve(free.astype(np.int64), np.ones(k, dtype=np.int64), "valid")
            starts = np.flatnonzero(window == k)
            if len(starts):
                break
            k -= 1  # fragmented sequence; k == 1 always fits since masked < length
        start = int(starts[rng.integers(len(starts))])
        free[start:start + k] = False
        spans.append((start, k))
        masked += k
    return MaskPlan(length, tuple(spans), tuple(drawn))


def split_for_autoencoder(tokens: Sequence[int], plan: MaskPlan) -> AutoencoderViews:
    tokens = np.asarray(tokens)
    if len(tokens) != plan.length:
        raise LengthMismatch(f"{len(tokens)} tokens but plan covers {plan.length}")
    is_masked = np.zeros(plan.length, dtype=bool)
    is_masked[list(plan.masked_positions)] = True
    enc_pos = np.flatnonzero(~is_masked)
    mask_pos = np.flatnonzero(is_masked)
    return AutoencoderViews(
        encoder_tokens=tokens[enc_pos],
        encoder_positions=enc_pos,
        masked_positions=mask_pos,
        target_tokens=tokens[mask_pos],
    )
