"""Pseudo-log-likelihood scoring of minimal pairs and temperature sweeps.

Each sentence is run once per token with exactly that token masked; the
resulting vocabulary logits are cached, so rescoring at any softmax
temperature needs no further model evaluation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .errors import (
    DataError,
    EmptyPairSet,
    EmptySentence,
    InvalidGrid,
    NonPositiveTemperature,
    TooLong,
)
from .model import BootModel
from .tokenizer import WordPieceTokenizer


@dataclass(frozen=True)
class MinimalPair:
    sentence_good: str
    sentence_bad: str
    subtask: str

    def __post_init__(self):
        if not self.sentence_good.strip() or not self.sentence_bad.strip():
            raise EmptySentence("both sentences of a minimal pair must be non-empty")
        if not self.subtask:
            raise DataError("minimal pair needs a subtask label")


def read_pairs_jsonl(path) -> list[MinimalPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs.append(MinimalPair(rec["sentence_good"], rec["sentence_bad"], str(rec["UID"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed pair record ({exc})") from exc
    return pairs


@dataclass(frozen=True)
class LogitCache:
    logits: np.ndarray     # [N, V], row t computed with position t masked
    token_ids: np.ndarray  # [N]

    @property
    def length(self) -> int:
        return len(self.token_ids)


def _masked_batch(ids: torch.Tensor):
    n = len(ids)
    keep = ~torch.eye(n, dtype=torch.bool)
    positions = torch.arange(n).expand(n, n)[keep].view(n, n - 1)
    return ids[positions], positions, torch.arange(n)[:, None]


@torch.no_grad()
def masked_logits(model: BootModel, token_ids: Sequence[int]) -> torch.Tensor:
    """``[N, V]`` logits; row t comes from a pass with only position t masked."""
    ids = torch.as_tensor(list(token_ids), dtype=torch.long)
    if len(ids) == 0:
        raise EmptySentence("sentence has no tokens")
    if len(ids) > model.config.seq_len:
        raise TooLong(f"{len(ids)} tokens exceed seq_len {model.config.seq_len}")
    model.eval()
    enc_tokens, enc_positions, masked = _masked_batch(ids)
    _, logits = model(enc_tokens, enc_positions, masked)
    return logits[:, 0, :]


def build_logit_cache(token_ids: Sequence[int], model: BootModel) -> LogitCache:
    logits = masked_logits(model, token_ids).double().numpy()
    return LogitCache(logits, np.asarray(list(token_ids), dtype=np.int64))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def position_log_probs(cache: LogitCache, temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {temperature}")
    logp = _log_softmax(cache.logits / temperature)
    return logp[np.arange(cache.length), cache.token_ids]


def pll_score(cache: LogitCache, temperature: float = 1.0) -> float:
    """Sum over positions of log softmax(z_t / T)[s_t]."""
    return float(position_log_probs(cache, temperature).sum())


class PLLScorer:
    """Tokenizes sentences and memoizes their logit caches for one model.

    With ``boundaries=True`` each sentence is wrapped in ``[BOS] ... [EOS]`` and
    the boundary tokens are scored too; by default only content tokens appear.
    """

    def __init__(self, model: BootModel, tokenizer: WordPieceTokenizer, boundaries: bool = False):
        self.model = model
        self.tokenizer = tokenizer
        self.boundaries = boundaries
        self._caches: dict[str, LogitCache] = {}

    def token_ids(self, sentence: str) -> list[int]:
        ids = self.tokenizer.encode(sentence).ids
        if not ids:
            raise EmptySentence(f"sentence {sentence!r} has no tokens")
        if self.boundaries:
            ids = [self.tokenizer.vocab.bos_id, *ids, self.tokenizer.vocab.eos_id]
        return ids

    def cache(self, sentence: str) -> LogitCache:
        if sentence not in self._caches:
            self._caches[sentence] = build_logit_cache(self.token_ids(sentence), self.model)
        return self._caches[sentence]

    def score(self, sentence: str, temperature: float = 1.0) -> float:
        return pll_score(self.cache(sentence), temperature)

    @torch.no_grad()
    def score_uncached(self, sentence: str, temperature: float = 1.0) -> float:
        """Recompute the PLL with fresh forward passes, tempering inside the model's dtype."""
        if not temperature > 0:
            raise NonPositiveTemperature(f"temperature must be positive, got {temperature}")
        ids = torch.as_tensor(self.token_ids(sentence))
        logits = masked_logits(self.model, ids)
        logp = torch.log_softmax(logits / temperature, dim=-1)
        return float(logp.gather(1, ids[:, None]).sum())


def _pair_credit(good: float, bad: float) -> float:
    return 1.0 if good > bad else 0.5 if good == bad else 0.0


def _grouped(pairs: Sequence[MinimalPair], credits: Sequence[float]):
    groups: dict[str, list[float]] = {}
    for pair, c in zip(pairs, credits):
        groups.setdefault(pair.subtask, []).append(c)
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


def pair_accuracy(pairs: Sequence[MinimalPair], scorer: PLLScorer, temperature: float = 1.0):
    """(overall accuracy, per-subtask accuracies); exact PLL ties earn half credit."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyPairSet("no minimal pairs to score")
    credits = [
        _pair_credit(scorer.score(p.sentence_good, temperature), scorer.score(p.sentence_bad, temperature))
        for p in pairs
    ]
    return float(np.mean(credits)), _grouped(pairs, credits)


def default_temperature_grid(n: int = 51, low: float = 0.05, high: float = 20.0) -> np.ndarray:
    grid = np.geomspace(low, high, n)
    return np.unique(np.append(grid, 1.0))


@dataclass
class ConfidenceProfile:
    temperatures: np.ndarray
    subtasks: list[str]
    accuracy: np.ndarray           # [n_temperatures, n_subtasks]
    average: np.ndarray            # mean over subtasks, per temperature
    best_temperature: float
    best_accuracy: float
    accuracy_at_one: float
    overall: np.ndarray = field(default=None)  # pair-weighted accuracy per temperature

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["temperature", *self.subtasks, "average"])
            for i, t in enumerate(self.temperatures):
                w.writerow([repr(float(t)), *(repr(float(a)) for a in self.accuracy[i]),
                            repr(float(self.average[i]))])

    def summary(self) -> str:
        return (f"best temperature {self.best_temperature:.6g}: accuracy {self.best_accuracy:.4f}; "
                f"accuracy at temperature 1: {self.accuracy_at_one:.4f}")


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(list(grid), dtype=np.float64)
    if grid.size == 0:
        raise InvalidGrid("temperature grid is empty")
    if not np.all(grid > 0) or not np.all(np.isfinite(grid)):
        raise InvalidGrid("temperatures must be finite and positive")
    if not np.any(grid == 1.0):
        raise InvalidGrid("temperature grid must contain 1.0")
    return grid


def temperature_sweep(pairs: Sequence[MinimalPair], scorer: PLLScorer,
                      grid: Iterable[float] | None = None) -> ConfidenceProfile:
    """Accuracy at every grid temperature from one set of cached logits per sentence.

    The best temperature maximizes the subtask-averaged accuracy; ties go to the
    temperature closest to 1.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyPairSet("no minimal pairs to score")
    grid = _check_grid(default_temperature_grid() if grid is None else grid)
    warm = getattr(scorer, "cache", None)  # anything with .score works; PLLScorer fills its cache once
    if warm is not None:
        for p in pairs:
            warm(p.sentence_good)
            warm(p.sentence_bad)

    subtasks = sorted({p.subtask for p in pairs})
    acc = np.zeros((len(grid), len(subtasks)))
    overall = np.zeros(len(grid))
    for i, t in enumerate(grid):
        total, per_task = pair_accuracy(pairs, scorer, float(t))
        overall[i] = total
        acc[i] = [per_task[s] for s in subtasks]
    average = acc.mean(axis=1)

    best = max(range(len(grid)), key=lambda i: (average[i], -abs(grid[i] - 1.0)))
    at_one = int(np.flatnonzero(grid == 1.0)[0])
    return ConfidenceProfile(
        temperatures=grid,
        subtasks=subtasks,
        accuracy=acc,
        average=average,
        best_temperature=float(grid[best]),
        best_accuracy=float(average[best]),
        accuracy_at_one=float(average[at_one]),
        overall=overall,
    )
