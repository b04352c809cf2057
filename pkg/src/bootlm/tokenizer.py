"""Case-sensitive WordPiece vocabulary training, encoding and decoding.

Training starts from a character alphabet (word-initial characters plus their
``##``-prefixed word-internal variants) and repeatedly merges the adjacent pair
with the highest likelihood score ``count(ab) / (count(a) * count(b))``.
Ties go to the lexicographically smallest merged string, so a vocabulary of
size ``k`` is always a prefix of the vocabulary of size ``k + m``.
"""

from __future__ import annotations

import heapq
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CorpusTooSmall, EmptyCandidates, InvalidId

logger = logging.getLogger(__name__)

PAD, UNK, MASK, BOS, EOS = "[PAD]", "[UNK]", "[MASK]", "[BOS]", "[EOS]"
SPECIAL_TOKENS = (PAD, UNK, MASK, BOS, EOS)
CONTINUATION = "##"
MAX_WORD_CHARS = 100


@dataclass(frozen=True)
class Encoding:
    ids: list[int]
    offsets: list[tuple[int, int]]
    tokens: list[str]


class Vocabulary:
    """Ordered, immutable list of subword entries; line index is the token id."""

    def __init__(self, entries: Sequence[str]):
        entries = list(entries)
        if entries[: len(SPECIAL_TOKENS)] != list(SPECIAL_TOKENS):
            raise ValueError(f"vocabulary must start with {SPECIAL_TOKENS}")
        if len(set(entries)) != len(entries):
            raise ValueError("vocabulary entries must be unique")
        self._entries = tuple(entries)
        self._index = {tok: i for i, tok in enumerate(self._entries)}

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __contains__(self, token):
        return token in self._index

    def __getitem__(self, idx: int) -> str:
        return self._entries[idx]

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._entries == other._entries

    def __repr__(self):
        return f"Vocabulary(size={len(self)})"

    @property
    def entries(self) -> tuple[str, ...]:
        return self._entries

    def id(self, token: str) -> int | None:
        return self._index.get(token)

    @property
    def pad_id(self):
        return self._index[PAD]

    @property
    def unk_id(self):
        return self._index[UNK]

    @property
    def mask_id(self):
        return self._index[MASK]

    @property
    def bos_id(self):
        return self._index[BOS]

    @property
    def eos_id(self):
        return self._index[EOS]

    def prefix(self, size: int) -> "Vocabulary":
        return Vocabulary(self._entries[:size])

    def save(self, path) -> None:
        Path(path).write_text("".join(e + "\n" for e in self._entries), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))


def _word_counts(corpus: Iterable[str]) -> Counter:
    counts: Counter = Counter()
    for text in corpus:
        counts.update(text.split())
    return counts


def _initial_symbols(word: str) -> list[str]:
    return [word[0]] + [CONTINUATION + c for c in word[1:]]


def _merge_name(a: str, b: str) -> str:
    return a + b[len(CONTINUATION):] if b.startswith(CONTINUATION) else a + b


class _MergeState:
    """Incremental pair statistics for WordPiece training."""

    def __init__(self, word_counts: Counter):
        self.words: list[list[str]] = []
        self.counts: list[int] = []
        self.pair_count: dict = defaultdict(int)
        self.pair_words: dict = defaultdict(set)
        self.sym_freq: dict = defaultdict(int)
        self.sym_pairs: dict = defaultdict(set)
        for word, n in sorted(word_counts.items()):
            if len(word) > MAX_WORD_CHARS:
                continue
            self.words.append(_initial_symbols(word))
            self.counts.append(n)
        for i in range(len(self.words)):
            self._add(i)

    def alphabet(self) -> list[str]:
        return sorted(self.sym_freq)

    def _add(self, i: int) -> None:
        syms, n = self.words[i], self.counts[i]
        for s in syms:
            self.sym_freq[s] += n
        for pair in zip(syms, syms[1:]):
            self.pair_count[pair] += n
            self.pair_words[pair].add(i)
            self.sym_pairs[pair[0]].add(pair)
            self.sym_pairs[pair[1]].add(pair)

    def _remove(self, i: int) -> None:
        syms, n = self.words[i], self.counts[i]
        for s in syms:
            self.sym_freq[s] -= n
        for pair in zip(syms, syms[1:]):
            self.pair_count[pair] -= n
            self.pair_words[pair].discard(i)

    def score(self, pair) -> float:
        return self.pair_count[pair] / (self.sym_freq[pair[0]] * self.sym_freq[pair[1]])

    def merge(self, pair) -> set:
        """Merge ``pair`` everywhere; return the pairs whose score may have changed."""
        a, b = pair
        new = _merge_name(a, b)
        touched: set = set()
        for i in sorted(self.pair_words[pair]):
            self._remove(i)
            syms, out, k = self.words[i], [], 0
            while k < len(syms):
                if k + 1 < len(syms) and syms[k] == a and syms[k + 1] == b:
                    out.append(new)
                    k += 2
                else:
                    out.append(syms[k])
                    k += 1
            self.words[i] = out
            touched.update(zip(out, out[1:]))
            self._add(i)
        for s in (a, b, new):
            touched |= self.sym_pairs[s]
        return touched


def _train_entries(corpus: Iterable[str], target_size: int, min_frequency: int) -> list[str]:
    state = _MergeState(_word_counts(corpus))
    entries = list(SPECIAL_TOKENS) + [s for s in state.alphabet() if s not in SPECIAL_TOKENS]
    if len(state.words) == 0:
        raise CorpusTooSmall("corpus contains no words")
    if len(entries) > target_size:
        raise CorpusTooSmall(
            f"{len(entries)} specials and alphabet symbols exceed target size {target_size}"
        )
    known = set(entries)
    heap: list = []

    def push(pair):
        if state.pair_count[pair] >= min_frequency:
            heapq.heappush(heap, (-state.score(pair), _merge_name(*pair), pair))

    for pair in sorted(state.pair_count):
        push(pair)
    while len(entries) < target_size and heap:
        neg_score, name, pair = heapq.heappop(heap)
        if state.pair_count[pair] < min_frequency or -neg_score != state.score(pair):
            continue  # stale entry; a fresh one was pushed when the score changed
        for other in sorted(state.merge(pair)):
            push(other)
        if name not in known:
            known.add(name)
            entries.append(name)
    return entries


def train_wordpiece(
    corpus: Iterable[str], target_size: int, min_frequency: int = 2
) -> Vocabulary:
    """Train a vocabulary of exactly ``target_size`` entries.

    Raises :class:`CorpusTooSmall` when the alphabet alone does not fit, or when
    the corpus runs out of pairs occurring at least ``min_frequency`` times.
    """
    corpus = list(corpus)
    entries = _train_entries(corpus, target_size, min_frequency)
    if len(entries) < target_size:
        raise CorpusTooSmall(
            f"only {len(entries)} entries reachable with min_frequency={min_frequency}; "
            f"requested {target_size}"
        )
    return Vocabulary(entries)


class WordPieceTokenizer:
    """Greedy longest-match-first WordPiece over whitespace-split words."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    @classmethod
    def from_file(cls, path) -> "WordPieceTokenizer":
        return cls(Vocabulary.load(path))

    def __len__(self):
        return len(self.vocab)

    def _split_word(self, word: str) -> list[tuple[str, int, int]] | None:
        if len(word) > MAX_WORD_CHARS:
            return None
        pieces, start = [], 0
        while start < len(word):
            end = len(word)
            while end > start:
                piece = word[start:end] if start == 0 else CONTINUATION + word[start:end]
                if piece in self.vocab:
                    pieces.append((piece, start, end))
                    break
                end -= 1
            else:
                return None
            start = end
        return pieces

    def encode(self, text: str) -> Encoding:
        ids, offsets, tokens = [], [], []
        pos = 0
        for word in text.split():
            begin = text.index(word, pos)
            pos = begin + len(word)
            pieces = self._split_word(word)
            if pieces is None:
                ids.append(self.vocab.unk_id)
                offsets.append((begin, pos))
                tokens.append(UNK)
                continue
            for piece, s, e in pieces:
                ids.append(self.vocab.id(piece))
                offsets.append((begin + s, begin + e))
                tokens.append(piece)
        return Encoding(ids, offsets, tokens)

    def decode(self, ids: Sequence[int]) -> str:
        words: list[str] = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.vocab):
                raise InvalidId(f"token id {i} outside vocabulary of size {len(self.vocab)}")
            token = self.vocab[i]
            if token.startswith(CONTINUATION) and words:
                words[-1] += token[len(CONTINUATION):]
            else:
                words.append(token)
        return " ".join(words)


def item_frequencies(vocab: Vocabulary, corpus: Iterable[str]) -> Counter:
    """How often each vocabulary id occurs when ``corpus`` is encoded."""
    tok = WordPieceTokenizer(vocab)
    counts: Counter = Counter()
    for text in corpus:
        counts.update(tok.encode(text).ids)
    return counts


def recommend_vocab_size(
    corpus: Iterable[str],
    candidate_sizes: Sequence[int],
    min_count: int = 100,
    coverage: float = 0.95,
    min_frequency: int = 2,
) -> int:
    """Largest candidate whose non-special items reach ``min_count`` at ``coverage``.

    Vocabularies are nested prefixes of one another, so a single training run
    at the largest candidate serves every smaller size. Falls back to the
    smallest candidate (with a warning) when none qualifies.
    """
    sizes = sorted(candidate_sizes)
    if not sizes:
        raise EmptyCandidates("no candidate vocabulary sizes given")
    corpus = list(corpus)
    entries = _train_entries(corpus, sizes[-1], min_frequency)
    best = None
    for size in sizes:
        if size > len(entries):
            break
        vocab = Vocabulary(entries[:size])
        freq = item_frequencies(vocab, corpus)
        items = range(len(SPECIAL_TOKENS), size)
        frequent = sum(1 for i in items if freq[i] >= min_count)
        if frequent >= coverage * len(items):
            best = size
    if best is None:
        logger.warning(
            "no candidate vocabulary size satisfies the %.0f%% >= %d rule; using %d",
            100 * coverage, min_count, sizes[0],
        )
        return sizes[0]
    return best
