import logging

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bootlm.errors import CorpusTooSmall, EmptyCandidates, InvalidId
from bootlm.tokenizer import (
    SPECIAL_TOKENS,
    Vocabulary,
    WordPieceTokenizer,
    item_frequencies,
    recommend_vocab_size,
    train_wordpiece,
)
from oracles import wordpiece_bruteforce

CORPUS = [
    "the cat sat on the mat",
    "the hat is on the cat",
    "that cat hates the rat",
    "a bat and a cat and a rat",
] * 3
BASE_SIZE = len(wordpiece_bruteforce(CORPUS, 0))  # specials + alphabet
MAX_SIZE = 40  # merges available at min_frequency 2


def test_aaab_merges_match_bruteforce():
    entries = wordpiece_bruteforce(["aaab aaab aaab"], 11)
    assert entries[5:] == ["##a", "##b", "a", "##ab", "##aab", "aaab"]
    vocab = train_wordpiece(["aaab aaab aaab"], 11)
    assert list(vocab) == entries
    assert "aaab" in vocab
    assert WordPieceTokenizer(vocab).encode("aaab").tokens == ["aaab"]


def test_size_eight_holds_only_specials_and_alphabet():
    vocab = train_wordpiece(["aaab aaab aaab"], 8)
    assert list(vocab) == list(SPECIAL_TOKENS) + ["##a", "##b", "a"]


@pytest.mark.parametrize("size", [25, 32, 40])
def test_training_matches_bruteforce(size):
    assert list(train_wordpiece(CORPUS, size)) == wordpiece_bruteforce(CORPUS, size)


def test_corpus_too_small():
    with pytest.raises(CorpusTooSmall):
        train_wordpiece(["ab"], 6)
    with pytest.raises(CorpusTooSmall):
        train_wordpiece(["ab"], 50)  # runs out of frequent pairs


def test_deterministic():
    assert train_wordpiece(CORPUS, 40) == train_wordpiece(CORPUS, 40)


@given(st.integers(BASE_SIZE, MAX_SIZE), st.integers(0, 10))
def test_smaller_vocabulary_is_a_prefix(k, m):
    small = train_wordpiece(CORPUS, k)
    big = train_wordpiece(CORPUS, min(k + m, MAX_SIZE))
    assert list(big)[:k] == list(small)


def test_encode_greedy_longest_match():
    vocab = Vocabulary(list(SPECIAL_TOKENS) + ["h", "he", "hel", "##l", "##lo", "##o"])
    tok = WordPieceTokenizer(vocab)
    enc = tok.encode("hello")
    assert enc.tokens == ["hel", "##lo"]
    assert enc.offsets == [(0, 3), (3, 5)]
    assert tok.encode("").ids == []
    assert tok.encode("hex").ids == [vocab.unk_id]
    assert tok.decode(enc.ids) == "hello"
    assert tok.decode([]) == ""
    with pytest.raises(InvalidId):
        tok.decode([len(vocab)])


@given(st.lists(st.sampled_from(["cat", "the", "mat", "hat", "rat", "a", "sat"]), max_size=12))
def test_round_trip(words):
    tok = WordPieceTokenizer(train_wordpiece(CORPUS, 40))
    text = " ".join(words)
    enc = tok.encode(text)
    assert tok.decode(enc.ids) == text
    assert tok.vocab.mask_id not in enc.ids and tok.vocab.pad_id not in enc.ids
    ends = [e for _, e in enc.offsets]
    starts = [s for s, _ in enc.offsets]
    assert all(a <= b for a, b in zip(ends, starts[1:]))


def test_vocab_file_round_trip(tmp_path):
    vocab = train_wordpiece(CORPUS, 40)
    vocab.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == vocab
    lines = (tmp_path / "v.txt").read_text().splitlines()
    assert lines[:5] == list(SPECIAL_TOKENS)


def _frequency_rule(corpus, size, min_count):
    # oracle: retrain at exactly this size and count items directly
    vocab = Vocabulary(wordpiece_bruteforce(corpus, size))
    freq = item_frequencies(vocab, corpus)
    items = range(len(SPECIAL_TOKENS), size)
    return sum(freq[i] >= min_count for i in items) >= 0.95 * len(items)


def test_recommend_vocab_size_against_direct_counting():
    corpus = CORPUS * 10
    candidates = [20, 25, 30, 40]
    expected = max(c for c in candidates if _frequency_rule(corpus, c, 30))
    assert expected < 40
    assert recommend_vocab_size(corpus, candidates, min_count=30) == expected


def test_recommend_all_qualify():
    assert recommend_vocab_size(CORPUS, [20, 25, 30], min_count=0) == 30


def test_recommend_none_qualify_warns(caplog):
    with caplog.at_level(logging.WARNING):
        assert recommend_vocab_size(CORPUS, [30, 40], min_count=10_000) == 30
    assert "no candidate" in caplog.text


def test_recommend_empty():
    with pytest.raises(EmptyCandidates):
        recommend_vocab_size(CORPUS, [])
