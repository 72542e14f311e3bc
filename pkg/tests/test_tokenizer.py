"""Tokenizer training determinism, encode/decode contracts, collation."""
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shirshak.errors import ConfigurationError, ContractError, IntegrityError
from shirshak.tokenizer import (
    IGNORE_SENTINEL,
    SPECIAL_TOKENS,
    Batch,
    EncodedExample,
    SubwordTokenizer,
    collate,
    train_tokenizer,
)

DEVANAGARI = st.text(alphabet=st.sampled_from("कखगघचजझटडतनपबमरलसह ािीुेो"), max_size=60)


def brute_force_best_pair(texts):
    """Independent oracle: count adjacent pairs, pick (max count, lexicographic min)."""
    counts = Counter()
    for t in texts:
        for a, b in zip(t, t[1:]):
            counts[(a, b)] += 1
    eligible = [(pair, c) for pair, c in counts.items() if c >= 2]
    if not eligible:
        return None
    return min(eligible, key=lambda pc: (-pc[1], pc[0]))[0]


def minimum_vocab(texts, prefix="सारांश: "):
    alphabet = set("".join(texts)) | set(prefix)
    return len(SPECIAL_TOKENS) + len(alphabet)


def test_first_merge_matches_brute_force():
    corpus = ["कक कक"]
    tok = train_tokenizer(corpus, vocab_size=minimum_vocab(corpus) + 1)
    assert len(tok.merges) == 1
    assert tok.merges[0] == brute_force_best_pair(corpus) == ("क", "क")


def test_brute_force_oracle_on_longer_corpus():
    corpus = ["नेपालमा नेता", "नेपाली नारा"]
    tok = train_tokenizer(corpus, vocab_size=minimum_vocab(corpus) + 1)
    assert tok.merges[0] == brute_force_best_pair(corpus)


def test_zero_merge_budget_gives_character_vocab():
    corpus = ["कखग"]
    tok = train_tokenizer(corpus, vocab_size=minimum_vocab(corpus))
    assert tok.merges == ()
    ids = tok.encode("कखग")
    assert len(ids) == 5  # bos + 3 chars + eos


def test_vocab_size_below_minimum_rejected():
    corpus = ["कखग"]
    with pytest.raises(ConfigurationError):
        train_tokenizer(corpus, vocab_size=minimum_vocab(corpus) - 1)


def test_training_determinism_byte_identical(tmp_path):
    corpus = ["नेपालमा आज ठूलो समाचार", "नेपाली सेना अगाडि"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    train_tokenizer(corpus, vocab_size=minimum_vocab(corpus) + 10).save(a)
    train_tokenizer(corpus, vocab_size=minimum_vocab(corpus) + 10).save(b)
    assert a.read_bytes() == b.read_bytes()


def test_encode_truncates_to_max_len():
    corpus = ["कखगघ " * 10]
    tok = train_tokenizer(corpus, vocab_size=minimum_vocab(corpus))
    full = tok.encode("कखगघ " * 10)
    assert len(full) > 20
    truncated = tok.encode("कखगघ " * 10, max_len=20)
    assert len(truncated) == 20
    assert truncated[0] == tok.bos_id
    assert truncated == full[:20]


def test_encode_empty_is_bos_eos():
    tok = train_tokenizer(["कख"], vocab_size=minimum_vocab(["कख"]))
    assert tok.encode("") == [tok.bos_id, tok.eos_id]


def test_unknown_characters_map_to_unk():
    tok = train_tokenizer(["कख"], vocab_size=minimum_vocab(["कख"]))
    ids = tok.encode("कQख")
    assert ids == [tok.bos_id, tok.vocab["क"], tok.unk_id, tok.vocab["ख"], tok.eos_id]
    assert tok.decode(ids) == "कख"  # unk decodes to nothing


def test_prefix_prepended_when_asked():
    corpus = ["कखग"]
    tok = train_tokenizer(corpus, vocab_size=minimum_vocab(corpus))
    with_prefix = tok.encode("कखग", add_prefix=True)
    assert tok.decode(with_prefix) == tok.task_prefix + "कखग"


def test_special_token_text_is_not_special():
    # literal "<pad>" in input must not produce the pad id
    tok = train_tokenizer(["कख"], vocab_size=minimum_vocab(["कख"]))
    ids = tok.encode("<pad>")
    assert tok.pad_id not in ids


@given(DEVANAGARI)
@settings(max_examples=200, deadline=None)
def test_round_trip_on_in_alphabet_text(text):
    corpus = ["कखगघचजझटडतनपबमरलसह ािीुेो"]
    tok = train_tokenizer(corpus, vocab_size=minimum_vocab(corpus) + 5)
    assert tok.decode(tok.encode(text)) == text


@given(DEVANAGARI, st.integers(1, 30))
@settings(max_examples=200, deadline=None)
def test_truncation_bound_holds(text, max_len):
    corpus = ["कखगघचजझटडतनपबमरलसह ािीुेो"]
    tok = train_tokenizer(corpus, vocab_size=minimum_vocab(corpus))
    assert len(tok.encode(text, max_len=max_len)) <= max_len


def test_save_load_round_trip(tmp_path):
    corpus = ["नेपालमा आज"]
    tok = train_tokenizer(corpus, vocab_size=minimum_vocab(corpus) + 3)
    path = tmp_path / "tok.json"
    tok.save(path)
    loaded = SubwordTokenizer.load(path)
    assert loaded.vocab == tok.vocab
    assert loaded.merges == tok.merges
    assert loaded.fingerprint() == tok.fingerprint()


def test_unknown_version_rejected(tmp_path):
    corpus = ["कख"]
    tok = train_tokenizer(corpus, vocab_size=minimum_vocab(corpus))
    path = tmp_path / "tok.json"
    payload = tok.to_payload()
    payload["version"] = 99
    import json

    path.write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")
    with pytest.raises(IntegrityError):
        SubwordTokenizer.load(path)


# --- collate -----------------------------------------------------------------------


def test_collate_pads_to_batch_max():
    batch = collate(
        [EncodedExample((1, 2, 3), (7, 8)), EncodedExample((1, 2, 3, 4, 5), (7, 8, 9, 10))],
        pad_id=0,
    )
    assert batch.input_ids.shape == (2, 5)
    assert batch.attention_mask[0].tolist() == [1, 1, 1, 0, 0]
    assert batch.labels[0].tolist() == [7, 8, IGNORE_SENTINEL, IGNORE_SENTINEL]


def test_collate_single_example_no_padding():
    batch = collate([EncodedExample((4, 5), (6,))], pad_id=0)
    assert batch.input_ids.tolist() == [[4, 5]]
    assert batch.attention_mask.tolist() == [[1, 1]]
    assert batch.labels.tolist() == [[6]]


def test_collate_empty_is_error():
    with pytest.raises(ContractError):
        collate([], pad_id=0)


@given(
    st.lists(
        st.tuples(
            st.lists(st.integers(1, 50), min_size=1, max_size=12),
            st.lists(st.integers(1, 50), min_size=1, max_size=6),
        ),
        min_size=1,
        max_size=8,
    )
)
@settings(max_examples=100, deadline=None)
def test_collate_width_and_mask_consistency(pairs):
    examples = [EncodedExample(tuple(src), tuple(tgt)) for src, tgt in pairs]
    batch = collate(examples, pad_id=0)
    assert batch.input_ids.shape[1] == max(len(s) for s, _ in pairs)
    assert batch.labels.shape[1] == max(len(t) for _, t in pairs)
    np.testing.assert_array_equal(batch.attention_mask == 0, batch.input_ids == 0)
