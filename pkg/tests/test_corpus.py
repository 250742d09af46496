import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evpred.corpus import (BOS, EOS, PAD, SPECIALS, UNK, PairCorpus,
                           SentencePair, Vocabulary, build_vocabulary,
                           load_embeddings, load_pair_file, split_descript,
                           split_random, tokenize)
from evpred.errors import FormatError

from oracles import descript_split_positions


def pairs_from(texts):
    return PairCorpus([SentencePair.from_text(s, t) for s, t in texts])


# ---------------------------------------------------------------------------
# tokenize

def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_basic():
    assert tokenize("Put pan in oven") == ["put", "pan", "in", "oven"]


def test_tokenize_collapses_whitespace():
    assert tokenize("  Bake  for  specified time ") == ["bake", "for", "specified", "time"]


def test_tokenize_nfc_normalizes():
    decomposed = "Café"  # e + combining acute
    composed = "Café"
    assert tokenize(decomposed) == tokenize(composed) == ["café"]


@given(st.text(max_size=80))
@settings(max_examples=200, deadline=None)
def test_tokenize_never_yields_empty_or_spaced_tokens(text):
    for tok in tokenize(text):
        assert tok
        assert not any(ch.isspace() for ch in tok)


# ---------------------------------------------------------------------------
# vocabulary

def test_build_vocabulary_frequency_and_cap():
    corpus = pairs_from([
        ("a a a b b", "a a c c d"),
    ])
    vocab = build_vocabulary(corpus, max_size=3)
    assert vocab.token_of[:4] == list(SPECIALS)
    assert vocab.token_of[4:] == ["a", "b", "c"]
    assert vocab.encode(["d"]) == [UNK]


def test_build_vocabulary_tie_break_by_first_occurrence():
    corpus = pairs_from([("z q", "q z p p")])
    vocab = build_vocabulary(corpus, max_size=10)
    # z and q both occur twice; z appeared first
    assert vocab.token_of[4:] == ["z", "q", "p"]


def test_build_vocabulary_no_unk_when_cap_large():
    corpus = pairs_from([("x y", "z w")])
    vocab = build_vocabulary(corpus, max_size=100)
    ids = vocab.encode(["x", "y", "z", "w"])
    assert UNK not in ids


def test_build_vocabulary_rejects_zero_cap():
    with pytest.raises(ValueError):
        build_vocabulary(pairs_from([("a", "b")]), max_size=0)


def test_build_vocabulary_deterministic():
    corpus = pairs_from([("u v w", "w v u"), ("v v", "u w")])
    v1 = build_vocabulary(corpus, 5)
    v2 = build_vocabulary(corpus, 5)
    assert v1.token_of == v2.token_of


def test_encode_decode_roundtrip_and_bounds():
    corpus = pairs_from([("put pan in oven", "bake for time")])
    vocab = build_vocabulary(corpus, 50)
    assert vocab.encode([]) == []
    toks = ["put", "pan"]
    assert vocab.decode(vocab.encode(toks)) == toks
    assert vocab.encode(["zzz"]) == [UNK]
    for tok in ["put", "zzz", "oven"]:
        assert 0 <= vocab.encode([tok])[0] < len(vocab)


@given(st.lists(st.sampled_from(["cut", "mix", "heat", "rare1", "rare2"]), max_size=12))
@settings(max_examples=100, deadline=None)
def test_encode_ids_always_in_range(tokens):
    corpus = pairs_from([("cut mix heat cut", "mix cut")])
    vocab = build_vocabulary(corpus, 2)
    assert all(0 <= i < len(vocab) for i in vocab.encode(tokens))


def test_vocabulary_save_load_roundtrip(tmp_path):
    corpus = pairs_from([("alpha beta", "gamma")])
    vocab = build_vocabulary(corpus, 10)
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.token_of == vocab.token_of
    assert loaded.sha256() == vocab.sha256()


def test_specials_have_fixed_ids():
    assert (PAD, UNK, BOS, EOS) == (0, 1, 2, 3)


# ---------------------------------------------------------------------------
# splits

def test_split_descript_block_of_ten():
    corpus = pairs_from([(f"s{i}", f"t{i}") for i in range(1, 11)])
    train, dev, test = split_descript(corpus)
    assert [p.source_text for p in dev] == ["s5"]
    assert [p.source_text for p in test] == ["s10"]
    assert [p.source_text for p in train] == [f"s{i}" for i in (1, 2, 3, 4, 6, 7, 8, 9)]


def test_split_descript_partial_block():
    corpus = pairs_from([(f"s{i}", "t") for i in range(1, 5)])
    train, dev, test = split_descript(corpus)
    assert len(train) == 4 and len(dev) == 0 and len(test) == 0


def test_split_descript_29150():
    corpus = pairs_from([(f"s{i}", "t") for i in range(29150)])
    train, dev, test = split_descript(corpus)
    assert (len(train), len(dev), len(test)) == (23320, 2915, 2915)


def test_split_descript_matches_position_simulator_small_n():
    for n in range(31):
        corpus = pairs_from([(f"s{i}", "t") for i in range(n)]) if n else PairCorpus([])
        train, dev, test = split_descript(corpus)
        otrain, odev, otest = descript_split_positions(n)
        assert [p.source_text for p in train] == [f"s{i}" for i in otrain]
        assert [p.source_text for p in dev] == [f"s{i}" for i in odev]
        assert [p.source_text for p in test] == [f"s{i}" for i in otest]


def test_split_descript_is_order_preserving_partition():
    corpus = pairs_from([(f"s{i}", "t") for i in range(57)])
    train, dev, test = split_descript(corpus)
    seen = [p.source_text for p in train] + [p.source_text for p in dev] + \
           [p.source_text for p in test]
    assert sorted(seen) == sorted(p.source_text for p in corpus)
    for part in (train, dev, test):
        idx = [int(p.source_text[1:]) for p in part]
        assert idx == sorted(idx)


def test_split_random_degenerate_fraction():
    corpus = pairs_from([(f"s{i}", "t") for i in range(7)])
    train, dev, test = split_random(corpus, (1.0, 0.0, 0.0), seed=3)
    assert len(train) == 7 and len(dev) == 0 and len(test) == 0


def test_split_random_sizes_and_determinism():
    corpus = pairs_from([(f"s{i}", "t") for i in range(100)])
    a = split_random(corpus, (0.8, 0.1, 0.1), seed=42)
    b = split_random(corpus, (0.8, 0.1, 0.1), seed=42)
    assert tuple(len(x) for x in a) == (80, 10, 10)
    for pa, pb in zip(a, b):
        assert [p.source_text for p in pa] == [p.source_text for p in pb]


def test_split_random_rejects_bad_fractions():
    corpus = pairs_from([("a", "b")])
    with pytest.raises(ValueError):
        split_random(corpus, (0.5, 0.2, 0.2), seed=0)
    with pytest.raises(ValueError):
        split_random(corpus, (0.5, 0.6, -0.1), seed=0)


# ---------------------------------------------------------------------------
# pair files

def test_load_pair_file_missing_tab_reports_line(tmp_path):
    path = tmp_path / "bad.pairs"
    path.write_text("good src\tgood tgt\nno tab here\n", encoding="utf-8")
    with pytest.raises(FormatError) as err:
        load_pair_file(path)
    assert err.value.line == 2


def test_load_pair_file_empty_side(tmp_path):
    path = tmp_path / "bad.pairs"
    path.write_text("src\t\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_pair_file(path)


def test_pair_file_roundtrip(tmp_path):
    path = tmp_path / "c.pairs"
    content = "Pour batter in pan\tPut pan in oven\na  b\tc\n"
    path.write_text(content, encoding="utf-8")
    corpus = load_pair_file(path)
    out = tmp_path / "out.pairs"
    corpus.write(out)
    assert out.read_text(encoding="utf-8") == content


def test_sentence_pair_rejects_empty_sides():
    with pytest.raises(ValueError):
        SentencePair((), ("x",))


# ---------------------------------------------------------------------------
# embeddings

def write_emb(path, rows, dim):
    lines = [f"{len(rows)} {dim}"]
    for word, vec in rows:
        lines.append(word + " " + " ".join(str(v) for v in vec))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_load_embeddings_shape_when_no_overlap(tmp_path):
    corpus = pairs_from([("aa bb", "cc")])
    vocab = build_vocabulary(corpus, 10)
    path = tmp_path / "emb.txt"
    write_emb(path, [("zz", [1.0, 2.0, 3.0])], 3)
    M = load_embeddings(path, vocab, 3, seed=0)
    assert M.shape == (len(vocab), 3)
    assert np.all(np.abs(M) <= 0.1)


def test_load_embeddings_copies_file_rows(tmp_path):
    corpus = pairs_from([("open oven", "bake cake")])
    vocab = build_vocabulary(corpus, 10)
    path = tmp_path / "emb.txt"
    write_emb(path, [("oven", [0.5, -0.25]), ("missing", [9.0, 9.0])], 2)
    M = load_embeddings(path, vocab, 2, seed=0)
    np.testing.assert_array_equal(M[vocab.id_of["oven"]], [0.5, -0.25])


def test_load_embeddings_seed_determinism(tmp_path):
    corpus = pairs_from([("open oven", "bake cake")])
    vocab = build_vocabulary(corpus, 10)
    path = tmp_path / "emb.txt"
    write_emb(path, [("oven", [0.5, -0.25])], 2)
    a = load_embeddings(path, vocab, 2, seed=5)
    b = load_embeddings(path, vocab, 2, seed=5)
    np.testing.assert_array_equal(a, b)


def test_load_embeddings_dim_mismatch(tmp_path):
    corpus = pairs_from([("a", "b")])
    vocab = build_vocabulary(corpus, 10)
    path = tmp_path / "emb.txt"
    write_emb(path, [("a", [1.0] * 100)], 100)
    with pytest.raises(FormatError):
        load_embeddings(path, vocab, 300, seed=0)


def test_load_embeddings_malformed_line_number(tmp_path):
    corpus = pairs_from([("a", "b")])
    vocab = build_vocabulary(corpus, 10)
    path = tmp_path / "emb.txt"
    path.write_text("2 2\na 1.0 2.0\nb 1.0 not_a_float\n", encoding="utf-8")
    with pytest.raises(FormatError) as err:
        load_embeddings(path, vocab, 2, seed=0)
    assert err.value.line == 3


def test_load_embeddings_row_count_mismatch(tmp_path):
    corpus = pairs_from([("a", "b")])
    vocab = build_vocabulary(corpus, 10)
    path = tmp_path / "emb.txt"
    path.write_text("3 2\na 1.0 2.0\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_embeddings(path, vocab, 2, seed=0)
