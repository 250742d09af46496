import numpy as np
import pytest

from evpred.corpus import BOS, EOS
from evpred.errors import FormatError, TrainingDivergedError
from evpred.numerics import AdamState, softmax
from evpred.seq2seq import (GRADCHECK_VARIANTS, ModelConfig,
                            TrainSchedule, _decode_graph, _encode_graph,
                            _Seeder, attention_context, build_model,
                            decode_step, encode_source, forward_loss,
                            gradcheck_model, greedy_decode, init_decoder,
                            load_checkpoint, pack_batch, save_checkpoint,
                            train_batch, train_loop)


def tiny_model(cell="lstm", layers=1, attention=False, bidirectional=True,
               H=6, V=20, dropout=0.0, seed=0, max_decode_len=8):
    cfg = ModelConfig(cell=cell, layers=layers, attention=attention,
                      bidirectional=bidirectional, hidden=H, embed_dim=H,
                      vocab_size=V, dropout=dropout, max_decode_len=max_decode_len)
    return build_model(cfg, seed=seed)


# ---------------------------------------------------------------------------
# init_decoder

def test_init_decoder_zero_summary_gives_zero_state():
    model = tiny_model()
    enc = encode_source(model, [4, 5])
    enc.summaries[0][...] = 0.0
    model.bridges[0][1].value[...] = 0.0  # zero bridge bias
    states = init_decoder(enc, model)
    np.testing.assert_allclose(states[0].h, 0.0, atol=1e-15)


def test_init_decoder_shapes():
    model = tiny_model(layers=2, H=6)
    enc = encode_source(model, [4, 5, 6])
    states = init_decoder(enc, model)
    assert len(states) == 2
    for s in states:
        assert s.h.shape == (6,)
        assert s.c.shape == (6,)


def test_init_decoder_matches_manual_bridge():
    model = tiny_model()
    enc = encode_source(model, [7, 8, 9])
    W, b = model.bridges[0]
    expect = np.tanh(enc.summaries[0] @ W.value + b.value)
    states = init_decoder(enc, model)
    np.testing.assert_allclose(states[0].h, expect, atol=1e-14)


def test_init_decoder_layer_mismatch():
    m1 = tiny_model(layers=1)
    m2 = tiny_model(layers=2)
    enc = encode_source(m1, [4])
    with pytest.raises(ValueError):
        init_decoder(enc, m2)


# ---------------------------------------------------------------------------
# attention

def test_attention_single_position_is_identity():
    model = tiny_model(attention=True)
    enc = encode_source(model, [4])
    s_d = np.random.default_rng(0).standard_normal(6)
    ctx, w = attention_context(s_d, enc.states, model.att_W1.value,
                               model.att_W2.value, model.att_v.value)
    np.testing.assert_allclose(w, [1.0], atol=1e-15)
    np.testing.assert_allclose(ctx, enc.states[0], atol=1e-15)


def test_attention_identical_states_uniform_weights():
    model = tiny_model(attention=True)
    states = np.tile(np.random.default_rng(1).standard_normal(12), (4, 1))
    s_d = np.random.default_rng(2).standard_normal(6)
    ctx, w = attention_context(s_d, states, model.att_W1.value,
                               model.att_W2.value, model.att_v.value)
    np.testing.assert_allclose(w, 0.25, atol=1e-12)


def test_attention_matches_score_recomputation():
    model = tiny_model(attention=True)
    enc = encode_source(model, [3, 4, 5, 6])
    s_d = np.random.default_rng(3).standard_normal(6)
    ctx, w = attention_context(s_d, enc.states, model.att_W1.value,
                               model.att_W2.value, model.att_v.value)
    scores = np.array([
        model.att_v.value @ np.tanh(model.att_W1.value.T @ e +
                                    model.att_W2.value.T @ s_d)
        for e in enc.states])
    np.testing.assert_allclose(w, softmax(scores), atol=1e-12)
    assert abs(w.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(ctx, w @ enc.states, atol=1e-12)


def test_attention_weights_sum_to_one_every_decode_step():
    model = tiny_model(attention=True, max_decode_len=6)
    enc = encode_source(model, [4, 5, 6])
    states = init_decoder(enc, model)
    prev = BOS
    for _ in range(4):
        step = decode_step(prev, states, enc, model)
        assert step.weights is not None
        assert abs(step.weights.sum() - 1.0) < 1e-9
        assert np.all(step.weights >= 0)
        states = step.states
        prev = int(np.argmax(step.logits))
        if prev == EOS:
            break


# ---------------------------------------------------------------------------
# decode_step

def test_decode_step_first_input_is_bos_embedding():
    model = tiny_model()
    enc = encode_source(model, [4, 5])
    states = init_decoder(enc, model)
    step = decode_step(BOS, states, enc, model)
    assert step.logits.shape == (20,)


def test_decode_step_logit_width_both_attention_settings():
    for att in (False, True):
        model = tiny_model(attention=att)
        enc = encode_source(model, [4, 5])
        step = decode_step(BOS, init_decoder(enc, model), enc, model)
        assert step.logits.shape == (20,)


def test_decode_step_rejects_bad_id():
    model = tiny_model()
    enc = encode_source(model, [4])
    with pytest.raises(ValueError):
        decode_step(99, init_decoder(enc, model), enc, model)


def test_teacher_forced_loss_is_mean_of_stepwise_terms():
    """Batched loss for one pair == mean over steps of single-step xent."""
    from evpred.numerics import softmax_cross_entropy

    model = tiny_model(attention=True)
    src, tgt = [4, 5, 6], [7, 8]
    packed = pack_batch([(src, tgt)])
    batch_loss, per_ex = forward_loss(model, packed)

    enc = encode_source(model, src)
    states = init_decoder(enc, model)
    inputs = [BOS] + tgt
    outputs = tgt + [EOS]
    losses = []
    for y_in, y_out in zip(inputs, outputs):
        step = decode_step(y_in, states, enc, model)
        losses.append(softmax_cross_entropy(step.logits, y_out)[0])
        states = step.states
    assert batch_loss == pytest.approx(np.mean(losses), abs=1e-9)
    assert per_ex[0] == pytest.approx(np.mean(losses), abs=1e-9)


# ---------------------------------------------------------------------------
# train_batch

def test_train_batch_lr_zero_keeps_parameters_loss_finite():
    model = tiny_model()
    before = model.params.snapshot()
    adam = AdamState.for_params(model.params, lr=0.0)
    loss, _ = train_batch(model, [([4, 5], [6])], adam)
    assert np.isfinite(loss)
    after = model.params.snapshot()
    for k in before:
        np.testing.assert_array_equal(before[k], after[k])


def test_train_batch_untrained_loss_near_uniform():
    model = tiny_model(V=20)
    # tiny init -> logits near zero -> per-position loss near ln(20)
    adam = AdamState.for_params(model.params, lr=0.0)
    loss, _ = train_batch(model, [([4, 5, 6], [7, 8, 9])], adam)
    assert abs(loss - np.log(20)) < 0.2


def test_train_batch_overfits_single_pair():
    model = tiny_model(cell="lstm", layers=1, attention=False, H=16, seed=1)
    adam = AdamState.for_params(model.params, lr=0.01)
    pair = ([4, 5, 6], [7, 8, 9])
    for step in range(200):
        loss, _ = train_batch(model, [pair], adam, dropout_seed=step)
    assert loss < 0.1
    assert greedy_decode(model, [4, 5, 6]) == [7, 8, 9]


def test_train_batch_raises_on_nan_parameters():
    model = tiny_model()
    model.params["out_W"].value[0, 0] = np.nan
    adam = AdamState.for_params(model.params, lr=0.1)
    with pytest.raises((TrainingDivergedError, ValueError)):
        train_batch(model, [([4], [5])], adam)


def test_batched_loss_equals_single_pair_losses():
    model = tiny_model(cell="gru", layers=2, attention=True, H=8)
    pairs = [([4, 5, 6, 7], [8, 9]), ([10, 11], [12, 13, 14]), ([15], [16])]
    _, per_ex = forward_loss(model, pack_batch(pairs))
    for b, pair in enumerate(pairs):
        single_loss, _ = forward_loss(model, pack_batch([pair]))
        assert per_ex[b] == pytest.approx(single_loss, abs=1e-6)


@pytest.mark.parametrize("attention", [False, True])
def test_padding_invariance_of_logits(attention):
    """A short source packed next to a longer one gets the same logits as
    packed alone (mask and gather correctness)."""
    model = tiny_model(cell="lstm", layers=2, attention=attention, H=8)
    short = ([4, 5], [6])
    long = ([7, 8, 9, 10, 11, 12], [13, 14, 15])
    tape = None
    packed_pair = pack_batch([short, long])
    seeder = _Seeder(0)
    enc, summ = _encode_graph(model, packed_pair[0], packed_pair[1], tape, seeder, False)
    logits_pair, _ = _decode_graph(model, summ, enc, packed_pair[1],
                                   packed_pair[2], tape, _Seeder(0), False)
    packed_solo = pack_batch([short])
    enc2, summ2 = _encode_graph(model, packed_solo[0], packed_solo[1], tape,
                                _Seeder(0), False)
    logits_solo, _ = _decode_graph(model, summ2, enc2, packed_solo[1],
                                   packed_solo[2], tape, _Seeder(0), False)
    np.testing.assert_allclose(logits_pair.value[:2, 0], logits_solo.value[:, 0],
                               atol=1e-12)


def test_non_attention_logits_depend_only_on_summary():
    """Perturbing a non-final encoder state leaves non-attention step-1
    logits unchanged."""
    model = tiny_model(cell="gru", layers=1, attention=False, H=8)
    packed = pack_batch([([4, 5, 6], [7])])
    src, src_len = packed[0], packed[1]
    enc, summ = _encode_graph(model, src, src_len, None, _Seeder(0), False)
    logits_a, _ = _decode_graph(model, summ, enc, src_len, packed[2], None,
                                _Seeder(0), False)
    enc.value[1] += 100.0  # downstream copy of a middle encoder state
    logits_b, _ = _decode_graph(model, summ, enc, src_len, packed[2], None,
                                _Seeder(0), False)
    np.testing.assert_array_equal(logits_a.value, logits_b.value)


# ---------------------------------------------------------------------------
# greedy decode

def test_greedy_immediate_eos_gives_empty_output():
    model = tiny_model()
    model.out_b.value[EOS] = 50.0
    assert greedy_decode(model, [4, 5]) == []


def test_greedy_truncates_at_max_decode_len():
    model = tiny_model(max_decode_len=5)
    model.out_b.value[7] = 50.0  # never EOS
    assert greedy_decode(model, [4]) == [7] * 5


def test_greedy_rejects_empty_source():
    model = tiny_model()
    with pytest.raises(ValueError):
        greedy_decode(model, [])


def test_greedy_deterministic():
    model = tiny_model(dropout=0.5)  # dropout must be inert at inference
    a = greedy_decode(model, [4, 5, 6])
    b = greedy_decode(model, [4, 5, 6])
    assert a == b


def test_greedy_tie_breaks_to_lowest_id():
    model = tiny_model()
    model.out_W.value[...] = 0.0
    model.out_b.value[...] = 0.0  # all logits equal -> argmax id 0
    out = greedy_decode(model, [4])
    assert out == [0] * model.config.max_decode_len


# ---------------------------------------------------------------------------
# train_loop selection rule

class FakeVocab:
    def encode(self, tokens):
        return [4 + (hash(t) % 10) for t in tokens]

    def decode(self, ids):
        return [f"w{i}" for i in ids]


def test_train_loop_best_epoch_tie_rule(monkeypatch):
    import evpred.seq2seq as s2s

    bleus = iter([2.0, 3.1, 3.1, 2.8])

    class R:
        def __init__(self, b):
            self.bleu = b

    monkeypatch.setattr(s2s, "bleu_corpus", lambda c, r: R(next(bleus) / 10))
    model = tiny_model(H=4, V=20)
    from evpred.corpus import PairCorpus, SentencePair
    corpus = PairCorpus([SentencePair(("a",), ("b",))])
    schedule = TrainSchedule(epochs=4, batch_size=4, lr=0.0, seed=0)
    best_epoch, history = train_loop(model, FakeVocab(), corpus, corpus, schedule)
    assert best_epoch == 2
    assert [round(h.dev_bleu, 3) for h in history] == [0.2, 0.31, 0.31, 0.28]


def test_train_loop_single_epoch_is_best():
    from evpred.corpus import PairCorpus, SentencePair, build_vocabulary
    corpus = PairCorpus([SentencePair(("a", "b"), ("c",))])
    vocab = build_vocabulary(corpus, 10)
    model = tiny_model(H=4, V=len(vocab))
    best_epoch, history = train_loop(model, vocab, corpus, corpus,
                                     TrainSchedule(epochs=1, batch_size=2, lr=0.001, seed=0))
    assert best_epoch == 1
    assert len(history) == 1


# ---------------------------------------------------------------------------
# gradcheck harness

def test_gradcheck_detects_corrupted_gradient():
    err = gradcheck_model("gru", 1, False, samples_per_tensor=2, corrupt=True)
    assert err > 1e-4


def test_gradcheck_variant_grid_is_eight():
    assert len(GRADCHECK_VARIANTS) == 8


@pytest.mark.parametrize("cell", ["lstm", "gru"])
def test_gradcheck_unidirectional_baseline(cell):
    err = gradcheck_model(cell, 1, False, bidirectional=False,
                          samples_per_tensor=4)
    assert err < 1e-4


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_roundtrip(tmp_path):
    model = tiny_model(cell="gru", layers=2, attention=True, H=5, seed=3)
    model.vocab_hash = "abc123"
    path = tmp_path / "model.evp"
    save_checkpoint(path, model)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    assert loaded.vocab_hash == "abc123"
    for name, var in model.params.items():
        np.testing.assert_array_equal(loaded.params[name].value, var.value)


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.evp"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncated_payload(tmp_path):
    model = tiny_model(H=4)
    path = tmp_path / "model.evp"
    save_checkpoint(path, model)
    data = path.read_bytes()
    path.write_bytes(data[:-16])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_manifest_mismatch(tmp_path):
    import json
    import struct

    model = tiny_model(H=4)
    path = tmp_path / "model.evp"
    save_checkpoint(path, model)
    raw = path.read_bytes()
    hlen = struct.unpack("<Q", raw[8:16])[0]
    header = json.loads(raw[16:16 + hlen])
    header["tensors"][0]["shape"] = [1, 1]
    blob = json.dumps(header, sort_keys=True).encode()
    path.write_bytes(raw[:8] + struct.pack("<Q", len(blob)) + blob + raw[16 + hlen:])
    with pytest.raises(FormatError):
        load_checkpoint(path)
