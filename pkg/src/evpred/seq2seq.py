"""The full encoder-decoder model.

Training runs a batched, teacher-forced graph on the tape (time-major
arrays, ragged batches handled by per-column masking); inference decodes
greedily one example at a time through the same kernels. The two paths share
all parameters but not code, which keeps the inference path free of tape
bookkeeping.

Checkpoint format: magic ``EVPRED1\\n``, uint64 LE header length, JSON header
(config, vocabulary hash, tensor manifest), then raw little-endian float64
tensor payloads in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import BOS, EOS, PAD
from .errors import FormatError, TrainingDivergedError
from .evaluation import bleu_corpus
from .numerics import (AdamState, ParameterSet, Tape, Var, adam_step, affine,
                       concat, dropout, dropout_op, embedding_rows,
                       gather_time, masked_cross_entropy, rnn_layer, softmax,
                       tanh, time_reverse)
from .recurrent import (CellParams, CellState, EncoderStates, cell_step,
                        encode_bidirectional, init_cell_params)
from .rng import stream_rng, subseed

LR_GRID = (0.0001, 0.0005, 0.001, 0.005, 0.01)


@dataclass
class ModelConfig:
    cell: str = "lstm"
    layers: int = 2
    attention: bool = False
    bidirectional: bool = True
    hidden: int = 300
    embed_dim: int = 300
    vocab_size: int = 0
    dropout: float = 0.5
    max_decode_len: int = 30

    def __post_init__(self):
        if self.cell not in ("lstm", "gru"):
            raise ValueError(f"cell must be lstm|gru, got {self.cell!r}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.hidden <= 0 or self.embed_dim <= 0:
            raise ValueError("hidden and embed_dim must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def enc_width(self) -> int:
        return self.hidden * (2 if self.bidirectional else 1)


class Seq2SeqModel:
    """Parameter container plus the wiring between modules.

    Built through build_model(); attribute layout (also the checkpoint
    manifest order) is: embeddings, encoder layers (fwd then bwd per layer),
    decoder layers, bridges, attention, output projection.
    """

    def __init__(self, config: ModelConfig, seed: int = 0,
                 pretrained: np.ndarray | None = None, vocab_hash: str = ""):
        if config.vocab_size < 5:
            raise ValueError("vocab_size must cover the 4 specials")
        self.config = config
        self.vocab_hash = vocab_hash
        p = self.params = ParameterSet()
        V, D, H = config.vocab_size, config.embed_dim, config.hidden
        S = config.enc_width

        if pretrained is not None:
            if pretrained.shape != (V, D):
                raise ValueError(
                    f"pretrained embeddings {pretrained.shape} != ({V}, {D})")
            self.src_emb = p.add("src_emb", pretrained)
            self.tgt_emb = p.add("tgt_emb", pretrained.copy())
        else:
            self.src_emb = p.add(
                "src_emb", stream_rng(seed, "init", "src_emb").uniform(-0.1, 0.1, (V, D)))
            self.tgt_emb = p.add(
                "tgt_emb", stream_rng(seed, "init", "tgt_emb").uniform(-0.1, 0.1, (V, D)))

        self.enc_layers: list[tuple[CellParams, CellParams | None]] = []
        for l in range(config.layers):
            in_dim = D if l == 0 else S
            fwd = init_cell_params(config.cell, in_dim, H, p, f"enc{l}_fwd", seed)
            bwd = (init_cell_params(config.cell, in_dim, H, p, f"enc{l}_bwd", seed)
                   if config.bidirectional else None)
            self.enc_layers.append((fwd, bwd))

        self.dec_layers: list[CellParams] = []
        for l in range(config.layers):
            in_dim = D if l == 0 else H
            self.dec_layers.append(
                init_cell_params(config.cell, in_dim, H, p, f"dec{l}", seed))

        self.bridges: list[tuple[Var, Var]] = []
        for l in range(config.layers):
            rng = stream_rng(seed, "init", f"bridge{l}_W")
            limit = np.sqrt(6.0 / (S + H))
            W = p.add(f"bridge{l}_W", rng.uniform(-limit, limit, (S, H)))
            b = p.add(f"bridge{l}_b", np.zeros(H))
            self.bridges.append((W, b))

        if config.attention:
            lim1 = np.sqrt(6.0 / (S + H))
            lim2 = np.sqrt(6.0 / (H + H))
            limv = np.sqrt(6.0 / (H + 1))
            self.att_W1 = p.add(
                "att_W1", stream_rng(seed, "init", "att_W1").uniform(-lim1, lim1, (S, H)))
            self.att_W2 = p.add(
                "att_W2", stream_rng(seed, "init", "att_W2").uniform(-lim2, lim2, (H, H)))
            self.att_v = p.add(
                "att_v", stream_rng(seed, "init", "att_v").uniform(-limv, limv, (H,)))
        else:
            self.att_W1 = self.att_W2 = self.att_v = None

        proj_in = H + (S if config.attention else 0)
        limo = np.sqrt(6.0 / (proj_in + V))
        self.out_W = p.add(
            "out_W", stream_rng(seed, "init", "out_W").uniform(-limo, limo, (proj_in, V)))
        self.out_b = p.add("out_b", np.zeros(V))


def build_model(config: ModelConfig, seed: int = 0,
                pretrained: np.ndarray | None = None,
                vocab_hash: str = "") -> Seq2SeqModel:
    return Seq2SeqModel(config, seed=seed, pretrained=pretrained, vocab_hash=vocab_hash)


# ---------------------------------------------------------------------------
# batched training graph

class _Seeder:
    """Sequential per-site dropout seeds, stable across runs."""

    def __init__(self, seed: int):
        self.seed = seed
        self.site = 0

    def next(self) -> int:
        self.site += 1
        return subseed(self.seed, "site", self.site)


def pack_batch(pairs):
    """Pad encoded (src_ids, tgt_ids) pairs into time-major id arrays.

    Decoder inputs are [BOS, y1..yn]; outputs are [y1..yn, EOS]. The weight
    array carries mask / (steps_b * B), so a weighted sum of per-position
    losses is the mean over examples of each example's per-position mean.
    """
    B = len(pairs)
    if B == 0:
        raise ValueError("empty batch")
    src_len = np.array([len(s) for s, _ in pairs], dtype=np.int64)
    if src_len.min() < 1:
        raise ValueError("empty source in batch")
    tgt_steps = np.array([len(t) + 1 for _, t in pairs], dtype=np.int64)
    T_s, T_t = int(src_len.max()), int(tgt_steps.max())
    src = np.full((T_s, B), PAD, dtype=np.int64)
    tgt_in = np.full((T_t, B), PAD, dtype=np.int64)
    tgt_out = np.full((T_t, B), PAD, dtype=np.int64)
    for b, (s, t) in enumerate(pairs):
        src[:len(s), b] = s
        tgt_in[0, b] = BOS
        tgt_in[1:len(t) + 1, b] = t
        tgt_out[:len(t), b] = t
        tgt_out[len(t), b] = EOS
    mask = np.arange(T_t)[:, None] < tgt_steps[None, :]
    weights = mask / (tgt_steps[None, :] * B)
    return src, src_len, tgt_in, tgt_out, weights, tgt_steps


def _encode_graph(model, src, src_len, tape, seeder, train):
    cfg = model.config
    x = embedding_rows(model.src_emb, src, tape)
    summaries = []
    for fwd, bwd in model.enc_layers:
        x = dropout_op(x, cfg.dropout, seeder.next(), train, tape)
        fw = rnn_layer(x, fwd, tape)
        if bwd is not None:
            xr = time_reverse(x, src_len, tape)
            bwr = rnn_layer(xr, bwd, tape)
            bw = time_reverse(bwr, src_len, tape)
            x = concat([fw, bw], tape)
            summ = concat([gather_time(fw, src_len - 1, tape),
                           gather_time(bw, np.zeros_like(src_len), tape)], tape)
        else:
            x = fw
            summ = gather_time(fw, src_len - 1, tape)
        summaries.append(summ)
    return x, summaries


def _attention_graph(dec, enc, src_len, W1, W2, v, tape):
    """Additive attention over all decoder steps at once.

    dec is (T, B, H), enc is (m, B, S). Scores e[t,m,b] = v . tanh(W1 enc_m +
    W2 dec_t); invalid source positions are masked out of the softmax.
    Returns (context Var (T, B, S), weights (T, m, B)).
    """
    E, D = enc.value, dec.value
    m, B, S = E.shape
    EW1 = np.einsum("mbs,sa->mba", E, W1.value)
    DW2 = np.einsum("tbh,ha->tba", D, W2.value)
    u = np.tanh(EW1[None] + DW2[:, None])            # (T, m, B, A)
    e = np.einsum("tmba,a->tmb", u, v.value)
    valid = np.arange(m)[:, None] < src_len[None, :]  # (m, B)
    e = np.where(valid[None], e, -np.inf)
    w = softmax(e, axis=1)
    ctx = Var(np.einsum("tmb,mbs->tbs", w, E))
    if tape is not None:
        def backward():
            if ctx.grad is None:
                return
            dctx = ctx.grad
            dw = np.einsum("tbs,mbs->tmb", dctx, E)
            dE = np.einsum("tmb,tbs->mbs", w, dctx)
            s_dot = np.einsum("tmb,tmb->tb", w, dw)
            ds = w * (dw - s_dot[:, None, :])
            v.add_grad(np.einsum("tmb,tmba->a", ds, u))
            dpre = ds[..., None] * v.value * (1.0 - u * u)
            dEW1 = dpre.sum(axis=0)
            dDW2 = dpre.sum(axis=1)
            W1.add_grad(np.einsum("mbs,mba->sa", E, dEW1))
            dE += np.einsum("mba,sa->mbs", dEW1, W1.value)
            W2.add_grad(np.einsum("tbh,tba->ha", D, dDW2))
            dec.add_grad(np.einsum("tba,ha->tbh", dDW2, W2.value))
            enc.add_grad(dE)
        tape.record(backward)
    return ctx, w


def _decode_graph(model, summaries, enc_out, src_len, tgt_in, tape, seeder, train):
    cfg = model.config
    inits = [tanh(affine(summaries[l], *model.bridges[l], tape), tape)
             for l in range(cfg.layers)]
    y = embedding_rows(model.tgt_emb, tgt_in, tape)
    for l, cell in enumerate(model.dec_layers):
        y = dropout_op(y, cfg.dropout, seeder.next(), train, tape)
        y = rnn_layer(y, cell, tape, h0=inits[l])
    if cfg.attention:
        ctx, w = _attention_graph(y, enc_out, src_len,
                                  model.att_W1, model.att_W2, model.att_v, tape)
        feat = concat([y, ctx], tape)
    else:
        feat, w = y, None
    feat = dropout_op(feat, cfg.dropout, seeder.next(), train, tape)
    logits = affine(feat, model.out_W, model.out_b, tape)
    return logits, w


def forward_loss(model, packed, tape=None, train=False, dropout_seed=0):
    """Teacher-forced loss over a packed batch.

    Returns (loss, per_example) where loss is the mean over examples of each
    example's per-position mean cross-entropy (EOS step included).
    """
    src, src_len, tgt_in, tgt_out, weights, tgt_steps = packed
    seeder = _Seeder(dropout_seed)
    enc_out, summaries = _encode_graph(model, src, src_len, tape, seeder, train)
    logits, _ = _decode_graph(model, summaries, enc_out, src_len, tgt_in,
                              tape, seeder, train)
    loss, nll = masked_cross_entropy(logits, tgt_out, weights, tape)
    per_example = (nll * (weights > 0)).sum(axis=0) / tgt_steps
    return loss, per_example


def train_batch(model, batch_pairs, adam: AdamState, *, dropout_seed: int = 0,
                grad_clip: float = 0.0):
    """One teacher-forced step: forward, backprop, Adam update.

    Returns (pre-update mean loss, per-example losses).
    """
    packed = pack_batch(batch_pairs)
    model.params.zero_grads()
    tape = Tape()
    loss, per_example = forward_loss(model, packed, tape, train=True,
                                     dropout_seed=dropout_seed)
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss}")
    tape.backward()
    adam_step(model.params, adam, grad_clip=grad_clip)
    return loss, per_example


# ---------------------------------------------------------------------------
# inference path (single example, no tape)

def encode_source(model, src_ids) -> EncoderStates:
    return encode_bidirectional(src_ids, model.enc_layers, model.src_emb.value)


def init_decoder(enc: EncoderStates, model) -> list[CellState]:
    """Bridge each encoder layer's summary into that decoder layer's h0."""
    cfg = model.config
    if len(enc.summaries) != cfg.layers:
        raise ValueError(
            f"encoder has {len(enc.summaries)} layers, config wants {cfg.layers}")
    states = []
    for l in range(cfg.layers):
        W, b = model.bridges[l]
        h = np.tanh(enc.summaries[l] @ W.value + b.value)
        states.append(CellState(h=h, c=np.zeros_like(h) if cfg.cell == "lstm" else None))
    return states


def attention_context(s_d: np.ndarray, enc_states: np.ndarray,
                      W1: np.ndarray, W2: np.ndarray, v: np.ndarray):
    """Additive-attention context for one decoder state.

    Returns (context (S,), weights (m,)); weights are a softmax over source
    positions and sum to 1.
    """
    u = np.tanh(enc_states @ W1 + s_d @ W2)
    w = softmax(u @ v)
    return w @ enc_states, w


@dataclass
class DecoderStep:
    states: list[CellState]
    logits: np.ndarray
    context: np.ndarray | None = None
    weights: np.ndarray | None = None


def decode_step(y_prev_id: int, states: list[CellState], enc: EncoderStates,
                model, mode: str = "infer", seed: int = 0) -> DecoderStep:
    """One decoder step from the previous target id (BOS at step 1)."""
    cfg = model.config
    if not 0 <= y_prev_id < cfg.vocab_size:
        raise ValueError(f"target id {y_prev_id} out of range")
    x = model.tgt_emb.value[y_prev_id]
    new_states = []
    site = 0
    for l, cell in enumerate(model.dec_layers):
        site += 1
        x = dropout(x, cfg.dropout, mode, subseed(seed, "site", site))
        s = cell_step(x, states[l], cell)
        new_states.append(s)
        x = s.h
    if cfg.attention:
        ctx, w = attention_context(x, enc.states, model.att_W1.value,
                                   model.att_W2.value, model.att_v.value)
        feat = np.concatenate([x, ctx])
    else:
        ctx, w = None, None
        feat = x
    site += 1
    feat = dropout(feat, cfg.dropout, mode, subseed(seed, "site", site))
    logits = feat @ model.out_W.value + model.out_b.value
    if not np.all(np.isfinite(logits)):
        raise TrainingDivergedError("non-finite logits in decoder")
    return DecoderStep(states=new_states, logits=logits, context=ctx, weights=w)


def greedy_decode(model, src_ids) -> list[int]:
    """Argmax decoding (ties break to the lowest id); stops at EOS or
    max_decode_len; EOS is not part of the output."""
    src_ids = list(src_ids)
    if not src_ids:
        raise ValueError("empty source")
    enc = encode_source(model, src_ids)
    states = init_decoder(enc, model)
    prev = BOS
    out: list[int] = []
    for _ in range(model.config.max_decode_len):
        step = decode_step(prev, states, enc, model, mode="infer")
        states = step.states
        nxt = int(np.argmax(step.logits))
        if nxt == EOS:
            break
        out.append(nxt)
        prev = nxt
    return out


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainSchedule:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.001
    seed: int = 0
    grad_clip: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_bleu: float


def train_loop(model, vocab, train_corpus, dev_corpus, schedule: TrainSchedule,
               on_epoch=None):
    """Epoch loop with dev-BLEU model selection.

    After each epoch the dev set is greedy-decoded and scored with corpus
    BLEU; the parameters of the best epoch (ties -> earlier) are restored
    into the model before returning. ``on_epoch(stats, is_best, model)`` runs
    after each epoch (checkpointing hook). Returns (best_epoch, history).
    """
    train_enc = [(vocab.encode(p.source), vocab.encode(p.target)) for p in train_corpus]
    dev_src = [vocab.encode(p.source) for p in dev_corpus]
    dev_refs = [list(p.target) for p in dev_corpus]
    adam = AdamState.for_params(model.params, schedule.lr, beta1=schedule.beta1,
                                beta2=schedule.beta2, eps=schedule.eps)
    best_bleu, best_epoch = -1.0, 0
    best_values = model.params.snapshot()
    history: list[EpochStats] = []
    n = len(train_enc)
    for epoch in range(1, schedule.epochs + 1):
        order = stream_rng(schedule.seed, "order", epoch).permutation(n)
        losses = []
        for bi, start in enumerate(range(0, n, schedule.batch_size)):
            batch = [train_enc[i] for i in order[start:start + schedule.batch_size]]
            loss, _ = train_batch(
                model, batch, adam,
                dropout_seed=subseed(schedule.seed, "drop", epoch, bi),
                grad_clip=schedule.grad_clip)
            losses.append(loss)
        train_loss = float(np.mean(losses)) if losses else 0.0
        if dev_src:
            preds = [vocab.decode(greedy_decode(model, s)) for s in dev_src]
            dev_bleu = bleu_corpus(preds, dev_refs).bleu
        else:
            dev_bleu = 0.0
        is_best = dev_bleu > best_bleu
        if is_best:
            best_bleu, best_epoch = dev_bleu, epoch
            best_values = model.params.snapshot()
        stats = EpochStats(epoch, train_loss, dev_bleu)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats, is_best, model)
    model.params.load(best_values)
    return best_epoch, history


# ---------------------------------------------------------------------------
# gradient-check harness

GRADCHECK_VARIANTS = tuple(
    (cell, layers, att)
    for cell in ("lstm", "gru")
    for layers in (1, 2)
    for att in (False, True)
)


def gradcheck_pairs():
    """Fixed tiny batch with ragged source/target lengths (V=20 ids)."""
    return [
        ([5, 6, 7, 8, 9], [10, 11, 12]),
        ([7, 4], [13, 14, 15, 16]),
        ([9, 8, 6], [17]),
    ]


def gradcheck_model(cell: str, layers: int, attention: bool,
                    bidirectional: bool = True, hidden: int = 8,
                    vocab_size: int = 20, seed: int = 0,
                    samples_per_tensor: int = 8,
                    corrupt: bool = False) -> float:
    """Max relative analytic-vs-central-difference error for one variant."""
    from .numerics import gradient_check

    config = ModelConfig(cell=cell, layers=layers, attention=attention,
                         bidirectional=bidirectional, hidden=hidden,
                         embed_dim=hidden, vocab_size=vocab_size,
                         dropout=0.0, max_decode_len=10)
    model = build_model(config, seed=seed)
    packed = pack_batch(gradcheck_pairs())

    def loss_fn():
        model.params.zero_grads()
        tape = Tape()
        loss, _ = forward_loss(model, packed, tape, train=False)
        tape.backward()
        if corrupt:
            first = model.params[model.params.names()[0]]
            if first.grad is None:
                first.grad = np.zeros_like(first.value)
            first.grad += 0.05
        return loss

    return gradient_check(loss_fn, model.params, h=1e-5,
                          samples_per_tensor=samples_per_tensor, seed=seed)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"EVPRED1\n"


def save_checkpoint(path, model: Seq2SeqModel):
    manifest = [{"name": name, "shape": list(v.value.shape), "dtype": "<f8"}
                for name, v in model.params.items()]
    header = {
        "config": asdict(model.config),
        "vocab_sha256": model.vocab_hash,
        "tensors": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, v in model.params.items():
            f.write(np.ascontiguousarray(v.value, dtype="<f8").tobytes())


def load_checkpoint(path) -> Seq2SeqModel:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError("bad checkpoint magic", path=path)
        (hlen,) = struct.unpack("<Q", f.read(8))
        try:
            header = json.loads(f.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise FormatError("corrupt checkpoint header", path=path) from None
        config = ModelConfig(**header["config"])
        model = build_model(config, seed=0, vocab_hash=header.get("vocab_sha256", ""))
        names = model.params.names()
        manifest = header["tensors"]
        if [t["name"] for t in manifest] != names:
            raise FormatError("checkpoint tensor manifest does not match config",
                              path=path)
        for t in manifest:
            var = model.params[t["name"]]
            shape = tuple(t["shape"])
            if shape != var.value.shape:
                raise FormatError(
                    f"tensor {t['name']!r} shape {shape} != expected {var.value.shape}",
                    path=path)
            if t["dtype"] != "<f8":
                raise FormatError(f"unsupported dtype {t['dtype']!r}", path=path)
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = f.read(n * 8)
            if len(raw) != n * 8:
                raise FormatError("truncated checkpoint payload", path=path)
            var.value[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
        if f.read(1):
            raise FormatError("trailing bytes after checkpoint payload", path=path)
    return model
