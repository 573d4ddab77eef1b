"""Tied-embedding attentional seq2seq written directly against numpy.

One embedding matrix serves encoder inputs, decoder inputs and the decoder
output projection. The decoder LSTM consumes embeddings only; additive
attention is applied to the post-step decoder state and the context vector
joins the state in the output bridge:

    score_j = v . tanh(enc_j W_enc + s W_dec)
    context = sum_j softmax(score)_j enc_j
    logits  = E (B [s; context]) + b

Everything is float64 and fully deterministic given parameters, inputs and
an explicit rng.
"""
from __future__ import annotations

import numpy as np

DEFAULT_TOKENS = (
    "pad", "bos", "eos",
    "left", "right", "up", "down",
    "1", "2", "3",
    "m1", "m2", "m3", "m4", "m5",
)

PARAM_ORDER = (
    "E",
    "enc_Wx", "enc_Wh", "enc_b",
    "dec_Wx", "dec_Wh", "dec_b",
    "att_We", "att_Wd", "att_v",
    "out_B", "out_b",
)

CKPT_MAGIC = "iterlearn-ckpt v1"

PAD, BOS, EOS = 0, 1, 2
N_CONTROL = 3


class Vocabulary:
    """Fixed token inventory; action tokens double as utterance words."""

    def __init__(self, tokens=DEFAULT_TOKENS):
        tokens = tuple(tokens)
        if tokens[:3] != ("pad", "bos", "eos"):
            raise ValueError("vocabulary must start with pad, bos, eos")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def encode(self, tokens):
        try:
            return [self.index[t] for t in tokens]
        except KeyError as e:
            raise ValueError(f"unknown token {e.args[0]!r}") from None

    def decode(self, ids):
        return tuple(self.tokens[i] for i in ids)

    def strip_control(self, ids):
        return [i for i in ids if i >= N_CONTROL]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def param_shapes(n_vocab: int, d: int, h: int) -> dict:
    return {
        "E": (n_vocab, d),
        "enc_Wx": (d, 4 * h), "enc_Wh": (h, 4 * h), "enc_b": (4 * h,),
        "dec_Wx": (d, 4 * h), "dec_Wh": (h, 4 * h), "dec_b": (4 * h,),
        "att_We": (h, h), "att_Wd": (h, h), "att_v": (h,),
        "out_B": (2 * h, d), "out_b": (n_vocab,),
    }


class AgentModel:
    """All learnable parameters of one bidirectional seq2seq agent."""

    def __init__(self, vocab=None, embed_dim=20, hidden_dim=20, params=None):
        self.vocab = vocab if vocab is not None else Vocabulary()
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        shapes = param_shapes(len(self.vocab), embed_dim, hidden_dim)
        if params is None:
            params = {k: np.zeros(s) for k, s in shapes.items()}
        for k, s in shapes.items():
            if params[k].shape != s:
                raise ValueError(f"parameter {k}: expected shape {s}, got {params[k].shape}")
        self.params = params

    @classmethod
    def initialize(cls, seed, vocab=None, embed_dim=20, hidden_dim=20):
        """Uniform [-0.1, 0.1] init; LSTM forget-gate biases set to 1."""
        rng = np.random.default_rng(seed)
        vocab = vocab if vocab is not None else Vocabulary()
        shapes = param_shapes(len(vocab), embed_dim, hidden_dim)
        params = {k: rng.uniform(-0.1, 0.1, size=shapes[k]) for k in PARAM_ORDER}
        h = hidden_dim
        params["enc_b"][h:2 * h] = 1.0
        params["dec_b"][h:2 * h] = 1.0
        return cls(vocab, embed_dim, hidden_dim, params)

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def _check_ids(model, ids):
    n = len(model.vocab)
    for i in ids:
        if not 0 <= i < n:
            raise ValueError(f"token index {i} outside vocabulary of size {n}")


def _pad_batch(seqs):
    lengths = [len(s) for s in seqs]
    T = max(lengths)
    ids = np.zeros((len(seqs), T), dtype=np.int64)
    mask = np.zeros((len(seqs), T))
    for b, s in enumerate(seqs):
        ids[b, : len(s)] = s
        mask[b, : len(s)] = 1.0
    return ids, mask


def _lstm_forward(Wx, Wh, b, X, mask, h0=None, c0=None):
    """Masked LSTM over (B, T, d) embeddings; rows keep their last real state
    through padded steps. Gate layout in the weight columns is [i, f, o, g]."""
    B, T, _ = X.shape
    hd = Wh.shape[0]
    Zx = X @ Wx + b
    H = np.empty((B, T, hd))
    h = np.zeros((B, hd)) if h0 is None else h0
    c = np.zeros((B, hd)) if c0 is None else c0
    caches = []
    for t in range(T):
        z = Zx[:, t] + h @ Wh
        sig = _sigmoid(z[:, : 3 * hd])
        i = sig[:, :hd]
        f = sig[:, hd:2 * hd]
        o = sig[:, 2 * hd:]
        g = np.tanh(z[:, 3 * hd:])
        c_cell = f * c + i * g
        tc = np.tanh(c_cell)
        m = mask[:, t:t + 1]
        caches.append((h, c, i, f, o, g, c_cell, tc, m))
        h = m * (o * tc) + (1.0 - m) * h
        c = m * c_cell + (1.0 - m) * c
        H[:, t] = h
    return H, (h, c), caches


def _lstm_backward(Wx, Wh, X, caches, dH, dh_last, dc_last, grads, prefix):
    B, T, d = X.shape
    hd = Wh.shape[0]
    dZ = np.empty((B, T, 4 * hd))
    dh = dh_last
    dc = dc_last
    for t in reversed(range(T)):
        h_prev, c_prev, i, f, o, g, c_cell, tc, m = caches[t]
        dh = dh + dH[:, t]
        dh_cell = m * dh
        dc_cell = m * dc
        do = dh_cell * tc
        dct = dc_cell + dh_cell * o * (1.0 - tc * tc)
        dz = dZ[:, t]
        dz[:, :hd] = (dct * g) * i * (1.0 - i)
        dz[:, hd:2 * hd] = (dct * c_prev) * f * (1.0 - f)
        dz[:, 2 * hd:3 * hd] = do * o * (1.0 - o)
        dz[:, 3 * hd:] = (dct * i) * (1.0 - g * g)
        grads[prefix + "Wh"] += h_prev.T @ dz
        dh = (1.0 - m) * dh + dz @ Wh.T
        dc = (1.0 - m) * dc + dct * f
    grads[prefix + "Wx"] += X.reshape(B * T, d).T @ dZ.reshape(B * T, 4 * hd)
    grads[prefix + "b"] += dZ.sum(axis=(0, 1))
    dX = dZ @ Wx.T
    return dX, dh, dc


def _attend_all(params, H_enc, enc_neg, dec_H):
    """Additive attention of every decoder state over all encoder states."""
    enc_proj = H_enc @ params["att_We"]                       # (B,Te,h)
    sproj = dec_H @ params["att_Wd"]                          # (B,To,h)
    A = np.tanh(enc_proj[:, None, :, :] + sproj[:, :, None, :])  # (B,To,Te,h)
    scores = A @ params["att_v"] + enc_neg[:, None, :]        # (B,To,Te)
    scores = scores - scores.max(axis=2, keepdims=True)
    e = np.exp(scores)
    alpha = e / e.sum(axis=2, keepdims=True)
    ctx = np.einsum("bts,bsh->bth", alpha, H_enc)
    return alpha, A, ctx


def _forward(model, src_ids, src_mask, dec_ids, dec_mask):
    p = model.params
    E = p["E"]
    X_enc = E[src_ids]
    H_enc, (hT, cT), enc_caches = _lstm_forward(p["enc_Wx"], p["enc_Wh"], p["enc_b"], X_enc, src_mask)
    X_dec = E[dec_ids]
    dec_H, _, dec_caches = _lstm_forward(p["dec_Wx"], p["dec_Wh"], p["dec_b"], X_dec, dec_mask, hT, cT)
    enc_neg = (src_mask - 1.0) * 1e9
    alpha, A, ctx = _attend_all(p, H_enc, enc_neg, dec_H)
    concat = np.concatenate([dec_H, ctx], axis=2)             # (B,To,2h)
    proj = concat @ p["out_B"]                                # (B,To,d)
    logits = proj @ E.T + p["out_b"]                          # (B,To,V)
    cache = dict(
        src_ids=src_ids, src_mask=src_mask, dec_ids=dec_ids,
        X_enc=X_enc, H_enc=H_enc, enc_caches=enc_caches,
        X_dec=X_dec, dec_H=dec_H, dec_caches=dec_caches,
        alpha=alpha, A=A, ctx=ctx, concat=concat, proj=proj,
    )
    return logits, cache


def _backward(model, cache, dlogits):
    p = model.params
    grads = model.zero_grads()
    E = p["E"]
    proj, concat = cache["proj"], cache["concat"]
    H_enc, dec_H = cache["H_enc"], cache["dec_H"]
    alpha, A = cache["alpha"], cache["A"]
    hd = model.hidden_dim

    grads["out_b"] += dlogits.sum(axis=(0, 1))
    grads["E"] += np.einsum("btv,btd->vd", dlogits, proj)
    dproj = dlogits @ E
    grads["out_B"] += np.einsum("btk,btd->kd", concat, dproj)
    dconcat = dproj @ p["out_B"].T
    dS = dconcat[:, :, :hd].copy()
    dctx = dconcat[:, :, hd:]

    # attention
    dalpha = np.einsum("bth,bsh->bts", dctx, H_enc)
    dH_enc = np.einsum("bts,bth->bsh", alpha, dctx)
    dscores = alpha * (dalpha - (alpha * dalpha).sum(axis=2, keepdims=True))
    grads["att_v"] += np.einsum("btsh,bts->h", A, dscores)
    darg = dscores[:, :, :, None] * p["att_v"] * (1.0 - A * A)  # (B,To,Te,h)
    denc_proj = darg.sum(axis=1)                                # (B,Te,h)
    dsproj = darg.sum(axis=2)                                   # (B,To,h)
    grads["att_We"] += np.einsum("bsh,bsk->hk", H_enc, denc_proj)
    dH_enc += denc_proj @ p["att_We"].T
    grads["att_Wd"] += np.einsum("bth,btk->hk", dec_H, dsproj)
    dS += dsproj @ p["att_Wd"].T

    # decoder LSTM, then its initial state feeds the encoder's final state
    zero = np.zeros_like(dS[:, 0])
    dX_dec, dh0, dc0 = _lstm_backward(
        p["dec_Wx"], p["dec_Wh"], cache["X_dec"], cache["dec_caches"], dS, zero, zero, grads, "dec_"
    )
    dX_enc, _, _ = _lstm_backward(
        p["enc_Wx"], p["enc_Wh"], cache["X_enc"], cache["enc_caches"], dH_enc, dh0, dc0, grads, "enc_"
    )

    # tied embedding gathers encoder-input, decoder-input and output pathways
    B, To, d = dX_dec.shape
    np.add.at(grads["E"], cache["dec_ids"].ravel(), dX_dec.reshape(B * To, d))
    B, Te, d = dX_enc.shape
    np.add.at(grads["E"], cache["src_ids"].ravel(), dX_enc.reshape(B * Te, d))
    return grads


def _ce_and_dlogits(logits, tgt_ids, tgt_mask):
    m = logits.max(axis=-1, keepdims=True)
    ex = np.exp(logits - m)
    Z = ex.sum(axis=-1, keepdims=True)
    logp = logits - m - np.log(Z)
    n_tok = tgt_mask.sum()
    B, T = tgt_ids.shape
    bi = np.arange(B)[:, None]
    ti = np.arange(T)[None, :]
    loss = -(logp[bi, ti, tgt_ids] * tgt_mask).sum() / n_tok
    dlogits = ex / Z
    dlogits[bi, ti, tgt_ids] -= 1.0
    dlogits *= (tgt_mask / n_tok)[:, :, None]
    return loss, dlogits, int(n_tok)


def batch_loss_and_gradients(model, inputs, targets):
    """Token-mean teacher-forcing cross entropy over a batch of (input,
    target) id sequences, with gradients for every parameter."""
    if len(inputs) != len(targets) or not inputs:
        raise ValueError("inputs and targets must be equal-length, non-empty lists")
    for s in inputs:
        if not s:
            raise ValueError("empty encoder input sequence")
        _check_ids(model, s)
    for s in targets:
        _check_ids(model, s)
    src_ids, src_mask = _pad_batch(inputs)
    dec_in = [[BOS] + list(t) for t in targets]
    dec_out = [list(t) + [EOS] for t in targets]
    dec_ids, dec_mask = _pad_batch(dec_in)
    tgt_ids, _ = _pad_batch(dec_out)
    logits, cache = _forward(model, src_ids, src_mask, dec_ids, dec_mask)
    loss, dlogits, n_tok = _ce_and_dlogits(logits, tgt_ids, dec_mask)
    grads = _backward(model, cache, dlogits)
    return loss, grads, n_tok


def loss_and_gradients(model, input_ids, target_ids):
    loss, grads, _ = batch_loss_and_gradients(model, [list(input_ids)], [list(target_ids)])
    return loss, grads


def batch_loss(model, inputs, targets):
    """Forward-only loss; used by finite-difference verification."""
    src_ids, src_mask = _pad_batch(inputs)
    dec_ids, dec_mask = _pad_batch([[BOS] + list(t) for t in targets])
    tgt_ids, _ = _pad_batch([list(t) + [EOS] for t in targets])
    logits, _ = _forward(model, src_ids, src_mask, dec_ids, dec_mask)
    loss, _, _ = _ce_and_dlogits(logits, tgt_ids, dec_mask)
    return loss


def encode(model, input_ids):
    """Hidden state per input position plus the final (h, c) state."""
    if len(input_ids) == 0:
        raise ValueError("cannot encode an empty sequence")
    _check_ids(model, input_ids)
    p = model.params
    X = p["E"][np.asarray(input_ids, dtype=np.int64)][None, :, :]
    mask = np.ones((1, len(input_ids)))
    H, (h, c), _ = _lstm_forward(p["enc_Wx"], p["enc_Wh"], p["enc_b"], X, mask)
    return [H[0, t].copy() for t in range(H.shape[1])], (h[0], c[0])


def decode_step(model, state, prev_token, enc_states):
    """One decoder step: consume prev_token, attend over enc_states, emit
    logits. Returns (logits, (h, c), attention weights)."""
    p = model.params
    h, c = state
    enc = np.asarray(enc_states)
    x = p["E"][prev_token][None, :]
    mask = np.ones((1, 1))
    _, (h2, c2), _ = _lstm_forward(p["dec_Wx"], p["dec_Wh"], p["dec_b"], x[:, None, :], mask, h[None, :], c[None, :])
    s = h2[0]
    arg = np.tanh(enc @ p["att_We"] + s @ p["att_Wd"])
    scores = arg @ p["att_v"]
    scores = scores - scores.max()
    e = np.exp(scores)
    alpha = e / e.sum()
    ctx = alpha @ enc
    proj = np.concatenate([s, ctx]) @ p["out_B"]
    logits = p["E"] @ proj + p["out_b"]
    return logits, (h2[0], c2[0]), alpha


def softmax(logits, temperature=1.0):
    z = np.asarray(logits) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def categorical(probs, rng):
    """Row-wise draw from (B, V) probabilities."""
    cum = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


_DECODE_CHUNK = 4096


def decode_batch(model, inputs, mode, max_len, rng=None, temperature=1.0):
    """Autoregressive decoding for a batch of encoder inputs. Returns content
    token ids (pad/bos/eos stripped) per row."""
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sampling requires an rng")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    out = []
    for lo in range(0, len(inputs), _DECODE_CHUNK):
        out.extend(_decode_chunk(model, inputs[lo:lo + _DECODE_CHUNK], mode, max_len, rng, temperature))
    return out

def _decode_chunk(model, inputs, mode, max_len, rng, temperature):
    p = model.params
    for s in inputs:
        if not s:
            raise ValueError("empty encoder input sequence")
        _check_ids(model, s)
    src_ids, src_mask = _pad_batch(inputs)
    B = src_ids.shape[0]
    X_enc = p["E"][src_ids]
    H_enc, (h, c), _ = _lstm_forward(p["enc_Wx"], p["enc_Wh"], p["enc_b"], X_enc, src_mask)
    enc_proj = H_enc @ p["att_We"]
    enc_neg = (src_mask - 1.0) * 1e9
    ones = np.ones((B, 1))
    prev = np.full(B, BOS, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    emitted = []
    for _ in range(max_len):
        x = p["E"][prev][:, None, :]
        _, (h, c), _ = _lstm_forward(p["dec_Wx"], p["dec_Wh"], p["dec_b"], x, ones, h, c)
        arg = np.tanh(enc_proj + (h @ p["att_Wd"])[:, None, :])
        scores = arg @ p["att_v"] + enc_neg
        alpha = softmax(scores)
        ctx = np.einsum("bs,bsh->bh", alpha, H_enc)
        proj = np.concatenate([h, ctx], axis=1) @ p["out_B"]
        logits = proj @ p["E"].T + p["out_b"]
        if mode == "greedy":
            nxt = logits.argmax(axis=1)
        else:
            nxt = categorical(softmax(logits, temperature), rng)
        emitted.append(nxt)
        done |= nxt == EOS
        prev = nxt
        if done.all():
            break
    seqs = [[] for _ in range(B)]
    for step in emitted:
        for b, tok in enumerate(step):
            seqs[b].append(int(tok))
    out = []
    for s in seqs:
        if EOS in s:
            s = s[: s.index(EOS)]
        out.append([t for t in s if t >= N_CONTROL])
    return out


def greedy_sequence(model, input_ids, max_len):
    """Greedy decode; argmax ties resolve to the lowest token index."""
    return decode_batch(model, [list(input_ids)], "greedy", max_len)[0]


def sample_sequence(model, input_ids, max_len, rng, temperature=1.0):
    """Multinomial sampling from the decoder softmax until eos or max_len."""
    return decode_batch(model, [list(input_ids)], "sample", max_len, rng, temperature)[0]


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(CKPT_MAGIC + "\n")
        f.write("vocab " + " ".join(model.vocab.tokens) + "\n")
        f.write(f"dims {len(model.vocab)} {model.embed_dim} {model.hidden_dim}\n")
        for name in PARAM_ORDER:
            arr = model.params[name]
            f.write(f"param {name} " + " ".join(str(n) for n in arr.shape) + "\n")
            f.write(" ".join(float.hex(float(x)) for x in arr.ravel()) + "\n")


def load_model(path):
    with open(path, encoding="utf-8") as f:
        magic = f.readline().rstrip("\n")
        if magic != CKPT_MAGIC:
            raise ValueError(f"not an iterlearn checkpoint (got header {magic!r})")
        vocab = Vocabulary(f.readline().split()[1:])
        _, n_vocab, d, h = f.readline().split()
        n_vocab, d, h = int(n_vocab), int(d), int(h)
        if n_vocab != len(vocab):
            raise ValueError("checkpoint header vocab size mismatch")
        params = {}
        for _ in range(len(PARAM_ORDER)):
            head = f.readline().split()
            name, shape = head[1], tuple(int(x) for x in head[2:])
            vals = np.array([float.fromhex(x) for x in f.readline().split()])
            params[name] = vals.reshape(shape)
    return AgentModel(vocab, d, h, params)
