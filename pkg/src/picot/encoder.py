"""Shared transformer encoder producing [CLS] and [ENT] representations.

Type-scarce, type-rich and description expressions all go through the same
:class:`EncoderParams`; there is no second parameter set.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from picot import autodiff as ad

_NEG = -1e9


class TokenOutOfRange(ValueError):
    pass


class TooLong(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    max_len: int = 128
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 2
    ffn_dim: int = 128
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        ints = (self.vocab_size, self.max_len, self.dim, self.n_layers, self.n_heads, self.ffn_dim)
        if any(v <= 0 for v in ints):
            raise ValueError("encoder sizes must be positive")
        if self.dim % self.n_heads:
            raise ValueError("dim must be divisible by n_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


def param_shapes(cfg):
    """Name -> shape for every encoder tensor, in creation order."""
    d, f = cfg.dim, cfg.ffn_dim
    shapes = {
        "enc.tok_emb": (cfg.vocab_size, d),
        "enc.pos_emb": (cfg.max_len, d),
        "enc.emb_ln.gain": (d,),
        "enc.emb_ln.bias": (d,),
    }
    for i in range(cfg.n_layers):
        p = f"enc.layer{i}."
        for w in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{w}"] = (d, d)
            shapes[p + f"attn.b{w}"] = (d,)
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        shapes[p + "ffn.w1"] = (d, f)
        shapes[p + "ffn.b1"] = (f,)
        shapes[p + "ffn.w2"] = (f, d)
        shapes[p + "ffn.b2"] = (d,)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
    return shapes


class EncoderParams:
    def __init__(self, cfg, tensors):
        expected = param_shapes(cfg)
        if set(tensors) != set(expected):
            raise ValueError("encoder tensor names do not match the config")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {tensors[name].shape}, expected {shape}")
        self.cfg = cfg
        self.tensors = tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def count(self):
        return int(sum(t.size for t in self.tensors.values()))


def init_params(cfg):
    rng = np.random.default_rng(cfg.seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("_emb"):
            data = rng.uniform(-0.05, 0.05, size=shape)
        elif name.endswith(".gain"):
            data = np.ones(shape)
        elif len(shape) == 2:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-a, a, size=shape)
        else:
            data = np.zeros(shape)
        tensors[name] = ad.Tensor(data, requires_grad=True, name=name)
    return EncoderParams(cfg, tensors)


def _pad(exprs, cfg):
    lengths = [len(e.token_ids) for e in exprs]
    longest = max(lengths)
    if longest > cfg.max_len:
        raise TooLong(f"expression of length {longest} exceeds max_len {cfg.max_len}")
    ids = np.zeros((len(exprs), longest), dtype=np.int64)
    for b, e in enumerate(exprs):
        ids[b, : lengths[b]] = e.token_ids
    if ids.max() >= cfg.vocab_size or ids.min() < 0:
        raise TokenOutOfRange(f"token id outside [0, {cfg.vocab_size})")
    valid = np.arange(longest)[None, :] < np.asarray(lengths)[:, None]
    return ids, valid


def _linear(x, w, b):
    return ad.add(ad.matmul(x, w), b)


def _attention(params, p, x, bias, n_heads, train, rng, rate):
    bsz, length, d = x.shape
    dh = d // n_heads

    def heads(t):
        return ad.transpose(ad.reshape(t, (bsz, length, n_heads, dh)), (0, 2, 1, 3))

    q = heads(_linear(x, params[p + "attn.wq"], params[p + "attn.bq"]))
    k = heads(_linear(x, params[p + "attn.wk"], params[p + "attn.bk"]))
    v = heads(_linear(x, params[p + "attn.wv"], params[p + "attn.bv"]))
    scores = ad.add(ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh)), bias)
    probs = ad.softmax(scores)
    if train:
        probs = ad.dropout(probs, rate, rng)
    ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (bsz, length, d))
    return _linear(ctx, params[p + "attn.wo"], params[p + "attn.bo"])


def encode_batch(params, exprs, train_mode=False, rng=None):
    """Encode expressions together (right-padded, pads masked out of attention).

    Returns ``(h_cls, h_ent, hidden)`` with shapes (B, d), (B, d), (B, L, d).
    """
    cfg = params.cfg
    if not exprs:
        raise ValueError("encode_batch needs at least one expression")
    ids, valid = _pad(exprs, cfg)
    bsz, length = ids.shape
    rate = cfg.dropout_rate
    train = train_mode and rate > 0.0
    if train and rng is None:
        rng = np.random.default_rng(cfg.seed)

    x = ad.add(ad.embedding_lookup(params["enc.tok_emb"], ids), ad.index(params["enc.pos_emb"], slice(0, length)))
    x = ad.layer_norm(x, params["enc.emb_ln.gain"], params["enc.emb_ln.bias"])
    if train:
        x = ad.dropout(x, rate, rng)
    bias = ad.Tensor(np.where(valid, 0.0, _NEG)[:, None, None, :])
    for i in range(cfg.n_layers):
        p = f"enc.layer{i}."
        a = _attention(params, p, x, bias, cfg.n_heads, train, rng, rate)
        if train:
            a = ad.dropout(a, rate, rng)
        x = ad.layer_norm(ad.add(x, a), params[p + "ln1.gain"], params[p + "ln1.bias"])
        h = _linear(ad.gelu(_linear(x, params[p + "ffn.w1"], params[p + "ffn.b1"])),
                    params[p + "ffn.w2"], params[p + "ffn.b2"])
        if train:
            h = ad.dropout(h, rate, rng)
        x = ad.layer_norm(ad.add(x, h), params[p + "ln2.gain"], params[p + "ln2.bias"])

    rows = np.arange(bsz)
    h_cls = ad.index(x, (rows, np.array([e.cls_pos for e in exprs])))
    h_ent = ad.index(x, (rows, np.array([e.ent_pos for e in exprs])))
    return h_cls, h_ent, x


def encode(params, expr, train_mode=False, rng=None):
    """Encode one expression; returns ``(h_cls[d], h_ent[d], hidden[len, d])``."""
    h_cls, h_ent, x = encode_batch(params, [expr], train_mode, rng)
    return ad.slice_row(h_cls, 0), ad.slice_row(h_ent, 0), ad.index(x, 0)
