"""Prediction head, joint objective, and the training loop with early stopping."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from picot import autodiff as ad
from picot.contrast import ContrastConfig, ContrastItem, coarse_losses, fine_losses, group_batch
from picot.encoder import EncoderConfig, EncoderParams, encode_batch, init_params
from picot.evaluation import score
from picot.ontology import parse_type
from picot.prompt import EntPosition, Vocabulary, batch_expressions, build_type_scarce, build_vocab

log = logging.getLogger(__name__)

PAPER_LR = 8e-6
PAPER_BATCH_SIZE = 96


class TrainingDiverged(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    tau: float = 0.1
    lambda_f: float = 0.01
    lambda_c: float = 0.01
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    ent_position: str = "before-prompt"
    use_type_rich: bool = True
    use_descriptions: bool = True
    threshold: float = 0.5
    closure: bool = False
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 2
    ffn_dim: int = 128
    dropout: float = 0.1
    max_len: int = 128
    min_count: int = 1
    pair_norm: str = "pairs"

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        try:
            EntPosition(self.ent_position)
            self.contrast
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def ent_position_enum(self):
        return EntPosition(self.ent_position)

    @property
    def contrast(self):
        return ContrastConfig(self.tau, self.lambda_f, self.lambda_c, self.pair_norm)

    def encoder_config(self, vocab_size):
        return EncoderConfig(vocab_size, self.max_len, self.dim, self.n_layers, self.n_heads,
                             self.ffn_dim, self.dropout, self.seed)

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class LossBreakdown:
    l_cls: float
    l_f_plus: float
    l_f_minus: float
    l_c_plus: float
    l_c_minus: float
    total: float

    def to_dict(self):
        return asdict(self)


LOSS_FIELDS = ("l_cls", "l_f_plus", "l_f_minus", "l_c_plus", "l_c_minus", "total")


class Model:
    """Encoder and predictor parameters plus the vocabulary and type order they index."""

    def __init__(self, config, vocab, types, enc, pred):
        self.config = config
        self.vocab = vocab
        self.types = tuple(types)
        self.enc = enc
        self.pred = pred
        self._type_index = {t: k for k, t in enumerate(self.types)}

    @classmethod
    def create(cls, config, vocab, taxonomy):
        enc = init_params(config.encoder_config(len(vocab)))
        d, hidden, n_types = config.dim, 2 * config.dim, len(taxonomy)
        rng = np.random.default_rng([config.seed, 1])
        a1 = np.sqrt(6.0 / (d + hidden))
        a2 = np.sqrt(6.0 / (hidden + n_types))
        pred = {
            "pred.w1": ad.Tensor(rng.uniform(-a1, a1, (d, hidden)), requires_grad=True, name="pred.w1"),
            "pred.b1": ad.Tensor(np.zeros(hidden), requires_grad=True, name="pred.b1"),
            "pred.w2": ad.Tensor(rng.uniform(-a2, a2, (hidden, n_types)), requires_grad=True, name="pred.w2"),
            "pred.b2": ad.Tensor(np.zeros(n_types), requires_grad=True, name="pred.b2"),
        }
        return cls(config, vocab, taxonomy.ordered, enc, pred)

    def parameters(self):
        return {**self.enc.tensors, **self.pred}

    def state(self):
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def load_state(self, state):
        for name, t in self.parameters().items():
            if state[name].shape != t.shape:
                raise ValueError(f"{name}: shape {state[name].shape}, expected {t.shape}")
            t.data = np.array(state[name], dtype=np.float64)

    def zero_grad(self):
        for t in self.parameters().values():
            t.grad = None

    def gold_vector(self, types):
        y = np.zeros(len(self.types))
        for t in types:
            k = self._type_index.get(t)
            if k is not None:
                y[k] = 1.0
        return y

    def logits(self, h_cls):
        p = self.pred
        hidden = ad.gelu(ad.add(ad.matmul(h_cls, p["pred.w1"]), p["pred.b1"]))
        return ad.add(ad.matmul(hidden, p["pred.w2"]), p["pred.b2"])

    # -- persistence ---------------------------------------------------------
    def meta(self):
        return {
            "format": "picot-model/1",
            "config": self.config.to_dict(),
            "encoder": self.enc.cfg.to_dict(),
            "types": [t.canonical_text for t in self.types],
            "vocab": list(self.vocab.tokens),
        }

    def save(self, path):
        ad.save_tensors(path, self.state())
        with open(meta_path(path), "w", encoding="utf-8") as fh:
            json.dump(self.meta(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(meta_path(path), encoding="utf-8") as fh:
            meta = json.load(fh)
        config = TrainConfig.from_dict(meta["config"])
        enc_cfg = EncoderConfig(**meta["encoder"])
        state = ad.load_tensors(path)
        enc = EncoderParams(enc_cfg, {
            n: ad.Tensor(a, requires_grad=True, name=n) for n, a in state.items() if n.startswith("enc.")
        })
        pred = {n: ad.Tensor(a, requires_grad=True, name=n) for n, a in state.items() if n.startswith("pred.")}
        types = [parse_type(t) for t in meta["types"]]
        if pred["pred.w2"].shape[1] != len(types):
            raise ValueError("predictor width does not match the stored type list")
        return cls(config, Vocabulary(meta["vocab"]), types, enc, pred)


def meta_path(path):
    return str(path) + ".json"


def bce_with_logits(logits, gold):
    """Mean over types (and rows) of the numerically stable binary cross-entropy."""
    return ad.bce_with_logits(logits, gold)


# -- training -------------------------------------------------------------------


class TrainState:
    """Optimizer moments, the dropout generator, and descriptions keyed by type."""

    def __init__(self, config, descriptions=()):
        self.opt = ad.AdamWState()
        self.dropout_rng = np.random.default_rng([config.seed, 2])
        self.descs_by_type = {d.type: d for d in descriptions}


def _sum_terms(terms):
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


def compute_losses(batch, model, cfg, state, train_mode=True):
    """Forward pass for one batch; returns (total tensor, LossBreakdown)."""
    scarce, rich, extra = batch_expressions(
        batch, state.descs_by_type, model.vocab, cfg.ent_position_enum,
        cfg.use_type_rich, cfg.use_descriptions, cfg.max_len,
    )
    exprs = scarce + rich + extra
    h_cls, h_ent, _ = encode_batch(model.enc, exprs, train_mode=train_mode, rng=state.dropout_rng)
    n_ts = len(scarce)
    logits = model.logits(ad.index(h_cls, slice(0, n_ts)))
    gold = np.stack([model.gold_vector(ex.gold_types) for ex in batch])
    l_cls = bce_with_logits(logits, gold)

    zero = ad.Tensor(0.0)
    lfp = lfm = lcp = lcm = zero
    if cfg.lambda_f > 0 or cfg.lambda_c > 0:
        items = [
            ContrastItem(e.key, ad.slice_row(h_ent, k), e.carried_fine_types, e.carried_coarse_types, e)
            for k, e in enumerate(exprs)
        ]
        groups = group_batch(items)
        if cfg.lambda_f > 0:
            lfp, lfm = fine_losses(groups, cfg.contrast)
        if cfg.lambda_c > 0:
            lcp, lcm = coarse_losses(groups, cfg.contrast)

    total = _sum_terms([
        l_cls,
        ad.scale(ad.add(lfp, lfm), cfg.lambda_f),
        ad.scale(ad.add(lcp, lcm), cfg.lambda_c),
    ])
    parts = (l_cls, lfp, lfm, lcp, lcm, total)
    return total, LossBreakdown(*(float(p.data) for p in parts))


def train_step(batch, model, cfg, state):
    """One joint AdamW update of encoder and predictor parameters."""
    if not batch:
        raise ValueError("empty batch")
    try:
        total, breakdown = compute_losses(batch, model, cfg, state, train_mode=True)
        model.zero_grad()
        total.backward()
    except ad.NonFinite as exc:
        raise TrainingDiverged(str(exc)) from exc
    params = model.parameters()
    ad.adamw_step(
        {n: t.data for n, t in params.items()},
        {n: t.grad for n, t in params.items()},
        state.opt, cfg.lr, cfg.betas, cfg.adam_eps, cfg.weight_decay,
    )
    for n, t in params.items():
        if not np.all(np.isfinite(t.data)):
            raise TrainingDiverged(f"parameter {n} became non-finite")
    return breakdown


# -- decoding -------------------------------------------------------------------


def decode(logits_row, types, threshold=0.5, closure=False):
    """Types whose sigmoid exceeds ``threshold``; the argmax type if none does.

    Ties for the argmax resolve to the lowest type index.
    """
    z = np.asarray(logits_row, dtype=np.float64)
    probs = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    picked = {types[k] for k in np.flatnonzero(probs > threshold)}
    if not picked:
        picked = {types[int(np.argmax(z))]}
    if closure:
        picked |= {t.prefix(k) for t in picked for k in range(1, t.level)}
    return frozenset(picked)


def predict_logits(examples, model, batch_size=64):
    out = []
    pos = model.config.ent_position_enum
    with ad.no_grad():
        for start in range(0, len(examples), batch_size):
            exprs = [build_type_scarce(ex, model.vocab, pos, model.config.max_len)
                     for ex in examples[start:start + batch_size]]
            h_cls, _, _ = encode_batch(model.enc, exprs, train_mode=False)
            out.append(model.logits(h_cls).data)
    return np.concatenate(out) if out else np.zeros((0, len(model.types)))


def predict_many(examples, model, threshold=None, closure=None):
    cfg = model.config
    threshold = cfg.threshold if threshold is None else threshold
    closure = cfg.closure if closure is None else closure
    logits = predict_logits(list(examples), model)
    return [decode(row, model.types, threshold, closure) for row in logits]


def predict(ex, model, threshold=None, closure=None):
    return predict_many([ex], model, threshold, closure)[0]


_BBN_REWRITES = {"facility": "fac"}


def apply_bbn_rules(pred):
    """Drop person when organization is present, location when gpe is, and rename facility to fac."""
    out = set()
    for t in pred:
        head = _BBN_REWRITES.get(t.segments[0], t.segments[0])
        out.add(type(t)((head,) + t.segments[1:]))
    heads = {t.segments[0] for t in out}
    if "organization" in heads:
        out = {t for t in out if t.segments[0] != "person"}
    if "gpe" in heads:
        out = {t for t in out if t.segments[0] != "location"}
    return frozenset(out)


# -- loop -------------------------------------------------------------------------


def evaluate(examples, model, bbn_rules=False):
    preds = predict_many(examples, model)
    if bbn_rules:
        preds = [apply_bbn_rules(p) for p in preds]
    return score([ex.gold_types for ex in examples], preds)


def fit(train, dev, model, cfg=None, descriptions=(), on_epoch=None):
    """Train with per-epoch shuffling and early stopping on dev Macro-F1.

    ``model`` ends holding the best parameters. Returns ``(best_state, history)``
    where each history record carries mean losses and dev metrics for one epoch.
    """
    cfg = cfg or model.config
    if not train or not dev:
        raise ValueError("fit needs non-empty train and dev corpora")
    state = TrainState(cfg, descriptions)
    shuffle_rng = np.random.default_rng([cfg.seed, 3])
    best_state, best_f1, since_best = model.state(), -1.0, 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train))
        sums = dict.fromkeys(LOSS_FIELDS, 0.0)
        n_steps = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train[int(k)] for k in order[start:start + cfg.batch_size]]
            br = train_step(batch, model, cfg, state)
            for k in LOSS_FIELDS:
                sums[k] += getattr(br, k)
            n_steps += 1
        report = evaluate(dev, model)
        record = {
            "epoch": epoch,
            **{k: sums[k] / n_steps for k in LOSS_FIELDS},
            "dev_macro_f1": report.macro_f1,
            "dev_micro_f1": report.micro_f1,
            "lr": cfg.lr,
        }
        history.append(record)
        log.info("epoch %d total %.4f dev macro-F1 %.4f", epoch, record["total"], report.macro_f1)
        if on_epoch is not None:
            on_epoch(record)
        if report.macro_f1 > best_f1:
            best_f1, best_state, since_best = report.macro_f1, model.state(), 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    model.load_state(best_state)
    return best_state, history


def new_model(config, train, descriptions, taxonomy):
    vocab = build_vocab(train, descriptions, taxonomy, config.min_count)
    return Model.create(config, vocab, taxonomy)


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})

