"""Macro/Micro-F1 scoring, silhouette cluster quality, and embedding export."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from picot import autodiff as ad
from picot.encoder import encode_batch
from picot.ontology import coarse_of
from picot.prompt import ExprKind, build_description_rich, build_type_rich, build_type_scarce


class LengthMismatch(ValueError):
    pass


class DegenerateLabels(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    macro_p: float
    macro_r: float
    macro_f1: float
    micro_p: float
    micro_r: float
    micro_f1: float
    n_examples: int

    def to_dict(self):
        return asdict(self)


def _ratio(hit, denom, other):
    # empty denominator: 1 if the other side is empty too, else 0
    if denom == 0:
        return 1.0 if other == 0 else 0.0
    return hit / denom


def _f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def score(golds, preds):
    """Example-averaged (macro) and count-aggregated (micro) precision/recall/F1."""
    golds, preds = list(golds), list(preds)
    if len(golds) != len(preds):
        raise LengthMismatch(f"{len(golds)} gold sets vs {len(preds)} predictions")
    if not golds:
        raise LengthMismatch("score needs at least one example")
    sum_p = sum_r = 0.0
    hits = n_pred = n_gold = 0
    for g, p in zip(golds, preds):
        g, p = set(g), set(p)
        hit = len(g & p)
        sum_p += _ratio(hit, len(p), len(g))
        sum_r += _ratio(hit, len(g), len(p))
        hits += hit
        n_pred += len(p)
        n_gold += len(g)
    n = len(golds)
    macro_p, macro_r = sum_p / n, sum_r / n
    micro_p = _ratio(hits, n_pred, n_gold)
    micro_r = _ratio(hits, n_gold, n_pred)
    return MetricsReport(macro_p, macro_r, _f1(macro_p, macro_r), micro_p, micro_r, _f1(micro_p, micro_r), n)


# -- embeddings -------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingRow:
    example_id: str
    kind: str  # ExprKind value: ts / tr / desc
    role: str  # CLS / ENT
    fine_types: tuple
    coarse_types: tuple
    vector: np.ndarray
    projection: tuple = (0.0, 0.0)


class EmbeddingDump:
    def __init__(self, rows):
        rows = list(rows)
        if len({r.vector.shape for r in rows}) > 1:
            raise ValueError("all vectors must share one dimension")
        self.rows = rows

    def __len__(self):
        return len(self.rows)

    @property
    def dim(self):
        return self.rows[0].vector.shape[0] if self.rows else 0

    def select(self, kind=None, role=None):
        kinds = None if kind is None else {kind} if isinstance(kind, str) else set(kind)
        return EmbeddingDump(
            r for r in self.rows if (kinds is None or r.kind in kinds) and (role is None or r.role == role)
        )

    def matrix(self):
        return np.array([r.vector for r in self.rows]).reshape(len(self.rows), self.dim)

    def labels(self, granularity):
        attr = "fine_types" if granularity == "fine" else "coarse_types"
        out = []
        for r in self.rows:
            types = getattr(r, attr)
            out.append(min(types) if types else None)
        return out

    def write_csv(self, path):
        d = self.dim
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "kind", "role", "fine_types", "coarse_types",
                        *(f"v{k}" for k in range(d)), "pc0", "pc1"])
            for r in self.rows:
                w.writerow([r.example_id, r.kind, r.role, "|".join(r.fine_types), "|".join(r.coarse_types),
                            *(repr(float(v)) for v in r.vector), *(repr(float(v)) for v in r.projection)])


def silhouette(x, labels):
    """Mean silhouette coefficient with l2 distance; s(i) = 0 when a(i) = b(i) = 0."""
    x = np.asarray(x, dtype=np.float64)
    labels = list(labels)
    uniq = sorted(set(labels))
    if len(uniq) < 2:
        raise DegenerateLabels("need at least two distinct labels")
    lab = np.array([uniq.index(v) for v in labels])
    counts = np.bincount(lab, minlength=len(uniq))
    if counts.min() < 2:
        raise DegenerateLabels("every label needs at least two rows")
    dist = np.empty((len(x), len(x)))
    for start in range(0, len(x), 32):
        diff = x[start:start + 32, None, :] - x[None, :, :]
        dist[start:start + 32] = np.sqrt(np.sum(diff * diff, axis=2))
    onehot = np.eye(len(uniq))[lab]
    sums = dist @ onehot  # (n, k): distance sum from each row to each cluster
    own = counts[lab]
    a = sums[np.arange(len(lab)), lab] / (own - 1)
    mean_other = sums / counts[None, :]
    mean_other[np.arange(len(lab)), lab] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def cluster_quality(dump, granularity, kind=None, role=None):
    """Silhouette of ``dump`` rows labelled by their lexicographically first type."""
    if granularity not in ("coarse", "fine"):
        raise ValueError("granularity must be 'coarse' or 'fine'")
    sub = dump.select(kind, role) if (kind or role) else dump
    labels = sub.labels(granularity)
    keep = [k for k, v in enumerate(labels) if v is not None]
    if not keep:
        raise DegenerateLabels("no labelled rows")
    return silhouette(sub.matrix()[keep], [labels[k] for k in keep])


def pca_2d(x):
    """Project rows onto their top two principal components.

    Each component is sign-fixed so its largest-magnitude coordinate is
    positive; numerically null components project to exact zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.zeros((n, 2))
    if n < 2:
        return out
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    tol = s[0] * 1e-9 if s.size and s[0] > 0 else 0.0
    for k in range(min(2, vt.shape[0])):
        if s[k] <= tol or s[k] == 0.0:
            continue
        comp = vt[k]
        if comp[np.argmax(np.abs(comp))] < 0:
            comp = -comp
        out[:, k] = xc @ comp
    return out


_CHUNK = 64


def _encode_rows(model, exprs):
    cls_rows, ent_rows = [], []
    with ad.no_grad():
        for start in range(0, len(exprs), _CHUNK):
            h_cls, h_ent, _ = encode_batch(model.enc, exprs[start:start + _CHUNK], train_mode=False)
            cls_rows.append(h_cls.data)
            ent_rows.append(h_ent.data)
    return np.concatenate(cls_rows), np.concatenate(ent_rows)


def _names(types):
    return tuple(t.canonical_text for t in sorted(types))


def export_embeddings(model, examples, kinds, out=None, descriptions=()):
    """Encode ``examples`` (and descriptions, for the ``desc`` kind) without dropout.

    Rows are ordered by (example_id, kind, role); the 2-D PCA projection is fit
    on the exported rows only.
    """
    kinds = {ExprKind(k) if not isinstance(k, ExprKind) else k for k in kinds}
    cfg = model.config
    pos = cfg.ent_position_enum
    exprs, ids = [], []
    for ex in examples:
        if ExprKind.TYPE_SCARCE in kinds:
            exprs.append(build_type_scarce(ex, model.vocab, pos, cfg.max_len))
            ids.append(ex.id)
        if ExprKind.TYPE_RICH in kinds and ex.fine_types:
            exprs.append(build_type_rich(ex, model.vocab, pos, cfg.max_len))
            ids.append(ex.id)
    if ExprKind.DESCRIPTION_RICH in kinds:
        for d in sorted(descriptions, key=lambda d: d.type):
            for k, e in enumerate(build_description_rich(d, model.vocab, pos, cfg.max_len)):
                exprs.append(e)
                ids.append(f"desc:{d.type.canonical_text}:{k}")
    rows = []
    if exprs:
        h_cls, h_ent = _encode_rows(model, exprs)
        for n, (e, ex_id) in enumerate(zip(exprs, ids)):
            fine = _names(e.carried_fine_types)
            coarse = _names(e.carried_coarse_types | {coarse_of(t) for t in e.carried_fine_types})
            rows.append(EmbeddingRow(ex_id, e.kind.value, "CLS", fine, coarse, h_cls[n]))
            rows.append(EmbeddingRow(ex_id, e.kind.value, "ENT", fine, coarse, h_ent[n]))
        rows.sort(key=lambda r: (r.example_id, r.kind, r.role))
        proj = pca_2d(np.array([r.vector for r in rows]))
        rows = [EmbeddingRow(r.example_id, r.kind, r.role, r.fine_types, r.coarse_types, r.vector, tuple(p))
                for r, p in zip(rows, proj)]
    dump = EmbeddingDump(rows)
    if out is not None:
        dump.write_csv(out)
    return dump
