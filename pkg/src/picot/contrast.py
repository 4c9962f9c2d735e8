"""Constrained hierarchical contrastive losses over [ENT] representations.

Pair similarity for an ordered pair (i, j) scored against a pair set B::

    s(i, j; B) = log( exp(dis(h_i, h_j) / tau) / sum_{(a, b) in B} exp(dis(h_a, h_b) / tau) )

with ``dis`` the (eps-regularized) l2 distance. Positive pairs of a type are
normalized over that type's positive pairs; negative pairs over the whole
negative pair set of their granularity.

Each summed set is scaled by ``1 / (2|B|)``. With ``pair_norm="pairs"`` (the
default) ``|B|`` counts unordered pairs, so every term is a mean over ordered
pairs. ``pair_norm="items"`` counts the items instead; that variant grows
with the square of the group size and swamps the classification loss.

Fine-grained contrast only involves items sharing a coarse type; coarse
contrast ignores fine identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from picot import autodiff as ad


class EmptyNormalizer(ValueError):
    pass


PAIR_NORMS = ("pairs", "items")


@dataclass(frozen=True)
class ContrastConfig:
    tau: float = 0.1
    lambda_f: float = 0.01
    lambda_c: float = 0.01
    pair_norm: str = "pairs"
    log_base: str = "natural"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.lambda_f < 0 or self.lambda_c < 0:
            raise ValueError("loss weights must be non-negative")
        if self.pair_norm not in PAIR_NORMS:
            raise ValueError(f"pair_norm must be one of {PAIR_NORMS}")
        if self.log_base != "natural":
            raise ValueError("only the natural logarithm is supported")


@dataclass(frozen=True, eq=False)
class ContrastItem:
    key: str
    h_ent: ad.Tensor
    fine_types: frozenset
    coarse_types: frozenset
    expr: object = None


@dataclass(eq=False)
class ContrastGroups:
    items: list  # sorted by key
    fine_pos: dict  # fine type -> item indices
    fine_neg: list  # ordered index pairs
    coarse_pos: dict
    coarse_neg: list
    _dist: ad.Tensor | None = field(default=None, repr=False)

    def distances(self):
        if self._dist is None:
            h = ad.concat_rows([it.h_ent for it in self.items])
            self._dist = ad.pairwise_l2(h)
        return self._dist


def _members(items, attr):
    groups = {}
    for n, it in enumerate(items):
        for t in getattr(it, attr):
            groups.setdefault(t, []).append(n)
    return {t: groups[t] for t in sorted(groups)}


def group_batch(items):
    if not items:
        raise ValueError("group_batch needs at least one item")
    items = sorted(items, key=lambda it: it.key)
    if len({it.key for it in items}) != len(items):
        raise ValueError("contrast item keys must be unique")
    fine_neg = []
    coarse_neg = []
    for i, a in enumerate(items):
        for j, b in enumerate(items):
            if i == j:
                continue
            if a.coarse_types.isdisjoint(b.coarse_types):
                coarse_neg.append((i, j))
            elif a.fine_types and b.fine_types and a.fine_types.isdisjoint(b.fine_types):
                fine_neg.append((i, j))
    return ContrastGroups(
        items,
        _members(items, "fine_types"),
        fine_neg,
        _members(items, "coarse_types"),
        coarse_neg,
    )


def _ordered_pairs(members):
    return [(i, j) for i in members for j in members if i != j]


def _pair_log_probs(dist, pairs, tau, detach_normalizer=False):
    """Sum over ``pairs`` of s(i, j; pairs)."""
    rows = np.array([p[0] for p in pairs])
    cols = np.array([p[1] for p in pairs])
    z = ad.scale(ad.index(dist, (rows, cols)), 1.0 / tau)
    lse = ad.logsumexp(z)
    if detach_normalizer:
        lse = lse.detach()
    return ad.sum(ad.sub(z, lse))


def _positive_loss(groups, pos, tau, detach_normalizer, pair_norm):
    if not pos:
        return ad.Tensor(0.0)
    terms = []
    for members in pos.values():
        pairs = _ordered_pairs(members)
        if pairs:
            denom = 2 * len(members) if pair_norm == "items" else len(pairs)
            terms.append(ad.scale(_pair_log_probs(groups.distances(), pairs, tau, detach_normalizer), 1.0 / denom))
    if not terms:
        return ad.Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(pos))


def _negative_loss(groups, neg, tau, pair_norm):
    if not neg:
        return ad.Tensor(0.0)
    denom = 2 * len({i for pair in neg for i in pair}) if pair_norm == "items" else len(neg)
    return ad.scale(_pair_log_probs(groups.distances(), neg, tau), -1.0 / denom)


def fine_losses(groups, cfg, detach_normalizer=False):
    """(L_f_plus, L_f_minus) for one batch; empty pair sets give exactly 0."""
    return (
        _positive_loss(groups, groups.fine_pos, cfg.tau, detach_normalizer, cfg.pair_norm),
        _negative_loss(groups, groups.fine_neg, cfg.tau, cfg.pair_norm),
    )


def coarse_losses(groups, cfg, detach_normalizer=False):
    return (
        _positive_loss(groups, groups.coarse_pos, cfg.tau, detach_normalizer, cfg.pair_norm),
        _negative_loss(groups, groups.coarse_neg, cfg.tau, cfg.pair_norm),
    )


def similarity_s(i, j, normalizer_pairs, tau):
    """s(i, j) for two items against an explicit list of ordered item pairs."""
    if not normalizer_pairs:
        raise EmptyNormalizer("normalizer pair set is empty")
    keys = [(a.key, b.key) for a, b in normalizer_pairs]
    if (i.key, j.key) not in keys:
        raise ValueError("(i, j) must belong to the normalizer pairs")
    dists = ad.concat_rows([ad.reshape(ad.l2_distance(a.h_ent, b.h_ent), (1,)) for a, b in normalizer_pairs])
    z = ad.scale(ad.reshape(dists, (len(keys),)), 1.0 / tau)
    pick = ad.index(z, keys.index((i.key, j.key)))
    return ad.sub(pick, ad.logsumexp(z))
