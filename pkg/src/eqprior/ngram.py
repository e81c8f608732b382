"""Katz back-off n-gram model over tree phrases, with Good-Turing discounts.

Two back-off models are trained side by side: one for LEFT phrases (roots,
only children, left children conditioned on their ancestor chain) and one
for RIGHT phrases (right children conditioned on the ancestors plus the
left sibling). A tree's log-prior is the sum of its phrase log-probabilities
under the matching model.

Seen phrases use discounted maximum-likelihood ratios; the discount is the
Good-Turing adjusted count over the raw count, per count table. Unseen
phrases recurse to the next-shortest context (dropping the oldest ancestor
first, the left sibling last) weighted so each conditional distribution
sums to one over the vocabulary.

Root nodes have an empty ancestor chain and are therefore scored against
the unigram through the ordinary back-off; an alternative would be a
dedicated start-of-tree context symbol, which would let the model learn
root-specific operator preferences at the cost of an extra table.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .exprtree import ExprTree, Phrase, PhraseKind, extract_phrases

FORMAT_VERSION = 1

Context = tuple[str, ...]


class VocabularyError(ValueError):
    def __init__(self, token: str):
        super().__init__(f"token not in model vocabulary: {token!r}")
        self.token = token


def good_turing_count(count: int, counts_of_counts: Mapping[int, int]) -> float:
    """Adjusted count C* = (C+1) N_{C+1} / N_C.

    When N_C or N_{C+1} is zero the raw estimate is undefined; fall back to
    counts-of-counts smoothed by a log-log linear regression. If the table
    has fewer than two distinct count values even that is undefined and the
    count is returned unadjusted.
    """
    if count < 1:
        raise ValueError("Good-Turing adjustment requires count >= 1")
    n_c = counts_of_counts.get(count, 0)
    n_c1 = counts_of_counts.get(count + 1, 0)
    if n_c > 0 and n_c1 > 0:
        return (count + 1) * n_c1 / n_c
    coeffs = _log_linear_fit(counts_of_counts)
    if coeffs is None:
        return float(count)
    a, b = coeffs
    smoothed = lambda r: math.exp(a + b * math.log(r))
    return (count + 1) * smoothed(count + 1) / smoothed(count)


def discount(count: int, counts_of_counts: Mapping[int, int]) -> float:
    """Katz discount d = C*/C, clamped into (0, 1].

    A raw estimate with d >= 1 is non-monotone (the adjustment would grow
    the count); those reroute through the regression-smoothed
    counts-of-counts, where d = ((C+1)/C)^(1+slope). Only if the smoothed
    estimate also reaches 1 does the clamp apply.
    """
    d = good_turing_count(count, counts_of_counts) / count
    if d >= 1.0:
        coeffs = _log_linear_fit(counts_of_counts)
        if coeffs is not None:
            d = ((count + 1.0) / count) ** (1.0 + coeffs[1])
    return min(d, 1.0)


def _log_linear_fit(counts_of_counts: Mapping[int, int]) -> tuple[float, float] | None:
    # Gale's Z-transform: spread each N_r over the gap to its neighbours so
    # sparse tails (every large count seen once) still regress with a
    # decaying slope
    rs = sorted(r for r, n in counts_of_counts.items() if n > 0)
    if len(rs) < 2:
        return None
    pts = []
    for i, r in enumerate(rs):
        prev_r = rs[i - 1] if i > 0 else 0
        next_r = rs[i + 1] if i + 1 < len(rs) else 2 * r - prev_r
        z = counts_of_counts[r] / (0.5 * (next_r - prev_r))
        pts.append((math.log(r), math.log(z)))
    n = len(pts)
    sx = sum(p[0] for p in pts)
    sy = sum(p[1] for p in pts)
    sxx = sum(p[0] * p[0] for p in pts)
    sxy = sum(p[0] * p[1] for p in pts)
    denom = n * sxx - sx * sx
    if denom == 0:
        return None
    b = (n * sxy - sx * sy) / denom
    a = (sy - b * sx) / n
    return a, b


@dataclass(frozen=True)
class _ContextRecord:
    """Precomputed distribution pieces for one observed context."""
    p_seen: dict[str, float]
    alpha: float          # back-off weight (non-empty contexts)
    unseen_share: float   # uniform leftover share (empty context only)


Table = dict[Context, dict[str, int]]


@dataclass
class NGramModel:
    """Trained phrase counts plus cached discounts and back-off weights.

    Immutable after training as far as counts go; probability caches are
    filled lazily. `extend_vocabulary` returns a new model sharing the
    count tables, so evaluation bases can add tokens the corpus never used
    (they receive the reserved unigram mass).
    """

    order: int
    k_backoff: int
    vocabulary: frozenset[str]
    tables: dict[PhraseKind, dict[int, Table]]
    meta: dict = field(default_factory=dict)
    _records: dict = field(default_factory=dict, repr=False)
    _cc_cache: dict = field(default_factory=dict, repr=False)
    _d_cache: dict = field(default_factory=dict, repr=False)

    # -- bookkeeping -------------------------------------------------------

    def max_context(self, kind: PhraseKind) -> int:
        return self.order - 1 if kind == PhraseKind.LEFT else self.order

    def contexts(self, kind: PhraseKind) -> Iterator[Context]:
        for table in self.tables[kind].values():
            yield from table.keys()

    def _context_counts(self, kind: PhraseKind, ctx: Context) -> dict[str, int] | None:
        table = self.tables[kind].get(len(ctx))
        if table is None:
            return None
        return table.get(ctx)

    def _counts_of_counts(self, kind: PhraseKind, m: int) -> Counter:
        key = (kind, m)
        nc = self._cc_cache.get(key)
        if nc is None:
            nc = Counter()
            for targets in self.tables[kind].get(m, {}).values():
                nc.update(targets.values())
            self._cc_cache[key] = nc
        return nc

    def _discount(self, kind: PhraseKind, m: int, count: int) -> float:
        key = (kind, m, count)
        d = self._d_cache.get(key)
        if d is None:
            d = discount(count, self._counts_of_counts(kind, m))
            self._d_cache[key] = d
        return d

    # -- probabilities -----------------------------------------------------

    def _record(self, kind: PhraseKind, ctx: Context) -> _ContextRecord:
        key = (kind, ctx)
        rec = self._records.get(key)
        if rec is not None:
            return rec
        counts = self._context_counts(kind, ctx) or {}
        total = sum(counts.values())
        k = self.k_backoff
        p_seen = {
            t: self._discount(kind, len(ctx), c) * c / total
            for t, c in counts.items() if c > k
        }
        beta = 1.0 - sum(p_seen.values())
        unseen = [w for w in self.vocabulary if counts.get(w, 0) <= k]
        alpha = 0.0
        unseen_share = 0.0
        if not unseen:
            # every vocabulary word retained under this context: fold the
            # reserved mass back proportionally so the distribution still
            # sums to one
            scale = sum(p_seen.values())
            p_seen = {t: p / scale for t, p in p_seen.items()}
        elif ctx:
            denom = sum(self._prob(kind, ctx[1:], w) for w in unseen)
            if beta > 0.0 and denom > 0.0:
                alpha = beta / denom
            elif beta > 0.0:
                # lower orders give the unseen words nothing; fold back
                p_seen = {t: p / (1.0 - beta) for t, p in p_seen.items()}
        else:
            # unigram level: reserve at least the Good-Turing unseen-species
            # mass N_1/N (smoothed S(1) when nothing was seen exactly once,
            # capped at 1/2) so evaluation-basis tokens absent from the
            # corpus keep a nonzero prior
            floor = self._unigram_reserve(kind, total)
            if floor > beta and beta < 1.0:
                p_seen = {t: p * (1.0 - floor) / (1.0 - beta)
                          for t, p in p_seen.items()}
                beta = floor
            if beta > 0.0:
                unseen_share = beta / len(unseen)
        rec = _ContextRecord(p_seen, alpha, unseen_share)
        self._records[key] = rec
        return rec

    def _unigram_reserve(self, kind: PhraseKind, total: int) -> float:
        # smoothed S(1), not raw N_1: degenerate tables (a single distinct
        # count value) reserve nothing, which keeps probabilities invariant
        # under corpus duplication
        coeffs = _log_linear_fit(self._counts_of_counts(kind, 0))
        if coeffs is None or not total:
            return 0.0
        return min(math.exp(coeffs[0]) / total, 0.5)

    def _prob(self, kind: PhraseKind, ctx: Context, target: str) -> float:
        # contexts with no data at this length pass straight through
        # (their back-off weight is exactly one)
        while ctx:
            counts = self._context_counts(kind, ctx)
            if counts:
                break
            ctx = ctx[1:]
        rec = self._record(kind, ctx)
        p = rec.p_seen.get(target)
        if p is not None:
            return p
        if ctx:
            if rec.alpha == 0.0:
                return 0.0
            return rec.alpha * self._prob(kind, ctx[1:], target)
        return rec.unseen_share

    def conditional_probability(self, kind: PhraseKind, context: Sequence[str],
                                target: str) -> float:
        """P(target | context) under the Katz back-off recursion."""
        if target not in self.vocabulary:
            raise VocabularyError(target)
        ctx = tuple(context)
        limit = self.max_context(kind)
        if len(ctx) > limit:
            ctx = ctx[len(ctx) - limit:]
        return self._prob(kind, ctx, target)

    def phrase_log_probability(self, phrase: Phrase) -> float:
        p = self.conditional_probability(phrase.kind, phrase.context, phrase.target)
        return math.log(p) if p > 0.0 else -math.inf

    def log_prior(self, tree: ExprTree) -> float:
        """Sum of phrase log-probabilities; the structural prior log P(T)."""
        for node in tree.nodes:
            if node.symbol not in self.vocabulary:
                raise VocabularyError(node.symbol)
        return sum(self.phrase_log_probability(ph)
                   for ph in extract_phrases(tree, self.order))

    # -- derived models ----------------------------------------------------

    def extend_vocabulary(self, tokens: Iterable[str]) -> "NGramModel":
        vocab = self.vocabulary | set(tokens)
        if vocab == self.vocabulary:
            return self
        return NGramModel(self.order, self.k_backoff, frozenset(vocab),
                          self.tables, dict(self.meta))

    def without_top_order(self) -> "NGramModel":
        """Copy with the longest-context count tables deleted."""
        tables = {
            kind: {m: tab for m, tab in levels.items() if m < self.max_context(kind)}
            for kind, levels in self.tables.items()
        }
        return NGramModel(self.order, self.k_backoff, self.vocabulary,
                          tables, dict(self.meta))

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "format_version": FORMAT_VERSION,
            "order": self.order,
            "k_backoff": self.k_backoff,
            "vocabulary": sorted(self.vocabulary),
            "tables": {
                kind.value: {
                    str(m): [
                        [list(ctx), {t: c for t, c in sorted(targets.items())}]
                        for ctx, targets in sorted(table.items())
                    ]
                    for m, table in sorted(levels.items())
                }
                for kind, levels in sorted(self.tables.items(), key=lambda kv: kv[0].value)
            },
            "meta": self.meta,
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NGramModel":
        payload = json.loads(text)
        version = payload.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version: {version}")
        tables: dict[PhraseKind, dict[int, Table]] = {}
        for kind_name, levels in payload["tables"].items():
            kind = PhraseKind(kind_name)
            tables[kind] = {
                int(m): {tuple(ctx): dict(targets) for ctx, targets in entries}
                for m, entries in levels.items()
            }
        return cls(payload["order"], payload["k_backoff"],
                   frozenset(payload["vocabulary"]), tables,
                   payload.get("meta", {}))


def train(trees: Sequence[ExprTree], n: int, k_backoff: int = 0,
          meta: dict | None = None) -> NGramModel:
    """Count phrases of every tree at every back-off length and build a model."""
    if not trees:
        raise ValueError("cannot train on an empty corpus")
    if n < 1:
        raise ValueError("n-gram order must be >= 1")
    tables: dict[PhraseKind, dict[int, Table]] = {
        PhraseKind.LEFT: {m: {} for m in range(n)},
        PhraseKind.RIGHT: {m: {} for m in range(n + 1)},
    }
    vocab: set[str] = set()
    for tree in trees:
        for node in tree.nodes:
            vocab.add(node.symbol)
        for phrase in extract_phrases(tree, n):
            ctx = phrase.context
            for m in range(len(ctx) + 1):
                trunc = ctx[len(ctx) - m:]
                table = tables[phrase.kind][m]
                targets = table.setdefault(trunc, {})
                targets[phrase.target] = targets.get(phrase.target, 0) + 1
    return NGramModel(n, k_backoff, frozenset(vocab), tables, meta or {})


def conditional_probability(model: NGramModel, kind: PhraseKind,
                            context: Sequence[str], target: str) -> float:
    return model.conditional_probability(kind, context, target)


def log_prior(model: NGramModel, tree: ExprTree) -> float:
    return model.log_prior(tree)
