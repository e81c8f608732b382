"""Exhaustive candidate generation up to a complexity bound.

Deduplication happens bottom-up: canonical composition is local (a node's
canonical form depends only on its children's), so each complexity level
stores one minimal representative per canonical family and compositions
draw from representatives only. The output therefore contains every
tree shape / operator assignment up to the bound, modulo canonical-form
equivalence, without materializing the raw tree set.
"""

from __future__ import annotations

from typing import Iterator

from .exprtree import (
    CanonPart,
    ExprTree,
    ExpressionError,
    OperatorBasis,
    Role,
    compose_canonical,
    parse_canonical,
)


def iter_canonical(basis: OperatorBasis, max_complexity: int) -> Iterator[tuple[int, str]]:
    """Yield (complexity, canonical string) pairs, streaming level by level.

    Within a level the canonical strings are sorted; levels come in
    ascending complexity, so output for bound c is a prefix of output for
    bound c+1. Integer-constant basis entries are skipped: fitted
    parameters absorb literal scales in generated candidates.
    """
    if max_complexity < 1:
        raise ValueError("max_complexity must be >= 1")
    if not basis.nullary(Role.VARIABLE) or not basis.nullary(Role.PARAMETER):
        raise ExpressionError(
            "enumeration needs at least one variable and one parameter in the basis")

    unary = [e.symbol for e in basis.operators(1)]
    binary = [e.symbol for e in basis.operators(2)]
    seen: set[str] = set()
    levels: list[dict[str, CanonPart]] = [{} for _ in range(max_complexity + 1)]

    def register(level: int, part: CanonPart) -> None:
        if part.text not in seen:
            seen.add(part.text)
            levels[level][part.text] = part

    for entry in basis.nullary(Role.VARIABLE):
        register(1, compose_canonical(entry.symbol, 0, []))
    for entry in basis.nullary(Role.PARAMETER):
        register(1, compose_canonical(entry.symbol, None, []))
    for text in sorted(levels[1]):
        yield 1, text

    for k in range(2, max_complexity + 1):
        for op in unary:
            for part in levels[k - 1].values():
                register(k, compose_canonical(op, None, [part]))
        for op in binary:
            for i in range(1, k - 1):
                j = k - 1 - i
                if j < 1:
                    continue
                for left in levels[i].values():
                    for right in levels[j].values():
                        register(k, compose_canonical(op, None, [left, right]))
        for text in sorted(levels[k]):
            yield k, text


def generate(basis: OperatorBasis, max_complexity: int) -> list[ExprTree]:
    """All deduplicated candidates with node count <= max_complexity.

    Sorted by (complexity, canonical string); each tree is the minimal
    representative of its canonical family.
    """
    return [parse_canonical(text) for _, text in iter_canonical(basis, max_complexity)]


def count_unique(basis: OperatorBasis, max_complexity: int) -> dict[int, int]:
    """Number of canonical families per complexity level."""
    counts: dict[int, int] = {}
    for k, _ in iter_canonical(basis, max_complexity):
        counts[k] = counts.get(k, 0) + 1
    return counts
