"""Equation-corpus ingestion: pipe-separated records into expression trees.

Record format, one equation per line, `#` comments allowed:

    id | expression | comma-separated variables [| source]

Declared variables become variable tokens; every other identifier (pi, G,
kb, ...) is a scale-setting constant and becomes a parameter token;
integer literals become integer-constant tokens. The optional fourth field
tags the record's source collection for the load report.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .exprtree import ExprTree, ExpressionError, OperatorBasis, parse_expression, resolve_basis

CORPUS_BASIS: OperatorBasis = resolve_basis("corpus")


class CorpusError(ValueError):
    """Malformed corpus file; carries per-line failure details."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    expression: str
    variables: tuple[str, ...]
    source: str = ""

    def parse(self, basis: OperatorBasis = CORPUS_BASIS) -> ExprTree:
        return parse_expression(self.expression, basis,
                                variables=self.variables, lenient_names=True)


def default_corpus_path() -> Path:
    return Path(str(resources.files("eqprior").joinpath("data/equations.txt")))


def load_corpus(path: str | Path, *, strict: bool = True,
                basis: OperatorBasis = CORPUS_BASIS) -> tuple[list[CorpusEntry], dict]:
    """Read a corpus file; returns (entries, load report).

    In strict mode (default) any unparseable record or duplicate id aborts
    the load with a CorpusError naming line numbers and reasons. In lenient
    mode bad records are skipped and reported in the load report.
    """
    entries: list[CorpusEntry] = []
    problems: list[str] = []
    seen_ids: set[str] = set()
    by_source: dict[str, int] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) not in (3, 4):
            problems.append(f"line {lineno}: expected 3 or 4 pipe-separated fields")
            continue
        eq_id, expression, var_field = fields[0], fields[1], fields[2]
        source = fields[3] if len(fields) == 4 else ""
        variables = tuple(v.strip() for v in var_field.split(",") if v.strip())
        if eq_id in seen_ids:
            problems.append(f"line {lineno}: duplicate id {eq_id!r}")
            continue
        entry = CorpusEntry(eq_id, expression, variables, source)
        try:
            entry.parse(basis)
        except ExpressionError as exc:
            problems.append(f"line {lineno}: {eq_id}: {exc}")
            continue
        seen_ids.add(eq_id)
        entries.append(entry)
        by_source[source or "(untagged)"] = by_source.get(source or "(untagged)", 0) + 1
    if strict and problems:
        raise CorpusError(problems)
    report = {
        "path": str(path),
        "total": len(entries),
        "by_source": dict(sorted(by_source.items())),
        "errors": problems,
    }
    return entries, report


def corpus_to_trees(entries: Sequence[CorpusEntry],
                    basis: OperatorBasis = CORPUS_BASIS) -> list[ExprTree]:
    """Parse every entry; count-preserving (one tree per entry)."""
    return [entry.parse(basis) for entry in entries]


def load_default_corpus(sources: Sequence[str] | None = None) -> list[CorpusEntry]:
    """The shipped corpus, optionally filtered to the given source tags."""
    entries, _ = load_corpus(default_corpus_path())
    if sources:
        wanted = set(sources)
        entries = [e for e in entries if e.source in wanted]
    return entries
