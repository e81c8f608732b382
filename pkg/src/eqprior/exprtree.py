"""Expression trees: parsing, evaluation, canonical forms and tree phrases.

Candidate functions and corpus equations are held as immutable operator
trees. Nullary symbols play three roles: variables ("x", "x1", ...),
fitted parameters ("a", decimal literals) and positive integer constants.
Negative literals are wrapped in an explicit "neg" node so that the sign
costs a tree node like any other operator.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, Sequence

import numpy as np

VAR = "x"
PARAM = "a"
CONST = "const"

_UNARY_IMPL: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sqrt": np.sqrt,
    "square": lambda v: v * v,
    "inv": lambda v: np.divide(1.0, v),
    "neg": np.negative,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "arcsin": np.arcsin,
    "arccos": np.arccos,
    "tanh": np.tanh,
}

_BINARY_IMPL: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "pow": lambda b, e: np.power(b, e),
}

COMMUTATIVE = frozenset({"+", "*"})

# Infix spellings accepted by the parser for binary operators.
_INFIX_ALIASES = {"^": "pow", "**": "pow"}


class ExpressionError(ValueError):
    """Base class for parse/build failures."""


class UnknownSymbolError(ExpressionError):
    def __init__(self, symbol: str):
        super().__init__(f"unknown symbol: {symbol!r}")
        self.symbol = symbol


class ArityError(ExpressionError):
    pass


class Role(Enum):
    OPERATOR = "operator"
    VARIABLE = "variable"
    PARAMETER = "parameter"
    INTEGER_CONSTANT = "integer_constant"


@dataclass(frozen=True)
class BasisEntry:
    symbol: str
    arity: int
    role: Role


def _entry_for(symbol: str) -> BasisEntry:
    if symbol == VAR:
        return BasisEntry(VAR, 0, Role.VARIABLE)
    if symbol == PARAM:
        return BasisEntry(PARAM, 0, Role.PARAMETER)
    if symbol == CONST:
        return BasisEntry(CONST, 0, Role.INTEGER_CONSTANT)
    if symbol in _UNARY_IMPL:
        return BasisEntry(symbol, 1, Role.OPERATOR)
    if symbol in _BINARY_IMPL:
        return BasisEntry(symbol, 2, Role.OPERATOR)
    raise UnknownSymbolError(symbol)


@dataclass(frozen=True)
class OperatorBasis:
    """The symbol set candidate trees are built from."""

    entries: tuple[BasisEntry, ...]

    def __post_init__(self):
        symbols = [e.symbol for e in self.entries]
        if len(symbols) != len(set(symbols)):
            raise ExpressionError("duplicate symbols in basis")

    @classmethod
    def from_symbols(cls, symbols: Sequence[str]) -> "OperatorBasis":
        return cls(tuple(_entry_for(s) for s in symbols))

    @property
    def symbols(self) -> frozenset[str]:
        return frozenset(e.symbol for e in self.entries)

    def nullary(self, role: Role) -> list[BasisEntry]:
        return [e for e in self.entries if e.arity == 0 and e.role == role]

    def operators(self, arity: int) -> list[BasisEntry]:
        return [e for e in self.entries if e.arity == arity]

    def tokens(self) -> list[str]:
        """Alphabet this basis contributes to a language-model vocabulary."""
        return sorted(self.symbols)


# Named bases used throughout; "sr" is the benchmark basis, "rational" the
# one used for prior-vs-order comparisons, "corpus" the equation-corpus set.
BASIS_PRESETS: dict[str, tuple[str, ...]] = {
    "sr": (VAR, PARAM, "sqrt", "square", "sin", "cos", "+", "*", "-", "/", "pow"),
    "rational": (VAR, PARAM, "inv", "+", "-", "*", "/", "pow"),
    "corpus": (VAR, PARAM, CONST, "+", "-", "*", "/", "pow", "sqrt",
               "exp", "log", "sin", "cos", "arcsin", "arccos", "tanh", "neg"),
}


def resolve_basis(spec: str) -> OperatorBasis:
    """Turn a preset name or comma-separated symbol list into a basis."""
    if spec in BASIS_PRESETS:
        return OperatorBasis.from_symbols(BASIS_PRESETS[spec])
    return OperatorBasis.from_symbols([s.strip() for s in spec.split(",") if s.strip()])


@dataclass(frozen=True)
class Node:
    symbol: str                 # VAR, PARAM, CONST or an operator name
    payload: int | float | None  # var index / param slot / constant value
    children: tuple[int, ...]

    @property
    def arity(self) -> int:
        return len(self.children)


@dataclass(frozen=True)
class ExprTree:
    """Immutable operator tree stored as a node arena (root last)."""

    nodes: tuple[Node, ...]
    root: int
    param_slots: tuple[int, ...]      # node id of the first leaf per slot
    int_constants: tuple[int, ...]
    default_theta: tuple[float, ...] | None = None

    @property
    def complexity(self) -> int:
        return len(self.nodes)

    @property
    def n_ops(self) -> int:
        """Number of distinct symbols used (nullary symbols included)."""
        return len({n.symbol for n in self.nodes})

    @property
    def n_params(self) -> int:
        return len(self.param_slots)

    def __str__(self) -> str:
        return canonical_form(self)


class _Builder:
    """Accumulates nodes; leaves assign parameter slots on first use."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.param_slots: list[int] = []
        self.int_constants: list[int] = []
        self.theta: list[float | None] = []
        self._named_slots: dict[str, int] = {}

    def add(self, symbol, payload, children=()) -> int:
        self.nodes.append(Node(symbol, payload, tuple(children)))
        return len(self.nodes) - 1

    def var(self, index: int = 0) -> int:
        return self.add(VAR, index)

    def param(self, value: float | None = None, name: str | None = None) -> int:
        if name is not None and name in self._named_slots:
            slot = self._named_slots[name]
            return self.add(PARAM, slot)
        slot = len(self.param_slots)
        node = self.add(PARAM, slot)
        self.param_slots.append(node)
        self.theta.append(value)
        if name is not None:
            self._named_slots[name] = slot
        return node

    def const(self, value: int) -> int:
        if value < 1:
            raise ExpressionError(f"integer constants must be >= 1, got {value}")
        self.int_constants.append(value)
        return self.add(CONST, value)

    def finish(self, root: int) -> ExprTree:
        theta = None
        if self.theta and all(v is not None for v in self.theta):
            theta = tuple(float(v) for v in self.theta)
        return ExprTree(tuple(self.nodes), root, tuple(self.param_slots),
                        tuple(self.int_constants), theta)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)

_VAR_RE = re.compile(r"^x(\d+)?$")
_PARAM_RE = re.compile(r"^a(\d+)?$")

# Identifiers that denote fixed mathematical constants; they set a scale the
# way a fitted parameter does, so they are mapped to parameter leaves.
_NAMED_CONSTANTS = {"pi": math.pi, "e": math.e}


def _tokenize(text: str) -> list[str]:
    tokens, pos = [], 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"bad character at position {pos}: {text[pos:pos + 10]!r}")
        tokens.append(m.group(m.lastgroup))
        pos = m.end()
    return tokens


class _Parser:
    """Precedence-climbing parser over the infix grammar.

    Accepts `+ - * / ^ **`, function-call syntax for any operator
    (including binary ones, so canonical prefix strings re-parse), `x`/`xN`
    variables, `a`/`aN` parameters and numeric literals. Integer literals
    become constant leaves; decimals become parameter leaves carrying their
    value as the default theta entry.
    """

    def __init__(self, tokens: list[str], basis: OperatorBasis,
                 variables: Sequence[str] | None, lenient_names: bool):
        self.tokens = tokens
        self.pos = 0
        self.basis = basis
        self.variables = list(variables) if variables else None
        self.lenient = lenient_names
        self.b = _Builder()
        allowed = set(basis.symbols)
        allowed.add("neg")  # sign nodes always representable
        self.allowed = allowed

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ExpressionError("unexpected end of expression")
        self.pos += 1
        return tok

    def expect(self, tok: str):
        got = self.next()
        if got != tok:
            raise ExpressionError(f"expected {tok!r}, got {got!r}")

    def _check(self, symbol: str):
        if symbol not in self.allowed:
            raise UnknownSymbolError(symbol)

    def parse(self) -> int:
        node = self.expr()
        if self.peek() is not None:
            raise ExpressionError(f"trailing input at token {self.peek()!r}")
        return node

    def expr(self) -> int:
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.next()
            self._check(op)
            node = self.b.add(op, None, (node, self.term()))
        return node

    def term(self) -> int:
        node = self.unary()
        while self.peek() in ("*", "/"):
            op = self.next()
            self._check(op)
            node = self.b.add(op, None, (node, self.unary()))
        return node

    def _group_has_comma(self, start: int) -> bool:
        # start points at "("; look for a comma at depth 1
        depth = 0
        for tok in self.tokens[start:]:
            if tok == "(":
                depth += 1
            elif tok == ")":
                depth -= 1
                if depth == 0:
                    return False
            elif tok == "," and depth == 1:
                return True
        return False

    def unary(self) -> int:
        tok = self.peek()
        if tok in ("+", "-"):
            self.next()
            # call form "+(u, v)" / "-(u, v)" (canonical strings) vs unary sign
            if self.peek() == "(" and self._group_has_comma(self.pos):
                self._check(tok)
                self.next()
                first = self.expr()
                self.expect(",")
                second = self.expr()
                self.expect(")")
                return self.b.add(tok, None, (first, second))
            if tok == "+":
                return self.unary()
            self._check("neg")
            return self.b.add("neg", None, (self.unary(),))
        return self.power()

    def power(self) -> int:
        base = self.atom()
        if self.peek() in ("^", "**"):
            self.next()
            self._check("pow")
            # right-associative; exponent may carry a unary sign
            return self.b.add("pow", None, (base, self.unary()))
        return base

    def atom(self) -> int:
        tok = self.next()
        if tok == "(":
            node = self.expr()
            self.expect(")")
            return node
        if re.fullmatch(r"\d+", tok):
            return self.b.const(int(tok))
        if re.fullmatch(r"\d+\.\d*|\.\d+", tok):
            return self.b.param(float(tok))
        if tok in _BINARY_IMPL or tok in _UNARY_IMPL or tok in ("+", "-", "*", "/"):
            # operator in function-call form
            return self.call(tok)
        if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok):
            return self.name(tok)
        raise ExpressionError(f"unexpected token {tok!r}")

    def call(self, symbol: str) -> int:
        self._check(symbol)
        arity = 1 if symbol in _UNARY_IMPL else 2
        self.expect("(")
        args = [self.expr()]
        while self.peek() == ",":
            self.next()
            args.append(self.expr())
        self.expect(")")
        if len(args) != arity:
            raise ArityError(f"{symbol} takes {arity} argument(s), got {len(args)}")
        return self.b.add(symbol, None, tuple(args))

    def name(self, tok: str) -> int:
        if self.peek() == "(":
            if tok in _UNARY_IMPL or tok in _BINARY_IMPL:
                return self.call(tok)
            raise UnknownSymbolError(tok)
        if self.variables is not None and tok in self.variables:
            return self.b.var(self.variables.index(tok))
        m = _VAR_RE.match(tok)
        if m and self.variables is None:
            return self.b.var(int(m.group(1)) if m.group(1) else 0)
        m = _PARAM_RE.match(tok)
        if m:
            # bare "a" leaves are independent parameters; only indexed
            # names (a0, a1, ...) share a slot
            return self.b.param(None, name=tok if m.group(1) else None)
        if tok in _NAMED_CONSTANTS:
            return self.b.param(_NAMED_CONSTANTS[tok])
        if self.lenient:
            return self.b.param(None, name=tok)
        raise UnknownSymbolError(tok)


def parse_expression(text: str, basis: OperatorBasis, *,
                     variables: Sequence[str] | None = None,
                     lenient_names: bool = False) -> ExprTree:
    """Parse an infix expression into an ExprTree over `basis`.

    `variables` names the symbols that map to variable leaves (used for
    corpus equations); without it `x`/`xN` are variables. Unknown
    identifiers raise unless `lenient_names`, which maps them to parameter
    leaves.
    """
    if not text or not text.strip():
        raise ExpressionError("empty expression")
    parser = _Parser(_tokenize(text), basis, variables, lenient_names)
    root = parser.parse()
    return parser.b.finish(root)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(tree: ExprTree, theta: Sequence[float], x: np.ndarray, *,
             abs_pow: bool = False) -> np.ndarray:
    """Pointwise evaluation over an N×d input matrix.

    Domain errors (log of a negative, fractional power of a negative, ...)
    propagate as NaN/inf entries rather than exceptions. With `abs_pow`,
    powers are evaluated as |base|^exponent.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    theta = np.asarray(theta, dtype=float)
    if theta.shape[0] != tree.n_params:
        raise ValueError(f"expected {tree.n_params} parameters, got {theta.shape[0]}")
    n = x.shape[0]
    values: list[np.ndarray | None] = [None] * len(tree.nodes)
    with np.errstate(all="ignore"):
        for i, node in enumerate(_postorder(tree)):
            nd = tree.nodes[node]
            if nd.symbol == VAR:
                idx = nd.payload or 0
                if idx >= x.shape[1]:
                    raise ValueError(f"input has {x.shape[1]} columns, variable index {idx}")
                values[node] = x[:, idx]
            elif nd.symbol == PARAM:
                values[node] = np.full(n, theta[nd.payload])
            elif nd.symbol == CONST:
                values[node] = np.full(n, float(nd.payload))
            elif nd.arity == 1:
                values[node] = _UNARY_IMPL[nd.symbol](values[nd.children[0]])
            else:
                left, right = values[nd.children[0]], values[nd.children[1]]
                if nd.symbol == "pow" and abs_pow:
                    values[node] = np.power(np.abs(left), right)
                else:
                    values[node] = _BINARY_IMPL[nd.symbol](left, right)
    return np.asarray(values[tree.root], dtype=float)


def _postorder(tree: ExprTree) -> Iterator[int]:
    stack = [(tree.root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            yield node
            continue
        stack.append((node, True))
        for child in reversed(tree.nodes[node].children):
            stack.append((child, False))


# ---------------------------------------------------------------------------
# Canonical form
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CanonPart:
    """Canonical text plus the leaf-content flags collapse rules need."""
    text: str
    has_var: bool
    has_param: bool


def compose_canonical(symbol: str, payload, children: Sequence[CanonPart]) -> CanonPart:
    """Canonical form of a node given its children's canonical forms.

    Compositional by construction, so enumeration can deduplicate
    bottom-up with the exact same rules `canonical_form` applies:
    commutative operands sorted lexicographically, variable-free subtrees
    containing a parameter collapsed to a single parameter leaf, and
    double signs eliminated.
    """
    if symbol == VAR:
        idx = payload or 0
        return CanonPart(VAR if idx == 0 else f"x{idx}", True, False)
    if symbol == PARAM:
        return CanonPart(PARAM, False, True)
    if symbol == CONST:
        return CanonPart(str(int(payload)), False, False)

    has_var = any(c.has_var for c in children)
    has_param = any(c.has_param for c in children)
    if has_param and not has_var:
        return CanonPart(PARAM, False, True)
    if symbol == "neg" and children[0].text.startswith("neg("):
        inner = children[0]
        return CanonPart(inner.text[4:-1], inner.has_var, inner.has_param)
    texts = [c.text for c in children]
    if symbol in COMMUTATIVE:
        texts.sort()
    return CanonPart(f"{symbol}({', '.join(texts)})", has_var, has_param)


def _canon_part(tree: ExprTree) -> CanonPart:
    parts: list[CanonPart | None] = [None] * len(tree.nodes)
    for node in _postorder(tree):
        nd = tree.nodes[node]
        parts[node] = compose_canonical(nd.symbol, nd.payload,
                                        [parts[c] for c in nd.children])
    return parts[tree.root]


def canonical_form(tree: ExprTree) -> str:
    """Deterministic serialization; equal strings mean identical families."""
    return _canon_part(tree).text


_CANONICAL_BASIS = OperatorBasis.from_symbols(
    (VAR, PARAM, CONST) + tuple(_UNARY_IMPL) + tuple(_BINARY_IMPL))


def parse_canonical(text: str) -> ExprTree:
    """Parse a canonical (or any) expression against the full symbol table."""
    return parse_expression(text, _CANONICAL_BASIS)


# ---------------------------------------------------------------------------
# Phrases
# ---------------------------------------------------------------------------

class PhraseKind(Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class Phrase:
    """Ancestor-chain context plus target token, oldest word first.

    LEFT: the target is the root, an only child, or a left child; context
    is its direct-ancestor chain. RIGHT: the target is a right child; the
    word before it is its left sibling, preceded by the shared ancestors.
    """
    kind: PhraseKind
    words: tuple[str, ...]

    @property
    def target(self) -> str:
        return self.words[-1]

    @property
    def context(self) -> tuple[str, ...]:
        return self.words[:-1]


def extract_phrases(tree: ExprTree, n: int) -> list[Phrase]:
    """One phrase per node; ancestor context truncated for an order-n model.

    LEFT contexts keep the (n-1) most recent ancestors. RIGHT contexts
    keep the left sibling plus the (n-1) most recent ancestors; back-off
    later drops the oldest ancestor first and the sibling last.
    """
    if n < 1:
        raise ValueError("n-gram order must be >= 1")
    phrases: list[Phrase] = []
    # stack of (node, ancestor tokens, phrase kind, left-sibling token)
    stack: list[tuple[int, tuple[str, ...], PhraseKind, str | None]] = [
        (tree.root, (), PhraseKind.LEFT, None)]
    while stack:
        node, ancestors, kind, sibling = stack.pop()
        nd = tree.nodes[node]
        if kind == PhraseKind.RIGHT:
            context = ancestors[-(n - 1):] if n > 1 else ()
            words = context + (sibling, nd.symbol)
        else:
            context = ancestors[-(n - 1):] if n > 1 else ()
            words = context + (nd.symbol,)
        phrases.append(Phrase(kind, words))
        chain = ancestors + (nd.symbol,)
        if nd.arity == 1:
            stack.append((nd.children[0], chain, PhraseKind.LEFT, None))
        elif nd.arity == 2:
            left, right = nd.children
            left_token = tree.nodes[left].symbol
            stack.append((right, chain, PhraseKind.RIGHT, left_token))
            stack.append((left, chain, PhraseKind.LEFT, None))
    return phrases
