"""Two-layer bounded-time STL: AST, parser, printer, horizon and monitor.

Formulas have the shape ``F[0,To] inner`` or ``G[0,To] inner`` where
``inner`` is a positive Boolean combination (``&``, ``|``) of leaves
``F[0,Tin] phi`` / ``G[0,Tin] phi`` and ``phi`` is propositional
(``true``, axis predicates, ``!``, ``&``; ``|`` is rewritten with De Morgan).

Signals are sampled at unit time steps; predicates compare one coordinate
of the state embedding against a threshold with a strict inequality.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

DEFAULT_NAMES = ("x", "y")


class FormulaSyntaxError(ValueError):
    """Malformed formula text."""


class FragmentError(ValueError):
    """Well-formed text that falls outside the two-layer fragment."""


class DimensionError(ValueError):
    pass


class SignalTooShort(ValueError):
    pass


# -- propositional layer -----------------------------------------------------

@dataclass(frozen=True)
class Predicate:
    dimension: int
    comparator: str  # "<" or ">"
    threshold: float

    def __post_init__(self):
        if self.comparator not in ("<", ">"):
            raise ValueError(f"comparator must be '<' or '>', got {self.comparator!r}")
        if self.dimension < 0:
            raise ValueError("dimension must be non-negative")


@dataclass(frozen=True)
class TrueProp:
    pass


@dataclass(frozen=True)
class Pred:
    predicate: Predicate


@dataclass(frozen=True)
class Not:
    child: "PropFormula"


@dataclass(frozen=True)
class And:
    left: "PropFormula"
    right: "PropFormula"


PropFormula = Union[TrueProp, Pred, Not, And]


# -- inner (temporal leaf) layer ----------------------------------------------

@dataclass(frozen=True)
class Leaf:
    """``F[0,bound] phi`` (kind "F") or ``G[0,bound] phi`` (kind "G")."""

    kind: str
    bound: int
    phi: PropFormula


@dataclass(frozen=True)
class InnerAnd:
    left: "InnerFormula"
    right: "InnerFormula"


@dataclass(frozen=True)
class InnerOr:
    left: "InnerFormula"
    right: "InnerFormula"


InnerFormula = Union[Leaf, InnerAnd, InnerOr]


@dataclass(frozen=True)
class StlFormula:
    kind: str
    bound: int
    inner: InnerFormula

    def __post_init__(self):
        if self.kind not in ("F", "G"):
            raise FragmentError(f"outer operator must be F or G, got {self.kind!r}")
        if self.bound < 0:
            raise FragmentError("interval bound must be non-negative")
        leaves = inner_leaves(self.inner)
        bounds = {leaf.bound for leaf in leaves}
        if len(bounds) != 1:
            raise FragmentError(f"inner leaves must share one bound, got {sorted(bounds)}")

    @property
    def leaves(self) -> tuple[Leaf, ...]:
        return inner_leaves(self.inner)

    @property
    def inner_bound(self) -> int:
        return self.leaves[0].bound

    def __str__(self) -> str:
        return to_text(self)


def inner_leaves(node: InnerFormula) -> tuple[Leaf, ...]:
    """Temporal leaves of an inner formula, left to right."""
    if isinstance(node, Leaf):
        return (node,)
    if isinstance(node, (InnerAnd, InnerOr)):
        return inner_leaves(node.left) + inner_leaves(node.right)
    raise TypeError(f"not an inner formula: {node!r}")


def prop_or(a: PropFormula, b: PropFormula) -> PropFormula:
    return Not(And(Not(a), Not(b)))


# -- horizon -------------------------------------------------------------------

def horizon(formula) -> int:
    """Number of steps after t needed to decide the formula at t."""
    if isinstance(formula, (TrueProp, Pred)):
        return 0
    if isinstance(formula, Not):
        return horizon(formula.child)
    if isinstance(formula, (And, InnerAnd, InnerOr)):
        return max(horizon(formula.left), horizon(formula.right))
    if isinstance(formula, Leaf):
        return formula.bound + horizon(formula.phi)
    if isinstance(formula, StlFormula):
        return formula.bound + horizon(formula.inner)
    raise TypeError(f"not a formula: {formula!r}")


# -- evaluation ----------------------------------------------------------------

def max_dimension(phi: PropFormula) -> int:
    """Largest embedding coordinate referenced, or -1 if none."""
    if isinstance(phi, TrueProp):
        return -1
    if isinstance(phi, Pred):
        return phi.predicate.dimension
    if isinstance(phi, Not):
        return max_dimension(phi.child)
    return max(max_dimension(phi.left), max_dimension(phi.right))


def eval_prop(phi: PropFormula, point) -> bool:
    point = np.asarray(point, dtype=float).reshape(-1)
    if max_dimension(phi) >= point.shape[0]:
        raise DimensionError(
            f"predicate uses coordinate {max_dimension(phi)} but point has {point.shape[0]}")
    return _eval(phi, point)


def _eval(phi, point) -> bool:
    if isinstance(phi, TrueProp):
        return True
    if isinstance(phi, Pred):
        p = phi.predicate
        v = point[p.dimension]
        return bool(v < p.threshold) if p.comparator == "<" else bool(v > p.threshold)
    if isinstance(phi, Not):
        return not _eval(phi.child, point)
    if isinstance(phi, And):
        return _eval(phi.left, point) and _eval(phi.right, point)
    raise TypeError(f"not a propositional formula: {phi!r}")


def _sat_inner(node: InnerFormula, signal: np.ndarray, t: int) -> bool:
    if isinstance(node, Leaf):
        window = [_eval(node.phi, signal[t + k]) for k in range(node.bound + 1)]
        return max(window) if node.kind == "F" else min(window)
    left = _sat_inner(node.left, signal, t)
    right = _sat_inner(node.right, signal, t)
    return min(left, right) if isinstance(node, InnerAnd) else max(left, right)


def monitor(formula: StlFormula, signal: Sequence) -> bool:
    """Boolean satisfaction of ``formula`` by ``signal`` at time 0.

    ``signal`` is a sequence of embedding vectors, one per step; points past
    the formula horizon are ignored.
    """
    sig = np.asarray(signal, dtype=float)
    if sig.ndim == 1:
        sig = sig[:, None]
    need = horizon(formula) + 1
    if sig.shape[0] < need:
        raise SignalTooShort(f"signal has {sig.shape[0]} points, formula needs {need}")
    for leaf in formula.leaves:
        if max_dimension(leaf.phi) >= sig.shape[1]:
            raise DimensionError("signal dimensionality does not cover the predicates")
    values = [_sat_inner(formula.inner, sig, t) for t in range(formula.bound + 1)]
    return bool(max(values) if formula.kind == "F" else min(values))


# -- printing ------------------------------------------------------------------

def _fmt_number(v: float) -> str:
    return repr(int(v)) if float(v).is_integer() else repr(float(v))


def _prop_text(phi, names) -> str:
    if isinstance(phi, TrueProp):
        return "true"
    if isinstance(phi, Pred):
        p = phi.predicate
        name = names[p.dimension] if p.dimension < len(names) else f"s{p.dimension}"
        return f"{name} {p.comparator} {_fmt_number(p.threshold)}"
    if isinstance(phi, Not):
        return f"!({_prop_text(phi.child, names)})"
    return f"({_prop_text(phi.left, names)} & {_prop_text(phi.right, names)})"


def _inner_text(node, names) -> str:
    if isinstance(node, Leaf):
        body = _prop_text(node.phi, names)
        if not body.startswith("("):
            body = f"({body})"
        return f"{node.kind}[0,{node.bound}] {body}"
    op = "&" if isinstance(node, InnerAnd) else "|"
    return f"({_inner_text(node.left, names)} {op} {_inner_text(node.right, names)})"


def to_text(formula, names: Sequence[str] = DEFAULT_NAMES) -> str:
    if isinstance(formula, StlFormula):
        return f"{formula.kind}[0,{formula.bound}] {_inner_text(formula.inner, names)}"
    if isinstance(formula, (Leaf, InnerAnd, InnerOr)):
        return _inner_text(formula, names)
    return _prop_text(formula, names)


# -- parsing -------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[()\[\],&|!<>])
""", re.VERBOSE)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r} at {pos}")
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


# Generic syntax tree produced by the parser before fragment classification.
@dataclass(frozen=True)
class _Temporal:
    kind: str
    lo: float
    hi: float
    child: object


@dataclass(frozen=True)
class _Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class _Neg:
    child: object


class _Parser:
    """Recursive descent over ``or > and > unary`` with temporal prefixes."""

    def __init__(self, text: str, names: Sequence[str]):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.names = {n: i for i, n in enumerate(names)}

    def peek(self):
        return self.tokens[self.pos]

    def take(self, value=None):
        tok = self.tokens[self.pos]
        if value is not None and tok[1] != value:
            raise FormulaSyntaxError(f"expected {value!r} at {tok[2]}, found {tok[1] or 'end'!r}")
        self.pos += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            tok = self.peek()
            raise FormulaSyntaxError(f"unexpected {tok[1]!r} at {tok[2]}")
        return node

    def expr(self):
        node = self.conj()
        while self.peek()[1] == "|":
            self.take()
            node = _Bin("|", node, self.conj())
        return node

    def conj(self):
        node = self.unary()
        while self.peek()[1] == "&":
            self.take()
            node = _Bin("&", node, self.unary())
        return node

    def unary(self):
        kind, value, pos = self.peek()
        if value == "!":
            self.take()
            return _Neg(self.unary())
        if value == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if kind == "name" and value in ("F", "G") and self.tokens[self.pos + 1][1] == "[":
            self.take()
            self.take("[")
            lo = self.number()
            self.take(",")
            hi = self.number()
            self.take("]")
            return _Temporal(value, lo, hi, self.unary())
        if kind == "name":
            return self.atom()
        raise FormulaSyntaxError(f"unexpected {value or 'end'!r} at {pos}")

    def number(self) -> float:
        kind, value, pos = self.take()
        if kind != "num":
            raise FormulaSyntaxError(f"expected a number at {pos}, found {value!r}")
        return float(value)

    def atom(self):
        _, name, pos = self.take()
        if name == "true":
            return TrueProp()
        if name == "false":
            return Not(TrueProp())
        if name not in self.names:
            raise FormulaSyntaxError(f"unknown coordinate {name!r} at {pos}")
        cmp_tok = self.take()
        if cmp_tok[1] not in ("<", ">"):
            raise FormulaSyntaxError(f"expected '<' or '>' at {cmp_tok[2]}")
        return Pred(Predicate(self.names[name], cmp_tok[1], self.number()))


def _interval(node: _Temporal) -> int:
    if node.lo != 0:
        raise FragmentError(f"intervals must start at 0, got [{node.lo:g},{node.hi:g}]")
    if not float(node.hi).is_integer() or node.hi < 0:
        raise FragmentError(f"interval bound must be a non-negative integer, got {node.hi:g}")
    return int(node.hi)


def _depth(node) -> int:
    if isinstance(node, _Temporal):
        return 1 + _depth(node.child)
    if isinstance(node, _Bin):
        return max(_depth(node.left), _depth(node.right))
    if isinstance(node, (_Neg, Not)):
        return _depth(node.child)
    if isinstance(node, And):
        return max(_depth(node.left), _depth(node.right))
    return 0


def _to_prop(node) -> PropFormula:
    if isinstance(node, (TrueProp, Pred)):
        return node
    if isinstance(node, Not):
        return Not(_to_prop(node.child))
    if isinstance(node, _Neg):
        return Not(_to_prop(node.child))
    if isinstance(node, _Bin):
        left, right = _to_prop(node.left), _to_prop(node.right)
        return And(left, right) if node.op == "&" else prop_or(left, right)
    raise FragmentError("temporal operator inside a propositional subformula")


def _to_inner(node) -> InnerFormula:
    if isinstance(node, _Temporal):
        if _depth(node.child) > 0:
            raise FragmentError("more than two nested temporal layers")
        return Leaf(node.kind, _interval(node), _to_prop(node.child))
    if isinstance(node, _Bin):
        left, right = _to_inner(node.left), _to_inner(node.right)
        return InnerAnd(left, right) if node.op == "&" else InnerOr(left, right)
    if isinstance(node, _Neg):
        raise FragmentError("negation is only allowed inside propositional subformulas")
    raise FragmentError("inner formula must be a Boolean combination of F/G leaves")


def parse_formula(text: str, names: Sequence[str] = DEFAULT_NAMES) -> StlFormula:
    """Parse formula text; ``names`` binds coordinate names to embedding indices.

    >>> str(parse_formula("F[0,7] G[0,1] (x > 4 & y > 4)"))
    'F[0,7] G[0,1] (x > 4 & y > 4)'
    """
    tree = _Parser(text, names).parse()
    if not isinstance(tree, _Temporal):
        raise FragmentError("formula must start with an F[0,T] or G[0,T] operator")
    if _depth(tree) > 2:
        raise FragmentError("more than two nested temporal layers")
    if _depth(tree) < 2:
        raise FragmentError("outer operator must wrap temporal subformulas")
    return StlFormula(tree.kind, _interval(tree), _to_inner(tree.child))


# -- JSON ----------------------------------------------------------------------

def to_json(node) -> dict:
    """Node-kind tagged tree."""
    if isinstance(node, StlFormula):
        return {"kind": node.kind, "bound": node.bound, "inner": to_json(node.inner)}
    if isinstance(node, Leaf):
        return {"kind": "leaf", "op": node.kind, "bound": node.bound, "phi": to_json(node.phi)}
    if isinstance(node, InnerAnd):
        return {"kind": "inner_and", "left": to_json(node.left), "right": to_json(node.right)}
    if isinstance(node, InnerOr):
        return {"kind": "inner_or", "left": to_json(node.left), "right": to_json(node.right)}
    if isinstance(node, TrueProp):
        return {"kind": "true"}
    if isinstance(node, Pred):
        p = node.predicate
        return {"kind": "pred", "dimension": p.dimension, "comparator": p.comparator,
                "threshold": p.threshold}
    if isinstance(node, Not):
        return {"kind": "not", "child": to_json(node.child)}
    if isinstance(node, And):
        return {"kind": "and", "left": to_json(node.left), "right": to_json(node.right)}
    raise TypeError(f"cannot serialize {node!r}")


def from_json(doc: dict):
    kind = doc["kind"]
    if kind in ("F", "G"):
        return StlFormula(kind, int(doc["bound"]), from_json(doc["inner"]))
    if kind == "leaf":
        return Leaf(doc["op"], int(doc["bound"]), from_json(doc["phi"]))
    if kind == "inner_and":
        return InnerAnd(from_json(doc["left"]), from_json(doc["right"]))
    if kind == "inner_or":
        return InnerOr(from_json(doc["left"]), from_json(doc["right"]))
    if kind == "true":
        return TrueProp()
    if kind == "pred":
        return Pred(Predicate(int(doc["dimension"]), doc["comparator"], float(doc["threshold"])))
    if kind == "not":
        return Not(from_json(doc["child"]))
    if kind == "and":
        return And(from_json(doc["left"]), from_json(doc["right"]))
    raise ValueError(f"unknown node kind {kind!r}")
