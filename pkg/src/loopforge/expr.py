"""Infix expressions for metric entries.

Grammar (``^`` is right associative and binds tighter than unary minus)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | 'pi' | IDENT | FUNC '(' expr ')' | '(' expr ')'

Parsed trees can be evaluated directly, pretty-printed back to source, or
flattened into the postfix program consumed by the numba kernels.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnknownIdentifier

FUNCTIONS = ("sin", "cos", "tan", "sinh", "cosh", "tanh", "exp", "log", "sqrt", "abs")

_MATH = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "sinh": math.sinh,
    "cosh": math.cosh,
    "tanh": math.tanh,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    index: int


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(src, pos)
        if not m:
            # skip leading whitespace so the position points at the culprit
            bad = pos + len(src[pos:]) - len(src[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {src[bad]!r}", bad)
        kind = m.lastgroup
        text = m.group(kind)
        start = m.start(kind)
        if text == "**":
            text = "^"
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, variables: Sequence[str]):
        self.tokens = _tokenize(src)
        self.i = 0
        self.variables = {name: k for k, name in enumerate(variables)}

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, tok, pos = self.take()
        if tok != text:
            raise ExprSyntaxError(f"unexpected {tok or 'end of input'!r}", pos, expected=repr(text))

    def parse(self) -> Node:
        node = self.expr()
        kind, tok, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {tok!r}", pos, expected="operator or end of input")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()[1]
        if tok == "-":
            self.take()
            return Neg(self.unary())
        if tok == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, tok, pos = self.take()
        if kind == "num":
            return Num(float(tok))
        if kind == "name":
            if tok in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(tok, arg)
            if tok == "pi":
                return Num(math.pi)
            if tok in self.variables:
                return Var(tok, self.variables[tok])
            raise UnknownIdentifier(tok, pos)
        if tok == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExprSyntaxError(
            f"unexpected {tok or 'end of input'!r}", pos, expected="number, identifier, function or '('"
        )


def default_variables(n: int = 9) -> list[str]:
    return [f"x{k + 1}" for k in range(n)]


def parse(src: str, variables: Sequence[str] | None = None) -> Node:
    """Parse ``src`` into an expression tree over the given coordinate names."""
    if variables is None:
        variables = default_variables()
    return _Parser(src, variables).parse()


def evaluate(node: Node, x) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return float(x[node.index])
    if isinstance(node, Neg):
        return -evaluate(node.operand, x)
    if isinstance(node, Call):
        a = evaluate(node.arg, x)
        try:
            return float(_MATH[node.func](a))
        except (ValueError, OverflowError) as exc:
            raise DomainError(f"{node.func}({a!r}): {exc}") from None
    a = evaluate(node.left, x)
    b = evaluate(node.right, x)
    try:
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        out = a**b
    except (ZeroDivisionError, OverflowError) as exc:
        raise DomainError(f"{a!r} {node.op} {b!r}: {exc}") from None
    if isinstance(out, complex):
        raise DomainError(f"{a!r} ^ {b!r} is not real")
    return float(out)


_NP = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
       "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs}


def evaluate_many(node: Node, X) -> np.ndarray:
    """Evaluate on every row of X at once (no domain checking)."""
    X = np.asarray(X, dtype=float)
    if isinstance(node, Num):
        return np.full(len(X), node.value)
    if isinstance(node, Var):
        return X[:, node.index]
    if isinstance(node, Neg):
        return -evaluate_many(node.operand, X)
    if isinstance(node, Call):
        return _NP[node.func](evaluate_many(node.arg, X))
    a = evaluate_many(node.left, X)
    b = evaluate_many(node.right, X)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    return a**b


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def pretty(node: Node) -> str:
    """Render a tree as source text that reparses to the same tree."""
    return _pretty(node, 0)


def _pretty(node: Node, ctx: int) -> str:
    if isinstance(node, Num):
        text = repr(node.value)
        if node.value < 0 or "inf" in text or "nan" in text:
            text = f"({text})"
        return text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({_pretty(node.arg, 0)})"
    if isinstance(node, Neg):
        text = "-" + _pretty(node.operand, 3)
        return f"({text})" if ctx > 3 else text
    prec = _PREC[node.op]
    if node.op == "^":
        # base binds tighter than '^'; exponent may itself be a power
        left = _pretty(node.left, 5)
        right = _pretty(node.right, 3)
    else:
        left = _pretty(node.left, prec)
        right = _pretty(node.right, prec + 1)
    text = f"{left} {node.op} {right}" if node.op != "^" else f"{left}^{right}"
    return f"({text})" if prec < ctx else text


class Expression:
    """A parsed expression bound to coordinate names; callable on a coordinate vector."""

    def __init__(self, src: str, variables: Sequence[str] | None = None):
        self.variables = list(variables) if variables is not None else default_variables()
        self.src = src
        self.tree = parse(src, self.variables)

    def __call__(self, x) -> float:
        return evaluate(self.tree, x)

    def many(self, X) -> np.ndarray:
        return evaluate_many(self.tree, X)

    def __repr__(self):
        return f"Expression({self.src!r})"

    def pretty(self) -> str:
        return pretty(self.tree)


def parse_metric_expression(src: str, variables: Sequence[str] | None = None) -> Expression:
    return Expression(src, variables)


# ---------------------------------------------------------------------------
# postfix programs for the kernels
# ---------------------------------------------------------------------------

OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_NEG, OP_STORE = range(9)
OP_FUNC = {name: 10 + k for k, name in enumerate(FUNCTIONS)}


def _emit(node: Node, ops: list, args: list) -> int:
    """Append postfix code for ``node``; return the stack depth it needs."""
    if isinstance(node, Num):
        ops.append(OP_CONST)
        args.append(node.value)
        return 1
    if isinstance(node, Var):
        ops.append(OP_VAR)
        args.append(float(node.index))
        return 1
    if isinstance(node, Neg):
        d = _emit(node.operand, ops, args)
        ops.append(OP_NEG)
        args.append(0.0)
        return d
    if isinstance(node, Call):
        d = _emit(node.arg, ops, args)
        ops.append(OP_FUNC[node.func])
        args.append(0.0)
        return d
    d1 = _emit(node.left, ops, args)
    d2 = _emit(node.right, ops, args)
    ops.append({"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}[node.op])
    args.append(0.0)
    return max(d1, d2 + 1)


@dataclass(frozen=True)
class Program:
    """Flattened metric: one postfix stream storing each upper-triangular entry."""

    ops: np.ndarray
    args: np.ndarray
    slot_i: np.ndarray
    slot_j: np.ndarray
    stack_size: int
    dim: int


def compile_metric(entries: dict[tuple[int, int], Node], dim: int) -> Program:
    """``entries`` maps (i, j) with i <= j to trees; missing entries compile to zero."""
    ops: list[int] = []
    args: list[float] = []
    slot_i, slot_j = [], []
    depth = 1
    full = {(i, j): entries.get((i, j), Num(0.0)) for i in range(dim) for j in range(i, dim)}
    for (i, j), node in sorted(full.items()):
        depth = max(depth, _emit(node, ops, args))
        ops.append(OP_STORE)
        args.append(float(len(slot_i)))
        slot_i.append(i)
        slot_j.append(j)
    return Program(
        ops=np.asarray(ops, dtype=np.int64),
        args=np.asarray(args, dtype=np.float64),
        slot_i=np.asarray(slot_i, dtype=np.int64),
        slot_j=np.asarray(slot_j, dtype=np.int64),
        stack_size=depth + 1,
        dim=dim,
    )
