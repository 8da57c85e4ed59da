"""Immutable expression trees for symbolic regression.

An :class:`Expr` stores its nodes in prefix (Polish) order, the same flat
layout gplearn uses.  Subtrees are contiguous slices, which keeps the genetic
operators simple, while the ``kind``/``children`` accessors give a nested view
for code that prefers recursion.

All primitives are protected: division by a near-zero denominator returns 1.0
and every function output is saturated to ``[-VALUE_BOUND, VALUE_BOUND]``, so
evaluation on finite input never produces NaN or infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "VALUE_BOUND",
    "PDIV_EPS",
    "Constant",
    "Variable",
    "FunctionOp",
    "Expr",
    "ExprError",
    "VariableOutOfRange",
    "FUNCTIONS",
    "DEFAULT_FUNCTION_SET",
    "get_function",
    "const",
    "var",
    "add",
    "sub",
    "mul",
    "pdiv",
    "evaluate",
    "evaluate_batch",
    "size",
    "depth",
    "to_infix_string",
    "to_prefix_string",
    "parse_prefix",
]

VALUE_BOUND = 1e150
PDIV_EPS = 1e-3


class ExprError(ValueError):
    pass


class VariableOutOfRange(ExprError, IndexError):
    pass


@dataclass(frozen=True, slots=True)
class Constant:
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True, slots=True)
class Variable:
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ExprError(f"variable index must be >= 0, got {self.index}")


@dataclass(frozen=True, slots=True)
class FunctionOp:
    """A named primitive.

    ``scalar`` operates on Python floats and ``vector`` on numpy arrays; the
    two must perform the same floating-point operations so that row-wise and
    batch evaluation agree bit for bit.
    """

    symbol: str
    arity: int
    scalar: Callable = field(compare=False, repr=False)
    vector: Callable = field(compare=False, repr=False)
    infix: str | None = field(default=None, compare=False)


def _clip(v: float) -> float:
    # min/max map +-inf to the bound; operands are never NaN because every
    # intermediate value is already clipped.
    if v > VALUE_BOUND:
        return VALUE_BOUND
    if v < -VALUE_BOUND:
        return -VALUE_BOUND
    return v


def _pdiv_scalar(a: float, b: float) -> float:
    if abs(b) < PDIV_EPS:
        return 1.0
    return a / b


def _pdiv_vector(a, b):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return np.where(np.abs(b) < PDIV_EPS, 1.0, np.divide(a, b))


FUNCTIONS: dict[str, FunctionOp] = {
    "add": FunctionOp("add", 2, lambda a, b: a + b, np.add, "+"),
    "sub": FunctionOp("sub", 2, lambda a, b: a - b, np.subtract, "-"),
    "mul": FunctionOp("mul", 2, lambda a, b: a * b, np.multiply, "*"),
    "pdiv": FunctionOp("pdiv", 2, _pdiv_scalar, _pdiv_vector, "/"),
    "neg": FunctionOp("neg", 1, lambda a: -a, np.negative),
}

DEFAULT_FUNCTION_SET = ("add", "sub", "mul", "pdiv")


def get_function(symbol: str) -> FunctionOp:
    try:
        return FUNCTIONS[symbol]
    except KeyError:
        raise ExprError(f"unknown function {symbol!r}") from None


Node = Constant | Variable | FunctionOp


@dataclass(frozen=True, slots=True)
class Expr:
    """Expression tree stored as a prefix-ordered tuple of nodes."""

    nodes: tuple

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if not nodes:
            raise ExprError("empty expression")
        pending = 1
        for i, node in enumerate(nodes):
            if pending == 0:
                raise ExprError(f"trailing nodes after position {i}")
            if isinstance(node, FunctionOp):
                pending += node.arity - 1
            elif isinstance(node, (Constant, Variable)):
                pending -= 1
            else:
                raise ExprError(f"invalid node {node!r}")
        if pending != 0:
            raise ExprError("incomplete expression")

    @classmethod
    def trusted(cls, nodes: tuple) -> Expr:
        """Wrap an already well-formed node tuple without re-validating it."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "nodes", nodes)
        return obj

    @classmethod
    def leaf(cls, node: Constant | Variable) -> Expr:
        return cls((node,))

    @classmethod
    def apply(cls, op: FunctionOp | str, *children: Expr) -> Expr:
        if isinstance(op, str):
            op = get_function(op)
        if len(children) != op.arity:
            raise ExprError(f"{op.symbol} takes {op.arity} children, got {len(children)}")
        nodes = [op]
        for child in children:
            nodes.extend(child.nodes)
        return cls(tuple(nodes))

    @property
    def root(self) -> Node:
        return self.nodes[0]

    @property
    def kind(self) -> type:
        return type(self.nodes[0])

    @property
    def children(self) -> tuple[Expr, ...]:
        root = self.nodes[0]
        if not isinstance(root, FunctionOp):
            return ()
        out = []
        start = 1
        for _ in range(root.arity):
            end = subtree_end(self.nodes, start)
            out.append(Expr.trusted(self.nodes[start:end]))
            start = end
        return tuple(out)

    def __len__(self) -> int:
        return len(self.nodes)

    def __str__(self) -> str:
        return to_infix_string(self)

    def subtree_slice(self, start: int) -> slice:
        return slice(start, subtree_end(self.nodes, start))

    def replace_subtree(self, start: int, new: Expr) -> Expr:
        end = subtree_end(self.nodes, start)
        return Expr.trusted(self.nodes[:start] + new.nodes + self.nodes[end:])

    def max_variable(self) -> int:
        """Largest variable index used, or -1 if there is none."""
        return max((n.index for n in self.nodes if isinstance(n, Variable)), default=-1)


def subtree_end(nodes: Sequence, start: int) -> int:
    """Index one past the end of the subtree rooted at ``start``."""
    pending = 1
    i = start
    while pending:
        node = nodes[i]
        if isinstance(node, FunctionOp):
            pending += node.arity - 1
        else:
            pending -= 1
        i += 1
    return i


def const(value: float) -> Expr:
    return Expr((Constant(value),))


def var(index: int) -> Expr:
    return Expr((Variable(index),))


def add(a: Expr, b: Expr) -> Expr:
    return Expr.apply(FUNCTIONS["add"], a, b)


def sub(a: Expr, b: Expr) -> Expr:
    return Expr.apply(FUNCTIONS["sub"], a, b)


def mul(a: Expr, b: Expr) -> Expr:
    return Expr.apply(FUNCTIONS["mul"], a, b)


def pdiv(a: Expr, b: Expr) -> Expr:
    return Expr.apply(FUNCTIONS["pdiv"], a, b)


def _check_width(expr: Expr, width: int) -> None:
    top = expr.max_variable()
    if top >= width:
        raise VariableOutOfRange(f"expression uses x{top} but input has {width} columns")


def evaluate(expr: Expr, row: Sequence[float]) -> float:
    """Evaluate ``expr`` on a single row of feature values."""
    _check_width(expr, len(row))
    stack: list[float] = []
    for node in reversed(expr.nodes):
        if isinstance(node, Constant):
            stack.append(node.value)
        elif isinstance(node, Variable):
            stack.append(float(row[node.index]))
        else:
            args = [stack.pop() for _ in range(node.arity)]
            try:
                out = node.scalar(*args)
            except OverflowError:
                out = math.inf
            stack.append(_clip(out))
    return stack[0]


def evaluate_batch(expr: Expr, X: np.ndarray) -> np.ndarray:
    """Evaluate ``expr`` on every row of ``X`` (shape ``(n, m)``)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ExprError(f"X must be 2-D, got shape {X.shape}")
    _check_width(expr, X.shape[1])
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _eval_columns(expr.nodes, X)


def _eval_columns(nodes: tuple, X: np.ndarray) -> np.ndarray:
    # caller validates widths and sets np.errstate
    stack: list = []
    pop = stack.pop
    push = stack.append
    for node in reversed(nodes):
        t = type(node)
        if t is Constant:
            push(node.value)
        elif t is Variable:
            push(X[:, node.index])
        elif node.arity == 2:
            a = pop()
            out = node.vector(a, pop())
            push(np.clip(out, -VALUE_BOUND, VALUE_BOUND, out=out if type(out) is np.ndarray else None))
        else:
            args = [pop() for _ in range(node.arity)]
            out = np.asarray(node.vector(*args), dtype=np.float64)
            push(np.clip(out, -VALUE_BOUND, VALUE_BOUND))
    result = stack[0]
    if np.ndim(result) == 0:
        return np.full(X.shape[0], float(result))
    if result.base is not None or result is X:
        return np.array(result, dtype=np.float64, copy=True)
    return result


def size(expr: Expr) -> int:
    return len(expr.nodes)


def depth(expr: Expr) -> int:
    stack: list[int] = []
    push = stack.append
    pop = stack.pop
    for node in reversed(expr.nodes):
        if type(node) is FunctionOp:
            deepest = 0
            for _ in range(node.arity):
                d = pop()
                if d > deepest:
                    deepest = d
            push(deepest + 1)
        else:
            push(1)
    return stack[0]


def _format_constant(value: float) -> str:
    if math.isfinite(value) and value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _format_leaf(node: Constant | Variable) -> str:
    if isinstance(node, Constant):
        return _format_constant(node.value)
    return f"x{node.index}"


def to_infix_string(expr: Expr) -> str:
    """Fully parenthesized infix text, e.g. ``"((x0 * x1) + x2)"``."""
    stack: list[str] = []
    for node in reversed(expr.nodes):
        if not isinstance(node, FunctionOp):
            stack.append(_format_leaf(node))
            continue
        args = [stack.pop() for _ in range(node.arity)]
        if node.infix is not None and node.arity == 2:
            stack.append(f"({args[0]} {node.infix} {args[1]})")
        else:
            stack.append(f"{node.symbol}({', '.join(args)})")
    return stack[0]


def to_prefix_string(expr: Expr) -> str:
    """S-expression text, e.g. ``"(add (mul x0 x1) x2)"``."""
    stack: list[str] = []
    for node in reversed(expr.nodes):
        if isinstance(node, FunctionOp):
            args = [stack.pop() for _ in range(node.arity)]
            stack.append(f"({node.symbol} {' '.join(args)})")
        else:
            leaf = _format_leaf(node)
            # keep integral constants distinguishable from variables on parse
            if isinstance(node, Constant) and "." not in leaf and "e" not in leaf:
                leaf = repr(node.value)
            stack.append(leaf)
    return stack[0]


def parse_prefix(text: str) -> Expr:
    """Inverse of :func:`to_prefix_string`."""
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()
    nodes: list[Node] = []
    pos = 0

    def parse() -> None:
        nonlocal pos
        if pos >= len(tokens):
            raise ExprError("unexpected end of input")
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            if pos >= len(tokens):
                raise ExprError("unexpected end of input")
            op = get_function(tokens[pos])
            pos += 1
            nodes.append(op)
            for _ in range(op.arity):
                parse()
            if pos >= len(tokens) or tokens[pos] != ")":
                raise ExprError(f"expected ')' after {op.symbol} arguments")
            pos += 1
        elif tok == ")":
            raise ExprError("unexpected ')'")
        elif tok.startswith("x") and tok[1:].isdigit():
            nodes.append(Variable(int(tok[1:])))
        else:
            try:
                nodes.append(Constant(float(tok)))
            except ValueError:
                raise ExprError(f"bad token {tok!r}") from None

    parse()
    if pos != len(tokens):
        raise ExprError("trailing tokens")
    return Expr(tuple(nodes))
