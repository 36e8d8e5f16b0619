"""Input / tuning specification language.

A spec is line-oriented UTF-8 text (`.pspec`, `#` comments):

    input n: i32 in {2048, 4096}
    input A: array<f32> size in {n*n} init random(7)
    output C: array<f32> size in {n*n} init zeros
    tune BLOCK_X: i32 in pow2(1..=1024)
    constraint BLOCK_X * BLOCK_Y <= 1024

Value sets are explicit lists `{...}`, half-open `range(start, stop, step)`,
or `pow2(lo..=hi)` (powers of two within inclusive bounds). Scalar and
tuning sets hold literals; array size sets hold integer expressions over
previously declared i32 scalars. Constraints are C-style boolean
expressions over scalar names, tuning names, and `<array>.size`.

Everything here is a pure function over immutable values.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from .errors import (
    DivisionByZero,
    EvaluationError,
    SpecNameError,
    SpecSyntaxError,
    SpecTypeError,
    UnboundName,
)
from .rng import SplitMix64

SCALAR_DTYPES = ("i32", "f32", "f16")
ARRAY_DTYPES = ("f32", "f16", "i32")

Number = Union[int, float]


# --- expression AST ---------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: Number


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class SizeOf:
    array: str

    @property
    def binding_name(self) -> str:
        return f"{self.array}.size"


@dataclass(frozen=True)
class Unary:
    op: str  # '-' or '!'
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Name, SizeOf, Unary, Binary]

_PRECEDENCE = {
    "||": 1,
    "&&": 2,
    "==": 3, "!=": 3,
    "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6, "%": 6,
}
_UNARY_PREC = 7


def _trunc_div(a: int, b: int) -> int:
    # C semantics: quotient truncated toward zero.
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def evaluate_expr(expr: Expr, bindings: dict[str, Number]) -> Number:
    """Evaluate an expression; booleans are C-style 0/1 integers."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Name):
        if expr.ident not in bindings:
            raise UnboundName(f"unbound name '{expr.ident}'")
        return bindings[expr.ident]
    if isinstance(expr, SizeOf):
        key = expr.binding_name
        if key not in bindings:
            raise UnboundName(f"unbound name '{key}'")
        return bindings[key]
    if isinstance(expr, Unary):
        v = evaluate_expr(expr.operand, bindings)
        if expr.op == "-":
            return -v
        return 0 if v else 1
    if isinstance(expr, Binary):
        op = expr.op
        if op == "&&":
            return 1 if evaluate_expr(expr.left, bindings) and evaluate_expr(expr.right, bindings) else 0
        if op == "||":
            return 1 if evaluate_expr(expr.left, bindings) or evaluate_expr(expr.right, bindings) else 0
        a = evaluate_expr(expr.left, bindings)
        b = evaluate_expr(expr.right, bindings)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if b == 0:
                raise DivisionByZero("division by zero")
            if isinstance(a, int) and isinstance(b, int):
                return _trunc_div(a, b)
            return a / b
        if op == "%":
            if b == 0:
                raise DivisionByZero("modulo by zero")
            if isinstance(a, int) and isinstance(b, int):
                return a - _trunc_div(a, b) * b
            raise EvaluationError("modulo needs integer operands")
        if op == "==":
            return 1 if a == b else 0
        if op == "!=":
            return 1 if a != b else 0
        if op == "<":
            return 1 if a < b else 0
        if op == "<=":
            return 1 if a <= b else 0
        if op == ">":
            return 1 if a > b else 0
        if op == ">=":
            return 1 if a >= b else 0
    raise EvaluationError(f"cannot evaluate {expr!r}")


def evaluate_int_expr(expr: Expr | str, bindings: dict[str, Number]) -> int:
    """Shared evaluator for sizes and constraints; truncating division."""
    if isinstance(expr, str):
        expr = parse_expr(expr)
    value = evaluate_expr(expr, bindings)
    if isinstance(value, bool):  # never produced, but be safe
        return int(value)
    if isinstance(value, float):
        if not value.is_integer():
            raise EvaluationError(f"expression evaluated to non-integer {value}")
        return int(value)
    return value


def format_expr(expr: Expr, parent_prec: int = 0) -> str:
    if isinstance(expr, Num):
        return repr(expr.value) if isinstance(expr.value, float) else str(expr.value)
    if isinstance(expr, Name):
        return expr.ident
    if isinstance(expr, SizeOf):
        return f"{expr.array}.size"
    if isinstance(expr, Unary):
        inner = format_expr(expr.operand, _UNARY_PREC)
        text = f"{expr.op}{inner}"
        return f"({text})" if parent_prec > _UNARY_PREC else text
    if isinstance(expr, Binary):
        prec = _PRECEDENCE[expr.op]
        left = format_expr(expr.left, prec)
        right = format_expr(expr.right, prec + 1)  # left-associative
        text = f"{left} {expr.op} {right}"
        return f"({text})" if parent_prec > prec else text
    raise ValueError(f"cannot format {expr!r}")


def expr_names(expr: Expr) -> set[str]:
    """Free identifiers; `.size` attributes appear as 'arr.size'."""
    if isinstance(expr, Num):
        return set()
    if isinstance(expr, Name):
        return {expr.ident}
    if isinstance(expr, SizeOf):
        return {expr.binding_name}
    if isinstance(expr, Unary):
        return expr_names(expr.operand)
    if isinstance(expr, Binary):
        return expr_names(expr.left) | expr_names(expr.right)
    return set()


# --- tokenizer ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<float>(?:\d+\.(?!\.)\d*|\.\d+)(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\.\.=|&&|\|\||==|!=|<=|>=|[-+*/%(){},:<>!.=])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # 'int' | 'float' | 'name' | 'op' | 'end'
    text: str
    line: int
    col: int


def _show(tok: Token) -> str:
    return repr(tok.text) if tok.kind != "end" else "end of line"


def _tokenize(text: str, line_no: int) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SpecSyntaxError(f"unexpected character {text[pos]!r}", line_no, pos + 1)
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        tokens.append(Token(kind, m.group(), line_no, m.start() + 1))
    tokens.append(Token("end", "", line_no, len(text) + 1))
    return tokens


class _Cursor:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def cur(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "end":
            self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.cur.kind != "end" and self.cur.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if self.cur.text != text or self.cur.kind == "end":
            raise SpecSyntaxError(
                f"expected {text!r}, found {_show(self.cur)}",
                self.cur.line, self.cur.col)
        return self.advance()

    def expect_name(self) -> Token:
        if self.cur.kind != "name":
            raise SpecSyntaxError(
                f"expected identifier, found {_show(self.cur)}",
                self.cur.line, self.cur.col)
        return self.advance()

    def expect_int(self) -> int:
        neg = self.accept("-")
        if self.cur.kind != "int":
            raise SpecSyntaxError(
                f"expected integer, found {_show(self.cur)}",
                self.cur.line, self.cur.col)
        tok = self.advance()
        return -int(tok.text) if neg else int(tok.text)

    def expect_end(self) -> None:
        if self.cur.kind != "end":
            raise SpecSyntaxError(
                f"unexpected trailing {self.cur.text!r}", self.cur.line, self.cur.col)


# --- expression parsing -------------------------------------------------------

def _parse_expr(cur: _Cursor, min_prec: int = 1) -> Expr:
    left = _parse_unary(cur)
    while True:
        tok = cur.cur
        if tok.kind != "op" or tok.text not in _PRECEDENCE:
            return left
        prec = _PRECEDENCE[tok.text]
        if prec < min_prec:
            return left
        cur.advance()
        right = _parse_expr(cur, prec + 1)
        left = Binary(tok.text, left, right)


def _parse_unary(cur: _Cursor) -> Expr:
    tok = cur.cur
    if tok.kind == "op" and tok.text in ("-", "!"):
        cur.advance()
        return Unary(tok.text, _parse_unary(cur))
    return _parse_primary(cur)


def _parse_primary(cur: _Cursor) -> Expr:
    tok = cur.cur
    if tok.kind == "int":
        cur.advance()
        return Num(int(tok.text))
    if tok.kind == "float":
        cur.advance()
        return Num(float(tok.text))
    if tok.kind == "name":
        cur.advance()
        if cur.accept("."):
            attr = cur.expect_name()
            if attr.text != "size":
                raise SpecSyntaxError(f"unknown attribute '.{attr.text}'", attr.line, attr.col)
            return SizeOf(tok.text)
        return Name(tok.text)
    if tok.text == "(":
        cur.advance()
        inner = _parse_expr(cur)
        cur.expect(")")
        return inner
    raise SpecSyntaxError(
        f"expected expression, found {_show(tok)}", tok.line, tok.col)


def parse_expr(text: str, line_no: int = 0) -> Expr:
    cur = _Cursor(_tokenize(text, line_no))
    expr = _parse_expr(cur)
    cur.expect_end()
    return expr


# --- value sets -----------------------------------------------------------------

@dataclass(frozen=True)
class ExplicitSet:
    items: tuple[Expr, ...]


@dataclass(frozen=True)
class RangeSet:
    start: int
    stop: int
    step: int


@dataclass(frozen=True)
class Pow2Set:
    lo: int
    hi: int


ValueSet = Union[ExplicitSet, RangeSet, Pow2Set]


def _parse_value_set(cur: _Cursor) -> ValueSet:
    tok = cur.cur
    if tok.text == "{":
        cur.advance()
        items: list[Expr] = []
        if not cur.accept("}"):
            while True:
                items.append(_parse_expr(cur))
                if cur.accept("}"):
                    break
                cur.expect(",")
        return ExplicitSet(tuple(items))
    if tok.kind == "name" and tok.text == "range":
        cur.advance()
        cur.expect("(")
        start = cur.expect_int()
        cur.expect(",")
        stop = cur.expect_int()
        step = 1
        if cur.accept(","):
            step = cur.expect_int()
        cur.expect(")")
        if step <= 0:
            raise SpecSyntaxError("range step must be positive", tok.line, tok.col)
        return RangeSet(start, stop, step)
    if tok.kind == "name" and tok.text == "pow2":
        cur.advance()
        cur.expect("(")
        lo = cur.expect_int()
        cur.expect("..=")
        hi = cur.expect_int()
        cur.expect(")")
        if lo <= 0 or hi < lo:
            raise SpecSyntaxError("pow2 bounds must satisfy 0 < lo <= hi", tok.line, tok.col)
        return Pow2Set(lo, hi)
    raise SpecSyntaxError(
        f"expected value set, found {_show(tok)}", tok.line, tok.col)


def format_value_set(vs: ValueSet) -> str:
    if isinstance(vs, ExplicitSet):
        return "{" + ", ".join(format_expr(e) for e in vs.items) + "}"
    if isinstance(vs, RangeSet):
        return f"range({vs.start}, {vs.stop}, {vs.step})"
    return f"pow2({vs.lo}..={vs.hi})"


def _literal_value(expr: Expr) -> Number:
    """Literal (possibly negated) numeric value, or raise."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Unary) and expr.op == "-" and isinstance(expr.operand, Num):
        return -expr.operand.value
    raise SpecTypeError("value set entry must be a literal")


def _coerce(dtype: str, value: Number, line: int) -> Number:
    if dtype == "i32":
        if isinstance(value, float):
            raise SpecTypeError(f"i32 set contains non-integer {value}", line, 0)
        if not (-(1 << 31) <= value < (1 << 31)):
            raise SpecTypeError(f"value {value} out of i32 range", line, 0)
        return value
    if dtype == "f32":
        return float(np.float32(value))
    if dtype == "f16":
        # binary16 pattern widened back to binary32 for host-side evaluation
        return float(np.float16(value))
    raise SpecTypeError(f"unknown dtype {dtype}", line, 0)


def concrete_values(vs: ValueSet, dtype: str = "i32", line: int = 0) -> list[Number]:
    """Finite, non-empty, duplicate-free value list (declaration's own order)."""
    if isinstance(vs, ExplicitSet):
        values = [_coerce(dtype, _literal_value(e), line) for e in vs.items]
    elif isinstance(vs, RangeSet):
        if dtype != "i32":
            raise SpecTypeError("range sets are integer-valued", line, 0)
        values = list(range(vs.start, vs.stop, vs.step))
    else:
        if dtype != "i32":
            raise SpecTypeError("pow2 sets are integer-valued", line, 0)
        values, p = [], 1
        while p <= vs.hi:
            if p >= vs.lo:
                values.append(p)
            p <<= 1
    if not values:
        raise SpecSyntaxError("value set is empty", line, 0)
    if len(set(values)) != len(values):
        raise SpecSyntaxError("value set contains duplicates", line, 0)
    return values


# --- declarations ------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarDecl:
    name: str
    dtype: str
    values: ValueSet


@dataclass(frozen=True)
class InitRule:
    kind: str  # 'zeros' | 'ones' | 'random'
    seed: int = 0


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    elem_dtype: str
    size_exprs: ValueSet
    init: InitRule
    is_output: bool


@dataclass(frozen=True)
class TuningDecl:
    name: str
    values: ValueSet


@dataclass(frozen=True)
class ConstraintExpr:
    expr: Expr


@dataclass(frozen=True)
class InputSpec:
    scalars: tuple[ScalarDecl, ...]
    arrays: tuple[ArrayDecl, ...]
    tuning: tuple[TuningDecl, ...]
    constraints: tuple[ConstraintExpr, ...]
    order: tuple[tuple[str, str], ...]  # (kind, name) in declaration order

    def decl(self, name: str) -> ScalarDecl | ArrayDecl | TuningDecl:
        for group in (self.scalars, self.arrays, self.tuning):
            for d in group:
                if d.name == name:
                    return d
        raise KeyError(name)

    @property
    def tuning_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tuning)

    @property
    def output_arrays(self) -> tuple[ArrayDecl, ...]:
        return tuple(a for a in self.arrays if a.is_output)

    def with_tuning(self, extra: list[TuningDecl] | tuple[TuningDecl, ...]) -> "InputSpec":
        """New spec with additional tuning declarations appended."""
        existing = {name for _, name in self.order}
        for decl in extra:
            if decl.name in existing:
                raise SpecNameError(f"duplicate declaration of '{decl.name}'")
            concrete_values(decl.values)  # validates
            existing.add(decl.name)
        return InputSpec(
            scalars=self.scalars,
            arrays=self.arrays,
            tuning=self.tuning + tuple(extra),
            constraints=self.constraints,
            order=self.order + tuple(("tune", d.name) for d in extra),
        )


@dataclass(frozen=True)
class ExecutionParams:
    """One concrete instantiation of scalars, array sizes, and tuning values."""

    scalar_values: dict[str, Number] = field(default_factory=dict)
    array_sizes: dict[str, int] = field(default_factory=dict)
    tuning_values: dict[str, int] = field(default_factory=dict)

    def bindings(self) -> dict[str, Number]:
        merged: dict[str, Number] = dict(self.scalar_values)
        merged.update(self.tuning_values)
        for name, size in self.array_sizes.items():
            merged[f"{name}.size"] = size
        return merged

    def input_key(self) -> tuple:
        """Identity of the inputs alone; tuning must not affect semantics."""
        return (
            tuple(sorted(self.scalar_values.items())),
            tuple(sorted(self.array_sizes.items())),
        )

    def key_label(self) -> str:
        scalars = ",".join(f"{k}={v}" for k, v in sorted(self.scalar_values.items()))
        sizes = ",".join(f"{k}.size={v}" for k, v in sorted(self.array_sizes.items()))
        return ";".join(p for p in (scalars, sizes) if p)

    def to_json(self) -> dict:
        return {
            "scalar_values": dict(self.scalar_values),
            "array_sizes": dict(self.array_sizes),
            "tuning_values": dict(self.tuning_values),
        }

    def key_json(self) -> dict:
        """JSON form of the input key alone (no tuning values)."""
        return {
            "scalar_values": dict(self.scalar_values),
            "array_sizes": dict(self.array_sizes),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExecutionParams":
        return cls(
            scalar_values=dict(obj.get("scalar_values", {})),
            array_sizes={k: int(v) for k, v in obj.get("array_sizes", {}).items()},
            tuning_values={k: int(v) for k, v in obj.get("tuning_values", {}).items()},
        )


# --- spec parsing --------------------------------------------------------------------

def _parse_init(cur: _Cursor) -> InitRule:
    tok = cur.expect_name()
    if tok.text == "zeros":
        return InitRule("zeros")
    if tok.text == "ones":
        return InitRule("ones")
    if tok.text == "random":
        cur.expect("(")
        seed = cur.expect_int()
        cur.expect(")")
        if seed < 0 or seed >= (1 << 64):
            raise SpecSyntaxError("random seed must fit in u64", tok.line, tok.col)
        return InitRule("random", seed)
    raise SpecSyntaxError(f"unknown init rule '{tok.text}'", tok.line, tok.col)


def parse_spec(source: str) -> InputSpec:
    """Parse and validate a specification; errors carry line/column."""
    scalars: list[ScalarDecl] = []
    arrays: list[ArrayDecl] = []
    tuning: list[TuningDecl] = []
    constraints: list[ConstraintExpr] = []
    order: list[tuple[str, str]] = []
    seen: dict[str, str] = {}  # name -> kind

    def declare(name: str, kind: str, line: int, col: int) -> None:
        if name in seen:
            raise SpecNameError(f"duplicate declaration of '{name}'", line, col)
        seen[name] = kind
        order.append((kind, name))

    for line_no, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        cur = _Cursor(_tokenize(line, line_no))
        head = cur.expect_name()

        if head.text in ("input", "output"):
            name_tok = cur.expect_name()
            cur.expect(":")
            if cur.cur.text == "array":
                cur.advance()
                cur.expect("<")
                dtype_tok = cur.expect_name()
                if dtype_tok.text not in ARRAY_DTYPES:
                    raise SpecTypeError(
                        f"unknown array dtype '{dtype_tok.text}'", dtype_tok.line, dtype_tok.col)
                cur.expect(">")
                size_kw = cur.expect_name()
                if size_kw.text != "size":
                    raise SpecSyntaxError("expected 'size'", size_kw.line, size_kw.col)
                cur.expect("in")
                size_set = _parse_value_set(cur)
                init_kw = cur.expect_name()
                if init_kw.text != "init":
                    raise SpecSyntaxError("expected 'init'", init_kw.line, init_kw.col)
                init = _parse_init(cur)
                cur.expect_end()
                if not isinstance(size_set, ExplicitSet):
                    raise SpecSyntaxError(
                        "array sizes use explicit expression sets", line_no, 1)
                for e in size_set.items:
                    for ref in expr_names(e):
                        if ref not in seen or seen[ref] != "scalar":
                            raise SpecNameError(
                                f"array size references undeclared scalar '{ref}'",
                                line_no, 1)
                        ref_decl = next(s for s in scalars if s.name == ref)
                        if ref_decl.dtype != "i32":
                            raise SpecTypeError(
                                f"array size references non-integer scalar '{ref}'",
                                line_no, 1)
                declare(name_tok.text, "array", name_tok.line, name_tok.col)
                arrays.append(ArrayDecl(
                    name=name_tok.text,
                    elem_dtype=dtype_tok.text,
                    size_exprs=size_set,
                    init=init,
                    is_output=(head.text == "output"),
                ))
            else:
                if head.text == "output":
                    raise SpecSyntaxError(
                        "only arrays may be outputs", head.line, head.col)
                dtype_tok = cur.expect_name()
                if dtype_tok.text not in SCALAR_DTYPES:
                    raise SpecTypeError(
                        f"unknown scalar dtype '{dtype_tok.text}'", dtype_tok.line, dtype_tok.col)
                cur.expect("in")
                values = _parse_value_set(cur)
                cur.expect_end()
                concrete_values(values, dtype_tok.text, line_no)  # validates now
                declare(name_tok.text, "scalar", name_tok.line, name_tok.col)
                scalars.append(ScalarDecl(name_tok.text, dtype_tok.text, values))

        elif head.text == "tune":
            name_tok = cur.expect_name()
            cur.expect(":")
            dtype_tok = cur.expect_name()
            if dtype_tok.text != "i32":
                raise SpecTypeError(
                    "tuning parameters are i32", dtype_tok.line, dtype_tok.col)
            cur.expect("in")
            values = _parse_value_set(cur)
            cur.expect_end()
            concrete_values(values, "i32", line_no)
            declare(name_tok.text, "tune", name_tok.line, name_tok.col)
            tuning.append(TuningDecl(name_tok.text, values))

        elif head.text == "constraint":
            expr = _parse_expr(cur)
            cur.expect_end()
            for ref in expr_names(expr):
                if ref.endswith(".size"):
                    arr = ref[:-len(".size")]
                    if seen.get(arr) != "array":
                        raise SpecNameError(
                            f"constraint references undeclared array '{arr}'", line_no, 1)
                elif seen.get(ref) not in ("scalar", "tune"):
                    raise SpecNameError(
                        f"constraint references undeclared name '{ref}'", line_no, 1)
            constraints.append(ConstraintExpr(expr))

        else:
            raise SpecSyntaxError(
                f"unknown declaration '{head.text}'", head.line, head.col)

    if not order and not constraints:
        raise SpecSyntaxError("empty specification")

    return InputSpec(
        scalars=tuple(scalars),
        arrays=tuple(arrays),
        tuning=tuple(tuning),
        constraints=tuple(constraints),
        order=tuple(order),
    )


def print_spec(spec: InputSpec) -> str:
    """Canonical grammar form; `parse_spec(print_spec(s))` equals `s`."""
    lines: list[str] = []
    arrays = {a.name: a for a in spec.arrays}
    scalars = {s.name: s for s in spec.scalars}
    tuning = {t.name: t for t in spec.tuning}
    for kind, name in spec.order:
        if kind == "scalar":
            s = scalars[name]
            lines.append(f"input {s.name}: {s.dtype} in {format_value_set(s.values)}")
        elif kind == "array":
            a = arrays[name]
            head = "output" if a.is_output else "input"
            init = a.init.kind if a.init.kind != "random" else f"random({a.init.seed})"
            lines.append(
                f"{head} {a.name}: array<{a.elem_dtype}> size in "
                f"{format_value_set(a.size_exprs)} init {init}")
        else:
            t = tuning[name]
            lines.append(f"tune {t.name}: i32 in {format_value_set(t.values)}")
    for c in spec.constraints:
        lines.append(f"constraint {format_expr(c.expr)}")
    return "\n".join(lines) + "\n"


# --- enumeration and sampling -----------------------------------------------------

def _array_size_choices(decl: ArrayDecl, bindings: dict[str, Number]) -> list[int]:
    assert isinstance(decl.size_exprs, ExplicitSet)
    sizes = []
    for e in decl.size_exprs.items:
        size = evaluate_int_expr(e, bindings)
        if size <= 0:
            raise EvaluationError(
                f"array '{decl.name}' evaluated to non-positive size {size}")
        sizes.append(size)
    return sorted(set(sizes))


def check_params(spec: InputSpec, params: ExecutionParams) -> bool:
    """Re-evaluate every constraint for the given parameters."""
    bindings = params.bindings()
    return all(evaluate_int_expr(c.expr, bindings) != 0 for c in spec.constraints)


def enumerate_execution_params(spec: InputSpec) -> list[ExecutionParams]:
    """All valid parameter combinations, in deterministic order.

    Axes follow declaration order with the last declaration varying fastest;
    each axis's values ascend. Array size choices are evaluated under the
    scalar bindings already fixed by the outer axes.
    """
    decls = {name: spec.decl(name) for _, name in spec.order}
    results: list[ExecutionParams] = []

    def walk(i: int, current: ExecutionParams) -> None:
        if i == len(spec.order):
            if check_params(spec, current):
                results.append(ExecutionParams(
                    dict(current.scalar_values),
                    dict(current.array_sizes),
                    dict(current.tuning_values),
                ))
            return
        kind, name = spec.order[i]
        decl = decls[name]
        if kind == "scalar":
            assert isinstance(decl, ScalarDecl)
            for v in sorted(concrete_values(decl.values, decl.dtype)):
                current.scalar_values[name] = v
                walk(i + 1, current)
            del current.scalar_values[name]
        elif kind == "array":
            assert isinstance(decl, ArrayDecl)
            for size in _array_size_choices(decl, current.scalar_values):
                current.array_sizes[name] = size
                walk(i + 1, current)
            current.array_sizes.pop(name, None)
        else:
            assert isinstance(decl, TuningDecl)
            for v in sorted(concrete_values(decl.values)):
                current.tuning_values[name] = v
                walk(i + 1, current)
            del current.tuning_values[name]

    walk(0, ExecutionParams())
    return results


def sample_execution_params(
    spec: InputSpec, budget: int, seed: int
) -> list[ExecutionParams]:
    """Coverage-first deterministic sample of the valid space.

    Guarantees, budget permitting, at least one entry at each scalar's
    minimum and maximum observed value; the remainder is drawn uniformly
    without replacement. Output order follows enumeration order.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    space = enumerate_execution_params(spec)
    if budget >= len(space):
        return space
    rng = SplitMix64(seed)
    chosen: set[int] = set()

    for decl in spec.scalars:
        observed = [e.scalar_values[decl.name] for e in space]
        for target in (min(observed), max(observed)):
            if len(chosen) >= budget:
                break
            if any(space[i].scalar_values[decl.name] == target for i in chosen):
                continue
            candidates = [
                i for i, e in enumerate(space)
                if e.scalar_values[decl.name] == target and i not in chosen
            ]
            if candidates:
                chosen.add(candidates[rng.below(len(candidates))])

    rest = [i for i in range(len(space)) if i not in chosen]
    for j in rng.sample_indices(len(rest), budget - len(chosen)):
        chosen.add(rest[j])
    return [space[i] for i in sorted(chosen)]


def first_valid_tuning(
    spec: InputSpec, key_params: ExecutionParams
) -> ExecutionParams | None:
    """First (enumeration-order) valid assignment matching an input key."""
    target = key_params.input_key()
    for entry in enumerate_execution_params(spec):
        if entry.input_key() == target:
            return entry
    return None


def enumerate_input_keys(spec: InputSpec) -> list[ExecutionParams]:
    """One representative entry per distinct input key, enumeration order.

    The representative carries the first valid tuning assignment for that
    key, which is what reference building executes.
    """
    seen: set[tuple] = set()
    keys: list[ExecutionParams] = []
    for entry in enumerate_execution_params(spec):
        k = entry.input_key()
        if k not in seen:
            seen.add(k)
            keys.append(entry)
    return keys


def iter_tuning_space(
    spec: InputSpec, key_params: ExecutionParams
) -> Iterator[ExecutionParams]:
    """Valid entries sharing the given input key (tuning varies)."""
    target = key_params.input_key()
    for entry in enumerate_execution_params(spec):
        if entry.input_key() == target:
            yield entry
