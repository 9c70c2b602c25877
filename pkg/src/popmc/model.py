"""Guarded-command population models.

A model declares integer-valued variables, real constants and an ordered list
of commands ``guard |- rate -> update``.  Updates are restricted to constant
increments, so each command carries a fixed change vector.

The concrete syntax (see README for the full lexical rules)::

    # comment
    const c1 = 3000;
    var x_A = 133;
    semantics ctmc;
    prod: true |- c1/(c2 + x_B^2) -> x_A := x_A + 1;

Expressions are compiled once into closures, in two flavours: a scalar one
for single states and a vectorised one that evaluates a whole batch of
states held as rows of a numpy array.
"""

from __future__ import annotations

import math
import operator
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ModelError, ParseError, RateError

SEMANTICS = ("ctmc", "dtmc")
KEYWORDS = {"const", "var", "semantics", "true", "false", "and", "or", "not"}

# ---------------------------------------------------------------------------
# Expression tree


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class ConstRef:
    name: str
    value: float


@dataclass(frozen=True)
class VarRef:
    name: str
    index: int


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Arith:
    op: str  # + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Cmp:
    op: str  # < <= > >= = !=
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    arg: "Expr"


@dataclass(frozen=True)
class Logic:
    op: str  # and, or
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class _Name:
    # unresolved identifier, only lives between parsing and resolution
    name: str
    line: int
    col: int


Expr = Union[Num, BoolLit, ConstRef, VarRef, Neg, Arith, Cmp, Not, Logic]


def is_boolean(e) -> bool:
    return isinstance(e, (BoolLit, Cmp, Not, Logic))


# ---------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class GuardedCommand:
    guard: Expr
    rate: Expr
    updates: tuple[tuple[int, int], ...]  # (variable index, increment)
    label: str | None = None

    @cached_property
    def guard_fn(self) -> Callable:
        return _compile_scalar(self.guard)

    @cached_property
    def rate_fn(self) -> Callable:
        return _compile_scalar(self.rate)

    @cached_property
    def guard_vec(self) -> Callable:
        return _compile_vector(self.guard)

    @cached_property
    def rate_vec(self) -> Callable:
        return _compile_vector(self.rate)

    def describe(self, j: int | None = None) -> str:
        if self.label:
            return f"command '{self.label}'"
        return f"command #{j + 1}" if j is not None else "command"


@dataclass(frozen=True)
class Model:
    variables: tuple[str, ...]
    initial: tuple[int, ...]
    constants: tuple[tuple[str, float], ...]
    commands: tuple[GuardedCommand, ...]
    semantics: str = "ctmc"

    def __post_init__(self):
        if not self.variables:
            raise ModelError("model declares no variables")
        if not self.commands:
            raise ModelError("model declares no commands")
        if len(self.initial) != len(self.variables):
            raise ModelError("initial state does not match the variable count")
        if any(v < 0 for v in self.initial):
            raise ModelError("initial values must be non-negative")
        if self.semantics not in SEMANTICS:
            raise ModelError(f"unknown semantics {self.semantics!r}")

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_commands(self) -> int:
        return len(self.commands)

    @cached_property
    def change(self) -> np.ndarray:
        """Change vectors as an (m, n) integer matrix."""
        v = np.zeros((self.n_commands, self.n_vars), dtype=np.int64)
        for j, cmd in enumerate(self.commands):
            for i, inc in cmd.updates:
                v[j, i] = inc
        return v

    @cached_property
    def const_map(self) -> dict[str, float]:
        return dict(self.constants)

    def with_semantics(self, semantics: str) -> "Model":
        return replace(self, semantics=semantics)

    def rate_matrix(self, states: np.ndarray) -> np.ndarray:
        """Rates of all commands for a batch of states.

        ``states`` is an (b, n) integer array. Disabled commands (false guard,
        or an update that would make a population negative) get rate 0.
        Raises RateError naming the first offending state and command.
        """
        states = np.asarray(states)
        b = states.shape[0]
        out = np.zeros((b, self.n_commands))
        if b == 0:
            return out
        x = states.astype(np.float64)
        change = self.change
        for j, cmd in enumerate(self.commands):
            ok = np.broadcast_to(cmd.guard_vec(x), (b,))
            ok = ok & np.all(states + change[j] >= 0, axis=1)
            rows = np.flatnonzero(ok)
            if rows.size == 0:
                continue
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                r = np.broadcast_to(cmd.rate_vec(x[rows]), (rows.size,))
            bad = ~np.isfinite(r) | (r < 0)
            if bad.any():
                k = rows[np.argmax(bad)]
                s = tuple(int(v) for v in states[k])
                # re-evaluate in scalar mode for a precise diagnostic
                eval_rate(self, cmd, s, _index=j)
                raise RateError(  # pragma: no cover - scalar path raises first
                    f"{cmd.describe(j)} has invalid rate at state {s}", s, j)
            out[rows, j] = r
        return out


# ---------------------------------------------------------------------------
# Evaluation on single states


def _check_state(model: Model, s: Sequence[int]) -> tuple[float, ...]:
    if len(s) != model.n_vars:
        raise ModelError(
            f"state {tuple(s)} has {len(s)} entries, model has {model.n_vars} variables")
    return tuple(float(v) for v in s)


def _command_index(model: Model, cmd: GuardedCommand) -> int | None:
    for j, c in enumerate(model.commands):
        if c is cmd:
            return j
    return None


def eval_rate(model: Model, cmd: GuardedCommand, s: Sequence[int], *, _index=None) -> float:
    """Value of the command's rate at ``s``; must be finite and non-negative."""
    x = _check_state(model, s)
    j = _index if _index is not None else _command_index(model, cmd)
    try:
        r = float(cmd.rate_fn(x))
    except ZeroDivisionError:
        raise RateError(f"division by zero in {cmd.describe(j)} at state {tuple(s)}",
                        tuple(s), j) from None
    except (OverflowError, ValueError) as exc:
        raise RateError(f"{cmd.describe(j)} cannot be evaluated at state {tuple(s)}: {exc}",
                        tuple(s), j) from None
    if not math.isfinite(r):
        raise RateError(f"{cmd.describe(j)} has non-finite rate at state {tuple(s)}",
                        tuple(s), j)
    if r < 0:
        raise RateError(f"{cmd.describe(j)} has negative rate {r!r} at state {tuple(s)}",
                        tuple(s), j)
    return r


def enabled(model: Model, cmd: GuardedCommand, s: Sequence[int]) -> bool:
    x = _check_state(model, s)
    if not cmd.guard_fn(x):
        return False
    return all(s[i] + inc >= 0 for i, inc in cmd.updates)


def successor(s: Sequence[int], cmd: GuardedCommand) -> tuple[int, ...]:
    out = list(s)
    for i, inc in cmd.updates:
        out[i] += inc
        if out[i] < 0:
            raise ModelError(
                f"{cmd.describe()} drives variable {i} negative from state {tuple(s)}")
    return tuple(out)


def exit_rate(model: Model, s: Sequence[int]) -> float:
    total = 0.0
    for j, cmd in enumerate(model.commands):
        if enabled(model, cmd, s):
            total += eval_rate(model, cmd, s, _index=j)
    return total


# ---------------------------------------------------------------------------
# Compilation to closures


def _int_exponent(e) -> int | None:
    if isinstance(e, (Num, ConstRef)):
        v = e.value
        if v >= 0 and float(v).is_integer():
            return int(v)
    return None


def _ipow(base, n: int):
    # square-and-multiply; works for floats and numpy arrays alike
    result = None
    while n:
        if n & 1:
            result = base if result is None else result * base
        n >>= 1
        if n:
            base = base * base
    return 1.0 if result is None else result


_ARITH = {"+": operator.add, "-": operator.sub, "*": operator.mul}
_CMP = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
        "=": operator.eq, "!=": operator.ne}


def _compile_scalar(e) -> Callable:
    if isinstance(e, (Num, ConstRef)):
        v = float(e.value)
        return lambda x: v
    if isinstance(e, BoolLit):
        v = e.value
        return lambda x: v
    if isinstance(e, VarRef):
        i = e.index
        return lambda x: x[i]
    if isinstance(e, Neg):
        a = _compile_scalar(e.arg)
        return lambda x: -a(x)
    if isinstance(e, Arith):
        a = _compile_scalar(e.left)
        if e.op == "^":
            n = _int_exponent(e.right)
            if n is not None:
                return lambda x: _ipow(a(x), n)
            b = _compile_scalar(e.right)
            return lambda x: math.pow(a(x), b(x))
        b = _compile_scalar(e.right)
        if e.op == "/":
            return lambda x: a(x) / b(x)
        f = _ARITH[e.op]
        return lambda x: f(a(x), b(x))
    if isinstance(e, Cmp):
        a, b, f = _compile_scalar(e.left), _compile_scalar(e.right), _CMP[e.op]
        return lambda x: f(a(x), b(x))
    if isinstance(e, Not):
        a = _compile_scalar(e.arg)
        return lambda x: not a(x)
    if isinstance(e, Logic):
        a, b = _compile_scalar(e.left), _compile_scalar(e.right)
        if e.op == "and":
            return lambda x: a(x) and b(x)
        return lambda x: a(x) or b(x)
    raise TypeError(f"cannot compile {e!r}")


def _compile_vector(e) -> Callable:
    """Closure over an (b, n) float array; returns an array or a scalar to broadcast."""
    if isinstance(e, (Num, ConstRef)):
        v = float(e.value)
        return lambda X: v
    if isinstance(e, BoolLit):
        v = e.value
        return lambda X: v
    if isinstance(e, VarRef):
        i = e.index
        return lambda X: X[:, i]
    if isinstance(e, Neg):
        a = _compile_vector(e.arg)
        return lambda X: -a(X)
    if isinstance(e, Arith):
        a = _compile_vector(e.left)
        if e.op == "^":
            n = _int_exponent(e.right)
            if n is not None:
                return lambda X: _ipow(a(X), n)
            b = _compile_vector(e.right)
            return lambda X: np.power(a(X), b(X))
        b = _compile_vector(e.right)
        f = operator.truediv if e.op == "/" else _ARITH[e.op]
        return lambda X: f(a(X), b(X))
    if isinstance(e, Cmp):
        a, b, f = _compile_vector(e.left), _compile_vector(e.right), _CMP[e.op]
        return lambda X: f(a(X), b(X))
    if isinstance(e, Not):
        a = _compile_vector(e.arg)
        return lambda X: np.logical_not(a(X))
    if isinstance(e, Logic):
        a, b = _compile_vector(e.left), _compile_vector(e.right)
        f = np.logical_and if e.op == "and" else np.logical_or
        return lambda X: f(a(X), b(X))
    raise TypeError(f"cannot compile {e!r}")


def _python_source(e) -> str:
    """Python expression text equivalent to the scalar closure of ``e``."""
    if isinstance(e, (Num, ConstRef)):
        return repr(float(e.value))
    if isinstance(e, BoolLit):
        return repr(bool(e.value))
    if isinstance(e, VarRef):
        return f"x{e.index}"
    if isinstance(e, Neg):
        return f"(-{_python_source(e.arg)})"
    if isinstance(e, Arith):
        a = _python_source(e.left)
        if e.op == "^":
            n = _int_exponent(e.right)
            if n is not None:
                return f"_ipow({a}, {n})"
            return f"_pow({a}, {_python_source(e.right)})"
        return f"({a} {e.op} {_python_source(e.right)})"
    if isinstance(e, Cmp):
        op = "==" if e.op == "=" else e.op
        return f"({_python_source(e.left)} {op} {_python_source(e.right)})"
    if isinstance(e, Not):
        return f"(not {_python_source(e.arg)})"
    if isinstance(e, Logic):
        return f"({_python_source(e.left)} {e.op} {_python_source(e.right)})"
    raise TypeError(f"cannot compile {e!r}")


def compile_field(model: "Model") -> tuple[Callable, Callable]:
    """Fast real-valued evaluators ``(rates, drift)`` taking one argument per variable.

    ``rates(*x)`` returns the tuple of command rates, 0 where the guard is
    false; ``drift(*x)`` returns ``sum_j v_j rate_j(x)``.  Guards are used as
    written, without the integer non-negativity check.
    """
    args = ", ".join(f"x{i}" for i in range(model.n_vars))
    body = [f"    r{j} = ({_python_source(c.rate)}) if ({_python_source(c.guard)}) else 0.0"
            for j, c in enumerate(model.commands)]
    terms = [[] for _ in range(model.n_vars)]
    for j, c in enumerate(model.commands):
        for i, inc in c.updates:
            terms[i].append(f"{inc} * r{j}")
    drift = ", ".join(" + ".join(t) if t else "0.0" for t in terms)
    rates = ", ".join(f"r{j}" for j in range(model.n_commands))
    src = "\n".join([f"def _rates({args}):", *body, f"    return ({rates},)",
                     f"def _drift({args}):", *body, f"    return ({drift},)"])
    ns = {"_ipow": _ipow, "_pow": math.pow, "inf": math.inf, "nan": math.nan}
    exec(compile(src, "<field>", "exec"), ns)
    return ns["_rates"], ns["_drift"]


# ---------------------------------------------------------------------------
# Lexer

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\f]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\|-|->|:=|<=|>=|==|!=|&&|\|\||[-+*/^()<>=!&|;:,])
""", re.VERBOSE)

_OP_ALIASES = {"&&": "and", "&": "and", "||": "or", "|": "or", "!": "not", "==": "="}


@dataclass
class _Tok:
    kind: str  # num, name, op, kw, eof
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        s = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "name":
            toks.append(_Tok("kw" if s in KEYWORDS else "name", s, line, col))
        elif kind == "op":
            alias = _OP_ALIASES.get(s)
            if alias in ("and", "or", "not"):
                toks.append(_Tok("kw", alias, line, col))
            else:
                toks.append(_Tok("op", alias or s, line, col))
        elif kind == "num":
            toks.append(_Tok("num", s, line, col))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


# ---------------------------------------------------------------------------
# Parser


@dataclass
class _RawCommand:
    label: str | None
    guard: object
    rate: object
    updates: list[tuple[_Tok, _Tok, str, _Tok]]  # lhs, rhs name, sign, amount
    tok: _Tok


@dataclass
class _Parser:
    toks: list[_Tok]
    pos: int = 0
    consts: dict[str, float] = field(default_factory=dict)
    var_index: dict[str, int] = field(default_factory=dict)

    def peek(self, ahead: int = 0) -> _Tok:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> _Tok:
        tok = self.peek()
        self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.kind in ("op", "kw") and t.text == text

    def expect(self, text: str) -> _Tok:
        t = self.next()
        if t.kind not in ("op", "kw") or t.text != text:
            raise ParseError(f"expected {text!r}, found {t.text or 'end of input'!r}",
                             t.line, t.col)
        return t

    def expect_name(self) -> _Tok:
        t = self.next()
        if t.kind != "name":
            raise ParseError(f"expected identifier, found {t.text or 'end of input'!r}",
                             t.line, t.col)
        return t

    # -- expressions, lowest precedence first

    def expr(self):
        left = self.and_expr()
        while self.at("or"):
            self.next()
            left = Logic("or", left, self.and_expr())
        return left

    def and_expr(self):
        left = self.not_expr()
        while self.at("and"):
            self.next()
            left = Logic("and", left, self.not_expr())
        return left

    def not_expr(self):
        if self.at("not"):
            self.next()
            return Not(self.not_expr())
        return self.comparison()

    def comparison(self):
        left = self.additive()
        t = self.peek()
        if t.kind == "op" and t.text in _CMP:
            self.next()
            return Cmp(t.text, left, self.additive())
        return left

    def additive(self):
        left = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.next().text
            left = Arith(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.next().text
            left = Arith(op, left, self.unary())
        return left

    def unary(self):
        if self.at("-"):
            self.next()
            return Neg(self.unary())
        if self.at("+"):
            self.next()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.at("^"):
            self.next()
            return Arith("^", base, self.unary())
        return base

    def atom(self):
        t = self.next()
        if t.kind == "num":
            return Num(float(t.text))
        if t.kind == "kw" and t.text in ("true", "false"):
            return BoolLit(t.text == "true")
        if t.kind == "name":
            return _Name(t.text, t.line, t.col)
        if t.kind == "op" and t.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected {t.text or 'end of input'!r} in expression",
                         t.line, t.col)

    # -- statements

    def model(self) -> Model:
        variables: list[str] = []
        initial: list[int] = []
        const_order: list[str] = []
        semantics = None
        raw: list[_RawCommand] = []
        first = self.peek()
        if first.kind == "eof":
            raise ParseError("empty model", first.line, first.col)
        while self.peek().kind != "eof":
            t = self.peek()
            if t.kind == "kw" and t.text == "const":
                self.next()
                name = self.expect_name()
                self._check_fresh(name)
                self.expect("=")
                value = self._const_value(self.expr(), name)
                self.expect(";")
                self.consts[name.text] = value
                const_order.append(name.text)
            elif t.kind == "kw" and t.text == "var":
                self.next()
                name = self.expect_name()
                self._check_fresh(name)
                self.expect("=")
                neg = False
                if self.at("-"):
                    self.next()
                    neg = True
                v = self.next()
                if v.kind != "num" or not re.fullmatch(r"\d+", v.text):
                    raise ParseError("initial value must be a non-negative integer literal",
                                     v.line, v.col)
                if neg and int(v.text) != 0:
                    raise ParseError(f"negative initial value for '{name.text}'",
                                     v.line, v.col)
                self.expect(";")
                self.var_index[name.text] = len(variables)
                variables.append(name.text)
                initial.append(int(v.text))
            elif t.kind == "kw" and t.text == "semantics":
                self.next()
                s = self.next()
                if s.text not in SEMANTICS:
                    raise ParseError(f"semantics must be ctmc or dtmc, found {s.text!r}",
                                     s.line, s.col)
                if semantics is not None:
                    raise ParseError("semantics declared twice", t.line, t.col)
                semantics = s.text
                self.expect(";")
            else:
                raw.append(self.command())
        if not variables:
            raise ParseError("model declares no variables", first.line, first.col)
        if not raw:
            raise ParseError("model declares no commands", first.line, first.col)
        commands = tuple(self._build_command(rc) for rc in raw)
        return Model(tuple(variables), tuple(initial),
                     tuple((c, self.consts[c]) for c in const_order),
                     commands, semantics or "ctmc")

    def _check_fresh(self, name: _Tok):
        if name.text in self.consts or name.text in self.var_index:
            raise ParseError(f"'{name.text}' declared twice", name.line, name.col)

    def _const_value(self, e, name: _Tok) -> float:
        e = self._resolve(e, allow_vars=False)
        if is_boolean(e):
            raise ParseError(f"constant '{name.text}' must be numeric", name.line, name.col)
        try:
            v = float(_compile_scalar(e)(()))
        except (ZeroDivisionError, OverflowError, ValueError) as exc:
            raise ParseError(f"cannot evaluate constant '{name.text}': {exc}",
                             name.line, name.col) from None
        if not math.isfinite(v):
            raise ParseError(f"constant '{name.text}' is not finite", name.line, name.col)
        return v

    def command(self) -> _RawCommand:
        start = self.peek()
        label = None
        if start.kind == "name" and self.peek(1).kind == "op" and self.peek(1).text == ":":
            label = self.next().text
            self.next()
        guard = self.expr()
        self.expect("|-")
        rate = self.expr()
        self.expect("->")
        updates = [self.update()]
        while self.at(","):
            self.next()
            updates.append(self.update())
        self.expect(";")
        return _RawCommand(label, guard, rate, updates, start)

    def update(self):
        lhs = self.expect_name()
        self.expect(":=")
        rhs = self.next()
        sign = self.next()
        amount = self.next()
        if (rhs.kind != "name" or sign.kind != "op" or sign.text not in "+-"
                or amount.kind != "num"):
            raise ParseError(
                f"update of '{lhs.text}' must have the form "
                f"{lhs.text} := {lhs.text} +/- <positive integer>", lhs.line, lhs.col)
        if rhs.text != lhs.text:
            raise ParseError(
                f"non-constant update increment: '{lhs.text}' assigned from '{rhs.text}'",
                rhs.line, rhs.col)
        if not re.fullmatch(r"\d+", amount.text) or int(amount.text) == 0:
            raise ParseError(
                f"non-constant update increment: {amount.text!r} is not a positive integer",
                amount.line, amount.col)
        nxt = self.peek()
        if not (nxt.kind == "op" and nxt.text in (",", ";")):
            raise ParseError(f"non-constant update increment for '{lhs.text}'",
                             nxt.line, nxt.col)
        return lhs, rhs, sign.text, amount

    def _build_command(self, rc: _RawCommand) -> GuardedCommand:
        guard = self._resolve(rc.guard)
        rate = self._resolve(rc.rate)
        if not is_boolean(guard):
            raise ParseError("guard must be a boolean expression", rc.tok.line, rc.tok.col)
        if is_boolean(rate):
            raise ParseError("rate must be a numeric expression", rc.tok.line, rc.tok.col)
        seen: set[int] = set()
        updates = []
        for lhs, _, sign, amount in rc.updates:
            if lhs.text not in self.var_index:
                raise ParseError(f"undeclared variable '{lhs.text}'", lhs.line, lhs.col)
            i = self.var_index[lhs.text]
            if i in seen:
                raise ParseError(f"variable '{lhs.text}' updated twice in one command",
                                 lhs.line, lhs.col)
            seen.add(i)
            inc = int(amount.text)
            updates.append((i, inc if sign == "+" else -inc))
        return GuardedCommand(guard, rate, tuple(updates), rc.label)

    def _resolve(self, e, allow_vars: bool = True):
        if isinstance(e, _Name):
            if e.name in self.consts:
                return ConstRef(e.name, self.consts[e.name])
            if allow_vars and e.name in self.var_index:
                return VarRef(e.name, self.var_index[e.name])
            raise ParseError(f"undeclared identifier '{e.name}'", e.line, e.col)
        if isinstance(e, (Neg, Not)):
            arg = self._resolve(e.arg, allow_vars)
            want_bool = isinstance(e, Not)
            if is_boolean(arg) != want_bool:
                raise ParseError(_type_msg(e), *_pos(e.arg, self.toks))
            return type(e)(arg)
        if isinstance(e, (Arith, Cmp, Logic)):
            left = self._resolve(e.left, allow_vars)
            right = self._resolve(e.right, allow_vars)
            want_bool = isinstance(e, Logic)
            if is_boolean(left) != want_bool or is_boolean(right) != want_bool:
                raise ParseError(_type_msg(e), *_pos(e, self.toks))
            return type(e)(e.op, left, right)
        return e


def _type_msg(e) -> str:
    if isinstance(e, (Logic, Not)):
        return f"operator '{getattr(e, 'op', 'not')}' needs boolean operands"
    return f"operator '{getattr(e, 'op', '-')}' needs numeric operands"


def _pos(e, toks):
    # best effort: first named leaf carries a position
    stack = [e]
    while stack:
        n = stack.pop()
        if isinstance(n, _Name):
            return n.line, n.col
        for attr in ("arg", "right", "left"):
            if hasattr(n, attr):
                stack.append(getattr(n, attr))
    return toks[0].line, toks[0].col


def parse_model(text: str) -> Model:
    """Parse and validate a guarded-command model document."""
    return _Parser(_tokenize(text)).model()


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


# ---------------------------------------------------------------------------
# Printer

_PREC = {"or": 1, "and": 2, "not": 3, "cmp": 4, "+": 5, "-": 5, "*": 6, "/": 6,
         "neg": 7, "^": 8}


def _prec(e) -> int:
    if isinstance(e, Logic):
        return _PREC[e.op]
    if isinstance(e, Not):
        return _PREC["not"]
    if isinstance(e, Cmp):
        return _PREC["cmp"]
    if isinstance(e, Arith):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    return 9


def _wrap(e, need: int) -> str:
    s = format_expr(e)
    return f"({s})" if _prec(e) < need else s


def _format_number(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def format_expr(e) -> str:
    if isinstance(e, Num):
        return _format_number(e.value)
    if isinstance(e, BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, (ConstRef, VarRef)):
        return e.name
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, _PREC["neg"])
    if isinstance(e, Not):
        return "not " + _wrap(e.arg, _PREC["not"])
    if isinstance(e, Cmp):
        return f"{_wrap(e.left, 5)} {e.op} {_wrap(e.right, 5)}"
    if isinstance(e, (Arith, Logic)):
        p = _prec(e)
        if isinstance(e, Arith) and e.op == "^":
            return f"{_wrap(e.left, p + 1)}^{_wrap(e.right, p)}"
        return f"{_wrap(e.left, p)} {e.op} {_wrap(e.right, p + 1)}"
    raise TypeError(f"cannot format {e!r}")


def format_model(model: Model) -> str:
    lines = [f"const {name} = {_format_number(value)};" for name, value in model.constants]
    lines += [f"var {v} = {x};" for v, x in zip(model.variables, model.initial)]
    lines.append(f"semantics {model.semantics};")
    for cmd in model.commands:
        ups = ", ".join(
            f"{model.variables[i]} := {model.variables[i]} {'+' if inc > 0 else '-'} {abs(inc)}"
            for i, inc in cmd.updates)
        prefix = f"{cmd.label}: " if cmd.label else ""
        lines.append(f"{prefix}{format_expr(cmd.guard)} |- {format_expr(cmd.rate)} -> {ups};")
    return "\n".join(lines) + "\n"
