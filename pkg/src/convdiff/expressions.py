"""Closed-form coefficient expressions for configuration files.

Grammar (precedence low to high):

    expr   :=  term (('+' | '-') term)*
    term   :=  unary (('*' | '/') unary)*
    unary  :=  ('-' | '+') unary | power
    power  :=  atom ('^' unary)?          right associative
    atom   :=  NUMBER | 'pi' | 'x' | 'y' | 't'
             | FUNC '(' expr ')' | '(' expr ')'

with FUNC one of sin, cos, exp, abs, sqrt.  Evaluation is vectorized
over numpy arrays.  Partial derivatives are formed symbolically where
the calculus rules apply; `abs` and variable exponents have no analytic
rule here, in which case `derivative` returns None and callers fall
back to central finite differences (flagged in the validation report).
"""

import math

import numpy as np

__all__ = ["Expression", "ExpressionError", "parse_expression"]

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs,
          "sqrt": np.sqrt}
_VARS = ("x", "y", "t")


class ExpressionError(ValueError):
    """Raised for lexical or syntactic defects, with the position."""


class _NonDifferentiable(Exception):
    pass


def _tokenize(text):
    toks = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in "+-*/^()":
            toks.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            try:
                val = float(text[i:j])
            except ValueError:
                raise ExpressionError(
                    "bad number %r at position %d" % (text[i:j], i))
            toks.append(("num", val, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(("name", text[i:j], i))
            i = j
            continue
        raise ExpressionError("unexpected character %r at position %d"
                              % (c, i))
    toks.append(("end", None, n))
    return toks


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.toks[self.pos]

    def take(self, kind=None):
        tok = self.toks[self.pos]
        if kind is not None and tok[0] != kind:
            raise ExpressionError(
                "expected %s at position %d in %r" % (kind, tok[2],
                                                      self.text))
        self.pos += 1
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionError(
                "unexpected %r at position %d in %r"
                % (tok[1], tok[2], self.text))
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.take()[0]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.take()[0]
            node = (op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "-":
            self.take()
            return ("neg", self.unary())
        if tok[0] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "^":
            self.take()
            return ("^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        kind, val, at = tok
        if kind == "num":
            return ("num", val)
        if kind == "(":
            node = self.expr()
            self.take(")")
            return node
        if kind == "name":
            if val == "pi":
                return ("num", math.pi)
            if val in _VARS:
                return ("var", val)
            if val in _FUNCS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return ("call", val, arg)
            raise ExpressionError("unknown name %r at position %d"
                                  % (val, at))
        raise ExpressionError("unexpected %r at position %d in %r"
                              % (val if val is not None else "end of input",
                                 at, self.text))


def _eval(node, env):
    op = node[0]
    if op == "num":
        return node[1]
    if op == "var":
        return env[node[1]]
    if op == "neg":
        return -_eval(node[1], env)
    if op == "call":
        return _FUNCS[node[1]](_eval(node[2], env))
    a = _eval(node[1], env)
    b = _eval(node[2], env)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    if op == "^":
        return a ** b
    raise AssertionError(op)


def _vars_in(node, acc):
    if node[0] == "var":
        acc.add(node[1])
    elif node[0] in ("neg",):
        _vars_in(node[1], acc)
    elif node[0] == "call":
        _vars_in(node[2], acc)
    elif node[0] != "num":
        _vars_in(node[1], acc)
        _vars_in(node[2], acc)


def _is_zero(node):
    return node[0] == "num" and node[1] == 0.0


def _is_one(node):
    return node[0] == "num" and node[1] == 1.0


def _fold(op, a, b):
    """Light constant folding so derivative trees stay readable."""
    if a[0] == "num" and b[0] == "num":
        return ("num", _eval((op, a, b), {}))
    if op == "+":
        if _is_zero(a):
            return b
        if _is_zero(b):
            return a
    elif op == "-":
        if _is_zero(b):
            return a
        if _is_zero(a):
            return ("neg", b)
    elif op == "*":
        if _is_zero(a) or _is_zero(b):
            return ("num", 0.0)
        if _is_one(a):
            return b
        if _is_one(b):
            return a
    elif op == "/":
        if _is_zero(a):
            return ("num", 0.0)
        if _is_one(b):
            return a
    elif op == "^":
        if _is_zero(b):
            return ("num", 1.0)
        if _is_one(b):
            return a
    return (op, a, b)


def _diff(node, var):
    op = node[0]
    if op == "num":
        return ("num", 0.0)
    if op == "var":
        return ("num", 1.0 if node[1] == var else 0.0)
    if op == "neg":
        d = _diff(node[1], var)
        return ("num", 0.0) if _is_zero(d) else ("neg", d)
    if op in ("+", "-"):
        return _fold(op, _diff(node[1], var), _diff(node[2], var))
    if op == "*":
        a, b = node[1], node[2]
        return _fold("+", _fold("*", _diff(a, var), b),
                     _fold("*", a, _diff(b, var)))
    if op == "/":
        a, b = node[1], node[2]
        num = _fold("-", _fold("*", _diff(a, var), b),
                    _fold("*", a, _diff(b, var)))
        return _fold("/", num, _fold("^", b, ("num", 2.0)))
    if op == "^":
        base, expo = node[1], node[2]
        acc = set()
        _vars_in(expo, acc)
        if acc:
            raise _NonDifferentiable("variable exponent")
        c = _eval(expo, {})
        db = _diff(base, var)
        if _is_zero(db):
            return ("num", 0.0)
        return _fold("*", _fold("*", ("num", c),
                                _fold("^", base, ("num", c - 1.0))), db)
    if op == "call":
        name, arg = node[1], node[2]
        da = _diff(arg, var)
        if _is_zero(da):
            return ("num", 0.0)
        if name == "abs":
            raise _NonDifferentiable("abs")
        if name == "sin":
            outer = ("call", "cos", arg)
        elif name == "cos":
            outer = ("neg", ("call", "sin", arg))
        elif name == "exp":
            outer = ("call", "exp", arg)
        elif name == "sqrt":
            return _fold("/", da, _fold("*", ("num", 2.0),
                                        ("call", "sqrt", arg)))
        else:
            raise AssertionError(name)
        return _fold("*", outer, da)
    raise AssertionError(op)


def _unparse(node):
    op = node[0]
    if op == "num":
        v = node[1]
        return repr(int(v)) if v == int(v) and abs(v) < 1e15 else repr(v)
    if op == "var":
        return node[1]
    if op == "neg":
        return "-(%s)" % _unparse(node[1])
    if op == "call":
        return "%s(%s)" % (node[1], _unparse(node[2]))
    return "(%s %s %s)" % (_unparse(node[1]), op, _unparse(node[2]))


class Expression:
    """A parsed coefficient field; callable on numpy arrays as
    f(x, y, t).  Trailing arguments may be omitted when the expression
    does not use them."""

    def __init__(self, text, ast=None):
        self.text = text
        self.ast = ast if ast is not None else _Parser(text).parse()
        acc = set()
        _vars_in(self.ast, acc)
        self.variables = frozenset(acc)

    def __call__(self, x, y=0.0, t=0.0):
        return _eval(self.ast, {"x": x, "y": y, "t": t})

    def __repr__(self):
        return "Expression(%r)" % self.text

    @property
    def uses_t(self):
        return "t" in self.variables

    def derivative(self, var):
        """Symbolic partial derivative, or None when no analytic rule
        applies (abs, variable exponents); callers then use central
        finite differences."""
        if var not in _VARS:
            raise ValueError("derivative variable must be one of %s"
                             % (_VARS,))
        try:
            d = _diff(self.ast, var)
        except _NonDifferentiable:
            return None
        return Expression(_unparse(d), d)


def parse_expression(text):
    """Parse a coefficient expression; raises ExpressionError on bad
    input."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    return Expression(text)
