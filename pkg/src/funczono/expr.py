"""Infix expression parsing: tokenizer, shunting yard, RPN evaluation.

Grammar: binary operators ``+ - * / ^``, unary minus, the function set in
:data:`funczono.primitives.UNARY_FUNCTIONS`, parentheses, float literals,
and case-sensitive identifiers.  Precedence from tightest to loosest:
``^`` (right-associative), unary minus, ``* /``, ``+ -``.

Unary minus is lexed as its own ``neg`` token so the shunting yard stays
purely precedence-driven; implicit multiplication is rejected.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .primitives import PRIMITIVES, UNARY_FUNCTIONS

NUMBER = "number"
VARIABLE = "variable"
FUNCTION = "unary-function"
OPERATOR = "binary-operator"
UNARY_MINUS = "unary-minus"
LPAREN = "left-paren"
RPAREN = "right-paren"


class ParseError(ValueError):
    """Lexing or parsing failure, with a source position when available."""

    def __init__(self, message: str, position: Optional[int] = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


@dataclass(frozen=True)
class Token:
    kind: str
    lexeme: str
    value: float = 0.0

    def __repr__(self) -> str:
        return self.lexeme


# precedence, associativity, arity for every stack operator
OPERATOR_TABLE = {
    "^": (4, "right", 2),
    "neg": (3, "right", 1),
    "*": (2, "left", 2),
    "/": (2, "left", 2),
    "+": (1, "left", 2),
    "-": (1, "left", 2),
}

_NUMBER_RE = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def tokenize(source: str) -> list[Token]:
    """Lex an infix expression into tokens.

    Minus is unary when it starts the expression or follows an operator,
    unary minus, or ``(``; otherwise it is binary subtraction.
    """
    if not source or not source.strip():
        raise ParseError("empty expression")
    tokens: list[Token] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "(":
            tokens.append(Token(LPAREN, "("))
            i += 1
            continue
        if ch == ")":
            tokens.append(Token(RPAREN, ")"))
            i += 1
            continue
        if ch in "+*/^":
            tokens.append(Token(OPERATOR, ch))
            i += 1
            continue
        if ch == "-":
            prev = tokens[-1] if tokens else None
            if prev is None or prev.kind in (OPERATOR, UNARY_MINUS, LPAREN):
                tokens.append(Token(UNARY_MINUS, "neg"))
            else:
                tokens.append(Token(OPERATOR, "-"))
            i += 1
            continue
        m = _NUMBER_RE.match(source, i)
        if m and (ch.isdigit() or ch == "."):
            text = m.group(0)
            try:
                value = float(text)
            except ValueError:
                raise ParseError(f"malformed number {text!r}", i)
            if not math.isfinite(value):
                raise ParseError(f"non-finite number {text!r}", i)
            if m.end() < n and (source[m.end()].isalpha() or source[m.end()] == "_"):
                raise ParseError("implicit multiplication is not supported", m.end())
            tokens.append(Token(NUMBER, text, value))
            i = m.end()
            continue
        m = _IDENT_RE.match(source, i)
        if m:
            name = m.group(0)
            j = m.end()
            while j < n and source[j].isspace():
                j += 1
            if name in UNARY_FUNCTIONS:
                if j >= n or source[j] != "(":
                    raise ParseError(f"function {name!r} requires parentheses", i)
                tokens.append(Token(FUNCTION, name))
            else:
                tokens.append(Token(VARIABLE, name))
            i = m.end()
            continue
        raise ParseError(f"unknown character {ch!r}", i)
    return tokens


@dataclass(frozen=True)
class RpnExpr:
    """A postfix token sequence, evaluable with a single stack."""

    tokens: tuple[Token, ...]

    def __iter__(self):
        return iter(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def __repr__(self) -> str:
        return " ".join(t.lexeme for t in self.tokens)

    def variables(self) -> list[str]:
        """Distinct variable names in first-appearance order."""
        seen: list[str] = []
        for t in self.tokens:
            if t.kind == VARIABLE and t.lexeme not in seen:
                seen.append(t.lexeme)
        return seen


def to_rpn(tokens: Iterable[Token]) -> RpnExpr:
    """Shunting yard conversion from infix token list to RPN."""
    output: list[Token] = []
    stack: list[Token] = []
    prev: Optional[Token] = None
    for tok in tokens:
        if tok.kind in (NUMBER, VARIABLE):
            if prev is not None and prev.kind in (NUMBER, VARIABLE, RPAREN):
                raise ParseError(f"missing operator before {tok.lexeme!r}")
            output.append(tok)
        elif tok.kind == FUNCTION:
            stack.append(tok)
        elif tok.kind == UNARY_MINUS:
            stack.append(tok)
        elif tok.kind == OPERATOR:
            if prev is None or prev.kind in (OPERATOR, UNARY_MINUS, LPAREN):
                raise ParseError(f"operator {tok.lexeme!r} is missing an operand")
            prec, assoc, _ = OPERATOR_TABLE[tok.lexeme]
            while stack and stack[-1].kind in (OPERATOR, UNARY_MINUS):
                top_prec, _, _ = OPERATOR_TABLE[stack[-1].lexeme]
                if top_prec > prec or (top_prec == prec and assoc == "left"):
                    output.append(stack.pop())
                else:
                    break
            stack.append(tok)
        elif tok.kind == LPAREN:
            if prev is not None and prev.kind in (NUMBER, VARIABLE, RPAREN):
                raise ParseError("missing operator before '('")
            stack.append(tok)
        elif tok.kind == RPAREN:
            while stack and stack[-1].kind != LPAREN:
                output.append(stack.pop())
            if not stack:
                raise ParseError("mismatched ')'")
            stack.pop()
            if stack and stack[-1].kind == FUNCTION:
                output.append(stack.pop())
        else:
            raise ParseError(f"unexpected token {tok!r}")
        prev = tok
    while stack:
        top = stack.pop()
        if top.kind == LPAREN:
            raise ParseError("mismatched '('")
        output.append(top)
    rpn = RpnExpr(tuple(output))
    _check_stack_evaluable(rpn)
    return rpn


def _check_stack_evaluable(rpn: RpnExpr) -> None:
    depth = 0
    for t in rpn.tokens:
        if t.kind in (NUMBER, VARIABLE):
            depth += 1
        elif t.kind in (FUNCTION, UNARY_MINUS):
            if depth < 1:
                raise ParseError(f"{t.lexeme!r} is missing an operand")
        elif t.kind == OPERATOR:
            if depth < 2:
                raise ParseError(f"operator {t.lexeme!r} is missing an operand")
            depth -= 1
        else:
            raise ParseError(f"{t.lexeme!r} is not valid in RPN")
    if depth != 1:
        raise ParseError(f"expression leaves {depth} values on the stack")


def parse(source: str) -> RpnExpr:
    """Convenience: tokenize then convert to RPN."""
    return to_rpn(tokenize(source))


def eval_rpn(rpn: RpnExpr, assignment: Mapping[str, float]) -> float:
    """Stack evaluation of an RPN expression under a variable assignment."""
    stack: list[float] = []
    for t in rpn.tokens:
        if t.kind == NUMBER:
            stack.append(t.value)
        elif t.kind == VARIABLE:
            if t.lexeme not in assignment:
                raise KeyError(f"variable {t.lexeme!r} is not assigned")
            stack.append(float(assignment[t.lexeme]))
        elif t.kind == UNARY_MINUS:
            stack.append(-stack.pop())
        elif t.kind == FUNCTION:
            spec = PRIMITIVES[t.lexeme]
            stack.append(spec.evaluate(stack.pop(), ()))
        elif t.kind == OPERATOR:
            b = stack.pop()
            a = stack.pop()
            if t.lexeme == "+":
                stack.append(a + b)
            elif t.lexeme == "-":
                stack.append(a - b)
            elif t.lexeme == "*":
                stack.append(a * b)
            elif t.lexeme == "/":
                stack.append(PRIMITIVES["div"].evaluate(a, b, ()))
            else:
                stack.append(_pow_value(a, b))
        else:
            raise ParseError(f"cannot evaluate token {t!r}")
        if stack and not math.isfinite(stack[-1]):
            raise OverflowError(f"non-finite intermediate value at token {t.lexeme!r}")
    return stack[0]


def _pow_value(a: float, b: float) -> float:
    # integer exponents apply to any base; fractional ones need a > 0
    if b == round(b):
        if a == 0.0 and b < 0:
            raise ZeroDivisionError("0 raised to a negative power")
        return a ** round(b)
    return PRIMITIVES["pow"].evaluate(a, b, ())
