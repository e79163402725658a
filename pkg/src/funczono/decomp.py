"""Compile RPN expressions into functional decompositions.

A functional decomposition lists intermediate assignments ("observables")
``w_1 .. w_{n_x+K}``: the first ``n_x`` are the inputs, every later one
applies a unary or binary primitive, or an affine combination, to earlier
observables.  Outputs are a list of observable indices.  Indices are
1-based and every observable only references strictly smaller indices,
which makes the induced graph acyclic by construction.

Two compilation modes:

* :func:`decompose_basic` creates one observable per operator/function
  application in RPN consumption order.
* :func:`decompose_dedup` additionally reuses an existing observable
  whenever the candidate is structurally equal after canonicalization
  (commutative operand sorting, constant folding, ``x^2`` -> ``sq``).

Constant literals never become observables: they fold into affine
coefficients/offsets or primitive parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import expr as _expr
from .primitives import (ARG, Composite, PRIMITIVES, UNARY_FUNCTIONS,
                         tree_canonical)

INPUT = "input"
UNARY = "unary"
BINARY = "binary"
AFFINE = "affine"

OpId = Union[str, Composite]


class DecompositionError(ValueError):
    pass


@dataclass(frozen=True)
class Observable:
    """One assignment of a functional decomposition (canonical form).

    ``affine`` observables store sorted, duplicate-free, non-zero
    coefficient terms.  ``binary`` observables with a commutative primitive
    store their arguments in ascending index order.
    """

    kind: str
    op: Optional[OpId] = None
    args: tuple[int, ...] = ()
    params: tuple[float, ...] = ()
    coeffs: tuple[tuple[int, float], ...] = ()
    offset: float = 0.0
    slot: int = 0

    @staticmethod
    def input(slot: int) -> "Observable":
        return Observable(kind=INPUT, slot=slot)

    @staticmethod
    def unary(op: OpId, arg: int, params: tuple[float, ...] = ()) -> "Observable":
        if isinstance(op, Composite):
            op = op.canonical()
        return Observable(kind=UNARY, op=op, args=(arg,), params=params)

    @staticmethod
    def binary(op: str, left: int, right: int) -> "Observable":
        if op == "mul" and left > right:
            left, right = right, left
        return Observable(kind=BINARY, op=op, args=(left, right))

    @staticmethod
    def affine(terms: Iterable[tuple[int, float]], offset: float = 0.0) -> "Observable":
        merged: dict[int, float] = {}
        for idx, c in terms:
            merged[idx] = merged.get(idx, 0.0) + c
        kept = tuple(sorted((i, c) for i, c in merged.items() if c != 0.0))
        return Observable(kind=AFFINE, coeffs=kept, offset=float(offset))

    def referenced(self) -> tuple[int, ...]:
        if self.kind == AFFINE:
            return tuple(i for i, _ in self.coeffs)
        return self.args

    def remap(self, mapping: dict[int, int]) -> "Observable":
        if self.kind == INPUT:
            return self
        if self.kind == AFFINE:
            return Observable.affine(
                ((mapping[i], c) for i, c in self.coeffs), self.offset)
        new_args = tuple(mapping[i] for i in self.args)
        if self.kind == BINARY:
            return Observable.binary(self.op, *new_args)
        return Observable(kind=self.kind, op=self.op, args=new_args,
                          params=self.params)


def render_observable(obs: Observable, name=lambda i: f"w_{i}") -> str:
    if obs.kind == INPUT:
        return name(obs.slot)
    if obs.kind == UNARY:
        if isinstance(obs.op, Composite):
            return obs.op.render(name(obs.args[0]))
        inner = name(obs.args[0])
        if obs.params:
            inner += ", " + ", ".join(f"{p:g}" for p in obs.params)
        return f"{obs.op}({inner})"
    if obs.kind == BINARY:
        sym = {"mul": "*", "div": "/", "pow": "^"}.get(obs.op, obs.op)
        return f"{name(obs.args[0])} {sym} {name(obs.args[1])}"
    parts = []
    for i, c in obs.coeffs:
        if c == 1.0:
            parts.append(name(i))
        elif c == -1.0:
            parts.append(f"-{name(i)}")
        else:
            parts.append(f"{c:g}*{name(i)}")
    if obs.offset != 0.0 or not parts:
        parts.append(f"{obs.offset:g}")
    return " + ".join(parts).replace("+ -", "- ")


@dataclass(frozen=True)
class FunctionalDecomposition:
    """Inputs, observables, and output indices (all indices 1-based)."""

    n_x: int
    observables: tuple[Observable, ...]
    output_indices: tuple[int, ...]
    var_names: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.observables)
        if self.n_x < 0 or self.n_x > n:
            raise DecompositionError(f"n_x={self.n_x} out of range for {n} observables")
        for j, obs in enumerate(self.observables, start=1):
            if j <= self.n_x:
                if obs.kind != INPUT or obs.slot != j:
                    raise DecompositionError(
                        f"observable {j} must be input slot {j}, got {obs}")
            else:
                if obs.kind == INPUT:
                    raise DecompositionError(f"input observable at index {j} > n_x")
                for ref in obs.referenced():
                    if not (1 <= ref < j):
                        raise DecompositionError(
                            f"observable {j} references index {ref} (must be < {j})")
        for out in self.output_indices:
            if not (1 <= out <= n):
                raise DecompositionError(f"output index {out} out of range")
        if self.var_names and len(self.var_names) != self.n_x:
            raise DecompositionError("var_names length must equal n_x")

    @property
    def size(self) -> int:
        """Total observable count, inputs included."""
        return len(self.observables)

    @property
    def n_outputs(self) -> int:
        return len(self.output_indices)

    def observable(self, index: int) -> Observable:
        return self.observables[index - 1]

    def input_name(self, slot: int) -> str:
        if self.var_names:
            return self.var_names[slot - 1]
        return f"w_{slot}"

    def successors(self) -> list[list[int]]:
        """successors()[j-1] lists the observables that use w_j."""
        out: list[list[int]] = [[] for _ in self.observables]
        for j, obs in enumerate(self.observables, start=1):
            for ref in obs.referenced():
                out[ref - 1].append(j)
        return out

    def describe(self) -> str:
        lines = []
        for j, obs in enumerate(self.observables, start=1):
            if obs.kind == INPUT:
                lines.append(f"w_{j} <- {self.input_name(j)}")
            else:
                lines.append(f"w_{j} = {render_observable(obs)}")
        lines.append("outputs: " + ", ".join(f"w_{j}" for j in self.output_indices))
        return "\n".join(lines)


def eval_all(fd: FunctionalDecomposition, inputs: Sequence[float]) -> list[float]:
    """Forward-substitute every observable; returns values for w_1..w_n."""
    if len(inputs) != fd.n_x:
        raise DecompositionError(f"expected {fd.n_x} inputs, got {len(inputs)}")
    values: list[float] = []
    for obs in fd.observables:
        if obs.kind == INPUT:
            values.append(float(inputs[obs.slot - 1]))
        elif obs.kind == AFFINE:
            values.append(obs.offset + sum(c * values[i - 1] for i, c in obs.coeffs))
        else:
            spec = obs.op if isinstance(obs.op, Composite) else PRIMITIVES[obs.op]
            args = [values[i - 1] for i in obs.args]
            values.append(spec.evaluate(*args, obs.params))
    return values


def eval_fd(fd: FunctionalDecomposition, inputs: Sequence[float]) -> np.ndarray:
    values = eval_all(fd, inputs)
    return np.array([values[j - 1] for j in fd.output_indices])


# ---------------------------------------------------------------------------
# RPN -> decomposition
# ---------------------------------------------------------------------------

_BULLET = object()  # marks output boundaries when concatenating elements


class _Builder:
    def __init__(self, n_x: Optional[int], dedup: bool,
                 var_names: Optional[Sequence[str]]):
        self.dedup = dedup
        self.fixed_n_x = n_x
        self.var_slots: dict[str, int] = {}
        if var_names:
            for name in var_names:
                if name in self.var_slots:
                    raise DecompositionError(f"duplicate variable name {name!r}")
                self.var_slots[name] = len(self.var_slots) + 1
            if n_x is None:
                self.fixed_n_x = len(self.var_slots)
        self.observables: list[Observable] = []

    def _ensure_inputs(self, count: int):
        while len(self.observables) < count:
            self.observables.append(Observable.input(len(self.observables) + 1))

    def _n_inputs(self) -> int:
        return self.fixed_n_x if self.fixed_n_x is not None else len(self.var_slots)

    def slot_of(self, name: str) -> int:
        if name not in self.var_slots:
            if self.fixed_n_x is None and len(self.observables) > len(self.var_slots):
                raise DecompositionError(
                    "all variables must appear before non-input observables "
                    "are created; pass var_names or n_x to pin the input count")
            self.var_slots[name] = len(self.var_slots) + 1
            if self.fixed_n_x is not None and len(self.var_slots) > self.fixed_n_x:
                raise DecompositionError(
                    f"expression uses more than n_x={self.fixed_n_x} variables")
        return self.var_slots[name]

    def add(self, obs: Observable) -> int:
        self._ensure_inputs(self._n_inputs())
        if self.dedup:
            for j, existing in enumerate(self.observables, start=1):
                if existing == obs:
                    return j
        self.observables.append(obs)
        return len(self.observables)

    def consume(self, rpn: _expr.RpnExpr) -> Union[int, float]:
        """Process one RPN stream; returns the result (index or constant)."""
        stack: list[Union[int, float, tuple]] = []
        for tok in rpn.tokens:
            if tok.kind == _expr.NUMBER:
                stack.append(("const", tok.value))
            elif tok.kind == _expr.VARIABLE:
                stack.append(self.slot_of(tok.lexeme))
            elif tok.kind == _expr.UNARY_MINUS:
                a = stack.pop()
                if _is_const(a):
                    stack.append(("const", -a[1]))
                else:
                    stack.append(self.add(Observable.affine(((a, -1.0),))))
            elif tok.kind == _expr.FUNCTION:
                a = stack.pop()
                if _is_const(a):
                    stack.append(("const", PRIMITIVES[tok.lexeme].evaluate(a[1], ())))
                else:
                    stack.append(self.add(Observable.unary(tok.lexeme, a)))
            elif tok.kind == _expr.OPERATOR:
                b = stack.pop()
                a = stack.pop()
                stack.append(self._apply_operator(tok.lexeme, a, b))
            else:
                raise DecompositionError(f"unexpected token {tok!r} in RPN")
        if len(stack) != 1:
            raise DecompositionError("malformed RPN: stack did not reduce to one value")
        top = stack[0]
        return top[1] if _is_const(top) else top

    def materialize(self, result: Union[int, float]) -> int:
        """Turn a pending constant into an (affine) observable if needed."""
        if isinstance(result, int):
            return result
        return self.add(Observable.affine((), offset=result))

    def _apply_operator(self, op: str, a, b):
        ca, cb = _is_const(a), _is_const(b)
        if ca and cb:
            return ("const", _fold(op, a[1], b[1]))
        if op == "+":
            if ca:
                return self.add(Observable.affine(((b, 1.0),), a[1]))
            if cb:
                return self.add(Observable.affine(((a, 1.0),), b[1]))
            return self.add(Observable.affine(((a, 1.0), (b, 1.0))))
        if op == "-":
            if ca:
                return self.add(Observable.affine(((b, -1.0),), a[1]))
            if cb:
                return self.add(Observable.affine(((a, 1.0),), -b[1]))
            return self.add(Observable.affine(((a, 1.0), (b, -1.0))))
        if op == "*":
            if ca or cb:
                c = a[1] if ca else b[1]
                idx = b if ca else a
                if c == 0.0:
                    return ("const", 0.0)
                return self.add(Observable.affine(((idx, c),)))
            return self.add(Observable.binary("mul", a, b))
        if op == "/":
            if cb:
                if b[1] == 0.0:
                    raise DecompositionError("literal division by zero")
                return self.add(Observable.affine(((a, 1.0 / b[1]),)))
            if ca:
                return self.add(Observable.unary("recip", b, params=(a[1],)))
            return self.add(Observable.binary("div", a, b))
        if op == "^":
            if cb:
                k = b[1]
                if k == 0.0:
                    return ("const", 1.0)
                if k == 1.0:
                    return a
                if k == 2.0:
                    return self.add(Observable.unary("sq", a))
                return self.add(Observable.unary("pow_const", a, params=(k,)))
            if ca:
                return self.add(Observable.unary("powbase", b, params=(a[1],)))
            return self.add(Observable.binary("pow", a, b))
        raise DecompositionError(f"unknown operator {op!r}")

    def finish(self, outputs: Sequence[int]) -> FunctionalDecomposition:
        self._ensure_inputs(self._n_inputs())
        names = tuple(sorted(self.var_slots, key=self.var_slots.get))
        return FunctionalDecomposition(
            n_x=self._n_inputs(),
            observables=tuple(self.observables),
            output_indices=tuple(outputs),
            var_names=names if names else (),
        )


def _is_const(entry) -> bool:
    return isinstance(entry, tuple) and entry[0] == "const"


def _fold(op: str, a: float, b: float) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            raise DecompositionError("literal division by zero")
        return a / b
    return _expr._pow_value(a, b)


def _as_rpn(source: Union[str, _expr.RpnExpr]) -> _expr.RpnExpr:
    return _expr.parse(source) if isinstance(source, str) else source


def decompose_basic(rpn: Union[str, _expr.RpnExpr], n_x: Optional[int] = None,
                    var_names: Optional[Sequence[str]] = None) -> FunctionalDecomposition:
    """One observable per operator/function application (no reuse)."""
    builder = _Builder(n_x, dedup=False, var_names=var_names)
    result = builder.consume(_as_rpn(rpn))
    return builder.finish([builder.materialize(result)])


def decompose_dedup(rpn: Union[str, _expr.RpnExpr], n_x: Optional[int] = None,
                    var_names: Optional[Sequence[str]] = None) -> FunctionalDecomposition:
    """Like :func:`decompose_basic`, but candidates equal to an existing
    observable reuse its index instead of creating a duplicate."""
    builder = _Builder(n_x, dedup=True, var_names=var_names)
    result = builder.consume(_as_rpn(rpn))
    return builder.finish([builder.materialize(result)])


def concat_vector(rpns: Sequence[Union[str, _expr.RpnExpr]],
                  n_x: Optional[int] = None,
                  var_names: Optional[Sequence[str]] = None) -> FunctionalDecomposition:
    """Decompose a vector-valued function over a shared variable set.

    Elements are compiled in order into one deduplicated decomposition;
    after each element the result index is recorded as an output, so
    redundant observables are shared across elements and
    ``output_indices`` has one entry per element (entries may repeat).
    """
    if not rpns:
        raise DecompositionError("concat_vector requires at least one expression")
    builder = _Builder(n_x, dedup=True, var_names=var_names)
    outputs = []
    for rpn in rpns:
        result = builder.consume(_as_rpn(rpn))
        outputs.append(builder.materialize(result))
    return builder.finish(outputs)


# ---------------------------------------------------------------------------
# transformations
# ---------------------------------------------------------------------------

def reindex(fd: FunctionalDecomposition, keep: Sequence[int],
            replacements: Optional[dict[int, Observable]] = None
            ) -> FunctionalDecomposition:
    """Keep the given (ascending) observable indices, renumber contiguously.

    ``replacements`` substitutes new expressions (in OLD index terms) for
    surviving observables before remapping.
    """
    keep = sorted(set(keep))
    mapping = {old: new for new, old in enumerate(keep, start=1)}
    replacements = replacements or {}
    new_obs = []
    for old in keep:
        obs = replacements.get(old, fd.observable(old))
        for ref in obs.referenced():
            if ref not in mapping:
                raise DecompositionError(
                    f"observable {old} references removed observable {ref}")
        new_obs.append(obs.remap(mapping))
    try:
        new_outputs = tuple(mapping[j] for j in fd.output_indices)
    except KeyError as e:
        raise DecompositionError(f"cannot remove output observable {e}") from None
    return FunctionalDecomposition(
        n_x=fd.n_x, observables=tuple(new_obs),
        output_indices=new_outputs, var_names=fd.var_names)


def fold_affine(fd: FunctionalDecomposition,
                protected: Optional[Iterable[int]] = None) -> FunctionalDecomposition:
    """Fuse chains of affine observables.

    An affine observable that is used only by one other affine observable
    (and is neither an output nor explicitly protected) is substituted
    inline and removed.  Repeats to a fixpoint.
    """
    protected_set = set(fd.output_indices)
    if protected is not None:
        protected_set |= set(protected)
    observables = list(fd.observables)
    removed: set[int] = set()

    changed = True
    while changed:
        changed = False
        succs: dict[int, list[int]] = {}
        for j, obs in enumerate(observables, start=1):
            if j in removed:
                continue
            for ref in obs.referenced():
                succs.setdefault(ref, []).append(j)
        for i in range(fd.n_x + 1, len(observables) + 1):
            if i in removed or i in protected_set:
                continue
            inner = observables[i - 1]
            if inner.kind != AFFINE:
                continue
            users = succs.get(i, [])
            if len(users) != 1:
                continue
            j = users[0]
            outer = observables[j - 1]
            if outer.kind != AFFINE:
                continue
            scale = dict(outer.coeffs)[i]
            terms = [(k, c) for k, c in outer.coeffs if k != i]
            terms += [(k, scale * c) for k, c in inner.coeffs]
            observables[j - 1] = Observable.affine(
                terms, outer.offset + scale * inner.offset)
            removed.add(i)
            changed = True
            break

    keep = [j for j in range(1, len(observables) + 1) if j not in removed]
    patched = FunctionalDecomposition(
        n_x=fd.n_x,
        observables=tuple(observables),
        output_indices=fd.output_indices,
        var_names=fd.var_names)
    return reindex(patched, keep)


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def _tree_to_json(node: tuple):
    tag = node[0]
    if tag == "arg":
        return ["arg"]
    if tag == "const":
        return ["const", node[1]]
    if tag == "call":
        _, op, params, *children = node
        return ["call", op, list(params)] + [_tree_to_json(ch) for ch in children]
    _, terms, offset = node
    return ["affine", [[c, _tree_to_json(ch)] for c, ch in terms], offset]


def _tree_from_json(data) -> tuple:
    tag = data[0]
    if tag == "arg":
        return ARG
    if tag == "const":
        return ("const", float(data[1]))
    if tag == "call":
        op, params = data[1], tuple(float(p) for p in data[2])
        if op not in PRIMITIVES:
            raise DecompositionError(f"unknown primitive {op!r} in composite")
        children = tuple(_tree_from_json(ch) for ch in data[3:])
        return ("call", op, params, *children)
    if tag == "affine":
        terms = tuple((float(c), _tree_from_json(ch)) for c, ch in data[1])
        return ("affine", terms, float(data[2]))
    raise DecompositionError(f"unknown composite node tag {tag!r}")


def to_json_dict(fd: FunctionalDecomposition) -> dict:
    obs_entries = []
    for j, obs in enumerate(fd.observables, start=1):
        entry: dict = {"index": j, "kind": obs.kind}
        if obs.kind == UNARY or obs.kind == BINARY:
            if isinstance(obs.op, Composite):
                entry["op"] = {"composite": _tree_to_json(obs.op.body)}
            else:
                entry["op"] = obs.op
            entry["args"] = list(obs.args)
            if obs.params:
                entry["params"] = list(obs.params)
        elif obs.kind == AFFINE:
            entry["coeffs"] = [[i, c] for i, c in obs.coeffs]
            entry["offset"] = obs.offset
        elif obs.kind == INPUT:
            entry["slot"] = obs.slot
        obs_entries.append(entry)
    out = {
        "n_x": fd.n_x,
        "observables": obs_entries,
        "outputs": list(fd.output_indices),
    }
    if fd.var_names:
        out["var_names"] = list(fd.var_names)
    return out


def from_json_dict(data: dict) -> FunctionalDecomposition:
    observables = []
    entries = sorted(data["observables"], key=lambda e: e["index"])
    for expected, entry in enumerate(entries, start=1):
        if entry["index"] != expected:
            raise DecompositionError("observable indices must be contiguous from 1")
        kind = entry["kind"]
        if kind == INPUT:
            observables.append(Observable.input(entry["slot"]))
        elif kind in (UNARY, BINARY):
            op = entry["op"]
            if isinstance(op, dict):
                op = Composite(_tree_from_json(op["composite"]))
            elif op not in PRIMITIVES:
                raise DecompositionError(f"unknown primitive {op!r}")
            args = tuple(int(a) for a in entry["args"])
            params = tuple(float(p) for p in entry.get("params", ()))
            if kind == UNARY:
                observables.append(Observable.unary(op, args[0], params))
            else:
                observables.append(Observable.binary(op, *args))
        elif kind == AFFINE:
            coeffs = [(int(i), float(c)) for i, c in entry.get("coeffs", [])]
            observables.append(Observable.affine(coeffs, float(entry.get("offset", 0.0))))
        else:
            raise DecompositionError(f"unknown observable kind {kind!r}")
    return FunctionalDecomposition(
        n_x=int(data["n_x"]),
        observables=tuple(observables),
        output_indices=tuple(int(j) for j in data["outputs"]),
        var_names=tuple(data.get("var_names", ())),
    )


def to_json(fd: FunctionalDecomposition, indent: int = 2) -> str:
    return json.dumps(to_json_dict(fd), indent=indent)


def from_json(text: str) -> FunctionalDecomposition:
    return from_json_dict(json.loads(text))
