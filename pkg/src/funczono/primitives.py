"""Scalar primitive functions shared by the whole toolchain.

Every non-affine observable applies one of these primitives.  A primitive
bundles everything the downstream stages need: a point evaluator, a tight
range routine over an interval, a bound on |f''| for band sizing, and the
kink locations of piecewise-affine functions.

Unary primitives may carry constant parameters (e.g. ``pow_const`` stores
the exponent), which is how constant literals are folded out of
decompositions instead of becoming observables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence


class DomainError(ValueError):
    """A primitive was evaluated (or range-propagated) outside its domain."""


@dataclass(frozen=True)
class Interval:
    """Closed, finite real interval [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"interval bounds must be finite, got [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ValueError(f"interval requires lo <= hi, got [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, v: float) -> "Interval":
        return cls(v, v)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def contains(self, v: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= v <= self.hi + tol

    def contains_interval(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def inflate(self, rel: float) -> "Interval":
        delta = rel * max(abs(self.lo), abs(self.hi))
        return Interval(self.lo - delta, self.hi + delta)

    def __repr__(self) -> str:
        return f"[{self.lo:g}, {self.hi:g}]"


def _hull(*values: float) -> Interval:
    return Interval(min(values), max(values))


# ---------------------------------------------------------------------------
# scalar definitions
# ---------------------------------------------------------------------------

def hardsig(x: float) -> float:
    """Hard sigmoid: 0 below -2.5, 0.2*x + 0.5 on [-2.5, 2.5], 1 above."""
    if x < -2.5:
        return 0.0
    if x > 2.5:
        return 1.0
    return 0.2 * x + 0.5


def sig(x: float) -> float:
    """Logistic sigmoid, written to avoid overflow for large |x|."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def step(x: float) -> float:
    """Unit step: 0 for x < 0, 1 for x >= 0."""
    return 1.0 if x >= 0 else 0.0


def _sig_d2_max(iv: Interval) -> float:
    # |sig''| = |s(1-s)(1-2s)|; critical points at x = +/- log(2+sqrt(3)).
    xc = math.log(2.0 + math.sqrt(3.0))
    cands = [iv.lo, iv.hi] + [c for c in (-xc, xc, 0.0) if iv.lo < c < iv.hi]
    vals = []
    for x in cands:
        s = sig(x)
        vals.append(abs(s * (1 - s) * (1 - 2 * s)))
    return max(vals)


def _tanh_d2_max(iv: Interval) -> float:
    # |tanh''| = |2 tanh (1 - tanh^2)|; critical points at +/- atanh(1/sqrt(3)).
    xc = math.atanh(1.0 / math.sqrt(3.0))
    cands = [iv.lo, iv.hi] + [c for c in (-xc, xc, 0.0) if iv.lo < c < iv.hi]
    vals = []
    for x in cands:
        t = math.tanh(x)
        vals.append(abs(2 * t * (1 - t * t)))
    return max(vals)


def _monotone_range(f: Callable[[float], float], iv: Interval) -> Interval:
    return _hull(f(iv.lo), f(iv.hi))


def _sin_range(iv: Interval) -> Interval:
    lo, hi = iv.lo, iv.hi
    vals = [math.sin(lo), math.sin(hi)]
    # critical points at pi/2 + k*pi
    k0 = math.ceil((lo - math.pi / 2) / math.pi)
    k1 = math.floor((hi - math.pi / 2) / math.pi)
    for k in range(k0, k1 + 1):
        vals.append(math.sin(math.pi / 2 + k * math.pi))
    return _hull(*vals)


def _cos_range(iv: Interval) -> Interval:
    lo, hi = iv.lo, iv.hi
    vals = [math.cos(lo), math.cos(hi)]
    k0 = math.ceil(lo / math.pi)
    k1 = math.floor(hi / math.pi)
    for k in range(k0, k1 + 1):
        vals.append(math.cos(k * math.pi))
    return _hull(*vals)


def _tan_range(iv: Interval) -> Interval:
    # tan is monotone within one branch; reject intervals crossing an asymptote
    branch = lambda x: math.floor((x + math.pi / 2) / math.pi)
    if branch(iv.lo) != branch(iv.hi):
        raise DomainError(f"tan undefined on {iv}: interval crosses an asymptote")
    return _hull(math.tan(iv.lo), math.tan(iv.hi))


def _sq_range(iv: Interval) -> Interval:
    if iv.lo <= 0.0 <= iv.hi:
        return Interval(0.0, max(iv.lo * iv.lo, iv.hi * iv.hi))
    return _hull(iv.lo * iv.lo, iv.hi * iv.hi)


def _abs_range(iv: Interval) -> Interval:
    if iv.lo <= 0.0 <= iv.hi:
        return Interval(0.0, max(-iv.lo, iv.hi))
    return _hull(abs(iv.lo), abs(iv.hi))


def _log_range(iv: Interval) -> Interval:
    if iv.lo <= 0.0:
        raise DomainError(f"log requires a positive domain, got {iv}")
    return _monotone_range(math.log, iv)


def _sqrt_range(iv: Interval) -> Interval:
    if iv.lo < 0.0:
        raise DomainError(f"sqrt requires a non-negative domain, got {iv}")
    return _monotone_range(math.sqrt, iv)


def _step_range(iv: Interval) -> Interval:
    if iv.hi < 0.0:
        return Interval(0.0, 0.0)
    if iv.lo >= 0.0:
        return Interval(1.0, 1.0)
    return Interval(0.0, 1.0)


def _pow_const_eval(x: float, k: float) -> float:
    if x < 0.0 and k != round(k):
        raise DomainError(f"x^{k} undefined for x={x} < 0")
    if x == 0.0 and k < 0:
        raise DomainError(f"x^{k} undefined at x=0")
    return float(x) ** k


def _pow_const_range(iv: Interval, k: float) -> Interval:
    if k == round(k):
        k = round(k)
        if k >= 0 and k % 2 == 0:
            inner = _abs_range(iv)
            return _hull(inner.lo ** k, inner.hi ** k)
        if k < 0 and iv.lo <= 0.0 <= iv.hi:
            raise DomainError(f"x^{k} undefined on {iv} containing 0")
        if k < 0 and k % 2 == 0:
            inner = _abs_range(iv)
            return _hull(inner.lo ** k, inner.hi ** k)
        return _hull(iv.lo ** k, iv.hi ** k)  # odd power: monotone
    if iv.lo < 0.0:
        raise DomainError(f"x^{k} requires a non-negative domain, got {iv}")
    if k < 0 and iv.lo == 0.0:
        raise DomainError(f"x^{k} undefined at x=0")
    return _hull(iv.lo ** k, iv.hi ** k)


def _pow_const_d2(iv: Interval, k: float) -> float:
    # |k (k-1) x^(k-2)| is monotone in |x|; check endpoints (and 0 if interior)
    cands = [iv.lo, iv.hi]
    if iv.lo < 0.0 < iv.hi:
        cands.append(0.0)
    out = 0.0
    for x in cands:
        try:
            out = max(out, abs(k * (k - 1) * _pow_const_eval(x, k - 2)))
        except DomainError:
            raise
    return out


def _recip_eval(x: float, c: float) -> float:
    if x == 0.0:
        raise DomainError("division by zero")
    return c / x


def _recip_range(iv: Interval, c: float) -> Interval:
    if iv.lo <= 0.0 <= iv.hi:
        raise DomainError(f"c/x undefined on {iv} containing 0")
    return _hull(c / iv.lo, c / iv.hi)


def _recip_d2(iv: Interval, c: float) -> float:
    if iv.lo <= 0.0 <= iv.hi:
        raise DomainError(f"c/x undefined on {iv} containing 0")
    edge = iv.lo if iv.lo > 0 else iv.hi  # endpoint nearest zero
    return abs(2.0 * c / edge ** 3)


def _powbase_eval(x: float, a: float) -> float:
    if a <= 0.0:
        raise DomainError(f"a^x requires a > 0, got a={a}")
    return a ** x


def _powbase_range(iv: Interval, a: float) -> Interval:
    return _hull(_powbase_eval(iv.lo, a), _powbase_eval(iv.hi, a))


@dataclass(frozen=True)
class PrimitiveSpec:
    """One registered scalar primitive.

    ``evaluate`` takes the argument value(s) followed by the parameter tuple.
    ``rng`` returns a tight enclosure of the image of an interval (two
    intervals for binary primitives).  ``d2_bound`` bounds |f''| over a
    subinterval for band sizing (unary, smooth primitives only).  ``kinks``
    lists breakpoints of exactly piecewise-affine primitives.
    """

    id: str
    arity: int
    evaluate: Callable
    rng: Callable
    d2_bound: Optional[Callable] = None
    kinks: Optional[Callable] = None
    discontinuous: bool = False

    def __call__(self, *args):
        return self.evaluate(*args)


def _spec_unary(pid, f, rng, d2=None, kinks=None, disc=False):
    return PrimitiveSpec(
        id=pid,
        arity=1,
        evaluate=lambda x, params=(): f(x, *params),
        rng=lambda iv, params=(): rng(iv, *params),
        d2_bound=(lambda iv, params=(): d2(iv, *params)) if d2 else None,
        kinks=(lambda params=(): kinks(*params)) if kinks else None,
        discontinuous=disc,
    )


def _mul_range(a: Interval, b: Interval) -> Interval:
    return _hull(a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi)


def _div_eval(x: float, y: float) -> float:
    if y == 0.0:
        raise DomainError("division by zero")
    return x / y


def _div_range(a: Interval, b: Interval) -> Interval:
    if b.lo <= 0.0 <= b.hi:
        raise DomainError(f"x/y undefined for denominator range {b} containing 0")
    return _hull(a.lo / b.lo, a.lo / b.hi, a.hi / b.lo, a.hi / b.hi)


def _pow_eval(x: float, y: float) -> float:
    if x <= 0.0:
        raise DomainError(f"x^y with non-constant exponent requires x > 0, got x={x}")
    return x ** y


def _pow_range(a: Interval, b: Interval) -> Interval:
    # x^y is monotone in each argument separately for x > 0, so the extrema
    # over a box sit at corners
    if a.lo <= 0.0:
        raise DomainError(f"x^y requires a positive base range, got {a}")
    return _hull(a.lo ** b.lo, a.lo ** b.hi, a.hi ** b.lo, a.hi ** b.hi)


PRIMITIVES: dict[str, PrimitiveSpec] = {}


def register(spec: PrimitiveSpec) -> PrimitiveSpec:
    if spec.id in PRIMITIVES:
        raise ValueError(f"primitive {spec.id!r} already registered")
    PRIMITIVES[spec.id] = spec
    return spec


for _s in [
    _spec_unary("sin", lambda x: math.sin(x), _sin_range, d2=lambda iv: 1.0),
    _spec_unary("cos", lambda x: math.cos(x), _cos_range, d2=lambda iv: 1.0),
    _spec_unary("tan", lambda x: math.tan(x), _tan_range,
                d2=lambda iv: max(abs(2 * math.tan(x) / math.cos(x) ** 2)
                                  for x in (iv.lo, iv.hi))),
    _spec_unary("exp", lambda x: math.exp(x), lambda iv: _monotone_range(math.exp, iv),
                d2=lambda iv: math.exp(iv.hi)),
    _spec_unary("log", lambda x: math.log(x) if x > 0 else _raise_log(x), _log_range,
                d2=lambda iv: 1.0 / iv.lo ** 2 if iv.lo > 0 else _raise_log(iv.lo)),
    _spec_unary("sqrt", lambda x: math.sqrt(x) if x >= 0 else _raise_sqrt(x), _sqrt_range,
                d2=lambda iv: 0.25 * iv.lo ** -1.5 if iv.lo > 0
                else _raise_sqrt_d2(iv)),
    _spec_unary("abs", lambda x: abs(x), _abs_range, d2=lambda iv: 0.0,
                kinks=lambda: [0.0]),
    _spec_unary("tanh", lambda x: math.tanh(x), lambda iv: _monotone_range(math.tanh, iv),
                d2=_tanh_d2_max),
    _spec_unary("sig", sig, lambda iv: _monotone_range(sig, iv), d2=_sig_d2_max),
    _spec_unary("hardsig", hardsig, lambda iv: _monotone_range(hardsig, iv),
                d2=lambda iv: 0.0, kinks=lambda: [-2.5, 2.5]),
    _spec_unary("step", step, _step_range, disc=True),
    _spec_unary("sq", lambda x: x * x, _sq_range, d2=lambda iv: 2.0),
    _spec_unary("pow_const", _pow_const_eval, _pow_const_range, d2=_pow_const_d2),
    _spec_unary("recip", _recip_eval, _recip_range, d2=_recip_d2),
    _spec_unary("powbase", _powbase_eval, _powbase_range,
                d2=lambda iv, a: math.log(a) ** 2 * max(_powbase_eval(iv.lo, a),
                                                        _powbase_eval(iv.hi, a))),
    PrimitiveSpec("mul", 2, lambda x, y, params=(): x * y,
                  lambda a, b, params=(): _mul_range(a, b)),
    PrimitiveSpec("div", 2, lambda x, y, params=(): _div_eval(x, y),
                  lambda a, b, params=(): _div_range(a, b)),
    PrimitiveSpec("pow", 2, lambda x, y, params=(): _pow_eval(x, y),
                  lambda a, b, params=(): _pow_range(a, b)),
]:
    register(_s)


def _raise_log(x):
    raise DomainError(f"log requires x > 0, got {x}")


def _raise_sqrt(x):
    raise DomainError(f"sqrt requires x >= 0, got {x}")


def _raise_sqrt_d2(iv):
    raise DomainError(f"sqrt curvature bound requires lo > 0, got {iv}")


UNARY_FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs",
                   "tanh", "sig", "hardsig", "step", "sq")


# ---------------------------------------------------------------------------
# composite unary functions (expression trees over a single argument)
# ---------------------------------------------------------------------------
#
# DAG contraction fuses a subgraph into one unary function of a single
# observable.  The fused function is stored as an expression tree whose
# leaves are the argument placeholder and constants:
#
#   ("arg",)
#   ("const", value)
#   ("call", op_id, params, child[, child])
#   ("affine", ((coeff, child), ...), offset)

ARG = ("arg",)


def const(v: float) -> tuple:
    return ("const", float(v))


def call(op: str, *children, params: tuple = ()) -> tuple:
    return ("call", op, tuple(params), *children)


def affine_node(terms: Sequence[tuple], offset: float) -> tuple:
    return ("affine", tuple(terms), float(offset))


def tree_eval(node: tuple, x: float) -> float:
    tag = node[0]
    if tag == "arg":
        return x
    if tag == "const":
        return node[1]
    if tag == "call":
        _, op, params, *children = node
        spec = PRIMITIVES[op]
        args = [tree_eval(ch, x) for ch in children]
        return spec.evaluate(*args, params)
    if tag == "affine":
        _, terms, offset = node
        return offset + sum(c * tree_eval(ch, x) for c, ch in terms)
    raise ValueError(f"unknown tree node {node!r}")


def tree_range(node: tuple, iv: Interval) -> Interval:
    """Natural interval extension of a composite body."""
    tag = node[0]
    if tag == "arg":
        return iv
    if tag == "const":
        return Interval.point(node[1])
    if tag == "call":
        _, op, params, *children = node
        spec = PRIMITIVES[op]
        args = [tree_range(ch, iv) for ch in children]
        return spec.rng(*args, params)
    if tag == "affine":
        _, terms, offset = node
        lo = hi = offset
        for c, ch in terms:
            r = tree_range(ch, iv)
            lo += min(c * r.lo, c * r.hi)
            hi += max(c * r.lo, c * r.hi)
        return Interval(lo, hi)
    raise ValueError(f"unknown tree node {node!r}")


def _tree_key(node: tuple) -> str:
    # stable total order on trees, used to sort affine terms canonically
    tag = node[0]
    if tag == "arg":
        return "a"
    if tag == "const":
        return f"c{node[1]!r}"
    if tag == "call":
        _, op, params, *children = node
        return f"f{op}|{params!r}|" + "|".join(_tree_key(ch) for ch in children)
    _, terms, offset = node
    inner = ";".join(f"{c!r}*{_tree_key(ch)}" for c, ch in terms)
    return f"s{offset!r}|{inner}"


def tree_canonical(node: tuple) -> tuple:
    """Flatten nested affine nodes, merge duplicate terms, sort terms."""
    tag = node[0]
    if tag in ("arg", "const"):
        return node
    if tag == "call":
        _, op, params, *children = node
        return ("call", op, params, *[tree_canonical(ch) for ch in children])
    _, terms, offset = node
    flat: list[tuple] = []
    total_offset = offset

    def absorb(coeff, child):
        nonlocal total_offset
        child = tree_canonical(child)
        if child[0] == "const":
            total_offset += coeff * child[1]
        elif child[0] == "affine":
            _, sub_terms, sub_off = child
            total_offset += coeff * sub_off
            for sc, sch in sub_terms:
                absorb(coeff * sc, sch)
        else:
            flat.append((coeff, child))

    for c, ch in terms:
        absorb(c, ch)

    merged: dict[str, list] = {}
    for c, ch in flat:
        key = _tree_key(ch)
        if key in merged:
            merged[key][0] += c
        else:
            merged[key] = [c, ch]
    kept = sorted(((c, ch) for c, ch in merged.values() if c != 0.0),
                  key=lambda t: _tree_key(t[1]))
    if not kept:
        return ("const", float(total_offset))
    if len(kept) == 1 and kept[0][0] == 1.0 and total_offset == 0.0:
        return kept[0][1]
    return ("affine", tuple(kept), float(total_offset))


@dataclass(frozen=True)
class Composite:
    """A fused unary function h(t) represented by its expression tree."""

    body: tuple

    @property
    def id(self) -> str:
        return "composite"

    def evaluate(self, x: float, params: tuple = ()) -> float:
        return tree_eval(self.body, x)

    def rng(self, iv: Interval, params: tuple = ()) -> Interval:
        return tree_range(self.body, iv)

    def d2_bound(self, iv: Interval, params: tuple = (), n: int = 1024) -> float:
        """Sampled second-difference bound on |f''| over iv, inflated x1.5.

        Not rigorous; reported as such wherever band error bounds are
        surfaced.
        """
        if iv.width == 0.0:
            return 0.0
        xs = [iv.lo + iv.width * i / n for i in range(n + 1)]
        h = iv.width / n
        worst = 0.0
        for i in range(1, n):
            d2 = (tree_eval(self.body, xs[i - 1])
                  - 2.0 * tree_eval(self.body, xs[i])
                  + tree_eval(self.body, xs[i + 1])) / (h * h)
            worst = max(worst, abs(d2))
        return 1.5 * worst

    def canonical(self) -> "Composite":
        return Composite(tree_canonical(self.body))

    def render(self, arg_name: str) -> str:
        return render_tree(self.body, arg_name)


def render_tree(node: tuple, arg_name: str) -> str:
    tag = node[0]
    if tag == "arg":
        return arg_name
    if tag == "const":
        return f"{node[1]:g}"
    if tag == "call":
        _, op, params, *children = node
        inner = ", ".join(render_tree(ch, arg_name) for ch in children)
        if params:
            inner += ", " + ", ".join(f"{p:g}" for p in params)
        return f"{op}({inner})"
    _, terms, offset = node
    parts = []
    for c, ch in terms:
        r = render_tree(ch, arg_name)
        if c == 1.0:
            parts.append(r)
        elif c == -1.0:
            parts.append(f"-{r}")
        else:
            parts.append(f"{c:g}*{r}")
    if offset != 0.0 or not parts:
        parts.append(f"{offset:g}")
    out = " + ".join(parts)
    return out.replace("+ -", "- ")
