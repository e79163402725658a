"""Interval arithmetic over decompositions.

``propagate`` runs one forward pass over a decomposition, assigning every
observable a closed interval that encloses its range over the input box.
Affine observables use exact (per-term) interval arithmetic; primitives
use their registered tight range routines.  The dependency problem is
accepted: results are sound but not minimal, which is all the downstream
band construction needs.

Every propagated interval is inflated by a small relative factor
(default 1e-9) so that later containment checks are not tripped up by
floating-point rounding.
"""

from __future__ import annotations

from typing import Mapping, Optional, Sequence, Union

from .decomp import AFFINE, INPUT, FunctionalDecomposition
from .primitives import Composite, DomainError, Interval, PRIMITIVES

DEFAULT_INFLATION = 1e-9


def interval_apply(primitive: Union[str, Composite], args: Sequence[Interval],
                   params: tuple = ()) -> Interval:
    """Tight range of one primitive applied to interval argument(s).

    Raises :class:`DomainError` when an argument interval leaves the
    primitive's domain (log of a non-positive range, division by an
    interval containing zero, ...).
    """
    spec = primitive if isinstance(primitive, Composite) else PRIMITIVES[primitive]
    return spec.rng(*args, params)


def propagate(fd: FunctionalDecomposition,
              domain: Union[Sequence[Interval], Mapping[str, Interval]],
              inflation: float = DEFAULT_INFLATION) -> list[Interval]:
    """Intervals for w_1..w_n over the given input box.

    ``domain`` is either one :class:`Interval` per input slot or a mapping
    from variable name to interval (requires the decomposition to carry
    variable names).
    """
    boxes = _input_boxes(fd, domain)
    intervals: list[Optional[Interval]] = []
    for j, obs in enumerate(fd.observables, start=1):
        if obs.kind == INPUT:
            iv = boxes[obs.slot - 1]
        elif obs.kind == AFFINE:
            lo = hi = obs.offset
            for i, c in obs.coeffs:
                r = intervals[i - 1]
                lo += min(c * r.lo, c * r.hi)
                hi += max(c * r.lo, c * r.hi)
            iv = Interval(lo, hi)
        else:
            args = [intervals[i - 1] for i in obs.args]
            try:
                iv = interval_apply(obs.op, args, obs.params)
            except DomainError as e:
                raise DomainError(f"observable w_{j}: {e}") from e
        intervals.append(iv.inflate(inflation) if inflation else iv)
    return intervals


def _input_boxes(fd: FunctionalDecomposition, domain) -> list[Interval]:
    if isinstance(domain, Mapping):
        if not fd.var_names:
            raise ValueError("named domains require a decomposition with var_names")
        missing = [v for v in fd.var_names if v not in domain]
        if missing:
            raise ValueError(f"missing domain for variable(s): {', '.join(missing)}")
        return [domain[v] for v in fd.var_names]
    boxes = list(domain)
    if len(boxes) != fd.n_x:
        raise ValueError(f"expected {fd.n_x} input intervals, got {len(boxes)}")
    return boxes
