"""Decomposition graphs: must-visit sets and contraction of unary excess.

A decomposition induces a DAG with one vertex per observable and an edge
i -> j whenever w_i is an argument of w_j's expression.  Contraction finds
vertex pairs (i, j) where w_j depends on w_i alone (every forward walk
from V_i passes V_j and every reverse walk from V_j passes V_i), fuses the
subgraph between them into a single unary function of w_i, and deletes the
interior vertices.  Outputs (and any user-designated observables) are
protected and never deleted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .decomp import (AFFINE, BINARY, INPUT, UNARY, DecompositionError,
                     FunctionalDecomposition, Observable, reindex,
                     render_observable)
from .primitives import ARG, Composite, tree_canonical


@dataclass(frozen=True)
class DecompGraph:
    """Adjacency view of a decomposition.

    ``adjacency[i, j]`` (0-based) is 1 iff w_{i+1} is an argument of
    w_{j+1}; all edges point from smaller to larger index, so the graph is
    acyclic by construction.
    """

    fd: FunctionalDecomposition
    adjacency: np.ndarray
    protected: frozenset[int]

    @property
    def n_vertices(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum())

    def successors(self, i: int) -> list[int]:
        """1-based successors of vertex i (1-based)."""
        return [int(j) + 1 for j in np.nonzero(self.adjacency[i - 1])[0]]

    def predecessors(self, j: int) -> list[int]:
        return [int(i) + 1 for i in np.nonzero(self.adjacency[:, j - 1])[0]]

    def outdegree(self, i: int) -> int:
        return int(self.adjacency[i - 1].sum())

    def indegree(self, j: int) -> int:
        return int(self.adjacency[:, j - 1].sum())


def build_graph(fd: FunctionalDecomposition,
                protected: Optional[Iterable[int]] = None) -> DecompGraph:
    """Adjacency matrix for a decomposition; outputs are always protected."""
    n = fd.size
    adj = np.zeros((n, n), dtype=np.int8)
    for j, obs in enumerate(fd.observables, start=1):
        for i in obs.referenced():
            adj[i - 1, j - 1] = 1
    prot = frozenset(fd.output_indices) | frozenset(protected or ())
    for p in prot:
        if not (1 <= p <= n):
            raise DecompositionError(f"protected index {p} out of range")
    return DecompGraph(fd=fd, adjacency=adj, protected=prot)


@dataclass(frozen=True)
class MustVisitSets:
    """W[i] / M[i]: vertices on every maximal forward / reverse walk from i.

    A maximal forward walk ends at a sink, a maximal reverse walk at a
    source; the vertex itself is excluded from its own sets.
    """

    forward: tuple[frozenset[int], ...]
    reverse: tuple[frozenset[int], ...]

    def W(self, i: int) -> frozenset[int]:
        return self.forward[i - 1]

    def M(self, i: int) -> frozenset[int]:
        return self.reverse[i - 1]


def must_visit(graph: DecompGraph) -> MustVisitSets:
    """Dominator-style dataflow, one reverse and one forward sweep.

    For a sink, the only maximal walk is the trivial one, so its set is
    empty.  Otherwise the vertices met on every walk from v are v itself
    plus whatever every successor's walks have in common:

        visit(v) = {v} | AND_{u in succ(v)} visit(u)

    Edges always point to larger indices, so a single index sweep is a
    topological sweep.
    """
    n = graph.n_vertices
    adj = graph.adjacency.astype(bool)
    # forward sets, processed sinks-first
    fwd = np.zeros((n, n), dtype=bool)
    for v in range(n - 1, -1, -1):
        succ = np.nonzero(adj[v])[0]
        if succ.size:
            common = np.logical_and.reduce(fwd[succ], axis=0)
            fwd[v] = common
        fwd[v, v] = True
    rev = np.zeros((n, n), dtype=bool)
    for v in range(n):
        pred = np.nonzero(adj[:, v])[0]
        if pred.size:
            common = np.logical_and.reduce(rev[pred], axis=0)
            rev[v] = common
        rev[v, v] = True
    forward = tuple(frozenset(int(j) + 1 for j in np.nonzero(fwd[v])[0] if j != v)
                    for v in range(n))
    reverse = tuple(frozenset(int(j) + 1 for j in np.nonzero(rev[v])[0] if j != v)
                    for v in range(n))
    return MustVisitSets(forward=forward, reverse=reverse)


def comp(graph: DecompGraph, i: int, j: int) -> Observable:
    """Fuse everything between V_i and V_j into one unary function of w_i.

    Requires every reverse walk from V_j to pass through V_i (i.e.
    V_i in M_j, or i = j).  Shared predecessors are revisited, so
    sub-expressions may be duplicated inside the fused body.
    """

    def body(v: int) -> tuple:
        if v == i:
            return ARG
        obs = graph.fd.observable(v)
        if obs.kind == INPUT:
            raise DecompositionError(
                f"a reverse walk from vertex {j} reaches input {v}, not {i}")
        if obs.kind == AFFINE:
            terms = tuple((c, body(k)) for k, c in obs.coeffs)
            return ("affine", terms, obs.offset)
        if isinstance(obs.op, Composite):
            # substitute the argument into the stored body
            return _substitute(obs.op.body, body(obs.args[0]))
        children = tuple(body(a) for a in obs.args)
        return ("call", obs.op, obs.params, *children)

    fused = tree_canonical(body(j))
    return _observable_from_body(fused, i)


def _substitute(node: tuple, replacement: tuple) -> tuple:
    tag = node[0]
    if tag == "arg":
        return replacement
    if tag == "const":
        return node
    if tag == "call":
        _, op, params, *children = node
        return ("call", op, params,
                *[_substitute(ch, replacement) for ch in children])
    _, terms, offset = node
    return ("affine", tuple((c, _substitute(ch, replacement)) for c, ch in terms),
            offset)


def _observable_from_body(body: tuple, arg: int) -> Observable:
    """Collapse trivial fused bodies back to plain observables."""
    if body[0] == "arg":
        return Observable.affine(((arg, 1.0),))
    if body[0] == "const":
        return Observable.affine((), offset=body[1])
    if body[0] == "call" and len(body) == 4 and body[3] == ARG:
        return Observable.unary(body[1], arg, body[2])
    if body[0] == "affine" and all(ch == ARG for _, ch in body[1]):
        coeff = sum(c for c, _ in body[1])
        return Observable.affine(((arg, coeff),), body[2])
    return Observable.unary(Composite(body), arg)


@dataclass(frozen=True)
class PairDecision:
    """Outcome of scanning one candidate pair in the contraction loop."""

    i: int
    j: int
    fired: bool
    reason: str
    removed: tuple[int, ...] = ()


def _reachable(adj: np.ndarray, start: int, forward: bool) -> set[int]:
    n = adj.shape[0]
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        row = adj[v - 1] if forward else adj[:, v - 1]
        for u in np.nonzero(row)[0]:
            u = int(u) + 1
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return seen


def scan_pairs(graph: DecompGraph, sets: Optional[MustVisitSets] = None
               ) -> list[PairDecision]:
    """One pass of the contraction pair scan, stopping at the first firing.

    Pairs are visited ascending in i, then ascending within W_i.  The
    returned trace records the decision for every visited pair; the last
    entry is the firing one when a contraction applies.
    """
    sets = sets or must_visit(graph)
    decisions: list[PairDecision] = []
    n = graph.n_vertices
    for i in range(1, n + 1):
        for j in sorted(sets.W(i)):
            if i not in sets.M(j):
                decisions.append(PairDecision(i, j, False, "not-mutual"))
                continue
            if graph.adjacency[i - 1, j - 1] == 1 and graph.outdegree(i) <= 1:
                decisions.append(PairDecision(i, j, False, "direct-edge-single-use"))
                continue
            interior = (_reachable(graph.adjacency, i, True)
                        & _reachable(graph.adjacency, j, False)) - {i, j}
            if interior & graph.protected:
                decisions.append(PairDecision(i, j, False, "protected-interior"))
                continue
            if not interior:
                # fusing would recreate w_j verbatim; nothing to remove
                decisions.append(PairDecision(i, j, False, "no-interior"))
                continue
            decisions.append(PairDecision(i, j, True, "contracted",
                                          tuple(sorted(interior))))
            return decisions
    return decisions


def contract_once(graph: DecompGraph) -> tuple[Optional[FunctionalDecomposition],
                                               list[PairDecision]]:
    """Apply the first firing contraction; returns (new fd or None, trace)."""
    decisions = scan_pairs(graph)
    if not decisions or not decisions[-1].fired:
        return None, decisions
    d = decisions[-1]
    fused = comp(graph, d.i, d.j)
    fd = graph.fd
    keep = [k for k in range(1, fd.size + 1) if k not in d.removed]
    reduced = reindex(fd, keep, replacements={d.j: fused})
    return reduced, decisions


def reduce(fd: FunctionalDecomposition,
           protected: Optional[Iterable[int]] = None,
           trace: Optional[list[PairDecision]] = None) -> FunctionalDecomposition:
    """Contract excessive unary decompositions until a fixpoint.

    ``protected`` (always including the outputs) marks vertices that must
    survive; a pair whose interior touches a protected vertex is skipped,
    so protected observables keep their own approximation coordinates.
    After every firing the graph and must-visit sets are rebuilt; protected
    indices are tracked through the reindexing.
    """
    prot = sorted(set(fd.output_indices) | set(protected or ()))
    current = fd
    while True:
        graph = build_graph(current, protected=prot)
        reduced, decisions = contract_once(graph)
        if trace is not None:
            trace.extend(decisions)
        if reduced is None:
            return current
        removed = decisions[-1].removed
        # renumber the protected set past the removed vertices
        prot = [p - sum(1 for r in removed if r < p) for p in prot]
        current = reduced


def to_dot(graph: DecompGraph) -> str:
    """DOT export; protected vertices are drawn with a double circle."""
    fd = graph.fd
    lines = ["digraph decomposition {", "  rankdir=LR;"]
    for j in range(1, graph.n_vertices + 1):
        obs = fd.observable(j)
        if obs.kind == INPUT:
            label = f"w_{j} = {fd.input_name(j)}"
            shape = "box"
        else:
            label = f"w_{j} = {render_observable(obs)}"
            shape = "ellipse"
        style = ", peripheries=2" if j in graph.protected else ""
        lines.append(f'  v{j} [label="{label}", shape={shape}{style}];')
    for i in range(1, graph.n_vertices + 1):
        for j in graph.successors(i):
            lines.append(f"  v{i} -> v{j};")
    lines.append("}")
    return "\n".join(lines)


def to_json_dict(graph: DecompGraph) -> dict:
    from . import decomp as _decomp

    data = _decomp.to_json_dict(graph.fd)
    data["adjacency"] = graph.adjacency.astype(int).tolist()
    data["protected"] = sorted(graph.protected)
    return data
