"""Two-slice DAG over ``t0`` / ``t1`` copies of every feature."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from ..errors import DataError

T0 = "t0"
T1 = "t1"


@dataclass(frozen=True, order=True)
class SliceNode:
    variable: str
    slice: str

    def __post_init__(self):
        if self.slice not in (T0, T1):
            raise ValueError(f"slice must be 't0' or 't1', got {self.slice!r}")

    @property
    def label(self) -> str:
        return f"{self.variable}_{self.slice}"

    @classmethod
    def parse(cls, label: str) -> "SliceNode":
        var, sep, sl = label.rpartition("_")
        if not sep or sl not in (T0, T1):
            raise ValueError(f"bad node label {label!r}")
        return cls(var, sl)

    def __str__(self):
        return self.label


def has_path(children: dict, src, dst) -> bool:
    """Iterative DFS reachability over an adjacency mapping."""
    if src == dst:
        return True
    stack, seen = [src], {src}
    while stack:
        u = stack.pop()
        for w in children.get(u, ()):
            if w == dst:
                return True
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return False


@dataclass(frozen=True)
class DbnStructure:
    """Nodes are both slice copies of ``variables``; arcs always end in ``t1``.

    ``max_parents`` is only checked when given.
    """

    variables: tuple[str, ...]
    arcs: frozenset[tuple[SliceNode, SliceNode]]
    max_parents: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "arcs", frozenset(self.arcs))
        self.validate()

    def validate(self) -> None:
        known = set(self.variables)
        if len(known) != len(self.variables):
            raise DataError("duplicate variables in structure")
        for u, v in self.arcs:
            if u.variable not in known or v.variable not in known:
                raise DataError(f"arc {u}->{v} references an unknown variable")
            if v.slice != T1:
                raise DataError(f"arc {u}->{v} targets a t0 node")
            if u == v:
                raise DataError(f"self-arc on {u}")
        if self.max_parents is not None:
            for v, pa in self.parent_map().items():
                if len(pa) > self.max_parents:
                    raise DataError(f"{v} has {len(pa)} parents > max {self.max_parents}")
        if not self.is_acyclic():
            raise DataError("structure contains a directed cycle")

    @property
    def nodes(self) -> list[SliceNode]:
        return [SliceNode(v, s) for s in (T0, T1) for v in self.variables]

    def parents(self, node: SliceNode) -> list[SliceNode]:
        return sorted(u for u, v in self.arcs if v == node)

    def children(self, node: SliceNode) -> list[SliceNode]:
        return sorted(v for u, v in self.arcs if u == node)

    def parent_map(self) -> dict[SliceNode, list[SliceNode]]:
        out: dict[SliceNode, list[SliceNode]] = {SliceNode(v, T1): [] for v in self.variables}
        for u, v in sorted(self.arcs):
            out[v].append(u)
        return out

    def intra_slice_children(self) -> dict[SliceNode, list[SliceNode]]:
        out: dict[SliceNode, list[SliceNode]] = {}
        for u, v in self.arcs:
            if u.slice == T1:
                out.setdefault(u, []).append(v)
        return out

    def is_acyclic(self) -> bool:
        try:
            self.topological_order()
        except DataError:
            return False
        return True

    def topological_order(self) -> list[SliceNode]:
        """``t1`` nodes ordered so intra-slice parents come first (Kahn, lexicographic ties)."""
        t1 = [SliceNode(v, T1) for v in self.variables]
        indeg = {n: 0 for n in t1}
        kids = self.intra_slice_children()
        for u, v in self.arcs:
            if u.slice == T1:
                indeg[v] += 1
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order = []
        while ready:
            u = ready.pop(0)
            order.append(u)
            for w in kids.get(u, ()):
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(w)
                    ready.sort()
        if len(order) != len(t1):
            raise DataError("structure contains a directed cycle")
        return order

    def with_arcs(self, arcs: Iterable[tuple[SliceNode, SliceNode]]) -> "DbnStructure":
        return DbnStructure(self.variables, frozenset(arcs), self.max_parents)

    def subgraph(self, nodes: Iterable[SliceNode]) -> "DbnStructure":
        """Induced arcs among ``nodes``; variables limited to those touched."""
        keep = set(nodes)
        arcs = frozenset((u, v) for u, v in self.arcs if u in keep and v in keep)
        variables = tuple(v for v in self.variables if any(n.variable == v for n in keep))
        return NeighborhoodGraph(variables, arcs, None, frozenset(keep))

    def arc_labels(self) -> list[list[str]]:
        return [[u.label, v.label] for u, v in sorted(self.arcs)]

    @classmethod
    def from_labels(cls, variables, arcs, max_parents=None) -> "DbnStructure":
        return cls(
            tuple(variables),
            frozenset((SliceNode.parse(a), SliceNode.parse(b)) for a, b in arcs),
            max_parents,
        )


@dataclass(frozen=True)
class NeighborhoodGraph(DbnStructure):
    """A structure restricted to an explicit node set (used for local views)."""

    node_set: frozenset = frozenset()

    @property
    def nodes(self) -> list[SliceNode]:
        return sorted(self.node_set)

    def topological_order(self) -> list[SliceNode]:
        # only acyclicity matters for a view; the full graph already guarantees it
        return sorted(n for n in self.node_set if n.slice == T1)

    def is_acyclic(self) -> bool:
        kids: dict = {}
        for u, v in self.arcs:
            kids.setdefault(u, []).append(v)
        return not any(has_path(kids, v, u) for u, v in self.arcs)


_DOT_ID = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _dot_id(label: str) -> str:
    if _DOT_ID.match(label):
        return label
    return '"' + label.replace('"', '\\"') + '"'


def export_dot(structure: DbnStructure, name: str = "dbn") -> str:
    """Graphviz digraph; nodes sorted by label, ``t0`` nodes drawn as boxes."""
    lines = [f"digraph {name} {{", "  rankdir=LR;"]
    for node in sorted(structure.nodes, key=lambda n: n.label):
        shape = "box" if node.slice == T0 else "ellipse"
        lines.append(f"  {_dot_id(node.label)} [shape={shape}];")
    for u, v in sorted(structure.arcs, key=lambda a: (a[0].label, a[1].label)):
        lines.append(f"  {_dot_id(u.label)} -> {_dot_id(v.label)};")
    lines.append("}")
    return "\n".join(lines) + "\n"
