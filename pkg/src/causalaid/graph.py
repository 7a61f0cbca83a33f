"""Causal DAGs, d-separation and backdoor adjustment sets.

DAG files are plain-text edge lists::

    # comments start with a hash
    treatment: Cash
    outcome: GAM
    MarketPrices -> Cash
    Cash -> GAM
    Population          # a bare name declares a node without edges

An optional ``nodes: A, B, C`` directive pins the node order; otherwise
nodes are ordered by first appearance.
"""

from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

__all__ = [
    "AdjustmentKind",
    "AdjustmentSet",
    "CausalDag",
    "CycleError",
    "DagError",
    "backdoor_satisfied",
    "d_separated",
    "minimal_backdoor_sets",
    "parent_adjustment_set",
    "load_dag",
    "parse_dag",
    "serialize_dag",
]

_RESERVED = ("->", ":", ",", "#")


class DagError(ValueError):
    """Raised for malformed DAG sources or invalid graph queries."""


class CycleError(DagError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class AdjustmentKind(enum.Enum):
    PARENT = "Parent"
    MINIMAL_BACKDOOR = "MinimalBackdoor"


@dataclass(frozen=True)
class CausalDag:
    """Immutable causal DAG with designated treatment and outcome nodes."""

    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    treatment: str
    outcome: str
    _parents: dict = field(init=False, repr=False, compare=False)
    _children: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple((str(a), str(b)) for a, b in self.edges)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

        if len(set(nodes)) != len(nodes):
            raise DagError("duplicate node names")
        for name in nodes:
            _check_name(name)
        known = set(nodes)
        parents = {v: [] for v in nodes}
        children = {v: [] for v in nodes}
        seen = set()
        for a, b in edges:
            if a not in known or b not in known:
                raise DagError(f"edge {a} -> {b} references an unknown node")
            if a == b:
                raise DagError(f"self-edge {a} -> {b}")
            if (a, b) in seen:
                raise DagError(f"duplicate edge {a} -> {b}")
            seen.add((a, b))
            parents[b].append(a)
            children[a].append(b)
        for role, name in (("treatment", self.treatment), ("outcome", self.outcome)):
            if name not in known:
                raise DagError(f"unknown {role} node {name!r}")
        if self.treatment == self.outcome:
            raise DagError("treatment and outcome must differ")

        order = {v: i for i, v in enumerate(nodes)}
        object.__setattr__(
            self, "edges", tuple(sorted(edges, key=lambda e: (order[e[0]], order[e[1]]))))
        object.__setattr__(
            self, "_parents",
            {v: tuple(sorted(ps, key=order.__getitem__)) for v, ps in parents.items()})
        object.__setattr__(
            self, "_children",
            {v: tuple(sorted(cs, key=order.__getitem__)) for v, cs in children.items()})
        cycle = self._find_cycle()
        if cycle:
            raise CycleError(cycle)

    def _find_cycle(self):
        white, grey, black = 0, 1, 2
        color = dict.fromkeys(self.nodes, white)
        stack_path = []

        def visit(v):
            color[v] = grey
            stack_path.append(v)
            for c in self._children[v]:
                if color[c] == grey:
                    return stack_path[stack_path.index(c):] + [c]
                if color[c] == white:
                    found = visit(c)
                    if found:
                        return found
            stack_path.pop()
            color[v] = black
            return None

        for v in self.nodes:
            if color[v] == white:
                found = visit(v)
                if found:
                    return found
        return None

    def parents(self, node: str) -> tuple[str, ...]:
        self._require(node)
        return self._parents[node]

    def children(self, node: str) -> tuple[str, ...]:
        self._require(node)
        return self._children[node]

    def descendants(self, node: str, include_self: bool = False) -> frozenset[str]:
        self._require(node)
        out = {node}
        queue = deque([node])
        while queue:
            for c in self._children[queue.popleft()]:
                if c not in out:
                    out.add(c)
                    queue.append(c)
        if not include_self:
            out.discard(node)
        return frozenset(out)

    def ancestors(self, nodes: Iterable[str], include_self: bool = True) -> frozenset[str]:
        start = set(nodes)
        for v in start:
            self._require(v)
        out = set(start)
        queue = deque(start)
        while queue:
            for p in self._parents[queue.popleft()]:
                if p not in out:
                    out.add(p)
                    queue.append(p)
        if not include_self:
            out -= start
        return frozenset(out)

    def topological_order(self) -> tuple[str, ...]:
        indeg = {v: len(self._parents[v]) for v in self.nodes}
        ready = [v for v in self.nodes if indeg[v] == 0]
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for c in self._children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        return tuple(order)

    def without_edges_out_of(self, node: str) -> "CausalDag":
        self._require(node)
        return CausalDag(self.nodes, tuple(e for e in self.edges if e[0] != node),
                         self.treatment, self.outcome)

    def with_roles(self, treatment: str, outcome: str) -> "CausalDag":
        return CausalDag(self.nodes, self.edges, treatment, outcome)

    def _require(self, node):
        if node not in self._parents:
            raise DagError(f"unknown node {node!r}")


@dataclass(frozen=True)
class AdjustmentSet:
    members: frozenset[str]
    kind: AdjustmentKind

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(self.members))

    def sorted(self) -> list[str]:
        return sorted(self.members)

    def __iter__(self):
        return iter(self.sorted())

    def __len__(self):
        return len(self.members)


def _check_name(name):
    if not isinstance(name, str) or not name.strip() or name != name.strip():
        raise DagError(f"invalid node name {name!r}")
    for token in _RESERVED:
        if token in name:
            raise DagError(f"node name {name!r} contains reserved token {token!r}")


def parse_dag(text: str, treatment: str | None = None, outcome: str | None = None) -> CausalDag:
    """Parse an edge-list DAG source.

    ``treatment``/``outcome`` override the ``treatment:``/``outcome:`` header
    directives. Errors name the offending line.
    """
    nodes: list[str] = []
    known: set[str] = set()
    edges: list[tuple[str, str]] = []
    edge_lines: dict[tuple[str, str], int] = {}
    header: dict[str, str] = {}
    pinned: list[str] | None = None

    def add_node(name, lineno):
        try:
            _check_name(name)
        except DagError as exc:
            raise DagError(f"line {lineno}: {exc}") from None
        if name not in known:
            known.add(name)
            nodes.append(name)

    for lineno, raw in enumerate(text.replace("\r\n", "\n").split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" in line:
            parts = [p.strip() for p in line.split("->")]
            if len(parts) != 2 or not all(parts):
                raise DagError(f"line {lineno}: malformed edge {raw.strip()!r}")
            a, b = parts
            add_node(a, lineno)
            add_node(b, lineno)
            if (a, b) in edge_lines:
                raise DagError(
                    f"line {lineno}: duplicate edge {a} -> {b} "
                    f"(first seen on line {edge_lines[(a, b)]})")
            edge_lines[(a, b)] = lineno
            edges.append((a, b))
        elif ":" in line:
            key, _, value = (s.strip() for s in line.partition(":"))
            key = key.lower()
            if key in ("treatment", "outcome"):
                if not value:
                    raise DagError(f"line {lineno}: empty {key} directive")
                header[key] = value
            elif key == "nodes":
                pinned = [v.strip() for v in value.split(",") if v.strip()]
                for v in pinned:
                    add_node(v, lineno)
            else:
                raise DagError(f"line {lineno}: unknown directive {key!r}")
        else:
            add_node(line, lineno)

    if pinned is not None:
        missing = [v for v in nodes if v not in pinned]
        if missing:
            raise DagError(f"nodes directive omits {', '.join(missing)}")
        nodes = pinned

    treatment = treatment if treatment is not None else header.get("treatment")
    outcome = outcome if outcome is not None else header.get("outcome")
    if treatment is None or outcome is None:
        raise DagError("treatment and outcome must be given (argument or header directive)")
    if treatment not in known:
        raise DagError(f"unknown treatment node {treatment!r}")
    if outcome not in known:
        raise DagError(f"unknown outcome node {outcome!r}")
    try:
        return CausalDag(tuple(nodes), tuple(edges), treatment, outcome)
    except CycleError as exc:
        lines = sorted(edge_lines[e] for e in zip(exc.cycle, exc.cycle[1:]))
        raise DagError(f"{exc} (edges on lines {', '.join(map(str, lines))})") from None


def serialize_dag(dag: CausalDag) -> str:
    """Render ``dag`` in the edge-list format; ``parse_dag`` inverts it."""
    lines = [
        f"treatment: {dag.treatment}",
        f"outcome: {dag.outcome}",
        "nodes: " + ", ".join(dag.nodes),
    ]
    for a, b in dag.edges:
        lines.append(f"{a} -> {b}")
    return "\n".join(lines) + "\n"


def d_separated(dag: CausalDag, x: str, y: str, z: Iterable[str]) -> bool:
    """True iff ``x`` and ``y`` are d-separated given ``z``.

    Reachability ("Bayes ball") search over (node, direction) states: a
    trail may pass a collider only if the collider has a descendant in
    ``z``, and may pass any other node only if that node is not in ``z``.
    """
    z = frozenset(z)
    for v in (x, y, *z):
        dag._require(v)
    if x == y:
        raise DagError("x and y must differ")
    if x in z or y in z:
        raise DagError("x and y must not be in the conditioning set")

    # nodes with a descendant (inclusive) in z
    opens_collider = dag.ancestors(z) if z else frozenset()

    # "up": arrived from a child (moving against edge direction)
    # "down": arrived from a parent (moving along edge direction)
    visited = set()
    queue = deque([(x, "up")])
    while queue:
        node, direction = queue.popleft()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))
        if node == y:
            return False
        if direction == "up":
            if node in z:
                continue
            for p in dag._parents[node]:
                queue.append((p, "up"))
            for c in dag._children[node]:
                queue.append((c, "down"))
        else:
            if node not in z:
                for c in dag._children[node]:
                    queue.append((c, "down"))
            if node in opens_collider:
                for p in dag._parents[node]:
                    queue.append((p, "up"))
    return True


def backdoor_satisfied(dag: CausalDag, z: Iterable[str]) -> bool:
    """Backdoor criterion for the dag's treatment/outcome pair."""
    z = frozenset(z)
    for v in z:
        dag._require(v)
    t, y = dag.treatment, dag.outcome
    if t in z or y in z:
        raise DagError("adjustment set must exclude treatment and outcome")
    if z & dag.descendants(t):
        return False
    return d_separated(dag.without_edges_out_of(t), t, y, z)


def parent_adjustment_set(dag: CausalDag) -> AdjustmentSet:
    """The treatment's parents; undefined when the outcome is one of them."""
    if dag.outcome in dag.parents(dag.treatment):
        raise DagError(f"outcome {dag.outcome} is a parent of treatment {dag.treatment}")
    return AdjustmentSet(frozenset(dag.parents(dag.treatment)), AdjustmentKind.PARENT)


def minimal_backdoor_sets(dag: CausalDag, max_size: int) -> list[AdjustmentSet]:
    """All inclusion-minimal backdoor sets with at most ``max_size`` members.

    Ordered by size, then lexicographically by sorted member names.
    """
    if max_size < 0:
        raise ValueError("max_size must be >= 0")
    t, y = dag.treatment, dag.outcome
    excluded = {t, y} | dag.descendants(t)
    candidates = sorted(v for v in dag.nodes if v not in excluded)
    found: list[frozenset[str]] = []
    for size in range(min(max_size, len(candidates)) + 1):
        for combo in itertools.combinations(candidates, size):
            members = frozenset(combo)
            if any(prev <= members for prev in found):
                continue
            if backdoor_satisfied(dag, members):
                found.append(members)
    return [AdjustmentSet(m, AdjustmentKind.MINIMAL_BACKDOOR) for m in found]


def load_dag(path, treatment: str | None = None, outcome: str | None = None) -> CausalDag:
    with open(path, encoding="utf-8") as fh:
        return parse_dag(fh.read(), treatment, outcome)
