"""Vehicle-to-AP transition map and k-hop lookahead trees.

The map is a first-order Markov chain over AP ids estimated from transition
counts. Each AP owns the row of counts leaving it; :class:`ShardedContactMap`
keeps those rows apart and charges one LAN round trip per tree level.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

DEFAULT_MAX_GAP_S = 600.0
DEFAULT_PRUNE_EPSILON = 0.01
DEFAULT_MAX_CHILDREN = 8

# probabilities closer than this are treated as tied
PROB_TIE = 1e-12

TRACE_HEADER = ["time_s", "vehicle_id", "ap_id", "event"]
MAP_HEADER = ["from_ap", "to_ap", "count"]


class TraceError(ValueError):
    def __init__(self, index: int, message: str):
        super().__init__(f"record {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class ContactRecord:
    time_s: float
    vehicle: str
    ap: str
    event: str  # "arrive" | "depart"


class ContactGraph:
    """Transition counts between APs and their maximum-likelihood probabilities."""

    def __init__(self, aps: Iterable[str] = ()):
        self.aps: set[str] = set(aps)
        self._out: dict[str, dict[str, int]] = defaultdict(dict)

    def observe(self, src: str, dst: str, n: int = 1) -> "ContactGraph":
        if src == dst:
            raise ValueError(f"self-transition {src}->{dst} is not a transition")
        if n < 0:
            raise ValueError("counts only increase")
        self.aps.update((src, dst))
        row = self._out[src]
        row[dst] = row.get(dst, 0) + n
        return self

    def count(self, src: str, dst: str) -> int:
        return self._out.get(src, {}).get(dst, 0)

    @property
    def counts(self) -> dict[tuple[str, str], int]:
        return {(a, b): c for a, row in self._out.items() for b, c in row.items()}

    def successors(self, src: str) -> dict[str, float]:
        row = self._out.get(src)
        if not row:
            return {}
        total = sum(row.values())
        if total == 0:
            return {}
        return {b: c / total for b, c in row.items() if c > 0}

    def probability(self, src: str, dst: str) -> float:
        return self.successors(src).get(dst, 0.0)

    def copy(self) -> "ContactGraph":
        return merge(self, ContactGraph())

    def __eq__(self, other):
        return (isinstance(other, ContactGraph) and self.aps == other.aps
                and {k: v for k, v in self.counts.items() if v}
                == {k: v for k, v in other.counts.items() if v})

    def __repr__(self):
        return f"ContactGraph({len(self.aps)} aps, {len(self.counts)} edges)"


def merge(g1: ContactGraph, g2: ContactGraph) -> ContactGraph:
    out = ContactGraph(g1.aps | g2.aps)
    for g in (g1, g2):
        for (a, b), c in g.counts.items():
            out.observe(a, b, c)
    return out


def learn_from_trace(trace: Iterable[ContactRecord], max_gap_s: float = DEFAULT_MAX_GAP_S,
                     graph: ContactGraph | None = None) -> ContactGraph:
    """Count (depart a, arrive b) pairs per vehicle whose gap is at most ``max_gap_s``."""
    graph = ContactGraph() if graph is None else graph
    at: dict[str, str | None] = {}
    last_depart: dict[str, tuple[str, float]] = {}
    last_time = float("-inf")
    for i, rec in enumerate(trace):
        if rec.time_s < last_time:
            raise TraceError(i, "times must be non-decreasing")
        last_time = rec.time_s
        graph.aps.add(rec.ap)
        cur = at.get(rec.vehicle)
        if rec.event == "arrive":
            if cur is not None:
                raise TraceError(i, f"vehicle {rec.vehicle} arrives at {rec.ap} while at {cur}")
            at[rec.vehicle] = rec.ap
            prev = last_depart.get(rec.vehicle)
            if prev is not None and prev[0] != rec.ap and rec.time_s - prev[1] <= max_gap_s:
                graph.observe(prev[0], rec.ap)
        elif rec.event == "depart":
            if cur != rec.ap:
                raise TraceError(i, f"vehicle {rec.vehicle} departs {rec.ap} without arriving")
            at[rec.vehicle] = None
            last_depart[rec.vehicle] = (rec.ap, rec.time_s)
        else:
            raise TraceError(i, f"unknown event {rec.event!r}")
    return graph


@dataclass
class TreeNode:
    ap: str
    depth: int
    parent: int | None
    edge_prob: float
    path_prob: float
    children: list[int] = field(default_factory=list)


@dataclass
class LookaheadTree:
    root: str
    k: int
    nodes: list[TreeNode]

    @property
    def is_root_only(self) -> bool:
        return len(self.nodes) == 1

    def path(self, index: int) -> list[str]:
        """ApIds from the root's child down to node ``index``."""
        seq = []
        while index:
            node = self.nodes[index]
            seq.append(node.ap)
            index = node.parent
        return seq[::-1]

    def lookahead_aps(self) -> list[str]:
        """Distinct non-root ApIds in breadth-first order."""
        seen, out = {self.root}, []
        for node in self.nodes[1:]:
            if node.ap not in seen:
                seen.add(node.ap)
                out.append(node.ap)
        return out

    def best_path_prob(self) -> dict[str, float]:
        """Largest path probability at which each ApId occurs."""
        best: dict[str, float] = {}
        for node in self.nodes[1:]:
            best[node.ap] = max(best.get(node.ap, 0.0), node.path_prob)
        return best

    def first_depth(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for node in self.nodes[1:]:
            out.setdefault(node.ap, node.depth)
        return out


def build_lookahead_tree(graph, root: str, k: int,
                         prune_epsilon: float = DEFAULT_PRUNE_EPSILON,
                         max_children: int | None = DEFAULT_MAX_CHILDREN) -> LookaheadTree:
    """Breadth-first expansion of probable contact sequences up to ``k`` hops.

    ``graph`` is anything with ``aps`` and ``successors(ap)``.
    """
    if root not in graph.aps:
        raise KeyError(f"unknown root AP {root!r}")
    if k < 0:
        raise ValueError("k must be >= 0")
    nodes = [TreeNode(root, 0, None, 1.0, 1.0)]
    frontier = [0]
    for depth in range(1, k + 1):
        nxt = []
        for idx in frontier:
            parent = nodes[idx]
            succ = sorted(graph.successors(parent.ap).items(), key=lambda kv: (-kv[1], kv[0]))
            if max_children is not None:
                succ = succ[:max_children]
            for ap, p in succ:
                pp = parent.path_prob * p
                if pp < prune_epsilon or pp <= 0.0:
                    continue
                nodes.append(TreeNode(ap, depth, idx, p, pp))
                parent.children.append(len(nodes) - 1)
                nxt.append(len(nodes) - 1)
        frontier = nxt
        if not frontier:
            break
    return LookaheadTree(root, k, nodes)


def most_probable_sequence(tree: LookaheadTree) -> list[str]:
    """Deepest root-to-node path with the largest probability; empty if root-only.

    Ties (within ``PROB_TIE``) go to the lexicographically smallest sequence.
    """
    if tree.is_root_only:
        return []
    depth = max(n.depth for n in tree.nodes)
    best_p, best_seq = -1.0, None
    for i, node in enumerate(tree.nodes):
        if node.depth != depth:
            continue
        seq = tree.path(i)
        if node.path_prob > best_p + PROB_TIE:
            best_p, best_seq = node.path_prob, seq
        elif abs(node.path_prob - best_p) <= PROB_TIE and seq < best_seq:
            best_p, best_seq = max(best_p, node.path_prob), seq
    return best_seq


def hit_probability(tree: LookaheadTree, selected) -> float:
    """Probability the next-k contact path visits any AP in ``selected``."""
    selected = set(selected)
    if not selected:
        return 0.0
    h = [0.0] * len(tree.nodes)
    for i in range(len(tree.nodes) - 1, 0, -1):
        node = tree.nodes[i]
        if node.ap in selected:
            h[i] = 1.0
        else:
            h[i] = sum(tree.nodes[c].edge_prob * h[c] for c in node.children)
    return sum(tree.nodes[c].edge_prob * h[c] for c in tree.nodes[0].children)


class ShardedContactMap:
    """Contact map split into per-AP out-edge shards.

    Building a tree queries the shards of every frontier AP once per depth
    level; ``build_tree`` reports how many such rounds it needed.
    """

    def __init__(self, graph: ContactGraph | None = None):
        self.shards: dict[str, ContactGraph] = {}
        self.aps: set[str] = set()
        if graph is not None:
            self.aps |= graph.aps
            for (a, b), c in graph.counts.items():
                self.observe(a, b, c)

    def observe(self, src: str, dst: str, n: int = 1):
        self.aps.update((src, dst))
        self.shards.setdefault(src, ContactGraph()).observe(src, dst, n)

    def successors(self, ap: str) -> dict[str, float]:
        shard = self.shards.get(ap)
        return shard.successors(ap) if shard else {}

    def snapshot(self) -> ContactGraph:
        out = ContactGraph(self.aps)
        for shard in self.shards.values():
            out = merge(out, shard)
        return out

    def build_tree(self, root, k, prune_epsilon=DEFAULT_PRUNE_EPSILON,
                   max_children=DEFAULT_MAX_CHILDREN) -> tuple[LookaheadTree, int]:
        tree = build_lookahead_tree(self, root, k, prune_epsilon, max_children)
        depth = max(n.depth for n in tree.nodes)
        # levels 0..depth are queried, except a frontier sitting at depth k
        rounds = min(k, depth + 1)
        return tree, rounds


def read_trace(fh) -> list[ContactRecord]:
    """Parse a trace CSV. Errors carry the 1-based file line number."""
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise TraceError(1, "missing header") from None
    if [h.strip() for h in header] != TRACE_HEADER:
        raise TraceError(1, f"header must be {','.join(TRACE_HEADER)}")
    out, last = [], float("-inf")
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise TraceError(line, f"expected 4 fields, got {len(row)}")
        t, vid, ap, ev = (c.strip() for c in row)
        try:
            ts = float(t)
        except ValueError:
            raise TraceError(line, f"bad time {t!r}") from None
        if ev not in ("arrive", "depart"):
            raise TraceError(line, f"bad event {ev!r}")
        if not vid or not ap:
            raise TraceError(line, "empty vehicle or ap id")
        if ts < last:
            raise TraceError(line, "times must be non-decreasing")
        last = ts
        out.append(ContactRecord(ts, vid, ap, ev))
    return out


def write_trace(trace: Iterable[ContactRecord], fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in trace:
        w.writerow([repr(float(r.time_s)), r.vehicle, r.ap, r.event])


def write_map(graph: ContactGraph, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(MAP_HEADER)
    for (a, b), c in sorted(graph.counts.items()):
        w.writerow([a, b, c])


def read_map(fh) -> ContactGraph:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != MAP_HEADER:
        raise TraceError(1, f"header must be {','.join(MAP_HEADER)}")
    g = ContactGraph()
    for row in reader:
        if not row:
            continue
        if len(row) != 3:
            raise TraceError(reader.line_num, "expected 3 fields")
        try:
            g.observe(row[0].strip(), row[1].strip(), int(row[2]))
        except ValueError as e:
            raise TraceError(reader.line_num, str(e)) from None
    return g


def map_to_text(graph: ContactGraph) -> str:
    buf = io.StringIO()
    write_map(graph, buf)
    return buf.getvalue()
