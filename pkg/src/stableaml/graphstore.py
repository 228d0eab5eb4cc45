"""Aggregated weighted directed transaction graph and neighborhood queries."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .errors import FormatError, NodeNotFound, Undefined
from .ingest import EventLog

EDGES_HEADER = ["from", "to", "volume_base_units", "count"]


@dataclass(frozen=True)
class Edge:
    volume: int
    count: int
    event_refs: tuple


@dataclass(frozen=True)
class HopQueryConfig:
    fanout_cap: int | None = 200
    exclude_services: bool = True
    direction: str = "both"

    def __post_init__(self):
        if self.fanout_cap is not None and self.fanout_cap < 1:
            raise ValueError("fanout_cap must be >= 1 (or None to disable)")
        if self.direction not in ("in", "out", "both"):
            raise ValueError(f"direction must be in/out/both, got {self.direction!r}")


class TransactionGraph:
    """Wallets as nodes; one edge per ordered pair with at least one transfer.

    ``out_adj[u]`` and ``in_adj[u]`` are sorted neighbor tuples. Self-loops
    are stored as edges but never reported as neighbors.
    """

    def __init__(self, nodes, edges):
        self.nodes = tuple(sorted(nodes))
        self._node_set = frozenset(self.nodes)
        self.edges: dict[tuple[str, str], Edge] = dict(sorted(edges.items()))
        out_adj: dict[str, set] = {n: set() for n in self.nodes}
        in_adj: dict[str, set] = {n: set() for n in self.nodes}
        for (a, b) in self.edges:
            if a != b:
                out_adj[a].add(b)
                in_adj[b].add(a)
        self.out_adj = {n: tuple(sorted(s)) for n, s in out_adj.items()}
        self.in_adj = {n: tuple(sorted(s)) for n, s in in_adj.items()}
        self.both_adj = {n: tuple(sorted(out_adj[n] | in_adj[n])) for n in self.nodes}

    def __contains__(self, node):
        return node in self._node_set

    def __len__(self):
        return len(self.nodes)

    def volume(self, a, b) -> int:
        e = self.edges.get((a, b))
        return e.volume if e else 0

    def neighbors(self, w, direction="both") -> tuple:
        if w not in self._node_set:
            raise NodeNotFound(f"unknown node {w}")
        if direction == "out":
            return self.out_adj[w]
        if direction == "in":
            return self.in_adj[w]
        return self.both_adj[w]

    def neighbor_volume(self, w, u, direction="both") -> int:
        if direction == "out":
            return self.volume(w, u)
        if direction == "in":
            return self.volume(u, w)
        return self.volume(w, u) + self.volume(u, w)

    def without_edges(self, keep) -> "TransactionGraph":
        """Copy retaining only edges for which ``keep((a, b))`` is true."""
        return TransactionGraph(self.nodes, {k: v for k, v in self.edges.items() if keep(k)})

    def dumps(self) -> str:
        buf = io.StringIO()
        write_edges(self, buf)
        return buf.getvalue()


def build_graph(log: EventLog) -> TransactionGraph:
    acc: dict[tuple[str, str], list] = {}
    for i, e in enumerate(log.events):
        slot = acc.setdefault((e.sender, e.recipient), [0, []])
        slot[0] += e.amount
        slot[1].append(i)
    edges = {k: Edge(volume=v, count=len(refs), event_refs=tuple(refs)) for k, (v, refs) in acc.items()}
    return TransactionGraph(log.wallets(), edges)


def write_edges(g: TransactionGraph, sink) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(EDGES_HEADER)
    for (a, b), e in g.edges.items():
        w.writerow([a, b, e.volume, e.count])


def read_edges(source) -> TransactionGraph:
    """Rebuild a graph from an ``edges.csv`` dump (event references are not kept)."""
    text = source.read() if hasattr(source, "read") else open(source, encoding="utf-8").read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != EDGES_HEADER:
        raise FormatError("edges file header mismatch")
    edges, nodes = {}, set()
    for r in rows[1:]:
        if not r:
            continue
        a, b = r[0], r[1]
        edges[(a, b)] = Edge(volume=int(r[2]), count=int(r[3]), event_refs=())
        nodes.update((a, b))
    return TransactionGraph(nodes, edges)


def _ranked(g, w, candidates, direction, cap):
    """Keep the ``cap`` candidates with the largest edge volume to/from ``w``."""
    if cap is None or len(candidates) <= cap:
        return list(candidates)
    order = sorted(candidates, key=lambda u: (-g.neighbor_volume(w, u, direction), u))
    return sorted(order[:cap])


def counterparties(g: TransactionGraph, w, cfg: HopQueryConfig = HopQueryConfig(), registry=None) -> tuple:
    """Distinct direct neighbors of ``w`` after service exclusion and fan-out capping."""
    raw = g.neighbors(w, cfg.direction)
    if cfg.exclude_services and registry is not None:
        raw = [u for u in raw if not registry.is_service(u)]
    return tuple(_ranked(g, w, raw, cfg.direction, cfg.fanout_cap))


def k_hop_set(g: TransactionGraph, w, k: int, cfg: HopQueryConfig = HopQueryConfig(), registry=None) -> tuple:
    """Wallets at exact undirected shortest-path distance ``k`` from ``w``.

    Distance ignores edge direction. When ``cfg.exclude_services`` is set,
    service-labeled wallets may be reached but are never expanded, so no path
    passes *through* one. ``w`` itself is always expanded. Each expansion is
    limited to ``cfg.fanout_cap`` highest-volume neighbors.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if w not in g:
        raise NodeNotFound(f"unknown node {w}")
    skip = cfg.exclude_services and registry is not None
    seen = {w}
    frontier = [w]
    for _ in range(k):
        nxt = set()
        for u in frontier:
            if u != w and skip and registry.is_service(u):
                continue
            for v in _ranked(g, u, g.both_adj[u], "both", cfg.fanout_cap):
                if v not in seen:
                    nxt.add(v)
        seen |= nxt
        frontier = sorted(nxt)
        if not frontier:
            break
    return tuple(frontier)


def density(g: TransactionGraph) -> float:
    n = len(g.nodes)
    if n < 2:
        raise Undefined("density needs at least two nodes")
    m = sum(1 for (a, b) in g.edges if a != b)
    return m / (n * (n - 1))
