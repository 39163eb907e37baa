"""Directed social graphs and independent-cascade (IC) spread evaluation.

Edge probabilities are plain float arrays indexed by edge id.  Monte Carlo
evaluation uses the live-edge view of IC: a world keeps edge e with
probability p_e, and the cascade from S activates exactly the nodes
reachable from S through kept edges.  Worlds are drawn in fixed-size blocks,
block b from its own counter-derived stream, so any split of the blocks
across workers reproduces the serial result.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _kernels
from .errors import ContractError, GuardError, ParseError

log = logging.getLogger(__name__)

WORLD_BLOCK = 1024
MAX_EXACT_EDGES = 20


@dataclass(frozen=True)
class SocialGraph:
    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    indptr: np.ndarray = field(repr=False)
    out_dst: np.ndarray = field(repr=False)
    out_eid: np.ndarray = field(repr=False)
    dropped_self_loops: int = 0
    dropped_duplicates: int = 0

    @classmethod
    def from_edges(cls, n_nodes: int | None, edges: Iterable[tuple[int, int]]) -> "SocialGraph":
        """Build a graph; self-loops and repeated edges are dropped, edge ids
        follow first appearance."""
        seen: set[tuple[int, int]] = set()
        kept: list[tuple[int, int]] = []
        loops = dups = 0
        for u, v in edges:
            u, v = int(u), int(v)
            if u < 0 or v < 0:
                raise ContractError(f"negative node id in edge ({u}, {v})")
            if u == v:
                loops += 1
                continue
            if (u, v) in seen:
                dups += 1
                continue
            seen.add((u, v))
            kept.append((u, v))
        top = 1 + max((max(e) for e in kept), default=-1)
        if n_nodes is None:
            n_nodes = top
        elif top > n_nodes:
            raise ContractError(f"edge endpoint {top - 1} outside {n_nodes} nodes")
        src = np.array([e[0] for e in kept], dtype=np.int64)
        dst = np.array([e[1] for e in kept], dtype=np.int64)
        order = np.argsort(src, kind="stable")
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        indptr = np.cumsum(indptr)
        return cls(int(n_nodes), src, dst, indptr, dst[order], order.astype(np.int64), loops, dups)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist()))

    def out_degree(self, v: int | None = None):
        deg = np.diff(self.indptr)
        return deg if v is None else int(deg[v])

    def out_edges(self, v: int) -> np.ndarray:
        """Edge ids leaving node v."""
        return self.out_eid[self.indptr[v] : self.indptr[v + 1]]

    def edge_id(self, u: int, v: int) -> int | None:
        for e in self.out_edges(u):
            if self.dst[e] == v:
                return int(e)
        return None

    def check_nodes(self, nodes: Iterable[int]) -> np.ndarray:
        arr = np.asarray(sorted({int(v) for v in nodes}), dtype=np.int64)
        if arr.size and (arr[0] < 0 or arr[-1] >= self.n_nodes):
            raise ContractError(f"unknown node in {arr.tolist()} (graph has {self.n_nodes} nodes)")
        return arr


def load_graph(source: str | Path | Iterable[str], n_nodes: int | None = None) -> SocialGraph:
    """Parse "src<TAB>dst" rows ('#' comments and blank lines ignored)."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = list(source)
    edges = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'src<TAB>dst', got {raw!r}", lineno)
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ParseError(f"non-integer node id in {raw!r}", lineno) from None
    graph = SocialGraph.from_edges(n_nodes, edges)
    if graph.dropped_self_loops:
        log.warning("dropped %d self-loop rows", graph.dropped_self_loops)
    return graph


def random_graph(n_nodes: int, mean_out_degree: float, rng: np.random.Generator) -> SocialGraph:
    """Directed Erdos-Renyi G(n, p) with p = mean_out_degree / (n - 1)."""
    p = min(1.0, mean_out_degree / max(n_nodes - 1, 1))
    mask = rng.random((n_nodes, n_nodes)) < p
    np.fill_diagonal(mask, False)
    u, v = np.nonzero(mask)
    return SocialGraph.from_edges(n_nodes, zip(u.tolist(), v.tolist()))


def check_probabilities(graph: SocialGraph, probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (graph.n_edges,):
        raise ContractError(f"need one probability per edge ({graph.n_edges}), got shape {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise ContractError("edge probabilities must be finite")
    return np.clip(probs, 0.0, 1.0)


@dataclass
class CascadeOutcome:
    activated: set[int]
    edge_trials: list[tuple[int, bool]]


def simulate_cascade(graph: SocialGraph, probs, seeds: Iterable[int], rng: np.random.Generator) -> CascadeOutcome:
    """One IC cascade, breadth first from the seeds, every edge tried at most once."""
    probs = check_probabilities(graph, probs)
    seeds = graph.check_nodes(seeds).tolist()
    activated = set(seeds)
    trials: list[tuple[int, bool]] = []
    frontier = deque(seeds)
    while frontier:
        u = frontier.popleft()
        for e in graph.out_edges(u).tolist():
            fired = bool(rng.random() < probs[e])
            trials.append((e, fired))
            v = int(graph.dst[e])
            if fired and v not in activated:
                activated.add(v)
                frontier.append(v)
    return CascadeOutcome(activated, trials)


def _root_key(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63 - 1))
    return int(rng)


def world_blocks(probs: np.ndarray, n_worlds: int, root: int) -> Iterator[np.ndarray]:
    """Live-edge masks (block, n_edges); block b is drawn from stream [root, b]."""
    n_blocks = -(-n_worlds // WORLD_BLOCK)
    for b in range(n_blocks):
        size = min(WORLD_BLOCK, n_worlds - b * WORLD_BLOCK)
        gen = np.random.default_rng([root, b])
        yield gen.random((size, probs.size)) < probs


def sample_worlds(graph: SocialGraph, probs, n_worlds: int, rng) -> np.ndarray:
    probs = check_probabilities(graph, probs)
    root = _root_key(rng)
    blocks = list(world_blocks(probs, n_worlds, root))
    return np.concatenate(blocks) if blocks else np.zeros((0, graph.n_edges), dtype=bool)


def spread_in_worlds(graph: SocialGraph, live: np.ndarray, seeds: Iterable[int]) -> np.ndarray:
    """Activated-node count of the cascade from ``seeds`` in each world."""
    seeds = graph.check_nodes(seeds)
    return _kernels.spread_counts(graph.indptr, graph.out_dst, graph.out_eid, live, seeds)


def mc_spread(graph: SocialGraph, probs, seeds: Iterable[int], n_sims: int, rng) -> tuple[float, float]:
    """Monte Carlo estimate of the expected spread and its standard error."""
    if n_sims < 1:
        raise ContractError("n_sims must be at least 1")
    probs = check_probabilities(graph, probs)
    seeds = graph.check_nodes(seeds)
    root = _root_key(rng)
    total = 0.0
    total_sq = 0.0
    for live in world_blocks(probs, n_sims, root):
        counts = _kernels.spread_counts(graph.indptr, graph.out_dst, graph.out_eid, live, seeds).astype(np.float64)
        total += counts.sum()
        total_sq += (counts**2).sum()
    mean = total / n_sims
    if n_sims == 1:
        return mean, 0.0
    var = max(total_sq - n_sims * mean**2, 0.0) / (n_sims - 1)
    return mean, float(np.sqrt(var / n_sims))


class ExactSpread:
    """Expected spread by enumerating all 2^|E| live-edge realizations.

    Reachability sets for every realization are computed once as bitmasks
    over the nodes touched by an edge, after which f(S) for any seed set is a
    weighted popcount.
    """

    def __init__(self, graph: SocialGraph, probs):
        if graph.n_edges > MAX_EXACT_EDGES:
            raise GuardError(f"exact enumeration limited to {MAX_EXACT_EDGES} edges, graph has {graph.n_edges}")
        self.graph = graph
        probs = check_probabilities(graph, probs)
        touched = np.unique(np.concatenate([graph.src, graph.dst]))
        self._local = {int(v): i for i, v in enumerate(touched)}
        n_local = touched.size
        E = graph.n_edges
        idx = np.arange(1 << E, dtype=np.int64)
        weights = np.ones(idx.size)
        live = []
        for e in range(E):
            bit = ((idx >> e) & 1).astype(bool)
            live.append(bit)
            weights *= np.where(bit, probs[e], 1.0 - probs[e])
        self.weights = weights
        reach = np.empty((n_local, idx.size), dtype=np.uint64)
        for i in range(n_local):
            reach[i] = np.uint64(1) << np.uint64(i)
        changed = n_local > 0
        while changed:
            changed = False
            for e in range(E):
                u = self._local[int(graph.src[e])]
                v = self._local[int(graph.dst[e])]
                new = reach[u] | np.where(live[e], reach[v], np.uint64(0))
                if not np.array_equal(new, reach[u]):
                    reach[u] = new
                    changed = True
        self._reach = reach

    def __call__(self, seeds: Iterable[int]) -> float:
        seeds = self.graph.check_nodes(seeds).tolist()
        local = [self._local[v] for v in seeds if v in self._local]
        isolated = len(seeds) - len(local)
        if not local:
            return float(isolated)
        mask = self._reach[local[0]].copy()
        for i in local[1:]:
            mask |= self._reach[i]
        return float(isolated + np.dot(self.weights, np.bitwise_count(mask)))


def exact_spread(graph: SocialGraph, probs, seeds: Iterable[int]) -> float:
    return ExactSpread(graph, probs)(seeds)
