"""Budgeted seed selection: lazy greedy (CELF) and a brute-force reference."""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .errors import ContractError, GuardError
from .im_graph import ExactSpread, SocialGraph, check_probabilities, sample_worlds

DEFAULT_ORACLE_SIMS = 200
MAX_EXHAUSTIVE_SUBSETS = 100_000


def celf(n: int, k: int, gain: Callable[[int], float], commit: Callable[[int], None]) -> list[int]:
    """Lazy greedy maximization of a monotone submodular set function.

    ``gain(v)`` returns the marginal gain of v given everything committed so
    far.  Heap entries are (-gain, node, round evaluated); stale entries are
    re-evaluated when they reach the top, so with exact ties the lowest node
    id wins.
    """
    heap = [(-gain(v), v, 0) for v in range(n)]
    heapq.heapify(heap)
    chosen: list[int] = []
    while len(chosen) < k:
        neg, v, stamp = heapq.heappop(heap)
        if stamp == len(chosen):
            chosen.append(v)
            commit(v)
        else:
            heapq.heappush(heap, (-gain(v), v, len(chosen)))
    return chosen


def greedy_seeds(
    graph: SocialGraph,
    probs,
    K: int,
    n_sims: int = DEFAULT_ORACLE_SIMS,
    rng=0,
    *,
    exact: bool = False,
) -> list[int]:
    """K seeds chosen greedily by marginal spread gain, in selection order.

    Monte Carlo mode samples ``n_sims`` live-edge worlds once and scores every
    candidate on those same worlds (common random numbers), which makes the
    sampled objective itself monotone submodular and the lazy evaluation
    exact for it.  ``exact=True`` uses full enumeration instead (small graphs).
    """
    if not 1 <= K <= graph.n_nodes:
        raise ContractError(f"budget K={K} must lie in [1, {graph.n_nodes}]")
    probs = check_probabilities(graph, probs)
    if exact:
        f = ExactSpread(graph, probs)
        chosen: list[int] = []
        base = [0.0]

        def gain(v):
            return round(f(chosen + [v]) - base[0], 12)

        def commit(v):
            chosen.append(v)
            base[0] = f(chosen)

        return celf(graph.n_nodes, K, gain, commit)

    if n_sims < 1:
        raise ContractError("n_sims must be at least 1")
    live = sample_worlds(graph, probs, n_sims, rng)
    covered = np.zeros((n_sims, graph.n_nodes), dtype=bool)
    args = (graph.indptr, graph.out_dst, graph.out_eid, live, covered)
    return celf(
        graph.n_nodes,
        K,
        lambda v: _kernels.marginal_gain(*args, v),
        lambda v: _kernels.cover_from(*args, v),
    )


def exhaustive_seeds(graph: SocialGraph, probs, K: int) -> tuple[list[int], float]:
    """Optimal K-subset by exact spread; lexicographically smallest among ties."""
    if not 1 <= K <= graph.n_nodes:
        raise ContractError(f"budget K={K} must lie in [1, {graph.n_nodes}]")
    n_subsets = math.comb(graph.n_nodes, K)
    if n_subsets > MAX_EXHAUSTIVE_SUBSETS:
        raise GuardError(f"{n_subsets} subsets exceed the limit of {MAX_EXHAUSTIVE_SUBSETS}")
    f = ExactSpread(graph, probs)
    best, best_val = None, -np.inf
    for subset in itertools.combinations(range(graph.n_nodes), K):
        val = f(subset)
        if val > best_val + 1e-12:
            best, best_val = list(subset), val
    return best, best_val


@dataclass
class OracleCheck:
    """Greedy versus exhaustive optimum on one enumerable instance."""

    n_nodes: int
    n_edges: int
    K: int
    optimum: float
    greedy_exact: float
    greedy_mc: float

    @property
    def ratio_exact(self) -> float:
        return self.greedy_exact / self.optimum

    @property
    def ratio_mc(self) -> float:
        return self.greedy_mc / self.optimum


def random_enumerable_instance(rng: np.random.Generator, n_nodes: int, n_edges: int) -> tuple[SocialGraph, np.ndarray]:
    """Random directed graph with exactly ``n_edges`` distinct edges and U(0.05, 0.95) probabilities."""
    pairs = [(u, v) for u in range(n_nodes) for v in range(n_nodes) if u != v]
    if n_edges > len(pairs):
        raise ContractError(f"{n_nodes} nodes admit at most {len(pairs)} edges")
    pick = rng.choice(len(pairs), size=n_edges, replace=False)
    graph = SocialGraph.from_edges(n_nodes, [pairs[i] for i in pick])
    return graph, rng.uniform(0.05, 0.95, size=n_edges)


def oracle_check(
    n_instances: int = 20,
    max_nodes: int = 12,
    max_edges: int = 16,
    max_budget: int = 3,
    n_sims: int = 500,
    seed: int = 0,
) -> list[OracleCheck]:
    """Score greedy (exact and Monte Carlo objective) against brute force on random small instances."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_instances):
        n = int(rng.integers(max(max_budget + 1, 4), max_nodes + 1))
        m = int(rng.integers(n, min(max_edges, n * (n - 1)) + 1))
        K = int(rng.integers(1, max_budget + 1))
        graph, probs = random_enumerable_instance(rng, n, m)
        f = ExactSpread(graph, probs)
        _, best = exhaustive_seeds(graph, probs, K)
        exact = f(greedy_seeds(graph, probs, K, exact=True))
        mc = f(greedy_seeds(graph, probs, K, n_sims, int(rng.integers(2**63 - 1))))
        out.append(OracleCheck(n, m, K, best, exact, mc))
    return out
