"""UCB scoring: turn the predictive distribution into activation probabilities."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DataError
from .im_graph import SocialGraph
from .tensor_model import ContextTensor, SusceptibilityPosterior, predict_terms


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def clip_unit(x):
    return np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)


PROJECTIONS: dict[str, Callable] = {"sigmoid": sigmoid, "clip": clip_unit}


@dataclass(frozen=True)
class PolicyConfig:
    c: float = 0.1
    proj: str = "sigmoid"

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c >= 0):
            raise ConfigurationError(f"UCB multiplier must be non-negative, got {self.c}")
        if self.proj not in PROJECTIONS:
            raise ConfigurationError(f"unknown projection {self.proj!r}; choose from {sorted(PROJECTIONS)}")

    def project(self, x):
        return PROJECTIONS[self.proj](x)


def c_from_delta(delta: float) -> float:
    """UCB multiplier sqrt(-2 ln delta) for tail probability delta."""
    if not (0.0 < delta < 1.0):
        raise ConfigurationError(f"tail probability must lie in (0, 1), got {delta}")
    return math.sqrt(-2.0 * math.log(delta))


def ucb_width(posterior: SusceptibilityPosterior, x: ContextTensor, c: float) -> float:
    """c * sum_{r,l} sqrt((beta phi_l)' Sigma^{l,r} (beta phi_l))."""
    if c < 0:
        raise ConfigurationError(f"UCB multiplier must be non-negative, got {c}")
    posterior.check_context(x)
    _, kappa = predict_terms(posterior, x.modes)
    return float(c * kappa[0].sum())


def activation_probabilities(posterior: SusceptibilityPosterior, phis: Sequence[np.ndarray], cfg: PolicyConfig) -> np.ndarray:
    """proj(mean + width) for a batch of contexts given as per-mode row blocks."""
    mean, kappa = predict_terms(posterior, phis)
    return cfg.project(mean + cfg.c * kappa.sum(axis=(1, 2)))


def activation_probability(posterior: SusceptibilityPosterior, x: ContextTensor, cfg: PolicyConfig) -> float:
    posterior.check_context(x)
    return float(activation_probabilities(posterior, x.modes, cfg)[0])


def edge_probability_map(
    posterior: SusceptibilityPosterior,
    graph: SocialGraph,
    user_features: np.ndarray | Mapping[int, np.ndarray],
    extra_modes: Sequence[np.ndarray],
    cfg: PolicyConfig,
) -> np.ndarray:
    """Estimated activation probability of every edge, indexed by edge id.

    The context of edge (i, j) is x_i o x_j o extra_modes[0] o ...; node pairs
    without an edge are simply absent (probability zero).
    """
    if graph.n_edges == 0:
        return np.zeros(0)
    table = _feature_table(user_features, graph.n_nodes)
    phis = [table[graph.src], table[graph.dst], *[np.asarray(m, dtype=np.float64) for m in extra_modes]]
    return activation_probabilities(posterior, phis, cfg)


def _feature_table(user_features, n_nodes: int) -> np.ndarray:
    if isinstance(user_features, Mapping):
        missing = [v for v in range(n_nodes) if v not in user_features]
        if missing:
            raise DataError(f"missing features for {len(missing)} nodes, e.g. node {missing[0]}")
        return np.stack([np.asarray(user_features[v], dtype=np.float64) for v in range(n_nodes)])
    table = np.asarray(user_features, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] < n_nodes:
        raise DataError(f"feature table has {table.shape[0] if table.ndim else 0} rows for {n_nodes} nodes")
    return table
