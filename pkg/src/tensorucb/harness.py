"""Campaign loop, baseline agents, regret accounting and the theoretical bound."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, TensorUCBError
from .im_graph import ExactSpread, MAX_EXACT_EDGES, SocialGraph, load_graph, random_graph, sample_worlds, spread_in_worlds
from .policy import PolicyConfig, activation_probabilities, edge_probability_map
from .seed_oracle import greedy_seeds
from .synth_env import GroundTruthModel, feedback_edges, generate_environment, load_feature_table, normalize_rows
from .tensor_model import ContextTensor, SusceptibilityPosterior, absorb_sample, init_posterior

DEFAULT_ETA = 1.0 - 1.0 / math.e - 0.1
AGENTS = ("tensor_ucb", "random", "concat_linucb", "rank1")
CSV_HEADER = ["round", "product_id", "spread", "opt_spread", "regret", "cum_regret", "avg_regret", "elapsed_ms"]
C_GRID = (1e-3, 1e-2, 1e-1, 1.0)

# stream ids for np.random.default_rng([seed, stream, ...])
_ENV, _PRODUCTS, _ORACLE, _FEEDBACK, _RANDOM_AGENT, _INIT, _OPT, _EVAL = range(8)


@dataclass
class CampaignConfig:
    agent: str = "tensor_ucb"
    rounds: int = 200
    budget: int = 10
    rank: int = 2
    sigma2: float = 0.1
    c: float = 0.1
    proj: str = "sigmoid"
    jitter: float = 0.01
    oracle_sims: int = 200
    regret_sims: int = 1000
    eta: float = DEFAULT_ETA
    seed: int = 0
    # environment
    graph: str | None = None
    nodes: int = 200
    mean_degree: float = 5.0
    dim: int = 10
    product_dim: int | None = None
    true_rank: int = 2
    products: int = 4
    heterogeneity: float = 1.0
    cross_loading: float = 0.5
    env_scale: float = 1.5
    node_features: str | None = None
    product_features: str | None = None
    fixed_product: int | None = None
    # output
    out: str | None = None
    timing: bool = False

    def validate(self) -> "CampaignConfig":
        if self.agent not in AGENTS:
            raise ConfigurationError(f"unknown agent {self.agent!r}; choose from {AGENTS}")
        if self.rounds < 1:
            raise ConfigurationError("rounds must be >= 1")
        if self.budget < 1:
            raise ConfigurationError("budget must be >= 1")
        if self.rank < 1:
            raise ConfigurationError("rank must be >= 1")
        if not self.sigma2 > 0:
            raise ConfigurationError("sigma2 must be positive")
        if not self.c >= 0:
            raise ConfigurationError("UCB multiplier c must be non-negative")
        if not 0 < self.eta <= 1:
            raise ConfigurationError("eta must lie in (0, 1]")
        if self.oracle_sims < 1 or self.regret_sims < 1:
            raise ConfigurationError("simulation counts must be >= 1")
        PolicyConfig(self.c, self.proj)
        return self

    def replace(self, **changes) -> "CampaignConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RoundLog:
    round: int
    product_id: int
    seeds: list[int]
    feedback_edges: np.ndarray
    feedback: np.ndarray
    spread: float
    opt_spread: float
    regret: float
    cum_regret: float
    elapsed_ms: float

    @property
    def avg_regret(self) -> float:
        return self.cum_regret / self.round


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def _int_seed(seed: int, *stream: int) -> int:
    return int(np.random.SeedSequence([seed, *stream]).generate_state(1)[0])


def build_environment(cfg: CampaignConfig) -> tuple[SocialGraph, GroundTruthModel]:
    """Graph and hidden model; depends only on the environment fields and seed."""
    rng = _rng(cfg.seed, _ENV)
    if cfg.graph:
        graph = load_graph(cfg.graph)
    else:
        graph = random_graph(cfg.nodes, cfg.mean_degree, rng)
    user_features = load_feature_table(cfg.node_features, graph.n_nodes) if cfg.node_features else None
    products = load_feature_table(cfg.product_features) if cfg.product_features else None
    d_user = user_features.shape[1] if user_features is not None else cfg.dim
    d_prod = products.shape[1] if products is not None else (cfg.product_dim or cfg.dim)
    env = generate_environment(
        graph,
        (d_user, d_user, d_prod),
        cfg.true_rank,
        cfg.products if products is None else products.shape[0],
        cfg.heterogeneity,
        rng,
        scale=cfg.env_scale,
        cross_loading=cfg.cross_loading,
        user_features=user_features,
        products=products,
    )
    return graph, env


class SpreadEvaluator:
    """f(S, P*_z) and the per-product greedy optimum S*_z, cached by product.

    Small graphs (<= 20 edges) are evaluated exactly; otherwise every seed
    set is scored on one fixed sample of live-edge worlds per product, so all
    agents and rounds are compared on common random numbers.
    """

    def __init__(self, graph: SocialGraph, env: GroundTruthModel, cfg: CampaignConfig):
        self.graph, self.env, self.cfg = graph, env, cfg
        self._f: dict[int, object] = {}
        self._opt: dict[int, tuple[list[int], float]] = {}

    def _scorer(self, product: int):
        if product not in self._f:
            probs = self.env.edge_probabilities(self.graph, product)
            if self.graph.n_edges <= MAX_EXACT_EDGES:
                self._f[product] = ExactSpread(self.graph, probs)
            else:
                live = sample_worlds(self.graph, probs, self.cfg.regret_sims, _int_seed(self.cfg.seed, _EVAL, product))
                self._f[product] = lambda seeds, live=live: float(spread_in_worlds(self.graph, live, seeds).mean())
        return self._f[product]

    def spread(self, seeds: Iterable[int], product: int) -> float:
        return self._scorer(product)(list(seeds))

    def optimum(self, product: int) -> tuple[list[int], float]:
        if product not in self._opt:
            probs = self.env.edge_probabilities(self.graph, product)
            seeds = greedy_seeds(
                self.graph, probs, self.cfg.budget, self.cfg.oracle_sims, _int_seed(self.cfg.seed, _OPT, product)
            )
            self._opt[product] = (seeds, self.spread(seeds, product))
        return self._opt[product]


# -- agents ---------------------------------------------------------------


class RandomAgent:
    """Ignores feedback; K distinct nodes uniformly at random each round."""

    def __init__(self, graph: SocialGraph, cfg: CampaignConfig):
        self.graph, self.cfg = graph, cfg

    def choose(self, t: int, product: int, z: np.ndarray) -> list[int]:
        rng = _rng(self.cfg.seed, _RANDOM_AGENT, t)
        return sorted(rng.choice(self.graph.n_nodes, size=self.cfg.budget, replace=False).tolist())

    def observe(self, eids: np.ndarray, y: np.ndarray, z: np.ndarray) -> None:
        pass


class TensorUCBAgent:
    """Rank-R CP regression over (source user, target user, product)."""

    def __init__(self, graph: SocialGraph, user_features: np.ndarray, cfg: CampaignConfig, rank: int | None = None):
        self.graph, self.cfg = graph, cfg
        self.features = user_features
        d = user_features.shape[1]
        self.rank = cfg.rank if rank is None else rank
        self.posterior: SusceptibilityPosterior | None = None
        self._d_user = d
        self.policy = PolicyConfig(cfg.c, cfg.proj)

    def _ensure_posterior(self, z: np.ndarray) -> SusceptibilityPosterior:
        if self.posterior is None:
            dims = [self._d_user, self._d_user, z.size]
            self.posterior = init_posterior(
                3, self.rank, dims, self.cfg.sigma2, _int_seed(self.cfg.seed, _INIT), jitter=self.cfg.jitter
            )
        return self.posterior

    def edge_probabilities(self, z: np.ndarray) -> np.ndarray:
        post = self._ensure_posterior(z)
        return edge_probability_map(post, self.graph, self.features, [z[None, :]], self.policy)

    def choose(self, t: int, product: int, z: np.ndarray) -> list[int]:
        probs = self.edge_probabilities(z)
        return greedy_seeds(self.graph, probs, self.cfg.budget, self.cfg.oracle_sims, _int_seed(self.cfg.seed, _ORACLE, t))

    def observe(self, eids: np.ndarray, y: np.ndarray, z: np.ndarray) -> None:
        post = self._ensure_posterior(z)
        x = self.features
        for e, yy in zip(eids.tolist(), y.tolist()):
            absorb_sample(post, ContextTensor((x[self.graph.src[e]], x[self.graph.dst[e]], z)), yy)


class ConcatLinUCBAgent(TensorUCBAgent):
    """Vector LinUCB on the unit-normalized concatenation x_i + x_j + z.

    This is the D = R = 1 special case of the tensor model with a zero-mean
    prior, i.e. Bayesian ridge regression on the concatenated features.
    """

    def _ensure_posterior(self, z: np.ndarray) -> SusceptibilityPosterior:
        if self.posterior is None:
            dim = 2 * self._d_user + z.size
            self.posterior = init_posterior(1, 1, [dim], self.cfg.sigma2, None, jitter=0.0, init_mean=0.0)
        return self.posterior

    def contexts(self, eids: np.ndarray, z: np.ndarray) -> np.ndarray:
        x = self.features
        zz = np.broadcast_to(z, (eids.size, z.size))
        return normalize_rows(
            _unit(np.concatenate([x[self.graph.src[eids]], x[self.graph.dst[eids]], zz], axis=1))
        )

    def edge_probabilities(self, z: np.ndarray) -> np.ndarray:
        post = self._ensure_posterior(z)
        eids = np.arange(self.graph.n_edges)
        return activation_probabilities(post, [self.contexts(eids, z)], self.policy)

    def observe(self, eids: np.ndarray, y: np.ndarray, z: np.ndarray) -> None:
        post = self._ensure_posterior(z)
        for phi, yy in zip(self.contexts(eids, z), y.tolist()):
            absorb_sample(post, ContextTensor((phi,)), yy)


def _unit(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    return a / np.where(norms > 0, norms, 1.0)


def make_agent(cfg: CampaignConfig, graph: SocialGraph, env: GroundTruthModel):
    if cfg.agent == "random":
        return RandomAgent(graph, cfg)
    if cfg.agent == "concat_linucb":
        return ConcatLinUCBAgent(graph, env.user_features, cfg, rank=1)
    if cfg.agent == "rank1":
        return TensorUCBAgent(graph, env.user_features, cfg, rank=1)
    return TensorUCBAgent(graph, env.user_features, cfg)


# -- campaign -------------------------------------------------------------


def instantaneous_regret(opt_spread: float, spread: float, eta: float) -> float:
    """(f(S*) - f(S_t)) / eta, floored at zero.

    S* comes from the same approximate oracle, so a round can score above it;
    such rounds count as zero regret.
    """
    return max(opt_spread - spread, 0.0) / eta


def run_campaign(
    cfg: CampaignConfig,
    graph: SocialGraph | None = None,
    env: GroundTruthModel | None = None,
    agent=None,
    evaluator: SpreadEvaluator | None = None,
) -> list[RoundLog]:
    """Run ``cfg.rounds`` marketing rounds and return one log per round.

    Each round draws a product, lets the agent pick K seeds through the
    greedy oracle on its estimated probabilities, reveals Bernoulli
    responses on the seeds' out-edges, feeds them back, and scores the seed
    set under the true probabilities.  If a round fails, the error carries
    the completed logs as ``exc.partial_logs``.
    """
    cfg.validate()
    if graph is None or env is None:
        graph, env = build_environment(cfg)
    if cfg.budget > graph.n_nodes:
        raise ConfigurationError(f"budget {cfg.budget} exceeds {graph.n_nodes} nodes")
    if cfg.fixed_product is not None and not 0 <= cfg.fixed_product < env.n_products:
        raise ConfigurationError(f"fixed product {cfg.fixed_product} outside pool of {env.n_products}")
    agent = agent or make_agent(cfg, graph, env)
    evaluator = evaluator or SpreadEvaluator(graph, env, cfg)
    product_rng = _rng(cfg.seed, _PRODUCTS)
    logs: list[RoundLog] = []
    cum = 0.0
    for t in range(1, cfg.rounds + 1):
        try:
            start = time.perf_counter()
            if cfg.fixed_product is None:
                product = int(product_rng.integers(env.n_products))
            else:
                product = cfg.fixed_product
            z = env.products[product]
            seeds = agent.choose(t, product, z)
            eids, y = feedback_edges(env, graph, seeds, product, _rng(cfg.seed, _FEEDBACK, t))
            agent.observe(eids, y, z)
            elapsed = (time.perf_counter() - start) * 1e3
            spread = evaluator.spread(seeds, product)
            _, opt = evaluator.optimum(product)
        except TensorUCBError as exc:
            exc.partial_logs = logs
            raise
        regret = instantaneous_regret(opt, spread, cfg.eta)
        cum += regret
        logs.append(RoundLog(t, product, list(seeds), eids, y, spread, opt, regret, cum, elapsed))
    return logs


def scaled_regret(logs: Sequence[RoundLog], evaluator: SpreadEvaluator, eta: float = DEFAULT_ETA):
    """Per-round scaled regret, its running sum, and the running average R_t / t."""
    inst = np.array(
        [instantaneous_regret(evaluator.optimum(g.product_id)[1], evaluator.spread(g.seeds, g.product_id), eta) for g in logs]
    )
    cum = np.cumsum(inst)
    return inst, cum, cum / np.arange(1, len(inst) + 1)


def campaign_csv(logs: Sequence[RoundLog], timing: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for g in logs:
        writer.writerow(
            [
                g.round,
                g.product_id,
                f"{g.spread:.6f}",
                f"{g.opt_spread:.6f}",
                f"{g.regret:.6f}",
                f"{g.cum_regret:.6f}",
                f"{g.avg_regret:.6f}",
                f"{g.elapsed_ms:.3f}" if timing else "",
            ]
        )
    return buf.getvalue()


def write_outputs(logs: Sequence[RoundLog], cfg: CampaignConfig, path: str | Path) -> tuple[Path, Path]:
    """CSV of round metrics plus a JSON sidecar with the resolved config."""
    path = Path(path)
    path.write_text(campaign_csv(logs, cfg.timing))
    sidecar = path.with_suffix(".json") if path.suffix != ".json" else path.with_suffix(".config.json")
    sidecar.write_text(json.dumps({"config": cfg.to_dict(), "seed": cfg.seed}, indent=2, sort_keys=True))
    return path, sidecar


def average_regret(cfg: CampaignConfig, graph=None, env=None, evaluator=None) -> float:
    logs = run_campaign(cfg, graph, env, evaluator=evaluator)
    return logs[-1].avg_regret


def select_c(
    cfg: CampaignConfig,
    grid: Sequence[float] = C_GRID,
    validation_rounds: int = 50,
    validation_seeds: Sequence[int] = (1000,),
) -> tuple[float, dict[float, float]]:
    """Pick the UCB multiplier with the lowest mean average regret after
    ``validation_rounds`` rounds on held-out seeds."""
    scores = {}
    for c in grid:
        vals = []
        for s in validation_seeds:
            vcfg = cfg.replace(c=c, rounds=validation_rounds, seed=s)
            vals.append(average_regret(vcfg))
        scores[c] = float(np.mean(vals))
    best = min(grid, key=lambda c: (scores[c], c))
    return best, scores


# -- theory ---------------------------------------------------------------


@dataclass(frozen=True)
class BoundParams:
    n_nodes: int
    order: int
    rank: int
    c: float
    B: float
    eta: float
    T: int
    K: int
    d: int
    sigma2: float

    def __post_init__(self):
        for name in ("n_nodes", "order", "rank", "c", "B", "eta", "T", "K", "d", "sigma2"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ConfigurationError(f"{name} must be positive, got {val}")
        if self.eta > 1:
            raise ConfigurationError(f"eta must lie in (0, 1], got {self.eta}")

    def replace(self, **changes) -> "BoundParams":
        return dataclasses.replace(self, **changes)


def _log_ratio(p: BoundParams) -> float:
    return math.log1p(p.T * p.K / (p.d * p.sigma2)) / math.log1p(1.0 / p.sigma2)


def theoretical_regret_bound(p: BoundParams) -> float:
    """(cB/eta) |V| D R sqrt(T K d ln(1 + TK/(d sigma2)) / ln(1 + 1/sigma2))."""
    return p.c * p.B / p.eta * p.n_nodes * p.order * p.rank * math.sqrt(p.T * p.K * p.d * _log_ratio(p))


def min_ucb_constant(p: BoundParams, w_max: float) -> float:
    """Smallest c for which the regret bound is claimed to hold."""
    if not (np.isfinite(w_max) and w_max >= 0):
        raise ConfigurationError(f"w_max must be non-negative, got {w_max}")
    return p.order * p.rank * math.sqrt(p.K * p.d * _log_ratio(p)) + w_max


def max_factor_norm(posterior: SusceptibilityPosterior) -> float:
    return float(np.max(np.linalg.norm(posterior.means, axis=2)))
