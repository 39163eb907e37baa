"""Synthetic ground truth: hidden activation probabilities with product heterogeneity.

Users belong softly to ``true_rank`` latent groups and carry an activity
level; the hidden susceptibility tensor has one CP component per group,

    p*(i -> j | z) = clip(scale * sum_r (x_i . a_r)(x_j . a_r)(z . c_r), p_min, p_max),

with x_i = activity_i * sum_r membership_{i,r} a_r (+ small noise), so a
product leaning towards pattern r spreads mainly along edges joining active
users of group r.  Product k leans towards pattern k mod true_rank with
loading 1 and loads ``1 - heterogeneity * (1 - cross_loading)`` on every
other pattern: at heterogeneity 0 all products are identical, at 1 each
product keeps only a small cross-loading.  For two patterns, writing them as
a shared plus a contrast direction, the two product types then carry
opposite-sign loadings on the contrast.

Memberships and loadings are non-negative, so every score is non-negative
and below the p_max clip the map is exactly a rank-``true_rank`` CP model in
(x_i, x_j, z); a learner of rank >= true_rank can represent it.  A single
product with a non-zero cross-loading already needs every component.
Activity is product independent, which is the part of the signal a rank-1
learner can still exploit across products.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError
from .im_graph import SocialGraph
from .tensor_model import ContextTensor

P_MIN = 0.0
P_MAX = 0.6


def normalize_rows(a: np.ndarray) -> np.ndarray:
    """Scale rows down to unit Euclidean norm; shorter rows are left alone."""
    a = np.asarray(a, dtype=np.float64)
    norms = np.linalg.norm(a, axis=-1, keepdims=True)
    return a / np.maximum(norms, 1.0)


def _unit_rows(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=-1, keepdims=True)
    return a / np.where(norms > 0, norms, 1.0)


@dataclass
class GroundTruthModel:
    user_features: np.ndarray  # (n_nodes, d_user)
    products: np.ndarray  # (n_products, d_product)
    user_factors: np.ndarray  # (true_rank, d_user), shared by source and target modes
    product_factors: np.ndarray  # (true_rank, d_product)
    scale: float
    heterogeneity: float
    p_min: float = P_MIN
    p_max: float = P_MAX
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def true_rank(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_products(self) -> int:
        return self.products.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        d = self.user_features.shape[1]
        return d, d, self.products.shape[1]

    def hidden_tensor(self) -> np.ndarray:
        """Dense d x d x d_z susceptibility tensor (for checks on small sizes)."""
        return self.scale * np.einsum("ri,rj,rk->ijk", self.user_factors, self.user_factors, self.product_factors)

    def scores(self, src: np.ndarray, dst: np.ndarray, product: int) -> np.ndarray:
        a = self.user_features[src] @ self.user_factors.T
        b = self.user_features[dst] @ self.user_factors.T
        c = self.products[product] @ self.product_factors.T
        return self.scale * np.sum(a * b * c, axis=1)

    def edge_probabilities(self, graph: SocialGraph, product: int) -> np.ndarray:
        key = (id(graph), int(product))
        if key not in self._cache:
            raw = self.scores(graph.src, graph.dst, product)
            self._cache[key] = np.clip(raw, self.p_min, self.p_max)
        return self._cache[key]

    def probability(self, graph: SocialGraph, i: int, j: int, product: int) -> float:
        e = graph.edge_id(i, j)
        if e is None:
            return 0.0
        return float(self.edge_probabilities(graph, product)[e])


def generate_environment(
    graph: SocialGraph,
    dims,
    true_rank: int,
    n_products: int,
    heterogeneity: float,
    rng: np.random.Generator,
    *,
    scale: float = 1.5,
    cross_loading: float = 0.5,
    membership_concentration: float = 0.3,
    activity_shape: tuple[float, float] = (2.0, 2.0),
    feature_noise: float = 0.02,
    user_features: np.ndarray | None = None,
    products: np.ndarray | None = None,
) -> GroundTruthModel:
    """Draw a hidden CP model, user features and a product pool.

    dims = (d_user, d_user, d_product).  Pattern directions are random
    orthonormal sets.  A user's feature vector is its unit-norm
    Dirichlet(membership_concentration) group membership expressed in those
    directions, scaled by a Beta(*activity_shape) activity level, plus small
    isotropic noise.
    Externally supplied features replace the generated ones (rows are scaled
    to norm <= 1); the hidden factors are still drawn here.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or dims[0] != dims[1]:
        raise ConfigurationError(f"dims must be (d_user, d_user, d_product), got {dims}")
    d_user, _, d_prod = dims
    if true_rank < 1 or true_rank > min(d_user, d_prod):
        raise ConfigurationError(f"true rank {true_rank} must lie in [1, min(dims)]")
    if n_products < 1:
        raise ConfigurationError("need at least one product")
    if not 0.0 <= heterogeneity <= 1.0:
        raise ConfigurationError(f"heterogeneity must lie in [0, 1], got {heterogeneity}")
    if not 0.0 <= cross_loading <= 1.0:
        raise ConfigurationError(f"cross loading must lie in [0, 1], got {cross_loading}")
    rng = np.random.default_rng(rng)

    user_basis = np.linalg.qr(rng.standard_normal((d_user, d_user)))[0][:, :true_rank].T
    prod_basis = np.linalg.qr(rng.standard_normal((d_prod, d_prod)))[0][:, :true_rank].T
    # sign-fix so pattern directions have positive coordinate sums (cosmetic)
    user_basis *= np.where(user_basis.sum(axis=1, keepdims=True) < 0, -1.0, 1.0)
    prod_basis *= np.where(prod_basis.sum(axis=1, keepdims=True) < 0, -1.0, 1.0)

    if user_features is None:
        member = rng.dirichlet(np.full(true_rank, membership_concentration), size=graph.n_nodes)
        member /= np.linalg.norm(member, axis=1, keepdims=True)
        activity = rng.beta(activity_shape[0], activity_shape[1], size=(graph.n_nodes, 1))
        raw = activity * (member @ user_basis)
        raw += feature_noise / np.sqrt(d_user) * rng.standard_normal((graph.n_nodes, d_user))
        user_features = normalize_rows(raw)
    else:
        user_features = normalize_rows(user_features)
        if user_features.shape != (graph.n_nodes, d_user):
            raise ConfigurationError(f"user features must have shape {(graph.n_nodes, d_user)}")

    if products is None:
        products = _unit_rows(product_loadings(n_products, true_rank, heterogeneity, cross_loading) @ prod_basis)
    else:
        products = normalize_rows(products)
        if products.shape[1] != d_prod:
            raise ConfigurationError(f"product features must have dimension {d_prod}")

    return GroundTruthModel(
        user_features=user_features,
        products=products,
        user_factors=user_basis,
        product_factors=prod_basis,
        scale=float(scale),
        heterogeneity=float(heterogeneity),
    )


def product_loadings(n_products: int, true_rank: int, heterogeneity: float, cross_loading: float) -> np.ndarray:
    """(n_products, true_rank) non-negative pattern loadings; product k leans towards pattern k mod true_rank."""
    own = np.eye(true_rank)[np.arange(n_products) % true_rank]
    other = 1.0 - heterogeneity * (1.0 - cross_loading)
    return own + other * (1.0 - own)


def sample_product(env: GroundTruthModel, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Uniform draw from the product pool; returns (product id, feature vector)."""
    if env.n_products < 1:
        raise ConfigurationError("empty product pool")
    k = int(rng.integers(env.n_products))
    return k, env.products[k]


def feedback_edges(env: GroundTruthModel, graph: SocialGraph, seeds, product: int, rng: np.random.Generator):
    """Edge ids leaving the seeds (seed order, then edge id) and their Bernoulli responses."""
    seeds = [int(s) for s in seeds]
    graph.check_nodes(seeds)
    eids = np.concatenate([np.sort(graph.out_edges(s)) for s in seeds]) if seeds else np.zeros(0, dtype=np.int64)
    p = env.edge_probabilities(graph, product)[eids]
    y = (rng.random(eids.size) < p).astype(np.float64)
    return eids, y


def sample_feedback(env: GroundTruthModel, graph: SocialGraph, seeds, product: int, rng: np.random.Generator):
    """One (context, response) pair per out-edge of every seed."""
    eids, y = feedback_edges(env, graph, seeds, product, rng)
    z = env.products[product]
    x = env.user_features
    return [
        (ContextTensor((x[graph.src[e]], x[graph.dst[e]], z)), float(yy)) for e, yy in zip(eids.tolist(), y.tolist())
    ]


def load_feature_table(path: str | Path, n_rows: int | None = None) -> np.ndarray:
    """Read "id,v1,...,vd" lines into an (n, d) array indexed by id, rows scaled to norm <= 1."""
    rows: dict[int, list[float]] = {}
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                key = int(parts[0])
                vals = [float(v) for v in parts[1:]]
            except ValueError:
                raise ParseError(f"malformed feature row {raw.strip()!r}", lineno) from None
            if not vals:
                raise ParseError("feature row without values", lineno)
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(f"expected {width} values, got {len(vals)}", lineno)
            rows[key] = vals
    if not rows:
        raise ParseError("no feature rows found")
    n = n_rows if n_rows is not None else max(rows) + 1
    missing = [k for k in range(n) if k not in rows]
    if missing:
        raise ParseError(f"no features for id {missing[0]} ({len(missing)} missing)")
    return normalize_rows(np.array([rows[k] for k in range(n)]))
