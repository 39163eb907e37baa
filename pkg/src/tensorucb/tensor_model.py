"""Online variational CP-tensor regression.

The susceptibility tensor is kept as a D x R grid of Gaussian factors
q(w^{l,r}) = N(mean, cov).  A context tensor is the outer product
phi_1 o ... o phi_D and is never materialized: every quantity needed for
learning and prediction reduces to the dot products phi_l . mean^{l,r}.

Mode and rank indices are zero-based throughout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import (
    ConfigurationError,
    ConsistencyError,
    ContractError,
    NumericalError,
    ShapeError,
)

SNAPSHOT_FORMAT = "tensorucb.posterior"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class ContextTensor:
    """Rank-one context phi_1 o phi_2 o ... o phi_D, stored by its modes."""

    modes: tuple[np.ndarray, ...]
    dims: tuple[int, ...] = field(init=False, repr=False, compare=False)
    # (D, max dim) zero-padded copy; ``modes`` are read-only views into it
    padded: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.modes) == 0:
            raise ShapeError("a context tensor needs at least one mode")
        modes = []
        for phi in self.modes:
            phi = np.asarray(phi, dtype=np.float64)
            if phi.ndim != 1 or phi.size == 0:
                raise ShapeError(f"mode vectors must be non-empty 1-D, got shape {phi.shape}")
            modes.append(phi)
        dims = tuple(phi.size for phi in modes)
        padded = np.zeros((len(modes), max(dims)))
        for l, phi in enumerate(modes):
            padded[l, : phi.size] = phi
        padded.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "padded", padded)
        object.__setattr__(self, "modes", tuple(padded[l, :d] for l, d in enumerate(dims)))

    @classmethod
    def of(cls, *modes) -> "ContextTensor":
        return cls(tuple(modes))

    @property
    def order(self) -> int:
        return len(self.modes)

    def dense(self) -> np.ndarray:
        """Materialize the full tensor (testing only; size is prod(dims))."""
        out = self.modes[0]
        for phi in self.modes[1:]:
            out = np.multiply.outer(out, phi)
        return out


@dataclass
class FactorState:
    mean: np.ndarray
    cov: np.ndarray
    acc: np.ndarray
    # log det of the precision (inverse covariance); grows by
    # log(1 + kappa^2 / sigma^2) with every absorbed rank-one term
    log_det_precision: float = 0.0

    def copy(self) -> "FactorState":
        return FactorState(self.mean.copy(), self.cov.copy(), self.acc.copy(), self.log_det_precision)


@dataclass
class SusceptibilityPosterior:
    """Mean-field posterior over the CP factors of the susceptibility tensor.

    Factor arrays are stored stacked and zero padded to the largest mode
    dimension; padded covariance blocks hold the identity and never change.
    """

    order: int
    rank: int
    dims: tuple[int, ...]
    sigma2: float
    means: np.ndarray  # (D, R, dmax)
    covs: np.ndarray  # (D, R, dmax, dmax)
    accs: np.ndarray  # (D, R, dmax)
    log_det_precision: np.ndarray  # (D, R)
    jitter_scale: float = 0.01
    sweep_tolerance: float = 1e-6
    max_sweeps: int = 50
    n_samples: int = 0
    last_kappa_sq: np.ndarray = field(default=None, repr=False)
    _undo: tuple | None = field(default=None, init=False, repr=False, compare=False)
    _dims_array: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.order, self.rank

    @property
    def dims_array(self) -> np.ndarray:
        if self._dims_array is None:
            self._dims_array = np.asarray(self.dims, dtype=np.int64)
        return self._dims_array

    def undo_buffers(self) -> tuple:
        """Reusable scratch space the update kernel uses to roll back a failed sample."""
        if self._undo is None:
            D, R, dmax = self.means.shape
            self._undo = (np.empty((D, R, dmax, dmax)), np.empty((D, R, 2, dmax)), np.empty((D, R)))
        return self._undo

    def factor(self, l: int, r: int) -> FactorState:
        self._check_index(l, r)
        d = self.dims[l]
        return FactorState(
            self.means[l, r, :d].copy(),
            self.covs[l, r, :d, :d].copy(),
            self.accs[l, r, :d].copy(),
            float(self.log_det_precision[l, r]),
        )

    def set_factor(self, l: int, r: int, state: FactorState) -> None:
        self._check_index(l, r)
        d = self.dims[l]
        if state.mean.shape != (d,) or state.cov.shape != (d, d) or state.acc.shape != (d,):
            raise ShapeError(f"factor ({l}, {r}) must have dimension {d}")
        self.means[l, r, :d] = state.mean
        self.covs[l, r, :d, :d] = state.cov
        self.accs[l, r, :d] = state.acc
        self.log_det_precision[l, r] = state.log_det_precision

    def mean(self, l: int, r: int) -> np.ndarray:
        return self.means[l, r, : self.dims[l]]

    def cov(self, l: int, r: int) -> np.ndarray:
        return self.covs[l, r, : self.dims[l], : self.dims[l]]

    def copy(self) -> "SusceptibilityPosterior":
        return SusceptibilityPosterior(
            self.order,
            self.rank,
            self.dims,
            self.sigma2,
            self.means.copy(),
            self.covs.copy(),
            self.accs.copy(),
            self.log_det_precision.copy(),
            self.jitter_scale,
            self.sweep_tolerance,
            self.max_sweeps,
            self.n_samples,
            None if self.last_kappa_sq is None else self.last_kappa_sq.copy(),
        )

    def _check_index(self, l: int, r: int) -> None:
        if not (0 <= l < self.order and 0 <= r < self.rank):
            raise ContractError(f"factor index ({l}, {r}) outside grid {self.order}x{self.rank}")

    def check_context(self, x: ContextTensor) -> None:
        if x.dims != self.dims:
            raise ShapeError(f"context dims {x.dims} do not match posterior dims {self.dims}")

    def padded_modes(self, x: ContextTensor) -> np.ndarray:
        self.check_context(x)
        return x.padded

    # -- snapshots -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "order": self.order,
            "rank": self.rank,
            "dims": list(self.dims),
            "sigma2": self.sigma2,
            "jitter_scale": self.jitter_scale,
            "sweep_tolerance": self.sweep_tolerance,
            "max_sweeps": self.max_sweeps,
            "n_samples": self.n_samples,
            "factors": [
                {
                    "mode": l,
                    "rank": r,
                    "mean": self.mean(l, r).tolist(),
                    "cov": self.cov(l, r).ravel().tolist(),
                    "acc": self.accs[l, r, : self.dims[l]].tolist(),
                    "log_det_precision": float(self.log_det_precision[l, r]),
                }
                for l in range(self.order)
                for r in range(self.rank)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SusceptibilityPosterior":
        if data.get("format") != SNAPSHOT_FORMAT:
            raise ConfigurationError("not a posterior snapshot")
        if data.get("version") != SNAPSHOT_VERSION:
            raise ConfigurationError(f"unsupported snapshot version {data.get('version')}")
        post = _empty_posterior(
            int(data["order"]), int(data["rank"]), [int(d) for d in data["dims"]], float(data["sigma2"])
        )
        post.jitter_scale = float(data["jitter_scale"])
        post.sweep_tolerance = float(data["sweep_tolerance"])
        post.max_sweeps = int(data["max_sweeps"])
        post.n_samples = int(data["n_samples"])
        for item in data["factors"]:
            l, r = int(item["mode"]), int(item["rank"])
            d = post.dims[l]
            post.set_factor(
                l,
                r,
                FactorState(
                    np.asarray(item["mean"], dtype=np.float64),
                    np.asarray(item["cov"], dtype=np.float64).reshape(d, d),
                    np.asarray(item["acc"], dtype=np.float64),
                    float(item["log_det_precision"]),
                ),
            )
        return post

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "SusceptibilityPosterior":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _validate_config(D: int, R: int, dims: Sequence[int], sigma2: float) -> tuple[int, ...]:
    if int(D) < 1 or int(R) < 1:
        raise ConfigurationError(f"order and rank must be positive, got D={D}, R={R}")
    dims = tuple(int(d) for d in dims)
    if len(dims) != D:
        raise ConfigurationError(f"expected {D} mode dimensions, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise ConfigurationError(f"mode dimensions must be positive, got {dims}")
    if not (np.isfinite(sigma2) and sigma2 > 0):
        raise ConfigurationError(f"noise variance must be positive, got {sigma2}")
    return dims


def _empty_posterior(D: int, R: int, dims: Sequence[int], sigma2: float) -> SusceptibilityPosterior:
    dims = _validate_config(D, R, dims, sigma2)
    dmax = max(dims)
    covs = np.zeros((D, R, dmax, dmax))
    covs[...] = np.eye(dmax)
    return SusceptibilityPosterior(
        order=D,
        rank=R,
        dims=dims,
        sigma2=float(sigma2),
        means=np.zeros((D, R, dmax)),
        covs=covs,
        accs=np.zeros((D, R, dmax)),
        log_det_precision=np.zeros((D, R)),
    )


def init_posterior(
    D: int,
    R: int,
    dims: Sequence[int],
    sigma2: float,
    rng_seed: int | None = 0,
    *,
    jitter: float = 0.01,
    init_mean: float = 1.0,
) -> SusceptibilityPosterior:
    """Fresh posterior: identity covariances, means at ``init_mean`` plus jitter.

    Means start at the all-ones vector with i.i.d. U[-jitter, jitter] noise so
    that the R rank components do not follow one identical trajectory; pass
    ``jitter=0`` for analytic checks.  The accumulators are set to
    ``sigma2 * inv(cov) @ mean`` so that mean = cov @ acc / sigma2 from the
    start, i.e. the initial means act as the prior mean.  ``init_mean=0``
    gives the zero-mean prior of plain Bayesian ridge regression, which only
    makes sense for D = 1 (otherwise every beta is zero forever).
    """
    post = _empty_posterior(D, R, dims, sigma2)
    if jitter < 0:
        raise ConfigurationError("jitter must be non-negative")
    rng = np.random.default_rng(rng_seed)
    for l, d in enumerate(post.dims):
        for r in range(R):
            mean = np.full(d, float(init_mean))
            if jitter > 0:
                mean += rng.uniform(-jitter, jitter, size=d)
            post.means[l, r, :d] = mean
            post.accs[l, r, :d] = post.sigma2 * mean  # cov = I
    post.jitter_scale = float(jitter)
    return post


def model_inner_product(posterior: SusceptibilityPosterior, x: ContextTensor) -> float:
    """(W_bar, X) = sum_r prod_l phi_l . mean^{l,r}."""
    posterior.check_context(x)
    total = 0.0
    for r in range(posterior.rank):
        term = 1.0
        for l, phi in enumerate(x.modes):
            term *= float(phi @ posterior.mean(l, r))
        total += term
    return total


def compute_beta(posterior: SusceptibilityPosterior, x: ContextTensor, l: int, r: int) -> float:
    """Product of the other modes' mean projections at rank r (1 when D = 1)."""
    posterior._check_index(l, r)
    posterior.check_context(x)
    beta = 1.0
    for l2, phi in enumerate(x.modes):
        if l2 != l:
            beta *= float(phi @ posterior.mean(l2, r))
    return beta


def compute_pseudo_response(
    posterior: SusceptibilityPosterior, x: ContextTensor, y: float, l: int, r: int
) -> float:
    """y minus the contributions of every other rank component."""
    posterior._check_index(l, r)
    posterior.check_context(x)
    phi = x.modes[l]
    out = float(y)
    for r2 in range(posterior.rank):
        if r2 != r:
            out -= float(phi @ posterior.mean(l, r2)) * compute_beta(posterior, x, l, r2)
    return out


def update_factor(factor: FactorState, phi: np.ndarray, beta: float, y_lr: float, sigma2: float) -> FactorState:
    """Rank-one Woodbury step on one factor, returning the new state.

    Sigma <- Sigma - Sigma v v' Sigma / (sigma2 + v' Sigma v) with v = beta phi,
    which is the (sigma/beta)^2 form multiplied through by beta^2 so that
    beta = 0 is a clean no-op.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != factor.mean.shape:
        raise ShapeError(f"feature length {phi.shape} does not match factor {factor.mean.shape}")
    if not (np.all(np.isfinite(phi)) and np.isfinite(beta) and np.isfinite(y_lr)):
        raise NumericalError("non-finite input to factor update")
    if not (np.isfinite(sigma2) and sigma2 > 0):
        raise ConfigurationError(f"noise variance must be positive, got {sigma2}")
    if beta == 0.0:
        return factor.copy()
    v = beta * phi
    s = factor.cov @ v
    q = float(v @ s)
    denom = sigma2 + q
    if not np.isfinite(denom):
        raise NumericalError("non-finite Woodbury denominator")
    if q < 0:
        raise ConsistencyError("covariance lost positive semi-definiteness (negative quadratic form)")
    cov = factor.cov - np.outer(s, s) / denom
    cov = 0.5 * (cov + cov.T)
    if not np.all(np.diag(cov) > 0):
        raise ConsistencyError("covariance lost positive definiteness")
    acc = factor.acc + phi * (beta * y_lr)
    mean = cov @ acc / sigma2
    if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(mean))):
        raise NumericalError("factor update produced non-finite values")
    return FactorState(mean, cov, acc, factor.log_det_precision + float(np.log1p(q / sigma2)))


def absorb_sample_reference(posterior: SusceptibilityPosterior, x: ContextTensor, y: float) -> SusceptibilityPosterior:
    """Same sweep as :func:`absorb_sample`, written with the scalar helpers.

    Slow; kept as the readable definition that the compiled sweep is tested
    against.
    """
    posterior.check_context(x)
    for l in range(posterior.order):
        for r in range(posterior.rank):
            beta = compute_beta(posterior, x, l, r)
            y_lr = compute_pseudo_response(posterior, x, y, l, r)
            posterior.set_factor(l, r, update_factor(posterior.factor(l, r), x.modes[l], beta, y_lr, posterior.sigma2))
    posterior.n_samples += 1
    return posterior


def absorb_sample(posterior: SusceptibilityPosterior, x: ContextTensor, y: float) -> SusceptibilityPosterior:
    """Absorb one observation (x, y) with a single accumulation pass.

    Factors are visited mode-major (l outer, r inner); each uses beta and the
    pseudo-response computed from the freshest means, so factors updated
    earlier in the pass already influence later ones.  Every sample adds
    exactly one rank-one term to each precision.  The update is
    all-or-nothing: on error the posterior is left untouched.
    """
    phis = posterior.padded_modes(x)
    kappa_sq = np.empty((posterior.order, posterior.rank))
    status = _kernels.absorb_sweep(
        posterior.means,
        posterior.covs,
        posterior.accs,
        posterior.log_det_precision,
        kappa_sq,
        posterior.dims_array,
        phis,
        float(y),
        posterior.sigma2,
        *posterior.undo_buffers(),
    )
    if status == _kernels.NON_FINITE:
        raise NumericalError("non-finite sample or update")
    if status == _kernels.NOT_POSITIVE_DEFINITE:
        raise ConsistencyError("covariance lost positive definiteness")
    posterior.last_kappa_sq = kappa_sq
    posterior.n_samples += 1
    return posterior


def refresh_means(posterior: SusceptibilityPosterior) -> int:
    """Re-evaluate every mean from its (cov, acc) pair in sweep order until
    the largest change is below ``sweep_tolerance``; returns sweeps used.

    With single-pass accumulation the means are already a fixed point, so
    this converges on the first sweep; it exists to repair snapshots whose
    means were edited or rounded.
    """
    for sweep in range(1, posterior.max_sweeps + 1):
        change = 0.0
        for l in range(posterior.order):
            d = posterior.dims[l]
            for r in range(posterior.rank):
                new = posterior.covs[l, r, :d, :d] @ posterior.accs[l, r, :d] / posterior.sigma2
                change = max(change, float(np.max(np.abs(new - posterior.means[l, r, :d]))))
                posterior.means[l, r, :d] = new
        if change <= posterior.sweep_tolerance:
            return sweep
    return posterior.max_sweeps


def _batch_projections(posterior: SusceptibilityPosterior, phis: Sequence[np.ndarray]):
    """Per-mode projections phi . mean (n, D, R) and quadratic forms phi' Sigma phi (n, D, R)."""
    if len(phis) != posterior.order:
        raise ShapeError(f"expected {posterior.order} modes, got {len(phis)}")
    n = None
    proj, quad = [], []
    for l, block in enumerate(phis):
        block = np.asarray(block, dtype=np.float64)
        if block.ndim == 1:
            block = block[None, :]
        d = posterior.dims[l]
        if block.shape[1] != d:
            raise ShapeError(f"mode {l} has dimension {block.shape[1]}, expected {d}")
        if n is None:
            n = block.shape[0]
        elif block.shape[0] not in (1, n):
            raise ShapeError("mode blocks must share the number of rows (or have one row)")
        means = posterior.means[l, :, :d]  # (R, d)
        covs = posterior.covs[l, :, :d, :d]  # (R, d, d)
        proj.append(block @ means.T)
        quad.append(np.einsum("nd,rde,ne->nr", block, covs, block))
    n = max(p.shape[0] for p in proj)
    proj = np.stack([np.broadcast_to(p, (n, posterior.rank)) for p in proj], axis=1)
    quad = np.stack([np.broadcast_to(q, (n, posterior.rank)) for q in quad], axis=1)
    return proj, np.maximum(quad, 0.0)


def _leave_one_out_products(proj: np.ndarray) -> np.ndarray:
    """beta[n, l, r] = prod_{l' != l} proj[n, l', r], computed without division."""
    n, D, R = proj.shape
    prefix = np.ones((n, D + 1, R))
    suffix = np.ones((n, D + 1, R))
    for l in range(D):
        prefix[:, l + 1] = prefix[:, l] * proj[:, l]
        suffix[:, D - l - 1] = suffix[:, D - l] * proj[:, D - l - 1]
    return prefix[:, :D] * suffix[:, 1:]


def predict_terms(posterior: SusceptibilityPosterior, phis: Sequence[np.ndarray]):
    """Vectorized predictive pieces for n contexts given as per-mode row blocks.

    Returns (mean (n,), kappa (n, D, R)) where kappa[n, l, r] is
    sqrt((beta phi_l)' Sigma^{l,r} (beta phi_l)).  A mode block with a single
    row is broadcast against the others.
    """
    proj, quad = _batch_projections(posterior, phis)
    mean = np.prod(proj, axis=1).sum(axis=1)
    beta = _leave_one_out_products(proj)
    kappa = np.abs(beta) * np.sqrt(quad)
    return mean, kappa


def predict_many(posterior: SusceptibilityPosterior, phis: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    mean, kappa = predict_terms(posterior, phis)
    var = posterior.sigma2 + np.sum(kappa**2, axis=(1, 2))
    return mean, var


def predict(posterior: SusceptibilityPosterior, x: ContextTensor) -> tuple[float, float]:
    """Gaussian predictive mean and variance of the response score for x."""
    posterior.check_context(x)
    mean, var = predict_many(posterior, x.modes)
    return float(mean[0]), float(var[0])
