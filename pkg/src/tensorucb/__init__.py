"""Tensor-regression UCB for product-aware online influence maximization."""
from .errors import (
    ConfigurationError,
    ConsistencyError,
    ContractError,
    DataError,
    GuardError,
    NumericalError,
    ParseError,
    ShapeError,
    TensorUCBError,
)
from .harness import BoundParams, CampaignConfig, RoundLog, min_ucb_constant, run_campaign, scaled_regret, theoretical_regret_bound
from .im_graph import SocialGraph, exact_spread, load_graph, mc_spread, random_graph, simulate_cascade
from .policy import PolicyConfig, activation_probability, c_from_delta, edge_probability_map, ucb_width
from .seed_oracle import exhaustive_seeds, greedy_seeds
from .synth_env import GroundTruthModel, generate_environment, sample_feedback, sample_product
from .tensor_model import (
    ContextTensor,
    FactorState,
    SusceptibilityPosterior,
    absorb_sample,
    compute_beta,
    compute_pseudo_response,
    init_posterior,
    model_inner_product,
    predict,
    update_factor,
)

__version__ = "0.1.0"
