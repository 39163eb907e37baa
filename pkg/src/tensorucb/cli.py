"""Command line entry point: ``run``, ``bound`` and ``oracle-check``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, TensorUCBError
from .harness import (
    AGENTS,
    C_GRID,
    DEFAULT_ETA,
    BoundParams,
    CampaignConfig,
    campaign_csv,
    min_ucb_constant,
    run_campaign,
    select_c,
    theoretical_regret_bound,
    write_outputs,
)
from .seed_oracle import oracle_check

log = logging.getLogger("tensorucb")

# flag dest -> CampaignConfig field
RUN_FLAGS = {
    "graph": "graph",
    "agent": "agent",
    "rounds": "rounds",
    "budget": "budget",
    "rank": "rank",
    "sigma2": "sigma2",
    "ucb_c": "c",
    "proj": "proj",
    "jitter": "jitter",
    "heterogeneity": "heterogeneity",
    "cross_loading": "cross_loading",
    "env_scale": "env_scale",
    "products": "products",
    "nodes": "nodes",
    "mean_degree": "mean_degree",
    "dim": "dim",
    "true_rank": "true_rank",
    "fixed_product": "fixed_product",
    "node_features": "node_features",
    "product_features": "product_features",
    "oracle_sims": "oracle_sims",
    "regret_sims": "regret_sims",
    "eta": "eta",
    "seed": "seed",
    "out": "out",
    "timing": "timing",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tensorucb", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a marketing campaign and write per-round metrics")
    run.add_argument("--config", type=Path, help="JSON file with CampaignConfig fields; flags override it")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--graph", help="edge list 'src<TAB>dst'")
    src.add_argument("--synthetic", action="store_true", help="random Erdos-Renyi graph (default)")
    run.add_argument("--agent", choices=AGENTS)
    run.add_argument("--rounds", type=int)
    run.add_argument("--budget", type=int)
    run.add_argument("--rank", type=int)
    run.add_argument("--sigma2", type=float)
    run.add_argument("--ucb-c", type=float)
    run.add_argument("--select-c", action="store_true", help=f"grid-search c over {C_GRID} on 50 validation rounds")
    run.add_argument("--proj", choices=("sigmoid", "clip"))
    run.add_argument("--jitter", type=float)
    run.add_argument("--heterogeneity", type=float)
    run.add_argument("--cross-loading", type=float)
    run.add_argument("--env-scale", type=float)
    run.add_argument("--products", type=int)
    run.add_argument("--nodes", type=int)
    run.add_argument("--mean-degree", type=float)
    run.add_argument("--dim", type=int)
    run.add_argument("--true-rank", type=int)
    run.add_argument("--fixed-product", type=int)
    run.add_argument("--node-features")
    run.add_argument("--product-features")
    run.add_argument("--oracle-sims", type=int)
    run.add_argument("--regret-sims", type=int)
    run.add_argument("--eta", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="CSV path; a .json sidecar is written next to it (stdout if omitted)")
    run.add_argument("--timing", action="store_true", default=None, help="fill elapsed_ms (breaks byte-identical reruns)")

    bound = sub.add_parser("bound", help="evaluate the regret bound and the minimal UCB constant")
    bound.add_argument("--nodes", type=int, required=True)
    bound.add_argument("--order", type=int, default=3)
    bound.add_argument("--rank", type=int, default=2)
    bound.add_argument("--ucb-c", type=float, default=0.1)
    bound.add_argument("--B", type=float, default=1.0)
    bound.add_argument("--eta", type=float, default=DEFAULT_ETA)
    bound.add_argument("--rounds", type=int, default=200)
    bound.add_argument("--budget", type=int, default=10)
    bound.add_argument("--dim", type=int, default=10)
    bound.add_argument("--sigma2", type=float, default=0.1)
    bound.add_argument("--w-max", type=float, default=0.0, help="largest factor-mean norm of a posterior snapshot")

    check = sub.add_parser("oracle-check", help="greedy seeds versus brute force on small random graphs")
    check.add_argument("--instances", type=int, default=20)
    check.add_argument("--max-nodes", type=int, default=12)
    check.add_argument("--max-edges", type=int, default=16)
    check.add_argument("--budget", type=int, default=3)
    check.add_argument("--oracle-sims", type=int, default=500)
    check.add_argument("--eta", type=float, default=DEFAULT_ETA)
    check.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args: argparse.Namespace) -> CampaignConfig:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
    for flag, name in RUN_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            data[name] = val
    if args.synthetic:
        data["graph"] = None
    return CampaignConfig.from_dict(data).validate()


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    if args.select_c and cfg.agent != "random":
        c, scores = select_c(cfg)
        log.info("validation regret by c: %s", scores)
        cfg = cfg.replace(c=c)
    logs = run_campaign(cfg)
    if cfg.out:
        csv_path, sidecar = write_outputs(logs, cfg, cfg.out)
        print(f"wrote {csv_path} and {sidecar}")
        print(f"agent={cfg.agent} c={cfg.c:g} rounds={cfg.rounds} avg_regret={logs[-1].avg_regret:.4f}")
    else:
        sys.stdout.write(campaign_csv(logs, cfg.timing))
    return 0


def cmd_bound(args) -> int:
    p = BoundParams(
        n_nodes=args.nodes,
        order=args.order,
        rank=args.rank,
        c=args.ucb_c,
        B=args.B,
        eta=args.eta,
        T=args.rounds,
        K=args.budget,
        d=args.dim,
        sigma2=args.sigma2,
    )
    floor = min_ucb_constant(p, args.w_max)
    print(f"regret_bound {theoretical_regret_bound(p):.6g}")
    print(f"min_ucb_constant {floor:.6g}")
    print(f"ucb_c {p.c:.6g} ({'meets' if p.c >= floor else 'below'} the floor by a factor {floor / p.c:.3g})")
    return 0


def cmd_oracle_check(args) -> int:
    results = oracle_check(args.instances, args.max_nodes, args.max_edges, args.budget, args.oracle_sims, args.seed)
    bound = 1.0 - 1.0 / np.e
    print("instance,n_nodes,n_edges,K,optimum,greedy_exact,greedy_mc,ratio_exact,ratio_mc")
    for i, r in enumerate(results):
        print(
            f"{i},{r.n_nodes},{r.n_edges},{r.K},{r.optimum:.6f},{r.greedy_exact:.6f},"
            f"{r.greedy_mc:.6f},{r.ratio_exact:.4f},{r.ratio_mc:.4f}"
        )
    exact_ok = sum(r.ratio_exact >= bound for r in results)
    mc_ok = sum(r.ratio_mc >= args.eta for r in results)
    print(f"# exact greedy >= (1-1/e) optimum: {exact_ok}/{len(results)}")
    print(f"# MC greedy >= eta optimum: {mc_ok}/{len(results)}")
    return 0 if exact_ok == len(results) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run": cmd_run, "bound": cmd_bound, "oracle-check": cmd_oracle_check}
    try:
        return handlers[args.command](args)
    except TensorUCBError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
