"""Command-line front end.

Exit codes: 0 on success, 1 on configuration errors, 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import harness
from .engine import ConfigurationError


def _apply_run_overrides(args, config):
    if args.policy is not None:
        if args.policy not in harness.POLICY_NAMES:
            raise ConfigurationError(f"unknown policy {args.policy!r}")
        config = replace(config, policy=args.policy)
    if args.reward is not None:
        config = replace(config, reward_index=args.reward,
                         sac=replace(config.sac, reward_index=args.reward))
    if args.reward_literal:
        config = replace(config, reward_literal=True,
                         sac=replace(config.sac, reward_literal=True))
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    return config


def _cmd_run(args) -> int:
    config, warnings = harness.load_config(args.config)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    config = _apply_run_overrides(args, config)
    result = harness.run_experiment(config, seed=args.seed)
    last = result.summaries[-1]
    print(f"run complete: policy={config.policy} seed={result.seed} "
          f"episodes={config.episodes} out={result.out_dir}")
    print(f"last episode: fairness={last.fairness_index:.4f} "
          f"avg_rw={last.avg_residual_workload:.4f} "
          f"max_rw={last.max_residual_workload:.4f} "
          f"mean_reward={last.mean_reward:.4f}")
    return 0


def _parse_list(raw, conv):
    return tuple(conv(x) for x in raw.split(",") if x.strip())


def _cmd_sweep(args) -> int:
    config, warnings = harness.load_config(args.config)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    manifest_rates, manifest_policies, manifest_seeds = harness.load_sweep_lists(args.config)
    rates = _parse_list(args.rates, float) if args.rates else manifest_rates
    policies = _parse_list(args.policies, str) if args.policies else manifest_policies
    seeds = _parse_list(args.seeds, int) if args.seeds else manifest_seeds
    if not rates or not policies or not seeds:
        raise ConfigurationError(
            "sweep needs --rates/--policies/--seeds or a [sweep] section in the config")
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    result = harness.run_sweep(config, rates, policies, seeds)
    print(f"sweep complete: {len(result.cells)} cells, out={result.out_dir}")
    failed = [c for c in result.cells if c.status != "ok"]
    for cell in failed:
        print(f"cell failed: policy={cell.policy} rate={cell.rate}: {cell.status}",
              file=sys.stderr)
    return 0


def _cmd_validate(args) -> int:
    config, warnings = harness.load_config(args.config)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print("config ok")
    print(harness.config_to_manifest(config), end="")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lbsim",
        description="Load-balancing simulator: classical and SAC-learned dispatch.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment (one seed)")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--policy", default=None)
    p_run.add_argument("--reward", choices=sorted(["jain", "g", "bossaer"]), default=None)
    p_run.add_argument("--reward-literal", action="store_true",
                       help="emit the literal 1 - F reward instead of F - 1")
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run policies x rates x seeds")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--rates", default=None, help="comma list, e.g. 0.6,0.8,1.0")
    p_sweep.add_argument("--policies", default=None, help="comma list of policy names")
    p_sweep.add_argument("--seeds", default=None, help="comma list of integer seeds")
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_val = sub.add_parser("validate", help="parse and echo a config")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=_cmd_validate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
