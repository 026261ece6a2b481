"""Experiment harness: config parsing, runs, sweeps, and CSV artifacts.

Configs are flat INI-style key/value files with section headers so that
manifests stay diffable.  A run executes a growing-duration episode schedule
with persistent agents and emits steps.csv (one row per step boundary, LB
and server), episodes.csv (one summary row per episode), cdf.csv (sorted
residual-workload samples of the last episode), final checkpoints for
learning policies, and a manifest that reproduces the run exactly.  A sweep
runs the cartesian product of policies x rates x seeds in parallel worker
processes and reports per-cell medians in table.csv.
"""
from __future__ import annotations

import configparser
import io
import math
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import metrics, traffic
from .agent import SacAgent, SacConfig, SacPolicy
from .engine import ConfigurationError, Topology, run_episode
from .policies import BASELINE_POLICIES

WORKERS_ENV = "LBSIM_WORKERS"

# Canonical topologies: half the servers have 4 processors, half have 2,
# and the concurrency cap defaults to twice the processor count.
PRESETS = {
    "1lb-2s": (1, (4, 2)),
    "1lb-4s": (1, (4, 4, 2, 2)),
    "2lb-4s": (2, (4, 4, 2, 2)),
    "1lb-8s": (1, (4, 4, 4, 4, 2, 2, 2, 2)),
    "2lb-8s": (2, (4, 4, 4, 4, 2, 2, 2, 2)),
}

POLICY_NAMES = ("ecmp", "wcmp", "lsq", "sed", "rlb-sac")


@dataclass(frozen=True)
class ExperimentConfig:
    lbs: int = 1
    servers: tuple = ()
    rate_fraction: float = 0.9
    distribution: str = traffic.IDENTICAL
    mean_workload: float = 0.1
    policy: str = "rlb-sac"
    episodes: int = 20
    step_interval: float = 0.5
    first_episode_duration: float = 60.0
    episode_increment: float = 5.0
    seeds: tuple = (0,)
    reward_index: str = "jain"
    reward_literal: bool = False
    residual_norm: str = "processors"
    tie_break: str = "random"
    out_dir: str = "out"
    sac: SacConfig = field(default_factory=SacConfig)

    def topology(self, seed: int) -> Topology:
        return Topology(self.lbs, self.servers, lb_routing_seed=seed)

    def traffic_spec(self, seed: int) -> traffic.TrafficSpec:
        return traffic.TrafficSpec(self.rate_fraction, self.distribution,
                                   self.mean_workload, seed)


@dataclass
class EpisodeSummary:
    episode: int
    fairness_index: float
    avg_residual_workload: float
    max_residual_workload: float
    mean_reward: float
    wall_clock_s: float


@dataclass
class RunResult:
    seed: int
    summaries: list
    out_dir: Optional[str]
    config: ExperimentConfig


@dataclass
class SweepCell:
    policy: str
    rate: float
    fairness_index: float
    avg_residual_workload: float
    max_residual_workload: float
    status: str
    seeds: tuple


@dataclass
class SweepResult:
    cells: list
    out_dir: Optional[str]


# --------------------------------------------------------------------------
# Config parsing


def _parse_servers(text: str) -> tuple:
    servers = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" in chunk:
            p_s, cap_s = chunk.split(":", 1)
            p, cap = int(p_s), int(cap_s)
        else:
            p = int(chunk)
            cap = 2 * p
        servers.append((p, cap))
    return tuple(servers)


def _get(parser, section, key, conv, default):
    if parser.has_option(section, key):
        raw = parser.get(section, key)
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigurationError(f"[{section}] {key}: cannot parse {raw!r}") from exc
    return default


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _int_list(raw: str) -> tuple:
    return tuple(int(x) for x in raw.split(",") if x.strip())


def _float_list(raw: str) -> tuple:
    return tuple(float(x) for x in raw.split(",") if x.strip())


def _str_list(raw: str) -> tuple:
    return tuple(x.strip() for x in raw.split(",") if x.strip())


def validate_config(text: str) -> tuple:
    """Parse config text, apply defaults, and validate.

    Returns (config, warnings).  Topology is the only required section; all
    other fields fall back to the published training defaults.
    """
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"config parse error: {exc}") from exc

    warnings = []

    if parser.has_option("topology", "preset"):
        preset = parser.get("topology", "preset").strip()
        if preset not in PRESETS:
            raise ConfigurationError(
                f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}")
        lbs, plain = PRESETS[preset]
        servers = tuple((p, 2 * p) for p in plain)
    elif parser.has_option("topology", "servers"):
        lbs = _get(parser, "topology", "lbs", int, 1)
        servers = _parse_servers(parser.get("topology", "servers"))
    else:
        raise ConfigurationError("topology missing: set [topology] preset or servers")

    if lbs < 1:
        raise ConfigurationError(f"lbs must be >= 1, got {lbs}")
    if not servers:
        raise ConfigurationError("server list is empty")
    for j, (p, cap) in enumerate(servers):
        if p < 1:
            raise ConfigurationError(f"server {j}: p must be >= 1, got {p}")
        if cap < p:
            raise ConfigurationError(f"server {j}: p_hat {cap} < p {p}")

    rate = _get(parser, "traffic", "rate", float, 0.9)
    if rate <= 0:
        raise ConfigurationError(f"traffic rate must be positive, got {rate}")
    if rate > 1.0:
        warnings.append(f"traffic rate {rate} exceeds capacity: overload regime")
    distribution = _get(parser, "traffic", "distribution", str, traffic.IDENTICAL).strip()
    if distribution not in (traffic.IDENTICAL, traffic.EXPONENTIAL):
        raise ConfigurationError(f"unknown distribution {distribution!r}")
    mean_workload = _get(parser, "traffic", "mean", float, 0.1)
    if mean_workload <= 0:
        raise ConfigurationError(f"mean workload must be positive, got {mean_workload}")

    policy = _get(parser, "run", "policy", str, "rlb-sac").strip()
    if policy not in POLICY_NAMES:
        raise ConfigurationError(
            f"unknown policy {policy!r}; available: {', '.join(POLICY_NAMES)}")
    episodes = _get(parser, "run", "episodes", int, 20)
    if episodes < 1:
        raise ConfigurationError(f"episodes must be >= 1, got {episodes}")
    reward_index = _get(parser, "run", "reward", str, "jain").strip()
    if reward_index not in metrics.FAIRNESS_INDICES:
        raise ConfigurationError(f"unknown fairness index {reward_index!r}")
    residual_norm = _get(parser, "run", "residual_norm", str, "processors").strip()
    if residual_norm not in ("processors", "unit"):
        raise ConfigurationError(f"unknown residual norm {residual_norm!r}")
    tie_break = _get(parser, "run", "tie_break", str, "random").strip()
    if tie_break not in ("random", "lowest"):
        raise ConfigurationError(f"unknown tie break {tie_break!r}")

    step_interval = _get(parser, "run", "step_interval", float, 0.5)
    first_duration = _get(parser, "run", "first_episode_duration", float, 60.0)
    increment = _get(parser, "run", "episode_increment", float, 5.0)
    if step_interval <= 0 or first_duration <= 0 or increment < 0:
        raise ConfigurationError("step_interval and durations must be positive")

    sac = SacConfig(
        learning_rate=_get(parser, "sac", "learning_rate", float, 1e-3),
        batch_size=_get(parser, "sac", "batch_size", int, 64),
        buffer_capacity=_get(parser, "sac", "buffer_capacity", int, 3000),
        gamma=_get(parser, "sac", "gamma", float, 0.99),
        tau=_get(parser, "sac", "tau", float, 0.005),
        hidden=_get(parser, "sac", "hidden", int, 64),
        updates_per_step=_get(parser, "sac", "updates_per_step", int, 1),
        log_alpha_init=_get(parser, "sac", "log_alpha_init", float, math.log(0.2)),
        log_std_init=_get(parser, "sac", "log_std_init", float, 0.0),
        include_duration=not _get(parser, "sac", "strict_observability", _bool, False),
        reward_index=reward_index,
        reward_literal=_get(parser, "run", "reward_literal", _bool, False),
        value_target_uses_guiding_actor=_get(
            parser, "sac", "value_target_uses_guiding_actor", _bool, False),
    )
    if policy == "rlb-sac" and sac.batch_size < 1:
        raise ConfigurationError("batch size must be >= 1")
    if policy != "rlb-sac" and parser.has_section("sac") and parser.options("sac"):
        warnings.append(f"[sac] options are ignored by baseline policy {policy!r}")

    config = ExperimentConfig(
        lbs=lbs,
        servers=servers,
        rate_fraction=rate,
        distribution=distribution,
        mean_workload=mean_workload,
        policy=policy,
        episodes=episodes,
        step_interval=step_interval,
        first_episode_duration=first_duration,
        episode_increment=increment,
        seeds=_get(parser, "run", "seeds", _int_list, (0,)),
        reward_index=reward_index,
        reward_literal=sac.reward_literal,
        residual_norm=residual_norm,
        tie_break=tie_break,
        out_dir=_get(parser, "run", "out", str, "out").strip(),
        sac=sac,
    )
    return config, warnings


def load_config(path: str) -> tuple:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return validate_config(text)


def load_sweep_lists(path: str) -> tuple:
    """Pull the [sweep] section (rates, policies, seeds) out of a manifest."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_string(fh.read())
    if not parser.has_section("sweep"):
        return None, None, None
    rates = _get(parser, "sweep", "rates", _float_list, None)
    policies = _get(parser, "sweep", "policies", _str_list, None)
    seeds = _get(parser, "sweep", "seeds", _int_list, None)
    return rates, policies, seeds


def config_to_manifest(config: ExperimentConfig, seed: Optional[int] = None,
                       sweep: Optional[dict] = None) -> str:
    """Render the fully-resolved config as reproducible INI text."""
    fmt = _fmt_float
    lines = [
        "[topology]",
        f"lbs = {config.lbs}",
        "servers = " + ",".join(f"{p}:{cap}" for p, cap in config.servers),
        "",
        "[traffic]",
        f"rate = {fmt(config.rate_fraction)}",
        f"distribution = {config.distribution}",
        f"mean = {fmt(config.mean_workload)}",
        "",
        "[run]",
        f"policy = {config.policy}",
        f"episodes = {config.episodes}",
        f"step_interval = {fmt(config.step_interval)}",
        f"first_episode_duration = {fmt(config.first_episode_duration)}",
        f"episode_increment = {fmt(config.episode_increment)}",
        "seeds = " + ",".join(str(s) for s in ((seed,) if seed is not None else config.seeds)),
        f"reward = {config.reward_index}",
        f"reward_literal = {str(config.reward_literal).lower()}",
        f"residual_norm = {config.residual_norm}",
        f"tie_break = {config.tie_break}",
        f"out = {config.out_dir}",
        "",
        "[sac]",
        f"learning_rate = {fmt(config.sac.learning_rate)}",
        f"batch_size = {config.sac.batch_size}",
        f"buffer_capacity = {config.sac.buffer_capacity}",
        f"gamma = {fmt(config.sac.gamma)}",
        f"tau = {fmt(config.sac.tau)}",
        f"hidden = {config.sac.hidden}",
        f"updates_per_step = {config.sac.updates_per_step}",
        f"log_alpha_init = {fmt(config.sac.log_alpha_init)}",
        f"log_std_init = {fmt(config.sac.log_std_init)}",
        f"strict_observability = {str(not config.sac.include_duration).lower()}",
        "value_target_uses_guiding_actor = "
        + str(config.sac.value_target_uses_guiding_actor).lower(),
    ]
    if sweep is not None:
        lines += [
            "",
            "[sweep]",
            "rates = " + ",".join(fmt(r) for r in sweep["rates"]),
            "policies = " + ",".join(sweep["policies"]),
            "seeds = " + ",".join(str(s) for s in sweep["seeds"]),
        ]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Running


def _fmt_float(x: float) -> str:
    return f"{x:.17g}"


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def build_policies(config: ExperimentConfig, topology: Topology, seed: int) -> list:
    policies = []
    for lb in range(topology.lbs):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, lb)))
        if config.policy == "rlb-sac":
            agent = SacAgent(topology.n_servers, config.sac, seed, lb_id=lb)
            policy = SacPolicy(agent, tie_break=config.tie_break)
        elif config.policy in BASELINE_POLICIES:
            policy = BASELINE_POLICIES[config.policy](tie_break=config.tie_break)
        else:
            raise ConfigurationError(f"unknown policy {config.policy!r}")
        policies.append(policy.bind(topology, lb, rng))
    return policies


def _summarize(episode: int, trace, wall: float) -> EpisodeSummary:
    if trace.fairness_per_boundary:
        fairness = float(np.mean(trace.fairness_per_boundary))
        flat = [r for resid in trace.residuals_per_boundary for r in resid]
        avg_rw = float(np.mean(flat))
        max_rw = float(np.max(flat))
    else:
        fairness, avg_rw, max_rw = 1.0, 0.0, 0.0
    mean_reward = float(np.mean([r for _, _, r in trace.rewards])) if trace.rewards else 0.0
    return EpisodeSummary(episode, fairness, avg_rw, max_rw, mean_reward, wall)


def run_experiment(config: ExperimentConfig, seed: Optional[int] = None,
                   out_dir: Optional[str] = None, write_files: bool = True) -> RunResult:
    """Execute the full episode schedule for one seed.

    Episode e (0-based) lasts first_episode_duration + e * episode_increment
    seconds; servers reset between episodes while agents, replay buffers and
    input normalizers persist.
    """
    seed = config.seeds[0] if seed is None else seed
    out = out_dir if out_dir is not None else config.out_dir
    topology = config.topology(seed)
    spec = config.traffic_spec(seed)
    policies = build_policies(config, topology, seed)

    def reward_fn(w):
        return metrics.reward(w, config.reward_index, config.reward_literal)

    steps_fh = None
    if write_files:
        os.makedirs(out, exist_ok=True)
        _atomic_write(os.path.join(out, "manifest.ini"),
                      config_to_manifest(config, seed=seed))
        steps_fh = open(os.path.join(out, "steps.csv"), "w")
        steps_fh.write("episode,time,lb_id,server_id,residual_workload,"
                       "ongoing_count,reward,fairness\n")
        for policy in policies:
            if policy.trains:
                policy.agent.dump_dir = out

    summaries = []
    last_residuals: list = []
    try:
        for ep in range(config.episodes):
            duration = config.first_episode_duration + config.episode_increment * ep
            tasks = traffic.generate(spec, topology, duration, episode=ep)
            routing = traffic.routing_stream(seed, ep)
            started = time.perf_counter()
            trace = run_episode(
                topology, policies, tasks, duration,
                step_interval=config.step_interval,
                routing_rng=routing,
                reward_fn=reward_fn,
                residual_norm=config.residual_norm,
            )
            wall = time.perf_counter() - started
            summaries.append(_summarize(ep, trace, wall))
            if steps_fh is not None:
                fmt = _fmt_float
                steps_fh.write("".join(
                    f"{ep},{fmt(t)},{lb},{srv},{fmt(res)},{ong},{fmt(rew)},{fmt(fair)}\n"
                    for t, lb, srv, res, ong, rew, fair in trace.step_rows))
            if ep == config.episodes - 1:
                last_residuals = sorted(
                    r for resid in trace.residuals_per_boundary for r in resid)
    finally:
        if steps_fh is not None:
            steps_fh.close()

    if write_files:
        fmt = _fmt_float
        buf = ["episode,fairness_index,avg_residual_workload,max_residual_workload,"
               "mean_reward,wall_clock_s"]
        buf += [f"{s.episode},{fmt(s.fairness_index)},{fmt(s.avg_residual_workload)},"
                f"{fmt(s.max_residual_workload)},{fmt(s.mean_reward)},{fmt(s.wall_clock_s)}"
                for s in summaries]
        _atomic_write(os.path.join(out, "episodes.csv"), "\n".join(buf) + "\n")

        count = len(last_residuals)
        buf = ["residual_workload,cum_prob"]
        buf += [f"{fmt(r)},{fmt((i + 1) / count)}" for i, r in enumerate(last_residuals)]
        _atomic_write(os.path.join(out, "cdf.csv"), "\n".join(buf) + "\n")

        for lb, policy in enumerate(policies):
            if policy.trains:
                policy.agent.save_checkpoint(os.path.join(out, "checkpoints", f"lb{lb}"))

    return RunResult(seed=seed, summaries=summaries,
                     out_dir=out if write_files else None, config=config)


def _sweep_cell(args) -> tuple:
    config, policy, rate, seed = args
    try:
        cell_config = replace(config, policy=policy, rate_fraction=rate,
                              sac=replace(config.sac))
        result = run_experiment(cell_config, seed=seed, write_files=False)
        last = result.summaries[-1]
        return (policy, rate, seed, last.fairness_index, last.avg_residual_workload,
                last.max_residual_workload, "")
    except Exception as exc:  # recorded per-cell, sweep continues
        return (policy, rate, seed, math.nan, math.nan, math.nan,
                f"{type(exc).__name__}: {exc}")


def run_sweep(config: ExperimentConfig, rates: Sequence[float],
              policies: Sequence[str], seeds: Sequence[int],
              out_dir: Optional[str] = None, workers: Optional[int] = None,
              write_files: bool = True) -> SweepResult:
    """Run policies x rates x seeds and aggregate last-episode medians."""
    if not rates or not policies or not seeds:
        raise ConfigurationError("sweep needs nonempty rates, policies, and seeds")
    for name in policies:
        if name not in POLICY_NAMES:
            raise ConfigurationError(f"unknown policy {name!r} in sweep")
    out = out_dir if out_dir is not None else config.out_dir

    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else (os.cpu_count() or 1)
    workers = max(1, min(workers, len(policies) * len(rates) * len(seeds)))

    jobs = [(config, p, r, s) for p in policies for r in rates for s in seeds]
    if workers == 1:
        outcomes = [_sweep_cell(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_sweep_cell, jobs, chunksize=1))

    by_cell: dict = {}
    for policy, rate, seed, fi, avg, mx, error in outcomes:
        by_cell.setdefault((policy, rate), []).append((seed, fi, avg, mx, error))

    cells = []
    for policy in policies:
        for rate in rates:
            entries = by_cell[(policy, rate)]
            errors = [f"seed {s}: {e}" for s, _, _, _, e in entries if e]
            if errors:
                cells.append(SweepCell(policy, rate, math.nan, math.nan, math.nan,
                                       "; ".join(errors), tuple(seeds)))
            else:
                cells.append(SweepCell(
                    policy, rate,
                    statistics.median(x[1] for x in entries),
                    statistics.median(x[2] for x in entries),
                    statistics.median(x[3] for x in entries),
                    "ok", tuple(seeds)))

    if write_files:
        os.makedirs(out, exist_ok=True)
        fmt = _fmt_float
        buf = ["policy,rate,fairness_index,avg_residual_workload,"
               "max_residual_workload,status"]
        buf += [f"{c.policy},{fmt(c.rate)},{fmt(c.fairness_index)},"
                f"{fmt(c.avg_residual_workload)},{fmt(c.max_residual_workload)},{c.status}"
                for c in cells]
        _atomic_write(os.path.join(out, "table.csv"), "\n".join(buf) + "\n")
        _atomic_write(os.path.join(out, "manifest.ini"), config_to_manifest(
            config, sweep={"rates": list(rates), "policies": list(policies),
                           "seeds": list(seeds)}))
    return SweepResult(cells=cells, out_dir=out if write_files else None)


# --------------------------------------------------------------------------
# CSV readers (round-trip support)


def read_csv(path: str) -> tuple:
    """Read one of the harness's CSVs: returns (header, rows of strings)."""
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    header = lines[0].split(",")
    width = len(header)
    rows = []
    for line in lines[1:]:
        cells = line.split(",", width - 1)
        if len(cells) != width:
            raise ValueError(f"{path}: malformed row {line!r}")
        rows.append(cells)
    return header, rows


def read_steps(path: str) -> list:
    _, rows = read_csv(path)
    return [(int(r[0]), float(r[1]), int(r[2]), int(r[3]), float(r[4]),
             int(r[5]), float(r[6]), float(r[7])) for r in rows]


def read_episodes(path: str) -> list:
    _, rows = read_csv(path)
    return [EpisodeSummary(int(r[0]), float(r[1]), float(r[2]), float(r[3]),
                           float(r[4]), float(r[5])) for r in rows]


def read_table(path: str) -> list:
    _, rows = read_csv(path)
    return [(r[0], float(r[1]), float(r[2]), float(r[3]), float(r[4]), r[5])
            for r in rows]
