"""Event-driven simulator for heterogeneous blocked processor-sharing servers.

A server with p processors and concurrency cap p_hat serves up to p_hat
tasks at once; each in-service task progresses at speed 1 when the ongoing
count is <= p and at p / min(p_hat, count) otherwise, and overflow waits in
a FIFO backlog at speed zero.  The engine keeps one pending completion event
per server (for the minimum remaining work at the current shared speed) and
reschedules it whenever membership changes, which is equivalent to per-task
completion events because the shared speed preserves remaining-work order.

Each load balancer observes only its own arrivals, dispatches and
completions through a LocalView; policies never see another LB's state.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from heapq import heappush, heappop
from typing import Callable, Optional, Sequence

import numpy as np

from . import metrics
from .policies import Policy, PolicyContext


class ConfigurationError(ValueError):
    """Invalid topology, parameters, or policy wiring."""


class SimulationError(RuntimeError):
    """Internal invariant violation inside the event engine."""


@dataclass(slots=True)
class Task:
    """One unit of work: ``workload`` seconds of single-processor time."""

    id: int
    workload: float
    arrival_time: float
    lb_id: int = -1
    server_id: Optional[int] = None
    dispatch_time: Optional[float] = None
    service_start_time: Optional[float] = None
    completion_time: Optional[float] = None
    remaining_work: float = 0.0

    def __post_init__(self):
        if self.workload <= 0:
            raise ConfigurationError(f"task workload must be positive, got {self.workload}")
        self.remaining_work = self.workload


class ServerState:
    """Mutable server: in-service task list, FIFO backlog, lazy clock."""

    __slots__ = ("id", "p", "p_hat", "in_service", "backlog", "backlog_work",
                 "last_update_time", "token")

    def __init__(self, server_id: int, p: int, p_hat: int):
        if p < 1:
            raise ConfigurationError(f"server {server_id}: p must be >= 1, got {p}")
        if p_hat < p:
            raise ConfigurationError(f"server {server_id}: p_hat {p_hat} < p {p}")
        self.id = server_id
        self.p = p
        self.p_hat = p_hat
        self.in_service: list[Task] = []
        self.backlog: deque[Task] = deque()
        self.backlog_work = 0.0
        self.last_update_time = 0.0
        self.token = 0

    @property
    def ongoing_count(self) -> int:
        return len(self.in_service) + len(self.backlog)


@dataclass(frozen=True)
class Topology:
    """Cluster shape: LB count and per-server (p, p_hat) pairs."""

    lbs: int
    servers: tuple
    lb_routing_seed: int = 0

    def __post_init__(self):
        if self.lbs < 1:
            raise ConfigurationError(f"need at least one LB, got {self.lbs}")
        if not self.servers:
            raise ConfigurationError("need at least one server")
        for j, (p, p_hat) in enumerate(self.servers):
            if p < 1 or p_hat < p:
                raise ConfigurationError(f"server {j}: invalid (p={p}, p_hat={p_hat})")

    @property
    def n_servers(self) -> int:
        return len(self.servers)

    @property
    def processor_counts(self) -> list:
        return [p for p, _ in self.servers]


def server_speed(count: int, p: int, p_hat: int) -> float:
    """Per-task speed of a server with ``count`` ongoing tasks.

    1 when count <= p, else p / min(p_hat, count).  In-service tasks all
    share this speed; backlogged tasks progress at speed zero.
    """
    if count < 0 or p < 1 or p_hat < p:
        raise ConfigurationError(f"invalid speed parameters (count={count}, p={p}, p_hat={p_hat})")
    if count <= p:
        return 1.0
    return p / (p_hat if count > p_hat else count)


def advance_server(server: ServerState, to_time: float) -> ServerState:
    """Advance the server clock, draining in-service work at the shared speed.

    Valid only while membership is unchanged since the last update; the
    engine guarantees that by advancing on every membership event.
    """
    dt = to_time - server.last_update_time
    if dt < 0:
        raise SimulationError(f"server {server.id}: time moved backwards by {-dt}")
    if dt == 0.0:
        return server
    ins = server.in_service
    if ins:
        dec = server_speed(len(ins) + len(server.backlog), server.p, server.p_hat) * dt
        for task in ins:
            r = task.remaining_work - dec
            task.remaining_work = r if r > 0.0 else 0.0
    server.last_update_time = to_time
    return server


def dispatch(task: Task, server: ServerState, now: float) -> ServerState:
    """Place a task on a server: into service if a slot is free, else backlog."""
    if task.dispatch_time is not None:
        raise SimulationError(f"task {task.id} already dispatched")
    advance_server(server, now)
    task.server_id = server.id
    task.dispatch_time = now
    if len(server.in_service) < server.p_hat:
        task.service_start_time = now
        server.in_service.append(task)
    else:
        server.backlog.append(task)
        server.backlog_work += task.workload
    return server


def residual_workload(server: ServerState, now: Optional[float] = None) -> float:
    """Remaining work on the server in single-processor seconds (unit speed).

    Sums remaining work over in-service and backlogged tasks; the server must
    already be advanced to ``now`` when a time is given.
    """
    if now is not None and now != server.last_update_time:
        raise SimulationError(
            f"server {server.id} not advanced to {now} (at {server.last_update_time})")
    total = server.backlog_work
    for task in server.in_service:
        total += task.remaining_work
    return total


class ChannelLog:
    """Timed sample channel with O(1) discounted-sum accumulators.

    Full sample lists are kept only when ``collect`` is set (needed for the
    percentile/std reductions used by observation building); the discounted
    accumulators are always maintained for reward computation.
    """

    __slots__ = ("collect", "values", "times", "count", "_dsum", "_dweight", "_last_t")

    def __init__(self, collect: bool):
        self.collect = collect
        self.values: list = []
        self.times: list = []
        self.count = 0
        self._dsum = 0.0
        self._dweight = 0.0
        self._last_t = 0.0

    def add(self, value: float, now: float) -> None:
        if self.collect:
            self.values.append(value)
            self.times.append(now)
        if self.count:
            decay = metrics.DISCOUNT_BASE ** (now - self._last_t)
            self._dsum = self._dsum * decay + value
            self._dweight = self._dweight * decay + 1.0
        else:
            self._dsum = value
            self._dweight = 1.0
        self._last_t = now
        self.count += 1

    def discounted_average(self, now: float) -> float:
        if not self.count:
            return 0.0
        return self._dsum * metrics.DISCOUNT_BASE ** (now - self._last_t) / self.count

    def stats(self, now: float) -> metrics.ChannelStats:
        if not self.count:
            return metrics.ChannelStats()
        if not self.collect:
            raise SimulationError("channel was not collecting samples")
        return metrics.reduce_arrays(
            np.asarray(self.values, dtype=float), np.asarray(self.times, dtype=float), now)


class LocalView:
    """Everything one LB can see: its arrivals, ongoing counts, completions."""

    __slots__ = ("lb_id", "n", "ongoing", "last_arrival_time", "interarrival",
                 "durations", "tcts")

    def __init__(self, lb_id: int, n_servers: int, collect: bool):
        self.lb_id = lb_id
        self.n = n_servers
        self.ongoing = [0] * n_servers
        self.last_arrival_time: Optional[float] = None
        self.interarrival = ChannelLog(collect)
        self.durations = [ChannelLog(collect) for _ in range(n_servers)]
        self.tcts = [ChannelLog(collect) for _ in range(n_servers)]

    def record_arrival(self, now: float) -> None:
        if self.last_arrival_time is not None:
            self.interarrival.add(now - self.last_arrival_time, now)
        self.last_arrival_time = now

    def record_completion(self, task: Task, now: float) -> None:
        sid = task.server_id
        self.ongoing[sid] -= 1
        self.durations[sid].add(now - task.service_start_time, now)
        self.tcts[sid].add(now - task.arrival_time, now)

    def tct_discounted(self, now: float) -> list:
        return [ch.discounted_average(now) for ch in self.tcts]


@dataclass
class EpisodeTrace:
    """Per-step metric rows plus every task touched by the episode."""

    step_rows: list          # (time, lb_id, server_id, residual, ongoing, reward, fairness)
    tasks: list
    servers: list
    duration: float
    step_interval: float
    boundaries_per_lb: list
    completed: int
    fairness_per_boundary: list      # one value per boundary time
    residuals_per_boundary: list     # one list (per server) per boundary time
    rewards: list                    # (time, lb_id, reward), one per (boundary, lb)


_ARRIVAL, _COMPLETION, _STEP, _END = 0, 1, 2, 3


def run_episode(
    topology: Topology,
    policies: Sequence[Policy],
    arrivals: Sequence[Task],
    duration: float,
    step_interval: float = 0.5,
    routing_rng: Optional[np.random.Generator] = None,
    reward_fn: Optional[Callable] = None,
    residual_norm: str = "processors",
) -> EpisodeTrace:
    """Run one episode and return its trace.

    Events are processed in (time, insertion sequence) order until the clock
    reaches ``duration``.  Step boundaries fire per LB at 0, step_interval,
    2*step_interval, ...; the boundary at exactly ``duration`` is excluded.
    With several LBs, each arrival is routed to one of them uniformly at
    random from ``routing_rng``.
    """
    if duration <= 0:
        raise ConfigurationError(f"duration must be positive, got {duration}")
    if step_interval <= 0:
        raise ConfigurationError(f"step interval must be positive, got {step_interval}")
    if len(policies) != topology.lbs:
        raise ConfigurationError(
            f"need one policy per LB: {topology.lbs} LBs, {len(policies)} policies")
    if residual_norm not in ("processors", "unit"):
        raise ConfigurationError(f"unknown residual norm {residual_norm!r}")
    if topology.lbs > 1 and routing_rng is None:
        raise ConfigurationError("multi-LB topologies need a routing rng")
    if reward_fn is None:
        reward_fn = metrics.reward

    n = topology.n_servers
    servers = [ServerState(j, p, p_hat) for j, (p, p_hat) in enumerate(topology.servers)]
    views = [LocalView(i, n, policies[i].wants_observations) for i in range(topology.lbs)]
    ctxs = [PolicyContext(ongoing=views[i].ongoing,
                          weights=list(policies[i].initial_weights(topology)),
                          rng=policies[i].rng)
            for i in range(topology.lbs)]
    norm_div = [float(p) for p, _ in topology.servers] if residual_norm == "processors" \
        else [1.0] * n

    events: list = []
    seq = 0

    def push(time, kind, a=0, b=0):
        nonlocal seq
        heappush(events, (time, seq, kind, a, b))
        seq += 1

    def reschedule(server: ServerState, now: float) -> None:
        server.token += 1
        ins = server.in_service
        if ins:
            m = ins[0].remaining_work
            for t in ins:
                if t.remaining_work < m:
                    m = t.remaining_work
            speed = server_speed(len(ins) + len(server.backlog), server.p, server.p_hat)
            push(now + m / speed, _COMPLETION, server.id, server.token)

    push(duration, _END)
    for i in range(topology.lbs):
        push(0.0, _STEP, i)
    if arrivals:
        push(arrivals[0].arrival_time, _ARRIVAL, 0)

    step_rows: list = []
    fairness_per_boundary: list = []
    residuals_per_boundary: list = []
    rewards: list = []
    boundaries = [0] * topology.lbs
    completed = 0
    multi_lb = topology.lbs > 1

    cached_resid_time = -1.0
    cached_resid: list = []
    cached_fairness = 1.0

    while events:
        time, _, kind, a, b = heappop(events)

        if kind == _COMPLETION:
            server = servers[a]
            if b != server.token:
                continue
            advance_server(server, time)
            ins = server.in_service
            mi = 0
            mv = ins[0].remaining_work
            for i in range(1, len(ins)):
                if ins[i].remaining_work < mv:
                    mv = ins[i].remaining_work
                    mi = i
            task = ins.pop(mi)
            task.remaining_work = 0.0
            task.completion_time = time
            if server.backlog:
                promoted = server.backlog.popleft()
                # exact zero when the queue drains, so float dust cannot
                # leave a negative accumulated backlog
                server.backlog_work = (server.backlog_work - promoted.workload
                                       if server.backlog else 0.0)
                promoted.service_start_time = time
                ins.append(promoted)
            views[task.lb_id].record_completion(task, time)
            completed += 1
            reschedule(server, time)

        elif kind == _ARRIVAL:
            task = arrivals[a]
            if a + 1 < len(arrivals):
                push(arrivals[a + 1].arrival_time, _ARRIVAL, a + 1)
            lb = int(routing_rng.integers(topology.lbs)) if multi_lb else 0
            task.lb_id = lb
            view = views[lb]
            view.record_arrival(time)
            ctx = ctxs[lb]
            sid = policies[lb].select(ctx)
            if not 0 <= sid < n:
                raise ConfigurationError(f"policy {policies[lb].name} chose server {sid}")
            dispatch(task, servers[sid], time)
            view.ongoing[sid] += 1
            reschedule(servers[sid], time)

        elif kind == _STEP:
            lb = a
            for server in servers:
                advance_server(server, time)
            if time != cached_resid_time:
                cached_resid = [residual_workload(servers[j]) / norm_div[j] for j in range(n)]
                cached_fairness = metrics.jain(cached_resid)
                cached_resid_time = time
                fairness_per_boundary.append(cached_fairness)
                residuals_per_boundary.append(cached_resid)
            view = views[lb]
            step_reward, new_weights = policies[lb].on_step(view, time)
            if new_weights is not None:
                ctxs[lb].weights = new_weights
            if step_reward is None:
                step_reward = reward_fn(view.tct_discounted(time))
            rewards.append((time, lb, step_reward))
            ongoing = view.ongoing
            resid = cached_resid
            fairness = cached_fairness
            for j in range(n):
                step_rows.append((time, lb, j, resid[j], ongoing[j], step_reward, fairness))
            boundaries[lb] += 1
            nxt = time + step_interval
            if nxt < duration:
                push(nxt, _STEP, lb)

        else:  # _END
            for server in servers:
                advance_server(server, time)
            for i in range(topology.lbs):
                policies[i].on_episode_end(views[i], time)
            break

    return EpisodeTrace(
        step_rows=step_rows,
        tasks=list(arrivals),
        servers=servers,
        duration=duration,
        step_interval=step_interval,
        boundaries_per_lb=boundaries,
        completed=completed,
        fairness_per_boundary=fairness_per_boundary,
        residuals_per_boundary=residuals_per_boundary,
        rewards=rewards,
    )
