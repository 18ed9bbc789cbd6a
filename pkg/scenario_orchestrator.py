#!/usr/bin/env python3
"""
scenario_orchestrator.py — Dispatch compiled agent scripts on a shared clock.

Architecture:
  CompiledScenario.scripts ─▶ one asyncio worker per agent (own queue, in order)
                              │  wait for the scheduled time on the shared clock
                              │  wait for every dependency to complete
                              │    any dependency not ok → record `skipped`
                              ▼
                           executor(agent, action)   ← injected; runs in a thread
                              │
                              ▼
                           Orchestrator._complete()  sole writer of dispatch state

Before anything runs, per-agent order ∪ dependency edges is checked for
cycles (Kahn).  Executor exceptions are recorded as failures of that action
only; other agents keep going.  Wait actions are shortened by the clock's
acceleration factor so an accelerated run stays accelerated.
"""

from __future__ import annotations

import asyncio
import inspect
import logging
import threading
import time
from abc import ABC, abstractmethod
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Awaitable, Callable, Iterable, Optional, Union

import numpy as np

from agent_actions import ActionBudget, ActionExecutor, Outcome, UnitAction
from agent_profile import EnvironmentProfile
from humanizer import HumanizerConfig
from lifesim_errors import LifeSimError
from rfb_channel import Channel
from scenario_canvas import CompiledScenario, ScheduledAction
from scenario_graph import DanglingReference

logger = logging.getLogger("lifesim.orchestrator")

ExecutorFn = Callable[[str, UnitAction], Union[Outcome, Awaitable[Outcome]]]


class CyclicDependencies(LifeSimError):
    code = "cyclic-dependencies"

    def __init__(self, keys: list[str]):
        super().__init__(f"dependency cycle through {len(keys)} actions: {', '.join(keys[:6])}",
                         keys=keys)
        self.keys = keys


# ─── Clocks ───────────────────────────────────────────────────────────────────

class ScenarioClock(ABC):
    """Scenario time in milliseconds since the run started, scaled by `accel`."""

    def __init__(self, accel: float = 1.0):
        if accel <= 0:
            raise ValueError("clock acceleration must be positive")
        self.accel = accel

    @abstractmethod
    def start(self) -> None: ...

    @abstractmethod
    def now(self) -> float: ...

    @abstractmethod
    async def sleep_until(self, t_ms: float) -> None: ...


class WallClock(ScenarioClock):

    def __init__(self, accel: float = 1.0):
        super().__init__(accel)
        self._t0 = time.monotonic()

    def start(self) -> None:
        self._t0 = time.monotonic()

    def now(self) -> float:
        return (time.monotonic() - self._t0) * 1000.0 * self.accel

    async def sleep_until(self, t_ms: float) -> None:
        delay = (t_ms - self.now()) / self.accel / 1000.0
        if delay > 0:
            await asyncio.sleep(delay)


class VirtualClock(ScenarioClock):
    """
    Never sleeps: time jumps forward to whatever a worker waits for and never
    goes back.  Used to run long canvases in tests.
    """

    def __init__(self, accel: float = 1.0):
        super().__init__(accel)
        self._now = 0.0
        self._lock = threading.Lock()

    def start(self) -> None:
        self._now = 0.0

    def now(self) -> float:
        return self._now

    async def sleep_until(self, t_ms: float) -> None:
        with self._lock:
            self._now = max(self._now, t_ms)
        await asyncio.sleep(0)


# ─── Report ───────────────────────────────────────────────────────────────────

@dataclass
class DispatchRecord:
    key:          str
    agent:        str
    action:       str
    scheduled_ms: int
    dispatched_ms: float
    status:       str              # "ok" | "retried" | "failed" | "skipped"
    retries:      int = 0
    reason:       Optional[str] = None
    wall_ms:      float = 0.0

    @property
    def ok(self) -> bool:
        return self.status in ("ok", "retried")

    def as_dict(self) -> dict:
        out = {"key": self.key, "agent": self.agent, "action": self.action,
               "scheduled_ms": self.scheduled_ms, "dispatched_ms": round(self.dispatched_ms, 1),
               "status": self.status, "retries": self.retries, "wall_ms": round(self.wall_ms, 1)}
        if self.reason:
            out["reason"] = self.reason
        return out


@dataclass
class OrchestrationReport:
    records: list[DispatchRecord] = field(default_factory=list)    # dispatch order
    wall_s:  float = 0.0

    def by_key(self) -> dict[str, DispatchRecord]:
        return {r.key: r for r in self.records}

    @property
    def counts(self) -> dict[str, int]:
        out: dict[str, int] = defaultdict(int)
        for r in self.records:
            out[r.status] += 1
        return dict(out)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.records)

    def as_dict(self) -> dict:
        return {"ok": self.ok, "wall_s": round(self.wall_s, 3), "counts": self.counts,
                "records": [r.as_dict() for r in self.records]}


# ─── Dependency graph ─────────────────────────────────────────────────────────

def check_acyclic(scripts: dict[str, list[ScheduledAction]], edges: list[tuple[str, str]]) -> None:
    """Kahn's algorithm over per-agent order ∪ edges; raises on any cycle."""
    nodes = [s.key for items in scripts.values() for s in items]
    known = set(nodes)
    succ: dict[str, list[str]] = defaultdict(list)
    indeg = {k: 0 for k in nodes}
    for items in scripts.values():
        for a, b in zip(items, items[1:]):
            succ[a.key].append(b.key)
            indeg[b.key] += 1
    for a, b in edges:
        for k in (a, b):
            if k not in known:
                raise DanglingReference(k, f"dependency edge {a} → {b}")
        succ[a].append(b)
        indeg[b] += 1
    ready = deque(k for k in nodes if indeg[k] == 0)
    seen = 0
    while ready:
        k = ready.popleft()
        seen += 1
        for nxt in succ[k]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if seen != len(nodes):
        raise CyclicDependencies(sorted(k for k, d in indeg.items() if d > 0))


# ─── Orchestrator ─────────────────────────────────────────────────────────────

class Orchestrator:
    """
    Usage:
        orch = Orchestrator(compiled, executor=session_executor(sessions, profiles),
                            clock=WallClock(accel=60))
        report = asyncio.run(orch.run())
    """

    def __init__(self, compiled: CompiledScenario, executor: ExecutorFn,
                 clock: Optional[ScenarioClock] = None):
        check_acyclic(compiled.scripts, compiled.edges)
        self.compiled = compiled
        self.executor = executor
        self.clock = clock or WallClock()
        self._deps: dict[str, list[str]] = defaultdict(list)
        for a, b in compiled.edges:
            self._deps[b].append(a)
        self._done: dict[str, asyncio.Event] = {}
        self._status: dict[str, DispatchRecord] = {}
        self._records: list[DispatchRecord] = []

    # ── State (event-loop thread only) ────────────────────────────────────────

    def _dispatched(self, item: ScheduledAction, status: str = "running") -> DispatchRecord:
        rec = DispatchRecord(item.key, item.agent, item.action.describe(), item.at_ms,
                             self.clock.now(), status)
        self._records.append(rec)
        return rec

    def _complete(self, rec: DispatchRecord) -> None:
        self._status[rec.key] = rec
        self._done[rec.key].set()

    # ── Workers ───────────────────────────────────────────────────────────────

    async def _call(self, agent: str, action: UnitAction) -> Outcome:
        if inspect.iscoroutinefunction(self.executor):
            return await self.executor(agent, action)
        return await asyncio.to_thread(self.executor, agent, action)

    async def _worker(self, agent: str, queue: asyncio.Queue) -> None:
        while True:
            item: Optional[ScheduledAction] = await queue.get()
            if item is None:          # poison pill
                queue.task_done()
                break
            try:
                await self.clock.sleep_until(item.at_ms)
                for dep in self._deps.get(item.key, []):
                    await self._done[dep].wait()
                blocked = [d for d in self._deps.get(item.key, []) if not self._status[d].ok]
                if blocked:
                    rec = self._dispatched(item, "skipped")
                    rec.reason = f"dependency {blocked[0]} {self._status[blocked[0]].status}"
                    logger.info("%s skipped: %s", item.key, rec.reason)
                    self._complete(rec)
                    continue

                action = item.action
                if action.action == "wait":
                    action = replace(action, ms=int(action.ms / self.clock.accel))
                rec = self._dispatched(item)
                started = time.monotonic()
                try:
                    outcome = await self._call(agent, action)
                    rec.status, rec.retries, rec.reason = outcome.status, outcome.retries, outcome.reason
                except LifeSimError as exc:
                    rec.status, rec.reason = "failed", exc.code
                    logger.warning("agent %s: %s failed: %s", agent, item.key, exc)
                except Exception as exc:
                    rec.status, rec.reason = "failed", f"{type(exc).__name__}: {exc}"
                    logger.error("agent %s: %s crashed: %s", agent, item.key, exc)
                rec.wall_ms = (time.monotonic() - started) * 1000.0
                self._complete(rec)
            finally:
                queue.task_done()

    # ── Lifecycle ─────────────────────────────────────────────────────────────

    async def run(self) -> OrchestrationReport:
        scripts = self.compiled.scripts
        self._done = {s.key: asyncio.Event() for items in scripts.values() for s in items}
        self._status.clear()
        self._records = []
        queues: dict[str, asyncio.Queue] = {}
        for agent, items in scripts.items():
            q: asyncio.Queue = asyncio.Queue()
            for item in items:
                q.put_nowait(item)
            q.put_nowait(None)
            queues[agent] = q
        self.clock.start()
        started = time.monotonic()
        workers = [asyncio.create_task(self._worker(a, q), name=f"agent-{a}")
                   for a, q in queues.items()]
        logger.info("orchestrating %d agents, %d actions, %d edges (accel ×%g)", len(workers),
                    len(self._done), len(self.compiled.edges), self.clock.accel)
        await asyncio.gather(*workers)
        report = OrchestrationReport(list(self._records), time.monotonic() - started)
        logger.info("orchestration finished in %.1fs: %s", report.wall_s, report.counts)
        return report


def orchestrate(compiled: CompiledScenario, executor: ExecutorFn,
                clock: Optional[ScenarioClock] = None) -> OrchestrationReport:
    return asyncio.run(Orchestrator(compiled, executor, clock).run())


# ─── Default executor ─────────────────────────────────────────────────────────

def session_executor(sessions: dict[str, Channel], profiles: dict[str, EnvironmentProfile],
                     cfg: Optional[HumanizerConfig] = None, budget: ActionBudget = ActionBudget(),
                     seed: Optional[int] = None,
                     unavailable: Iterable[str] = ()) -> Callable[[str, UnitAction], Outcome]:
    """
    One ActionExecutor per agent, created on first use; each agent has its own rng stream.

    Agents listed in `unavailable` (their desk could not be reached) get
    failed(session-unavailable) for every action, so their dependents are
    skipped while everyone else runs normally.
    """
    executors: dict[str, ActionExecutor] = {}
    lock = threading.Lock()
    down = set(unavailable) - set(sessions)
    agents = sorted(set(sessions) | down)
    streams = dict(zip(agents, np.random.SeedSequence(seed).spawn(len(agents))))

    def _run(agent: str, action: UnitAction) -> Outcome:
        if agent in down:
            return Outcome("failed", 0, "session-unavailable")
        with lock:
            ex = executors.get(agent)
            if ex is None:
                profile = profiles[agent]
                ex = ActionExecutor(sessions[agent], profile, cfg,
                                    budget, np.random.default_rng(streams[agent]))
                executors[agent] = ex
        return ex.execute(action).outcome

    return _run
