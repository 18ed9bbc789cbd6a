#!/usr/bin/env python3
"""
test_scenario.py — Avatar graph, interaction canvases, compilation, orchestration

Tests:
  1.  Graph files: office graph loads, every malformed variant is a typed error
  2.  Canvas generation: Poisson mean over 1 000 seeds, tone, keyword fallbacks
  3.  Canvas invariants: replies, window clipping, violations, determinism
  4.  Compilation: waits fill the gaps, reply edges, missing bodies / endpoints
  5.  Orchestrator on a virtual clock: order, skipped dependents, crashes, cycles
  6.  Two live simdesks driven by session_executor on an accelerated wall clock
  7.  100 generated canvases: per-agent order and reply edges hold in every run

    python3 test_scenario.py
"""

import sys
import tempfile
import threading
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from agent_actions import Outcome, load_script, open_app, send_mail, wait
from agent_profile import load_profile
from rfb_channel import Endpoint, connect
from scenario_canvas import (
    CanvasParams,
    CompiledScenario,
    EmptyWindow,
    Interaction,
    MissingBody,
    MissingEndpoint,
    MissingProfile,
    ScenarioCanvas,
    ScheduledAction,
    canvas_violations,
    compile_canvas,
    dump_canvas,
    generate_canvas,
    load_canvas,
    workday_slices,
)
from scenario_graph import (
    DanglingReference,
    DuplicateRelation,
    WeightOutOfRange,
    graph_from_dict,
    load_graph,
)
from scenario_orchestrator import (
    CyclicDependencies,
    Orchestrator,
    VirtualClock,
    WallClock,
    orchestrate,
    session_executor,
)
from lifesim_errors import ParseError
from simdesk import load_scene, serve
from textgen import TextContext

# ─── Helpers ──────────────────────────────────────────────────────────────────

PASS = "\033[32mPASS\033[0m"
FAIL = "\033[31mFAIL\033[0m"

_results: list[tuple[str, str]] = []

REPO = Path(__file__).parent
MONDAY = datetime(2026, 3, 2, 9, 0)


def _check(label: str, condition: bool, detail: str = "") -> None:
    status = PASS if condition else FAIL
    _results.append((label, "PASS" if condition else "FAIL"))
    suffix = f"  ({detail})" if detail else ""
    print(f"  [{status}] {label}{suffix}")
    if not condition:
        raise AssertionError(f"FAILED: {label}{suffix}")


def _expect(label: str, exc_type, fn) -> None:
    try:
        fn()
        _check(label, False, "no error raised")
    except exc_type:
        _check(label, True)


def _pair_graph(kind: str = "friend", weight: float = 1.0, groups=(), projects=()) -> dict:
    return {
        "avatars": [
            {"id": "ana", "endpoint": "127.0.0.1:5901", "profile": "simdesk",
             "groups": list(groups), "projects": list(projects)},
            {"id": "ben", "endpoint": "127.0.0.1:5902", "profile": "simdesk",
             "groups": list(groups), "projects": list(projects)},
        ],
        "groups": [{"id": g, "name": g.upper()} for g in groups],
        "projects": [{"id": p, "keywords": [f"{p}-plan", f"{p}-budget"]} for p in projects],
        "relations": [{"between": ["ana", "ben"], "kind": kind, "weight": weight}],
    }


# ─── Test 1: graph files ─────────────────────────────────────────────────────

def test_graph_files():
    print("\n[1] Graph files")

    graph = load_graph(REPO / "scenarios" / "office-graph.json")
    _check("three avatars", sorted(graph.avatars) == ["alice", "bob", "carol"])
    _check("relation lookup is unordered", graph.relation("bob", "alice").kind == "friend")
    _check("shared project", graph.shared_projects("bob", "carol") == ["hermes"])
    _check("alice and carol are not connected", not graph.connected("alice", "carol"))
    _check("round trip through as_dict", graph_from_dict(graph.as_dict()) == graph)

    def variant(**changes) -> dict:
        raw = _pair_graph()
        raw.update(changes)
        return raw

    _expect("unknown group", DanglingReference, lambda: graph_from_dict(variant(groups=[]) | {
        "avatars": [{"id": "ana", "groups": ["ghost"]}, {"id": "ben"}]}))
    _expect("unknown relation end", DanglingReference, lambda: graph_from_dict(variant(
        relations=[{"between": ["ana", "zoe"], "kind": "friend", "weight": 0.5}])))
    for w in (0.0, 1.5, -0.2):
        _expect(f"weight {w} rejected", WeightOutOfRange, lambda w=w: graph_from_dict(variant(
            relations=[{"between": ["ana", "ben"], "kind": "friend", "weight": w}])))
    _expect("duplicate relation in either order", DuplicateRelation, lambda: graph_from_dict(variant(
        relations=[{"between": ["ana", "ben"], "kind": "friend", "weight": 0.5},
                   {"between": ["ben", "ana"], "kind": "partner", "weight": 0.5}])))
    _expect("self relation", ParseError, lambda: graph_from_dict(variant(
        relations=[{"between": ["ana", "ana"], "kind": "friend", "weight": 0.5}])))
    _expect("unknown relation kind", ParseError, lambda: graph_from_dict(variant(
        relations=[{"between": ["ana", "ben"], "kind": "rival", "weight": 0.5}])))
    _expect("duplicate avatar id", ParseError, lambda: graph_from_dict(variant(
        avatars=[{"id": "ana"}, {"id": "ana"}], relations=[])))
    _expect("missing file", ParseError, lambda: load_graph(REPO / "scenarios" / "nope.json"))


# ─── Test 2: generation statistics ───────────────────────────────────────────

def test_generation():
    print("\n[2] Canvas generation")

    graph = graph_from_dict(_pair_graph())
    params = CanvasParams(rate_base=0.5, reply_prob=0.0)
    end = MONDAY + timedelta(hours=8)
    counts = [len(generate_canvas(graph, MONDAY, end, params, seed=s).emails()) for s in range(1000)]
    mean = float(np.mean(counts))
    se = (4.0 / 1000) ** 0.5
    _check("mean mails within 3 SE of 4.0", abs(mean - 4.0) <= 3 * se, f"mean {mean:.3f}, SE {se:.3f}")

    canvas = generate_canvas(graph, MONDAY, end, CanvasParams(rate_base=4.0, reply_prob=0.0), seed=1)
    mails = canvas.emails()
    _check("friends write informally", mails and all(m.context.tone == "informel" for m in mails),
           f"{len(mails)} mails")
    _check("no shared project or group → relation kind as keyword",
           all(m.context.keywords == ("friend",) for m in mails))
    senders = {m.sender for m in mails}
    _check("both ends send", senders == {"ana", "ben"}, str(senders))

    grouped = graph_from_dict(_pair_graph(kind="colleague", groups=["ops"]))
    mails = generate_canvas(grouped, MONDAY, end, CanvasParams(rate_base=4.0, reply_prob=0.0), seed=2).emails()
    _check("colleagues write formally", all(m.context.tone == "formel" for m in mails))
    _check("shared group name as keyword", all(m.context.keywords == ("OPS",) for m in mails))

    project = graph_from_dict(_pair_graph(kind="partner", groups=["ops"], projects=["atlas"]))
    mails = generate_canvas(project, MONDAY, end, CanvasParams(rate_base=4.0, reply_prob=0.0), seed=3).emails()
    _check("shared project keywords win",
           all(set(m.context.keywords) <= {"atlas-plan", "atlas-budget"} for m in mails))

    loners = graph_from_dict(_pair_graph() | {"relations": []})
    quiet = generate_canvas(loners, MONDAY, end, seed=4)
    _check("no relation, no mail", quiet.emails() == [])
    busy = generate_canvas(loners, MONDAY, end,
                           CanvasParams(role_activities={"": {"docs-icon": 3.0}}), seed=4)
    _check("solo activities still happen",
           busy.interactions and all(i.kind == "activity" and i.recipients == () for i in busy.interactions))


# ─── Test 3: canvas invariants ───────────────────────────────────────────────

def test_canvas_invariants():
    print("\n[3] Canvas invariants")

    graph = load_graph(REPO / "scenarios" / "office-graph.json")
    end = MONDAY + timedelta(days=2)
    params = CanvasParams(rate_base=2.0, reply_prob=1.0)
    canvas = generate_canvas(graph, MONDAY, end, params, seed=11)
    _check("generated canvas is valid", canvas_violations(canvas, graph) == [])
    replies = [i for i in canvas.interactions if i.reply_to]
    _check("replies exist", len(replies) > 0, str(len(replies)))
    ok = True
    for r in replies:
        orig = canvas.get(r.reply_to)
        ok &= (r.at > orig.at and r.sender == orig.recipients[0] and r.recipients == (orig.sender,)
               and r.subject.startswith("Re: "))
    _check("replies go back to the sender, later, with Re:", ok)
    _check("interactions ordered by time",
           all(a.at <= b.at for a, b in zip(canvas.interactions, canvas.interactions[1:])))
    hours = {(i.at.hour, i.at.minute) for i in canvas.interactions}
    _check("everything inside working hours", all(9 <= h < 18 for h, _ in hours))

    again = generate_canvas(graph, MONDAY, end, params, seed=11)
    _check("same seed, same canvas", again.as_dict() == canvas.as_dict())
    other = generate_canvas(graph, MONDAY, end, params, seed=12)
    _check("other seed, other canvas", other.as_dict() != canvas.as_dict())

    with tempfile.TemporaryDirectory() as tmp:
        reloaded = load_canvas(dump_canvas(canvas, Path(tmp) / "canvas.json"))
        _check("canvas file loads back", reloaded.as_dict() == canvas.as_dict())

    ctx = TextContext(tone="formel", polarity="neutre", keywords=("budget",))
    bad = ScenarioCanvas(MONDAY, MONDAY + timedelta(hours=1), [
        Interaction("x1", MONDAY + timedelta(minutes=5), "email", "alice", ("carol",), ctx),
        Interaction("x2", MONDAY + timedelta(minutes=1), "email", "bob", ("alice",), ctx, reply_to="x3"),
        Interaction("x3", MONDAY + timedelta(minutes=2), "email", "alice", ("bob",), ctx, reply_to="x2"),
        Interaction("x4", MONDAY + timedelta(hours=2), "email", "bob", ("bob",), ctx),
    ])
    problems = canvas_violations(bad, graph)
    _check("unconnected pair flagged", any("x1" in p and "share no" in p for p in problems))
    _check("reply before original flagged", any(p.startswith("x2") and "not after" in p for p in problems))
    _check("outside window flagged", any(p.startswith("x4") and "outside" in p for p in problems))
    _check("self mail flagged", any(p.startswith("x4") and "themself" in p for p in problems),
           "; ".join(problems))

    slices = workday_slices(datetime(2026, 3, 2, 17), datetime(2026, 3, 3, 10))
    _check("workday slices skip the night",
           [(s.hour, e.hour) for s, e in slices] == [(17, 18), (9, 10)], str(slices))
    _expect("night-only window", EmptyWindow,
            lambda: generate_canvas(graph, datetime(2026, 3, 2, 19), datetime(2026, 3, 2, 23)))
    _expect("bad polarity weights", ValueError, lambda: CanvasParams(polarity_weights={"joyeux": 1.0}))


# ─── Test 4: compilation ─────────────────────────────────────────────────────

def test_compilation():
    print("\n[4] Compilation into agent scripts")

    graph = load_graph(REPO / "scenarios" / "office-graph.json")
    canvas = load_canvas(REPO / "scenarios" / "demo-canvas.json")
    _check("demo canvas is valid", canvas_violations(canvas, graph) == [])
    _expect("missing body without generator", MissingBody, lambda: compile_canvas(canvas, graph))

    compiled = compile_canvas(canvas, graph, generator=lambda ctx, seed: f"Texte sur {ctx.keywords[0]}")
    alice = compiled.scripts["alice"]
    _check("alice waits five minutes first",
           alice[0].action.action == "wait" and alice[0].action.ms == 300_000)
    mail = alice[1].action
    _check("alice sends to bob", mail == send_mail("bob@corp.test", "Prototype ?",
                                                   "Salut, le prototype marche enfin !"), str(mail))
    for agent, items in compiled.scripts.items():
        offset = 0
        consistent = True
        for item in items:
            consistent &= item.at_ms == offset
            offset += item.action.ms if item.action.action == "wait" else 0
            offset = max(offset, item.at_ms)
        waits_ok = all(i.action.ms <= 600_000 for i in items if i.action.action == "wait")
        _check(f"{agent}: offsets add up to the window", consistent and offset == 3_600_000 and waits_ok,
               f"end {offset}")
    reply_key = next(s.key for s in compiled.scripts["bob"] if s.interaction == "i0002")
    _check("reply edge", compiled.edges == [("alice:1", reply_key)], str(compiled.edges))
    carol_mail = next(s.action for s in compiled.scripts["carol"] if s.action.action == "send_mail")
    _check("generated body used", carol_mail.body == "Texte sur rapport")

    again = compile_canvas(canvas, graph, generator=lambda ctx, seed: f"Texte sur {ctx.keywords[0]}")
    _check("compilation deterministic", again.as_dict() == compiled.as_dict())

    with tempfile.TemporaryDirectory() as tmp:
        out = compiled.dump(Path(tmp) / "compiled")
        _check("per-agent scripts written",
               load_script(out / "alice.script.json") == compiled.actions("alice")
               and (out / "schedule.json").is_file())

    no_endpoint = graph.as_dict()
    del no_endpoint["avatars"][2]["endpoint"]
    _expect("avatar without endpoint", MissingEndpoint,
            lambda: compile_canvas(canvas, graph_from_dict(no_endpoint), generator=lambda c, s: "x"))
    _expect("profile not available", MissingProfile,
            lambda: compile_canvas(canvas, graph, profiles={"other": None}, generator=lambda c, s: "x"))


# ─── Test 5: orchestrator ────────────────────────────────────────────────────

def _demo_compiled() -> CompiledScenario:
    graph = load_graph(REPO / "scenarios" / "office-graph.json")
    canvas = load_canvas(REPO / "scenarios" / "demo-canvas.json")
    return compile_canvas(canvas, graph, generator=lambda ctx, seed: "Texte")


def test_orchestrator():
    print("\n[5] Orchestrator on a virtual clock")

    compiled = _demo_compiled()
    calls: list[tuple[str, str]] = []
    lock = threading.Lock()

    def executor(agent, action):
        with lock:
            calls.append((agent, action.describe()))
        return Outcome("ok")

    report = orchestrate(compiled, executor, VirtualClock(accel=60))
    _check("everything ran", report.ok and len(report.records) == sum(map(len, compiled.scripts.values())),
           str(report.counts))
    for agent, items in compiled.scripts.items():
        expected = [replace_wait(s.action, 60).describe() for s in items]
        _check(f"{agent} ran in script order", [d for a, d in calls if a == agent] == expected)
    order = [r.key for r in report.records]
    reply_key = compiled.edges[0][1]
    _check("reply dispatched after the original", order.index("alice:1") < order.index(reply_key))

    def failing(agent, action):
        if agent == "alice" and action.action == "send_mail":
            return Outcome("failed", 3, "element-not-found")
        if agent == "carol" and action.action == "send_mail":
            raise RuntimeError("display went away")
        return Outcome("ok")

    report = orchestrate(compiled, failing, VirtualClock())
    recs = report.by_key()
    _check("original failed", recs["alice:1"].status == "failed")
    _check("dependent reply skipped", recs[reply_key].status == "skipped"
           and "alice:1" in recs[reply_key].reason, str(recs[reply_key].as_dict()))
    carol_mail = next(r for r in report.records if r.agent == "carol" and r.action.startswith("send_mail"))
    _check("crash recorded as failure", carol_mail.status == "failed" and "RuntimeError" in carol_mail.reason)
    _check("other agents kept going", all(r.status == "ok" for r in report.records
                                          if r.action.startswith("wait")))
    _check("counts", report.counts == {"ok": len(report.records) - 3, "failed": 2, "skipped": 1},
           str(report.counts))

    scripts = {
        "a": [ScheduledAction("a:0", "a", 0, wait(10)), ScheduledAction("a:1", "a", 10, wait(10))],
        "b": [ScheduledAction("b:0", "b", 0, wait(10))],
    }
    _expect("cycle rejected before running", CyclicDependencies,
            lambda: Orchestrator(CompiledScenario(MONDAY, scripts, [("a:1", "b:0"), ("b:0", "a:0")]),
                                 executor))
    _expect("edge to unknown action", DanglingReference,
            lambda: Orchestrator(CompiledScenario(MONDAY, scripts, [("a:1", "c:0")]), executor))
    _expect("non-positive acceleration", ValueError, lambda: VirtualClock(accel=0))


def replace_wait(action, accel):
    return wait(int(action.ms / accel)) if action.action == "wait" else action


# ─── Test 6: live orchestration ──────────────────────────────────────────────

def test_live_orchestration():
    print("\n[6] Two live desks, accelerated wall clock")

    servers = {name: serve(load_scene("demo")) for name in ("alice", "bob")}
    sessions = {name: connect(Endpoint("127.0.0.1", s.port)) for name, s in servers.items()}
    try:
        profile = load_profile("simdesk")
        scripts = {
            name: [ScheduledAction(f"{name}:0", name, 0, wait(1000)),
                   ScheduledAction(f"{name}:1", name, 1000, open_app("mail-client"))]
            for name in servers
        }
        compiled = CompiledScenario(MONDAY, scripts, [("alice:1", "bob:1")])
        report = orchestrate(compiled, session_executor(sessions, {n: profile for n in sessions}, seed=7),
                             WallClock(accel=10))
        _check("both desks ok", report.ok, str([r.as_dict() for r in report.records]))
        _check("waits accelerated", report.by_key()["alice:0"].wall_ms < 500.0)
        order = [r.key for r in report.records]
        _check("bob opened after alice", order.index("alice:1") < order.index("bob:1"))
        for name, server in servers.items():
            _check(f"{name}'s inbox open", server.scene.element("mail-window").visible)
    finally:
        for s in sessions.values():
            s.close()
        for s in servers.values():
            s.stop()


# ─── Test 7: ordering over many runs ─────────────────────────────────────────

def test_ordering_many_runs():
    print("\n[7] Script order and dependency edges over 100 accelerated runs")

    graph = load_graph(REPO / "scenarios" / "office-graph.json")
    params = CanvasParams(reply_prob=0.7)
    broken: list[tuple[int, str]] = []
    edges_seen = 0
    for seed in range(100):
        canvas = generate_canvas(graph, MONDAY, MONDAY + timedelta(hours=4), params, seed)
        compiled = compile_canvas(canvas, graph, generator=lambda ctx, s: "Texte", params=params, seed=seed)
        log: list[tuple[str, str]] = []
        counters: dict[str, int] = {}
        lock = threading.Lock()

        def executor(agent, action):
            with lock:
                key = f"{agent}:{counters.get(agent, 0)}"
                counters[agent] = counters.get(agent, 0) + 1
                log.append(("begin", key))
            with lock:
                log.append(("end", key))
            return Outcome("ok")

        report = orchestrate(compiled, executor, VirtualClock(accel=3600))
        if not report.ok:
            broken.append((seed, f"counts {report.counts}"))
            continue
        pos = {entry: i for i, entry in enumerate(log)}
        for agent, items in compiled.scripts.items():
            keys = [s.key for s in items]
            if [k for what, k in log if what == "begin" and k.split(":")[0] == agent] != keys:
                broken.append((seed, f"{agent} out of script order"))
            for a, b in zip(keys, keys[1:]):
                if pos[("end", a)] > pos[("begin", b)]:
                    broken.append((seed, f"{b} began before {a} ended"))
        dispatched = {r.key: i for i, r in enumerate(report.records)}
        for a, b in compiled.edges:
            edges_seen += 1
            if pos[("end", a)] > pos[("begin", b)] or dispatched[a] > dispatched[b]:
                broken.append((seed, f"edge {a} → {b} violated"))
    _check("replies exercised", edges_seen > 0, f"{edges_seen} edges")
    _check("every run linearizes script order and edges", not broken, str(broken[:3]))


# ─── Main ─────────────────────────────────────────────────────────────────────

def main():
    print("=" * 60)
    print("  LifeSim — Scenario Test")
    print("=" * 60)

    try:
        test_graph_files()
        test_generation()
        test_canvas_invariants()
        test_compilation()
        test_orchestrator()
        test_live_orchestration()
        test_ordering_many_runs()
    except AssertionError:
        pass  # already printed, continue to summary

    print("\n" + "=" * 60)
    passed = sum(1 for _, s in _results if s == "PASS")
    failed = sum(1 for _, s in _results if s == "FAIL")
    total  = len(_results)
    print(f"  Results: {passed} passed, {failed} failed / {total} total")
    print("=" * 60)

    if failed:
        sys.exit(1)


if __name__ == "__main__":
    main()
