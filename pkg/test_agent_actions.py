#!/usr/bin/env python3
"""
test_agent_actions.py — Unit actions against a live simdesk over RFB

Tests:
  1.  Script files: parse, reject bad entries, dump → load
  2.  send_mail expands through the profile's composite roles
  3.  open_app on a 300 ms window: ok within one retry; pointer ends on the icon
  4.  read_text and find_links on the open inbox
  5.  End-to-end send_mail: ok, ≤ 1 retry per step, message recorded,
      only pointer / key / update-request traffic after setup
  6.  Failures: element absent → failed(element-not-found); best_effort keeps going
  7.  50 random scenes: every press of a template-located click lands inside the element

Each test starts its own simdesk on an ephemeral port and runs in real time
(send_mail types ~30 characters, so test 5 takes several seconds).
    python3 test_agent_actions.py
"""

import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from agent_actions import (
    ActionBudget,
    ActionExecutor,
    EmptyScript,
    click,
    dump_script,
    execute_action,
    expand_send_mail,
    find_links,
    load_script,
    open_app,
    parse_script,
    read_text,
    run_script,
    send_mail,
    wait,
)
from agent_profile import ElementSpec, EnvironmentProfile, Strategy, load_profile
from lifesim_errors import ParseError
from rfb_channel import Endpoint, connect
from simdesk import load_scene, random_scene, render, serve

# ─── Helpers ──────────────────────────────────────────────────────────────────

PASS = "\033[32mPASS\033[0m"
FAIL = "\033[31mFAIL\033[0m"

_results: list[tuple[str, str]] = []

REPO = Path(__file__).parent
SETUP_MESSAGES = {"SetPixelFormat", "SetEncodings"}
AGENT_MESSAGES = {"FramebufferUpdateRequest", "PointerEvent", "KeyEvent"}


def _check(label: str, condition: bool, detail: str = "") -> None:
    status = PASS if condition else FAIL
    _results.append((label, "PASS" if condition else "FAIL"))
    suffix = f"  ({detail})" if detail else ""
    print(f"  [{status}] {label}{suffix}")
    if not condition:
        raise AssertionError(f"FAILED: {label}{suffix}")


class _Desk:
    """simdesk + connected session + executor, torn down on exit."""

    def __init__(self, seed: int, budget: ActionBudget = ActionBudget()):
        self.server = serve(load_scene("demo"))
        self.session = connect(Endpoint("127.0.0.1", self.server.port))
        self.profile = load_profile("simdesk")
        self.executor = ActionExecutor(self.session, self.profile, budget=budget,
                                       rng=np.random.default_rng(seed))

    def __enter__(self) -> "_Desk":
        return self

    def __exit__(self, *exc) -> None:
        self.session.close()
        self.server.stop()


# ─── Test 1: script files ────────────────────────────────────────────────────

def test_script_files():
    print("\n[1] Script files")

    script = load_script(REPO / "scripts" / "send-welcome.json")
    _check("bundled script loads", [a.action for a in script] ==
           ["send_mail", "open_app", "read_text", "find_links", "wait"])
    _check("wait keeps its duration", script[-1].ms == 500)

    with tempfile.TemporaryDirectory() as tmp:
        path = dump_script(script, Path(tmp) / "copy.json")
        _check("dump → load is lossless", load_script(path) == script)

    bad = {
        "four clicks": [{"action": "click", "element": "send", "clicks": 4}],
        "unknown action": [{"action": "dance"}],
        "negative wait": [{"action": "wait", "ms": -1}],
        "extra field": [{"action": "find_links", "colour": "blue"}],
        "wheel button": [{"action": "click", "element": "send", "button": "wheel-up"}],
    }
    for label, raw in bad.items():
        try:
            parse_script(raw)
            _check(f"rejects {label}", False)
        except ParseError as exc:
            _check(f"rejects {label}", exc.code == "parse-error")

    try:
        load_script(REPO / "scripts" / "missing.json")
        _check("missing script is a parse error", False)
    except ParseError:
        _check("missing script is a parse error", True)


# ─── Test 2: send_mail expansion ─────────────────────────────────────────────

def test_send_mail_expansion():
    print("\n[2] send_mail expansion")

    profile = load_profile("simdesk")
    steps = expand_send_mail(send_mail("bob@lifesim.test", "Plan", "Hello"), profile)
    _check("nine steps", len(steps) == 9, str(len(steps)))
    _check("opens the mail client first", steps[0].action == "open_app" and steps[0].element == "mail-client")
    _check("types into each field in order",
           [s.text for s in steps if s.action == "type_text"] == ["bob@lifesim.test", "Plan", "Hello"])
    _check("ends on send", steps[-1].action == "click" and steps[-1].element == "send")


# ─── Test 3: open_app ────────────────────────────────────────────────────────

def test_open_app():
    print("\n[3] open_app with a late window")

    with _Desk(seed=3) as desk:
        report = desk.executor.execute(open_app("mail-client"))
        _check("outcome ok or retried", report.outcome.ok, str(report.outcome))
        _check("at most one retry", report.outcome.retries <= 1, str(report.outcome))
        _check("frames examined", report.frames_examined >= 3, str(report.frames_examined))
        scene = desk.server.scene
        _check("inbox visible", scene.element("mail-window").visible)
        pointers = [e for e in scene.event_log if e["type"] == "pointer"]
        last = pointers[-1]
        _check("pointer ends inside the icon",
               scene.element("mail-client").rect.contains(last["x"], last["y"]), str(last))
        steps = [(b["x"] - a["x"]) ** 2 + (b["y"] - a["y"]) ** 2 for a, b in zip(pointers, pointers[1:])]
        cap = desk.executor.cfg.vmax_px_per_ms * desk.executor.cfg.tick_ms
        _check("no teleporting pointer", max(steps) ** 0.5 <= cap + 1.5, f"{max(steps) ** 0.5:.1f}")


# ─── Test 4: read_text / find_links ──────────────────────────────────────────

def test_read_and_links():
    print("\n[4] read_text and find_links")

    with _Desk(seed=4) as desk:
        reports = run_script(desk.session, [open_app("mail-client"), read_text("welcome"), find_links(),
                                            wait(200)],
                             desk.profile, executor=desk.executor)
        _check("all four ran", len(reports) == 4 and all(r.outcome.ok for r in reports),
               str([str(r.outcome) for r in reports]))
        _check("welcome text read", reports[1].data.get("text") == "Welcome to the team",
               repr(reports[1].data.get("text")))
        links = reports[2].data.get("links")
        _check("Docs link found", links == [{"rect": [146, 88, 23, 7], "text": "Docs"}], str(links))
        _check("wait took about its duration", reports[3].wall_ms >= 190.0, f"{reports[3].wall_ms:.0f} ms")


# ─── Test 5: end-to-end send_mail ────────────────────────────────────────────

def test_send_mail_end_to_end():
    print("\n[5] End-to-end send_mail")

    with _Desk(seed=5) as desk:
        report = desk.executor.execute(send_mail("bob@lifesim.test", "Plan", "Hello team"))
        steps = report.data.get("steps", [])
        _check("outcome ok", report.outcome.ok, str(report.outcome))
        _check("every step succeeded", len(steps) == 9, str(len(steps)))
        worst = max(s["outcome"].get("retries", 0) for s in steps)
        _check("≤ 1 retry per step", worst <= 1, f"worst {worst}")

        time.sleep(0.3)
        desk.session.capture_frame()
        scene = desk.server.scene
        sent = [e for e in scene.event_log if e.get("event") == "mail-sent"]
        _check("one message sent", len(sent) == 1, str(len(sent)))
        fields = sent[0]["fields"]
        _check("recipient typed", fields.get("to-field") == "bob@lifesim.test", repr(fields.get("to-field")))
        _check("subject typed", fields.get("subject-field") == "Plan", repr(fields.get("subject-field")))
        _check("body typed", fields.get("body-field") == "Hello team", repr(fields.get("body-field")))
        _check("compose window closed", not scene.element("compose-window").visible)

        log_types = {e["type"] for e in scene.event_log}
        _check("scene saw only input and transitions", log_types <= {"pointer", "key", "transition"},
               str(log_types))
        counts = desk.server.message_counts
        _check("setup messages once each", all(counts[m] == 1 for m in SETUP_MESSAGES), str(dict(counts)))
        _check("nothing but pointer / key / update-request after setup",
               set(counts) - SETUP_MESSAGES <= AGENT_MESSAGES, str(dict(counts)))


# ─── Test 6: failures ────────────────────────────────────────────────────────

def test_failures():
    print("\n[6] Failures and best-effort")

    quick = ActionBudget(retries=1, recheck_ms=10)
    with _Desk(seed=6, budget=quick) as desk:
        report = desk.executor.execute(click("send"))
        _check("hidden element fails", report.outcome.status == "failed", str(report.outcome))
        _check("reason is the error code", report.outcome.reason == "element-not-found")
        _check("budget used up", report.attempts == 2 and report.outcome.retries == 1)

        reports = run_script(desk.session, [click("send"), find_links()], desk.profile,
                             executor=desk.executor)
        _check("script stops at the first failure", len(reports) == 1)

        reports = run_script(desk.session, [click("send", best_effort=True), find_links()],
                             desk.profile, executor=desk.executor)
        _check("best_effort continues", len(reports) == 2 and reports[1].outcome.ok)
        _check("no links while the inbox is closed", reports[1].data.get("links") == [])
        report = execute_action(desk.session, find_links(), desk.profile)
        _check("functional form runs one action", report.outcome.ok and report.data.get("links") == [])

    try:
        run_script(None, [], load_profile("simdesk"))
        _check("empty script rejected", False)
    except EmptyScript:
        _check("empty script rejected", True)

    for bad in ({"retries": -1}, {"recheck_ms": -5}):
        try:
            ActionBudget.from_dict(bad)
            _check(f"budget rejects {bad}", False)
        except ValueError:
            _check(f"budget rejects {bad}", True)


# ─── Test 7: presses land on the resolved element ────────────────────────────

def _template_profile(scene, element_id: str) -> EnvironmentProfile:
    """A one-element profile whose only locator is a crop of the element itself."""
    el = scene.element(element_id)
    tmpl = render(scene).crop(el.rect)
    strategy = Strategy("template", template=tmpl, path=f"{element_id}.png", threshold=0.9)
    return EnvironmentProfile("random", REPO, {element_id: ElementSpec(element_id, (strategy,), verify="none")})


def _presses(log: list[dict]) -> list[tuple[int, int]]:
    out, held = [], 0
    for e in log:
        if e["type"] != "pointer":
            continue
        if e["buttons"] & 1 and not held & 1:
            out.append((e["x"], e["y"]))
        held = e["buttons"]
    return out


def test_presses_inside_target():
    print("\n[7] Presses land inside the resolved rect on 50 random scenes")

    rng = np.random.default_rng(70)
    outside, failed, pressed = [], [], 0
    for n in range(50):
        scene = random_scene(rng)
        el = scene.elements[int(rng.integers(len(scene.elements)))]
        clicks = int(rng.integers(1, 3))
        profile = _template_profile(scene, el.id)
        with serve(scene) as server:
            session = connect(Endpoint("127.0.0.1", server.port))
            try:
                executor = ActionExecutor(session, profile, rng=np.random.default_rng(n),
                                          sleep=lambda s: None)
                report = executor.execute(click(el.id, clicks=clicks))
            finally:
                session.close()
            log = server.event_log
        if not report.outcome.ok:
            failed.append((n, str(report.outcome)))
            continue
        points = _presses(log)
        pressed += len(points)
        if len(points) != clicks:
            failed.append((n, f"{len(points)} presses for {clicks} clicks"))
        outside += [(n, p) for p in points if not el.rect.contains(*p)]
        if report.data.get("rect") != el.rect.as_list():
            failed.append((n, f"resolved {report.data.get('rect')} for {el.rect.as_list()}"))
    _check("every click resolved and pressed", not failed, str(failed[:3]))
    _check("every press inside the element", not outside, f"{len(outside)}/{pressed} outside: {outside[:3]}")


# ─── Main ─────────────────────────────────────────────────────────────────────

def main():
    print("=" * 60)
    print("  LifeSim — Unit Actions End-to-End Test")
    print("=" * 60)

    try:
        test_script_files()
        test_send_mail_expansion()
        test_open_app()
        test_read_and_links()
        test_send_mail_end_to_end()
        test_failures()
        test_presses_inside_target()
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
