#!/usr/bin/env python3
"""
test_simdesk.py — Synthetic desktop behaviour

Tests:
  1.  Demo scene loads; windows start hidden
  2.  Double-click on the Mail icon shows the inbox exactly 300 ms later
  3.  scene_step is pure: the input scene is never mutated
  4.  Typing into a focused text area (Shift, BackSpace, Return)
  5.  Send hides the compose window and records the mail-sent fields
  6.  Hover lightens an element by its highlight delta
  7.  Event log: strictly increasing seq, non-decreasing at
  8.  Fingerprints agree for identical inputs and differ otherwise;
      100 seeded random sequences replay to identical fingerprints and pixels
  9.  Invalid scenes are rejected
  10. Served scene honours latency against an injected clock
  11. 1000 seeded random inputs sent over RFB are logged in send order

    python3 test_simdesk.py
"""

import sys

import numpy as np

from desk_types import BUTTON_LEFT, KeyEvent, PointerEvent, Rect
from keysyms import XK_BackSpace, XK_Return, XK_Shift_L
from lifesim_errors import ParseError
from rfb_channel import Endpoint, connect
from simdesk import (
    Element,
    Scene,
    SceneInvalid,
    load_scene,
    render,
    scene_advance,
    scene_fingerprint,
    scene_from_dict,
    scene_step,
    serve,
    validate_scene,
)

# ─── Helpers ──────────────────────────────────────────────────────────────────

PASS = "\033[32mPASS\033[0m"
FAIL = "\033[31mFAIL\033[0m"

_results: list[tuple[str, str]] = []


def _check(label: str, condition: bool, detail: str = "") -> None:
    status = PASS if condition else FAIL
    _results.append((label, "PASS" if condition else "FAIL"))
    suffix = f"  ({detail})" if detail else ""
    print(f"  [{status}] {label}{suffix}")
    if not condition:
        raise AssertionError(f"FAILED: {label}{suffix}")


def _feed(scene: Scene, events) -> Scene:
    for ev in events:
        scene = scene_step(scene, ev)
    return scene


def _click(x: int, y: int, at: float) -> list[PointerEvent]:
    return [PointerEvent(x, y, BUTTON_LEFT, at), PointerEvent(x, y, 0, at + 40)]


def _double_click(x: int, y: int, at: float) -> list[PointerEvent]:
    return _click(x, y, at) + _click(x, y, at + 150)


def _type(text: str, at: float) -> list[KeyEvent]:
    out: list[KeyEvent] = []
    for ch in text:
        if ch.isupper():
            out += [KeyEvent(XK_Shift_L, True, at), KeyEvent(ord(ch.lower()), True, at + 5),
                    KeyEvent(ord(ch.lower()), False, at + 30), KeyEvent(XK_Shift_L, False, at + 35)]
        else:
            out += [KeyEvent(ord(ch), True, at), KeyEvent(ord(ch), False, at + 30)]
        at += 60
    return out


def _random_events(rng: np.random.Generator, scene: Scene, n: int, t0: float = 0.0) -> list:
    """Seeded mix of moves, clicks on element centres and keystrokes."""
    centres = [(el.rect.x + el.rect.w // 2, el.rect.y + el.rect.h // 2) for el in scene.elements]
    keys = [ord(c) for c in "abcdefghijklmnopqrstuvwxyz "] + [XK_BackSpace, XK_Return]
    out: list = []
    at = t0
    while len(out) < n:
        at += float(rng.integers(20, 200))
        roll = rng.random()
        if roll < 0.35:
            x, y = centres[int(rng.integers(len(centres)))]
            out += _double_click(x, y, at) if rng.random() < 0.5 else _click(x, y, at)
            at += 200
        elif roll < 0.65:
            out.append(PointerEvent(int(rng.integers(scene.width)), int(rng.integers(scene.height)), 0, at))
        else:
            k = keys[int(rng.integers(len(keys)))]
            out += [KeyEvent(k, True, at), KeyEvent(k, False, at + 30)]
    return out[:n]


def _open_compose() -> Scene:
    scene = load_scene("demo")
    scene = _feed(scene, _double_click(32, 32, 0))
    scene = scene_advance(scene, 600)
    scene = _feed(scene, _click(128, 50, 700))
    return scene_advance(scene, 900)


# ─── Test 1: demo scene ──────────────────────────────────────────────────────

def test_demo_scene():
    print("\n[1] Demo scene loads")

    scene = load_scene("demo")
    _check("640x400", (scene.width, scene.height) == (640, 400))
    _check("windows hidden at start",
           all(not el.visible for el in scene.elements if el.kind == "window"))
    _check("icons visible", scene.is_visible(scene.element("mail-client")))
    _check("children of hidden windows invisible", not scene.is_visible(scene.element("compose")))


# ─── Test 2: double-click latency ────────────────────────────────────────────

def test_double_click_latency():
    print("\n[2] Double-click shows the inbox after its latency")

    scene = _feed(load_scene("demo"), _double_click(32, 32, 0))
    # second release at t=190 → due at 490
    before = scene_advance(scene, 489)
    after = scene_advance(scene, 490)
    _check("hidden 1 ms before due", not before.element("mail-window").visible)
    _check("visible when due", after.element("mail-window").visible)

    slow = _feed(load_scene("demo"), _click(32, 32, 0) + _click(32, 32, 600))
    slow = scene_advance(slow, 2000)
    _check("two clicks 600 ms apart do not open", not slow.element("mail-window").visible)

    moved = _feed(load_scene("demo"), _click(30, 30, 0) + _click(36, 36, 150))
    moved = scene_advance(moved, 2000)
    _check("two clicks 8 px apart do not open", not moved.element("mail-window").visible)


# ─── Test 3: purity ──────────────────────────────────────────────────────────

def test_scene_step_pure():
    print("\n[3] scene_step leaves its input untouched")

    scene = load_scene("demo")
    snapshot = scene_fingerprint(scene)
    log_len = len(scene.event_log)
    nxt = _feed(scene, _double_click(32, 32, 0))
    scene_advance(nxt, 1000)
    _check("original fingerprint unchanged", scene_fingerprint(scene) == snapshot)
    _check("original log unchanged", len(scene.event_log) == log_len)
    _check("original cursor unset", scene.cursor is None)
    _check("new scene saw 4 pointer events",
           sum(1 for e in nxt.event_log if e["type"] == "pointer") == 4)


# ─── Test 4: typing ──────────────────────────────────────────────────────────

def test_typing():
    print("\n[4] Typing into the focused field")

    scene = _open_compose()
    _check("compose window open", scene.element("compose-window").visible)
    scene = _feed(scene, _click(250, 88, 1000))
    _check("to-field focused", scene.focus == "to-field")
    scene = _feed(scene, _type("Bobx", 1100))
    scene = _feed(scene, [KeyEvent(XK_BackSpace, True, 1400), KeyEvent(XK_BackSpace, False, 1420)])
    _check("Shift upper-cases, BackSpace deletes", scene.element("to-field").text == "Bob",
           repr(scene.element("to-field").text))

    scene = _feed(scene, _click(250, 200, 1500))
    scene = _feed(scene, _type("hi", 1600) + [KeyEvent(XK_Return, True, 1800)] + _type("yo", 1900))
    _check("Return adds a newline", scene.element("body-field").text == "hi\nyo",
           repr(scene.element("body-field").text))

    scene = _feed(scene, _click(630, 390, 2100))
    _check("click on desktop clears focus", scene.focus is None)
    scene = _feed(scene, _type("zz", 2200))
    _check("keys without focus are ignored", scene.element("body-field").text == "hi\nyo")


# ─── Test 5: send ────────────────────────────────────────────────────────────

def test_send_records_fields():
    print("\n[5] Send hides compose and records the message")

    scene = _open_compose()
    scene = _feed(scene, _click(250, 88, 1000) + _type("bob", 1100))
    scene = _feed(scene, _click(250, 112, 1400) + _type("Plan", 1500))
    scene = _feed(scene, _click(470, 310, 2000))
    scene = scene_advance(scene, 2040 + 80)

    _check("compose window hidden", not scene.element("compose-window").visible)
    sent = [e for e in scene.event_log if e.get("event") == "mail-sent"]
    _check("one mail-sent transition", len(sent) == 1, str(len(sent)))
    fields = sent[0]["fields"]
    _check("fields captured", fields.get("to-field") == "bob" and fields.get("subject-field") == "Plan",
           str(fields))
    _check("fields cleared after send", scene.element("to-field").text == "")
    _check("focus dropped with the window", scene.focus is None)


# ─── Test 6: hover ───────────────────────────────────────────────────────────

def test_hover_highlight():
    print("\n[6] Hover highlight")

    scene = load_scene("demo")
    plain = render(scene).pixels[25, 25, :3].tolist()
    hovered = render(scene_step(scene, PointerEvent(30, 30, 0, 0))).pixels[25, 25, :3].tolist()
    _check("base colour unhovered", plain == [40, 80, 160], str(plain))
    _check("lightened by 24 when hovered", hovered == [64, 104, 184], str(hovered))
    away = render(scene_step(scene, PointerEvent(600, 380, 0, 0))).pixels[25, 25, :3].tolist()
    _check("no highlight elsewhere", away == plain)


# ─── Test 7: event log ───────────────────────────────────────────────────────

def test_event_log_order():
    print("\n[7] Event log ordering")

    scene = _open_compose()
    scene = _feed(scene, _click(250, 88, 1000) + _type("abc", 1100) + _click(470, 310, 1400))
    scene = scene_advance(scene, 3000)
    seqs = [e["seq"] for e in scene.event_log]
    ats = [e["at"] for e in scene.event_log]
    _check("seq strictly increasing", all(b > a for a, b in zip(seqs, seqs[1:])))
    _check("at non-decreasing", all(b >= a for a, b in zip(ats, ats[1:])))
    kinds = {e["type"] for e in scene.event_log}
    _check("inputs and transitions logged", {"pointer", "key", "transition"} <= kinds, str(kinds))


# ─── Test 8: fingerprint ─────────────────────────────────────────────────────

def test_fingerprint():
    print("\n[8] Fingerprints")

    def run(text: str, offset: float) -> dict:
        scene = _open_compose()
        scene = _feed(scene, _click(250, 200, 1000 + offset) + _type(text, 1100 + offset))
        return scene_fingerprint(scene_advance(scene, 5000))

    _check("same inputs → same fingerprint", run("hello", 0) == run("hello", 0))
    _check("timing shifts do not matter", run("hello", 0) == run("hello", 37))
    _check("different text → different fingerprint", run("hello", 0) != run("help", 0))

    demo = load_scene("demo")
    mismatched = []
    for seed in range(100):
        events = _random_events(np.random.default_rng(seed), demo, 30)
        a = scene_advance(_feed(demo, events), events[-1].at + 2000)
        b = scene_advance(_feed(demo, events), events[-1].at + 2000)
        if scene_fingerprint(a) != scene_fingerprint(b) or not np.array_equal(render(a).pixels, render(b).pixels):
            mismatched.append(seed)
    _check("100 random sequences: same inputs → same fingerprint and pixels", not mismatched,
           f"seeds {mismatched}")


# ─── Test 9: validation ──────────────────────────────────────────────────────

def test_invalid_scenes():
    print("\n[9] Invalid scenes")

    base = {"width": 100, "height": 80, "elements": []}
    cases = {
        "duplicate id": [{"id": "a", "kind": "icon", "rect": [1, 1, 10, 10]},
                         {"id": "a", "kind": "icon", "rect": [20, 1, 10, 10]}],
        "rect outside": [{"id": "a", "kind": "icon", "rect": [95, 1, 10, 10]}],
        "parent not a window": [{"id": "a", "kind": "icon", "rect": [1, 1, 10, 10]},
                                {"id": "b", "kind": "button", "rect": [20, 1, 10, 10], "parent": "a"}],
        "behaviour target unknown": [{"id": "a", "kind": "icon", "rect": [1, 1, 10, 10],
                                      "behaviour": {"show": "nope"}}],
    }
    for label, elements in cases.items():
        try:
            scene_from_dict({**base, "elements": elements})
            _check(label, False, "accepted")
        except SceneInvalid as exc:
            _check(label, exc.code == "scene-invalid")

    try:
        scene_from_dict({**base, "elements": [{"id": "a", "kind": "spinner", "rect": [1, 1, 5, 5]}]})
        _check("unknown kind is a parse error", False)
    except ParseError:
        _check("unknown kind is a parse error", True)

    try:
        validate_scene(Scene(0, 10, (0, 0, 0), []))
        _check("zero-width scene", False)
    except SceneInvalid:
        _check("zero-width scene", True)

    ok = validate_scene(Scene(50, 50, (0, 0, 0), [Element("x", "icon", Rect(0, 0, 50, 50))]))
    _check("edge-touching rect accepted", ok.element("x") is not None)


# ─── Test 10: served latency ─────────────────────────────────────────────────

def test_served_latency():
    print("\n[10] Served scene follows the injected clock")

    now = [0.0]
    with serve(load_scene("demo"), clock=lambda: now[0]) as server:
        session = connect(Endpoint("127.0.0.1", server.port))
        try:
            for ev in _double_click(32, 32, 0):
                now[0] = ev.at
                session.send_pointer(ev)
            session.capture_frame()          # round-trip: all input processed
            now[0] = 489.0
            _check("hidden before latency elapsed", not server.scene.element("mail-window").visible)
            now[0] = 490.0
            frame = session.capture_frame()
            _check("visible once due", server.scene.element("mail-window").visible)
            title_bar = frame.pixels[21, 300, :3].tolist()
            _check("window painted in the captured frame", title_bar == [236, 236, 240], str(title_bar))
        finally:
            session.close()
        _check("one client served", server.clients_served == 1)


# ─── Test 11: served input order ─────────────────────────────────────────────

def test_served_event_order():
    print("\n[11] 1000 random inputs over RFB arrive in send order")

    rng = np.random.default_rng(1000)
    keys = [ord(c) for c in "abcdefghijklmnopqrstuvwxyz0123456789 "] + [XK_BackSpace, XK_Shift_L]
    sent: list[tuple] = []
    with serve(load_scene("demo")) as server:
        session = connect(Endpoint("127.0.0.1", server.port))
        try:
            for i in range(1000):
                if rng.random() < 0.5:
                    ev = PointerEvent(int(rng.integers(640)), int(rng.integers(400)),
                                      int(rng.integers(0, 2)), float(i))
                    session.send_pointer(ev)
                    sent.append(("pointer", ev.x, ev.y, ev.buttons))
                else:
                    ev = KeyEvent(keys[int(rng.integers(len(keys)))], bool(rng.integers(0, 2)), float(i))
                    session.send_key(ev)
                    sent.append(("key", ev.keysym, ev.pressed))
            session.capture_frame()          # round-trip: all input processed
        finally:
            session.close()
        log = server.event_log
    received = [("pointer", e["x"], e["y"], e["buttons"]) if e["type"] == "pointer"
                else ("key", e["keysym"], e["pressed"])
                for e in log if e["type"] in ("pointer", "key")]
    _check("every input logged", len(received) == 1000, str(len(received)))
    first = next((i for i, (a, b) in enumerate(zip(sent, received)) if a != b), None)
    _check("logged in send order", received == sent, f"first mismatch at {first}")


# ─── Main ─────────────────────────────────────────────────────────────────────

def main():
    print("=" * 60)
    print("  LifeSim — Synthetic Desktop Test")
    print("=" * 60)

    try:
        test_demo_scene()
        test_double_click_latency()
        test_scene_step_pure()
        test_typing()
        test_send_records_fields()
        test_hover_highlight()
        test_event_log_order()
        test_fingerprint()
        test_invalid_scenes()
        test_served_latency()
        test_served_event_order()
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
