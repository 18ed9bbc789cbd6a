#!/usr/bin/env python3
"""
test_rfb_wire.py — RFB wire format and session handshake

Tests:
  1.  Client messages encode to the exact RFB 3.8 byte layouts
  2.  FramebufferUpdate with one Raw rectangle (BGRX little-endian)
  3.  Server-side decoders invert the client encoders
  4.  Handshake failures: refused port, wrong version, security rejected
  5.  100 random scenes: captured frame == render(scene), pixel for pixel
  6.  Session guards: out-of-range pointer, closed session, unknown backend

Everything runs on 127.0.0.1 with ephemeral ports; no external server needed.
    python3 test_rfb_wire.py
"""

import socket
import struct
import sys
import threading

import numpy as np

import rfb_wire as wire
from desk_types import KeyEvent, PointerEvent
from rfb_channel import (
    ConnectionRefused,
    CoordinatesOutOfRange,
    Endpoint,
    ProtocolVersionMismatch,
    SecurityNegotiationFailed,
    SessionClosed,
    UnsupportedChannel,
    connect,
    open_channel,
)
from simdesk import random_scene, render, serve

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


def _one_shot_server(script) -> tuple[int, threading.Thread]:
    """Listen on an ephemeral port and run `script(conn)` for the first client."""
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    port = listener.getsockname()[1]

    def _run():
        conn, _ = listener.accept()
        try:
            script(conn)
        except OSError:
            pass
        finally:
            conn.close()
            listener.close()

    t = threading.Thread(target=_run, daemon=True)
    t.start()
    return port, t


def _free_port() -> int:
    s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


# ─── Test 1: client message layouts ──────────────────────────────────────────

def test_client_message_bytes():
    print("\n[1] Client messages encode to exact byte layouts")

    _check("KeyEvent Return down",
           wire.encode_key_event(0xFF0D, True) == bytes.fromhex("04 01 0000 0000ff0d"))
    _check("KeyEvent 'a' up",
           wire.encode_key_event(0x61, False) == bytes.fromhex("04 00 0000 00000061"))
    _check("PointerEvent left at (300, 2)",
           wire.encode_pointer_event(1, 300, 2) == bytes.fromhex("05 01 012c 0002"))
    _check("FramebufferUpdateRequest full 640x400",
           wire.encode_fb_update_request(False, 0, 0, 640, 400)
           == bytes.fromhex("03 00 0000 0000 0280 0190"))
    _check("FramebufferUpdateRequest incremental flag",
           wire.encode_fb_update_request(True, 8, 9, 10, 11)[1] == 1)
    _check("SetEncodings [Raw]",
           wire.encode_set_encodings([wire.ENCODING_RAW]) == bytes.fromhex("02 00 0001 00000000"))
    _check("SetEncodings keeps signed pseudo-encodings",
           wire.encode_set_encodings([0, -239])[-4:] == struct.pack(">i", -239))
    expected_pf = bytes.fromhex("00 000000 20 18 00 01 00ff 00ff 00ff 10 08 00 000000")
    _check("SetPixelFormat 32bpp little-endian true colour",
           wire.encode_set_pixel_format() == expected_pf,
           wire.encode_set_pixel_format().hex())
    _check("PixelFormat round-trips", wire.PixelFormat.unpack(expected_pf[4:]) == wire.DEFAULT_PIXEL_FORMAT)


# ─── Test 2: FramebufferUpdate ───────────────────────────────────────────────

def test_fb_update_bytes():
    print("\n[2] FramebufferUpdate with one Raw rectangle")

    block = np.zeros((1, 1, 4), dtype=np.uint8)
    block[0, 0] = (10, 20, 30, 255)
    data = wire.encode_fb_update([(2, 3, block)])
    expected = bytes.fromhex("00 00 0001" "0002 0003 0001 0001 00000000" "1e 14 0a 00")
    _check("header + rect + BGRX pixel", data == expected, data.hex())

    empty = wire.encode_fb_update([])
    _check("zero-rectangle update", empty == bytes.fromhex("00 00 0000"))

    rng = np.random.default_rng(7)
    rgba = rng.integers(0, 256, size=(5, 7, 4), dtype=np.uint8)
    decoded = wire.decode_raw_pixels(wire.encode_raw_pixels(rgba), 7, 5)
    _check("raw pixels keep RGB", np.array_equal(decoded[..., :3], rgba[..., :3]))
    _check("decoded alpha is opaque", bool((decoded[..., 3] == 255).all()))
    hdr = wire.decode_rect_header(data[4:4 + wire.RECT_HEADER_SIZE])
    _check("rect header decodes", hdr == (2, 3, 1, 1, wire.ENCODING_RAW), str(hdr))


# ─── Test 3: server-side decoders ────────────────────────────────────────────

def test_decoders():
    print("\n[3] Server decoders read what the client wrote")

    _check("key event", wire.decode_key_event(wire.encode_key_event(0xFFE1, True)[1:]) == (True, 0xFFE1))
    _check("pointer event",
           wire.decode_pointer_event(wire.encode_pointer_event(4, 639, 399)[1:]) == (4, 639, 399))
    _check("update request",
           wire.decode_fb_update_request(wire.encode_fb_update_request(True, 1, 2, 3, 4)[1:])
           == (True, 1, 2, 3, 4))


# ─── Test 4: handshake failures ──────────────────────────────────────────────

def test_handshake_failures():
    print("\n[4] Handshake failures are typed")

    port = _free_port()
    try:
        connect(Endpoint("127.0.0.1", port), timeout=1.0)
        _check("closed port refused", False, "connect succeeded")
    except ConnectionRefused as exc:
        _check("closed port refused", exc.code == "connection-refused", exc.code)

    def old_version(conn):
        conn.sendall(b"RFB 003.003\n")

    port, t = _one_shot_server(old_version)
    try:
        connect(Endpoint("127.0.0.1", port), timeout=2.0)
        _check("3.3 banner rejected", False, "connect succeeded")
    except ProtocolVersionMismatch as exc:
        _check("3.3 banner rejected", exc.offending == b"RFB 003.003\n", repr(exc.offending))
    t.join(2.0)

    def refuse_security(conn):
        conn.sendall(wire.PROTOCOL_VERSION)
        wire.recv_exact(conn, len(wire.PROTOCOL_VERSION))
        conn.sendall(b"\x00" + wire.encode_failure_reason("too many clients"))

    port, t = _one_shot_server(refuse_security)
    try:
        connect(Endpoint("127.0.0.1", port), timeout=2.0)
        _check("zero security types rejected", False, "connect succeeded")
    except SecurityNegotiationFailed as exc:
        _check("zero security types rejected", "too many clients" in str(exc), str(exc))
    t.join(2.0)

    def vnc_auth_only(conn):
        conn.sendall(wire.PROTOCOL_VERSION)
        wire.recv_exact(conn, len(wire.PROTOCOL_VERSION))
        conn.sendall(wire.encode_security_types([2]))

    port, t = _one_shot_server(vnc_auth_only)
    try:
        connect(Endpoint("127.0.0.1", port), timeout=2.0)
        _check("None not offered", False, "connect succeeded")
    except SecurityNegotiationFailed as exc:
        _check("None not offered", exc.code == "security-negotiation-failed", exc.code)
    t.join(2.0)

    _check("endpoint parse host:port", Endpoint.parse("10.0.0.2:5902") == Endpoint("10.0.0.2", 5902))
    _check("endpoint parse bare port", Endpoint.parse("5901") == Endpoint("127.0.0.1", 5901))


# ─── Test 5: pixel-exact capture ─────────────────────────────────────────────

def test_pixel_exact_capture():
    print("\n[5] 100 random scenes captured pixel-exactly")

    rng = np.random.default_rng(2024)
    first = random_scene(rng)
    mismatches = 0
    with serve(first) as server:
        session = connect(Endpoint("127.0.0.1", server.port))
        try:
            _check("ServerInit size", (session.width, session.height) == (first.width, first.height))
            for i in range(100):
                scene = first if i == 0 else random_scene(rng)
                server.set_scene(scene)
                frame = session.capture_frame()
                if not frame.same_pixels(render(scene)):
                    mismatches += 1
        finally:
            session.close()
        counts = server.message_counts
    _check("every capture matches the scene render", mismatches == 0, f"{mismatches} mismatched")
    _check("one update request per capture", counts["FramebufferUpdateRequest"] == 100,
           str(dict(counts)))
    _check("no input messages during capture",
           counts["PointerEvent"] == 0 and counts["KeyEvent"] == 0)


# ─── Test 6: session guards ──────────────────────────────────────────────────

def test_session_guards():
    print("\n[6] Session guards")

    scene = random_scene(np.random.default_rng(3))
    with serve(scene) as server:
        session = connect(Endpoint("127.0.0.1", server.port))
        try:
            session.send_pointer(PointerEvent(scene.width, 0))
            _check("x == width rejected", False)
        except CoordinatesOutOfRange:
            _check("x == width rejected", True)
        session.send_pointer(PointerEvent(5, 6, 1))
        _check("pointer state tracked",
               session.pointer_position == (5, 6) and session.button_mask == 1)
        session.close()
        try:
            session.send_key(KeyEvent(0x61, True))
            _check("closed session refuses input", False)
        except SessionClosed:
            _check("closed session refuses input", True)

    for kind in ("qemu-monitor", "serial"):
        try:
            open_channel(kind, Endpoint("127.0.0.1", 5900))
            _check(f"backend {kind} unsupported", False)
        except UnsupportedChannel as exc:
            _check(f"backend {kind} unsupported", exc.code == "unsupported-channel")


# ─── Main ─────────────────────────────────────────────────────────────────────

def main():
    print("=" * 60)
    print("  LifeSim — RFB Wire & Session Test")
    print("=" * 60)

    try:
        test_client_message_bytes()
        test_fb_update_bytes()
        test_decoders()
        test_handshake_failures()
        test_pixel_exact_capture()
        test_session_guards()
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
