#!/usr/bin/env python3
"""
rfb_channel.py — Lowest LifeSim layer: drive a machine from the outside.

A Channel is the only way the agent touches an instrumented machine: it can
capture the screen and send pointer / key input, nothing else.  The RFB
(VNC) backend is the one that ships:

    connect(Endpoint("127.0.0.1", 5901))  → RFBSession
        capture_frame()   FramebufferUpdateRequest (full, non-incremental)
                          → Raw rectangles assembled into a Frame
        send_pointer(ev)  PointerEvent message, coordinates checked first
        send_key(ev)      KeyEvent message, keysym passed through untouched

Handshake subset: version 3.8 only, security type None only, 32 bpp
true-colour little-endian pixel format requested via SetPixelFormat, Raw
encoding only.  Every handshake failure is a distinct error carrying the
bytes the server actually sent.

Other backends (hypervisor monitor, in-guest helper) are declared in
CHANNEL_BACKENDS so callers can name them, but they are not implemented:

    open_channel("rfb", endpoint)           → RFBSession
    open_channel("qemu-monitor", endpoint)  → UnsupportedChannel

A session belongs to one agent at a time; hand it between threads but never
use it from two threads at once.
"""

from __future__ import annotations

import logging
import socket
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

import rfb_wire as wire
from desk_types import Frame, KeyEvent, PointerEvent, monotonic_ms
from lifesim_errors import LifeSimError

logger = logging.getLogger("lifesim.channel")

CONNECT_TIMEOUT_S: float = 5.0
IO_TIMEOUT_S: float = 15.0


# ─── Errors ───────────────────────────────────────────────────────────────────

class ConnectionRefused(LifeSimError):
    code = "connection-refused"

    def __init__(self, endpoint: "Endpoint", reason: str):
        super().__init__(f"cannot connect to {endpoint}: {reason}", endpoint=str(endpoint))
        self.endpoint = endpoint


class ProtocolVersionMismatch(LifeSimError):
    code = "protocol-version-mismatch"

    def __init__(self, offending: bytes):
        super().__init__(f"server speaks {offending!r}, expected {wire.PROTOCOL_VERSION!r}",
                         offending=offending)
        self.offending = offending


class SecurityNegotiationFailed(LifeSimError):
    code = "security-negotiation-failed"

    def __init__(self, offending: bytes, reason: str = ""):
        msg = f"security negotiation failed (server sent {offending!r})"
        if reason:
            msg += f": {reason}"
        super().__init__(msg, offending=offending, reason=reason)
        self.offending = offending
        self.reason = reason


class SessionClosed(LifeSimError):
    code = "session-closed"


class MalformedRectangle(LifeSimError):
    code = "malformed-rectangle"

    def __init__(self, message: str, rect: tuple[int, ...] = ()):
        super().__init__(message, rect=list(rect))
        self.rect = rect


class ProtocolViolation(LifeSimError):
    code = "protocol-violation"


class CoordinatesOutOfRange(LifeSimError):
    code = "coordinates-out-of-range"

    def __init__(self, x: int, y: int, width: int, height: int):
        super().__init__(f"pointer ({x}, {y}) outside {width}x{height} framebuffer",
                         x=x, y=y, width=width, height=height)


class UnsupportedChannel(LifeSimError):
    code = "unsupported-channel"


# ─── Endpoint ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int

    def __post_init__(self) -> None:
        if not self.host:
            raise ValueError("endpoint host must be non-empty")
        if not 1 <= self.port <= 65535:
            raise ValueError(f"endpoint port {self.port} outside 1–65535")

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        """'host:port' → Endpoint.  A bare port means localhost."""
        host, sep, port = text.rpartition(":")
        if not sep:
            host, port = "127.0.0.1", text
        try:
            return cls(host or "127.0.0.1", int(port))
        except ValueError as exc:
            raise ValueError(f"invalid endpoint {text!r}: {exc}") from None

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"


# ─── Channel interface ────────────────────────────────────────────────────────

class Channel(ABC):
    """
    Contract every backend fulfils.  Higher layers (humanizer playback,
    actions, recorder) only ever talk to this interface.
    """

    @property
    @abstractmethod
    def width(self) -> int: ...

    @property
    @abstractmethod
    def height(self) -> int: ...

    @property
    @abstractmethod
    def pointer_position(self) -> tuple[int, int]:
        """Last pointer position sent on this channel."""

    @property
    @abstractmethod
    def button_mask(self) -> int: ...

    @abstractmethod
    def capture_frame(self) -> Frame: ...

    @abstractmethod
    def send_pointer(self, event: PointerEvent) -> None: ...

    @abstractmethod
    def send_key(self, event: KeyEvent) -> None: ...

    @abstractmethod
    def close(self) -> None: ...

    def __enter__(self) -> "Channel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ─── RFB session ──────────────────────────────────────────────────────────────

class RFBSession(Channel):
    """A negotiated RFB 3.8 connection (see module docstring for the subset)."""

    def __init__(self, sock: socket.socket, endpoint: Endpoint,
                 width: int, height: int, name: str):
        self._sock = sock
        self.endpoint = endpoint
        self._width = width
        self._height = height
        self.name = name
        self._fb = np.zeros((height, width, 4), dtype=np.uint8)
        self._fb[..., 3] = 255
        self._pointer = (width // 2, height // 2)
        self._buttons = 0
        self._closed = False

    def __repr__(self) -> str:
        state = "closed" if self._closed else "live"
        return f"RFBSession({self.endpoint}, {self._width}x{self._height}, {state})"

    @property
    def width(self) -> int:
        return self._width

    @property
    def height(self) -> int:
        return self._height

    @property
    def pointer_position(self) -> tuple[int, int]:
        return self._pointer

    @property
    def button_mask(self) -> int:
        return self._buttons

    @property
    def closed(self) -> bool:
        return self._closed

    # ── I/O helpers ───────────────────────────────────────────────────────────

    def _ensure_open(self) -> None:
        if self._closed:
            raise SessionClosed(f"session to {self.endpoint} is closed")

    def _send(self, data: bytes) -> None:
        self._ensure_open()
        try:
            self._sock.sendall(data)
        except OSError as exc:
            self.close()
            raise SessionClosed(f"send to {self.endpoint} failed: {exc}") from exc

    def _recv(self, n: int) -> bytes:
        try:
            return wire.recv_exact(self._sock, n)
        except (wire.WireClosed, OSError) as exc:
            self.close()
            raise SessionClosed(f"receive from {self.endpoint} failed: {exc}") from exc

    # ── Operations ────────────────────────────────────────────────────────────

    def capture_frame(self) -> Frame:
        self._send(wire.encode_fb_update_request(False, 0, 0, self._width, self._height))
        while True:
            msg_type = self._recv(1)[0]
            if msg_type == wire.MSG_FB_UPDATE:
                self._read_update()
                return Frame(self._width, self._height, self._fb.copy(), monotonic_ms())
            if msg_type == wire.MSG_BELL:
                continue
            if msg_type == wire.MSG_SERVER_CUT_TEXT:
                (length,) = struct.unpack(">3xI", self._recv(7))
                self._recv(length)
                continue
            if msg_type == wire.MSG_SET_COLOUR_MAP:
                _first, count = struct.unpack(">xHH", self._recv(5))
                self._recv(6 * count)
                continue
            self.close()
            raise ProtocolViolation(f"unexpected server message type {msg_type}",
                                    offending=bytes([msg_type]))

    def _read_update(self) -> None:
        (count,) = struct.unpack(">xH", self._recv(3))
        for _ in range(count):
            x, y, w, h, encoding = wire.decode_rect_header(self._recv(wire.RECT_HEADER_SIZE))
            if encoding != wire.ENCODING_RAW:
                self.close()
                raise MalformedRectangle(f"unsupported encoding {encoding}", (x, y, w, h))
            if x + w > self._width or y + h > self._height:
                self.close()
                raise MalformedRectangle(
                    f"rectangle {(x, y, w, h)} outside {self._width}x{self._height} framebuffer",
                    (x, y, w, h),
                )
            if w == 0 or h == 0:
                continue
            data = self._recv(w * h * 4)
            self._fb[y:y + h, x:x + w] = wire.decode_raw_pixels(data, w, h)

    def send_pointer(self, event: PointerEvent) -> None:
        self._ensure_open()
        if not (0 <= event.x < self._width and 0 <= event.y < self._height):
            raise CoordinatesOutOfRange(event.x, event.y, self._width, self._height)
        if not 0 <= event.buttons <= 0xFF:
            raise ValueError(f"button mask {event.buttons:#x} is not 8-bit")
        self._send(wire.encode_pointer_event(event.buttons, event.x, event.y))
        self._pointer = (event.x, event.y)
        self._buttons = event.buttons

    def send_key(self, event: KeyEvent) -> None:
        self._send(wire.encode_key_event(event.keysym, event.pressed))

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass
        logger.debug("session to %s closed", self.endpoint)


# ─── Connect ──────────────────────────────────────────────────────────────────

def connect(endpoint: Endpoint, timeout: float = CONNECT_TIMEOUT_S,
            io_timeout: float = IO_TIMEOUT_S) -> RFBSession:
    """Open a TCP connection and run the RFB 3.8 / security-None handshake."""
    try:
        sock = socket.create_connection((endpoint.host, endpoint.port), timeout=timeout)
    except OSError as exc:
        raise ConnectionRefused(endpoint, str(exc)) from exc

    try:
        session = _handshake(sock, endpoint)
    except (wire.WireClosed, OSError) as exc:
        sock.close()
        raise SessionClosed(f"{endpoint} closed the connection during handshake: {exc}") from exc
    except LifeSimError:
        sock.close()
        raise

    sock.settimeout(io_timeout)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    logger.info("connected to %s (%dx%d, %r)", endpoint, session.width, session.height, session.name)
    return session


def _handshake(sock: socket.socket, endpoint: Endpoint) -> RFBSession:
    banner = wire.recv_exact(sock, len(wire.PROTOCOL_VERSION))
    if banner != wire.PROTOCOL_VERSION:
        raise ProtocolVersionMismatch(banner)
    sock.sendall(wire.PROTOCOL_VERSION)

    count = wire.recv_exact(sock, 1)
    if count[0] == 0:
        raw_len = wire.recv_exact(sock, 4)
        reason = wire.recv_exact(sock, struct.unpack(">I", raw_len)[0])
        raise SecurityNegotiationFailed(count + raw_len + reason, reason.decode("utf-8", "replace"))
    types = wire.recv_exact(sock, count[0])
    if wire.SECURITY_NONE not in types:
        raise SecurityNegotiationFailed(count + types, "security type None not offered")
    sock.sendall(bytes([wire.SECURITY_NONE]))

    result = wire.recv_exact(sock, 4)
    if struct.unpack(">I", result)[0] != 0:
        reason = b""
        try:
            raw_len = wire.recv_exact(sock, 4)
            reason = raw_len + wire.recv_exact(sock, struct.unpack(">I", raw_len)[0])
        except wire.WireClosed:
            pass
        raise SecurityNegotiationFailed(result + reason, reason[4:].decode("utf-8", "replace"))

    sock.sendall(b"\x01")   # ClientInit, shared
    width, height = struct.unpack(">HH", wire.recv_exact(sock, 4))
    wire.PixelFormat.unpack(wire.recv_exact(sock, 16))
    (name_len,) = struct.unpack(">I", wire.recv_exact(sock, 4))
    name = wire.recv_exact(sock, name_len).decode("utf-8", "replace")
    if width == 0 or height == 0:
        raise ProtocolViolation(f"server reported empty framebuffer {width}x{height}")

    sock.sendall(wire.encode_set_pixel_format(wire.DEFAULT_PIXEL_FORMAT))
    sock.sendall(wire.encode_set_encodings([wire.ENCODING_RAW]))
    return RFBSession(sock, endpoint, width, height, name)


# ─── Functional API ───────────────────────────────────────────────────────────

def capture_frame(session: Channel) -> Frame:
    return session.capture_frame()


def send_pointer(session: Channel, event: PointerEvent) -> None:
    session.send_pointer(event)


def send_key(session: Channel, event: KeyEvent) -> None:
    session.send_key(event)


# ─── Backend registry ─────────────────────────────────────────────────────────

CHANNEL_BACKENDS: dict[str, Optional[Callable[[Endpoint], Channel]]] = {
    "rfb":          connect,
    "qemu-monitor": None,
    "guest-agent":  None,
}


def open_channel(kind: str, endpoint: Endpoint) -> Channel:
    if kind not in CHANNEL_BACKENDS:
        raise UnsupportedChannel(f"unknown channel backend {kind!r}", kind=kind)
    factory = CHANNEL_BACKENDS[kind]
    if factory is None:
        raise UnsupportedChannel(f"channel backend {kind!r} is declared but not implemented",
                                 kind=kind)
    return factory(endpoint)
