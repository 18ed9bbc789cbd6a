#!/usr/bin/env python3
"""
rfb_server.py — Minimal RFB 3.8 server loop over a pluggable framebuffer.

Speaks the same subset as rfb_channel.py (security None, 32 bpp true colour
little-endian, Raw only).  What is on the screen and what input does is up to
the backend:

    SimdeskBackend      (simdesk.py)   synthetic desktop scene
    RecordingProxy      (recorder.py)  relays an operator's viewer to a
                                       live session through a recording tap

Architecture:
  RFBServer.start()  → listening socket + accept thread
                     → one client at a time, messages handled in arrival order
                     → FramebufferUpdateRequest  → backend.framebuffer()
                       PointerEvent / KeyEvent   → backend.pointer() / key()
  RFBServer.stop()   → closes listener and the active client, joins the thread

Every client message is counted by type name in `message_counts`, which is
what the trace-freeness checks read.
"""

from __future__ import annotations

import errno
import logging
import socket
import struct
import threading
from abc import ABC, abstractmethod
from collections import Counter
from typing import Optional

import numpy as np

import rfb_wire as wire
from lifesim_errors import LifeSimError

logger = logging.getLogger("lifesim.rfb_server")

ACCEPT_POLL_S: float = 0.2


class PortInUse(LifeSimError):
    code = "port-in-use"

    def __init__(self, host: str, port: int):
        super().__init__(f"port {port} on {host} is already in use", host=host, port=port)
        self.port = port


# ─── Backend interface ────────────────────────────────────────────────────────

class FramebufferBackend(ABC):

    @property
    @abstractmethod
    def size(self) -> tuple[int, int]:
        """(width, height) reported in ServerInit."""

    @abstractmethod
    def framebuffer(self) -> np.ndarray:
        """Current screen as (height, width, 4) RGBA uint8."""

    @abstractmethod
    def pointer(self, buttons: int, x: int, y: int) -> None: ...

    @abstractmethod
    def key(self, down: bool, keysym: int) -> None: ...

    def client_connected(self) -> None:
        pass

    def client_disconnected(self) -> None:
        pass


# ─── Server ───────────────────────────────────────────────────────────────────

class RFBServer:
    """Single-client-at-a-time RFB server. Use as a context manager or start()/stop()."""

    def __init__(self, backend: FramebufferBackend, host: str = "127.0.0.1",
                 port: int = 0, name: str = "lifesim"):
        self.backend = backend
        self.host = host
        self.name = name
        self._requested_port = port
        self._listener: Optional[socket.socket] = None
        self._client: Optional[socket.socket] = None
        self._thread: Optional[threading.Thread] = None
        self._stopping = threading.Event()
        self._stats_lock = threading.Lock()
        self._counts: Counter = Counter()
        self.clients_served = 0

    # ── Lifecycle ─────────────────────────────────────────────────────────────

    def start(self) -> "RFBServer":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((self.host, self._requested_port))
        except OSError as exc:
            listener.close()
            if exc.errno in (errno.EADDRINUSE, errno.EACCES):
                raise PortInUse(self.host, self._requested_port) from exc
            raise
        listener.listen(4)
        listener.settimeout(ACCEPT_POLL_S)
        self._listener = listener
        self._thread = threading.Thread(target=self._accept_loop, name=f"rfb-server-{self.port}",
                                        daemon=True)
        self._thread.start()
        logger.info("RFB server %r listening on %s:%d", self.name, self.host, self.port)
        return self

    def stop(self) -> None:
        self._stopping.set()
        client = self._client
        if client is not None:
            try:
                client.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        if self._thread is not None:
            self._thread.join(timeout=5.0)
        if self._listener is not None:
            self._listener.close()
        logger.info("RFB server %r stopped (clients=%d, messages=%s)",
                    self.name, self.clients_served, dict(self.message_counts))

    def __enter__(self) -> "RFBServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def port(self) -> int:
        if self._listener is None:
            return self._requested_port
        return self._listener.getsockname()[1]

    @property
    def message_counts(self) -> Counter:
        with self._stats_lock:
            return Counter(self._counts)

    # ── Accept loop ───────────────────────────────────────────────────────────

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._stopping.is_set():
            try:
                conn, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._client = conn
            self.clients_served += 1
            logger.debug("client %s:%d connected", *addr[:2])
            try:
                self._serve_client(conn)
            except (wire.WireClosed, OSError) as exc:
                logger.debug("client disconnected: %s", exc)
            except Exception:
                logger.exception("client handler crashed")
            finally:
                self._client = None
                try:
                    conn.close()
                except OSError:
                    pass
                self.backend.client_disconnected()

    # ── Per-client protocol ───────────────────────────────────────────────────

    def _serve_client(self, conn: socket.socket) -> None:
        conn.sendall(wire.PROTOCOL_VERSION)
        version = wire.recv_exact(conn, len(wire.PROTOCOL_VERSION))
        if version != wire.PROTOCOL_VERSION:
            logger.warning("client requested unsupported version %r", version)
            return

        conn.sendall(wire.encode_security_types([wire.SECURITY_NONE]))
        choice = wire.recv_exact(conn, 1)[0]
        if choice != wire.SECURITY_NONE:
            conn.sendall(wire.encode_security_result(False, f"security type {choice} not supported"))
            return
        conn.sendall(wire.encode_security_result(True))

        wire.recv_exact(conn, 1)   # ClientInit shared flag; single client either way
        width, height = self.backend.size
        conn.sendall(wire.encode_server_init(width, height, self.name))
        self.backend.client_connected()

        while not self._stopping.is_set():
            msg_type = wire.recv_exact(conn, 1)[0]
            name = wire.CLIENT_MESSAGE_NAMES.get(msg_type)
            if name is None:
                logger.warning("unknown client message type %d, dropping client", msg_type)
                return
            with self._stats_lock:
                self._counts[name] += 1

            if msg_type == wire.MSG_SET_PIXEL_FORMAT:
                fmt = wire.PixelFormat.unpack(wire.recv_exact(conn, 19)[3:])
                if fmt != wire.DEFAULT_PIXEL_FORMAT:
                    logger.warning("client asked for unsupported pixel format %s", fmt)
                    return
            elif msg_type == wire.MSG_SET_ENCODINGS:
                (count,) = struct.unpack(">xH", wire.recv_exact(conn, 3))
                wire.recv_exact(conn, 4 * count)
            elif msg_type == wire.MSG_FB_UPDATE_REQUEST:
                _incr, x, y, w, h = wire.decode_fb_update_request(wire.recv_exact(conn, 9))
                conn.sendall(self._update_message(x, y, w, h))
            elif msg_type == wire.MSG_KEY_EVENT:
                down, keysym = wire.decode_key_event(wire.recv_exact(conn, 7))
                self.backend.key(down, keysym)
            elif msg_type == wire.MSG_POINTER_EVENT:
                buttons, x, y = wire.decode_pointer_event(wire.recv_exact(conn, 5))
                self.backend.pointer(buttons, x, y)
            elif msg_type == wire.MSG_CLIENT_CUT_TEXT:
                (length,) = struct.unpack(">3xI", wire.recv_exact(conn, 7))
                wire.recv_exact(conn, length)

    def _update_message(self, x: int, y: int, w: int, h: int) -> bytes:
        fb = self.backend.framebuffer()
        fh, fw = fb.shape[:2]
        x0, y0 = min(x, fw), min(y, fh)
        x1, y1 = min(x + w, fw), min(y + h, fh)
        if x1 <= x0 or y1 <= y0:
            return wire.encode_fb_update([])
        return wire.encode_fb_update([(x0, y0, fb[y0:y1, x0:x1])])
