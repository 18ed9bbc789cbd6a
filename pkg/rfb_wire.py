#!/usr/bin/env python3
"""
rfb_wire.py — RFB 3.8 message codecs (RFC 6143 subset).

Shared by the client (rfb_channel.py) and the server (rfb_server.py) so both
ends agree byte-for-byte.  Only what LifeSim speaks is covered:

  Handshake     ProtocolVersion "RFB 003.008\\n", security type None (1),
                SecurityResult, ClientInit, ServerInit
  Client → srv  SetPixelFormat (0), SetEncodings (2),
                FramebufferUpdateRequest (3), KeyEvent (4), PointerEvent (5),
                ClientCutText (6, parsed and ignored by the server)
  Server → cli  FramebufferUpdate (0) with Raw rectangles,
                SetColourMapEntries (1), Bell (2), ServerCutText (3)
                (the last three are skipped by the client)

Pixel format: 32 bpp, depth 24, little-endian, true colour, 8 bits per
channel with shifts R=16 G=8 B=0 — each pixel travels as bytes B, G, R, 0.
All multi-byte integers on the wire are big-endian.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

import numpy as np

# ─── Constants ────────────────────────────────────────────────────────────────

PROTOCOL_VERSION = b"RFB 003.008\n"

SECURITY_INVALID = 0
SECURITY_NONE    = 1

ENCODING_RAW = 0

# client → server
MSG_SET_PIXEL_FORMAT   = 0
MSG_SET_ENCODINGS      = 2
MSG_FB_UPDATE_REQUEST  = 3
MSG_KEY_EVENT          = 4
MSG_POINTER_EVENT      = 5
MSG_CLIENT_CUT_TEXT    = 6

CLIENT_MESSAGE_NAMES: dict[int, str] = {
    MSG_SET_PIXEL_FORMAT:  "SetPixelFormat",
    MSG_SET_ENCODINGS:     "SetEncodings",
    MSG_FB_UPDATE_REQUEST: "FramebufferUpdateRequest",
    MSG_KEY_EVENT:         "KeyEvent",
    MSG_POINTER_EVENT:     "PointerEvent",
    MSG_CLIENT_CUT_TEXT:   "ClientCutText",
}

# server → client
MSG_FB_UPDATE          = 0
MSG_SET_COLOUR_MAP     = 1
MSG_BELL               = 2
MSG_SERVER_CUT_TEXT    = 3

_PIXEL_FORMAT = struct.Struct(">BBBBHHHBBB3x")
_RECT_HEADER  = struct.Struct(">HHHHi")


class WireClosed(EOFError):
    """The peer closed the connection in the middle of a message."""


# ─── Pixel format ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class PixelFormat:
    bits_per_pixel: int = 32
    depth:          int = 24
    big_endian:     bool = False
    true_colour:    bool = True
    red_max:        int = 255
    green_max:      int = 255
    blue_max:       int = 255
    red_shift:      int = 16
    green_shift:    int = 8
    blue_shift:     int = 0

    def pack(self) -> bytes:
        return _PIXEL_FORMAT.pack(
            self.bits_per_pixel, self.depth, int(self.big_endian), int(self.true_colour),
            self.red_max, self.green_max, self.blue_max,
            self.red_shift, self.green_shift, self.blue_shift,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "PixelFormat":
        bpp, depth, be, tc, rmax, gmax, bmax, rs, gs, bs = _PIXEL_FORMAT.unpack(data)
        return cls(bpp, depth, bool(be), bool(tc), rmax, gmax, bmax, rs, gs, bs)


DEFAULT_PIXEL_FORMAT = PixelFormat()


# ─── Socket helper ────────────────────────────────────────────────────────────

def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise WireClosed(f"connection closed after {len(buf)}/{n} bytes")
        buf.extend(chunk)
    return bytes(buf)


# ─── Handshake ────────────────────────────────────────────────────────────────

def encode_security_types(types: list[int]) -> bytes:
    return bytes([len(types), *types])


def encode_security_result(ok: bool, reason: str = "") -> bytes:
    if ok:
        return struct.pack(">I", 0)
    raw = reason.encode("utf-8")
    return struct.pack(">II", 1, len(raw)) + raw


def encode_failure_reason(reason: str) -> bytes:
    raw = reason.encode("utf-8")
    return struct.pack(">I", len(raw)) + raw


def encode_server_init(width: int, height: int, name: str,
                       pixel_format: PixelFormat = DEFAULT_PIXEL_FORMAT) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack(">HH", width, height) + pixel_format.pack() + struct.pack(">I", len(raw)) + raw


# ─── Client messages ──────────────────────────────────────────────────────────

def encode_set_pixel_format(pixel_format: PixelFormat = DEFAULT_PIXEL_FORMAT) -> bytes:
    return struct.pack(">B3x", MSG_SET_PIXEL_FORMAT) + pixel_format.pack()


def encode_set_encodings(encodings: list[int]) -> bytes:
    return struct.pack(">BxH", MSG_SET_ENCODINGS, len(encodings)) + b"".join(
        struct.pack(">i", e) for e in encodings
    )


def encode_fb_update_request(incremental: bool, x: int, y: int, w: int, h: int) -> bytes:
    return struct.pack(">BBHHHH", MSG_FB_UPDATE_REQUEST, int(incremental), x, y, w, h)


def encode_key_event(keysym: int, down: bool) -> bytes:
    return struct.pack(">BBxxI", MSG_KEY_EVENT, int(down), keysym)


def encode_pointer_event(buttons: int, x: int, y: int) -> bytes:
    return struct.pack(">BBHH", MSG_POINTER_EVENT, buttons, x, y)


# Server-side decoders take the payload that follows the message-type byte.

def decode_fb_update_request(payload: bytes) -> tuple[bool, int, int, int, int]:
    incremental, x, y, w, h = struct.unpack(">BHHHH", payload)
    return bool(incremental), x, y, w, h


def decode_key_event(payload: bytes) -> tuple[bool, int]:
    down, keysym = struct.unpack(">BxxI", payload)
    return bool(down), keysym


def decode_pointer_event(payload: bytes) -> tuple[int, int, int]:
    buttons, x, y = struct.unpack(">BHH", payload)
    return buttons, x, y


# ─── Server messages ──────────────────────────────────────────────────────────

def encode_raw_pixels(rgba: np.ndarray) -> bytes:
    """(h, w, 4) RGBA → Raw bytes in the default pixel format (B, G, R, 0)."""
    h, w = rgba.shape[:2]
    out = np.zeros((h, w, 4), dtype=np.uint8)
    out[..., 0] = rgba[..., 2]
    out[..., 1] = rgba[..., 1]
    out[..., 2] = rgba[..., 0]
    return out.tobytes()


def decode_raw_pixels(data: bytes, w: int, h: int) -> np.ndarray:
    """Raw bytes in the default pixel format → (h, w, 4) RGBA with alpha 255."""
    src = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 4)
    out = np.empty((h, w, 4), dtype=np.uint8)
    out[..., 0] = src[..., 2]
    out[..., 1] = src[..., 1]
    out[..., 2] = src[..., 0]
    out[..., 3] = 255
    return out


def encode_fb_update(rects: list[tuple[int, int, np.ndarray]]) -> bytes:
    """FramebufferUpdate with one Raw rectangle per (x, y, rgba-block) entry."""
    parts = [struct.pack(">BxH", MSG_FB_UPDATE, len(rects))]
    for x, y, block in rects:
        h, w = block.shape[:2]
        parts.append(_RECT_HEADER.pack(x, y, w, h, ENCODING_RAW))
        parts.append(encode_raw_pixels(block))
    return b"".join(parts)


def decode_rect_header(data: bytes) -> tuple[int, int, int, int, int]:
    return _RECT_HEADER.unpack(data)


RECT_HEADER_SIZE = _RECT_HEADER.size
