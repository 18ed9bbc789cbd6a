#!/usr/bin/env python3
"""
keysyms.py — Character ↔ X11 keysym mapping (US layout).

Printable ASCII and Latin-1 characters map to the keysym equal to their code
point.  Upper-case letters travel as Shift + the lower-case keysym; the
shifted punctuation of a US keyboard travels as Shift + its own keysym, the
way VNC viewers send it.
"""

from __future__ import annotations

from typing import Optional

from lifesim_errors import LifeSimError

XK_BackSpace = 0xFF08
XK_Tab       = 0xFF09
XK_Return    = 0xFF0D
XK_Escape    = 0xFF1B
XK_Shift_L   = 0xFFE1
XK_Shift_R   = 0xFFE2

SHIFT_KEYSYMS = frozenset({XK_Shift_L, XK_Shift_R})
SHIFTED_SYMBOLS = frozenset('~!@#$%^&*()_+{}|:"<>?')


class UnmappableCharacter(LifeSimError):
    code = "unmappable-character"

    def __init__(self, ch: str, position: int = -1):
        super().__init__(f"no keysym for character {ch!r} (U+{ord(ch):04X})",
                         character=ch, position=position)
        self.character = ch


def char_to_keystroke(ch: str) -> tuple[int, bool]:
    """Character → (keysym, needs_shift)."""
    if ch == "\n":
        return XK_Return, False
    if ch == "\t":
        return XK_Tab, False
    code = ord(ch)
    if "A" <= ch <= "Z":
        return ord(ch.lower()), True
    if 0x20 <= code <= 0x7E:
        return code, ch in SHIFTED_SYMBOLS
    if 0xA0 <= code <= 0xFF:
        return code, False
    raise UnmappableCharacter(ch)


def keysym_to_char(keysym: int, shift: bool = False) -> Optional[str]:
    """Keysym → the character it types, or None for non-printing keys."""
    if keysym == XK_Return:
        return "\n"
    if keysym == XK_Tab:
        return "\t"
    if 0x20 <= keysym <= 0x7E:
        ch = chr(keysym)
        return ch.upper() if shift and "a" <= ch <= "z" else ch
    if 0xA0 <= keysym <= 0xFF:
        return chr(keysym)
    return None
