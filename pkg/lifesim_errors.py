#!/usr/bin/env python3
"""
lifesim_errors.py — Exception hierarchy shared by every LifeSim layer.

Every domain failure is a LifeSimError carrying a stable kebab-case `code`
(the CLI prints it and maps it to exit status 1) plus whatever context the
raising layer knows about: offending bytes, paths, element ids, HTTP status.

Module-specific subclasses live next to the code that raises them
(rfb_channel.ConnectionRefused, vision.TemplateLargerThanFrame, ...) and only
the base class and a few cross-cutting errors are defined here.
"""

from __future__ import annotations

from typing import Any, Optional


class LifeSimError(Exception):
    """Base class for all domain errors. `code` is stable across releases."""

    code: str = "lifesim-error"

    def __init__(self, message: str = "", **detail: Any):
        super().__init__(message or self.code)
        self.detail: dict[str, Any] = detail

    def as_dict(self) -> dict:
        out: dict[str, Any] = {"code": self.code, "message": str(self)}
        for key, value in self.detail.items():
            if isinstance(value, (bytes, bytearray)):
                value = bytes(value).hex()
            out[key] = value
        return out

    def __repr__(self) -> str:
        return f"{type(self).__name__}(code={self.code!r}, message={str(self)!r})"


class ParseError(LifeSimError):
    """A structured-text document failed to parse or validate."""

    code = "parse-error"

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message, path=path)
        self.path = path


class OutOfBounds(LifeSimError):
    """A point or rectangle lies outside the screen it refers to."""

    code = "out-of-bounds"
