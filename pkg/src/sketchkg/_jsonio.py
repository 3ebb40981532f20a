"""Strict JSON decoding shared by every parser that reads untrusted text."""

from __future__ import annotations

import json

from .exceptions import MalformedJson


def _reject_constant(name):
    raise ValueError(f"{name} is not valid JSON")


def loads_strict(text):
    """Decode exactly one JSON value from UTF-8 bytes or str.

    NaN/Infinity literals and trailing content are rejected.  Every failure
    surfaces as :class:`MalformedJson` with a byte offset when one is known.
    """
    if isinstance(text, (bytes, bytearray, memoryview)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson("invalid UTF-8", exc.start) from None
    if not isinstance(text, str):
        raise MalformedJson("expected text input")
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise MalformedJson(exc.msg, offset) from None
    except ValueError as exc:
        raise MalformedJson(str(exc)) from None
    except RecursionError:
        raise MalformedJson("nesting too deep") from None
