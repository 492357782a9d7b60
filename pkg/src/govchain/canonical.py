"""Canonical key-value serialization and SHA-256 digests.

Every hash in the system (payload hashes, block hashes, observation anchors,
effect hashes) is computed over the bytes produced by :func:`dumps`. The
grammar is JSON with these restrictions:

* object keys sorted by their UTF-8 byte value,
* no insignificant whitespace,
* numbers in plain decimal (no exponent, trailing zeros trimmed), so
  ``45.0`` and ``45`` serialize identically,
* NaN and infinities are rejected.

``dumps(loads(b)) == b`` holds for any ``b`` produced by :func:`dumps`.
"""

from __future__ import annotations

import hashlib
import json
import math
from decimal import Decimal
from typing import Any, Mapping

ZERO_DIGEST = "0" * 64
_HEX = frozenset("0123456789abcdef")


class CanonicalError(ValueError):
    """Raised for values or documents outside the canonical grammar."""


def format_number(value: int | float | Decimal) -> str:
    if isinstance(value, bool):
        raise CanonicalError("booleans are not numbers")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise CanonicalError(f"non-finite number {value!r}")
        value = Decimal(repr(value))
    text = format(value, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("-0", ""):
        text = "0"
    return text


def _encode(value: Any, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, (int, float, Decimal)):
        out.append(format_number(value))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, Mapping):
        for key in value:
            if not isinstance(key, str):
                raise CanonicalError(f"non-string key {key!r}")
        out.append("{")
        for i, key in enumerate(sorted(value, key=lambda k: k.encode("utf-8"))):
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    elif isinstance(value, (set, frozenset)):
        _encode(sorted(value), out)
    else:
        raise CanonicalError(f"unsupported type {type(value).__name__}")


def dumps(value: Any) -> str:
    out: list[str] = []
    _encode(value, out)
    return "".join(out)


def dumpb(value: Any) -> bytes:
    return dumps(value).encode("utf-8")


def _no_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    result: dict[str, Any] = {}
    for key, val in pairs:
        if key in result:
            raise CanonicalError(f"duplicate key {key!r}")
        result[key] = val
    return result


def _reject_constant(name: str) -> Any:
    raise CanonicalError(f"constant {name} not allowed")


def loads(text: str | bytes) -> Any:
    """Parse a document in the canonical grammar (whitespace tolerated)."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CanonicalError(str(exc)) from exc
    try:
        return json.loads(
            text,
            object_pairs_hook=_no_duplicates,
            parse_constant=_reject_constant,
        )
    except json.JSONDecodeError as exc:
        raise CanonicalError(str(exc)) from exc


def is_canonical(text: str) -> bool:
    try:
        return dumps(loads(text)) == text
    except CanonicalError:
        return False


def sha256_hex(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def digest(value: Any) -> str:
    """SHA-256 (lowercase hex) of the canonical serialization of ``value``."""
    return sha256_hex(dumpb(value))


def is_digest(value: Any) -> bool:
    return isinstance(value, str) and len(value) == 64 and set(value) <= _HEX
