"""FSTK v1: a plain-text frame-stack format.

Layout::

    FSTK 1
    rows cols frames dtype
    <frames blocks of rows lines, each with cols space-separated values>

``dtype`` is ``f64`` (17 significant digits, round-trips exactly), ``u32``
(counts) or ``u1`` (binary). Lines end in LF with no trailing whitespace.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .core import DataValidationError, as_stack

MAGIC = "FSTK 1"
DTYPES = {"f64": np.float64, "u32": np.uint32, "u1": np.uint8}


def _format_rows(frame, dtype):
    if dtype == "f64":
        return [" ".join(f"{v:.17g}" for v in row) for row in frame]
    return [" ".join(str(int(v)) for v in row) for row in frame]


def dumps(stack, dtype: str = "f64") -> str:
    if dtype not in DTYPES:
        raise ValueError(f"dtype must be one of {sorted(DTYPES)}")
    stack = as_stack(stack, dtype=float if dtype == "f64" else np.int64)
    if dtype == "f64" and not np.all(np.isfinite(stack)):
        raise DataValidationError("f64 stacks must be finite")
    if dtype == "u1" and np.any((stack != 0) & (stack != 1)):
        raise DataValidationError("u1 stacks must be binary")
    if dtype == "u32" and np.any((stack < 0) | (stack > np.iinfo(np.uint32).max)):
        raise DataValidationError("u32 stacks must hold values in [0, 2**32)")
    t, r, c = stack.shape
    lines = [MAGIC, f"{r} {c} {t} {dtype}"]
    for frame in stack:
        lines.extend(_format_rows(frame, dtype))
    return "\n".join(lines) + "\n"


def loads(text: str) -> tuple[np.ndarray, str]:
    """Parse FSTK text; returns ``(stack, dtype)`` with shape (frames, rows, cols)."""
    if "\r" in text:
        raise DataValidationError("FSTK files must use LF line endings")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2 or lines[0] != MAGIC:
        raise DataValidationError(f"not an FSTK v1 file (first line must be {MAGIC!r})")
    head = lines[1].split(" ")
    if len(head) != 4 or head[3] not in DTYPES:
        raise DataValidationError(f"bad FSTK header line {lines[1]!r}")
    try:
        r, c, t = (int(v) for v in head[:3])
    except ValueError:
        raise DataValidationError(f"bad FSTK dimensions {lines[1]!r}") from None
    if min(r, c, t) < 1:
        raise DataValidationError("FSTK dimensions must be positive")
    dtype = head[3]
    body = lines[2:]
    if len(body) != r * t:
        raise DataValidationError(f"expected {r * t} data lines, found {len(body)}")
    cast = float if dtype == "f64" else int
    out = np.empty((t, r, c), dtype=DTYPES[dtype])
    for n, line in enumerate(body):
        vals = line.split(" ")
        if len(vals) != c:
            raise DataValidationError(f"line {n + 3}: expected {c} values, found {len(vals)}")
        try:
            out[n // r, n % r] = [cast(v) for v in vals]
        except (ValueError, OverflowError):
            raise DataValidationError(f"line {n + 3}: unparseable value for dtype {dtype}") from None
    if dtype == "u1" and np.any(out > 1):
        raise DataValidationError("u1 stacks must be binary")
    return out, dtype


def read(path) -> tuple[np.ndarray, str]:
    with open(path, encoding="ascii", newline="") as f:
        return loads(f.read())


def write_atomic(path, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="ascii", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write(path, stack, dtype: str = "f64") -> None:
    write_atomic(path, dumps(stack, dtype))
