"""Two-line text format for tensors.

Line one holds the comma-separated shape, line two the comma-separated
values in row-major order. Integral values are written without a decimal
point; everything else uses Python's shortest round-trip ``repr``, so a
write/read cycle reproduces every float64 bit-for-bit.
"""

from __future__ import annotations

import math
import os
import tempfile
from pathlib import Path

import numpy as np


class TextFormatError(ValueError):
    """Malformed tensor document; ``line`` and ``column`` are 1-based."""

    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def _format_value(v):
    v = float(v)
    if v.is_integer() and abs(v) < 2**53:
        if v == 0 and math.copysign(1.0, v) < 0:
            return "-0"
        return str(int(v))
    return repr(v)


def format_tensor(tensor):
    a = np.asarray(tensor)
    if a.ndim == 0:
        raise ValueError("cannot write a tensor with an empty shape")
    shape = ",".join(str(n) for n in a.shape)
    values = ",".join(_format_value(v) for v in a.ravel(order="C").tolist())
    return f"{shape}\n{values}"


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="ascii", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def tensor_to_text(tensor, sink=None):
    """Serialize ``tensor``; also write it to ``sink`` (a path or a writable file)."""
    text = format_tensor(tensor)
    if sink is None:
        return text
    if isinstance(sink, (str, os.PathLike)):
        atomic_write_text(sink, text)
    else:
        sink.write(text)
    return text


def parse_tensor(text, dtype=np.float64):
    lines = text.split("\n")
    if len(lines) == 3 and lines[-1] == "":
        lines.pop()
    if len(lines) != 2:
        raise TextFormatError(f"expected 2 lines, found {len(lines)}", min(len(lines), 2) + 1, 1)

    shape = []
    col = 1
    for tok in lines[0].split(","):
        s = tok.strip()
        if not s.isdigit():
            raise TextFormatError(f"bad shape entry {tok!r}", 1, col)
        shape.append(int(s))
        col += len(tok) + 1
    expected = math.prod(shape)

    body = lines[1]
    tokens = body.split(",") if body else []
    if len(tokens) != expected:
        raise TextFormatError(
            f"found {len(tokens)} values, shape {tuple(shape)} needs {expected}",
            2,
            len(body) + 1,
        )
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        col = 1
        for tok in tokens:
            try:
                float(tok)
            except ValueError:
                raise TextFormatError(f"non-numeric value {tok!r}", 2, col) from None
            col += len(tok) + 1
        raise
    return np.array(values, dtype=np.float64).reshape(shape).astype(dtype, copy=False)


def text_to_tensor(source, dtype=np.float64):
    """Read a tensor from a path, a readable file, or the document string itself."""
    if isinstance(source, os.PathLike):
        text = Path(source).read_text(encoding="ascii")
    elif isinstance(source, str):
        text = source if "\n" in source else Path(source).read_text(encoding="ascii")
    else:
        text = source.read()
    return parse_tensor(text, dtype=dtype)
