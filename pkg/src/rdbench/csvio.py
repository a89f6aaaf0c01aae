"""Small CSV helpers: strict header parsing and atomic writes."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ParseError


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    atomic_write_text(path, render_csv(header, rows))


def read_rows(path, required: Sequence[str], aliases: Mapping[str, str] | None = None,
              optional: Sequence[str] = ()) -> list[tuple[int, dict[str, str]]]:
    """Read a headed CSV into (line number, row) pairs keyed by canonical column names.

    ``aliases`` maps foreign column names (lower-cased) onto canonical ones.
    Unknown columns are ignored; missing required columns raise ParseError.
    """
    aliases = {k.strip().lower(): v for k, v in (aliases or {}).items()}
    path = str(path)
    try:
        with open(path, encoding="utf-8-sig", newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ParseError(str(exc), path) from exc
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file (header row required)", path, 1) from None
    columns = []
    for name in header:
        key = name.strip().lower()
        columns.append(aliases.get(key, key))
    missing = [c for c in required if c not in columns]
    if missing:
        raise ParseError(f"missing column(s) {', '.join(missing)}; header is {header}", path, 1)
    wanted = set(required) | set(optional)
    out = []
    for lineno, raw in enumerate(reader, start=2):
        if not raw or all(not cell.strip() for cell in raw):
            continue
        if len(raw) != len(columns):
            raise ParseError(f"expected {len(columns)} fields, got {len(raw)}", path, lineno)
        row = {c: v.strip() for c, v in zip(columns, raw) if c in wanted}
        out.append((lineno, row))
    return out


def parse_float(text: str, column: str, path, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"column {column!r}: not a number: {text!r}", str(path), line) from None


def parse_int(text: str, column: str, path, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"column {column!r}: not an integer: {text!r}", str(path), line) from None
