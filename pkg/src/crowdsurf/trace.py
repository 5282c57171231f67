"""HTTP request log records, the TSV trace format, and record-level helpers."""

from __future__ import annotations

import gzip
import io
import math
import os
from dataclasses import dataclass, replace
from typing import IO, Iterable, Iterator, NamedTuple
from urllib.parse import urlsplit

__all__ = [
    "HttpRequestRecord",
    "QueryParam",
    "TraceParseError",
    "parse_record",
    "serialize_record",
    "read_trace",
    "write_trace",
    "extract_query_params",
    "split_path",
    "host_matches",
    "referer_host",
    "is_third_party",
]

N_COLUMNS = 6


class TraceParseError(ValueError):
    """A trace line could not be parsed. ``lineno`` is 1-based when known."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        self.reason = message
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True, slots=True)
class HttpRequestRecord:
    ts: float
    user: str
    method: str
    hostname: str
    path: str
    referer: str = ""

    def __post_init__(self):
        _check_fields(self)

    @property
    def url(self) -> str:
        """Scheme-less URL, ``hostname + path``."""
        return self.hostname + self.path

    def replace(self, **changes) -> "HttpRequestRecord":
        return replace(self, **changes)


class QueryParam(NamedTuple):
    key: str
    value: str


def _check_fields(r: HttpRequestRecord) -> None:
    if not (isinstance(r.ts, (int, float)) and math.isfinite(r.ts) and r.ts >= 0):
        raise ValueError(f"timestamp must be finite and non-negative, got {r.ts!r}")
    if not r.user:
        raise ValueError("user identifier is empty")
    if not r.method or any(c.isspace() for c in r.method):
        raise ValueError(f"bad method token {r.method!r}")
    if not r.hostname:
        raise ValueError("hostname is empty")
    if "/" in r.hostname or any(c.isspace() for c in r.hostname):
        raise ValueError(f"bad hostname {r.hostname!r}")
    if not r.path.startswith("/"):
        raise ValueError(f"path must begin with '/', got {r.path!r}")
    for name in ("user", "method", "hostname", "path", "referer"):
        value = getattr(r, name)
        if "\t" in value or "\n" in value or "\r" in value:
            raise ValueError(f"{name} contains a tab or newline")


def parse_record(line: str, lineno: int | None = None) -> HttpRequestRecord:
    """Parse one TSV trace row (trailing newline allowed)."""
    line = line.rstrip("\r\n")
    cols = line.split("\t")
    if len(cols) != N_COLUMNS:
        raise TraceParseError(f"expected {N_COLUMNS} columns, got {len(cols)}", lineno)
    ts_s, user, method, hostname, path, referer = cols
    try:
        ts = float(ts_s)
    except ValueError:
        raise TraceParseError(f"non-numeric timestamp {ts_s!r}", lineno) from None
    try:
        return HttpRequestRecord(ts, user, method, hostname.lower(), path, referer)
    except ValueError as exc:
        raise TraceParseError(str(exc), lineno) from None


def serialize_record(r: HttpRequestRecord) -> str:
    """Inverse of :func:`parse_record`, without the trailing newline."""
    return "\t".join((repr(float(r.ts)), r.user, r.method, r.hostname, r.path, r.referer))


def _open_text(path: str | os.PathLike, mode: str) -> IO[str]:
    if os.fspath(path).endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, mode + "b"), encoding="utf-8", newline="\n")
    return open(path, mode, encoding="utf-8", newline="\n")


def iter_lines(lines: Iterable[str]) -> Iterator[HttpRequestRecord]:
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("#"):
            continue
        yield parse_record(line, lineno)


def read_trace(path: str | os.PathLike) -> Iterator[HttpRequestRecord]:
    """Stream records from a trace file; ``.gz`` files are decompressed."""
    with _open_text(path, "r") as fh:
        yield from iter_lines(fh)


def write_trace(records: Iterable[HttpRequestRecord], path: str | os.PathLike) -> int:
    n = 0
    with _open_text(path, "w") as fh:
        for r in records:
            fh.write(serialize_record(r))
            fh.write("\n")
            n += 1
    return n


def split_path(path: str) -> tuple[str, str | None]:
    """Split ``path`` at the first '?'; the query is None when absent."""
    base, sep, query = path.partition("?")
    return base, (query if sep else None)


def extract_query_params(path: str) -> list[QueryParam]:
    """Key/value pairs after the first '?', byte-exact, in order, duplicates kept.

    Fragments without '=' yield an empty value; fragments with an empty key
    are dropped.
    """
    _, query = split_path(path)
    if not query:
        return []
    params = []
    for fragment in query.split("&"):
        key, _, value = fragment.partition("=")
        if key:
            params.append(QueryParam(key, value))
    return params


def host_matches(hostname: str, domain: str) -> bool:
    """Suffix match at a label boundary: ``adnxs.com`` matches ``ib.adnxs.com``."""
    hostname = hostname.lower().rstrip(".")
    domain = domain.lower().strip(".")
    if not domain:
        return False
    return hostname == domain or hostname.endswith("." + domain)


def referer_host(referer: str) -> str | None:
    """Host component of a referer URL, or None if it cannot be parsed."""
    if not referer:
        return None
    candidate = referer if "://" in referer else "//" + referer
    try:
        host = urlsplit(candidate).hostname
    except ValueError:
        return None
    return host or None


def is_third_party(record: HttpRequestRecord, target: str) -> bool:
    """True when ``target`` is not the request host but is the referring page's host."""
    if host_matches(record.hostname, target):
        return False
    host = referer_host(record.referer)
    return host is not None and host_matches(host, target)
