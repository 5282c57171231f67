"""Collector core: registrations, batch ingestion, retention-bounded storage."""

from __future__ import annotations

import json
import logging
import math
import os
import re
import secrets
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Sequence

from ..anonymize import DEFAULT_EPOCH_S, HASH_HEX_CHARS, SALT_BYTES
from ..trace import HttpRequestRecord, extract_query_params, is_third_party

log = logging.getLogger(__name__)

DEFAULT_RETENTION_S = 7 * 86_400.0
DEFAULT_MAX_BATCH_RECORDS = 1_000
DEFAULT_SKEW_S = 300.0

_TOKEN = re.compile(rf"^[0-9a-f]{{{HASH_HEX_CHARS}}}$")


class CollectorError(Exception):
    status = 500


class ValidationError(CollectorError):
    status = 400


class Unauthorized(CollectorError):
    status = 401


class PayloadTooLarge(CollectorError):
    status = 413


class StorageUnavailable(CollectorError):
    """Retryable."""

    status = 503


@dataclass(frozen=True)
class RegistrationGrant:
    contributor_id: str
    epoch_salt: bytes
    epoch_length: float
    expires_at: float | None = None


@dataclass(frozen=True)
class ReportBatch:
    """``records`` may hold raw JSON objects until the collector validates them."""

    contributor_id: str
    records: tuple
    created_at: float


@dataclass(frozen=True)
class StoredReport:
    batch: ReportBatch
    received_at: float
    expires_at: float


def record_to_json(r: HttpRequestRecord) -> dict:
    return {"ts": r.ts, "user": r.user, "method": r.method, "hostname": r.hostname, "path": r.path, "referer": r.referer}


def record_from_json(d) -> HttpRequestRecord:
    if not isinstance(d, dict):
        raise ValidationError("record must be a JSON object")
    try:
        ts = d["ts"]
        if isinstance(ts, bool) or not isinstance(ts, (int, float)):
            raise ValidationError("record ts must be a number")
        fields = [d[k] for k in ("user", "method", "hostname", "path")]
        referer = d.get("referer", "")
        if not all(isinstance(f, str) for f in fields + [referer]):
            raise ValidationError("record fields must be strings")
        return HttpRequestRecord(float(ts), *fields, referer)
    except KeyError as exc:
        raise ValidationError(f"record is missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ValidationError(f"invalid record: {exc}") from None


def batch_from_json(body) -> ReportBatch:
    if not isinstance(body, dict):
        raise ValidationError("body must be a JSON object")
    cid = body.get("contributor_id")
    created_at = body.get("created_at")
    records = body.get("records")
    if not isinstance(cid, str) or not cid:
        raise ValidationError("contributor_id must be a non-empty string")
    if isinstance(created_at, bool) or not isinstance(created_at, (int, float)) or not math.isfinite(created_at):
        raise ValidationError("created_at must be a number")
    if not isinstance(records, list):
        raise ValidationError("records must be a list")
    return ReportBatch(cid, tuple(body["records"]), float(created_at))


def batch_to_json(b: ReportBatch) -> dict:
    return {"contributor_id": b.contributor_id, "created_at": b.created_at, "records": [record_to_json(r) for r in b.records]}


def _stored_to_json(s: StoredReport) -> dict:
    return {"received_at": s.received_at, "expires_at": s.expires_at, "batch": batch_to_json(s.batch)}


def _stored_from_json(d: dict) -> StoredReport:
    b = d["batch"]
    batch = ReportBatch(b["contributor_id"], tuple(record_from_json(r) for r in b["records"]), float(b["created_at"]))
    return StoredReport(batch, float(d["received_at"]), float(d["expires_at"]))


class Collector:
    """Thread-safe collection service state.

    With ``storage_dir`` set, accepted batches are appended to one JSONL file
    per UTC day of receipt and reloaded on start; otherwise storage is memory
    only. Registrations and salts are never persisted.
    """

    def __init__(
        self,
        retention_s: float = DEFAULT_RETENTION_S,
        max_batch_records: int = DEFAULT_MAX_BATCH_RECORDS,
        skew_s: float = DEFAULT_SKEW_S,
        epoch_length: float = DEFAULT_EPOCH_S,
        storage_dir: str | os.PathLike | None = None,
        clock: Callable[[], float] = time.time,
    ):
        if not retention_s > 0 or not epoch_length > 0:
            raise ValueError("retention and epoch length must be positive")
        self.retention_s = float(retention_s)
        self.max_batch_records = int(max_batch_records)
        self.skew_s = float(skew_s)
        self.epoch_length = float(epoch_length)
        self.clock = clock
        self._lock = threading.Lock()
        self._registrations: dict[str, float] = {}
        self._salts: dict[int, bytes] = {}
        self._reports: list[tuple[StoredReport, str | None]] = []
        self.storage_dir = Path(storage_dir) if storage_dir is not None else None
        if self.storage_dir is not None:
            self._load()

    # registration

    def _epoch(self, now: float) -> int:
        return math.floor(now / self.epoch_length)

    def register(self) -> RegistrationGrant:
        now = self.clock()
        with self._lock:
            self._registrations = {c: exp for c, exp in self._registrations.items() if exp > now}
            epoch = self._epoch(now)
            self._salts = {e: s for e, s in self._salts.items() if e >= epoch}
            salt = self._salts.setdefault(epoch, secrets.token_bytes(SALT_BYTES))
            cid = secrets.token_hex(16)
            while cid in self._registrations:
                cid = secrets.token_hex(16)
            expires = (epoch + 1) * self.epoch_length
            self._registrations[cid] = expires
        return RegistrationGrant(cid, salt, self.epoch_length, expires)

    def is_registered(self, contributor_id: str, now: float | None = None) -> bool:
        now = self.clock() if now is None else now
        with self._lock:
            exp = self._registrations.get(contributor_id)
        return exp is not None and exp > now

    # ingestion

    def _validate(self, b: ReportBatch, now: float) -> ReportBatch:
        if not b.records:
            raise ValidationError("batch has no records")
        records = tuple(r if isinstance(r, HttpRequestRecord) else record_from_json(r) for r in b.records)
        if b.created_at > now + self.skew_s:
            raise ValidationError(f"created_at {b.created_at} is beyond the clock-skew tolerance")
        for i, r in enumerate(records):
            if r.ts > b.created_at:
                raise ValidationError(f"record {i}: ts {r.ts} is later than created_at")
            if r.ts > now + self.skew_s:
                raise ValidationError(f"record {i}: ts {r.ts} is beyond the clock-skew tolerance")
            if r.user != b.contributor_id:
                raise ValidationError(f"record {i}: user is not the submitting contributor id")
            for key, value in extract_query_params(r.path):
                if not _TOKEN.match(value):
                    raise ValidationError(f"record {i}: value of {key!r} is not an anonymized token")
        return ReportBatch(b.contributor_id, records, b.created_at)

    def submit_batch(self, b: ReportBatch) -> int:
        """Store ``b``; returns the number of accepted records."""
        now = self.clock()
        if not self.is_registered(b.contributor_id, now):
            raise Unauthorized("unknown or expired contributor id")
        if len(b.records) > self.max_batch_records:
            raise PayloadTooLarge(f"batch of {len(b.records)} records exceeds {self.max_batch_records}")
        batch = self._validate(b, now)
        stored = StoredReport(batch, now, now + self.retention_s)
        with self._lock:
            fname = self._append(stored)
            self._reports.append((stored, fname))
        return len(batch.records)

    # access

    def query_third_party(self, target: str, start: float = -math.inf, end: float = math.inf) -> list[HttpRequestRecord]:
        """Unexpired stored records that are third-party under ``target`` with ``start <= ts <= end``."""
        if not target:
            raise ValidationError("target must be non-empty")
        now = self.clock()
        with self._lock:
            snapshot = list(self._reports)
        out = [
            r
            for s, _ in snapshot
            if s.expires_at > now
            for r in s.batch.records
            if start <= r.ts <= end and is_third_party(r, target)
        ]
        out.sort(key=lambda r: r.ts)
        return out

    def purge_expired(self, now: float | None = None) -> int:
        """Drop every stored batch with ``expires_at <= now``; returns how many."""
        now = self.clock() if now is None else now
        with self._lock:
            keep = [(s, f) for s, f in self._reports if s.expires_at > now]
            gone = [(s, f) for s, f in self._reports if s.expires_at <= now]
            if gone and self.storage_dir is not None:
                self._rewrite({f for _, f in gone}, keep)
            self._reports = keep
        return len(gone)

    def __len__(self):
        with self._lock:
            return len(self._reports)

    # day-file storage; callers hold the lock

    def _day_file(self, received_at: float) -> str:
        day = datetime.fromtimestamp(received_at, tz=timezone.utc).strftime("%Y-%m-%d")
        return f"reports-{day}.jsonl"

    def _append(self, s: StoredReport) -> str | None:
        if self.storage_dir is None:
            return None
        fname = self._day_file(s.received_at)
        try:
            with open(self.storage_dir / fname, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(_stored_to_json(s)) + "\n")
        except OSError as exc:
            raise StorageUnavailable(f"cannot append to {fname}: {exc}") from exc
        return fname

    def _rewrite(self, files: set, keep: Sequence[tuple[StoredReport, str | None]]) -> None:
        for fname in files:
            path = self.storage_dir / fname
            remaining = [s for s, f in keep if f == fname]
            if not remaining:
                path.unlink(missing_ok=True)
                continue
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.writelines(json.dumps(_stored_to_json(s)) + "\n" for s in remaining)
            os.replace(tmp, path)

    def _load(self) -> None:
        self.storage_dir.mkdir(parents=True, exist_ok=True)
        for path in sorted(self.storage_dir.glob("reports-*.jsonl")):
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        self._reports.append((_stored_from_json(json.loads(line)), path.name))
                    except (ValueError, KeyError, CollectorError) as exc:
                        log.warning("skipping corrupt entry %s:%d: %s", path.name, lineno, exc)

    def iter_reports(self) -> Iterable[StoredReport]:
        with self._lock:
            return [s for s, _ in self._reports]
