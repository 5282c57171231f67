"""Client side of collection: buffering, HTTP calls, and the report pipeline."""

from __future__ import annotations

import base64
import json
import time
import urllib.error
import urllib.request
from urllib.parse import urlencode
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .._validation import check_positive_int
from ..anonymize import (
    AnonymizationRule,
    ContributorIdentity,
    SamplingPolicy,
    anonymize,
    default_rules,
    sample,
)
from ..trace import HttpRequestRecord
from .store import RegistrationGrant, record_from_json, record_to_json


def client_buffer(records: Iterable[HttpRequestRecord], threshold: int) -> Iterator[list[HttpRequestRecord]]:
    """Yield a batch each time ``threshold`` records are buffered, then the remainder."""
    threshold = check_positive_int(threshold, "threshold")
    buf: list[HttpRequestRecord] = []
    for r in records:
        buf.append(r)
        if len(buf) >= threshold:
            yield buf
            buf = []
    if buf:
        yield buf


class CollectorHTTPError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        super().__init__(f"HTTP {status}: {message}")


class CollectorClient:
    """Thin JSON client. ``via`` routes every request through one HTTP relay."""

    def __init__(self, base_url: str, via: str | None = None, admin_token: str | None = None, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.admin_token = admin_token
        self.timeout = timeout
        handlers = [urllib.request.ProxyHandler({"http": via, "https": via} if via else {})]
        self._opener = urllib.request.build_opener(*handlers)

    def _call(self, method: str, path: str, payload=None, admin: bool = False):
        data = None if payload is None else json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(self.base_url + path, data=data, method=method)
        req.add_header("Content-Type", "application/json")
        if admin and self.admin_token:
            req.add_header("Authorization", f"Bearer {self.admin_token}")
        try:
            with self._opener.open(req, timeout=self.timeout) as resp:
                return json.loads(resp.read() or b"null")
        except urllib.error.HTTPError as exc:
            body = exc.read().decode("utf-8", "replace")
            try:
                message = json.loads(body).get("error", body)
            except (ValueError, AttributeError):
                message = body
            raise CollectorHTTPError(exc.code, message) from None

    def register(self) -> RegistrationGrant:
        d = self._call("POST", "/v1/register", {})
        length = float(d["epoch_length_s"])
        return RegistrationGrant(d["contributor_id"], base64.b64decode(d["epoch_salt"]), length)

    def submit(self, contributor_id: str, records: Sequence[HttpRequestRecord], created_at: float) -> int:
        body = {"contributor_id": contributor_id, "created_at": created_at, "records": [record_to_json(r) for r in records]}
        return int(self._call("POST", "/v1/reports", body)["accepted_count"])

    def query(self, target: str, start: float | None = None, end: float | None = None) -> list[HttpRequestRecord]:
        params = {"target": target}
        if start is not None:
            params["from"] = repr(float(start))
        if end is not None:
            params["to"] = repr(float(end))
        rows = self._call("GET", "/v1/query?" + urlencode(params), admin=True)
        return [record_from_json(r) for r in rows]

    def purge(self) -> int:
        return int(self._call("POST", "/v1/purge", {}, admin=True)["purged"])


@dataclass
class ReportSummary:
    records: int = 0
    sampled: int = 0
    suppressed: int = 0
    batches: int = 0
    accepted: int = 0
    registrations: int = 0

    def line(self) -> str:
        return " ".join(f"{k}={v}" for k, v in self.__dict__.items())


class Reporter:
    """sample -> buffer -> anonymize -> submit, re-registering every identity epoch.

    Epochs are measured in record time from the first record, so a trace
    replay rotates identities the way the live client would have.
    """

    def __init__(
        self,
        client: CollectorClient,
        ratio: float = 1.0,
        batch_size: int = 100,
        rules: Sequence[AnonymizationRule] | None = None,
        seed: int = 0,
        clock=time.time,
    ):
        self.client = client
        self.policy = SamplingPolicy(ratio, seed)
        self.batch_size = check_positive_int(batch_size, "batch_size")
        self.rules = default_rules() if rules is None else list(rules)
        self.clock = clock
        self.summary = ReportSummary()
        self._grant: RegistrationGrant | None = None
        self._identity: ContributorIdentity | None = None
        self._counter = 0

    def _register(self, epoch_start: float) -> None:
        self._grant = self.client.register()
        self._identity = ContributorIdentity(self._grant.contributor_id, epoch_start, self._grant.epoch_length)
        self.summary.registrations += 1

    def _submit(self, raw: list[HttpRequestRecord], retry: bool = True) -> None:
        g = self._grant
        out = [a for r in raw if (a := anonymize(r, self.rules, g.epoch_salt, g.contributor_id)) is not None]
        self.summary.suppressed += len(raw) - len(out)
        if not out:
            return
        created_at = max(self.clock(), max(r.ts for r in out))
        try:
            accepted = self.client.submit(g.contributor_id, out, created_at)
        except CollectorHTTPError as exc:
            if exc.status != 401 or not retry:
                raise
            self._register(self._identity.epoch_start)
            self._submit(raw, retry=False)
            return
        self.summary.batches += 1
        self.summary.accepted += accepted

    def report(self, records: Iterable[HttpRequestRecord]) -> ReportSummary:
        buf: list[HttpRequestRecord] = []
        for r in records:
            self.summary.records += 1
            keep = self._sample_next()
            if not keep:
                continue
            self.summary.sampled += 1
            if self._identity is None:
                self._register(r.ts)
            elif self._identity.expired(r.ts):
                if buf:
                    self._submit(buf)
                    buf = []
                ident = self._identity
                n = (r.ts - ident.epoch_start) // ident.epoch_length
                self._register(ident.epoch_start + n * ident.epoch_length)
            buf.append(r)
            if len(buf) >= self.batch_size:
                self._submit(buf)
                buf = []
        if buf:
            self._submit(buf)
        return self.summary

    def _sample_next(self) -> bool:
        keep = sample(None, self.policy, self._counter)
        self._counter += 1
        return keep
