"""Unsupervised identification of third-party tracking keys.

For every third-party request seen under a target site, each query pair
``(hostname, key, value)`` is indexed twice: the values each user sent for
``(hostname, key)``, and the users that sent each value. A key whose values
are in one-to-one correspondence with users is carrying a user identifier.
"""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_fitted, check_positive_int, check_records
from .trace import HttpRequestRecord, extract_query_params, host_matches, is_third_party

__all__ = [
    "PairIndex",
    "TrackerFinding",
    "MODES",
    "DEFAULT_MIN_SUPPORT",
    "build_index",
    "detect",
    "detect_from_trace",
    "prevalence",
    "findings_to_tsv",
    "findings_to_json",
    "TrackerDetector",
]

DEFAULT_MIN_SUPPORT = 25
MODES = ("strict", "literal")


@dataclass
class PairIndex:
    """``by_user[(h, k, u)]`` is the value set, ``by_value[(h, k, v)]`` the user set."""

    by_user: dict = field(default_factory=lambda: defaultdict(set))
    by_value: dict = field(default_factory=lambda: defaultdict(set))
    support: dict = field(default_factory=lambda: defaultdict(set))

    def add(self, hostname: str, key: str, user: str, value: str) -> None:
        self.by_user[(hostname, key, user)].add(value)
        self.by_value[(hostname, key, value)].add(user)
        self.support[(hostname, key)].add(user)

    def merge(self, other: "PairIndex") -> "PairIndex":
        """In-place set union with ``other``; associative and commutative."""
        for src, dst in ((other.by_user, self.by_user), (other.by_value, self.by_value), (other.support, self.support)):
            for k, s in src.items():
                dst[k] |= s
        return self

    def values_per_pair(self) -> dict[tuple[str, str], set[str]]:
        out: dict[tuple[str, str], set[str]] = defaultdict(set)
        for h, k, v in self.by_value:
            out[(h, k)].add(v)
        return out

    def users_per_pair(self) -> dict[tuple[str, str], list[str]]:
        out: dict[tuple[str, str], list[str]] = defaultdict(list)
        for h, k, u in self.by_user:
            out[(h, k)].append(u)
        return out

    def check_transpose(self) -> bool:
        forward = {(h, k, u, v) for (h, k, u), vs in self.by_user.items() for v in vs}
        backward = {(h, k, u, v) for (h, k, v), us in self.by_value.items() for u in us}
        support = {(h, k): us for (h, k), us in self.support.items()}
        derived: dict = defaultdict(set)
        for h, k, u, _ in forward:
            derived[(h, k)].add(u)
        return forward == backward and support == dict(derived)


@dataclass(frozen=True, order=True)
class TrackerFinding:
    hostname: str
    key: str
    distinct_users: int
    distinct_values: int


def build_index(records: Iterable[HttpRequestRecord], target: str, index: PairIndex | None = None) -> PairIndex:
    """Index the query pairs of third-party requests made under ``target``."""
    idx = PairIndex() if index is None else index
    for r in records:
        if not is_third_party(r, target):
            continue
        for key, value in extract_query_params(r.path):
            idx.add(r.hostname, key, r.user, value)
    return idx


def _unique_value_owner(idx: PairIndex, h: str, k: str, u: str) -> bool:
    values = idx.by_user[(h, k, u)]
    if len(values) != 1:
        return False
    (v,) = values
    return idx.by_value[(h, k, v)] == {u}


def detect(idx: PairIndex, min_support: int = DEFAULT_MIN_SUPPORT, mode: str = "strict") -> list[TrackerFinding]:
    """Emit ``(hostname, key)`` pairs whose values identify users.

    ``strict`` requires every user seen on the pair to own exactly one value
    that nobody else sent. ``literal`` is satisfied by a single such user.
    Either way the pair needs at least ``min_support`` distinct users.
    """
    min_support = check_positive_int(min_support, "min_support")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    quantifier = all if mode == "strict" else any
    values = idx.values_per_pair()
    findings = []
    for (h, k), users in idx.users_per_pair().items():
        support = len(idx.support[(h, k)])
        if support < min_support:
            continue
        if quantifier(_unique_value_owner(idx, h, k, u) for u in users):
            findings.append(TrackerFinding(h, k, support, len(values[(h, k)])))
    findings.sort()
    return findings


def detect_from_trace(
    trace,
    target: str,
    min_support: int = DEFAULT_MIN_SUPPORT,
    mode: str = "strict",
) -> list[TrackerFinding]:
    return detect(build_index(check_records(trace), target), min_support, mode)


def prevalence(trace, tracker_hostnames: Sequence[str]) -> list[tuple[str, float]]:
    """Fraction of the trace's distinct users that contacted each tracker, descending."""
    records = check_records(trace)
    users = {r.user for r in records}
    if not users:
        raise ValueError("trace has no users; prevalence is undefined")
    contacted: dict[str, set[str]] = {t: set() for t in tracker_hostnames}
    # index hostnames first: the trace is far larger than its hostname set
    users_by_host: dict[str, set[str]] = defaultdict(set)
    for r in records:
        users_by_host[r.hostname].add(r.user)
    for host, us in users_by_host.items():
        for t in contacted:
            if host_matches(host, t):
                contacted[t] |= us
    out = [(t, len(us) / len(users)) for t, us in contacted.items()]
    out.sort(key=lambda item: (-item[1], item[0]))
    return out


def findings_to_tsv(findings: Iterable[TrackerFinding]) -> str:
    return "".join(f"{f.hostname}\t{f.key}\t{f.distinct_users}\t{f.distinct_values}\n" for f in findings)


def findings_to_json(findings: Iterable[TrackerFinding]) -> str:
    return json.dumps([asdict(f) for f in findings], indent=2)


class TrackerDetector(BaseEstimator):
    """Estimator form of the detector.

    ``fit`` indexes a trace and stores ``findings_``; ``partial_fit`` merges
    further shards into the same index. ``predict`` flags records that carry
    a detected tracking key.
    """

    def __init__(self, target="", min_support=DEFAULT_MIN_SUPPORT, mode="strict"):
        self.target = target
        self.min_support = min_support
        self.mode = mode

    def _check_params(self):
        if not self.target:
            raise ValueError("target must be a non-empty domain")
        check_positive_int(self.min_support, "min_support")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def fit(self, X, y=None):
        self._check_params()
        self.index_ = build_index(check_records(X), self.target)
        self._refresh()
        return self

    def partial_fit(self, X, y=None):
        if not hasattr(self, "index_"):
            return self.fit(X)
        self.index_.merge(build_index(check_records(X), self.target))
        self._refresh()
        return self

    def _refresh(self):
        self.findings_ = detect(self.index_, self.min_support, self.mode)
        self.tracking_pairs_ = frozenset((f.hostname, f.key) for f in self.findings_)

    def predict(self, X) -> np.ndarray:
        check_fitted(self, ["findings_"])
        pairs = self.tracking_pairs_
        return np.array(
            [
                is_third_party(r, self.target) and any((r.hostname, k) in pairs for k, _ in extract_query_params(r.path))
                for r in check_records(X)
            ],
            dtype=bool,
        )
