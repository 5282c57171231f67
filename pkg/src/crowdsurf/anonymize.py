"""Sampling, keyed hashing of query values, and rotating contributor identities."""

from __future__ import annotations

import enum
import hashlib
import hmac
import math
import os
import random
import re
import secrets
from dataclasses import dataclass
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_fitted, check_ratio, check_records
from .trace import HttpRequestRecord, extract_query_params, referer_host, split_path

__all__ = [
    "SamplingPolicy",
    "AnonAction",
    "AnonymizationRule",
    "ContributorIdentity",
    "DEFAULT_RULES_TEXT",
    "HASH_HEX_CHARS",
    "compile_anonymization_rules",
    "default_rules",
    "hash_value",
    "sample",
    "anonymize",
    "new_identity",
    "rotate_identity",
    "new_salt",
    "Anonymizer",
]

DEFAULT_EPOCH_S = 86_400.0
HASH_HEX_CHARS = 16
SALT_BYTES = 32
_U64 = 2**64

DEFAULT_RULES_TEXT = "10\tdrop-passwords\tkey\t(?i)pass|pwd\tdroppair\n"


@dataclass(frozen=True)
class SamplingPolicy:
    ratio: float
    seed: int = 0

    def __post_init__(self):
        check_ratio(self.ratio, "sampling ratio")


class AnonAction(str, enum.Enum):
    HASHVALUE = "hashvalue"
    DROPPAIR = "droppair"
    DROPRECORD = "droprecord"


_ANON_FIELDS = ("key", "url", "hostname", "path", "referer")


@dataclass(frozen=True)
class AnonymizationRule:
    """``field="key"`` matches query key names; other fields match the record."""

    pattern: str
    action: AnonAction
    field: str = "key"
    id: str = ""
    priority: int = 0

    def __post_init__(self):
        object.__setattr__(self, "action", AnonAction(self.action))
        if self.field not in _ANON_FIELDS:
            raise ValueError(f"unknown anonymization field {self.field!r}")
        object.__setattr__(self, "_regex", re.compile(self.pattern))

    def search(self, text: str) -> bool:
        return self._regex.search(text) is not None


def compile_anonymization_rules(document: str | Iterable[str]) -> list[AnonymizationRule]:
    """Parse ``priority<TAB>id<TAB>field<TAB>pattern<TAB>action`` lines."""
    lines = document.splitlines() if isinstance(document, str) else list(document)
    rules = []
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise ValueError(f"line {lineno}: expected 5 tab-separated columns, got {len(cols)}")
        prio, rid, fld, pattern, action = cols
        try:
            rules.append(AnonymizationRule(pattern, AnonAction(action.lower()), fld.lower(), rid, int(prio)))
        except (ValueError, re.error) as exc:
            raise ValueError(f"line {lineno}, rule {rid!r}: {exc}") from None
    rules.sort(key=lambda r: (r.priority, r.id))
    return rules


def default_rules() -> list[AnonymizationRule]:
    return compile_anonymization_rules(DEFAULT_RULES_TEXT)


def hash_value(salt: bytes, key: str, value: str) -> str:
    """Truncated HMAC-SHA256 of ``(key, value)`` under ``salt``, 16 hex chars."""
    msg = key.encode("utf-8") + b"\x00" + value.encode("utf-8")
    return hmac.new(salt, msg, hashlib.sha256).hexdigest()[:HASH_HEX_CHARS]


def sample(r: HttpRequestRecord | None, p: SamplingPolicy, counter: int) -> bool:
    """Keep-or-drop decision from a keyed PRF of ``(seed, counter)``.

    The record itself does not influence the draw, so replays with the same
    seed make identical decisions.
    """
    if p.ratio >= 1.0:
        return True
    if p.ratio <= 0.0:
        return False
    key = (p.seed % _U64).to_bytes(8, "big")
    digest = hmac.new(key, (counter % _U64).to_bytes(8, "big"), hashlib.sha256).digest()
    return int.from_bytes(digest[:8], "big") < p.ratio * _U64


def _referer_origin(referer: str) -> str:
    host = referer_host(referer)
    if host is None:
        return ""
    scheme = referer.split("://", 1)[0].lower() if "://" in referer else "http"
    return f"{scheme}://{host}/"


def anonymize(
    r: HttpRequestRecord,
    rules: Sequence[AnonymizationRule],
    salt: bytes,
    contributor_id: str,
) -> HttpRequestRecord | None:
    """Anonymized copy of ``r``, or None when a droprecord rule suppresses it.

    The user becomes ``contributor_id``; each query value is hashed or its
    pair dropped according to the first matching key rule (hash by default);
    the referer is cut down to its origin.
    """
    if not salt:
        raise ValueError("salt must be non-empty")
    key_rules = []
    for rule in rules:
        if rule.field == "key":
            key_rules.append(rule)
        elif rule.action is AnonAction.DROPRECORD:
            text = r.hostname + r.path if rule.field == "url" else getattr(r, rule.field)
            if rule.search(text):
                return None

    base, query = split_path(r.path)
    pairs = []
    for key, value in extract_query_params(r.path):
        action = AnonAction.HASHVALUE
        for rule in key_rules:
            if rule.search(key):
                action = rule.action
                break
        if action is AnonAction.DROPRECORD:
            return None
        if action is AnonAction.HASHVALUE:
            pairs.append(f"{key}={hash_value(salt, key, value)}")
    path = base + "?" + "&".join(pairs) if pairs else base
    return HttpRequestRecord(r.ts, contributor_id, r.method, r.hostname, path, _referer_origin(r.referer))


@dataclass(frozen=True)
class ContributorIdentity:
    id: str
    epoch_start: float
    epoch_length: float = DEFAULT_EPOCH_S

    def __post_init__(self):
        if not self.epoch_length > 0:
            raise ValueError("epoch_length must be positive")

    def expired(self, now: float) -> bool:
        return now >= self.epoch_start + self.epoch_length


def _token(rng) -> str:
    if rng is None:
        return secrets.token_hex(16)
    if hasattr(rng, "getrandbits"):
        return f"{rng.getrandbits(128):032x}"
    return bytes(rng.bytes(16)).hex()  # numpy Generator


def new_identity(now: float, rng=None, epoch_length: float = DEFAULT_EPOCH_S) -> ContributorIdentity:
    return ContributorIdentity(_token(rng), float(now), epoch_length)


def rotate_identity(cur: ContributorIdentity, now: float, rng=None) -> ContributorIdentity:
    """Same identity inside its epoch; a fresh random one from the epoch containing ``now`` on."""
    if not cur.expired(now):
        return cur
    n = math.floor((now - cur.epoch_start) / cur.epoch_length)
    start = cur.epoch_start + n * cur.epoch_length
    return ContributorIdentity(_token(rng), start, cur.epoch_length)


def new_salt() -> bytes:
    return secrets.token_bytes(SALT_BYTES)


class Anonymizer(TransformerMixin, BaseEstimator):
    """Client-side anonymization stage: sample, then anonymize.

    Parameters
    ----------
    ratio : float
        Probability of keeping a record.
    seed : int
        Sampling PRF key and identity RNG seed.
    rules : rule-file text, path, list of :class:`AnonymizationRule`, or None for the defaults
    salt : bytes or None
        Hash key. When None a fresh salt is drawn per identity epoch.
    epoch_length : float
        Identity rotation period in seconds of record time.

    ``transform`` is stateful: the sampling counter and identity advance
    across calls, so a trace can be streamed in chunks.
    """

    def __init__(self, ratio=1.0, seed=0, rules=None, salt=None, epoch_length=DEFAULT_EPOCH_S):
        self.ratio = ratio
        self.seed = seed
        self.rules = rules
        self.salt = salt
        self.epoch_length = epoch_length

    def fit(self, X=None, y=None):
        self.policy_ = SamplingPolicy(self.ratio, self.seed)
        rules = self.rules
        if rules is None:
            self.rules_ = default_rules()
        elif isinstance(rules, (list, tuple)):
            self.rules_ = list(rules)
        elif isinstance(rules, os.PathLike) or (isinstance(rules, str) and os.path.exists(rules)):
            with open(rules, encoding="utf-8") as fh:
                self.rules_ = compile_anonymization_rules(fh.read())
        else:
            self.rules_ = compile_anonymization_rules(rules)
        self._rng = random.Random(self.seed)
        self.identity_ = None
        self.salt_ = self.salt
        self.counter_ = 0
        return self

    def _identity_for(self, ts: float) -> ContributorIdentity:
        cur = self.identity_
        if cur is None:
            cur = new_identity(ts, self._rng, self.epoch_length)
        else:
            nxt = rotate_identity(cur, ts, self._rng)
            if nxt is not cur and self.salt is None:
                self.salt_ = None
            cur = nxt
        if self.salt_ is None:
            self.salt_ = self._rng.getrandbits(8 * SALT_BYTES).to_bytes(SALT_BYTES, "big")
        self.identity_ = cur
        return cur

    def transform(self, X) -> list[HttpRequestRecord]:
        check_fitted(self, ["policy_"])
        out = []
        for r in check_records(X):
            keep = sample(r, self.policy_, self.counter_)
            self.counter_ += 1
            if not keep:
                continue
            ident = self._identity_for(r.ts)
            a = anonymize(r, self.rules_, self.salt_, ident.id)
            if a is not None:
                out.append(a)
        return out
