"""How long crowd collection takes to gather K reports per hostname.

Three views of the same question: the asymptotic coupon-collector expectation,
a Monte Carlo coupon collector, and a trace-driven replay with client-side
sampling that measures the elapsed time until each hostname has K reports.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator

from ._validation import check_fitted, check_positive_int, check_ratio, check_records
from .trace import HttpRequestRecord, serialize_record

__all__ = [
    "CouponParams",
    "CouponSimulation",
    "ZipfTraceSpec",
    "SyntheticTrace",
    "CollectionTimeResult",
    "expected_visits",
    "harmonic_expectation",
    "zipf_probabilities",
    "zipf_top_share",
    "calibrate_zipf_exponent",
    "simulate_coupon",
    "zipf_trace",
    "generate_zipf_trace",
    "collection_time",
    "CollectionTimeSimulator",
]


@dataclass(frozen=True)
class CouponParams:
    n: int
    k: int = 1

    def __post_init__(self):
        check_positive_int(self.n, "N", minimum=3)
        check_positive_int(self.k, "K")


def expected_visits(n: int, k: int = 1) -> float:
    """Leading terms of the expected visits to see every one of ``n`` hostnames ``k`` times.

    ``n ln n + (k - 1) n ln ln n``. The O(n) remainder of the asymptotic
    expansion is omitted, so this is an approximation, not an exact count.
    """
    p = CouponParams(n, k)
    ln_n = math.log(p.n)
    return p.n * ln_n + (p.k - 1) * p.n * math.log(ln_n)


def harmonic_expectation(n: int) -> float:
    """Exact expected draws for the classic (k=1) uniform collector, ``n * H_n``."""
    check_positive_int(n, "N")
    return n * math.fsum(1.0 / i for i in range(1, n + 1))


def zipf_probabilities(n: int, s: float) -> np.ndarray:
    """Rank probabilities ``r**-s / sum`` for ranks 1..n."""
    check_positive_int(n, "N")
    if not s > 0:
        raise ValueError(f"Zipf exponent must be positive, got {s}")
    w = np.arange(1, n + 1, dtype=np.float64) ** -float(s)
    return w / math.fsum(w)


def zipf_top_share(n_total: int, top: int, s: float) -> float:
    w = np.arange(1, n_total + 1, dtype=np.float64) ** -float(s)
    return math.fsum(w[:top]) / math.fsum(w)


def calibrate_zipf_exponent(n_total: int, top: int, share: float, bracket=(1e-3, 10.0)) -> float:
    """Exponent at which the ``top`` ranks of ``n_total`` carry ``share`` of visits."""
    if not 0 < top < n_total:
        raise ValueError("need 0 < top < n_total")
    if not top / n_total < share < 1:
        raise ValueError("share must exceed the uniform share top/n_total and be below 1")
    return brentq(lambda s: zipf_top_share(n_total, top, s) - share, *bracket, xtol=1e-12)


@dataclass(frozen=True)
class CouponSimulation:
    mean_visits: float
    stddev: float
    visits: np.ndarray = field(repr=False)


def _draws_until_complete(rng: np.random.Generator, n: int, k: int, p: np.ndarray | None) -> int:
    counts = np.zeros(n, dtype=np.int64)
    total = 0
    chunk = max(1024, 2 * n * k)
    while True:
        draws = rng.integers(0, n, chunk) if p is None else rng.choice(n, chunk, p=p)
        before = counts.copy()
        counts += np.bincount(draws, minlength=n)
        if counts.min() >= k:
            # the last hostname to complete does so inside this chunk
            needed = np.maximum(k - before, 0)
            order = np.argsort(draws, kind="stable")
            starts = np.searchsorted(draws[order], np.arange(n))
            pending = np.flatnonzero(needed)
            last = order[starts[pending] + needed[pending] - 1].max()
            return total + int(last) + 1
        total += chunk
        chunk = min(chunk * 2, 1 << 24)


def simulate_coupon(
    n: int,
    k: int = 1,
    dist: str = "uniform",
    runs: int = 1000,
    seed: int = 0,
    s: float = 1.0,
) -> CouponSimulation:
    """Monte Carlo draws until every one of ``n`` hostnames has been seen ``k`` times.

    ``dist`` is ``"uniform"`` or ``"zipf"`` (exponent ``s``). Run ``i`` uses
    the independent stream ``(seed, i)``.
    """
    check_positive_int(n, "N")
    check_positive_int(k, "K")
    check_positive_int(runs, "runs")
    if dist == "uniform":
        p = None
    elif dist == "zipf":
        p = zipf_probabilities(n, s)
    else:
        raise ValueError(f"dist must be 'uniform' or 'zipf', got {dist!r}")
    visits = np.array(
        [_draws_until_complete(np.random.default_rng([seed, i]), n, k, p) for i in range(runs)],
        dtype=np.int64,
    )
    std = float(visits.std(ddof=1)) if runs > 1 else 0.0
    return CouponSimulation(float(visits.mean()), std, visits)


@dataclass(frozen=True)
class ZipfTraceSpec:
    n_hosts: int
    s: float
    users: int
    rate: float
    duration: float
    seed: int = 0
    start: float = 0.0

    def __post_init__(self):
        check_positive_int(self.n_hosts, "n_hosts")
        check_positive_int(self.users, "users")
        if not self.s > 0:
            raise ValueError(f"Zipf exponent must be positive, got {self.s}")
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not self.duration >= 0:
            raise ValueError(f"duration must be non-negative, got {self.duration}")
        if not self.start >= 0:
            raise ValueError("start must be non-negative")


def _names(prefix: str, n: int) -> list[str]:
    width = max(5, len(str(n)))
    return [f"{prefix}-{i:0{width}d}" for i in range(1, n + 1)]


@dataclass
class SyntheticTrace:
    """Columnar trace: sorted timestamps with integer host and user codes."""

    ts: np.ndarray
    host: np.ndarray
    user: np.ndarray
    host_names: list[str]
    user_names: list[str]
    start: float = 0.0
    duration: float | None = None

    def __len__(self):
        return len(self.ts)

    def records(self) -> Iterator[HttpRequestRecord]:
        hn, un = self.host_names, self.user_names
        for t, h, u in zip(self.ts.tolist(), self.host.tolist(), self.user.tolist()):
            yield HttpRequestRecord(t, un[u], "GET", hn[h], "/", "")

    def write(self, path: str | os.PathLike) -> int:
        hn, un = self.host_names, self.user_names
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            step = 100_000
            for lo in range(0, len(self.ts), step):
                ts = self.ts[lo : lo + step].tolist()
                hs = self.host[lo : lo + step].tolist()
                us = self.user[lo : lo + step].tolist()
                fh.write("".join(f"{t!r}\t{un[u]}\tGET\t{hn[h]}\t/\t\n" for t, h, u in zip(ts, hs, us)))
        return len(self.ts)

    @classmethod
    def from_records(cls, records: Sequence[HttpRequestRecord], duration: float | None = None) -> "SyntheticTrace":
        records = sorted(records, key=lambda r: r.ts)
        hosts: dict[str, int] = {}
        users: dict[str, int] = {}
        h = np.array([hosts.setdefault(r.hostname, len(hosts)) for r in records], dtype=np.int64)
        u = np.array([users.setdefault(r.user, len(users)) for r in records], dtype=np.int64)
        ts = np.array([r.ts for r in records], dtype=np.float64)
        start = float(ts[0]) if len(ts) else 0.0
        return cls(ts, h, u, list(hosts), list(users), start, duration)


def zipf_trace(spec: ZipfTraceSpec) -> SyntheticTrace:
    """Poisson arrivals over ``[start, start + duration)``; Zipf hosts, uniform users."""
    rng = np.random.default_rng(spec.seed)
    n = int(rng.poisson(spec.rate * spec.duration)) if spec.duration > 0 else 0
    ts = spec.start + np.sort(rng.uniform(0.0, spec.duration, n))
    host = rng.choice(spec.n_hosts, n, p=zipf_probabilities(spec.n_hosts, spec.s))
    user = rng.integers(0, spec.users, n)
    return SyntheticTrace(
        ts, host, user, _names("host", spec.n_hosts), _names("user", spec.users), spec.start, spec.duration
    )


def generate_zipf_trace(spec: ZipfTraceSpec, path: str | os.PathLike) -> int:
    """Write a seeded Zipf trace in the TSV trace format; returns the record count."""
    return zipf_trace(spec).write(path)


@dataclass
class CollectionTimeResult:
    """Time until each top hostname accumulates K sampled reports.

    ``per_run_tc`` is ``(runs, top_n)`` seconds with NaN where K was not reached.
    """

    hostnames: list[str]
    visits: np.ndarray
    per_run_tc: np.ndarray = field(repr=False)
    k: int
    sampling_ratio: float
    period: float

    @property
    def runs(self) -> int:
        return self.per_run_tc.shape[0]

    @property
    def ranks(self) -> np.ndarray:
        return np.arange(1, len(self.hostnames) + 1)

    @property
    def runs_reached(self) -> np.ndarray:
        return np.sum(~np.isnan(self.per_run_tc), axis=0)

    @property
    def per_hostname_tc(self) -> np.ndarray:
        """Mean over the runs in which the hostname reached K; NaN if none did."""
        tc = self.per_run_tc
        reached = ~np.isnan(tc)
        sums = np.where(reached, tc, 0.0).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.runs_reached > 0, sums / np.maximum(self.runs_reached, 1), np.nan)

    @property
    def not_reached(self) -> list[str]:
        return [h for h, n in zip(self.hostnames, self.runs_reached) if n == 0]

    @property
    def mean_tc(self) -> float:
        """Mean over runs of each run's mean over hostnames that reached K."""
        per_run = [row[~np.isnan(row)].mean() for row in self.per_run_tc if (~np.isnan(row)).any()]
        return float(np.mean(per_run)) if per_run else float("nan")

    def as_dict(self) -> dict:
        return {
            "mean_tc_s": self.mean_tc,
            "hostnames": len(self.hostnames),
            "not_reached": len(self.not_reached),
            "runs": self.runs,
            "k": self.k,
            "sampling_ratio": self.sampling_ratio,
            "rows": [
                {
                    "hostname": h,
                    "rank": int(r),
                    "visits": int(v),
                    "mean_tc_s": None if math.isnan(t) else float(t),
                    "runs_reached": int(n),
                }
                for h, r, v, t, n in zip(self.hostnames, self.ranks, self.visits, self.per_hostname_tc, self.runs_reached)
            ],
        }

    def to_tsv(self) -> str:
        lines = [
            f"{h}\t{r}\t{v}\t{'nan' if math.isnan(t) else repr(float(t))}\t{n}\n"
            for h, r, v, t, n in zip(self.hostnames, self.ranks, self.visits, self.per_hostname_tc, self.runs_reached)
        ]
        return "".join(lines)

    def summary_line(self) -> str:
        return f"mean_tc_s={self.mean_tc!r} hostnames={len(self.hostnames)} not_reached={len(self.not_reached)}"


def _as_columns(trace) -> SyntheticTrace:
    if isinstance(trace, SyntheticTrace):
        return trace
    return SyntheticTrace.from_records(check_records(trace))


def collection_time(
    trace,
    top_n: int,
    k: int = 100,
    sampling_ratio: float = 0.1,
    runs: int = 12,
    seed: int = 0,
    period: float | None = None,
) -> CollectionTimeResult:
    """Replay ``trace`` from random start times with per-request Bernoulli sampling.

    The trace is treated as a ring of length ``period`` (the synthetic
    duration, or the observed span plus one mean inter-arrival gap), so every
    run observes exactly one period. Hostnames are ranked by total visits,
    ties broken by name.
    """
    tr = _as_columns(trace)
    n = len(tr)
    if n == 0:
        raise ValueError("trace is empty")
    check_positive_int(top_n, "top_n")
    check_positive_int(k, "K")
    check_positive_int(runs, "runs")
    ratio = check_ratio(sampling_ratio, "sampling_ratio", allow_zero=False)

    visits = np.bincount(tr.host, minlength=len(tr.host_names))
    present = np.flatnonzero(visits)
    if top_n > len(present):
        raise ValueError(f"top_n={top_n} exceeds the {len(present)} distinct hostnames in the trace")
    names = np.array(tr.host_names, dtype=object)
    order = sorted(present.tolist(), key=lambda c: (-visits[c], tr.host_names[c]))[:top_n]
    rank_of = np.full(len(tr.host_names), -1, dtype=np.int64)
    rank_of[order] = np.arange(top_n)

    t0 = tr.start if tr.duration is not None else float(tr.ts[0])
    if period is None:
        if tr.duration is not None and tr.duration > 0:
            period = float(tr.duration)
        else:
            span = float(tr.ts[-1] - tr.ts[0])
            period = span + span / (n - 1) if n > 1 and span > 0 else 1.0
    elif not period > 0:
        raise ValueError("period must be positive")

    host_rank = rank_of[tr.host]
    in_top = host_rank >= 0
    ts_top = tr.ts[in_top] - t0
    rank_top = host_rank[in_top]

    tc = np.full((runs, top_n), np.nan)
    for i in range(runs):
        rng = np.random.default_rng([seed, i])
        offset = rng.uniform(0.0, period)
        elapsed = np.mod(ts_top - offset, period)
        keep = rng.random(len(ts_top)) < ratio if ratio < 1.0 else np.ones(len(ts_top), dtype=bool)
        hs, el = rank_top[keep], elapsed[keep]
        idx = np.lexsort((el, hs))
        hs, el = hs[idx], el[idx]
        counts = np.bincount(hs, minlength=top_n)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        reached = counts >= k
        tc[i, reached] = el[starts[reached] + k - 1]
    return CollectionTimeResult(
        hostnames=list(names[order]),
        visits=visits[order],
        per_run_tc=tc,
        k=k,
        sampling_ratio=ratio,
        period=period,
    )


class CollectionTimeSimulator(BaseEstimator):
    """Estimator form of :func:`collection_time`; ``fit`` stores ``result_``."""

    def __init__(self, top_n=10_000, k=100, sampling_ratio=0.1, runs=12, seed=0, period=None):
        self.top_n = top_n
        self.k = k
        self.sampling_ratio = sampling_ratio
        self.runs = runs
        self.seed = seed
        self.period = period

    def fit(self, X, y=None):
        self.result_ = collection_time(X, self.top_n, self.k, self.sampling_ratio, self.runs, self.seed, self.period)
        self.mean_tc_ = self.result_.mean_tc
        return self

    def predict(self, hostnames: Sequence[str]) -> np.ndarray:
        """Mean T_c per hostname; NaN for hostnames outside the top set or never reaching K."""
        check_fitted(self, ["result_"])
        lookup = dict(zip(self.result_.hostnames, self.result_.per_hostname_tc))
        return np.array([lookup.get(h, np.nan) for h in hostnames], dtype=np.float64)
