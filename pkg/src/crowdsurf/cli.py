"""``crowdsurf`` command line.

Exit codes: 0 success, 1 domain or validation error, 2 I/O error, 3 usage error.
"""

from __future__ import annotations

import argparse
import gzip
import json
import logging
import os
import signal
import sys
import threading
from collections import Counter

from . import __version__
from .anonymize import compile_anonymization_rules
from .collector import Collector, CollectorClient, CollectorHTTPError, Reporter, make_server
from .feasibility import (
    SyntheticTrace,
    ZipfTraceSpec,
    collection_time,
    expected_visits,
    simulate_coupon,
    zipf_trace,
)
from .rules import PROFILES, Disposition, apply_to_trace, load_lists, load_profile, load_rules
from .trace import TraceParseError, parse_record, read_trace, serialize_record
from .tracker import DEFAULT_MIN_SUPPORT, MODES, detect_from_trace, findings_to_json, findings_to_tsv

EXIT_OK, EXIT_DOMAIN, EXIT_IO, EXIT_USAGE = 0, 1, 2, 3
RANDOMIZED = {"simulate", "report"}

log = logging.getLogger("crowdsurf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(sub: bool) -> argparse.ArgumentParser:
    # subcommand copies default to SUPPRESS so they don't clobber values given before the subcommand
    d = (lambda v: argparse.SUPPRESS) if sub else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--format", choices=("tsv", "json"), default=d("tsv"), help="output format")
    g.add_argument("--seed", type=int, default=d(None), help="seed for randomized commands")
    g.add_argument("--quiet", action="store_true", default=d(False), help="suppress summaries")
    g.add_argument("--config", default=d(None), help="key=value config file; flags override it")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crowdsurf", description=__doc__.splitlines()[0], parents=[_common(False)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    common = _common(True)

    p = subs.add_parser("validate", parents=[common], help="check a trace file")
    p.add_argument("trace")

    p = subs.add_parser("apply", parents=[common], help="run a rule-set or profile over a trace")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--profile", help=f"one of {', '.join(PROFILES)}")
    src.add_argument("--rules", help="rule file")
    p.add_argument("--lists", help="bundle directory with *.list files (default: bundled lists)")
    p.add_argument("--output", "-o", help="write per-record outcomes here")
    p.add_argument("trace")

    p = subs.add_parser("detect", parents=[common], help="find third-party tracking keys under a target site")
    p.add_argument("trace")
    p.add_argument("--target", required=True)
    p.add_argument("--min-support", type=int, default=DEFAULT_MIN_SUPPORT)
    p.add_argument("--mode", choices=MODES, default="strict")
    p.add_argument("--output", "-o")

    p = subs.add_parser(
        "estimate",
        parents=[common],
        help="expected visits to collect K reports for N hostnames",
        description="Prints N ln N + (K-1) N ln ln N. This is an asymptotic expectation: "
        "the O(N) remainder is omitted, so it is not an exact count.",
    )
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--simulate", type=int, metavar="RUNS", help="also run a Monte Carlo check with RUNS runs")
    p.add_argument("--dist", choices=("uniform", "zipf"), default="uniform")
    p.add_argument("--s", type=float, default=1.0, help="Zipf exponent for --dist zipf")

    p = subs.add_parser("simulate", parents=[common], help="generate a Zipf trace and/or measure time to K samples")
    p.add_argument("--spec", help="key=value generator spec (n_hosts, s, users, rate, duration, seed)")
    p.add_argument("--trace", help="use this trace instead of generating one")
    p.add_argument("--hosts", type=int, default=10_000)
    p.add_argument("--zipf-s", type=float, default=1.0343)
    p.add_argument("--users", type=int, default=1_000)
    p.add_argument("--rate", type=float, default=100.0, help="requests per second")
    p.add_argument("--duration", type=float, default=86_400.0, help="seconds")
    p.add_argument("--trace-out", help="write the generated trace here")
    p.add_argument("--generate-only", action="store_true")
    p.add_argument("--top-n", type=int, default=None, help="hostnames to follow (default: min(hosts, 10000))")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--ratio", type=float, default=0.1)
    p.add_argument("--runs", type=int, default=12)
    p.add_argument("--output", "-o", help="per-hostname results")
    p.add_argument("--csv", help="also write per-hostname results as CSV")

    p = subs.add_parser("serve", parents=[common], help="run the collector service")
    p.add_argument("--listen", default=os.environ.get("CROWDSURF_LISTEN", "127.0.0.1:8080"))
    p.add_argument("--retention-days", type=float, default=float(os.environ.get("CROWDSURF_RETENTION_DAYS", 7)))
    p.add_argument(
        "--max-batch-records", type=int, default=int(os.environ.get("CROWDSURF_MAX_BATCH_RECORDS", 1000))
    )
    p.add_argument("--epoch-length", type=float, default=86_400.0, help="identity epoch in seconds")
    p.add_argument("--storage-dir", default=os.environ.get("CROWDSURF_STORAGE_DIR"))
    p.add_argument("--admin-token", default=os.environ.get("CROWDSURF_ADMIN_TOKEN"))

    p = subs.add_parser("report", parents=[common], help="sample, anonymize and upload a trace")
    p.add_argument("trace")
    p.add_argument("--collector-url", required=True)
    p.add_argument("--ratio", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--anon-rules", help="anonymization rule file (default: drop password-like keys)")
    p.add_argument("--via", help="forward uploads through this HTTP relay")
    parser.subcommands = subs.choices
    return parser


def _read_config(path: str) -> dict:
    cfg = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _parse(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cfg = _read_config(known.config)
        command = next((a for a in (argv if argv is not None else sys.argv[1:]) if a in parser.subcommands), None)
        if command is not None:
            sub = parser.subcommands[command]
            actions = {a.dest: a for a in sub._actions}
            defaults = {}
            for key, value in cfg.items():
                if key not in actions:
                    raise UsageError(f"unknown config key {key!r} for {command}")
                action = actions[key]
                if isinstance(action, argparse._StoreTrueAction):
                    defaults[key] = value.lower() in ("1", "true", "yes", "on")
                else:
                    defaults[key] = action.type(value) if action.type else value
                action.required = False
            sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        raise SystemExit(EXIT_USAGE)
    if os.environ.get("CROWDSURF_TEST") == "1" and args.command in RANDOMIZED and args.seed is None:
        raise UsageError(f"{args.command} requires --seed when CROWDSURF_TEST=1")
    if args.command == "estimate" and args.simulate and os.environ.get("CROWDSURF_TEST") == "1" and args.seed is None:
        raise UsageError("estimate --simulate requires --seed when CROWDSURF_TEST=1")
    if args.seed is None:
        args.seed = 0
    return args


def _emit(args, text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") or not text else text + "\n")


def _info(args, text: str) -> None:
    if not args.quiet:
        print(text, file=sys.stderr if args.format == "json" else sys.stdout)


def _write_or_emit(args, text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        _emit(args, text)


def cmd_validate(args) -> int:
    count, errors = 0, []
    for lineno, line in enumerate(_open_lines(args.trace), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            parse_record(line, lineno)
            count += 1
        except TraceParseError as exc:
            errors.append((lineno, exc.reason))
    if args.format == "json":
        _emit(args, json.dumps({"records": count, "errors": [{"line": n, "error": e} for n, e in errors]}))
    else:
        _emit(args, f"{count} records")
        for n, e in errors:
            print(f"line {n}: {e}", file=sys.stderr)
    return EXIT_DOMAIN if errors else EXIT_OK


def _open_lines(path):
    if path.endswith(".gz"):
        with gzip.open(path, "rt", encoding="utf-8", newline="\n") as fh:
            yield from fh
    else:
        with open(path, encoding="utf-8", newline="\n") as fh:
            yield from fh


def _counts_dict(counts: Counter, outcomes) -> dict:
    d = {disp.value: counts.get(disp, 0) for disp in Disposition}
    d["reported"] = sum(o.reported for o in outcomes)
    return d


def cmd_apply(args) -> int:
    if args.profile is not None:
        if args.profile.lower() not in PROFILES:
            raise UsageError(f"unknown profile {args.profile!r}; choose from {', '.join(PROFILES)}")
        rs = load_profile(args.profile, args.lists)
    else:
        rs = load_rules(args.rules, load_lists(args.lists))
    outcomes, counts = apply_to_trace(rs, list(read_trace(args.trace)))
    summary = _counts_dict(counts, outcomes)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            if args.format == "json":
                json.dump(
                    [
                        {
                            "disposition": o.disposition.value,
                            "reported": o.reported,
                            "matched": list(o.matched_rule_ids),
                            "record": serialize_record(o.effective_record),
                        }
                        for o in outcomes
                    ],
                    fh,
                    indent=1,
                )
            else:
                for o in outcomes:
                    fh.write(
                        f"{o.disposition.value}\t{int(o.reported)}\t{','.join(o.matched_rule_ids)}\t"
                        f"{serialize_record(o.effective_record)}\n"
                    )
    if args.format == "json":
        _emit(args, json.dumps(summary))
    elif not args.quiet:
        _emit(args, " ".join(f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


def cmd_detect(args) -> int:
    findings = detect_from_trace(args.trace, args.target, args.min_support, args.mode)
    text = findings_to_json(findings) + "\n" if args.format == "json" else findings_to_tsv(findings)
    _write_or_emit(args, text, args.output)
    if args.output:
        _info(args, f"{len(findings)} findings")
    return EXIT_OK


def cmd_estimate(args) -> int:
    value = expected_visits(args.n, args.k)
    out = {"n": args.n, "k": args.k, "expected_visits": value}
    if args.simulate:
        sim = simulate_coupon(args.n, args.k, args.dist, args.simulate, args.seed, args.s)
        out.update(simulated_mean=sim.mean_visits, simulated_stddev=sim.stddev, runs=args.simulate, dist=args.dist)
    if args.format == "json":
        _emit(args, json.dumps(out))
    else:
        _emit(args, repr(value))
        if args.simulate:
            _emit(args, f"simulated_mean={sim.mean_visits!r} stddev={sim.stddev!r} runs={args.simulate}")
    return EXIT_OK


def _spec_from_args(args) -> ZipfTraceSpec:
    fields = {
        "n_hosts": args.hosts,
        "s": args.zipf_s,
        "users": args.users,
        "rate": args.rate,
        "duration": args.duration,
        "seed": args.seed,
    }
    if args.spec:
        casts = {"n_hosts": int, "users": int, "seed": int, "s": float, "rate": float, "duration": float}
        for key, value in _read_config(args.spec).items():
            if key not in casts:
                raise UsageError(f"unknown spec key {key!r}")
            fields[key] = casts[key](value)
    return ZipfTraceSpec(**fields)


def cmd_simulate(args) -> int:
    if not 0 < args.ratio <= 1:
        raise ValueError(f"--ratio must lie in (0, 1], got {args.ratio}")
    if args.trace:
        trace = SyntheticTrace.from_records(list(read_trace(args.trace)))
    else:
        spec = _spec_from_args(args)
        trace = zipf_trace(spec)
        if args.trace_out:
            trace.write(args.trace_out)
            _info(args, f"wrote {len(trace)} records to {args.trace_out}")
    if args.generate_only:
        return EXIT_OK
    top_n = args.top_n if args.top_n is not None else min(len(set(trace.host.tolist())), 10_000)
    result = collection_time(trace, top_n, args.k, args.ratio, args.runs, args.seed)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("hostname,rank,visits,mean_tc_s,runs_reached\n")
            fh.write(result.to_tsv().replace("\t", ","))
    if args.format == "json":
        _write_or_emit(args, json.dumps(result.as_dict()) + "\n", args.output)
        return EXIT_OK
    if args.output:
        _write_or_emit(args, result.to_tsv(), args.output)
    _emit(args, result.summary_line())
    return EXIT_OK


def cmd_serve(args) -> int:
    host, _, port = args.listen.rpartition(":")
    try:
        port = int(port)
    except ValueError:
        raise UsageError(f"--listen must be host:port, got {args.listen!r}") from None
    collector = Collector(
        retention_s=args.retention_days * 86_400.0,
        max_batch_records=args.max_batch_records,
        epoch_length=args.epoch_length,
        storage_dir=args.storage_dir,
    )
    server = make_server(collector, host or "127.0.0.1", port, args.admin_token)
    stop = threading.Event()

    def shutdown(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, shutdown)
    signal.signal(signal.SIGINT, shutdown)
    server.start_background()
    _info(args, f"listening on {server.url}")
    sys.stdout.flush()
    stop.wait()
    server.shutdown()
    server.server_close()
    return EXIT_OK


def cmd_report(args) -> int:
    rules = None
    if args.anon_rules:
        with open(args.anon_rules, encoding="utf-8") as fh:
            rules = compile_anonymization_rules(fh.read())
    client = CollectorClient(args.collector_url, via=args.via)
    reporter = Reporter(client, ratio=args.ratio, batch_size=args.batch, rules=rules, seed=args.seed)
    summary = reporter.report(read_trace(args.trace))
    if args.format == "json":
        _emit(args, json.dumps(summary.__dict__))
    elif not args.quiet:
        _emit(args, summary.line())
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "apply": cmd_apply,
    "detect": cmd_detect,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "serve": cmd_serve,
    "report": cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        try:
            args = _parse(argv)
        except SystemExit as exc:
            return exc.code if isinstance(exc.code, int) else EXIT_USAGE
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"crowdsurf: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"crowdsurf: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError, CollectorHTTPError) as exc:  # includes TraceParseError, RuleCompileError
        print(f"crowdsurf: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
