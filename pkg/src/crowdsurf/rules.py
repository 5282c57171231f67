"""Rule-sets of (regular expression, actions) evaluated against request records.

A rule file holds one rule per line::

    priority<TAB>id<TAB>field<TAB>pattern<TAB>action[<TAB>arg][<TAB>action[<TAB>arg]...]

``field`` is one of url, hostname, path, referer. ``redirect`` takes a target
hostname (optionally ``host/path-template``), ``modify`` takes ``s/regex/repl/[gi]``.
Inside a pattern, ``@list:NAME`` expands to an anchored label-suffix
alternation over the hostnames of list NAME.
"""

from __future__ import annotations

import enum
import os
import re
from collections import Counter
from dataclasses import dataclass, field as dc_field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_fitted, check_records
from .trace import HttpRequestRecord, TraceParseError, parse_record

__all__ = [
    "ActionKind",
    "Action",
    "Field",
    "Rule",
    "RuleSet",
    "Disposition",
    "ActionOutcome",
    "RuleCompileError",
    "compile_ruleset",
    "load_rules",
    "load_lists",
    "load_profile",
    "evaluate",
    "apply_to_trace",
    "RuleProcessor",
    "PROFILES",
]

PROFILES = ("paranoid", "kid", "corporate")
_LIST_REF = re.compile(r"@list:([A-Za-z0-9_.-]+)")


class RuleCompileError(ValueError):
    def __init__(self, message: str, rule_id: str | None = None, lineno: int | None = None):
        self.rule_id = rule_id
        self.lineno = lineno
        where = []
        if lineno is not None:
            where.append(f"line {lineno}")
        if rule_id is not None:
            where.append(f"rule {rule_id!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ActionKind(str, enum.Enum):
    ALLOW = "allow"
    BLOCK = "block"
    REDIRECT = "redirect"
    MODIFY = "modify"
    LOGREPORT = "logreport"

    @property
    def terminal(self) -> bool:
        return self in (ActionKind.ALLOW, ActionKind.BLOCK, ActionKind.REDIRECT)


class Field(str, enum.Enum):
    URL = "url"
    HOSTNAME = "hostname"
    PATH = "path"
    REFERER = "referer"

    def get(self, r: HttpRequestRecord) -> str:
        if self is Field.URL:
            return r.hostname + r.path
        return getattr(r, self.value)

    def set(self, r: HttpRequestRecord, value: str) -> HttpRequestRecord:
        if self is Field.URL:
            host, sep, path = value.partition("/")
            return r.replace(hostname=host.lower(), path=sep + path)
        if self is Field.HOSTNAME:
            value = value.lower()
        return r.replace(**{self.value: value})


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    redirect_target: str | None = None
    path_template: str | None = None
    substitution: tuple[re.Pattern, str, int] | None = None

    def __post_init__(self):
        if self.kind is ActionKind.REDIRECT:
            if not self.redirect_target:
                raise ValueError("redirect requires a target hostname")
        elif self.redirect_target is not None or self.path_template is not None:
            raise ValueError(f"{self.kind.value} takes no redirect target")
        if self.kind is ActionKind.MODIFY:
            if self.substitution is None:
                raise ValueError("modify requires a substitution")
        elif self.substitution is not None:
            raise ValueError(f"{self.kind.value} takes no substitution")

    @classmethod
    def parse(cls, kind: str, arg: str | None = None) -> "Action":
        try:
            k = ActionKind(kind.lower())
        except ValueError:
            raise ValueError(f"unknown action kind {kind!r}") from None
        if k is ActionKind.REDIRECT:
            if not arg:
                raise ValueError("redirect requires a target hostname")
            host, sep, template = arg.partition("/")
            return cls(k, redirect_target=host.lower(), path_template=(sep + template) if sep else None)
        if k is ActionKind.MODIFY:
            if not arg:
                raise ValueError("modify requires an s/regex/replacement/ argument")
            return cls(k, substitution=_parse_substitution(arg))
        return cls(k)

    def __str__(self):
        if self.kind is ActionKind.REDIRECT:
            return f"redirect {self.redirect_target}{self.path_template or ''}"
        return self.kind.value


def _parse_substitution(arg: str) -> tuple[re.Pattern, str, int]:
    if len(arg) < 2 or arg[0] != "s":
        raise ValueError(f"substitution must look like s/regex/replacement/, got {arg!r}")
    delim = arg[1]
    parts, buf, i = [], [], 2
    while i < len(arg):
        c = arg[i]
        if c == "\\" and i + 1 < len(arg) and arg[i + 1] == delim:
            buf.append(delim)
            i += 2
            continue
        if c == delim:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(c)
        i += 1
    if len(parts) != 2:
        raise ValueError(f"substitution must look like s/regex/replacement/, got {arg!r}")
    flags_s = "".join(buf)
    if set(flags_s) - {"g", "i"}:
        raise ValueError(f"unknown substitution flags {flags_s!r}")
    try:
        regex = re.compile(parts[0], re.IGNORECASE if "i" in flags_s else 0)
        regex.sub(parts[1], "")  # parses the template eagerly
    except re.error as exc:
        raise ValueError(f"invalid substitution {arg!r}: {exc}") from None
    count = 0 if "g" in flags_s else 1
    return regex, parts[1], count


@dataclass(frozen=True)
class Rule:
    id: str
    field: Field
    pattern: str
    actions: tuple[Action, ...]
    priority: int = 0
    regex: re.Pattern = dc_field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.id:
            raise RuleCompileError("rule id is empty")
        if not self.actions:
            raise RuleCompileError("rule has no actions", self.id)
        blocking = [a for a in self.actions if a.kind in (ActionKind.BLOCK, ActionKind.REDIRECT)]
        if len(blocking) > 1:
            raise RuleCompileError("at most one of block/redirect per rule", self.id)
        try:
            object.__setattr__(self, "regex", re.compile(self.pattern))
        except re.error as exc:
            raise RuleCompileError(f"invalid regex {self.pattern!r}: {exc}", self.id) from None


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...] = ()
    name: str = ""

    def __post_init__(self):
        ordered = tuple(sorted(self.rules, key=lambda r: (r.priority, r.id)))
        seen = set()
        for r in ordered:
            if r.id in seen:
                raise RuleCompileError("duplicate rule id", r.id)
            seen.add(r.id)
        object.__setattr__(self, "rules", ordered)

    def __len__(self):
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)


class Disposition(str, enum.Enum):
    ALLOWED = "Allowed"
    BLOCKED = "Blocked"
    REDIRECTED = "Redirected"
    MODIFIED = "Modified"


@dataclass(frozen=True)
class ActionOutcome:
    disposition: Disposition
    effective_record: HttpRequestRecord
    reported: bool = False
    matched_rule_ids: tuple[str, ...] = ()


def _expand_lists(pattern: str, lists: Mapping[str, Sequence[str]] | None, rule_id: str) -> str:
    def sub(m):
        name = m.group(1)
        if lists is None or name not in lists:
            raise RuleCompileError(f"unknown hostname list {name!r}", rule_id)
        hosts = [h.strip().lower().strip(".") for h in lists[name] if h.strip()]
        if not hosts:
            return "(?!)"
        alternation = "|".join(re.escape(h) for h in sorted(set(hosts)))
        return rf"(?:^|\.)(?:{alternation})$"

    return _LIST_REF.sub(sub, pattern)


def _parse_actions(tokens: list[str]) -> list[Action]:
    actions, i = [], 0
    while i < len(tokens):
        kind = tokens[i].strip().lower()
        if kind in (ActionKind.REDIRECT.value, ActionKind.MODIFY.value):
            arg = tokens[i + 1] if i + 1 < len(tokens) else None
            actions.append(Action.parse(kind, arg))
            i += 2
        else:
            actions.append(Action.parse(kind))
            i += 1
    return actions


def compile_ruleset(
    document: str | Iterable[str],
    lists: Mapping[str, Sequence[str]] | None = None,
    name: str = "",
) -> RuleSet:
    """Compile rule-file text into a :class:`RuleSet` sorted by (priority, id)."""
    lines = document.splitlines() if isinstance(document, str) else list(document)
    rules = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 5:
            raise RuleCompileError(f"expected at least 5 tab-separated columns, got {len(cols)}", lineno=lineno)
        prio_s, rule_id, field_s, pattern = cols[:4]
        try:
            priority = int(prio_s)
        except ValueError:
            raise RuleCompileError(f"non-integer priority {prio_s!r}", rule_id, lineno) from None
        try:
            fld = Field(field_s.strip().lower())
        except ValueError:
            raise RuleCompileError(f"unknown field {field_s!r}", rule_id, lineno) from None
        try:
            actions = _parse_actions(cols[4:])
        except ValueError as exc:
            raise RuleCompileError(str(exc), rule_id, lineno) from None
        try:
            pattern = _expand_lists(pattern, lists, rule_id)
            rules.append(Rule(rule_id, fld, pattern, tuple(actions), priority))
        except RuleCompileError as exc:
            raise RuleCompileError(exc.args[0].split(": ", 1)[-1], rule_id, lineno) from None
    return RuleSet(tuple(rules), name)


def load_rules(path, lists: Mapping[str, Sequence[str]] | None = None) -> RuleSet:
    path = Path(path)
    return compile_ruleset(path.read_text(encoding="utf-8"), lists, name=path.stem)


def _read_list(text: str) -> list[str]:
    out = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line.lower())
    return out


def _bundle():
    return resources.files("crowdsurf") / "profiles"


def load_lists(directory=None) -> dict[str, list[str]]:
    """Read every ``*.list`` file of a bundle directory (default: the bundled one)."""
    base = _bundle() if directory is None else Path(directory)
    lists = {}
    for entry in base.iterdir():
        if entry.name.endswith(".list"):
            lists[entry.name[: -len(".list")]] = _read_list(entry.read_text(encoding="utf-8"))
    return lists


def load_profile(name: str, lists: Mapping[str, Sequence[str]] | str | os.PathLike | None = None) -> RuleSet:
    """Rule-set for one of the paranoid, kid or corporate profiles.

    ``lists`` is a mapping of list name to hostnames, a bundle directory, or
    None for the bundled lists. A bundle directory may also override the
    profile's ``<name>.rules`` file.
    """
    name = name.lower()
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; choose from {', '.join(PROFILES)}")
    rules_text = None
    if isinstance(lists, (str, os.PathLike)):
        directory = Path(lists)
        override = directory / f"{name}.rules"
        if override.exists():
            rules_text = override.read_text(encoding="utf-8")
        lists = load_lists(directory)
    elif lists is None:
        lists = load_lists()
    if rules_text is None:
        rules_text = (_bundle() / f"{name}.rules").read_text(encoding="utf-8")
    return compile_ruleset(rules_text, lists, name=name)


def _redirect(r: HttpRequestRecord, action: Action, m: re.Match) -> HttpRequestRecord:
    changes = {"hostname": action.redirect_target}
    if action.path_template is not None:
        changes["path"] = m.expand(action.path_template)
    return r.replace(**changes)


def evaluate(rs: RuleSet, r: HttpRequestRecord) -> ActionOutcome:
    """Run ``r`` through ``rs``.

    Rules fire in priority order. logreport and modify continue evaluation
    (later rules see the modified record); block, redirect and an explicit
    allow stop it. A blocked outcome carries the original record.
    """
    current = r
    reported = False
    modified = False
    matched: list[str] = []
    for rule in rs.rules:
        m = rule.regex.search(rule.field.get(current))
        if m is None:
            continue
        matched.append(rule.id)
        for action in rule.actions:
            kind = action.kind
            if kind is ActionKind.LOGREPORT:
                reported = True
            elif kind is ActionKind.MODIFY:
                regex, template, count = action.substitution
                old = rule.field.get(current)
                new = regex.sub(template, old, count=count)
                if new != old:
                    try:
                        current = rule.field.set(current, new)
                        modified = True
                    except ValueError:
                        pass  # rewrite would yield a malformed record; keep it unchanged
            elif kind is ActionKind.BLOCK:
                return ActionOutcome(Disposition.BLOCKED, r, reported, tuple(matched))
            elif kind is ActionKind.REDIRECT:
                current = _redirect(current, action, m)
                return ActionOutcome(Disposition.REDIRECTED, current, reported, tuple(matched))
            else:  # explicit allow
                disp = Disposition.MODIFIED if modified else Disposition.ALLOWED
                return ActionOutcome(disp, current, reported, tuple(matched))
    disp = Disposition.MODIFIED if modified else Disposition.ALLOWED
    return ActionOutcome(disp, current, reported, tuple(matched))


def apply_to_trace(rs: RuleSet, trace) -> tuple[list[ActionOutcome], Counter]:
    """Evaluate every record of ``trace``; returns outcomes and disposition counts."""
    if isinstance(trace, (str, os.PathLike)):
        records = check_records(trace)
    else:
        records = _records_with_index(trace)
    outcomes = [evaluate(rs, r) for r in records]
    counts = Counter({d: 0 for d in Disposition})
    counts.update(o.disposition for o in outcomes)
    return outcomes, counts


def _records_with_index(trace):
    for i, item in enumerate(trace):
        if isinstance(item, HttpRequestRecord):
            yield item
        elif item.strip() and not item.startswith("#"):
            try:
                yield parse_record(item)
            except TraceParseError as exc:
                raise TraceParseError(f"record {i}: {exc.reason}", i + 1) from None


class RuleProcessor(TransformerMixin, BaseEstimator):
    """Estimator wrapper around a compiled rule-set.

    Parameters
    ----------
    profile : {"paranoid", "kid", "corporate"} or None
    rules : rule-file text, path to a rule file, or None
    lists : hostname-list mapping or bundle directory used for ``@list:`` references

    Exactly one of ``profile`` and ``rules`` may be given; with neither the
    processor allows everything.
    """

    def __init__(self, profile=None, rules=None, lists=None):
        self.profile = profile
        self.rules = rules
        self.lists = lists

    def fit(self, X=None, y=None):
        if self.profile is not None and self.rules is not None:
            raise ValueError("give either profile or rules, not both")
        if self.profile is not None:
            self.ruleset_ = load_profile(self.profile, self.lists)
        elif self.rules is None:
            self.ruleset_ = RuleSet()
        else:
            lists = self.lists
            if isinstance(lists, (str, os.PathLike)):
                lists = load_lists(lists)
            elif lists is None:
                lists = load_lists()
            if isinstance(self.rules, os.PathLike) or (
                isinstance(self.rules, str) and "\t" not in self.rules and os.path.exists(self.rules)
            ):
                self.ruleset_ = load_rules(self.rules, lists)
            else:
                self.ruleset_ = compile_ruleset(self.rules, lists)
        self.n_rules_ = len(self.ruleset_)
        return self

    def transform(self, X) -> list[ActionOutcome]:
        check_fitted(self, ["ruleset_"])
        return [evaluate(self.ruleset_, r) for r in check_records(X)]

    def predict(self, X) -> np.ndarray:
        """Disposition name per record."""
        return np.array([o.disposition.value for o in self.transform(X)], dtype=object)
