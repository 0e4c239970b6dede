"""The four verifiable rewards and the advantageous-range tables.

Reward semantics (classification labels are booleans):

* format: +1 when the response carries exactly one well-ordered
  think/name/answer tag triple with a parseable claims list and answer,
  else -2.
* correctness: +2 when the answer extracted from the answer tags equals
  the label, else 0. No tags, no credit.
* attribute count: 0 while the number of claimed attributes lies in the
  configured band (default 3..10), else -1.
* rationality: the fraction of *verifiable* claims whose stated polarity
  agrees with the range table -- a claim "LogP: promotes" matches when the
  computed MolLogP falls inside the advantageous interval set for the
  target property. Claims are unverifiable (excluded from the
  denominator) when they carry no polarity, fail to resolve, resolve to an
  unimplemented descriptor, or have no table entry; a response with no
  verifiable claims scores 0.

The total is the plain sum, so it lives in [-3, +4].

Range tables are plain text: ``target <TAB> descriptor <TAB> interval-set``
with interval sets like ``[0, 90)`` or ``(-inf, 3.5], (5, 7)``. Membership
is exact closed/half-open arithmetic -- no epsilon fuzz.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

from . import descriptors
from .molgraph import Molecule
from .response import CLASSIFICATION, ParsedResponse
from ._data import resolve_range_table

__all__ = [
    "Interval",
    "RangeTable",
    "ParseError",
    "UnknownDescriptor",
    "TableMissing",
    "load_range_table",
    "RewardBreakdown",
    "reward_format",
    "reward_correct",
    "reward_count",
    "reward_rational",
    "total_reward",
    "DEFAULT_COUNT_BOUNDS",
]

log = logging.getLogger(__name__)

DEFAULT_COUNT_BOUNDS = (3, 10)


class ParseError(ValueError):
    """Malformed range-table line (message carries file and line number)."""


class UnknownDescriptor(ParseError):
    """Range table references a descriptor outside the registry."""


class TableMissing(LookupError):
    """The table has no entries at all for the requested target property."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool
    hi_closed: bool

    def contains(self, x: float) -> bool:
        above = x >= self.lo if self.lo_closed else x > self.lo
        below = x <= self.hi if self.hi_closed else x < self.hi
        return above and below

    def __str__(self) -> str:
        lo = "[" if self.lo_closed else "("
        hi = "]" if self.hi_closed else ")"
        return f"{lo}{self.lo:g}, {self.hi:g}{hi}"


_INTERVAL_RE = re.compile(
    r"([\[\(])\s*([+-]?(?:inf|\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*,"
    r"\s*([+-]?(?:inf|\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*([\]\)])"
)


def parse_interval_set(text: str, where: str = "") -> tuple[Interval, ...]:
    """Parse a comma-separated union of intervals."""
    intervals: list[Interval] = []
    consumed: list[tuple[int, int]] = []
    for m in _INTERVAL_RE.finditer(text):
        lo = float(m.group(2))
        hi = float(m.group(3))
        lo_closed = m.group(1) == "["
        hi_closed = m.group(4) == "]"
        if math.isinf(lo) and lo > 0 or math.isinf(hi) and hi < 0 or lo > hi:
            raise ParseError(f"{where}: inverted interval {m.group(0)!r}")
        if math.isinf(lo) and lo_closed or math.isinf(hi) and hi_closed:
            raise ParseError(f"{where}: closed infinite bound in {m.group(0)!r}")
        intervals.append(Interval(lo, hi, lo_closed, hi_closed))
        consumed.append(m.span())
    leftover = list(text)
    for start, end in consumed:
        for k in range(start, end):
            leftover[k] = " "
    residue = "".join(leftover).replace(",", " ").strip()
    if residue or not intervals:
        raise ParseError(f"{where}: malformed interval set {text!r}")
    if len(consumed) - 1 != "".join(leftover).count(","):
        raise ParseError(f"{where}: intervals must be comma-separated in {text!r}")
    return tuple(intervals)


@dataclass(frozen=True)
class RangeTable:
    """Advantageous ranges per (target property, descriptor)."""

    entries: dict  # (target_lower, descriptor_name) -> tuple[Interval, ...]
    targets: frozenset
    source: str

    def interval_set(self, target: str, descriptor_name: str):
        return self.entries.get((target.lower(), descriptor_name))

    def has_target(self, target: str) -> bool:
        return target.lower() in self.targets

    def advantageous(self, target: str, descriptor_name: str, value: float) -> bool | None:
        """True/False membership verdict, or None when there is no entry."""
        ivs = self.interval_set(target, descriptor_name)
        if ivs is None:
            return None
        return any(iv.contains(value) for iv in ivs)


def load_range_table(path_or_name: "str | Path") -> RangeTable:
    """Load a range table from a file path or a bundled-table name."""
    path = resolve_range_table(str(path_or_name))
    if not path.exists():
        raise FileNotFoundError(f"range table not found: {path}")
    entries: dict = {}
    targets = set()
    canonical = {e.name for e in descriptors.registry()}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        where = f"{path.name}:{lineno}"
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{where}: expected 3 tab-separated fields, got {len(parts)}")
        target, descriptor_name, interval_text = (p.strip() for p in parts)
        if not target:
            raise ParseError(f"{where}: empty target")
        if descriptor_name not in canonical:
            raise UnknownDescriptor(f"{where}: unknown descriptor {descriptor_name!r}")
        key = (target.lower(), descriptor_name)
        if key in entries:
            raise ParseError(f"{where}: duplicate entry for {target}/{descriptor_name}")
        entries[key] = parse_interval_set(interval_text, where)
        targets.add(target.lower())
    return RangeTable(entries=entries, targets=frozenset(targets), source=str(path))


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardBreakdown:
    format: float
    correct: float
    count: float
    rational: float
    total: float
    n_att: int
    verified: int   # verifiable claims (rationality denominator)
    matched: int    # verifiable claims whose polarity agreed


def reward_format(parsed: ParsedResponse) -> float:
    return 1.0 if parsed.format_ok else -2.0


def reward_correct(parsed: ParsedResponse, label, task: str = CLASSIFICATION) -> float:
    """+2 iff an answer was extracted from the answer tags and equals the
    label. For regression tasks equality is exact -- the training reward is
    defined for binary tasks and regression corpora only pass through here
    for bookkeeping."""
    answer = parsed.answer
    if answer is None:
        return 0.0
    if task == CLASSIFICATION:
        if not isinstance(answer, bool) or not isinstance(label, bool):
            return 0.0
        return 2.0 if answer == label else 0.0
    try:
        return 2.0 if float(answer) == float(label) else 0.0
    except (TypeError, ValueError):
        return 0.0


def reward_count(parsed: ParsedResponse, lo: int = 3, hi: int = 10) -> float:
    n_att = len(parsed.claims or ())
    return 0.0 if lo <= n_att <= hi else -1.0


def _rational_detail(parsed: ParsedResponse, mol: Molecule, target: str,
                     table: RangeTable) -> tuple[float, int, int]:
    if not table.has_target(target):
        raise TableMissing(f"range table {table.source} has no entries for "
                           f"target {target!r}")
    verified = 0
    matched = 0
    debug = log.isEnabledFor(logging.DEBUG)
    for claim in parsed.claims or ():
        if claim.polarity is None:
            if debug:
                log.debug("claim %r: no polarity, unverifiable", claim.raw_name)
            continue
        ident = descriptors.resolve_attribute(claim.raw_name)
        if ident is None:
            if debug:
                log.debug("claim %r: no registry match", claim.raw_name)
            continue
        if not ident.implemented:
            if debug:
                log.debug("claim %r: %s not implemented", claim.raw_name, ident.name)
            continue
        verdict = table.advantageous(target, ident.name,
                                     descriptors.compute(mol, ident).value)
        if verdict is None:
            if debug:
                log.debug("claim %r: no %s entry for target %s",
                          claim.raw_name, ident.name, target)
            continue
        verified += 1
        stated = claim.polarity == "promotes"
        if stated == verdict:
            matched += 1
    value = matched / verified if verified else 0.0
    return value, verified, matched


def reward_rational(parsed: ParsedResponse, mol: Molecule, target: str,
                    table: RangeTable) -> float:
    value, _, _ = _rational_detail(parsed, mol, target, table)
    return value


def total_reward(parsed: ParsedResponse, mol: Molecule, label, target: str,
                 table: RangeTable,
                 count_bounds: tuple[int, int] = DEFAULT_COUNT_BOUNDS,
                 task: str = CLASSIFICATION) -> RewardBreakdown:
    fmt = reward_format(parsed)
    correct = reward_correct(parsed, label, task)
    count = reward_count(parsed, *count_bounds)
    rational, verified, matched = _rational_detail(parsed, mol, target, table)
    return RewardBreakdown(
        format=fmt,
        correct=correct,
        count=count,
        rational=rational,
        total=fmt + correct + count + rational,
        n_att=len(parsed.claims or ()),
        verified=verified,
        matched=matched,
    )
