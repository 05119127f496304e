"""Temporal-order dependencies mined from transaction traces.

Traces (one per sender) are folded into a prefix-tree acceptor, compacted by
k-tails state merging, and queried for *necessary predecessors*: f1 is a
prerequisite of f2 when no path from the initial state reaches an f2
transition without first taking an f1 transition.
"""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import product

DEFAULT_K = 2
_ADDRESS = re.compile(r"^0x[0-9a-fA-F]{40}$")


class TraceError(Exception):
    pass


class MalformedLine(TraceError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno


class DuplicateOrderKey(TraceError):
    def __init__(self, sender: str, block: int, index: int):
        super().__init__(f"sender {sender} has two records at block {block} index {index}")
        self.key = (sender, block, index)


class EmptyInput(TraceError):
    pass


@dataclass(frozen=True)
class TxRecord:
    sender: str
    function: str
    block: int
    index: int
    timestamp: int | None = None


@dataclass(frozen=True)
class TransactionTrace:
    sender: str
    calls: tuple


def _int_field(rec: dict, name: str, lineno: int, optional: bool = False) -> int | None:
    v = rec.get(name)
    if v is None and optional:
        return None
    if not isinstance(v, int) or isinstance(v, bool) or v < 0:
        raise MalformedLine(lineno, f"'{name}' must be a non-negative integer")
    return v


def parse_record(line: str, lineno: int) -> TxRecord:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLine(lineno, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(rec, dict):
        raise MalformedLine(lineno, "record must be a JSON object")
    sender = rec.get("sender")
    if not isinstance(sender, str) or not _ADDRESS.match(sender):
        raise MalformedLine(lineno, "'sender' must be a 0x-prefixed 20-byte address")
    fn = rec.get("function")
    if not isinstance(fn, str) or not fn:
        raise MalformedLine(lineno, "'function' must be a non-empty string")
    return TxRecord(
        sender.lower(), fn,
        _int_field(rec, "block", lineno), _int_field(rec, "index", lineno),
        _int_field(rec, "timestamp", lineno, optional=True),
    )


def ingest_traces(lines) -> list[TransactionTrace]:
    """Group JSON-Lines records by sender, each group ordered by (block, index).

    ``lines`` is an iterable of text lines or one string. Blank lines are skipped.
    """
    if isinstance(lines, (str, bytes)):
        text = lines.decode("utf-8") if isinstance(lines, bytes) else lines
        lines = text.splitlines()
    groups: dict[str, dict[tuple, str]] = defaultdict(dict)
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        rec = parse_record(line, lineno)
        key = (rec.block, rec.index)
        if key in groups[rec.sender]:
            raise DuplicateOrderKey(rec.sender, rec.block, rec.index)
        groups[rec.sender][key] = rec.function
    return [
        TransactionTrace(sender, tuple(calls[k] for k in sorted(calls)))
        for sender, calls in sorted(groups.items())
    ]


def relabel(traces, mapping: dict) -> list[TransactionTrace]:
    """Rename trace labels through ``mapping`` (case-insensitive keys); unmatched labels are kept."""
    low = {k.lower(): v for k, v in mapping.items()}
    return [
        TransactionTrace(t.sender, tuple(low.get(c.lower(), c) for c in t.calls)) for t in traces
    ]


@dataclass
class Fsm:
    """Deterministic machine over function labels; state 0 is initial."""

    states: list = field(default_factory=list)
    transitions: dict = field(default_factory=dict)  # state -> {label: state}
    support: dict = field(default_factory=dict)      # (state, label) -> trace count
    initial: int = 0

    @property
    def labels(self) -> list[str]:
        return sorted({lab for out in self.transitions.values() for lab in out})

    def out(self, s: int) -> dict:
        return self.transitions.get(s, {})

    def copy(self) -> "Fsm":
        return Fsm(
            list(self.states), {s: dict(t) for s, t in self.transitions.items()},
            dict(self.support), self.initial,
        )

    def accepts(self, calls) -> bool:
        s = self.initial
        for c in calls:
            nxt = self.out(s).get(c)
            if nxt is None:
                return False
            s = nxt
        return True

    def label_support(self, label: str) -> int:
        return sum(n for (_, lab), n in self.support.items() if lab == label)

    def to_json(self) -> dict:
        return {
            "initial": self.initial,
            "states": list(self.states),
            "transitions": [
                {"from": s, "label": lab, "to": t, "support": self.support.get((s, lab), 0)}
                for s in self.states for lab, t in sorted(self.out(s).items())
            ],
        }

    def to_dot(self) -> str:
        lines = ["digraph fsm {", "  rankdir=LR;", f'  s{self.initial} [shape=doublecircle];']
        for s in self.states:
            for lab, t in sorted(self.out(s).items()):
                lines.append(f'  s{s} -> s{t} [label="{lab} ({self.support.get((s, lab), 0)})"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_initial_fsm(traces) -> Fsm:
    """Prefix-tree acceptor; states are numbered in creation order."""
    traces = list(traces)
    if not traces:
        raise EmptyInput("no traces to build a machine from")
    fsm = Fsm(states=[0], transitions={0: {}})
    for t in traces:
        s = 0
        for c in t.calls:
            nxt = fsm.transitions[s].get(c)
            if nxt is None:
                nxt = len(fsm.states)
                fsm.states.append(nxt)
                fsm.transitions[nxt] = {}
                fsm.transitions[s][c] = nxt
            fsm.support[(s, c)] = fsm.support.get((s, c), 0) + 1
            s = nxt
    return fsm


def k_tail(fsm: Fsm, s: int, k: int) -> frozenset:
    """All label sequences of length <= k leaving ``s``, including the empty one."""
    out = {()}
    frontier = {((), s)}
    for _ in range(k):
        nxt = set()
        for seq, st in frontier:
            for lab, t in fsm.out(st).items():
                nxt.add((seq + (lab,), t))
        out |= {seq for seq, _ in nxt}
        frontier = nxt
    return frozenset(out)


def merge_pair(fsm: Fsm, a: int, b: int, merges: list | None = None) -> Fsm:
    """Merge two states, folding conflicting successors together until deterministic.

    The surviving id of every merged group is its smallest member. Each
    (kept, absorbed) pair is appended to ``merges`` when given.
    """
    fsm = fsm.copy()
    parent = {s: s for s in fsm.states}

    def find(s):
        while parent[s] != s:
            parent[s] = parent[parent[s]]
            s = parent[s]
        return s

    pending = [(a, b)]
    while pending:
        x, y = pending.pop()
        x, y = find(x), find(y)
        if x == y:
            continue
        keep, gone = min(x, y), max(x, y)
        parent[gone] = keep
        if merges is not None:
            merges.append((keep, gone))
        for lab, t in sorted(fsm.transitions.pop(gone, {}).items()):
            n = fsm.support.pop((gone, lab), 0)
            if lab in fsm.transitions[keep]:
                pending.append((fsm.transitions[keep][lab], t))
            else:
                fsm.transitions[keep][lab] = t
            fsm.support[(keep, lab)] = fsm.support.get((keep, lab), 0) + n
    fsm.states = sorted({find(s) for s in fsm.states})
    fsm.transitions = {
        s: {lab: find(t) for lab, t in fsm.transitions.get(s, {}).items()} for s in fsm.states
    }
    return fsm


def _equivalence_round(fsm: Fsm, k: int, merges) -> Fsm | None:
    tails = {s: k_tail(fsm, s, k) for s in fsm.states}
    groups: dict[frozenset, list[int]] = defaultdict(list)
    for s in fsm.states:
        groups[tails[s]].append(s)
    # one pair per round: folding can absorb other group members, so tails are recomputed
    for members in sorted((m for m in groups.values() if len(m) > 1), key=lambda m: m[0]):
        return merge_pair(fsm, members[0], members[1], merges)
    return None


def _subsumption_round(fsm: Fsm, k: int, merges) -> Fsm | None:
    tails = {s: k_tail(fsm, s, k) for s in fsm.states}
    for a, b in product(fsm.states, fsm.states):
        if a == b or not fsm.out(b):
            continue
        if set(fsm.out(b)) <= set(fsm.out(a)) and tails[b] < tails[a]:
            return merge_pair(fsm, a, b, merges)
    return None


def merge_states(fsm: Fsm, k: int = DEFAULT_K, *, subsumption: bool = True,
                 merges: list | None = None) -> Fsm:
    """k-tails compaction: equivalent states first, then subsumed ones, to a fixpoint.

    Two states are equivalent when their k-tails coincide. A non-final state B is
    subsumed by A when B's outgoing labels are a subset of A's and B's k-tail is a
    strict subset of A's. Candidates are taken lowest id first. Merged state
    pairs are appended to ``merges`` when given.
    """
    if k < 1:
        raise ValueError("k must be positive")
    while True:
        nxt = _equivalence_round(fsm, k, merges)
        if nxt is None and subsumption:
            nxt = _subsumption_round(fsm, k, merges)
        if nxt is None:
            return fsm
        fsm = nxt


@dataclass(frozen=True)
class TsdEdge:
    dependent: str
    prerequisite: str

    def to_json(self) -> dict:
        return {"dependent": self.dependent, "prerequisite": self.prerequisite}


def _reaches_without(fsm: Fsm, target: str, avoid: str) -> bool:
    seen = {fsm.initial}
    stack = [fsm.initial]
    while stack:
        s = stack.pop()
        for lab, t in fsm.out(s).items():
            if lab == target:
                return True
            if lab != avoid and t not in seen:
                seen.add(t)
                stack.append(t)
    return False


def extract_tsd(fsm: Fsm, min_support: int = 1) -> list[TsdEdge]:
    """Edges (f2, f1) where f1 must precede every f2 transition; sorted by (f2, f1)."""
    labels = fsm.labels
    out = []
    for f2 in labels:
        if fsm.label_support(f2) < min_support:
            continue
        for f1 in labels:
            if f1 != f2 and not _reaches_without(fsm, f2, f1):
                out.append(TsdEdge(f2, f1))
    return out


def mine_tsd(traces, k: int = DEFAULT_K, min_support: int = 1) -> tuple[Fsm, list[TsdEdge]]:
    traces = list(traces)
    if not traces:
        return Fsm(states=[0], transitions={0: {}}), []
    fsm = merge_states(build_initial_fsm(traces), k)
    return fsm, extract_tsd(fsm, min_support)
