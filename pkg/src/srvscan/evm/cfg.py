"""Basic blocks and control-flow graph recovery with constant-stack jump resolution."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

from .dataflow import TOP, Const, State, execute, meet
from .disasm import Instruction
from .opcodes import TERMINATORS

log = logging.getLogger(__name__)

ITERATION_CAP = 64

JUMP = "jump"
TAKEN = "branch-taken"
FALLTHROUGH = "branch-fallthrough"
SEQUENTIAL = "sequential"


@dataclass(frozen=True)
class BasicBlock:
    id: int
    start: int
    end: int  # exclusive
    instructions: tuple
    terminator: str

    @property
    def last(self) -> Instruction:
        return self.instructions[-1]

    @property
    def is_jumpdest(self) -> bool:
        return self.instructions[0].mnemonic == "JUMPDEST"


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: str
    # added only because the source jump could not be resolved
    conservative: bool = False


@dataclass
class Cfg:
    blocks: tuple
    edges: tuple
    entry: int
    unresolved_jumps: tuple
    in_states: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._succ: dict[int, list[Edge]] = {b.id: [] for b in self.blocks}
        self._pred: dict[int, list[Edge]] = {b.id: [] for b in self.blocks}
        for e in self.edges:
            self._succ[e.src].append(e)
            self._pred[e.dst].append(e)
        self._by_start = {b.start: b for b in self.blocks}

    def block(self, bid: int) -> BasicBlock:
        return self.blocks[bid]

    def block_at(self, offset: int) -> BasicBlock | None:
        return self._by_start.get(offset)

    def out_edges(self, bid: int, conservative: bool = True) -> list[Edge]:
        return [e for e in self._succ[bid] if conservative or not e.conservative]

    def successors(self, bid: int, conservative: bool = True) -> list[int]:
        return sorted({e.dst for e in self.out_edges(bid, conservative)})

    def predecessors(self, bid: int, conservative: bool = True) -> list[int]:
        return sorted({e.src for e in self._pred[bid] if conservative or not e.conservative})

    def resolved_succ_map(self) -> dict[int, list[int]]:
        return {b.id: self.successors(b.id, conservative=False) for b in self.blocks}

    def state(self, bid: int) -> State:
        return self.in_states.get(bid, TOP)

    def to_dot(self) -> str:
        lines = ["digraph cfg {", "  node [shape=box fontname=monospace];"]
        for b in self.blocks:
            body = "\\l".join(f"{i.offset}: {i}" for i in b.instructions) + "\\l"
            style = ' color="red"' if b.id in self.unresolved_jumps else ""
            lines.append(f'  b{b.id} [label="{body}"{style}];')
        for e in self.edges:
            style = " style=dashed" if e.conservative else ""
            lines.append(f'  b{e.src} -> b{e.dst} [label="{e.kind}"{style}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def split_blocks(instrs) -> list[BasicBlock]:
    blocks: list[BasicBlock] = []
    cur: list[Instruction] = []

    def close():
        if cur:
            last = cur[-1]
            term = last.mnemonic if last.mnemonic in TERMINATORS else "fallthrough"
            blocks.append(BasicBlock(len(blocks), cur[0].offset, last.offset + last.size, tuple(cur), term))
            cur.clear()

    for ins in instrs:
        if ins.mnemonic == "JUMPDEST":
            close()
        cur.append(ins)
        if ins.mnemonic in TERMINATORS:
            close()
    close()
    return blocks


def _static_successors(blocks, i: int, target, jumpdests: dict) -> list[tuple[int, str]]:
    """Successors of block ``i`` given the abstract jump target (not the conservative ones)."""
    b = blocks[i]
    nxt = i + 1 if i + 1 < len(blocks) else None
    out = []
    if b.terminator in ("JUMP", "JUMPI") and isinstance(target, Const) and target.value in jumpdests:
        out.append((jumpdests[target.value], JUMP if b.terminator == "JUMP" else TAKEN))
    if b.terminator == "JUMPI" and nxt is not None:
        out.append((nxt, FALLTHROUGH))
    if b.terminator == "fallthrough" and nxt is not None:
        out.append((nxt, SEQUENTIAL))
    return out


def _fixpoint(blocks, in_states: dict, seeds, jumpdests: dict, visits: dict) -> None:
    work = deque(seeds)
    queued = set(seeds)
    while work:
        i = work.popleft()
        queued.discard(i)
        visits[i] = visits.get(i, 0) + 1
        res = execute(blocks[i], in_states[i])
        for j, _ in _static_successors(blocks, i, res.target, jumpdests):
            if visits.get(j, 0) >= ITERATION_CAP:
                continue
            new = meet(in_states.get(j), res.out)
            if new != in_states.get(j):
                in_states[j] = new
                if j not in queued:
                    work.append(j)
                    queued.add(j)


def build_cfg(instrs) -> Cfg:
    blocks = split_blocks(instrs)
    if not blocks:
        return Cfg((), (), 0, ())
    jumpdests = {b.start: b.id for b in blocks if b.is_jumpdest}
    pushed = sorted({i.value for i in instrs if i.is_push and i.value in jumpdests})

    in_states: dict[int, State] = {0: TOP}
    visits: dict[int, int] = {}
    _fixpoint(blocks, in_states, [0], jumpdests, visits)
    # blocks only reachable through unresolved jumps still get locally resolved
    orphans = [b.id for b in blocks if b.id not in in_states and b.is_jumpdest]
    for i in orphans:
        in_states[i] = TOP
    if orphans:
        _fixpoint(blocks, in_states, orphans, jumpdests, visits)
    for b in blocks:
        in_states.setdefault(b.id, TOP)  # dead code

    edges: list[Edge] = []
    unresolved = []
    for b in blocks:
        res = execute(b, in_states[b.id])
        for j, kind in _static_successors(blocks, b.id, res.target, jumpdests):
            edges.append(Edge(b.id, j, kind))
        if b.terminator in ("JUMP", "JUMPI") and not isinstance(res.target, Const):
            unresolved.append(b.id)
            kind = JUMP if b.terminator == "JUMP" else TAKEN
            edges.extend(Edge(b.id, jumpdests[t], kind, True) for t in pushed)
    if unresolved:
        log.info("%d unresolved dynamic jumps", len(unresolved))
    return Cfg(tuple(blocks), tuple(edges), 0, tuple(unresolved), in_states)
