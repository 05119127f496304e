"""Selector dispatcher recovery and per-block storage/environment access classification."""

from __future__ import annotations

from dataclasses import dataclass, field

from .dataflow import Const, Observer, Selector, Sym, execute, slot_of
from .loops import reachable_from

ENV_OPCODES = {
    "CALLER": "CALLER", "ORIGIN": "ORIGIN", "CALLVALUE": "CALLVALUE", "TIMESTAMP": "TIMESTAMP",
    "NUMBER": "NUMBER", "PREVRANDAO": "PREVRANDAO", "BLOCKHASH": "BLOCKHASH",
    "COINBASE": "COINBASE", "GASLIMIT": "GASLIMIT", "BALANCE": "BALANCE",
    "SELFBALANCE": "BALANCE", "ADDRESS": "ADDRESS", "CALLDATALOAD": "CALLDATA",
    "CALLDATACOPY": "CALLDATA", "CALLDATASIZE": "CALLDATA",
}


@dataclass(frozen=True)
class FunctionEntry:
    selector: int | None  # None marks the fallback
    entry: int
    exits: tuple = ()
    blocks: frozenset = field(default=frozenset(), compare=False)

    @property
    def name(self) -> str:
        return "fallback" if self.selector is None else f"0x{self.selector:08x}"


def selector_branch(cond) -> int | None:
    """Selector constant if ``cond`` is ``selector == const``."""
    if isinstance(cond, Sym) and cond.op == "EQ":
        a, b = cond.args
        if isinstance(a, Selector):
            a, b = b, a
        if isinstance(b, Selector) and isinstance(a, Const) and a.value < (1 << 32):
            return a.value
    return None


def function_succ_map(cfg, succ, entry: int) -> dict[int, list[int]]:
    """Successor map of the code reachable from ``entry``.

    Resolved edges, plus edges from unresolved jumps to JUMPDESTs whose offset is
    pushed somewhere inside the function itself (internal-call return sites).
    """
    fsucc: dict[int, set[int]] = {}
    targets: set[int] = set()  # JUMPDEST blocks whose offset is pushed in the function
    unresolved = set(cfg.unresolved_jumps)
    seen_unresolved: list[int] = []
    stack = [entry]
    while stack:
        b = stack.pop()
        if b in fsucc:
            continue
        fsucc[b] = set(succ.get(b, ()))
        for ins in cfg.block(b).instructions:
            if ins.is_push:
                blk = cfg.block_at(ins.value)
                if blk is not None and blk.is_jumpdest and blk.id not in targets:
                    targets.add(blk.id)
                    if seen_unresolved:
                        stack.append(blk.id)
        if b in unresolved:
            if not seen_unresolved:
                stack.extend(targets)
            seen_unresolved.append(b)
        stack.extend(s for s in fsucc[b] if s not in fsucc)
    for b in seen_unresolved:
        fsucc[b] |= targets
    return {b: sorted(s) for b, s in fsucc.items()}


def _function_blocks(cfg, succ, entry: int) -> tuple[frozenset, tuple]:
    blocks = frozenset(function_succ_map(cfg, succ, entry))
    exits = tuple(sorted(b for b in blocks if cfg.block(b).terminator in ("STOP", "RETURN", "REVERT")))
    return blocks, exits


def recover_functions(cfg) -> list[FunctionEntry]:
    if not cfg.blocks:
        return []
    succ = cfg.resolved_succ_map()
    live = reachable_from(succ, cfg.entry)
    found: dict[int, int] = {}
    dispatch_blocks = []
    for b in cfg.blocks:
        if b.terminator != "JUMPI" or b.id not in live:
            continue
        res = execute(b, cfg.state(b.id))
        sel = selector_branch(res.cond)
        if sel is None:
            continue
        taken = [e.dst for e in cfg.out_edges(b.id, conservative=False) if e.kind == "branch-taken"]
        if not taken:
            continue
        dispatch_blocks.append(b.id)
        found.setdefault(sel, taken[0])

    entries = []
    for sel in sorted(found):
        blocks, exits = _function_blocks(cfg, succ, found[sel])
        entries.append(FunctionEntry(sel, found[sel], exits, blocks))

    fallback = cfg.entry
    if dispatch_blocks:
        last = max(dispatch_blocks)
        fall = [e.dst for e in cfg.out_edges(last, conservative=False) if e.kind == "branch-fallthrough"]
        if fall:
            fallback = fall[0]
    blocks, exits = _function_blocks(cfg, succ, fallback)
    if dispatch_blocks:
        # the fallback path must not re-enter the dispatcher's selector tests
        blocks = frozenset(blocks - set(dispatch_blocks))
    entries.append(FunctionEntry(None, fallback, exits, blocks))
    return entries


@dataclass(frozen=True)
class Access:
    offset: int
    mode: str  # read | write
    kind: str  # scalar | mapping-base | unknown
    slot: int


@dataclass
class BlockAccesses:
    storage: list = field(default_factory=list)
    env: list = field(default_factory=list)  # (offset, atom)

    def __bool__(self) -> bool:
        return bool(self.storage or self.env)


class _AccessObserver(Observer):
    def __init__(self):
        self.acc = BlockAccesses()

    def on_instruction(self, instr, args, result, state):
        name = instr.mnemonic
        if name in ("SLOAD", "SSTORE"):
            kind, slot = slot_of(args[0])
            self.acc.storage.append(Access(instr.offset, "read" if name == "SLOAD" else "write", kind, slot))
        elif name in ENV_OPCODES:
            self.acc.env.append((instr.offset, ENV_OPCODES[name]))


def classify_accesses(cfg) -> dict[int, BlockAccesses]:
    """Storage reads/writes and environment reads per block; blocks with none are omitted."""
    out = {}
    for b in cfg.blocks:
        obs = _AccessObserver()
        execute(b, cfg.state(b.id), obs)
        if obs.acc:
            out[b.id] = obs.acc
    return out
