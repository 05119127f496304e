"""Call-site-sensitive unfolding of one function's code.

Compiled Solidity routes shared helpers (checked arithmetic, ABI decoding,
mapping updates) through internal calls: the caller pushes a return address
and jumps, the helper jumps back through that stack slot. A block-level meet
merges every caller of a helper and loses both the return address and the
values the callers passed. Here each node is a block paired with a context:

* the call string, the stack of (call block, return address) pairs, capped
  at ``depth`` entries;
* the call block whose helper returned last, so the straight-line code
  right after a return is analysed separately for each call site.

Nodes with equal keys still meet, so loops converge as in the block-level
analysis.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

from .cfg import FALLTHROUGH, ITERATION_CAP, JUMP, SEQUENTIAL, TAKEN
from .dataflow import Const, State, execute, meet

log = logging.getLogger(__name__)

CONTEXT_DEPTH = 4
NODE_CAP = 4096


@dataclass
class FunctionGraph:
    """A function's code as nodes over basic blocks; node 0 is the entry."""

    cfg: object
    block_of: list = field(default_factory=list)
    context_of: list = field(default_factory=list)
    states: list = field(default_factory=list)
    edges: dict = field(default_factory=dict)  # node -> [(node, kind)]
    unresolved: set = field(default_factory=set)
    complete: bool = True

    @property
    def nodes(self) -> range:
        return range(len(self.block_of))

    def block(self, n: int):
        return self.cfg.block(self.block_of[n])

    def state(self, n: int) -> State:
        return self.states[n]

    def succ_map(self) -> dict[int, list[int]]:
        return {n: sorted({d for d, _ in self.edges.get(n, ())}) for n in self.nodes}

    def out(self, n: int, kind: str) -> int | None:
        for d, k in self.edges.get(n, ()):
            if k == kind:
                return d
        return None


def _jumpdest_block(cfg, value) -> int | None:
    if isinstance(value, Const):
        blk = cfg.block_at(value.value)
        if blk is not None and blk.is_jumpdest:
            return blk.id
    return None


def _transfer(cfg, bid: int, ctx: tuple, res, depth: int) -> list[tuple[int, tuple, str]]:
    """Successor (block, context, edge kind) triples of one node."""
    blk = cfg.block(bid)
    calls, last = ctx
    nxt = bid + 1 if bid + 1 < len(cfg.blocks) else None
    term = blk.terminator
    if term == "fallthrough":
        return [(nxt, ctx, SEQUENTIAL)] if nxt is not None else []
    # the return tag only survives straight-line code after the return
    plain = (calls, None)
    if term == "JUMPI":
        out = []
        t = _jumpdest_block(cfg, res.target)
        if t is not None:
            out.append((t, plain, TAKEN))
        if nxt is not None:
            out.append((nxt, plain, FALLTHROUGH))
        return out
    if term != "JUMP":
        return []
    t = _jumpdest_block(cfg, res.target)
    if t is None:
        return []
    target = res.target.value
    rets = [r for _, r in calls]
    if target in rets:
        i = len(rets) - 1 - rets[::-1].index(target)
        return [(t, (calls[:i], calls[i][0]), JUMP)]
    for v in reversed(res.out.stack):
        if isinstance(v, Const) and v.value != target and v.value not in rets \
                and _jumpdest_block(cfg, v) is not None:
            return [(t, ((calls + ((bid, v.value),))[-depth:], None), JUMP)]
    return [(t, plain, JUMP)]


def _pushed_jumpdests(cfg, bid: int) -> list[int]:
    out = []
    for ins in cfg.block(bid).instructions:
        if ins.is_push:
            blk = cfg.block_at(ins.value)
            if blk is not None and blk.is_jumpdest:
                out.append(blk.id)
    return out


def unfold_function(cfg, entry: int, allowed=None, *, depth: int = CONTEXT_DEPTH,
                    node_cap: int = NODE_CAP) -> FunctionGraph:
    """Explore the code reachable from block ``entry`` with call-site contexts.

    ``allowed`` optionally restricts the blocks that may be entered. Jumps that
    stay unresolved in context return to the innermost call site when one is
    pending; otherwise they get edges to every JUMPDEST pushed in the function.
    """
    g = FunctionGraph(cfg)
    index: dict[tuple, int] = {}
    visits: dict[int, int] = {}
    fallback: set[int] = set()  # JUMPDEST blocks pushed by any block seen so far
    scanned: set[int] = set()

    def node(bid: int, ctx: tuple) -> int | None:
        key = (bid, ctx)
        if key in index:
            return index[key]
        if len(g.block_of) >= node_cap:
            g.complete = False
            return None
        index[key] = len(g.block_of)
        if bid not in scanned:
            scanned.add(bid)
            fallback.update(_pushed_jumpdests(cfg, bid))
        g.block_of.append(bid)
        g.context_of.append(ctx)
        g.states.append(None)
        return index[key]

    def successors(n: int, res) -> list[tuple[int, tuple, str]]:
        bid, ctx = g.block_of[n], g.context_of[n]
        out = _transfer(cfg, bid, ctx, res, depth)
        blk = cfg.block(bid)
        if blk.terminator in ("JUMP", "JUMPI") and not isinstance(res.target, Const):
            calls, _ = ctx
            kind = JUMP if blk.terminator == "JUMP" else TAKEN
            if calls:
                t = _jumpdest_block(cfg, Const(calls[-1][1]))
                out.append((t, (calls[:-1], calls[-1][0]), kind))
            else:
                for t in sorted(fallback):
                    out.append((t, ctx, kind))
        if allowed is not None:
            out = [o for o in out if o[0] in allowed]
        return out

    start = node(entry, ((), None))
    g.states[start] = cfg.state(entry)
    work = deque([start])
    queued = {start}
    while work:
        n = work.popleft()
        queued.discard(n)
        visits[n] = visits.get(n, 0) + 1
        res = execute(g.block(n), g.states[n])
        for bid, ctx, _ in successors(n, res):
            m = node(bid, ctx)
            if m is None or visits.get(m, 0) >= ITERATION_CAP:
                continue
            new = meet(g.states[m], res.out)
            if new != g.states[m]:
                g.states[m] = new
                if m not in queued:
                    work.append(m)
                    queued.add(m)

    for n in g.nodes:
        if g.states[n] is None:
            g.states[n] = State()
        res = execute(g.block(n), g.states[n])
        blk = g.block(n)
        if blk.terminator in ("JUMP", "JUMPI") and not isinstance(res.target, Const):
            if not g.context_of[n][0]:
                g.unresolved.add(n)
        edges = []
        for bid, ctx, kind in successors(n, res):
            m = index.get((bid, ctx))
            if m is not None and (m, kind) not in edges:
                edges.append((m, kind))
        g.edges[n] = edges
    if not g.complete:
        log.warning("function at block %d exceeded %d unfolded nodes", entry, node_cap)
    return g


def block_graph(cfg, blocks, entry: int) -> FunctionGraph:
    """Context-free graph over ``blocks`` using the CFG's own states and edges."""
    g = FunctionGraph(cfg)
    order = [entry] + sorted(b for b in blocks if b != entry)
    pos = {b: i for i, b in enumerate(order)}
    for b in order:
        g.block_of.append(b)
        g.context_of.append(((), None))
        g.states.append(cfg.state(b))
    for b in order:
        g.edges[pos[b]] = [
            (pos[e.dst], e.kind) for e in cfg.out_edges(b, conservative=True) if e.dst in pos
        ]
        if b in cfg.unresolved_jumps:
            g.unresolved.add(pos[b])
    return g
