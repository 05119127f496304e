"""State-dependency graph: state variables and statement blocks joined by labeled edges."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from . import model as ir

C = "C"
RW_READ = "RW-read"
RW_WRITE = "RW-write"
ASD = "ASD"
TSD = "TSD"
LABELS = (C, RW_READ, RW_WRITE, ASD, TSD)
ALL = frozenset(LABELS)
RW = frozenset({RW_READ, RW_WRITE})

_COLORS = {C: "gray", RW_READ: "black", RW_WRITE: "black", ASD: "red", TSD: "blue"}


class SdgError(Exception):
    pass


class InconsistentInputs(SdgError):
    pass


class UnknownNode(SdgError, KeyError):
    pass


def var_node_id(v: ir.StateVarId) -> str:
    return f"var:{v.kind}:{hex(v.slot)}"


def block_node_id(function: str, n: int) -> str:
    return f"b:{function}:{n}"


@dataclass(frozen=True)
class StateVarNode:
    id: str
    var: ir.StateVarId


@dataclass(frozen=True)
class BlockNode:
    id: str
    function: str
    index: int
    is_function_start: bool
    is_function_end: bool
    statements: tuple = ()  # statement paths grouped into this block


@dataclass(frozen=True)
class SdgEdge:
    src: str
    dst: str
    label: str
    var: str | None = None  # annotation on ASD edges

    def to_json(self) -> dict:
        d = {"from": self.src, "to": self.dst, "label": self.label}
        if self.var is not None:
            d["var"] = self.var
        return d


# ---------------------------------------------------------------- segmentation


@dataclass
class _Segmenter:
    """Splits one function body into blocks.

    A block closes after an Assert, ExternalCall, InternalCall or Return. A Loop
    gets a header block of its own; its body is segmented recursively, and
    statements after the loop start a fresh block.
    """

    blocks: list = field(default_factory=list)      # list of lists of paths
    edges: list = field(default_factory=list)       # (i, j) control edges
    returns: set = field(default_factory=set)
    calls: list = field(default_factory=list)       # (block, callee)
    continuation: dict = field(default_factory=dict)

    def _new(self, preds: list) -> int:
        b = len(self.blocks)
        self.blocks.append([])
        for p in preds:
            self.edges.append((p, b))
            if any(c == p for c, _ in self.calls) and p not in self.continuation:
                self.continuation[p] = b
        return b

    def run(self, body, prefix: tuple = ()) -> tuple[int | None, list]:
        entry = None
        preds: list = []
        cur = None
        for i, stmt in enumerate(body):
            path = prefix + (i,)
            if isinstance(stmt, ir.Loop):
                head = self._new([cur] if cur is not None else preds)
                entry = head if entry is None else entry
                self.blocks[head].append(path)
                b_entry, b_exits = self.run(stmt.body, path)
                if b_entry is None:
                    self.edges.append((head, head))
                else:
                    self.edges.append((head, b_entry))
                    self.edges.extend((x, head) for x in b_exits)
                preds, cur = [head], None
                continue
            if cur is None:
                cur = self._new(preds)
                entry = cur if entry is None else entry
                preds = []
            self.blocks[cur].append(path)
            if isinstance(stmt, ir.Return):
                self.returns.add(cur)
                preds, cur = [], None
            elif isinstance(stmt, (ir.Assert, ir.ExternalCall, ir.InternalCall)):
                if isinstance(stmt, ir.InternalCall):
                    self.calls.append((cur, stmt.callee))
                preds, cur = [cur], None
        exits = [cur] if cur is not None else preds
        return entry, exits


@dataclass(frozen=True)
class FunctionBlocks:
    start: int
    ends: tuple
    blocks: tuple      # tuple of path tuples per block
    edges: tuple
    calls: tuple       # (block, callee)
    continuation: dict


def segment(f: ir.FunctionDef) -> FunctionBlocks:
    seg = _Segmenter()
    entry, exits = seg.run(f.body)
    if entry is None:
        entry = seg._new([])
        exits = [entry]
    ends = tuple(sorted(set(exits) | seg.returns))
    return FunctionBlocks(
        entry, ends, tuple(tuple(b) for b in seg.blocks), tuple(dict.fromkeys(seg.edges)),
        tuple(seg.calls), dict(seg.continuation),
    )


# ---------------------------------------------------------------- graph


class Sdg:
    """Immutable labeled graph; query results are sorted by node id."""

    def __init__(self, nodes, edges, block_index: dict, function_blocks: dict):
        self._nodes = {n.id: n for n in nodes}
        self.nodes = tuple(nodes)
        self.edges = tuple(edges)
        self._block_index = dict(block_index)        # (function, path) -> node id
        self._function_blocks = dict(function_blocks)
        self._succ: dict[str, list] = {n.id: [] for n in nodes}
        self._pred: dict[str, list] = {n.id: [] for n in nodes}
        for e in self.edges:
            self._succ[e.src].append(e)
            self._pred[e.dst].append(e)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._nodes

    def node(self, node_id: str):
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    @property
    def var_nodes(self) -> list[StateVarNode]:
        return [n for n in self.nodes if isinstance(n, StateVarNode)]

    @property
    def block_nodes(self) -> list[BlockNode]:
        return [n for n in self.nodes if isinstance(n, BlockNode)]

    def block_of(self, function: str, path: tuple) -> str:
        """Node id of the block holding the statement at ``path`` in ``function``."""
        try:
            return self._block_index[(function, tuple(path))]
        except KeyError:
            raise UnknownNode(f"{function}{list(path)}") from None

    def function_blocks(self, function: str) -> list[str]:
        return list(self._function_blocks.get(function, ()))

    def start_block(self, function: str) -> str:
        return next(n.id for n in self.block_nodes if n.function == function and n.is_function_start)

    def end_blocks(self, function: str) -> list[str]:
        return [n.id for n in self.block_nodes if n.function == function and n.is_function_end]

    def out_edges(self, node_id: str, labels=ALL) -> list[SdgEdge]:
        self.node(node_id)
        return [e for e in self._succ[node_id] if e.label in labels]

    def in_edges(self, node_id: str, labels=ALL) -> list[SdgEdge]:
        self.node(node_id)
        return [e for e in self._pred[node_id] if e.label in labels]

    def successors(self, node_id: str, labels=ALL) -> list[str]:
        return sorted({e.dst for e in self.out_edges(node_id, labels)})

    def predecessors(self, node_id: str, labels=ALL) -> list[str]:
        return sorted({e.src for e in self.in_edges(node_id, labels)})

    def reachable(self, sources, labels=ALL) -> set[str]:
        """Forward closure of ``sources`` (inclusive) over edges with the given labels."""
        seen = set()
        for s in sources:
            self.node(s)
            seen.add(s)
        work = deque(sorted(seen))
        while work:
            n = work.popleft()
            for e in self._succ[n]:
                if e.label in labels and e.dst not in seen:
                    seen.add(e.dst)
                    work.append(e.dst)
        return seen

    def shortest_paths(self, sources, labels=ALL) -> dict[str, list[str]]:
        """BFS tree from ``sources``: node id -> node path, smallest-id neighbours first."""
        parent: dict[str, str | None] = {}
        for s in sorted(sources):
            self.node(s)
            parent.setdefault(s, None)
        work = deque(sorted(parent))
        while work:
            n = work.popleft()
            for m in sorted({e.dst for e in self._succ[n] if e.label in labels}):
                if m not in parent:
                    parent[m] = n
                    work.append(m)
        out = {}
        for n in parent:
            path = [n]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            out[n] = path[::-1]
        return out

    def edge_labels(self, src: str, dst: str) -> set[str]:
        return {e.label for e in self._succ.get(src, ()) if e.dst == dst}

    def is_path(self, path, labels=ALL) -> bool:
        if not path or any(p not in self for p in path):
            return False
        return all(self.edge_labels(a, b) & set(labels) for a, b in zip(path, path[1:]))

    def to_json(self) -> dict:
        nodes = []
        for n in self.nodes:
            if isinstance(n, StateVarNode):
                nodes.append({"id": n.id, "type": "state_var", "label": n.var.label})
            else:
                nodes.append({
                    "id": n.id, "type": "block", "function": n.function,
                    "start": n.is_function_start, "end": n.is_function_end,
                    "statements": [list(p) for p in n.statements],
                })
        return {"nodes": nodes, "edges": [e.to_json() for e in self.edges]}

    def to_dot(self) -> str:
        lines = ["digraph sdg {", "  node [fontname=monospace];"]
        for n in self.nodes:
            if isinstance(n, StateVarNode):
                lines.append(f'  "{n.id}" [shape=ellipse label="{n.var.label}"];')
            else:
                marks = ("start " if n.is_function_start else "") + ("end" if n.is_function_end else "")
                label = f"{n.function}#{n.index}" + (f"\\n{marks.strip()}" if marks else "")
                lines.append(f'  "{n.id}" [shape=box label="{label}"];')
        for e in self.edges:
            text = e.label + (f" {e.var}" if e.var else "")
            lines.append(f'  "{e.src}" -> "{e.dst}" [color={_COLORS[e.label]} label="{text}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _check_inputs(m: ir.ContractModel, rw, asd, tsd) -> None:
    fnames = {f.name for f in m.functions}
    vkeys = {v.key for v in m.state_vars}
    for e in rw:
        if e.accessor not in fnames or e.var.key not in vkeys:
            raise InconsistentInputs(f"RW edge {e.accessor}/{e.var.label} not in model")
    for e in asd:
        if e.reader not in fnames or e.writer not in fnames or e.var.key not in vkeys:
            raise InconsistentInputs(f"ASD edge {e.reader}->{e.writer} not in model")
    for e in tsd:
        for name in (e.dependent, e.prerequisite):
            if name not in fnames:
                raise InconsistentInputs(f"TSD edge references unknown function {name!r}")


def build_sdg(m: ir.ContractModel, rw=(), asd=(), tsd=()) -> Sdg:
    """Control-flow edges first, then ASD, TSD and read/write edges.

    ASD and TSD edges run from every end block of the writer (prerequisite) to
    the start block of the reader (dependent).
    """
    _check_inputs(m, rw, asd, tsd)
    nodes: list = []
    edges: list = []
    block_index: dict = {}
    function_blocks: dict = {}
    segs = {f.name: segment(f) for f in m.functions}

    for v in m.state_vars:
        nodes.append(StateVarNode(var_node_id(v), v))
    for f in m.functions:
        seg = segs[f.name]
        ids = []
        for i, paths in enumerate(seg.blocks):
            nid = block_node_id(f.name, i)
            ids.append(nid)
            nodes.append(BlockNode(nid, f.name, i, i == seg.start, i in seg.ends, paths))
            for p in paths:
                block_index[(f.name, p)] = nid
        function_blocks[f.name] = ids

    seen = set()

    def add(src, dst, label, var=None):
        key = (src, dst, label, var)
        if key not in seen:
            seen.add(key)
            edges.append(SdgEdge(src, dst, label, var))

    for f in m.functions:
        seg = segs[f.name]
        for a, b in seg.edges:
            add(block_node_id(f.name, a), block_node_id(f.name, b), C)
        for blk, callee in seg.calls:
            cseg = segs[callee]
            add(block_node_id(f.name, blk), block_node_id(callee, cseg.start), C)
            if blk in seg.continuation:
                for end in cseg.ends:
                    add(block_node_id(callee, end), block_node_id(f.name, seg.continuation[blk]), C)
    for e in asd:
        wseg, rseg = segs[e.writer], segs[e.reader]
        for end in wseg.ends:
            add(block_node_id(e.writer, end), block_node_id(e.reader, rseg.start), ASD, e.var.label)
    for e in tsd:
        pseg, dseg = segs[e.prerequisite], segs[e.dependent]
        for end in pseg.ends:
            add(block_node_id(e.prerequisite, end), block_node_id(e.dependent, dseg.start), TSD)
    for e in rw:
        blk = block_index[(e.accessor, tuple(e.site))]
        vid = var_node_id(m.var(e.var.key))
        if e.mode == "write":
            add(blk, vid, RW_WRITE)
        else:
            add(vid, blk, RW_READ)
    return Sdg(nodes, edges, block_index, function_blocks)
