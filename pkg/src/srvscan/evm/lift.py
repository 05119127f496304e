"""Lift a recovered CFG into the contract IR."""

from __future__ import annotations

import logging

from .. import model as ir
from .dataflow import (
    MASK, UNKNOWN, CallRes, Const, Env, Observer, Param, Selector, SLoad, Sym, execute, slot_of,
)

from .cfg import FALLTHROUGH, TAKEN
from .loops import dominators, natural_loops
from .opcodes import CALL_FAMILY
from .unfold import CONTEXT_DEPTH, block_graph, unfold_function

log = logging.getLogger(__name__)

_CMP = {"EQ": "==", "LT": "<", "GT": ">", "SLT": "<", "SGT": ">"}
_ARITH = {
    "ADD": "add", "SUB": "sub", "MUL": "mul", "DIV": "div", "SDIV": "div", "MOD": "mod",
    "SMOD": "mod", "XOR": "xor",
}
_TRANSFER_STIPEND = 2300


def _is_bool(e: ir.Expr) -> bool:
    return isinstance(e, (ir.Cmp, ir.BoolOp))


def negate(e: ir.Expr) -> ir.Expr:
    if isinstance(e, ir.BoolOp) and e.op == "not":
        return e.args[0]
    return ir.BoolOp("not", (e,))


def to_expr(v) -> ir.Expr:
    """Convert an abstract stack value into an IR expression."""
    if isinstance(v, Const):
        return ir.Const(v.value)
    if isinstance(v, Env):
        return ir.EnvRead(v.name)
    if isinstance(v, Param):
        return ir.ParamRef(v.index)
    if isinstance(v, Selector):
        return ir.EnvRead("CALLDATA")
    if isinstance(v, SLoad):
        return ir.StateRead(_var(v.kind, v.slot))
    if isinstance(v, CallRes):
        return ir.CallResult()
    if not isinstance(v, Sym):
        return ir.Opaque()
    args = tuple(to_expr(a) for a in v.args)
    op = v.op
    if op in _CMP:
        return ir.Cmp(_CMP[op], args)
    if op == "ISZERO":
        x = args[0]
        return negate(x) if _is_bool(x) else ir.Cmp("==", (x, ir.Const(0)))
    if op in ("AND", "OR"):
        if all(_is_bool(a) for a in args):
            return ir.BoolOp(op.lower(), args)
        # the IR has no bitwise or; xor keeps the operand dependencies
        return ir.Arith("and-bits" if op == "AND" else "xor", args)
    if op in _ARITH:
        return ir.Arith(_ARITH[op], args)
    if op in ("SHR", "SAR", "SHL"):
        # EVM order is (shift, value); the IR reads value-first
        return ir.Arith("shl" if op == "SHL" else "shr", (args[1], args[0]))
    if op == "NOT":
        return ir.Arith("xor", (args[0], ir.Const(MASK)))
    if op == "ADDMOD":
        return ir.Arith("mod", (ir.Arith("add", args[:2]), args[2]))
    if op == "MULMOD":
        return ir.Arith("mod", (ir.Arith("mul", args[:2]), args[2]))
    if op == "BYTE":
        shift = ir.Arith("sub", (ir.Const(248), ir.Arith("mul", (args[0], ir.Const(8)))))
        return ir.Arith("and-bits", (ir.Arith("shr", (args[1], shift)), ir.Const(0xFF)))
    if op == "SIGNEXTEND":
        return args[1]
    if op == "EXP" and args[0] == ir.Const(2):
        return ir.Arith("shl", (ir.Const(1), args[1]))
    # no faithful IR operator: keep the operands so dependencies survive
    return ir.Arith("xor", args)


def _var(kind: str, slot: int) -> ir.StateVarId:
    if kind == "unknown":
        return ir.UNKNOWN_VAR
    return ir.StateVarId(slot, kind)


def _contains(v, pred) -> bool:
    if pred(v):
        return True
    return isinstance(v, Sym) and any(_contains(a, pred) for a in v.args)


class _Events(Observer):
    def __init__(self):
        self.events = []

    def on_instruction(self, instr, args, result, state):
        name = instr.mnemonic
        if name in ("SLOAD", "SSTORE") or name in CALL_FAMILY or name == "CALLDATALOAD":
            self.events.append((instr, args, result))


def _must_revert(g, fsucc) -> set[int]:
    out: set[int] = set()
    changed = True
    while changed:
        changed = False
        for n in g.nodes:
            if n in out:
                continue
            succ = fsucc.get(n, [])
            if g.block(n).terminator in ("REVERT", "INVALID") or (
                succ and n not in g.unresolved and all(s in out for s in succ)
            ):
                out.add(n)
                changed = True
    return out


def _post_dominators(nodes, fsucc) -> dict:
    exit_node = -1
    rev: dict = {exit_node: []}
    for n in nodes:
        rev.setdefault(n, [])
    for n in nodes:
        succ = fsucc.get(n, [])
        if not succ:
            rev[exit_node].append(n)
        for s in succ:
            rev[s].append(n)
    return dominators(rev, exit_node)


def _trivially_true(e: ir.Expr) -> bool:
    if isinstance(e, ir.Const):
        return e.value != 0
    return isinstance(e, ir.Cmp) and e.op == "==" and e.args[0] == e.args[1]


def _is_stipend_gas(gas) -> bool:
    if isinstance(gas, Const):
        return gas.value <= _TRANSFER_STIPEND
    return _contains(gas, lambda v: v == Const(_TRANSFER_STIPEND))


class Lifter:
    """Builds one FunctionDef per recovered entry.

    ``write_sites`` maps (function name, statement path) to the SSTORE offset a
    Write came from, so lifting conservatism can be checked against the code.
    """

    def __init__(self, cfg, entries, loops=None, accesses=None, *, context_depth: int = CONTEXT_DEPTH):
        self.cfg = cfg
        self.entries = entries
        self.loops = loops
        self.accesses = accesses or {}
        self.context_depth = context_depth
        self.write_sites: dict[tuple, int] = {}
        self.warnings: list[ir.LiftWarning] = []
        self.vars: dict = {}

    def lift(self) -> ir.ContractModel:
        functions = []
        covered: set[int] = set()
        for entry in self.entries:
            allowed = entry.blocks if entry.selector is None and entry.blocks else None
            g = unfold_function(self.cfg, entry.entry, allowed, depth=self.context_depth)
            if not g.complete:
                self.warnings.append(ir.LiftWarning(
                    "UnfoldCapped", entry.name, "context unfolding hit its node cap"))
            covered |= set(g.block_of)
            visibility = "public" if entry.selector is None else "external"
            functions.append(self._lift_function(entry.name, entry.selector, visibility, g))
        leftover = sorted(
            b for b in self.accesses
            if b not in covered and any(a.mode == "write" for a in self.accesses[b].storage)
        )
        if leftover:
            g = block_graph(self.cfg, set(leftover), leftover[0])
            functions.append(self._lift_function("unattributed", None, "internal", g))
            self.warnings.append(ir.LiftWarning(
                "UnattributedCode", "unattributed",
                f"{len(leftover)} storage-writing blocks outside every recovered function",
            ))
        state_vars = tuple(sorted(self.vars.values(), key=lambda v: (ir.VAR_KINDS.index(v.kind), v.slot)))
        warnings = tuple(dict.fromkeys(self.warnings))
        return ir.ContractModel(tuple(functions), state_vars, None, ir.LIFTED, warnings)

    # ------------------------------------------------------------ per function

    def _lift_function(self, name, selector, visibility, g) -> ir.FunctionDef:
        for n in sorted(g.unresolved):
            self.warnings.append(ir.LiftWarning(
                "UnresolvedJump", name, f"dynamic jump at offset {g.block(n).last.offset}"))
        fsucc = g.succ_map()
        revert = _must_revert(g, fsucc)
        # reverting paths are not normal exits; ignoring them keeps writes after
        # a checked helper control dependent on the branch that led there
        live = [n for n in g.nodes if n not in revert]
        pdom = _post_dominators(live, {n: [s for s in fsucc[n] if s not in revert] for n in live})

        per_node: dict[int, list] = {}
        branch_conds: dict[int, tuple] = {}
        asserts: dict[int, ir.Expr] = {}
        max_param = -1
        conds = []
        for n in g.nodes:
            obs = _Events()
            res = execute(g.block(n), g.state(n), obs)
            per_node[n] = obs.events
            for _, _, result in obs.events:
                if isinstance(result, Param):
                    max_param = max(max_param, result.index)
            if g.block(n).terminator == "JUMPI":
                if res.cond is not None:
                    conds.append(res.cond)
                t = g.out(n, TAKEN)
                f = g.out(n, FALLTHROUGH)
                t_rev = t is not None and t in revert
                f_rev = f is not None and f in revert
                cond = to_expr(res.cond if res.cond is not None else UNKNOWN)
                if f_rev and not t_rev:
                    asserts[n] = cond
                elif t_rev and not f_rev:
                    asserts[n] = negate(cond)
                elif not (t_rev or f_rev):
                    branch_conds[n] = (cond, t, f)

        guards = self._guards(list(g.nodes), branch_conds, pdom)
        used_calls = {v.offset for c in conds for v in _iter_vals(c) if isinstance(v, CallRes)}

        node_stmts: dict[int, list] = {}
        write_offsets: dict[int, list] = {}
        for n in g.nodes:
            stmts = []
            offs = []
            for instr, args, result in per_node[n]:
                op = instr.mnemonic
                if op == "SLOAD":
                    stmts.append(ir.Read(self._register(name, *slot_of(args[0]))))
                    offs.append(None)
                elif op == "SSTORE":
                    var = self._register(name, *slot_of(args[0]))
                    stmts.append(ir.Write(var, to_expr(args[1]), guards.get(n)))
                    offs.append(instr.offset)
                elif op in CALL_FAMILY:
                    kind = "TRANSFER" if op == "CALL" and _is_stipend_gas(args[0]) else op
                    stmts.append(ir.ExternalCall(kind, to_expr(args[1]), instr.offset in used_calls))
                    offs.append(None)
            if n in asserts and not _trivially_true(asserts[n]):
                stmts.append(ir.Assert(asserts[n]))
                offs.append(None)
            if g.block(n).terminator in ("STOP", "RETURN"):
                stmts.append(ir.Return())
                offs.append(None)
            for st in stmts:
                for e in ir.statement_exprs(st):
                    for v in ir.state_reads(e):
                        self.vars.setdefault(v.key, v)
            node_stmts[n] = stmts
            write_offsets[n] = offs

        loops = self._function_loops(fsucc)
        order = _reverse_postorder(fsucc, 0, set(g.nodes))
        body = self._emit(order, loops, node_stmts, write_offsets, branch_conds, name, ())
        return ir.FunctionDef(name, selector, visibility, max_param + 1, tuple(body))

    def _register(self, fname: str, kind: str, slot: int) -> ir.StateVarId:
        var = _var(kind, slot)
        if kind == "unknown":
            self.warnings.append(ir.LiftWarning("UnresolvedSlot", fname, "storage slot not constant"))
        return self.vars.setdefault(var.key, var)

    def _guards(self, nodes, branch_conds, pdom) -> dict:
        deps: dict[int, list] = {}
        for b, (cond, t, f) in sorted(branch_conds.items()):
            for succ, polarity in ((t, cond), (f, negate(cond))):
                if succ is None or succ not in pdom:
                    continue
                b_pdom = pdom.get(b, set())
                for w in nodes:
                    if w in pdom[succ] and (w not in b_pdom or w == b):
                        deps.setdefault(w, []).append(polarity)
        out = {}
        for w, conds in deps.items():
            out[w] = conds[0] if len(conds) == 1 else ir.BoolOp("or", tuple(conds))
        return out

    def _function_loops(self, fsucc) -> list:
        merged: dict[int, set] = {}
        for lp in natural_loops(fsucc, 0):
            merged.setdefault(lp.header, set()).update(lp.body)
        return sorted(((h, frozenset(body)) for h, body in merged.items()), key=lambda x: x[0])

    def _emit(self, blocks, loops, block_stmts, write_offsets, branch_conds, fname, prefix) -> list:
        out: list = []
        done: set[int] = set()
        # loops not nested in another loop of this level
        top = [
            (h, body) for h, body in loops
            if not any(body < other for _, other in loops if other != body)
        ]
        for b in blocks:
            if b in done:
                continue
            owner = next(((h, body) for h, body in top if b in body), None)
            if owner is None:
                for s, off in zip(block_stmts[b], write_offsets[b]):
                    if off is not None:
                        self.write_sites[(fname, prefix + (len(out),))] = off
                    out.append(s)
                done.add(b)
                continue
            header, body = owner
            inner = [(h, bd) for h, bd in loops if bd < body]
            path = prefix + (len(out),)
            stmts = self._emit([x for x in blocks if x in body], inner, block_stmts, write_offsets, branch_conds, fname, path)
            bound = None
            if header in branch_conds:
                cond, t, f = branch_conds[header]
                bound = cond if t in body else negate(cond)
            out.append(ir.Loop(tuple(stmts), bound))
            done |= body
        return out


def _reverse_postorder(fsucc, entry, blocks) -> list[int]:
    """Blocks in reverse postorder from ``entry``; unreached blocks follow in offset order."""
    seen: set[int] = set()
    post: list[int] = []
    stack = [(entry, iter(sorted(fsucc.get(entry, []), reverse=True)))] if entry in blocks else []
    if stack:
        seen.add(entry)
    while stack:
        node, it = stack[-1]
        nxt = next((s for s in it if s in blocks and s not in seen), None)
        if nxt is None:
            post.append(node)
            stack.pop()
        else:
            seen.add(nxt)
            stack.append((nxt, iter(sorted(fsucc.get(nxt, []), reverse=True))))
    order = post[::-1]
    return order + sorted(b for b in blocks if b not in seen)


def _iter_vals(v):
    yield v
    if isinstance(v, Sym):
        for a in v.args:
            yield from _iter_vals(a)


def lift_to_model(cfg, entries, loops=None, accesses=None) -> ir.ContractModel:
    return Lifter(cfg, entries, loops, accesses).lift()
