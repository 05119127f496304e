"""SRV indicators, entry traces and forward taint over the state-dependency graph."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from . import model as ir
from . import sdg as G

R1 = "R1-profit-gain"
R2 = "R2-DoS"
RULE_SHORT = {R1: "R1", R2: "R2"}

ORIGIN_VS_CALLER = "origin-vs-caller"
CALLER_VS_CONSTANT = "caller-vs-constant"
CALLER_VS_STORAGE = "caller-vs-storage"

# labels over which uncertainty spreads between state variables
UNCERTAINTY_LABELS = frozenset({G.RW_READ, G.RW_WRITE, G.ASD, G.TSD})


class DetectorError(Exception):
    pass


class UnknownVar(DetectorError, KeyError):
    pass


class UnknownFunction(DetectorError, KeyError):
    pass


@dataclass(frozen=True)
class TaintSpec:
    """Attacker-controlled inputs and security-relevant targets."""

    sources: frozenset = frozenset({"CALLDATA", "CALLER", "ORIGIN", "CALLVALUE"})
    source_visibilities: frozenset = frozenset({"public", "external"})
    sink_calls: frozenset = frozenset({"CALL", "CALLCODE", "STATICCALL", "DELEGATECALL"})
    sink_atoms: frozenset = frozenset({"BALANCE", "ADDRESS"})

    def is_entry(self, f: ir.FunctionDef) -> bool:
        """Public and external functions take attacker calldata and caller identity."""
        return f.visibility in self.source_visibilities


DEFAULT_TAINT = TaintSpec()


@dataclass(frozen=True)
class AccessEvidence:
    present: bool
    site: tuple | None = None
    shape: str | None = None

    def to_json(self) -> dict | None:
        if not self.present:
            return None
        return {"site": list(self.site), "shape": self.shape}


@dataclass(frozen=True)
class Indicator:
    rule: str
    function: str
    site: tuple
    var: ir.StateVarId | None = None
    witness: dict = field(default_factory=dict, compare=False)
    access_control: AccessEvidence = AccessEvidence(False)

    def to_json(self) -> dict:
        d = {"rule": RULE_SHORT[self.rule], "function": self.function, "site": list(self.site),
             "witness": self.witness}
        if self.var is not None:
            d["var"] = self.var.label
        return d


@dataclass(frozen=True)
class VulnerabilityTrace:
    functions: tuple
    state_vars: tuple

    def to_json(self) -> dict:
        return {"functions": list(self.functions), "state_vars": list(self.state_vars)}

    def arrow(self) -> str:
        return " → ".join(self.functions + ("{" + ",".join(self.state_vars) + "}",))


@dataclass(frozen=True)
class Finding:
    rule: str
    function: str
    indicators: tuple
    entry_trace: tuple
    tainted_vars: tuple          # StateVarId, sorted by label
    paths: tuple                 # one node-id path per tainted var
    traces: tuple
    confidence: str

    @property
    def tainted_labels(self) -> tuple:
        return tuple(v.label for v in self.tainted_vars)

    def witness(self) -> dict:
        if self.rule == R1:
            return {"kind": "randomness", "sites": [i.witness for i in self.indicators]}
        return {"kind": "loop-external-call", "sites": [i.witness for i in self.indicators]}


@dataclass(frozen=True)
class DetectionResult:
    findings: tuple
    unreachable: tuple  # indicators without an entry trace


# ---------------------------------------------------------------- rendering


def render_expr(e: ir.Expr) -> str:
    if isinstance(e, ir.StateRead):
        return e.var.label
    if isinstance(e, ir.EnvRead):
        return e.name
    if isinstance(e, ir.ParamRef):
        return f"arg{e.index}"
    if isinstance(e, ir.Const):
        return hex(e.value)
    if isinstance(e, ir.CallResult):
        return "extcall"
    if isinstance(e, ir.Opaque):
        return "?"
    if isinstance(e, ir.Cmp):
        return f"{render_expr(e.args[0])} {e.op} {render_expr(e.args[1])}"
    if isinstance(e, ir.BoolOp) and e.op == "not":
        return f"!({render_expr(e.args[0])})"
    if isinstance(e, ir.BoolOp):
        return "(" + f" {'&&' if e.op == 'and' else '||'} ".join(render_expr(a) for a in e.args) + ")"
    return f"{e.op}(" + ", ".join(render_expr(a) for a in e.args) + ")"


# ---------------------------------------------------------------- predicates


def _dominating_asserts(f: ir.FunctionDef, site: tuple):
    """Asserts that always run before ``site``: earlier siblings at ``site``'s level or above."""
    for path, stmt in ir.walk(f.body):
        if isinstance(stmt, ir.Assert) and path < tuple(site) \
                and tuple(site)[:len(path) - 1] == path[:-1]:
            yield path, stmt


def _strip_mask(e: ir.Expr) -> ir.Expr:
    while isinstance(e, ir.Arith) and e.op == "and-bits" and len(e.args) == 2:
        a, b = e.args
        if isinstance(b, ir.Const):
            e = a
        elif isinstance(a, ir.Const):
            e = b
        else:
            break
    return e


def _identity(e: ir.Expr) -> str | None:
    e = _strip_mask(e)
    return e.name if isinstance(e, ir.EnvRead) and e.name in ("CALLER", "ORIGIN") else None


def access_shape(cond: ir.Expr) -> str | None:
    """Access-control shape of an assert condition, looking through conjunctions."""
    if isinstance(cond, ir.BoolOp) and cond.op == "and":
        for a in cond.args:
            shape = access_shape(a)
            if shape:
                return shape
        return None
    if not (isinstance(cond, ir.Cmp) and cond.op == "=="):
        return None
    a, b = cond.args
    ia, ib = _identity(a), _identity(b)
    if {ia, ib} == {"CALLER", "ORIGIN"}:
        return ORIGIN_VS_CALLER
    if ia is None and ib is None:
        return None
    other = _strip_mask(b if ia else a)
    if isinstance(other, ir.Const):
        return CALLER_VS_CONSTANT
    if isinstance(other, ir.StateRead):
        return CALLER_VS_STORAGE
    return None


def has_access_control(m: ir.ContractModel, function: str, site) -> AccessEvidence:
    """Whether an access-control assert runs before ``site`` in ``function``."""
    if not m.has_function(function):
        raise UnknownFunction(function)
    for path, stmt in _dominating_asserts(m.function(function), tuple(site)):
        shape = access_shape(stmt.cond)
        if shape:
            return AccessEvidence(True, path, shape)
    return AccessEvidence(False)


def randomness_witness(f: ir.FunctionDef, path: tuple, stmt: ir.Write) -> dict | None:
    """How a write depends on block-level entropy: its value, its guard, or a prior assert."""
    for source, e in (("value", stmt.value), ("guard", stmt.guard)):
        atoms = [a for a in ir.env_atoms(e) if a in ir.RANDOMNESS_ATOMS]
        if atoms:
            return {"atom": atoms[0], "var": stmt.var.label, "site": list(path),
                    "source": source, "condition": render_expr(e)}
    for apath, a in _dominating_asserts(f, path):
        atoms = [x for x in ir.env_atoms(a.cond) if x in ir.RANDOMNESS_ATOMS]
        if atoms:
            return {"atom": atoms[0], "var": stmt.var.label, "site": list(path),
                    "source": "assert", "assert_site": list(apath), "condition": render_expr(a.cond)}
    return None


def _random_writes(m: ir.ContractModel):
    for f in m.functions:
        for path, stmt in ir.walk(f.body):
            if isinstance(stmt, ir.Write):
                w = randomness_witness(f, path, stmt)
                if w is not None:
                    yield f, path, stmt, w


def is_uncertain(m: ir.ContractModel, g: G.Sdg, var: ir.StateVarId,
                 labels=UNCERTAINTY_LABELS) -> tuple[bool, dict | None]:
    """Whether ``var`` is written from entropy, or is linked to such a var.

    A link is a path over read/write, ASD and TSD edges in either direction.
    """
    try:
        m.var(var.key)
    except KeyError:
        raise UnknownVar(var.label) from None
    rooted: dict = {}
    for _, _, stmt, w in _random_writes(m):
        rooted.setdefault(stmt.var.key, w)
    if var.key in rooted:
        return True, rooted[var.key]
    vid = G.var_node_id(m.var(var.key))
    targets = {G.var_node_id(m.var(k)): w for k, w in rooted.items()}
    fwd = g.shortest_paths([vid], labels)
    for t in sorted(targets):
        if t in fwd:
            return True, dict(targets[t], via=g.node(t).var.label, path=fwd[t])
    for t in sorted(targets):
        back = g.shortest_paths([t], labels)
        if vid in back:
            return True, dict(targets[t], via=g.node(t).var.label, path=back[vid])
    return False, None


def _loop_trigger(loop: ir.Loop, path: tuple) -> tuple | None:
    for sub, stmt in ir.walk(loop.body, path):
        if isinstance(stmt, ir.ExternalCall):
            return sub, "external-call"
        if isinstance(stmt, ir.Assert) and ir.contains_call_result(stmt.cond):
            return sub, "call-result-assert"
    return None


def _modifies_state(m: ir.ContractModel, name: str) -> bool:
    """Whether ``name`` or anything it calls writes a state variable."""
    seen, stack = set(), [name]
    while stack:
        fn = stack.pop()
        if fn in seen:
            continue
        seen.add(fn)
        for _, stmt in ir.walk(m.function(fn).body):
            if isinstance(stmt, ir.Write):
                return True
            if isinstance(stmt, ir.InternalCall):
                stack.append(stmt.callee)
    return False


def find_indicators(m: ir.ContractModel) -> list[Indicator]:
    """R1: an entropy-dependent write with no access control before it.

    R2: a loop holding an external call (or an assert on a call result) in a
    function that modifies state, with no access control before the loop.
    """
    out = []
    for f, path, stmt, w in _random_writes(m):
        ac = has_access_control(m, f.name, path)
        if not ac.present:
            out.append(Indicator(R1, f.name, path, stmt.var, w, ac))
    for f in m.functions:
        if not _modifies_state(m, f.name):
            continue
        for path, stmt in ir.walk(f.body):
            if not isinstance(stmt, ir.Loop):
                continue
            trig = _loop_trigger(stmt, path)
            if trig is None:
                continue
            ac = has_access_control(m, f.name, path)
            if not ac.present:
                w = {"loop_site": list(path), "call_site": list(trig[0]), "trigger": trig[1]}
                out.append(Indicator(R2, f.name, path, None, w, ac))
    order = {f.name: i for i, f in enumerate(m.functions)}
    out.sort(key=lambda i: (i.rule, order[i.function], i.site, i.var.label if i.var else ""))
    return out


def _call_edges(m: ir.ContractModel) -> dict[str, list[str]]:
    """caller -> callees reachable without passing an access-control assert first."""
    edges: dict[str, set] = {f.name: set() for f in m.functions}
    for f in m.functions:
        for path, stmt in ir.walk(f.body):
            if isinstance(stmt, ir.InternalCall) and not has_access_control(m, f.name, path).present:
                edges[f.name].add(stmt.callee)
    return {k: sorted(v) for k, v in edges.items()}


def entry_trace(m: ir.ContractModel, function: str, spec: TaintSpec = DEFAULT_TAINT) -> tuple | None:
    """Shortest internal-call chain from an entry function to ``function``.

    Ties go to the lexicographically smallest chain. None when no entry
    function reaches it.
    """
    if not m.has_function(function):
        raise UnknownFunction(function)
    edges = _call_edges(m)
    best = None
    for root in sorted(f.name for f in m.functions if spec.is_entry(f)):
        parent = {root: None}
        work = deque([root])
        while work and function not in parent:
            n = work.popleft()
            for c in edges[n]:
                if c not in parent:
                    parent[c] = n
                    work.append(c)
        if function in parent:
            chain = [function]
            while parent[chain[-1]] is not None:
                chain.append(parent[chain[-1]])
            chain = tuple(reversed(chain))
            if best is None or (len(chain), chain) < (len(best), best):
                best = chain
    return best


def indicator_block(g: G.Sdg, ind: Indicator) -> str:
    return g.block_of(ind.function, ind.site)


def propagate_taint(g: G.Sdg, sources, labels=G.ALL) -> list[tuple[str, list[str]]]:
    """State-variable nodes in the forward closure of ``sources``, each with a shortest path."""
    paths = g.shortest_paths(sources, labels)
    return [(n, paths[n]) for n in sorted(paths) if isinstance(g.node(n), G.StateVarNode)]


def _function_chain(g: G.Sdg, path) -> tuple:
    chain = []
    for n in path:
        node = g.node(n)
        if isinstance(node, G.BlockNode) and (not chain or chain[-1] != node.function):
            chain.append(node.function)
    return tuple(chain)


def detect(m: ir.ContractModel, g: G.Sdg, *, use_tsd: bool = True,
           spec: TaintSpec = DEFAULT_TAINT) -> DetectionResult:
    """Indicators grouped per (rule, function), gated by an entry trace, with tainted state."""
    labels = G.ALL if use_tsd else G.ALL - {G.TSD}
    groups: dict[tuple, list] = {}
    for ind in find_indicators(m):
        groups.setdefault((ind.rule, ind.function), []).append(ind)
    low = m.low_confidence_functions
    findings, unreachable = [], []
    for (rule, fname), inds in sorted(groups.items()):
        chain = entry_trace(m, fname, spec)
        if chain is None:
            unreachable.extend(inds)
            continue
        tainted = propagate_taint(g, [indicator_block(g, i) for i in inds], labels)
        entries = sorted(((g.node(n).var, p) for n, p in tainted), key=lambda t: t[0].label)
        by_chain: dict[tuple, list] = {}
        touched = set(chain)
        for var, p in entries:
            fc = _function_chain(g, p)
            touched.update(fc)
            by_chain.setdefault(fc, []).append(var.label)
        traces = tuple(VulnerabilityTrace(c, tuple(vs))
                       for c, vs in sorted(by_chain.items(), key=lambda kv: (len(kv[0]), kv[0])))
        findings.append(Finding(
            rule, fname, tuple(inds), chain, tuple(v for v, _ in entries),
            tuple(tuple(p) for _, p in entries), traces,
            "low" if touched & low else "high",
        ))
    return DetectionResult(tuple(findings), tuple(unreachable))
