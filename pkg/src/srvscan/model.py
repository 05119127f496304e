"""Canonical contract IR shared by the bytecode frontend, the loaders and the detector.

Everything here is immutable. Statement locations are *paths*: tuples of
indices into nested bodies (a Loop's body adds one level).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterator, Union

import jsonschema

U256_MAX = (1 << 256) - 1
MAX_EXPR_DEPTH = 64

SCALAR = "scalar"
MAPPING_BASE = "mapping-base"
UNKNOWN_KIND = "unknown"
VAR_KINDS = (SCALAR, MAPPING_BASE, UNKNOWN_KIND)

ENV_ATOMS = frozenset({
    "CALLER", "ORIGIN", "CALLVALUE", "CALLDATA", "TIMESTAMP", "NUMBER", "PREVRANDAO",
    "DIFFICULTY", "BLOCKHASH", "COINBASE", "GASLIMIT", "BALANCE", "ADDRESS",
})
RANDOMNESS_ATOMS = frozenset({
    "TIMESTAMP", "PREVRANDAO", "DIFFICULTY", "BLOCKHASH", "NUMBER", "COINBASE", "GASLIMIT",
})

CMP_OPS = ("==", "!=", "<", ">", "<=", ">=")
BOOL_OPS = ("and", "or", "not")
ARITH_OPS = ("add", "sub", "mul", "div", "shr", "shl", "and-bits", "xor", "mod")
CALL_KINDS = ("CALL", "CALLCODE", "STATICCALL", "DELEGATECALL", "TRANSFER")
VISIBILITIES = ("public", "external", "internal", "private")

LIFTED = "lifted-from-bytecode"
LOADED = "loaded-from-json"

FALLBACK_NAME = "fallback"


class ModelError(Exception):
    pass


class MalformedJson(ModelError):
    pass


class SchemaViolation(ModelError):
    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
        self.detail = message


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class StateVarId:
    slot: int
    kind: str = SCALAR
    name: str | None = None

    @property
    def key(self) -> tuple[int, str]:
        return (self.slot, self.kind)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == UNKNOWN_KIND:
            return "slot:unknown"
        return f"slot:{hex(self.slot)}" if self.kind == SCALAR else f"map:{hex(self.slot)}"


UNKNOWN_VAR = StateVarId(0, UNKNOWN_KIND)


@dataclass(frozen=True)
class StateRead:
    var: StateVarId


@dataclass(frozen=True)
class EnvRead:
    name: str


@dataclass(frozen=True)
class ParamRef:
    index: int


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class CallResult:
    """Result of an external call (success flag or returned word)."""


@dataclass(frozen=True)
class Opaque:
    """A value the frontend could not reconstruct."""


@dataclass(frozen=True)
class Cmp:
    op: str
    args: tuple


@dataclass(frozen=True)
class BoolOp:
    op: str
    args: tuple


@dataclass(frozen=True)
class Arith:
    op: str
    args: tuple


Expr = Union[StateRead, EnvRead, ParamRef, Const, CallResult, Opaque, Cmp, BoolOp, Arith]
LEAF_TYPES = (StateRead, EnvRead, ParamRef, Const, CallResult, Opaque)


@dataclass(frozen=True)
class Read:
    var: StateVarId


@dataclass(frozen=True)
class Write:
    var: StateVarId
    value: Expr
    # branch condition under which the write executes, when known
    guard: Expr | None = None


@dataclass(frozen=True)
class Assert:
    cond: Expr


@dataclass(frozen=True)
class ExternalCall:
    kind: str
    target: Expr
    result_used: bool = False


@dataclass(frozen=True)
class InternalCall:
    callee: str
    args: tuple = ()


@dataclass(frozen=True)
class Loop:
    body: tuple
    bound: Expr | None = None


@dataclass(frozen=True)
class Return:
    pass


Statement = Union[Read, Write, Assert, ExternalCall, InternalCall, Loop, Return]


@dataclass(frozen=True)
class FunctionDef:
    name: str
    selector: int | None
    visibility: str
    param_count: int
    body: tuple

    @property
    def is_entry(self) -> bool:
        return self.visibility in ("public", "external")


@dataclass(frozen=True)
class LiftWarning:
    code: str
    function: str
    detail: str

    def to_json(self) -> dict:
        return {"code": self.code, "function": self.function, "detail": self.detail}


@dataclass(frozen=True)
class ContractModel:
    functions: tuple = ()
    state_vars: tuple = ()
    address: int | None = None
    provenance: str = field(default=LOADED, compare=False)
    warnings: tuple = field(default=(), compare=False)

    def function(self, name: str) -> FunctionDef:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def has_function(self, name: str) -> bool:
        return any(f.name == name for f in self.functions)

    def var(self, key: tuple[int, str]) -> StateVarId:
        for v in self.state_vars:
            if v.key == key:
                return v
        raise KeyError(key)

    def var_by_label(self, label: str) -> StateVarId:
        for v in self.state_vars:
            if v.label == label:
                return v
        raise KeyError(label)

    @property
    def low_confidence_functions(self) -> frozenset:
        return frozenset(w.function for w in self.warnings if w.code == "UnresolvedJump")


# ---------------------------------------------------------------- traversal


def walk(body, prefix: tuple = ()) -> Iterator[tuple[tuple, Statement]]:
    """Pre-order walk over a statement list, yielding (path, statement)."""
    for i, stmt in enumerate(body):
        path = prefix + (i,)
        yield path, stmt
        if isinstance(stmt, Loop):
            yield from walk(stmt.body, path)


def statement_at(body, path) -> Statement:
    stmt = None
    for i in path:
        stmt = body[i]
        body = stmt.body if isinstance(stmt, Loop) else ()
    return stmt


def sub_exprs(expr: Expr) -> Iterator[Expr]:
    stack = [expr]
    while stack:
        e = stack.pop()
        yield e
        if isinstance(e, (Cmp, BoolOp, Arith)):
            stack.extend(reversed(e.args))


def expr_depth(expr: Expr) -> int:
    if isinstance(expr, (Cmp, BoolOp, Arith)):
        return 1 + max((expr_depth(a) for a in expr.args), default=0)
    return 1


def state_reads(expr: Expr | None) -> list[StateVarId]:
    """State variables read anywhere in ``expr``, first-occurrence order, no duplicates."""
    if expr is None:
        return []
    seen: dict = {}
    for e in sub_exprs(expr):
        if isinstance(e, StateRead):
            seen.setdefault(e.var.key, e.var)
    return list(seen.values())


def env_atoms(expr: Expr | None) -> list[str]:
    if expr is None:
        return []
    return sorted({e.name for e in sub_exprs(expr) if isinstance(e, EnvRead)})


def contains_call_result(expr: Expr | None) -> bool:
    return expr is not None and any(isinstance(e, CallResult) for e in sub_exprs(expr))


def statement_exprs(stmt: Statement) -> list[Expr]:
    if isinstance(stmt, Write):
        return [stmt.value] + ([stmt.guard] if stmt.guard is not None else [])
    if isinstance(stmt, Assert):
        return [stmt.cond]
    if isinstance(stmt, ExternalCall):
        return [stmt.target]
    if isinstance(stmt, InternalCall):
        return list(stmt.args)
    if isinstance(stmt, Loop):
        return [stmt.bound] if stmt.bound is not None else []
    return []


def statement_vars(stmt: Statement) -> list[StateVarId]:
    out = []
    if isinstance(stmt, (Read, Write)):
        out.append(stmt.var)
    for e in statement_exprs(stmt):
        out.extend(state_reads(e))
    return out


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    code: str
    location: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.code} at {self.location or '/'}: {self.detail}"


def _arity_ok(e: Expr) -> bool:
    if isinstance(e, BoolOp) and e.op == "not":
        return len(e.args) == 1
    if isinstance(e, Cmp):
        return len(e.args) == 2
    return len(e.args) >= 1


def _check_expr(e: Expr, where: str, known: set, param_count: int, out: list) -> None:
    if expr_depth(e) > MAX_EXPR_DEPTH:
        out.append(Violation("ExprTooDeep", where, f"depth exceeds {MAX_EXPR_DEPTH}"))
        return
    for sub in sub_exprs(e):
        if isinstance(sub, StateRead) and sub.var.key not in known:
            out.append(Violation("UnknownStateVar", where, hex(sub.var.slot)))
        elif isinstance(sub, EnvRead) and sub.name not in ENV_ATOMS:
            out.append(Violation("UnknownEnvAtom", where, sub.name))
        elif isinstance(sub, ParamRef) and sub.index >= param_count:
            out.append(Violation("BadParamIndex", where, str(sub.index)))
        elif isinstance(sub, Const) and not 0 <= sub.value <= U256_MAX:
            out.append(Violation("ValueOutOfRange", where, str(sub.value)))
        elif isinstance(sub, Cmp) and sub.op not in CMP_OPS or \
                isinstance(sub, BoolOp) and sub.op not in BOOL_OPS or \
                isinstance(sub, Arith) and sub.op not in ARITH_OPS:
            out.append(Violation("UnknownOperator", where, sub.op))
        elif isinstance(sub, (Cmp, BoolOp, Arith)) and not _arity_ok(sub):
            out.append(Violation("BadArity", where, f"{sub.op}/{len(sub.args)}"))


def validate_model(m: ContractModel) -> list[Violation]:
    out: list[Violation] = []
    known = set()
    names = set()
    for i, v in enumerate(m.state_vars):
        where = f"/state_vars/{i}"
        if v.kind not in VAR_KINDS:
            out.append(Violation("UnknownVarKind", where, str(v.kind)))
        if not 0 <= v.slot <= U256_MAX:
            out.append(Violation("ValueOutOfRange", where, str(v.slot)))
        if v.key in known:
            out.append(Violation("DuplicateStateVar", where, f"{v.kind} {hex(v.slot)}"))
        known.add(v.key)
        if v.name is not None:
            if v.name in names:
                out.append(Violation("DuplicateVarName", where, v.name))
            names.add(v.name)
    if m.address is not None and not 0 <= m.address < (1 << 160):
        out.append(Violation("ValueOutOfRange", "/address", str(m.address)))

    fnames = {f.name for f in m.functions}
    seen_fn = set()
    selectors = {}
    for fi, f in enumerate(m.functions):
        base = f"/functions/{fi}"
        if f.name in seen_fn:
            out.append(Violation("DuplicateFunction", base, f.name))
        seen_fn.add(f.name)
        if f.visibility not in VISIBILITIES:
            out.append(Violation("UnknownVisibility", base, str(f.visibility)))
        if f.param_count < 0:
            out.append(Violation("ValueOutOfRange", base, "param_count"))
        if f.selector is not None:
            if not 0 <= f.selector < (1 << 32):
                out.append(Violation("ValueOutOfRange", base, "selector"))
            elif f.selector in selectors:
                out.append(Violation("DuplicateSelector", base, f"0x{f.selector:08x}"))
            selectors[f.selector] = f.name
        elif f.is_entry and f.name != FALLBACK_NAME:
            out.append(Violation("MissingSelector", base, f.name))
        for path, stmt in walk(f.body):
            where = base + "/body/" + "/body/".join(str(i) for i in path)
            if isinstance(stmt, (Read, Write)) and stmt.var.key not in known:
                out.append(Violation("UnknownStateVar", where, hex(stmt.var.slot)))
            if isinstance(stmt, InternalCall) and stmt.callee not in fnames:
                out.append(Violation("UnknownCallee", where, stmt.callee))
            if isinstance(stmt, ExternalCall) and stmt.kind not in CALL_KINDS:
                out.append(Violation("UnknownCallKind", where, stmt.kind))
            for e in statement_exprs(stmt):
                _check_expr(e, where, known, f.param_count, out)
    return out


# ---------------------------------------------------------------- JSON codec


def _hex(v: int) -> str:
    return hex(v)


def _var_ref(v: StateVarId) -> dict:
    return {"slot": _hex(v.slot), "kind": v.kind}


def expr_to_json(e: Expr) -> dict:
    if isinstance(e, StateRead):
        return {"atom": "state", **_var_ref(e.var)}
    if isinstance(e, EnvRead):
        return {"atom": "env", "name": e.name}
    if isinstance(e, ParamRef):
        return {"atom": "param", "index": e.index}
    if isinstance(e, Const):
        return {"atom": "const", "value": _hex(e.value)}
    if isinstance(e, CallResult):
        return {"atom": "extcall"}
    if isinstance(e, Opaque):
        return {"atom": "opaque"}
    if isinstance(e, Cmp):
        return {"cmp": e.op, "args": [expr_to_json(a) for a in e.args]}
    if isinstance(e, BoolOp):
        return {"bool": e.op, "args": [expr_to_json(a) for a in e.args]}
    if isinstance(e, Arith):
        return {"arith": e.op, "args": [expr_to_json(a) for a in e.args]}
    raise TypeError(f"not an expression: {e!r}")


def stmt_to_json(s: Statement) -> dict:
    if isinstance(s, Read):
        return {"op": "read", "var": _var_ref(s.var)}
    if isinstance(s, Write):
        d = {"op": "write", "var": _var_ref(s.var), "value": expr_to_json(s.value)}
        if s.guard is not None:
            d["guard"] = expr_to_json(s.guard)
        return d
    if isinstance(s, Assert):
        return {"op": "assert", "cond": expr_to_json(s.cond)}
    if isinstance(s, ExternalCall):
        return {"op": "extcall", "kind": s.kind, "target": expr_to_json(s.target),
                "result_used": s.result_used}
    if isinstance(s, InternalCall):
        return {"op": "icall", "callee": s.callee, "args": [expr_to_json(a) for a in s.args]}
    if isinstance(s, Loop):
        d = {"op": "loop", "body": [stmt_to_json(x) for x in s.body]}
        if s.bound is not None:
            d["bound"] = expr_to_json(s.bound)
        return d
    if isinstance(s, Return):
        return {"op": "return"}
    raise TypeError(f"not a statement: {s!r}")


def model_to_json(m: ContractModel) -> dict:
    d: dict = {}
    if m.address is not None:
        d["address"] = f"0x{m.address:040x}"
    d["functions"] = [
        {
            "name": f.name,
            "selector": None if f.selector is None else f"0x{f.selector:08x}",
            "visibility": f.visibility,
            "param_count": f.param_count,
            "body": [stmt_to_json(s) for s in f.body],
        }
        for f in m.functions
    ]
    d["state_vars"] = []
    for v in m.state_vars:
        entry = _var_ref(v)
        if v.name is not None:
            entry["name"] = v.name
        d["state_vars"].append(entry)
    return d


def canonical_dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_model(m: ContractModel) -> bytes:
    return canonical_dumps(model_to_json(m))


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("srvscan.schemas").joinpath(name).read_text(encoding="utf-8")
    return json.loads(text)


@lru_cache(maxsize=1)
def _model_validator():
    schema = load_schema("model.schema.json")
    return jsonschema.Draft202012Validator(schema)


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


class _Decoder:
    def __init__(self, vars_by_key: dict):
        self.vars = vars_by_key

    def var(self, d: dict) -> StateVarId:
        key = (int(d["slot"], 16), d["kind"])
        # unresolved refs survive decoding so validation can name them
        return self.vars.get(key) or StateVarId(*key)

    def expr(self, d: dict) -> Expr:
        if "atom" in d:
            a = d["atom"]
            if a == "state":
                return StateRead(self.var(d))
            if a == "env":
                return EnvRead(d["name"])
            if a == "param":
                return ParamRef(d["index"])
            if a == "const":
                return Const(int(d["value"], 16))
            if a == "extcall":
                return CallResult()
            return Opaque()
        for key, cls in (("cmp", Cmp), ("bool", BoolOp), ("arith", Arith)):
            if key in d:
                return cls(d[key], tuple(self.expr(x) for x in d["args"]))
        raise SchemaViolation("unrecognized expression")

    def stmt(self, d: dict) -> Statement:
        op = d["op"]
        if op == "read":
            return Read(self.var(d["var"]))
        if op == "write":
            guard = self.expr(d["guard"]) if "guard" in d else None
            return Write(self.var(d["var"]), self.expr(d["value"]), guard)
        if op == "assert":
            return Assert(self.expr(d["cond"]))
        if op == "extcall":
            return ExternalCall(d["kind"], self.expr(d["target"]), d["result_used"])
        if op == "icall":
            return InternalCall(d["callee"], tuple(self.expr(x) for x in d["args"]))
        if op == "loop":
            bound = self.expr(d["bound"]) if "bound" in d else None
            return Loop(tuple(self.stmt(x) for x in d["body"]), bound)
        return Return()


def model_from_json(doc) -> ContractModel:
    """Build a model from an already-parsed JSON document, checking schema and invariants."""
    errors = sorted(_model_validator().iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise SchemaViolation(err.message, _pointer(err.absolute_path))
    state_vars = tuple(
        StateVarId(int(v["slot"], 16), v["kind"], v.get("name")) for v in doc["state_vars"]
    )
    dec = _Decoder({v.key: v for v in state_vars})
    functions = tuple(
        FunctionDef(
            name=f["name"],
            selector=None if f["selector"] is None else int(f["selector"], 16),
            visibility=f["visibility"],
            param_count=f["param_count"],
            body=tuple(dec.stmt(s) for s in f["body"]),
        )
        for f in doc["functions"]
    )
    address = int(doc["address"], 16) if "address" in doc else None
    m = ContractModel(functions, state_vars, address, provenance=LOADED)
    violations = validate_model(m)
    if violations:
        v = violations[0]
        raise SchemaViolation(f"{v.code}: {v.detail}", v.location)
    return m


def load_model(data: bytes | str) -> ContractModel:
    try:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        doc = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedJson(str(exc)) from exc
    return model_from_json(doc)
