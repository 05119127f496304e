"""Read/write and assertion-related state dependencies over a ContractModel."""

from __future__ import annotations

from dataclasses import dataclass

from . import model as ir

READ = "read"
WRITE = "write"


@dataclass(frozen=True)
class RwEdge:
    accessor: str
    var: ir.StateVarId
    mode: str  # read | write
    site: tuple

    def to_json(self) -> dict:
        return {"function": self.accessor, "var": self.var.label, "mode": self.mode, "site": list(self.site)}


@dataclass(frozen=True)
class AsdEdge:
    """``reader`` asserts on ``var`` that ``writer`` writes."""

    reader: str
    writer: str
    var: ir.StateVarId
    assert_site: tuple

    def to_json(self) -> dict:
        return {
            "reader": self.reader, "writer": self.writer, "var": self.var.label,
            "site": list(self.assert_site),
        }


def extract_rw(m: ir.ContractModel) -> list[RwEdge]:
    """One edge per (function, statement, var, mode), in function then pre-order statement order.

    Expression leaves count as reads wherever they occur: write values and
    guards, assert conditions, call targets and arguments, loop bounds.
    """
    out = []
    for f in m.functions:
        for path, stmt in ir.walk(f.body):
            if isinstance(stmt, ir.Read):
                out.append(RwEdge(f.name, stmt.var, READ, path))
            reads: dict = {}
            for e in ir.statement_exprs(stmt):
                for v in ir.state_reads(e):
                    reads.setdefault(v.key, v)
            if isinstance(stmt, ir.Read):
                reads.pop(stmt.var.key, None)
            for v in reads.values():
                out.append(RwEdge(f.name, v, READ, path))
            if isinstance(stmt, ir.Write):
                out.append(RwEdge(f.name, stmt.var, WRITE, path))
    return out


def assert_reads(f: ir.FunctionDef) -> dict:
    """var key -> (var, first assert path) for every state var read in an Assert condition of ``f``."""
    found: dict = {}
    for path, stmt in ir.walk(f.body):
        if isinstance(stmt, ir.Assert):
            for v in ir.state_reads(stmt.cond):
                found.setdefault(v.key, (v, path))
    return found


def writes(f: ir.FunctionDef) -> set:
    return {stmt.var.key for _, stmt in ir.walk(f.body) if isinstance(stmt, ir.Write)}


def extract_asd(m: ir.ContractModel) -> list[AsdEdge]:
    """Edges (reader, writer, var): reader asserts on var, writer writes var.

    Self edges are kept. Order: reader function order, then state-var order,
    then writer function order.
    """
    written = {f.name: writes(f) for f in m.functions}
    var_order = {v.key: i for i, v in enumerate(m.state_vars)}
    out = []
    for reader in m.functions:
        reads = assert_reads(reader)
        for key in sorted(reads, key=lambda k: var_order.get(k, len(var_order))):
            var, site = reads[key]
            var = m.var(key) if key in var_order else var
            for writer in m.functions:
                if key in written[writer.name]:
                    out.append(AsdEdge(reader.name, writer.name, var, site))
    return out
