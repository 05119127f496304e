"""Bytecode to ContractModel pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

from .. import model as ir
from .cfg import Cfg, build_cfg
from .dataflow import Const, Observer, execute
from .disasm import disassemble, strip_metadata
from .functions import FunctionEntry, classify_accesses, recover_functions
from .lift import Lifter
from .loops import Loop, find_loops


class _DeployObserver(Observer):
    def __init__(self):
        self.copies = []   # (mem offset, code offset, size, instr offset)
        self.returns = []  # (mem offset, size, instr offset)

    def on_instruction(self, instr, args, result, state):
        if instr.mnemonic == "CODECOPY" and all(isinstance(a, Const) for a in args):
            self.copies.append((args[0].value, args[1].value, args[2].value, instr.offset))
        elif instr.mnemonic == "RETURN" and all(isinstance(a, Const) for a in args):
            self.returns.append((args[0].value, args[1].value, instr.offset))


def extract_runtime(code: bytes) -> bytes:
    """Runtime segment of creation code, or ``code`` unchanged if it is not creation code.

    Creation code copies a code region that lies past the copying instruction into
    memory and returns exactly that memory range.
    """
    instrs = disassemble(code, strip=False, strict=False)
    cfg = build_cfg(instrs)
    obs = _DeployObserver()
    for b in cfg.blocks:
        execute(b, cfg.state(b.id), obs)
    for mem, size, ret_at in obs.returns:
        for dst, src, n, copy_at in obs.copies:
            if dst == mem and n == size and src > max(ret_at, copy_at) and src + n <= len(code) and n:
                return code[src:src + n]
    return code


@dataclass
class FrontendResult:
    code: bytes
    instructions: list
    cfg: Cfg
    entries: list[FunctionEntry]
    loops: list[Loop]
    accesses: dict
    model: ir.ContractModel
    write_sites: dict = field(default_factory=dict)


def analyze_bytecode(code: bytes, *, runtime_only: bool = False) -> FrontendResult:
    """Disassemble, recover structure and lift ``code`` into a ContractModel."""
    if not runtime_only:
        code = extract_runtime(code)
    instrs = disassemble(strip_metadata(code), strip=False, strict=False)
    cfg = build_cfg(instrs)
    entries = recover_functions(cfg)
    loops = find_loops(cfg)
    accesses = classify_accesses(cfg)
    lifter = Lifter(cfg, entries, loops, accesses)
    m = lifter.lift()
    return FrontendResult(code, instrs, cfg, entries, loops, accesses, m, lifter.write_sites)
