"""Abstract stack/memory interpretation of EVM basic blocks.

Values are constants, a handful of recognised symbols (environment reads,
calldata parameters, storage loads, mapping hashes, call results) or
symbolic operator applications over those. Anything else is UNKNOWN.
The stack keeps at most ``STACK_DEPTH`` known entries from the top; deeper
entries are implicitly unknown. Memory is tracked only at constant offsets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .opcodes import CALL_FAMILY, info

WORD = 1 << 256
MASK = WORD - 1
STACK_DEPTH = 32
MAX_SYM_DEPTH = 12


class Val:
    __slots__ = ()
    depth = 1


@dataclass(frozen=True)
class Const(Val):
    value: int


class _Unknown(Val):
    __slots__ = ()

    def __repr__(self) -> str:
        return "UNKNOWN"


UNKNOWN = _Unknown()


@dataclass(frozen=True)
class Env(Val):
    name: str


@dataclass(frozen=True)
class Param(Val):
    index: int


@dataclass(frozen=True)
class Selector(Val):
    pass


@dataclass(frozen=True)
class Hash(Val):
    """keccak-derived storage location rooted at ``base``."""
    base: int


@dataclass(frozen=True)
class SLoad(Val):
    kind: str  # scalar | mapping-base | unknown
    slot: int


@dataclass(frozen=True)
class CallRes(Val):
    offset: int


@dataclass(frozen=True)
class Sym(Val):
    op: str
    args: tuple

    @property
    def depth(self) -> int:  # type: ignore[override]
        return 1 + max(a.depth for a in self.args)


@dataclass(frozen=True)
class State:
    stack: tuple = ()
    memory: tuple = ()  # sorted (offset, Val) pairs

    def mem(self) -> dict:
        return dict(self.memory)


TOP = State()


def meet_val(a: Val, b: Val) -> Val:
    return a if a == b else UNKNOWN


def meet(a: State | None, b: State) -> State:
    if a is None:
        return b
    n = min(len(a.stack), len(b.stack))
    stack = tuple(meet_val(x, y) for x, y in zip(a.stack[len(a.stack) - n:], b.stack[len(b.stack) - n:]))
    bm = b.mem()
    memory = tuple((k, v) for k, v in a.memory if bm.get(k) == v)
    return State(stack, memory)


def slot_of(v: Val) -> tuple[str, int]:
    if isinstance(v, Const):
        return ("scalar", v.value)
    if isinstance(v, Hash):
        return ("mapping-base", v.base)
    return ("unknown", 0)


def _signed(x: int) -> int:
    return x - WORD if x >> 255 else x


_FOLD: dict[str, Callable] = {
    "ADD": lambda a, b: (a + b) & MASK,
    "MUL": lambda a, b: (a * b) & MASK,
    "SUB": lambda a, b: (a - b) & MASK,
    "DIV": lambda a, b: a // b if b else 0,
    "SDIV": lambda a, b: (abs(_signed(a)) // abs(_signed(b)) * (-1 if _signed(a) * _signed(b) < 0 else 1)) & MASK
    if b else 0,
    "MOD": lambda a, b: a % b if b else 0,
    "SMOD": lambda a, b: (abs(_signed(a)) % abs(_signed(b)) * (-1 if _signed(a) < 0 else 1)) & MASK if b else 0,
    "EXP": lambda a, b: pow(a, b, WORD),
    "LT": lambda a, b: int(a < b),
    "GT": lambda a, b: int(a > b),
    "SLT": lambda a, b: int(_signed(a) < _signed(b)),
    "SGT": lambda a, b: int(_signed(a) > _signed(b)),
    "EQ": lambda a, b: int(a == b),
    "AND": lambda a, b: a & b,
    "OR": lambda a, b: a | b,
    "XOR": lambda a, b: a ^ b,
    "BYTE": lambda i, x: (x >> (8 * (31 - i))) & 0xFF if i < 32 else 0,
    "SHL": lambda s, x: (x << s) & MASK if s < 256 else 0,
    "SHR": lambda s, x: x >> s if s < 256 else 0,
    "SAR": lambda s, x: (_signed(x) >> min(s, 255)) & MASK,
    "ISZERO": lambda a: int(a == 0),
    "NOT": lambda a: a ^ MASK,
    "ADDMOD": lambda a, b, n: (a + b) % n if n else 0,
    "MULMOD": lambda a, b, n: (a * b) % n if n else 0,
    "SIGNEXTEND": lambda b, x: x if b >= 31 else (
        (x | (MASK ^ ((1 << (8 * b + 8)) - 1))) if (x >> (8 * b + 7)) & 1 else x & ((1 << (8 * b + 8)) - 1)
    ),
}

_ENV_OPS = {
    "CALLER": "CALLER", "ORIGIN": "ORIGIN", "CALLVALUE": "CALLVALUE", "TIMESTAMP": "TIMESTAMP",
    "NUMBER": "NUMBER", "PREVRANDAO": "PREVRANDAO", "COINBASE": "COINBASE", "GASLIMIT": "GASLIMIT",
    "ADDRESS": "ADDRESS", "SELFBALANCE": "BALANCE", "CALLDATASIZE": "CALLDATA",
}
_ENV_UNARY = {"BALANCE": "BALANCE", "BLOCKHASH": "BLOCKHASH"}


def _low_mask_bits(v: int) -> int:
    """k if v == 2**k - 1, else 0."""
    return v.bit_length() if v and v & (v + 1) == 0 else 0


def _sym(op: str, args: tuple) -> Val:
    if any(a is UNKNOWN for a in args) and op not in ("EQ", "ISZERO", "LT", "GT", "SLT", "SGT", "AND", "OR"):
        return UNKNOWN
    v = Sym(op, args)
    return v if v.depth <= MAX_SYM_DEPTH else UNKNOWN


def evaluate(op: str, args: tuple) -> Val:
    """Result of a pure stack operator; ``args[0]`` is the stack top."""
    if all(isinstance(a, Const) for a in args):
        return Const(_FOLD[op](*(a.value for a in args)))
    if op in ("SHR", "DIV") and isinstance(args[1] if op == "SHR" else args[0], Selector):
        return args[1] if op == "SHR" else args[0]
    if op == "AND":
        a, b = args
        if isinstance(a, Const):
            a, b = b, a
        if isinstance(b, Const) and not isinstance(a, Const):
            k = _low_mask_bits(b.value)
            if isinstance(a, Selector) and k >= 32:
                return a
            if k >= 8 and a is not UNKNOWN:
                # cleanup masks (address, bool, uintN) keep the underlying value
                return a
        return _sym(op, args)
    if op == "ADD":
        for a in args:
            if isinstance(a, Hash):
                return a
    return _sym(op, args)


class Observer:
    """Receives every abstractly executed instruction."""

    def on_instruction(self, instr, args: tuple, result: Val | None, state: State) -> None:
        pass


@dataclass
class BlockResult:
    out: State
    target: Val | None = None  # JUMP / JUMPI destination
    cond: Val | None = None    # JUMPI condition


def _pop(stack: list) -> Val:
    return stack.pop() if stack else UNKNOWN


def _clear_range(mem: dict, off: Val, size: Val | None) -> None:
    if isinstance(off, Const) and (size is None or isinstance(size, Const)):
        lo = off.value
        hi = lo + (32 if size is None else size.value)
        for k in [k for k in mem if k < hi and k + 32 > lo]:
            del mem[k]
    else:
        mem.clear()


def execute(block, state: State, observer: Observer | None = None) -> BlockResult:
    stack = list(state.stack)
    mem = state.mem()
    result = BlockResult(out=state)
    for ins in block.instructions:
        name = ins.mnemonic
        meta = info(ins.opcode)
        before = State(tuple(stack), tuple(sorted(mem.items())))
        if ins.is_push:
            res: Val | None = Const(ins.value)
            stack.append(res)
            args: tuple = ()
        elif name.startswith("DUP"):
            n = int(name[3:])
            res = stack[-n] if len(stack) >= n else UNKNOWN
            stack.append(res)
            args = ()
        elif name.startswith("SWAP"):
            n = int(name[4:])
            if len(stack) < n + 1:
                stack[:0] = [UNKNOWN] * (n + 1 - len(stack))
            stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
            res = None
            args = ()
        else:
            args = tuple(_pop(stack) for _ in range(meta.pops))
            res = None
            if name in _FOLD:
                res = evaluate(name, args)
            elif name in _ENV_OPS:
                res = Env(_ENV_OPS[name])
            elif name in _ENV_UNARY:
                res = Env(_ENV_UNARY[name])
            elif name == "CALLDATALOAD":
                off = args[0]
                if isinstance(off, Const) and off.value == 0:
                    res = Selector()
                elif isinstance(off, Const) and off.value >= 4 and (off.value - 4) % 32 == 0:
                    res = Param((off.value - 4) // 32)
                else:
                    res = Env("CALLDATA")
            elif name == "SHA3":
                off, size = args
                res = UNKNOWN
                if isinstance(off, Const) and isinstance(size, Const) and size.value in (32, 64):
                    word = mem.get(off.value + size.value - 32, UNKNOWN)
                    if isinstance(word, Const):
                        res = Hash(word.value)
                    elif isinstance(word, Hash):
                        res = word
            elif name == "SLOAD":
                res = SLoad(*slot_of(args[0]))
            elif name == "MLOAD":
                off = args[0]
                res = mem.get(off.value, UNKNOWN) if isinstance(off, Const) else UNKNOWN
            elif name == "MSTORE":
                off, val = args
                _clear_range(mem, off, None)
                if isinstance(off, Const):
                    mem[off.value] = val
            elif name == "MSTORE8":
                _clear_range(mem, args[0], Const(1))
            elif name in ("CALLDATACOPY", "CODECOPY", "RETURNDATACOPY", "MCOPY"):
                _clear_range(mem, args[0], args[2])
            elif name == "EXTCODECOPY":
                _clear_range(mem, args[1], args[3])
            elif name in CALL_FAMILY:
                mem.clear()
                res = CallRes(ins.offset)
            elif name == "PC":
                res = Const(ins.offset)
            elif name == "JUMP":
                result.target = args[0]
            elif name == "JUMPI":
                result.target, result.cond = args[0], args[1]
            elif meta.pushes:
                res = UNKNOWN
            if res is not None:
                stack.append(res)
        if observer is not None:
            observer.on_instruction(ins, args, res, before)
        if len(stack) > STACK_DEPTH:
            del stack[:len(stack) - STACK_DEPTH]
    result.out = State(tuple(stack), tuple(sorted(mem.items())))
    return result
