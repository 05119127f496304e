from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .opcodes import info, push_width

# CBOR keys solc writes into the metadata trailer
_METADATA_KEYS = (b"ipfs", b"bzzr0", b"bzzr1", b"solc", b"experimental")


class TruncatedPush(ValueError):
    def __init__(self, offset: int, width: int, available: int):
        super().__init__(
            f"PUSH{width} at offset {offset} needs {width} immediate bytes, {available} left"
        )
        self.offset = offset


@dataclass(frozen=True)
class Instruction:
    offset: int
    opcode: int
    mnemonic: str
    immediate: bytes = b""

    @property
    def size(self) -> int:
        return 1 + len(self.immediate)

    @property
    def value(self) -> int:
        return int.from_bytes(self.immediate, "big") if self.immediate else 0

    @property
    def is_push(self) -> bool:
        return 0x5F <= self.opcode <= 0x7F

    def encode(self) -> bytes:
        return bytes([self.opcode]) + self.immediate

    def __str__(self) -> str:
        if self.immediate:
            return f"{self.mnemonic} 0x{self.immediate.hex()}"
        return self.mnemonic


def parse_hex(text: str) -> bytes:
    cleaned = re.sub(r"\s+", "", text)
    if cleaned[:2].lower() == "0x":
        cleaned = cleaned[2:]
    return bytes.fromhex(cleaned)


def read_code(path: str | Path) -> bytes:
    """Bytecode from a hex text file (0x-prefixed or bare, any whitespace) or a raw binary."""
    raw = Path(path).read_bytes()
    try:
        return parse_hex(raw.decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        return raw


def metadata_length(code: bytes) -> int:
    """Length of a trailing solc CBOR metadata block including its 2-byte length suffix, or 0."""
    if len(code) < 3:
        return 0
    n = int.from_bytes(code[-2:], "big")
    if n == 0 or n + 2 > len(code):
        return 0
    seg = code[-2 - n:-2]
    if not 0xA1 <= seg[0] <= 0xB7:
        return 0
    if not any(key in seg for key in _METADATA_KEYS):
        return 0
    return n + 2


def strip_metadata(code: bytes) -> bytes:
    n = metadata_length(code)
    return code[:-n] if n else code


def disassemble(code: bytes, *, strip: bool = True, strict: bool = True) -> list[Instruction]:
    """Decode runtime bytecode into instructions.

    With ``strict=False`` a truncated trailing PUSH is zero-padded instead of raising
    (useful when the tail is data rather than code).
    """
    if strip:
        code = strip_metadata(code)
    out = []
    pc = 0
    n = len(code)
    while pc < n:
        op = code[pc]
        width = push_width(op)
        imm = code[pc + 1:pc + 1 + width]
        if len(imm) < width:
            if strict:
                raise TruncatedPush(pc, width, len(imm))
            imm = imm + bytes(width - len(imm))
        out.append(Instruction(pc, op, info(op).name, bytes(imm)))
        pc += 1 + width
    return out


def assemble(instrs) -> bytes:
    return b"".join(i.encode() for i in instrs)


def listing(instrs) -> str:
    return "".join(f"{i.offset}: {i}\n" for i in instrs)
