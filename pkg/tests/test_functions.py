import json
import random
from pathlib import Path

from hypothesis import given, settings
from hypothesis import strategies as st

from srvscan.evm import build_cfg, classify_accesses, disassemble, read_code, recover_functions

BYTECODE = Path(__file__).parent / "fixtures" / "bytecode"


def cfg_of(code: bytes):
    return build_cfg(disassemble(code, strip=False))


def fixture_cfg(name: str):
    return build_cfg(disassemble(read_code(BYTECODE / f"{name}.runtime.hex")))


def test_toy_selectors_match_abi():
    abi = json.loads((BYTECODE / "Toy.abi.json").read_text())
    g = fixture_cfg("Toy")
    found = {e.selector for e in recover_functions(g) if e.selector is not None}
    assert found == {int(s, 16) for s in abi.values()}


def test_every_compiled_fixture_matches_its_abi():
    for abi_path in sorted(BYTECODE.glob("*.abi.json")):
        name = abi_path.name.split(".")[0]
        abi = json.loads(abi_path.read_text())
        g = fixture_cfg(name)
        found = {e.selector for e in recover_functions(g) if e.selector is not None}
        assert found == {int(s, 16) for s in abi.values()}, name


def test_fallback_always_last():
    g = fixture_cfg("Toy")
    entries = recover_functions(g)
    assert entries[-1].selector is None and entries[-1].name == "fallback"
    assert [e.selector for e in entries[:-1]] == sorted(e.selector for e in entries[:-1])


def test_shared_entry_block():
    g = fixture_cfg("SharedEntry")
    by_sel = {e.selector: e for e in recover_functions(g)}
    assert by_sel[0x11111111].entry == by_sel[0x22222222].entry
    assert g.block(by_sel[0x11111111].entry).start == 30
    assert g.block(by_sel[None].entry).start == 26


def test_no_dispatcher_means_single_fallback():
    g = cfg_of(bytes.fromhex("600160015500"))
    entries = recover_functions(g)
    assert [(e.selector, e.entry) for e in entries] == [(None, 0)]


def test_empty_code_has_no_functions():
    assert recover_functions(build_cfg([])) == []


def test_scalar_slot_read():
    acc = classify_accesses(cfg_of(bytes.fromhex("60005400")))
    [a] = acc[0].storage
    assert (a.mode, a.kind, a.slot) == ("read", "scalar", 0)


def test_mapping_slot_from_keccak():
    # mstore(0, caller); mstore(0x20, 2); sload(keccak256(0, 0x40))
    code = bytes.fromhex("33600052600260205260406000205400")
    acc = classify_accesses(cfg_of(code))
    [a] = acc[0].storage
    assert (a.mode, a.kind, a.slot) == ("read", "mapping-base", 2)
    assert (0, "CALLER") in acc[0].env


def test_blocks_without_accesses_omitted():
    assert classify_accesses(cfg_of(bytes.fromhex("600160020100"))) == {}


# ---------------------------------------------------------------- reference interpreter


def _gen_accesses(rng):
    """Random straight-line storage traffic; returns (code, [(offset, mode, kind, slot)])."""
    code, expect = bytearray(), []
    for _ in range(rng.randint(1, 8)):
        slot = rng.randrange(256)
        mode = rng.choice(["read", "write"])
        if rng.random() < 0.5:
            if mode == "write":
                code += bytes([0x60, rng.randrange(256)])
            code += bytes([0x60, slot])
            expect.append((len(code), mode, "scalar", slot))
        else:
            key = rng.choice([bytes([0x33]), bytes([0x60, rng.randrange(256)])])
            if mode == "write":
                code += bytes([0x60, rng.randrange(256)])
            code += key + bytes([0x60, 0x00, 0x52, 0x60, slot, 0x60, 0x20, 0x52,
                                 0x60, 0x40, 0x60, 0x00, 0x20])
            expect.append((len(code), mode, "mapping-base", slot))
        code.append(0x54 if mode == "read" else 0x55)
        if mode == "read":
            code.append(0x50)
    code.append(0x00)
    return bytes(code), expect


def _reference(code):
    """Walk the code with a tagged stack and word-addressed memory."""
    stack, mem, out, pc = [], {}, [], 0
    while pc < len(code):
        op = code[pc]
        if op == 0x60:
            stack.append(("const", code[pc + 1]))
            pc += 2
            continue
        if op == 0x33:
            stack.append(("env", "CALLER"))
        elif op == 0x52:
            off, val = stack.pop(), stack.pop()
            mem[off[1]] = val
        elif op == 0x20:
            off, size = stack.pop(), stack.pop()
            assert size == ("const", 0x40)
            stack.append(("hash", mem[off[1] + 0x20][1]))
        elif op in (0x54, 0x55):
            key = stack.pop()
            kind = "scalar" if key[0] == "const" else "mapping-base"
            out.append((pc, "read" if op == 0x54 else "write", kind, key[1]))
            if op == 0x55:
                stack.pop()
            else:
                stack.append(("sload", key))
        elif op == 0x50:
            stack.pop()
        pc += 1
    return out


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_access_classification_matches_reference(seed):
    code, expect = _gen_accesses(random.Random(seed))
    assert _reference(code) == expect
    acc = classify_accesses(cfg_of(code))
    got = [(a.offset, a.mode, a.kind, a.slot) for b in acc.values() for a in b.storage]
    assert got == expect
