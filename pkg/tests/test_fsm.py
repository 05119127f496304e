import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srvscan import fsm as F
from oracles import must_precede

FIX = Path(__file__).parent / "fixtures"
A1 = "0x" + "11" * 20
A2 = "0x" + "22" * 20


def rec(sender, fn, block, index=0, **kw):
    return json.dumps({"sender": sender, "function": fn, "block": block, "index": index, **kw})


def traces_of(*seqs):
    return [F.TransactionTrace(f"0x{i:040x}", tuple(s)) for i, s in enumerate(seqs)]


def tsd_pairs(edges):
    return {(e.dependent, e.prerequisite) for e in edges}


# ---------------------------------------------------------------- ingestion


def test_ingest_orders_by_block_then_index():
    lines = [rec(A1, "B", 5, 1), rec(A1, "A", 5, 0), rec(A1, "C", 7), rec(A2, "X", 1)]
    assert F.ingest_traces(lines) == [F.TransactionTrace(A1, ("A", "B", "C")),
                                      F.TransactionTrace(A2, ("X",))]


def test_ingest_accepts_whole_text_and_skips_blanks():
    text = rec(A1, "A", 1) + "\n\n" + rec(A1, "B", 2) + "\n"
    assert F.ingest_traces(text) == [F.TransactionTrace(A1, ("A", "B"))]


def test_sender_case_is_normalized():
    lines = [rec(A1.upper().replace("0X", "0x"), "A", 1), rec(A1, "B", 2)]
    assert len(F.ingest_traces(lines)) == 1


@pytest.mark.parametrize("line,lineno", [
    ("{not json", 1),
    ("[1, 2]", 1),
    (json.dumps({"sender": "0x12", "function": "A", "block": 1, "index": 0}), 1),
    (json.dumps({"sender": A1, "function": "", "block": 1, "index": 0}), 1),
    (json.dumps({"sender": A1, "function": "A", "block": -1, "index": 0}), 1),
    (json.dumps({"sender": A1, "function": "A", "block": 1}), 1),
    (json.dumps({"sender": A1, "function": "A", "block": 1, "index": True}), 1),
])
def test_malformed_lines(line, lineno):
    with pytest.raises(F.MalformedLine) as exc:
        F.ingest_traces([line])
    assert exc.value.lineno == lineno


def test_malformed_line_number_counts_blanks():
    with pytest.raises(F.MalformedLine) as exc:
        F.ingest_traces([rec(A1, "A", 1), "", "oops"])
    assert exc.value.lineno == 3


def test_duplicate_order_key():
    with pytest.raises(F.DuplicateOrderKey):
        F.ingest_traces([rec(A1, "A", 1, 0), rec(A1, "B", 1, 0)])


def test_empty_input_to_machine_builder():
    with pytest.raises(F.EmptyInput):
        F.build_initial_fsm([])


def test_mine_on_no_traces_is_empty():
    fsm, edges = F.mine_tsd([])
    assert edges == [] and fsm.states == [0]


def test_relabel_is_case_insensitive():
    t = F.relabel(traces_of(["0xABCDEF01", "x"]), {"0xabcdef01": "Mint"})
    assert t[0].calls == ("Mint", "x")


# ---------------------------------------------------------------- prefix tree


def test_prefix_tree_shares_prefixes():
    fsm = F.build_initial_fsm(traces_of(["A", "B"], ["A", "C"]))
    assert fsm.states == [0, 1, 2, 3]
    assert fsm.transitions == {0: {"A": 1}, 1: {"B": 2, "C": 3}, 2: {}, 3: {}}
    assert fsm.support[(0, "A")] == 2


def test_k_tail():
    fsm = F.build_initial_fsm(traces_of(["A", "B", "C"]))
    assert F.k_tail(fsm, 0, 2) == {(), ("A",), ("A", "B")}


def test_k_must_be_positive():
    with pytest.raises(ValueError):
        F.merge_states(F.build_initial_fsm(traces_of(["A"])), 0)


def test_exports():
    fsm = F.build_initial_fsm(traces_of(["A", "B"]))
    doc = fsm.to_json()
    assert doc["transitions"][0] == {"from": 0, "label": "A", "to": 1, "support": 1}
    assert 's0 -> s1 [label="A (1)"]' in fsm.to_dot()


# ---------------------------------------------------------------- reference scenarios


def test_game_traces_give_playtoearn_after_minttoken():
    traces = F.ingest_traces((FIX / "corpus" / "TokenGame.traces.jsonl").read_text())
    _, edges = F.mine_tsd(traces)
    pairs = tsd_pairs(edges)
    assert ("PlaytoEarn", "MintToken") in pairs
    assert ("Withdraw", "MintToken") in pairs


def test_equivalent_futures_merge_exactly():
    traces = F.ingest_traces((FIX / "traces" / "equivalent_futures.jsonl").read_text())
    pta = F.build_initial_fsm(traces)
    assert pta.states == list(range(9))
    merges = []
    out = F.merge_states(pta, 2, merges=merges)
    assert merges == [(2, 6), (3, 7), (4, 8)]
    assert out.states == [0, 1, 2, 3, 4, 5]


def test_no_false_prerequisite_when_b_can_start():
    _, edges = F.mine_tsd(traces_of(["A", "B"], ["B"]))
    assert ("B", "A") not in tsd_pairs(edges)


def test_min_support_filters_rare_dependents():
    traces = traces_of(["A", "B"], ["A", "C"], ["A", "C"])
    fsm = F.build_initial_fsm(traces)
    assert tsd_pairs(F.extract_tsd(fsm, 2)) == {("C", "A")}


# ---------------------------------------------------------------- properties


def random_traces(rng):
    labels = ["A", "B", "C", "D", "E"][: rng.randint(1, 5)]
    return traces_of(*[[rng.choice(labels) for _ in range(rng.randint(0, 6))]
                       for _ in range(rng.randint(1, 6))])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_merged_machine_accepts_every_trace_and_shrinks(seed, k):
    traces = random_traces(random.Random(seed))
    pta = F.build_initial_fsm(traces)
    out = F.merge_states(pta, k)
    assert len(out.states) <= len(pta.states)
    for t in traces:
        for i in range(len(t.calls) + 1):
            assert out.accepts(t.calls[:i])
    assert sum(out.support.values()) == sum(pta.support.values())


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_merging_is_idempotent(seed):
    out = F.merge_states(F.build_initial_fsm(random_traces(random.Random(seed))))
    again = F.merge_states(out)
    assert (again.states, again.transitions) == (out.states, out.transitions)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_prefix_tree_tsd_equals_trace_oracle(seed):
    traces = random_traces(random.Random(seed))
    calls = [t.calls for t in traces]
    labels = sorted({c for t in calls for c in t})
    expected = {(f2, f1) for f2 in labels for f1 in labels
                if f1 != f2 and must_precede(calls, f2, f1)}
    assert tsd_pairs(F.extract_tsd(F.build_initial_fsm(traces))) == expected


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mined_tsd_is_sound_against_traces(seed):
    traces = random_traces(random.Random(seed))
    calls = [t.calls for t in traces]
    _, edges = F.mine_tsd(traces)
    for f2, f1 in tsd_pairs(edges):
        assert must_precede(calls, f2, f1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mining_is_deterministic(seed):
    a = F.mine_tsd(random_traces(random.Random(seed)))
    b = F.mine_tsd(random_traces(random.Random(seed)))
    assert a[0].to_json() == b[0].to_json() and a[1] == b[1]
