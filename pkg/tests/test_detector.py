import dataclasses
import random
import zlib
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srvscan import deps, fsm
from srvscan import detector as D
from srvscan import model as ir
from srvscan import sdg as G
from srvscan.pipeline import analyze_model
from mutate import insert_before
from oracles import bfs
from randgen import random_model

CORPUS = Path(__file__).parent / "fixtures" / "corpus"
V = ir.StateVarId(0, ir.SCALAR, "x")
RAND = ir.EnvRead("PREVRANDAO")
CALLER, ORIGIN = ir.EnvRead("CALLER"), ir.EnvRead("ORIGIN")


def load(name):
    return ir.load_model((CORPUS / f"{name}.model.json").read_bytes())


def traces(name):
    return fsm.ingest_traces((CORPUS / f"{name}.traces.jsonl").read_text())


def fn(name, body, vis="public", sel=None, params=1):
    sel = sel if sel is not None else zlib.crc32(name.encode()) or 1
    return ir.FunctionDef(name, sel if vis in ("public", "external") else None, vis, params, tuple(body))


def graph(m, tsd=()):
    return G.build_sdg(m, deps.extract_rw(m), deps.extract_asd(m), tsd)


def eq(a, b):
    return ir.Cmp("==", (a, b))


# ---------------------------------------------------------------- access control


@pytest.mark.parametrize("cond,shape", [
    (eq(ORIGIN, CALLER), D.ORIGIN_VS_CALLER),
    (eq(CALLER, ORIGIN), D.ORIGIN_VS_CALLER),
    (eq(CALLER, ir.Const(0xABC)), D.CALLER_VS_CONSTANT),
    (eq(ir.StateRead(V), CALLER), D.CALLER_VS_STORAGE),
    (eq(ir.Arith("and-bits", (ir.Const((1 << 160) - 1), ir.StateRead(V))), CALLER), D.CALLER_VS_STORAGE),
    (ir.BoolOp("and", (eq(ir.ParamRef(0), ir.Const(1)), eq(ORIGIN, CALLER))), D.ORIGIN_VS_CALLER),
    (eq(CALLER, ir.ParamRef(0)), None),
    (ir.Cmp("!=", (ORIGIN, CALLER)), None),
    (ir.BoolOp("or", (eq(ORIGIN, CALLER), ir.Const(1))), None),
    (eq(ir.EnvRead("CALLVALUE"), ir.Const(1)), None),
])
def test_access_shapes(cond, shape):
    assert D.access_shape(cond) == shape


def test_access_control_must_precede_site():
    guard = ir.Assert(eq(ORIGIN, CALLER))
    w = ir.Write(V, RAND)
    m = ir.ContractModel((fn("before", [guard, w]), fn("after", [w, guard]),
                          fn("nested", [guard, ir.Loop((w,))]), fn("sibling", [ir.Loop((guard,)), w])), (V,))
    assert D.has_access_control(m, "before", (1,)) == D.AccessEvidence(True, (0,), D.ORIGIN_VS_CALLER)
    assert not D.has_access_control(m, "after", (0,)).present
    assert D.has_access_control(m, "nested", (1, 0)).present
    assert not D.has_access_control(m, "sibling", (1,)).present


def test_unknown_function():
    with pytest.raises(D.UnknownFunction):
        D.has_access_control(ir.ContractModel(), "nope", (0,))
    with pytest.raises(D.UnknownFunction):
        D.entry_trace(ir.ContractModel(), "nope")


# ---------------------------------------------------------------- indicators


def test_randomness_witness_sources():
    f = fn("f", [ir.Write(V, RAND), ir.Write(V, ir.Const(1), eq(RAND, ir.Const(0))),
                 ir.Assert(ir.Cmp(">", (ir.EnvRead("TIMESTAMP"), ir.Const(5)))), ir.Write(V, ir.Const(2)),
                 ])
    srcs = [D.randomness_witness(f, (i,), f.body[i]) for i in (0, 1, 3)]
    assert [(w["source"], w["atom"]) for w in srcs] == [
        ("value", "PREVRANDAO"), ("guard", "PREVRANDAO"), ("assert", "TIMESTAMP")]
    assert srcs[2]["assert_site"] == [2]


def test_constant_write_is_not_random():
    f = fn("f", [ir.Write(V, ir.Const(1))])
    assert D.randomness_witness(f, (0,), f.body[0]) is None


def test_corpus_indicators():
    tg = D.find_indicators(load("TokenGame"))
    assert {(i.rule, i.function, i.var.label) for i in tg} == {
        (D.R1, "MintToken", "SheepToken"), (D.R1, "MintToken", "WolfToken")}
    [b] = D.find_indicators(load("BsktToken"))
    assert (b.rule, b.function, b.witness["trigger"]) == (D.R2, "redeem", "external-call")
    assert D.find_indicators(load("Lotto")) == []


def test_r2_needs_state_modification():
    loop = ir.Loop((ir.ExternalCall("CALL", ir.ParamRef(0)),))
    m = ir.ContractModel((fn("pure", [loop]), fn("dirty", [loop, ir.Write(V, ir.Const(0))])), (V,))
    assert [i.function for i in D.find_indicators(m)] == ["dirty"]


def test_r2_through_callee_write():
    loop = ir.Loop((ir.ExternalCall("CALL", ir.ParamRef(0)),))
    m = ir.ContractModel((fn("outer", [loop, ir.InternalCall("inner")]),
                          fn("inner", [ir.Write(V, ir.Const(0))], vis="internal")), (V,))
    assert [i.function for i in D.find_indicators(m)] == ["outer"]


def test_r2_call_result_assert_triggers():
    loop = ir.Loop((ir.Assert(ir.Cmp("!=", (ir.CallResult(), ir.Const(0)))),))
    m = ir.ContractModel((fn("f", [loop, ir.Write(V, ir.Const(0))]),), (V,))
    [i] = D.find_indicators(m)
    assert i.witness["trigger"] == "call-result-assert"


# ---------------------------------------------------------------- uncertainty


def test_uncertainty_examples():
    m = load("TokenGame")
    g = analyze_model(m, traces("TokenGame")).graph
    assert D.is_uncertain(m, g, m.var_by_label("SheepToken"))[0]
    assert D.is_uncertain(m, g, m.var_by_label("WolfToken"))[0]
    assert not D.is_uncertain(m, g, m.var_by_label("rate"))[0]


def test_uncertainty_through_assert_dependency():
    wolf = ir.StateVarId(1, ir.SCALAR, "wolf")
    x = ir.StateVarId(2, ir.SCALAR, "x")
    m = ir.ContractModel((
        fn("mint", [ir.Write(wolf, ir.Const(1), eq(RAND, ir.Const(0)))]),
        fn("use", [ir.Write(x, ir.Const(1)), ir.Assert(ir.Cmp(">", (ir.StateRead(wolf), ir.Const(0))))]),
    ), (wolf, x))
    g = graph(m)
    ok, w = D.is_uncertain(m, g, x)
    assert ok and w["via"] == "wolf" and w["atom"] == "PREVRANDAO"
    assert g.is_path(w["path"], D.UNCERTAINTY_LABELS)


def test_unknown_var():
    with pytest.raises(D.UnknownVar):
        D.is_uncertain(ir.ContractModel(), G.build_sdg(ir.ContractModel()), V)


# ---------------------------------------------------------------- entry traces


def test_barn_entry_trace():
    m = load("Barn")
    assert D.entry_trace(m, "_claimSheepFromBarn") == ("claimManyFromBarn", "_claimSheepFromBarn")


def test_public_function_is_its_own_entry():
    assert D.entry_trace(load("TokenGame"), "MintToken") == ("MintToken",)


def test_uncalled_private_function_is_unreachable():
    m = ir.ContractModel((fn("hidden", [ir.Write(V, RAND)], vis="private"),), (V,))
    res = D.detect(m, graph(m))
    assert res.findings == () and [i.function for i in res.unreachable] == ["hidden"]


def test_guarded_call_blocks_entry():
    m = ir.ContractModel((
        fn("pub", [ir.Assert(eq(CALLER, ir.Const(7))), ir.InternalCall("priv")]),
        fn("priv", [ir.Write(V, RAND)], vis="internal"),
    ), (V,))
    assert D.entry_trace(m, "priv") is None


def test_entry_tie_breaks_lexicographically():
    m = ir.ContractModel((
        fn("b", [ir.InternalCall("t")]), fn("a", [ir.InternalCall("t")]),
        fn("t", [ir.Write(V, RAND)], vis="internal"),
    ), (V,))
    assert D.entry_trace(m, "t") == ("a", "t")


# ---------------------------------------------------------------- detection


def test_tokengame_traces():
    a = analyze_model(load("TokenGame"), traces("TokenGame"))
    [f] = a.result.findings
    assert [t.arrow() for t in f.traces] == [
        "MintToken → {SheepToken,WolfToken}",
        "MintToken → PlaytoEarn → {Earning}",
        "MintToken → Withdraw → {Balance}",
    ]
    assert f.confidence == "high"


def test_low_confidence_from_unresolved_jump():
    m = load("TokenGame")
    m = dataclasses.replace(m, warnings=(ir.LiftWarning("UnresolvedJump", "MintToken", "x"),))
    [f] = analyze_model(m).result.findings
    assert f.confidence == "low"


def test_disabling_tsd_drops_earning():
    m, t = load("TokenGame"), traces("TokenGame")
    with_tsd = analyze_model(m, t).result.findings[0]
    without = analyze_model(m, t, use_tsd=False).result.findings[0]
    assert "Earning" in with_tsd.tainted_labels and "Earning" not in without.tainted_labels
    assert set(without.tainted_labels) < set(with_tsd.tainted_labels)


@pytest.mark.parametrize("name", ["TokenGame", "Barn", "BsktToken"])
def test_guarding_each_indicator_removes_finding(name):
    m = load(name)
    before = analyze_model(m).result.findings
    assert before
    for f in before:
        guarded = insert_before(m, f.function, [i.site for i in f.indicators])
        keys = {(x.rule, x.function) for x in analyze_model(guarded).result.findings}
        assert (f.rule, f.function) not in keys


# ---------------------------------------------------------------- properties


def random_setup(seed):
    rng = random.Random(seed)
    m = random_model(rng)
    names = [f.name for f in m.functions]
    tsd = [fsm.TsdEdge(a, b) for a in names for b in names if a != b and rng.random() < 0.2]
    return rng, m, tsd


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_taint_equals_bfs_and_paths_rewalk(seed):
    _, m, tsd = random_setup(seed)
    g = graph(m, tsd)
    succ = {}
    for e in g.edges:
        succ.setdefault(e.src, set()).add(e.dst)
    for f in D.detect(m, g).findings:
        sources = [D.indicator_block(g, i) for i in f.indicators]
        expected = {n for n in bfs(succ, sources) if n.startswith("var:")}
        assert {G.var_node_id(v) for v in f.tainted_vars} == expected
        for v, p in zip(f.tainted_vars, f.paths):
            assert p[0] in sources and p[-1] == G.var_node_id(v)
            assert g.is_path(p)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_guard_insertion_suppresses(seed):
    _, m, _ = random_setup(seed)
    for f in D.detect(m, graph(m)).findings:
        guarded = insert_before(m, f.function, [i.site for i in f.indicators])
        assert ir.validate_model(guarded) == []
        keys = {(x.rule, x.function) for x in D.detect(guarded, graph(guarded)).findings}
        assert (f.rule, f.function) not in keys


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_tsd_ablation_and_monotonicity(seed):
    _, m, tsd = random_setup(seed)
    g0, g1 = graph(m), graph(m, tsd)
    r0 = {(f.rule, f.function): set(f.tainted_labels) for f in D.detect(m, g0).findings}
    r1 = {(f.rule, f.function): set(f.tainted_labels) for f in D.detect(m, g1).findings}
    ablated = {(f.rule, f.function): set(f.tainted_labels) for f in D.detect(m, g1, use_tsd=False).findings}
    assert r0.keys() == r1.keys() == ablated.keys()
    for k in r0:
        assert r0[k] <= r1[k]
        assert ablated[k] == r0[k]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_detection_is_deterministic(seed):
    _, m, tsd = random_setup(seed)
    assert D.detect(m, graph(m, tsd)) == D.detect(m, graph(m, tsd))
