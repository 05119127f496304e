import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srvscan import deps, fsm
from srvscan import model as ir
from srvscan import sdg as G
from oracles import bfs, statements
from randgen import random_model

CORPUS = Path(__file__).parent / "fixtures" / "corpus"


def load(name):
    return ir.load_model((CORPUS / f"{name}.model.json").read_bytes())


def full_graph(m, tsd=()):
    return G.build_sdg(m, deps.extract_rw(m), deps.extract_asd(m), tsd)


def tokengame_graph():
    m = load("TokenGame")
    traces = fsm.ingest_traces((CORPUS / "TokenGame.traces.jsonl").read_text())
    _, tsd = fsm.mine_tsd(traces)
    return m, full_graph(m, tsd)


def test_empty_model():
    g = G.build_sdg(ir.ContractModel())
    assert g.nodes == () and g.edges == ()
    assert g.to_json() == {"nodes": [], "edges": []}


def test_function_without_statements_has_one_block():
    f = ir.FunctionDef("f", 1, "public", 0, ())
    g = G.build_sdg(ir.ContractModel((f,), ()))
    assert g.function_blocks("f") == ["b:f:0"]
    assert g.start_block("f") == "b:f:0" and g.end_blocks("f") == ["b:f:0"]


def test_tokengame_cross_function_edges():
    m, g = tokengame_graph()
    mint_end = g.end_blocks("MintToken")
    withdraw = g.start_block("Withdraw")
    play = g.start_block("PlaytoEarn")
    assert all(G.ASD in g.edge_labels(e, withdraw) for e in mint_end)
    assert all(G.TSD in g.edge_labels(e, play) for e in mint_end)
    sheep = G.var_node_id(m.var_by_label("SheepToken"))
    writers = [e.src for e in g.in_edges(sheep, {G.RW_WRITE})]
    assert writers and all(w.startswith("b:MintToken:") for w in writers)


def test_asd_edges_carry_var_annotation():
    _, g = tokengame_graph()
    asd = [e for e in g.edges if e.label == G.ASD]
    assert asd and all(e.var for e in asd)
    assert {"SheepToken", "WolfToken"} <= {e.var for e in asd}


def test_write_block_reaches_dependents():
    m, g = tokengame_graph()
    site = next(p for p, s in statements(m.function("MintToken").body) if isinstance(s, ir.Write))
    blk = g.block_of("MintToken", site)
    reach = g.reachable([blk])
    assert g.start_block("Withdraw") in reach and g.start_block("PlaytoEarn") in reach


def test_internal_call_edges():
    m = load("Barn")
    g = full_graph(m)
    caller = "claimManyFromBarn"
    for callee in ("_claimSheepFromBarn", "_mint"):
        start = g.start_block(callee)
        assert any(start in g.successors(b, {G.C}) for b in g.function_blocks(caller))
    # the first call is followed by another statement, so control returns to the caller
    for end in g.end_blocks("_claimSheepFromBarn"):
        assert any(b.startswith(f"b:{caller}:") for b in g.successors(end, {G.C}))
    # the last call ends the caller: no return edge is needed
    for end in g.end_blocks("_mint"):
        assert g.successors(end, {G.C}) == []


def test_unknown_node_errors():
    g = G.build_sdg(ir.ContractModel())
    with pytest.raises(G.UnknownNode):
        g.node("b:nope:0")
    with pytest.raises(G.UnknownNode):
        g.reachable(["var:scalar:0x0"])
    with pytest.raises(G.UnknownNode):
        g.block_of("f", (0,))


def test_inconsistent_inputs_rejected():
    m = load("TokenGame")
    bad = deps.AsdEdge("Nope", "MintToken", m.state_vars[0], (0,))
    with pytest.raises(G.InconsistentInputs):
        G.build_sdg(m, asd=[bad])
    with pytest.raises(G.InconsistentInputs):
        G.build_sdg(m, tsd=[fsm.TsdEdge("MintToken", "Ghost")])


def test_dot_and_json_exports():
    _, g = tokengame_graph()
    dot = g.to_dot()
    assert dot.startswith("digraph sdg {") and "color=red" in dot and "color=blue" in dot
    doc = g.to_json()
    assert len(doc["nodes"]) == len(g.nodes) and len(doc["edges"]) == len(g.edges)
    assert {n["type"] for n in doc["nodes"]} == {"block", "state_var"}


def test_build_is_deterministic():
    _, a = tokengame_graph()
    _, b = tokengame_graph()
    assert a.to_json() == b.to_json()


# ---------------------------------------------------------------- properties


def random_graph(seed):
    rng = random.Random(seed)
    m = random_model(rng)
    names = [f.name for f in m.functions]
    tsd = [fsm.TsdEdge(a, b) for a in names for b in names if a != b and rng.random() < 0.2]
    return rng, m, full_graph(m, tsd)


def edge_succ(g, labels):
    succ = {}
    for e in g.edges:
        if e.label in labels:
            succ.setdefault(e.src, set()).add(e.dst)
    return succ


def random_labels(rng):
    return frozenset(lab for lab in G.LABELS if rng.random() < 0.6)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_node_count_and_statement_placement(seed):
    _, m, g = random_graph(seed)
    blocks = sum(len(G.segment(f).blocks) for f in m.functions)
    assert len(g.nodes) == len(m.state_vars) + blocks
    for f in m.functions:
        placed = [p for b in g.function_blocks(f.name) for p in g.node(b).statements]
        assert sorted(placed) == sorted(p for p, _ in statements(f.body))
        assert len([b for b in g.function_blocks(f.name) if g.node(b).is_function_start]) == 1
        assert g.end_blocks(f.name)
        # blocks hold at least one statement unless the body is empty
        if f.body:
            assert all(g.node(b).statements for b in g.function_blocks(f.name))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rw_edges_attach_to_the_statement_block(seed):
    _, m, g = random_graph(seed)
    for e in deps.extract_rw(m):
        blk = g.block_of(e.accessor, e.site)
        vid = G.var_node_id(e.var)
        if e.mode == "write":
            assert G.RW_WRITE in g.edge_labels(blk, vid)
        else:
            assert G.RW_READ in g.edge_labels(vid, blk)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_successors_and_predecessors_are_converse(seed):
    _, _, g = random_graph(seed)
    for n in g.nodes:
        for s in g.successors(n.id):
            assert n.id in g.predecessors(s)
        for p in g.predecessors(n.id):
            assert n.id in g.successors(p)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_reachable_equals_bfs_and_is_monotone(seed):
    rng, _, g = random_graph(seed)
    if not g.nodes:
        return
    ids = [n.id for n in g.nodes]
    labels = random_labels(rng)
    sources = rng.sample(ids, rng.randint(1, min(3, len(ids))))
    got = g.reachable(sources, labels)
    assert got == bfs(edge_succ(g, labels), sources)
    more_sources = sources + rng.sample(ids, 1)
    assert got <= g.reachable(more_sources, labels)
    assert got <= g.reachable(sources, labels | {rng.choice(G.LABELS)})


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_shortest_paths_are_valid_and_minimal(seed):
    rng, _, g = random_graph(seed)
    if not g.nodes:
        return
    ids = [n.id for n in g.nodes]
    labels = random_labels(rng)
    sources = rng.sample(ids, rng.randint(1, min(3, len(ids))))
    paths = g.shortest_paths(sources, labels)
    assert set(paths) == g.reachable(sources, labels)
    succ = edge_succ(g, labels)
    dist = {s: 0 for s in sources}
    frontier = list(sources)
    while frontier:
        nxt = []
        for n in frontier:
            for m in succ.get(n, ()):
                if m not in dist:
                    dist[m] = dist[n] + 1
                    nxt.append(m)
        frontier = nxt
    for n, p in paths.items():
        assert p[0] in sources and p[-1] == n
        assert g.is_path(p, labels)
        assert len(p) - 1 == dist[n]
