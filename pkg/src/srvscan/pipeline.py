"""End-to-end analysis of one contract: model, dependencies, traces, graph, detection."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import deps, detector, fsm
from . import model as ir
from . import sdg as G

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Analysis:
    model: ir.ContractModel
    rw: tuple
    asd: tuple
    machine: object       # Fsm or None when no traces were given
    tsd: tuple
    graph: G.Sdg
    result: detector.DetectionResult


def selector_names(m: ir.ContractModel) -> dict[str, str]:
    """0x-selector -> function name for every function with a selector."""
    return {f"0x{f.selector:08x}": f.name for f in m.functions if f.selector is not None}


def analyze_model(m: ir.ContractModel, traces=None, *, fsm_k: int = fsm.DEFAULT_K,
                  min_support: int = 1, use_tsd: bool = True) -> Analysis:
    """Run every stage on a validated model; ``traces`` are TransactionTrace records."""
    rw = tuple(deps.extract_rw(m))
    asd = tuple(deps.extract_asd(m))
    machine, tsd = None, ()
    if traces:
        traces = fsm.relabel(traces, selector_names(m))
        machine, edges = fsm.mine_tsd(traces, fsm_k, min_support)
        known = [e for e in edges if m.has_function(e.dependent) and m.has_function(e.prerequisite)]
        if len(known) < len(edges):
            log.info("dropped %d TSD edges over labels absent from the model", len(edges) - len(known))
        tsd = tuple(known)
    g = G.build_sdg(m, rw, asd, tsd)
    return Analysis(m, rw, asd, machine, tsd, g, detector.detect(m, g, use_tsd=use_tsd))
