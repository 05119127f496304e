from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Loop:
    header: int
    latch: int
    body: frozenset

    @property
    def back_edge(self) -> tuple[int, int]:
        return (self.latch, self.header)


def reachable_from(succ: dict, entry) -> set:
    seen = {entry}
    stack = [entry]
    while stack:
        n = stack.pop()
        for m in succ.get(n, ()):
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return seen


def dominators(succ: dict, entry) -> dict:
    """Dominator sets for every node reachable from ``entry`` (iterative dataflow)."""
    nodes = reachable_from(succ, entry)
    order = sorted(nodes)
    preds: dict = {n: [] for n in nodes}
    for n in nodes:
        for m in succ.get(n, ()):
            if m in nodes:
                preds[m].append(n)
    dom = {n: set(nodes) for n in nodes}
    dom[entry] = {entry}
    changed = True
    while changed:
        changed = False
        for n in order:
            if n == entry:
                continue
            new = set.intersection(*(dom[p] for p in preds[n])) | {n}
            if new != dom[n]:
                dom[n] = new
                changed = True
    return dom


def natural_loops(succ: dict, entry) -> list[Loop]:
    """One natural loop per back edge, ordered by (header, latch)."""
    dom = dominators(succ, entry)
    preds: dict = {n: [] for n in dom}
    for n in dom:
        for m in succ.get(n, ()):
            if m in dom:
                preds[m].append(n)
    loops = []
    for latch in sorted(dom):
        for header in sorted(set(succ.get(latch, ()))):
            if header in dom and header in dom[latch]:
                body = {header, latch}
                stack = [latch] if latch != header else []
                while stack:
                    n = stack.pop()
                    for p in preds[n]:
                        if p not in body:
                            body.add(p)
                            stack.append(p)
                loops.append(Loop(header, latch, frozenset(body)))
    loops.sort(key=lambda lp: (lp.header, lp.latch))
    return loops


def find_loops(cfg) -> list[Loop]:
    """Natural loops of a Cfg over its resolved edges; block ids ascend with offsets."""
    if not cfg.blocks:
        return []
    return natural_loops(cfg.resolved_succ_map(), cfg.entry)
