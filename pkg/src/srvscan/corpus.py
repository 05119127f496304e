"""Golden-corpus runner: analyze every fixture in a directory and compare finding sets.

A fixture is ``<Name>.model.json`` (canonical model) or ``<Name>.hex`` (bytecode),
with optional ``<Name>.traces.jsonl``. The expectations file maps each name to
``{"findings": [...]}`` or ``{"clean": true}``; a finding names its ``rule``,
``indicator_function`` and ``tainted_state_vars``, and may pin ``entry_trace``
and ``traces``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import runner

MODEL_SUFFIX = ".model.json"
BYTECODE_SUFFIX = ".hex"
TRACES_SUFFIX = ".traces.jsonl"


class CorpusError(Exception):
    pass


class MissingExpectation(CorpusError):
    pass


class MissingFixture(CorpusError):
    pass


@dataclass(frozen=True)
class ExpectedFinding:
    rule: str
    function: str
    tainted: tuple
    entry_trace: tuple | None = None
    traces: tuple | None = None

    @property
    def key(self) -> tuple:
        return (self.rule, self.function, self.tainted)


@dataclass(frozen=True)
class CorpusExpectation:
    name: str
    findings: tuple = ()

    @property
    def clean(self) -> bool:
        return not self.findings


def _trace_key(t: dict) -> tuple:
    return (tuple(t["functions"]), tuple(sorted(t["state_vars"])))


def parse_expectations(doc: dict) -> dict[str, CorpusExpectation]:
    out = {}
    for name, spec in sorted(doc.items()):
        if spec.get("clean"):
            if spec.get("findings"):
                raise CorpusError(f"{name}: marked clean but lists findings")
            out[name] = CorpusExpectation(name)
            continue
        found = []
        for f in spec.get("findings", []):
            found.append(ExpectedFinding(
                f["rule"], f["indicator_function"], tuple(sorted(f["tainted_state_vars"])),
                tuple(f["entry_trace"]) if "entry_trace" in f else None,
                tuple(sorted(_trace_key(t) for t in f["traces"])) if "traces" in f else None,
            ))
        out[name] = CorpusExpectation(name, tuple(found))
    return out


@dataclass(frozen=True)
class Fixture:
    name: str
    kind: str
    path: Path
    traces: Path | None


def discover(directory) -> dict[str, Fixture]:
    d = Path(directory)
    if not d.is_dir():
        raise MissingFixture(f"corpus directory {d} does not exist")
    out = {}
    for p in sorted(d.iterdir()):
        if p.name.endswith(MODEL_SUFFIX):
            name, kind = p.name[: -len(MODEL_SUFFIX)], runner.MODEL
        elif p.name.endswith(BYTECODE_SUFFIX):
            name, kind = p.name[: -len(BYTECODE_SUFFIX)], runner.BYTECODE
        else:
            continue
        if name in out:
            raise CorpusError(f"{name}: both a model and a bytecode fixture")
        t = d / f"{name}{TRACES_SUFFIX}"
        out[name] = Fixture(name, kind, p, t if t.exists() else None)
    return out


@dataclass
class ContractResult:
    name: str
    passed: bool
    missing: list = field(default_factory=list)
    extra: list = field(default_factory=list)
    mismatched: list = field(default_factory=list)
    error: str = ""
    report: bytes = b""
    elapsed: float = 0.0
    tp: int = 0

    def to_json(self) -> dict:
        d = {"name": self.name, "status": "pass" if self.passed else "fail",
             "missing": self.missing, "extra": self.extra, "mismatched": self.mismatched}
        if self.error:
            d["error"] = self.error
        return d


@dataclass
class CorpusSummary:
    results: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def counts(self) -> dict:
        return {
            "tp": sum(r.tp for r in self.results),
            "fp": sum(len(r.extra) for r in self.results),
            "fn": sum(len(r.missing) for r in self.results),
            "tn": sum(1 for r in self.results if r.passed and not r.tp and not r.error),
        }

    def to_json(self) -> dict:
        return {"contracts": [r.to_json() for r in self.results], "counts": self.counts(),
                "passed": self.passed}


def _describe(key: tuple) -> dict:
    rule, fn, tainted = key
    return {"rule": rule, "indicator_function": fn, "tainted_state_vars": list(tainted)}


def compare(expected: CorpusExpectation, doc: dict) -> ContractResult:
    """Exact set comparison of (rule, indicator function, tainted vars) keys."""
    actual = {}
    for f in doc["findings"]:
        actual[(f["rule"], f["indicator_function"], tuple(sorted(f["tainted_state_vars"])))] = f
    wanted = {e.key: e for e in expected.findings}
    res = ContractResult(expected.name, True)
    res.missing = [_describe(k) for k in sorted(set(wanted) - set(actual))]
    res.extra = [_describe(k) for k in sorted(set(actual) - set(wanted))]
    bad = set()
    for k in sorted(set(wanted) & set(actual)):
        e, a = wanted[k], actual[k]
        if e.entry_trace is not None and tuple(a["entry_trace"]) != e.entry_trace:
            bad.add(k)
            res.mismatched.append(dict(_describe(k), field="entry_trace",
                                       expected=list(e.entry_trace), actual=a["entry_trace"]))
        got = tuple(sorted(_trace_key(t) for t in a["traces"]))
        if e.traces is not None and got != e.traces:
            bad.add(k)
            res.mismatched.append(dict(_describe(k), field="traces",
                                       expected=[[list(c), list(v)] for c, v in e.traces],
                                       actual=[[list(c), list(v)] for c, v in got]))
    res.tp = len((set(wanted) & set(actual)) - bad)
    res.passed = not (res.missing or res.extra or res.mismatched)
    return res


def run_corpus(directory, expectations_path, *, jobs: int = 1,
               timeout_seconds: float = runner.DEFAULT_TIMEOUT, use_tsd: bool = True) -> CorpusSummary:
    fixtures = discover(directory)
    try:
        doc = json.loads(Path(expectations_path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise MissingExpectation(f"expectations file {expectations_path}: {exc.strerror}") from exc
    expectations = parse_expectations(doc)
    missing_exp = sorted(set(fixtures) - set(expectations))
    if missing_exp:
        raise MissingExpectation(f"no expectation for fixtures: {', '.join(missing_exp)}")
    missing_fix = sorted(set(expectations) - set(fixtures))
    if missing_fix:
        raise MissingFixture(f"expectations name absent fixtures: {', '.join(missing_fix)}")

    def one(name: str) -> ContractResult:
        fx = fixtures[name]
        cfg = runner.AnalysisConfig(fx.kind, str(fx.path), str(fx.traces) if fx.traces else None,
                                    timeout_seconds=timeout_seconds, use_tsd=use_tsd)
        out = runner.run_analysis(cfg)
        if out.report is None or out.exit_code in (runner.EXIT_ERROR, runner.EXIT_TIMEOUT):
            return ContractResult(name, False, error=out.message or "analysis failed",
                                  elapsed=out.elapsed)
        res = compare(expectations[name], out.report)
        res.report = out.render("json")
        res.elapsed = out.elapsed
        return res

    names = sorted(fixtures)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(one, names))
    return CorpusSummary(results)
