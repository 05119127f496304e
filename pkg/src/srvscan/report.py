"""Report serialization: canonical JSON and a plain-text arrow listing."""

from __future__ import annotations

import json

import jsonschema

from . import detector
from . import model as ir


def finding_to_json(f: detector.Finding) -> dict:
    return {
        "rule": detector.RULE_SHORT[f.rule],
        "indicator_function": f.function,
        "entry_trace": list(f.entry_trace),
        "tainted_state_vars": list(f.tainted_labels),
        "paths": [list(p) for p in f.paths],
        "traces": [t.to_json() for t in f.traces],
        "confidence": f.confidence,
        "witness": f.witness(),
    }


def build_report(m: ir.ContractModel, result: detector.DetectionResult, *,
                 partial: bool = False, errors=()) -> dict:
    doc = {
        "contract": None if m is None or m.address is None else f"0x{m.address:040x}",
        "findings": [finding_to_json(f) for f in result.findings] if result else [],
        "diagnostics": {
            "unreachable_indicators": [i.to_json() for i in result.unreachable] if result else [],
            "lift_warnings": [w.to_json() for w in m.warnings] if m is not None else [],
        },
    }
    if partial:
        doc["diagnostics"]["partial"] = True
        doc["diagnostics"]["errors"] = list(errors)
    return doc


def dumps_json(doc) -> bytes:
    """UTF-8, sorted keys, newline-terminated."""
    return (json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def validate_report(doc: dict) -> None:
    jsonschema.validate(doc, ir.load_schema("report.schema.json"))


def format_text(doc: dict) -> str:
    """One paragraph per finding, traces written as ``f → g → {vars}``."""
    paras = []
    for f in doc["findings"]:
        lines = [f"{f['rule']} at {f['indicator_function']} ({f['confidence']} confidence)",
                 "  entry: " + " → ".join(f["entry_trace"])]
        for t in f["traces"]:
            lines.append("  " + " → ".join(t["functions"] + ["{" + ",".join(t["state_vars"]) + "}"]))
        paras.append("\n".join(lines))
    diag = doc["diagnostics"]
    for i in diag["unreachable_indicators"]:
        paras.append(f"unreachable {i['rule']} indicator at {i['function']} {i['site']}")
    for w in diag["lift_warnings"]:
        paras.append(f"warning {w['code']} in {w['function']}: {w['detail']}")
    if not doc["findings"]:
        paras.insert(0, "no findings")
    return "\n\n".join(paras) + "\n"
