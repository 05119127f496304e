"""Configured single-contract runs with a wall-clock budget enforced in a child process."""

from __future__ import annotations

import json
import logging
import multiprocessing as mp
import queue
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import fsm, pipeline, report
from . import model as ir
from .evm import analyze_bytecode, listing, read_code
from .evm.disasm import TruncatedPush

log = logging.getLogger(__name__)

BYTECODE = "bytecode"
MODEL = "model"
DUMP_KINDS = ("disasm", "cfg", "sdg", "fsm", "asd", "tsd")
DEFAULT_TIMEOUT = 600

EXIT_CLEAN = 0
EXIT_ERROR = 1
EXIT_FINDINGS = 2
EXIT_TIMEOUT = 3


class InputError(Exception):
    """Input file missing or unreadable."""


class ParseError(Exception):
    """Input file present but not a valid model, bytecode or trace file."""


@dataclass(frozen=True)
class AnalysisConfig:
    input_kind: str
    input_path: str
    traces_path: str | None = None
    fsm_k: int = fsm.DEFAULT_K
    min_support: int = 1
    timeout_seconds: float = DEFAULT_TIMEOUT
    output_format: str = "json"
    dumps: frozenset = field(default_factory=frozenset)
    use_tsd: bool = True

    def __post_init__(self):
        if self.input_kind not in (BYTECODE, MODEL):
            raise ValueError(f"input kind must be {BYTECODE!r} or {MODEL!r}")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout must be positive")
        if self.fsm_k < 1 or self.min_support < 1:
            raise ValueError("fsm_k and min_support must be positive")
        if self.output_format not in ("json", "text"):
            raise ValueError("output format must be json or text")
        unknown = set(self.dumps) - set(DUMP_KINDS)
        if unknown:
            raise ValueError(f"unknown dump kinds: {sorted(unknown)}")


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc


def run_pipeline(cfg: AnalysisConfig, progress=lambda stage: None) -> dict:
    """Run every stage in-process. Returns the report document and requested dumps."""
    dumps: dict[str, str] = {}
    progress("load")
    if cfg.input_kind == MODEL:
        data = _read_bytes(cfg.input_path)
        try:
            m = ir.load_model(data)
        except ir.ModelError as exc:
            raise ParseError(f"{cfg.input_path}: {exc}") from exc
    else:
        _read_bytes(cfg.input_path)
        code = read_code(cfg.input_path)
        progress("frontend")
        try:
            fr = analyze_bytecode(code)
        except TruncatedPush as exc:
            raise ParseError(f"{cfg.input_path}: {exc}") from exc
        m = fr.model
        if "disasm" in cfg.dumps:
            dumps["disasm"] = listing(fr.instructions)
        if "cfg" in cfg.dumps:
            dumps["cfg"] = fr.cfg.to_dot()
    traces = None
    if cfg.traces_path:
        progress("traces")
        text = _read_bytes(cfg.traces_path).decode("utf-8", errors="replace")
        try:
            traces = fsm.ingest_traces(text)
        except fsm.TraceError as exc:
            raise ParseError(f"{cfg.traces_path}: {exc}") from exc
    progress("analysis")
    a = pipeline.analyze_model(m, traces, fsm_k=cfg.fsm_k, min_support=cfg.min_support,
                               use_tsd=cfg.use_tsd)
    if "sdg" in cfg.dumps:
        dumps["sdg"] = a.graph.to_dot()
    if "fsm" in cfg.dumps and a.machine is not None:
        dumps["fsm"] = a.machine.to_dot()
    if "asd" in cfg.dumps:
        dumps["asd"] = json.dumps([e.to_json() for e in a.asd], indent=2) + "\n"
    if "tsd" in cfg.dumps:
        dumps["tsd"] = json.dumps([e.to_json() for e in a.tsd], indent=2) + "\n"
    progress("report")
    return {"report": report.build_report(m, a.result), "dumps": dumps}


@dataclass(frozen=True)
class Outcome:
    exit_code: int
    report: dict | None = None
    dumps: dict = field(default_factory=dict)
    message: str = ""
    elapsed: float = 0.0

    def render(self, fmt: str = "json") -> bytes:
        if self.report is None:
            return b""
        if fmt == "text":
            return report.format_text(self.report).encode("utf-8")
        return report.dumps_json(self.report)


def _exit_for(doc: dict) -> int:
    return EXIT_FINDINGS if doc["findings"] else EXIT_CLEAN


def _child(cfg: AnalysisConfig, q) -> None:
    try:
        out = run_pipeline(cfg, lambda stage: q.put(("stage", stage)))
        q.put(("done", out))
    except (InputError, ParseError) as exc:
        q.put(("error", str(exc)))
    except Exception as exc:  # report anything unexpected instead of hanging the parent
        q.put(("error", f"internal error: {type(exc).__name__}: {exc}"))


def _partial_report(stage: str, seconds: float) -> dict:
    doc = report.build_report(None, None, partial=True,
                              errors=[f"timeout after {seconds:g} s during stage {stage!r}"])
    return doc


def run_analysis(cfg: AnalysisConfig) -> Outcome:
    """Run ``cfg`` in a child process, killing it when the budget runs out."""
    start = time.monotonic()
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    q = ctx.Queue()
    proc = ctx.Process(target=_child, args=(cfg, q), daemon=True)
    proc.start()
    deadline = start + cfg.timeout_seconds
    stage = "start"
    try:
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise queue.Empty
            try:
                kind, payload = q.get(timeout=min(remaining, 0.25))
            except queue.Empty:
                if proc.is_alive():
                    continue
                try:
                    kind, payload = q.get(timeout=0.5)
                except queue.Empty:
                    return Outcome(EXIT_ERROR, message=f"analysis process died (exit {proc.exitcode})",
                                   elapsed=time.monotonic() - start)
            if kind == "stage":
                stage = payload
                log.debug("stage %s", stage)
            elif kind == "error":
                return Outcome(EXIT_ERROR, message=payload, elapsed=time.monotonic() - start)
            else:
                doc = payload["report"]
                return Outcome(_exit_for(doc), doc, payload["dumps"], elapsed=time.monotonic() - start)
    except queue.Empty:
        return Outcome(EXIT_TIMEOUT, _partial_report(stage, cfg.timeout_seconds),
                       message=f"timeout after {cfg.timeout_seconds:g} s during stage {stage!r}",
                       elapsed=time.monotonic() - start)
    finally:
        if proc.is_alive():
            proc.terminate()
            proc.join(2)
            if proc.is_alive():
                proc.kill()
        proc.join(2)
        q.close()
