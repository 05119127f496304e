"""Command-line driver: analyze, disasm, sdg and corpus."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, corpus, deps, runner
from . import model as ir
from . import sdg as G
from .evm import TruncatedPush, disassemble, listing, read_code

log = logging.getLogger("srvscan")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


def _configure_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("SRV_SCAN_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _write(path: str | None, data: bytes) -> None:
    if path is None or path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srv-scan", description="Detect state-reverting vulnerabilities.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="analyze one contract")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--bytecode", metavar="F", help="runtime or creation bytecode (hex or binary)")
    src.add_argument("--model", metavar="F", help="contract model JSON")
    a.add_argument("--traces", metavar="F", help="transaction traces, JSON Lines")
    a.add_argument("--format", choices=("json", "text"), default="json")
    a.add_argument("--timeout-secs", type=_positive_int, default=runner.DEFAULT_TIMEOUT, metavar="N")
    a.add_argument("--fsm-k", type=_positive_int, default=2, metavar="N")
    a.add_argument("--min-support", type=_positive_int, default=1, metavar="N")
    a.add_argument("--no-tsd", action="store_true", help="ignore temporal-order edges when tainting")
    a.add_argument("--out", metavar="F", help="report file (default stdout)")
    for kind in runner.DUMP_KINDS:
        a.add_argument(f"--dump-{kind}", metavar="F", help=f"write the {kind} dump to F")

    d = sub.add_parser("disasm", help="print a disassembly listing")
    d.add_argument("file")

    s = sub.add_parser("sdg", help="export the state-dependency graph of a model")
    s.add_argument("--model", required=True, metavar="F")
    s.add_argument("--dot", metavar="F", help="DOT output (default stdout)")
    s.add_argument("--json", metavar="F", help="also write the graph as JSON")

    c = sub.add_parser("corpus", help="run a fixture directory against expectations")
    c.add_argument("dir")
    c.add_argument("--expected", required=True, metavar="F")
    c.add_argument("--jobs", type=_positive_int, default=1, metavar="N")
    c.add_argument("--timeout-secs", type=_positive_int, default=runner.DEFAULT_TIMEOUT, metavar="N")
    c.add_argument("--reports", metavar="DIR", help="write each contract's JSON report here")
    c.add_argument("--out", metavar="F", help="summary file (default stdout)")
    return p


def cmd_analyze(args) -> int:
    dumps = {k: getattr(args, f"dump_{k}") for k in runner.DUMP_KINDS if getattr(args, f"dump_{k}")}
    cfg = runner.AnalysisConfig(
        runner.BYTECODE if args.bytecode else runner.MODEL, args.bytecode or args.model,
        args.traces, args.fsm_k, args.min_support, args.timeout_secs, args.format,
        frozenset(dumps), not args.no_tsd,
    )
    for path in filter(None, (cfg.input_path, cfg.traces_path)):
        if not Path(path).is_file():
            print(f"srv-scan: error: {path}: no such file", file=sys.stderr)
            return runner.EXIT_ERROR
    out = runner.run_analysis(cfg)
    if out.exit_code == runner.EXIT_ERROR:
        print(f"srv-scan: error: {out.message}", file=sys.stderr)
        return out.exit_code
    if out.exit_code == runner.EXIT_TIMEOUT:
        print(f"srv-scan: {out.message}", file=sys.stderr)
    for kind, path in dumps.items():
        if kind in out.dumps:
            Path(path).write_text(out.dumps[kind], encoding="utf-8")
        else:
            log.warning("no %s dump for this input", kind)
    _write(args.out, out.render(args.format))
    return out.exit_code


def cmd_disasm(args) -> int:
    try:
        code = read_code(args.file)
        text = listing(disassemble(code))
    except OSError as exc:
        print(f"srv-scan: error: {args.file}: {exc.strerror}", file=sys.stderr)
        return runner.EXIT_ERROR
    except TruncatedPush as exc:
        print(f"srv-scan: error: {exc}", file=sys.stderr)
        return runner.EXIT_ERROR
    _write(None, text.encode("utf-8"))
    return runner.EXIT_CLEAN


def cmd_sdg(args) -> int:
    try:
        m = ir.load_model(Path(args.model).read_bytes())
    except OSError as exc:
        print(f"srv-scan: error: {args.model}: {exc.strerror}", file=sys.stderr)
        return runner.EXIT_ERROR
    except ir.ModelError as exc:
        print(f"srv-scan: error: {args.model}: {exc}", file=sys.stderr)
        return runner.EXIT_ERROR
    g = G.build_sdg(m, deps.extract_rw(m), deps.extract_asd(m))
    _write(args.dot, g.to_dot().encode("utf-8"))
    if args.json:
        Path(args.json).write_text(json.dumps(g.to_json(), indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    return runner.EXIT_CLEAN


def cmd_corpus(args) -> int:
    try:
        summary = corpus.run_corpus(args.dir, args.expected, jobs=args.jobs,
                                    timeout_seconds=args.timeout_secs)
    except (corpus.CorpusError, json.JSONDecodeError) as exc:
        print(f"srv-scan: error: {exc}", file=sys.stderr)
        return runner.EXIT_ERROR
    if args.reports:
        Path(args.reports).mkdir(parents=True, exist_ok=True)
        for r in summary.results:
            if r.report:
                (Path(args.reports) / f"{r.name}.report.json").write_bytes(r.report)
    _write(args.out, (json.dumps(summary.to_json(), indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return runner.EXIT_CLEAN if summary.passed else runner.EXIT_ERROR


COMMANDS = {"analyze": cmd_analyze, "disasm": cmd_disasm, "sdg": cmd_sdg, "corpus": cmd_corpus}


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
