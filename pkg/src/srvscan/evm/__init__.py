from .cfg import BasicBlock, Cfg, Edge, build_cfg
from .disasm import Instruction, TruncatedPush, assemble, disassemble, listing, read_code
from .frontend import FrontendResult, analyze_bytecode, extract_runtime
from .functions import FunctionEntry, classify_accesses, recover_functions
from .lift import lift_to_model
from .loops import Loop, find_loops

__all__ = [
    "BasicBlock", "Cfg", "Edge", "FrontendResult", "FunctionEntry", "Instruction", "Loop",
    "TruncatedPush", "analyze_bytecode", "assemble", "build_cfg", "classify_accesses",
    "disassemble", "extract_runtime", "find_loops", "lift_to_model", "listing", "read_code",
    "recover_functions",
]
