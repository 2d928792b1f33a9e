"""specsim: a deterministic out-of-order core simulator for studying
in-core secure speculation schemes against an unsafe baseline."""

from .core import CoreConfig, ObservationEvent, PRESETS, RunResult, Simulator, preset
from .isa import (
    ArchInstr, Opcode, Program, assemble, disassemble, gen_spectre_v1,
    gen_workload, interpret,
)
from .observe import (
    RunStats, check_noninterference, collect_stats, dift_oracle, recount_stats,
    simulate, verify_stt_decisions,
)
from .schemes import SCHEME_NAMES, SECURE_SCHEMES, make_scheme
from .shadows import ShadowLedger
from .timing import LogicCost, cost_nda, cost_stt_issue, cost_stt_rename

__all__ = [
    "ArchInstr", "CoreConfig", "LogicCost", "ObservationEvent", "Opcode",
    "PRESETS", "Program", "RunResult", "RunStats", "SCHEME_NAMES",
    "SECURE_SCHEMES", "ShadowLedger", "Simulator", "assemble",
    "check_noninterference", "collect_stats", "cost_nda", "cost_stt_issue",
    "cost_stt_rename", "dift_oracle", "disassemble", "gen_spectre_v1",
    "gen_workload", "interpret", "make_scheme", "preset", "recount_stats",
    "simulate", "verify_stt_decisions",
]
