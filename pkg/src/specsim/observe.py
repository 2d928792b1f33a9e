"""Observation traces, run statistics, non-interference checking, and the
brute-force information-flow oracle used by the property tests."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional, Sequence, Union

from .core import (
    CoreConfig, CycleReport, ObservationEvent, RunResult, Simulator, UopRecord,
)
from .isa import Program, interpret
from .schemes import SchemeHooks, make_scheme

STATS_SCHEMA = "runstats-v1"


@dataclass
class RunStats:
    """Microarchitectural counters for one finished run."""

    cycles: int
    committed_instrs: int
    ipc: float
    loads_forwarded: int
    forwarding_errors: int
    squashes: int
    taint_delays: int
    nop_issues: int
    partial_store_issues: int
    pending_broadcast_peak: int
    slot_active: int
    slot_stall_empty: int
    slot_stall_operands: int
    slot_stall_taint: int
    slot_stall_mem_port: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return [getattr(self, name) for name in self.columns()]


def simulate(program: Program, config: CoreConfig,
             scheme: Union[str, SchemeHooks],
             max_cycles: int = 2_000_000) -> RunResult:
    """Run one program to completion under one scheme."""
    if isinstance(scheme, str):
        scheme = make_scheme(scheme)
    return Simulator(program, config, scheme).run(max_cycles=max_cycles)


def collect_stats(result: RunResult) -> RunStats:
    """Build RunStats from the simulator's live counters."""
    c = result.counters
    return RunStats(
        cycles=c["cycles"],
        committed_instrs=c["committed_instrs"],
        ipc=c["committed_instrs"] / c["cycles"],
        loads_forwarded=c["loads_forwarded"],
        forwarding_errors=c["forwarding_errors"],
        squashes=c["squashes"],
        taint_delays=c["taint_delays"],
        nop_issues=c["nop_issues"],
        partial_store_issues=c["partial_store_issues"],
        pending_broadcast_peak=c["pending_broadcast_peak"],
        slot_active=c["slot_active"],
        slot_stall_empty=c["slot_stall_empty"],
        slot_stall_operands=c["slot_stall_operands"],
        slot_stall_taint=c["slot_stall_taint"],
        slot_stall_mem_port=c["slot_stall_mem_port"],
    )


def recount_stats(result: RunResult) -> RunStats:
    """Recompute RunStats purely from the CycleReport stream; must agree
    with collect_stats for every run."""
    cycles = len(result.reports)
    committed = 0
    forwarded = errors = squashes = delays = nops = partial = 0
    peak = 0
    slots = {"active": 0, "empty": 0, "operands": 0, "taint": 0, "mem_port": 0}
    for report in result.reports:
        committed += len(report.committed)
        store_parts: dict[int, set[str]] = {}
        for seq, part in report.issued:
            if part == "nop":
                nops += 1
            elif part in ("addr", "data"):
                store_parts.setdefault(seq, set()).add(part)
        partial += sum(1 for parts in store_parts.values() if len(parts) == 1)
        for note in report.notes:
            tag = note[0]
            if tag == "forward":
                forwarded += 1
            elif tag == "fwd_error":
                errors += 1
            elif tag in ("squash", "flush"):
                squashes += 1
            elif tag == "taint_delayed":
                delays += note[1]
            elif tag == "nda_pending":
                peak = max(peak, note[1])
        active, idle, cause = report.slots
        slots["active"] += active
        if idle:
            slots[cause] += idle
    return RunStats(
        cycles=cycles, committed_instrs=committed, ipc=committed / cycles,
        loads_forwarded=forwarded, forwarding_errors=errors, squashes=squashes,
        taint_delays=delays, nop_issues=nops, partial_store_issues=partial,
        pending_broadcast_peak=peak, slot_active=slots["active"],
        slot_stall_empty=slots["empty"], slot_stall_operands=slots["operands"],
        slot_stall_taint=slots["taint"], slot_stall_mem_port=slots["mem_port"],
    )


def check_architectural_equivalence(result: RunResult, program: Program):
    """Committed state must equal the in-order interpreter's: schemes change
    timing, never function. Raises AssertionError with the first mismatch."""
    ref = interpret(program)
    assert result.committed_pcs == ref.committed_pcs, (
        "committed instruction streams differ at index "
        f"{_first_diff(result.committed_pcs, ref.committed_pcs)}"
    )
    assert result.final_regs == ref.regs, (
        f"register state differs: {result.final_regs} vs {ref.regs}"
    )
    got = {a: v for a, v in result.final_mem.items()}
    want = {a: v for a, v in ref.memory.items()}
    assert got == want, f"memory state differs: {got} vs {want}"


def _first_diff(a: Sequence, b: Sequence) -> int:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return min(len(a), len(b))


# ---------------------------------------------------------------------------
# Non-interference
# ---------------------------------------------------------------------------

@dataclass
class Divergence:
    variant_index: int
    position: int
    baseline_event: Optional[tuple]
    variant_event: Optional[tuple]


@dataclass
class NIVerdict:
    indistinguishable: bool
    divergence: Optional[Divergence] = None

    def __str__(self):
        if self.indistinguishable:
            return "indistinguishable"
        d = self.divergence
        return (f"distinguishable(variant={d.variant_index}, pos={d.position}, "
                f"{d.baseline_event} vs {d.variant_event})")


def validate_secret_isolation(program: Program):
    """The committed path must never load from a secret cell; otherwise the
    program cannot be used for non-interference testing."""
    ref = interpret(program)
    touched = set(ref.load_addrs) & program.secret_cells
    if touched:
        raise ValueError(f"committed path reads secret cells {sorted(touched)}")


def check_noninterference(program: Program, variants: Sequence[dict[int, int]],
                          scheme: Union[str, SchemeHooks],
                          config: CoreConfig) -> NIVerdict:
    """Run each secret assignment and compare full observation traces.

    Traces compare by exact (cycle, channel, value) tuples, so timing-only
    differences count as divergence. Variants must assign only secret cells.
    """
    if len(variants) < 2:
        raise ValueError("need at least two secret assignments")
    for variant in variants:
        bad = set(variant) - program.secret_cells
        if bad:
            raise ValueError(f"variant touches non-secret cells {sorted(bad)}")
    name = scheme if isinstance(scheme, str) else scheme.name
    validate_secret_isolation(program.with_secret_values(variants[0]))

    traces: list[list[tuple]] = []
    for variant in variants:
        run = simulate(program.with_secret_values(variant), config, name)
        traces.append([ev.key() for ev in run.obs])

    base = traces[0]
    for idx in range(1, len(traces)):
        other = traces[idx]
        for pos in range(max(len(base), len(other))):
            a = base[pos] if pos < len(base) else None
            b = other[pos] if pos < len(other) else None
            if a != b:
                return NIVerdict(False, Divergence(idx, pos, a, b))
    return NIVerdict(True)


# ---------------------------------------------------------------------------
# Information-flow oracle
# ---------------------------------------------------------------------------

class FlowOracle:
    """Recomputes youngest-root-of-taint by dataflow-graph traversal over a
    recorded run, independent of the scheme's own bookkeeping.

    A load cuts the chain: its output's root is the load itself; any other
    op's output carries the youngest root among its operand producers.
    Because shadows resolve in order, loads cross the visibility point in
    sequence order, so the youngest rooted ancestor is the last to clear and
    a single root per value suffices.
    """

    def __init__(self, trace: dict[int, UopRecord]):
        self.trace = trace
        self._memo: dict[int, Optional[int]] = {}

    def value_root(self, seq: Optional[int]) -> Optional[int]:
        """Root of the value produced by uop ``seq`` (None for values that
        predate the recorded window)."""
        if seq is None:
            return None
        if seq in self._memo:
            return self._memo[seq]
        rec = self.trace[seq]
        if rec.is_load:
            root: Optional[int] = seq
        else:
            roots = [self.value_root(p) for p in rec.value_srcs]
            live = [r for r in roots if r is not None]
            root = max(live) if live else None
        self._memo[seq] = root
        return root

    def gate_root(self, seq: int, parts: Sequence[str]) -> Optional[int]:
        """Root reached through the producers of the given operand parts."""
        rec = self.trace[seq]
        roots = []
        for part in parts:
            for producer in rec.gate_srcs.get(part, ()):
                roots.append(self.value_root(producer))
        live = [r for r in roots if r is not None]
        return max(live) if live else None

    def speculative_at(self, root: Optional[int], cycle: int) -> bool:
        if root is None:
            return False
        nonspec = self.trace[root].nonspec_cycle
        return nonspec is None or nonspec > cycle

    def yrot_at(self, seq: int, parts: Sequence[str],
                cycle: int) -> Optional[int]:
        """The op's oracle YRoT at a given cycle: its youngest load ancestor
        while that ancestor is still speculative, untainted afterwards."""
        root = self.gate_root(seq, parts)
        return root if self.speculative_at(root, cycle) else None


def dift_oracle(trace: dict[int, UopRecord]) -> FlowOracle:
    """Build the flow oracle for a recorded run."""
    return FlowOracle(trace)


_TRANSMITTER_PARTS = {"LOAD": ("op",), "STORE": ("addr",),
                      "BEQ": ("op",), "BNE": ("op",)}


def verify_stt_decisions(result: RunResult, variant: str) -> list[str]:
    """Check every transmitter execution/delay decision of an STT run
    against the flow oracle; returns a list of mismatch descriptions.

    Soundness: an executed transmitter had no speculative load ancestor at
    its decision point. Precision: a delayed transmitter had one. The rename
    variant's decision at cycle c uses taint state as of c - 1 (untaint
    broadcasts reach select one cycle later); the issue variant's uses c.
    """
    if variant not in ("rename", "issue"):
        raise ValueError("variant must be 'rename' or 'issue'")
    delta = 1 if variant == "rename" else 0
    oracle = FlowOracle(result.trace)
    mismatches = []
    for rec in result.trace.values():
        tx_parts = _TRANSMITTER_PARTS.get(rec.opcode)
        if tx_parts is None:
            continue
        if rec.opcode == "STORE" and variant == "rename":
            gate_parts: tuple = ("addr", "data")  # single joint root
        else:
            gate_parts = tx_parts
        root = oracle.gate_root(rec.seq, gate_parts)
        for part, cycle in rec.executed:
            if part not in tx_parts:
                continue
            if oracle.speculative_at(root, cycle - delta):
                mismatches.append(
                    f"seq {rec.seq} ({rec.opcode}) executed {part} at cycle "
                    f"{cycle} while oracle root {root} was speculative")
        for part, cycle in list(rec.delayed) + list(rec.killed):
            if part not in tx_parts:
                continue
            if not oracle.speculative_at(root, cycle - delta):
                mismatches.append(
                    f"seq {rec.seq} ({rec.opcode}) delayed {part} at cycle "
                    f"{cycle} though oracle root {root} was clear")
    return mismatches
