"""Cycle-stepped out-of-order core.

Stage evaluation order within a cycle is fixed: commit, execute/complete,
issue (wakeup/select), rename, fetch. Producer result broadcasts are visible
to wakeup in the same cycle they occur (the execute phase runs before the
issue phase); renamed instructions become visible to issue in the following
cycle (the rename phase runs after the issue phase).

Timing conventions:

* An operation selected at cycle t computes its result immediately but the
  result becomes usable by consumers at t + latency (ALU 1, MUL 3, loads
  1 on a store forward else the L1 or backing latency).
* Branches and store address generation resolve their side effects (shadow
  resolution, misprediction recovery, alias checks) in the execute phase of
  cycle t + 1.
* With speculative wakeup enabled, a load's consumers may issue at the cycle
  the data broadcast occurs; with it disabled they may issue one cycle later.

Store-to-load forwarding speculates past older stores with unknown
addresses. A load that is later found to have read stale data is marked,
never declared non-speculative, and triggers a full pipeline flush with
refetch when it reaches the head of the reorder buffer (loads carry no
rename checkpoints, so recovery happens at the commit point).

The free list is a monotone ring with an allocation index; checkpoints and
reorder-buffer entries record the index, and recovery restores it. Registers
freed by commits after a checkpoint was taken are appended behind the index
and therefore survive restoration.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, asdict
from typing import Optional, TYPE_CHECKING

from .isa import (
    ArchInstr, Opcode, Program, BRANCH_OPS, WRITER_OPS, NUM_REGS, WORD_MASK,
)
from .shadows import ShadowLedger

if TYPE_CHECKING:  # pragma: no cover
    from .schemes import SchemeHooks

ALU_LAT = 1
MUL_LAT = 3
FWD_LAT = 1
RESOLVE_LAT = 1  # branch resolution / store address-generation visibility
CHECKPOINT_CAPACITY = 16
FETCH_BUFFER_FACTOR = 2

PZERO = 0  # physical register pinned to the architectural zero register


class SimulationTimeout(RuntimeError):
    pass


@dataclass
class CoreConfig:
    """Pipeline shape. The four presets mirror the width/memory-port/ROB
    scaling of the evaluated small..mega core configurations."""

    width: int = 2
    rob_entries: int = 64
    phys_regs: int = 96
    mem_ports: int = 1
    iq_entries: int = 16
    l1_latency_cycles: int = 3
    mem_latency_cycles: int = 24
    predictor: str = "always_taken"  # always_taken | never_taken | scripted
    predictor_script: tuple[int, ...] = ()
    speculative_wakeup: bool = True

    def __post_init__(self):
        if not 1 <= self.width <= 8:
            raise ValueError("width must be in 1..8")
        if self.rob_entries < 1 or self.mem_ports < 1 or self.iq_entries < 1:
            raise ValueError("rob_entries, mem_ports, iq_entries must be >= 1")
        if self.l1_latency_cycles < 1 or self.mem_latency_cycles < 1:
            raise ValueError("latencies must be >= 1")
        if self.phys_regs < NUM_REGS + self.rob_entries:
            raise ValueError("phys_regs must be >= 32 + rob_entries")
        if self.predictor not in ("always_taken", "never_taken", "scripted"):
            raise ValueError(f"unknown predictor {self.predictor!r}")
        if self.predictor == "scripted" and not self.predictor_script:
            raise ValueError("scripted predictor needs a non-empty script")


PRESETS = {
    "small": CoreConfig(width=1, rob_entries=32, phys_regs=64, mem_ports=1,
                        iq_entries=8),
    "medium": CoreConfig(width=2, rob_entries=64, phys_regs=96, mem_ports=1,
                         iq_entries=16),
    "large": CoreConfig(width=3, rob_entries=96, phys_regs=128, mem_ports=1,
                        iq_entries=24),
    "mega": CoreConfig(width=4, rob_entries=128, phys_regs=160, mem_ports=2,
                       iq_entries=32),
}


def preset(name: str) -> CoreConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; have {sorted(PRESETS)}") from None
    return CoreConfig(**asdict(base))


@dataclass
class MicroOp:
    seq: int
    pc: int
    instr: ArchInstr
    pred_taken: bool = False
    pdst: Optional[int] = None
    prev_pdst: Optional[int] = None
    psrc1: Optional[int] = None
    psrc2: Optional[int] = None
    alloc_idx_at_rename: int = 0
    rename_cycle: int = 0
    squashed: bool = False
    # Store halves: cycle each half issued, None while outstanding.
    addr_issued: Optional[int] = None
    data_issued: Optional[int] = None
    issued_cycle: Optional[int] = None
    # Taint root assigned at rename (rename-stage scheme); None = untainted.
    gate_root: Optional[int] = None

    @property
    def kind(self) -> Opcode:
        return self.instr.opcode

    @property
    def is_transmitter(self) -> bool:
        return self.instr.is_transmitter

    @property
    def is_load(self) -> bool:
        return self.kind is Opcode.LOAD

    @property
    def is_store(self) -> bool:
        return self.kind is Opcode.STORE

    @property
    def is_branch(self) -> bool:
        return self.kind in BRANCH_OPS


@dataclass
class RobEntry:
    uop: MicroOp
    state: str = "renamed"  # renamed | issued | completed | squashed
    fwd_error: bool = False
    is_load_nonspec_broadcasted: bool = False
    value: Optional[int] = None


class Renamed(tuple):
    """(psrc1, psrc2, pdst, prev_pdst) quadruple from renaming one instruction."""
    __slots__ = ()

    def __new__(cls, psrc1, psrc2, pdst, prev_pdst):
        return super().__new__(cls, (psrc1, psrc2, pdst, prev_pdst))

    psrc1 = property(lambda self: self[0])
    psrc2 = property(lambda self: self[1])
    pdst = property(lambda self: self[2])
    prev_pdst = property(lambda self: self[3])


class RenameState:
    """RAT plus a ring-structured free list with an allocation index.

    The group renamer reads all sources against the RAT of the previous
    cycle and repairs same-cycle dependencies to the in-group writer's fresh
    physical register, which is equivalent to renaming the group serially.
    """

    def __init__(self, phys_regs: int, initial_rat: Optional[list[int]] = None,
                 free_list: Optional[list[int]] = None):
        self.phys_regs = phys_regs
        if initial_rat is None:
            initial_rat = list(range(NUM_REGS))
        self.rat = list(initial_rat)
        if free_list is None:
            live = set(self.rat)
            free_list = [p for p in range(phys_regs) if p not in live]
        self.ring = list(free_list)
        self.alloc_idx = 0
        self.checkpoints: dict[int, tuple[list[int], int]] = {}

    def free_count(self) -> int:
        return len(self.ring) - self.alloc_idx

    def free_set(self) -> set[int]:
        return set(self.ring[self.alloc_idx:])

    def rename_one(self, instr: ArchInstr) -> Optional[Renamed]:
        """Rename a single instruction; None when the free list is empty."""
        op = instr.opcode
        psrc1 = psrc2 = None
        if op in (Opcode.ADD, Opcode.MUL) or op in BRANCH_OPS:
            psrc1, psrc2 = self.rat[instr.src1], self.rat[instr.src2]
        elif op in (Opcode.ADDI, Opcode.LOAD):
            psrc1 = self.rat[instr.src1]
        elif op is Opcode.STORE:
            psrc1, psrc2 = self.rat[instr.src1], self.rat[instr.src2]
        pdst = prev = None
        if op in WRITER_OPS and instr.dst != 0:
            if self.free_count() == 0:
                return None
            pdst = self.ring[self.alloc_idx]
            self.alloc_idx += 1
            prev = self.rat[instr.dst]
            self.rat[instr.dst] = pdst
        return Renamed(psrc1, psrc2, pdst, prev)

    def rename_group(self, group: list[ArchInstr]) -> list[Renamed]:
        """Rename up to a full group; stops early on free-list exhaustion and
        returns the partial group (the caller stalls the rest)."""
        out = []
        for instr in group:
            renamed = self.rename_one(instr)
            if renamed is None:
                break
            out.append(renamed)
        return out

    def release(self, preg: int):
        self.ring.append(preg)

    def checkpoint(self, seq: int):
        if len(self.checkpoints) >= CHECKPOINT_CAPACITY:
            raise RuntimeError("checkpoint capacity exhausted")
        self.checkpoints[seq] = (list(self.rat), self.alloc_idx)

    def has_checkpoint_space(self) -> bool:
        return len(self.checkpoints) < CHECKPOINT_CAPACITY

    def restore(self, seq: int):
        rat, idx = self.checkpoints.pop(seq)
        self.rat = list(rat)
        self.alloc_idx = idx
        self.drop_younger(seq)

    def drop_younger(self, seq: int):
        for key in [k for k in self.checkpoints if k > seq]:
            del self.checkpoints[key]

    def drop(self, seq: int):
        self.checkpoints.pop(seq, None)


@dataclass
class LoadQueueEntry:
    uop: MicroOp
    rob: RobEntry
    address: Optional[int] = None
    value: Optional[int] = None
    forwarded_from: Optional[int] = None  # store seq; None = memory/unknown
    exec_cycle: Optional[int] = None
    sleeping_on: Optional[int] = None  # store seq whose data we wait for
    error: bool = False
    nonspec_cycle: Optional[int] = None
    completed: bool = False


@dataclass
class StoreQueueEntry:
    uop: MicroOp
    rob: RobEntry
    address: Optional[int] = None
    data: Optional[int] = None


@dataclass
class UopRecord:
    """Per-micro-op trace record; the raw material for the flow oracle."""

    seq: int
    pc: int
    opcode: str
    is_load: bool
    is_transmitter: bool
    # Producer seqs per issue part ("op", or "addr"/"data" for stores);
    # None entries are values that predate the window (never tainted).
    gate_srcs: dict[str, tuple]
    value_srcs: tuple
    rename_cycle: int = 0
    executed: list[tuple[str, int]] = field(default_factory=list)
    delayed: list[tuple[str, int]] = field(default_factory=list)
    killed: list[tuple[str, int]] = field(default_factory=list)
    nonspec_cycle: Optional[int] = None
    squashed: bool = False
    committed: bool = False
    error: bool = False


@dataclass
class CycleReport:
    cycle: int
    committed: list[int] = field(default_factory=list)
    issued: list[tuple[int, str]] = field(default_factory=list)
    completed: list[int] = field(default_factory=list)
    fetched: int = 0
    notes: list[tuple] = field(default_factory=list)
    slots: tuple[int, int, str] = (0, 0, "empty")  # active, idle, idle cause

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


@dataclass
class ObservationEvent:
    """An observable, operand-dependent action: a cache access presenting an
    address, or a branch resolution. Squashed work's events stay in the
    trace; squash does not erase transient leakage."""

    cycle: int
    channel: str  # cache_access | branch_resolve
    value: tuple

    def key(self) -> tuple:
        return (self.cycle, self.channel, self.value)


COUNTER_NAMES = (
    "cycles", "committed_instrs", "loads_forwarded", "forwarding_errors",
    "squashes", "taint_delays", "nop_issues", "partial_store_issues",
    "pending_broadcast_peak", "slot_active", "slot_stall_empty",
    "slot_stall_operands", "slot_stall_taint", "slot_stall_mem_port",
)


@dataclass
class RunResult:
    config: CoreConfig
    scheme_name: str
    counters: dict[str, int]
    reports: list[CycleReport]
    obs: list[ObservationEvent]
    trace: dict[int, UopRecord]
    final_regs: list[int]
    final_mem: dict[int, int]
    committed_pcs: list[int]


class Simulator:
    """One out-of-order core instance running one program under one scheme.

    Single-threaded; independent instances may run concurrently.
    """

    def __init__(self, program: Program, config: CoreConfig,
                 scheme: "SchemeHooks"):
        self.program = program
        self.config = config
        self.scheme = scheme
        self.ledger = ShadowLedger(capacity=config.rob_entries)
        self.rename = RenameState(config.phys_regs)
        self.arat = list(range(NUM_REGS))
        self.prf = [0] * config.phys_regs
        self.ready_at: list[float] = [math.inf] * config.phys_regs
        for p in range(NUM_REGS):
            self.ready_at[p] = 0
        self.preg_writer: list[Optional[int]] = [None] * config.phys_regs

        self.commit_regs = [0] * NUM_REGS
        self.memory = dict(program.data_init)

        self.rob: deque[RobEntry] = deque()
        self.iq: list[MicroOp] = []
        self.lq: list[LoadQueueEntry] = []
        self.sq: list[StoreQueueEntry] = []
        self.sleepers: dict[int, list[LoadQueueEntry]] = {}  # store seq -> waiters
        self.events: dict[int, list[tuple]] = {}

        self.fetch_pc = 0
        self.fetch_queue: deque[tuple[int, ArchInstr, bool]] = deque()
        self.halted_fetch = False
        self.fetch_blocked = False
        self.script_pos = 0

        self.cycle = 0
        self.next_seq = 0
        self.halted = False

        self.counters: dict[str, int] = {name: 0 for name in COUNTER_NAMES}
        self.reports: list[CycleReport] = []
        self.obs: list[ObservationEvent] = []
        self.trace: dict[int, UopRecord] = {}
        self.committed_pcs: list[int] = []
        self._active_report = CycleReport(-1)

        self.spec_wakeup = (config.speculative_wakeup
                            and scheme.uses_speculative_wakeup)
        scheme.bind(self)

    # ------------------------------------------------------------------
    # Driving
    # ------------------------------------------------------------------

    def run(self, max_cycles: int = 2_000_000) -> RunResult:
        while not self.halted:
            if self.cycle >= max_cycles:
                raise SimulationTimeout(f"no HALT commit within {max_cycles} cycles")
            self.step()
        return RunResult(
            config=self.config, scheme_name=self.scheme.name,
            counters=dict(self.counters), reports=self.reports, obs=self.obs,
            trace=self.trace, final_regs=list(self.commit_regs),
            final_mem=dict(self.memory), committed_pcs=self.committed_pcs,
        )

    def step(self) -> CycleReport:
        if self.halted:
            raise RuntimeError("simulator already halted")
        report = CycleReport(self.cycle)
        self._active_report = report
        self.fetch_blocked = False
        self._commit(report)
        if not self.halted:
            self._execute(report)
            self._issue(report)
            self._rename(report)
            self._fetch(report)
        else:
            # Slot accounting still covers the halt cycle.
            report.slots = (0, self.config.width, "empty")
            self.counters["slot_stall_empty"] += self.config.width
            self.counters["cycles"] = self.cycle + 1
        self.reports.append(report)
        self.cycle += 1
        return report

    def _note(self, report: CycleReport, *item):
        report.notes.append(item)

    # ------------------------------------------------------------------
    # Commit
    # ------------------------------------------------------------------

    def _commit(self, report: CycleReport):
        committed = 0
        while committed < self.config.width and self.rob:
            entry = self.rob[0]
            if entry.fwd_error:
                self._flush_at_head(entry, report)
                return
            if entry.state != "completed":
                break
            uop = entry.uop
            if uop.is_store:
                sqe = self._sq_entry(uop.seq)
                self.memory[sqe.address] = sqe.data
                # Commit-time alias check; address generation already
                # adjudicated younger loads, so this is a safety net.
                self._alias_check(sqe, report)
                self.sq.remove(sqe)
            elif uop.pdst is not None:
                self.commit_regs[uop.instr.dst] = entry.value
                self.arat[uop.instr.dst] = uop.pdst
                if uop.prev_pdst is not None:
                    self.rename.release(uop.prev_pdst)
            if uop.is_load:
                self.lq.remove(self._lq_entry(uop.seq))
            self.rob.popleft()
            entry.state = "retired"
            self.trace[uop.seq].committed = True
            self.committed_pcs.append(uop.pc)
            self.counters["committed_instrs"] += 1
            report.committed.append(uop.seq)
            committed += 1
            if uop.kind is Opcode.HALT:
                self.halted = True
                return

    def _flush_at_head(self, entry: RobEntry, report: CycleReport):
        """Forwarding-error recovery: squash everything in flight (including
        the stale load) and refetch from the load's pc. The RAT resets to the
        committed mapping; the free-ring index rewinds to the load's rename
        point, behind which commit-released registers remain available."""
        uop = entry.uop
        self.counters["squashes"] += 1
        self._note(report, "flush", uop.seq)
        for rob_entry in self.rob:
            rob_entry.state = "squashed"
            rob_entry.uop.squashed = True
            self.trace[rob_entry.uop.seq].squashed = True
        self.rob.clear()
        self.iq.clear()
        self.lq.clear()
        self.sq.clear()
        self.sleepers.clear()
        self.ledger.clear()
        self.rename.rat = list(self.arat)
        self.rename.alloc_idx = uop.alloc_idx_at_rename
        self.rename.checkpoints.clear()
        self.scheme.on_flush()
        self.fetch_pc = uop.pc
        self.fetch_queue.clear()
        self.halted_fetch = False
        self.fetch_blocked = True

    # ------------------------------------------------------------------
    # Execute / complete
    # ------------------------------------------------------------------

    def _execute(self, report: CycleReport):
        self.scheme.on_cycle(self.cycle)
        pending = self.events.pop(self.cycle, [])
        pending.sort(key=lambda ev: (ev[0], ev[1]))
        for ev in pending:
            seq, kind = ev[0], ev[1]
            if kind == "alu":
                _, _, uop, rob_entry, value = ev
                if uop.squashed:
                    continue
                self.prf[uop.pdst] = value
                self.ready_at[uop.pdst] = self.cycle
                rob_entry.state = "completed"
                rob_entry.value = value
                report.completed.append(seq)
            elif kind == "load":
                _, _, lqe = ev
                if lqe.uop.squashed:
                    continue
                self._complete_load(lqe, report)
            elif kind == "branch":
                _, _, uop, rob_entry, taken = ev
                if uop.squashed:
                    continue
                self._resolve_branch(uop, rob_entry, taken, report)
            elif kind == "store_addr":
                _, _, sqe = ev
                if sqe.uop.squashed:
                    continue
                self._store_addr_resolved(sqe, report)
            elif kind == "store_done":
                _, _, uop, rob_entry = ev
                if uop.squashed:
                    continue
                rob_entry.state = "completed"
                report.completed.append(seq)

    def _complete_load(self, lqe: LoadQueueEntry, report: CycleReport):
        uop = lqe.uop
        lqe.completed = True
        if uop.pdst is not None:
            self.prf[uop.pdst] = lqe.value
        lqe.rob.state = "completed"
        lqe.rob.value = lqe.value
        report.completed.append(uop.seq)
        # A load with a detected forwarding error holds stale data; it must
        # never broadcast, and it never becomes non-speculative.
        if lqe.error:
            return
        if self.scheme.on_load_complete(uop, self.cycle):
            self.broadcast_load(lqe, self.cycle, report)

    def broadcast_load(self, lqe: LoadQueueEntry, cycle: int,
                       report: Optional[CycleReport] = None,
                       deferred: bool = False):
        """Make a completed load's result visible to consumers."""
        uop = lqe.uop
        if uop.pdst is not None:
            self.ready_at[uop.pdst] = cycle + (0 if self.spec_wakeup else 1)
        lqe.rob.is_load_nonspec_broadcasted = True
        if deferred:
            self._note(self._active_report, "nda_broadcast", uop.seq)

    def _resolve_branch(self, uop: MicroOp, rob_entry: RobEntry, taken: bool,
                        report: CycleReport):
        self.obs.append(ObservationEvent(self.cycle, "branch_resolve",
                                         (uop.seq, int(taken))))
        rob_entry.state = "completed"
        report.completed.append(uop.seq)
        mispredicted = taken != uop.pred_taken
        if mispredicted:
            self._recover(uop, taken, report)
        else:
            self.rename.drop(uop.seq)
        self._resolve_shadow(uop.seq, report)

    def _recover(self, branch: MicroOp, taken: bool, report: CycleReport):
        squash_seq = branch.seq
        self.counters["squashes"] += 1
        self._note(report, "squash", squash_seq)
        while self.rob and self.rob[-1].uop.seq > squash_seq:
            entry = self.rob.pop()
            entry.state = "squashed"
            entry.uop.squashed = True
            self.trace[entry.uop.seq].squashed = True
        self.iq = [u for u in self.iq if u.seq <= squash_seq]
        self.lq = [e for e in self.lq if e.uop.seq <= squash_seq]
        self.sq = [e for e in self.sq if e.uop.seq <= squash_seq]
        self.sleepers = {
            seq: kept for seq, kept in
            ((seq, [w for w in ws if not w.uop.squashed])
             for seq, ws in self.sleepers.items())
            if kept and seq <= squash_seq
        }
        self.ledger.squash(squash_seq)
        self.rename.restore(squash_seq)
        self.scheme.on_squash(squash_seq)
        self.scheme.on_recovery(squash_seq)
        self.fetch_pc = branch.instr.imm if taken else branch.pc + 1
        self.fetch_queue.clear()
        self.halted_fetch = False
        self.fetch_blocked = True

    def _resolve_shadow(self, seq: int, report: CycleReport):
        before = self.ledger.visibility_seq
        after = self.ledger.resolve_shadow(seq)
        self._note(report, "resolve_shadow", seq)
        crossed: list[int] = []
        if before is not None:
            for lqe in self.lq:
                s = lqe.uop.seq
                if s <= before or lqe.error:
                    continue
                if after is None or s <= after:
                    lqe.nonspec_cycle = self.cycle
                    self.trace[s].nonspec_cycle = self.cycle
                    crossed.append(s)
        self._note(report, "visibility", -1 if after is None else after,
                   tuple(crossed))
        if crossed:
            self.scheme.on_visibility_advance(crossed, self.cycle)

    def _store_addr_resolved(self, sqe: StoreQueueEntry, report: CycleReport):
        """Address of a store became visible: re-adjudicate younger loads,
        detect stale reads, then retire the store's D-shadow."""
        self._alias_check(sqe, report)
        self._resolve_shadow(sqe.uop.seq, report)

    def _alias_check(self, sqe: StoreQueueEntry, report: CycleReport):
        store_seq = sqe.uop.seq
        for lqe in self.lq:
            if lqe.uop.seq <= store_seq or lqe.address != sqe.address:
                continue
            if lqe.sleeping_on is not None:
                if lqe.sleeping_on < store_seq:
                    # A younger matching store appeared between the sleep
                    # target and the load; retarget the forward.
                    self.sleepers[lqe.sleeping_on].remove(lqe)
                    self._sleep_or_wake(lqe, sqe, self.cycle, report)
            elif lqe.exec_cycle is not None and not lqe.error:
                correct = self._youngest_matching_store(lqe)
                actual = lqe.forwarded_from
                if correct is not None and correct.uop.seq != actual:
                    lqe.error = True
                    lqe.rob.fwd_error = True
                    self.trace[lqe.uop.seq].error = True
                    self.counters["forwarding_errors"] += 1
                    self._note(report, "fwd_error", lqe.uop.seq)

    def _youngest_matching_store(self, lqe: LoadQueueEntry
                                 ) -> Optional[StoreQueueEntry]:
        best = None
        for sqe in self.sq:
            if sqe.uop.seq >= lqe.uop.seq or sqe.address is None:
                continue
            if sqe.address == lqe.address:
                best = sqe
        return best

    # ------------------------------------------------------------------
    # Issue (wakeup / select)
    # ------------------------------------------------------------------

    def _ready_parts(self, uop: MicroOp) -> list[str]:
        c = self.cycle
        if uop.is_store:
            parts = []
            if uop.addr_issued is None and self.ready_at[uop.psrc1] <= c:
                parts.append("addr")
            if uop.data_issued is None and self.ready_at[uop.psrc2] <= c:
                parts.append("data")
            return parts
        if uop.issued_cycle is not None:
            return []
        for p in (uop.psrc1, uop.psrc2):
            if p is not None and self.ready_at[p] > c:
                return []
        return ["op"]

    def _issue(self, report: CycleReport):
        width = self.config.width
        slots = width
        mem_slots = self.config.mem_ports
        port_blocked = False
        delayed_here = 0
        candidates: list[tuple[MicroOp, list[str]]] = []

        for uop in self.iq:
            parts = self._ready_parts(uop)
            if not parts:
                continue
            open_parts = []
            for part in parts:
                if self.scheme.mask_ready(uop, part, self.cycle):
                    if (part, uop.kind) in (("op", Opcode.LOAD),
                                            ("addr", Opcode.STORE)) or uop.is_branch:
                        self.counters["taint_delays"] += 1
                        self.trace[uop.seq].delayed.append((part, self.cycle))
                        delayed_here += 1
                else:
                    open_parts.append(part)
            if open_parts:
                candidates.append((uop, open_parts))
        if delayed_here:
            self._note(report, "taint_delayed", delayed_here)
        any_taint_masked = delayed_here > 0

        issued_uops: list[MicroOp] = []
        for uop, parts in candidates:
            if slots == 0:
                break
            needs_port = uop.is_load or uop.is_store
            if needs_port and mem_slots == 0:
                port_blocked = True
                continue
            granted = self.scheme.on_issue_select(uop, list(parts), self.cycle)
            if not granted:
                # Tainted transmitter killed to a no-op: the slot is wasted
                # and the entry waits, masked, for its untaint broadcast.
                slots -= 1
                self.counters["nop_issues"] += 1
                report.issued.append((uop.seq, "nop"))
                self.trace[uop.seq].killed.append((parts[0], self.cycle))
                continue
            slots -= 1
            if needs_port:
                mem_slots -= 1
            if uop.is_store:
                if len(granted) == 1:
                    self.counters["partial_store_issues"] += 1
                for part in granted:
                    self._issue_store_part(uop, part, report)
                if len(granted) < len(parts):
                    self.trace[uop.seq].killed.append(
                        (sorted(set(parts) - set(granted))[0], self.cycle))
                if uop.addr_issued is not None and uop.data_issued is not None:
                    self.iq.remove(uop)
            else:
                self._issue_op(uop, report)
                self.iq.remove(uop)
            issued_uops.append(uop)

        active = width - slots
        idle = slots
        if idle == 0:
            cause = "none"
        elif not self.iq:
            cause = "empty"
        elif port_blocked:
            cause = "mem_port"
        elif any_taint_masked:
            cause = "taint"
        else:
            cause = "operands"
        report.slots = (active, idle, cause)
        self.counters["slot_active"] += active
        if idle:
            self.counters[f"slot_stall_{cause}"] += idle

    def _value(self, preg: Optional[int]) -> int:
        return 0 if preg is None else self.prf[preg]

    def _schedule(self, cycle: int, item: tuple):
        self.events.setdefault(cycle, []).append(item)

    def _issue_op(self, uop: MicroOp, report: CycleReport):
        c = self.cycle
        uop.issued_cycle = c
        rob_entry = self._rob_entry(uop.seq)
        rob_entry.state = "issued"
        report.issued.append((uop.seq, "op"))
        self.trace[uop.seq].executed.append(("op", c))
        op = uop.kind
        v1, v2 = self._value(uop.psrc1), self._value(uop.psrc2)
        if op is Opcode.ADD:
            self._schedule(c + ALU_LAT, (uop.seq, "alu", uop, rob_entry,
                                         (v1 + v2) & WORD_MASK))
        elif op is Opcode.ADDI:
            self._schedule(c + ALU_LAT, (uop.seq, "alu", uop, rob_entry,
                                         (v1 + uop.instr.imm) & WORD_MASK))
        elif op is Opcode.MUL:
            self._schedule(c + MUL_LAT, (uop.seq, "alu", uop, rob_entry,
                                         (v1 * v2) & WORD_MASK))
        elif op in BRANCH_OPS:
            taken = (v1 == v2) == (op is Opcode.BEQ)
            self._schedule(c + RESOLVE_LAT, (uop.seq, "branch", uop, rob_entry,
                                             taken))
        elif op is Opcode.LOAD:
            self._issue_load(uop, rob_entry, report)
        else:  # pragma: no cover - JMP/HALT never reach the issue queue
            raise AssertionError(f"unexpected issue of {op}")

    def _issue_load(self, uop: MicroOp, rob_entry: RobEntry,
                    report: CycleReport):
        c = self.cycle
        lqe = self._lq_entry(uop.seq)
        addr = (self._value(uop.psrc1) + uop.instr.imm) & WORD_MASK
        lqe.address = addr
        lqe.exec_cycle = c
        best = self._youngest_matching_store(lqe)
        if best is not None:
            self._sleep_or_wake(lqe, best, c, report)
            return
        # No known matching older store: speculate past any stores whose
        # addresses are still unknown and access memory directly.
        lqe.value = self.memory.get(addr, 0)
        lqe.forwarded_from = None
        latency = (self.config.l1_latency_cycles
                   if addr in self.program.data_init
                   else self.config.mem_latency_cycles)
        self.obs.append(ObservationEvent(c, "cache_access", (addr,)))
        self._note(report, "cache_access", uop.seq, addr)
        self._schedule(c + latency, (uop.seq, "load", lqe))

    def _sleep_or_wake(self, lqe: LoadQueueEntry, sqe: StoreQueueEntry,
                       cycle: int, report: CycleReport):
        """Forward from a matching older store, or sleep until its data
        arrives. Forwards never touch memory, so no cache access is seen."""
        if sqe.data is not None:
            lqe.value = sqe.data
            lqe.forwarded_from = sqe.uop.seq
            lqe.sleeping_on = None
            self.counters["loads_forwarded"] += 1
            self._note(report, "forward", lqe.uop.seq, sqe.uop.seq)
            self._schedule(cycle + FWD_LAT, (lqe.uop.seq, "load", lqe))
        else:
            lqe.sleeping_on = sqe.uop.seq
            lqe.forwarded_from = sqe.uop.seq
            self.sleepers.setdefault(sqe.uop.seq, []).append(lqe)

    def _issue_store_part(self, uop: MicroOp, part: str, report: CycleReport):
        c = self.cycle
        sqe = self._sq_entry(uop.seq)
        rob_entry = self._rob_entry(uop.seq)
        rob_entry.state = "issued"
        report.issued.append((uop.seq, part))
        self.trace[uop.seq].executed.append((part, c))
        if part == "addr":
            uop.addr_issued = c
            sqe.address = (self._value(uop.psrc1) + uop.instr.imm) & WORD_MASK
            self._schedule(c + RESOLVE_LAT, (uop.seq, "store_addr", sqe))
        else:
            uop.data_issued = c
            sqe.data = self._value(uop.psrc2)
            for lqe in self.sleepers.pop(uop.seq, []):
                lqe.sleeping_on = None
                lqe.value = sqe.data
                lqe.forwarded_from = uop.seq
                self.counters["loads_forwarded"] += 1
                self._note(report, "forward", lqe.uop.seq, uop.seq)
                self._schedule(c + FWD_LAT, (lqe.uop.seq, "load", lqe))
        if uop.addr_issued is not None and uop.data_issued is not None:
            self._schedule(c + RESOLVE_LAT, (uop.seq, "store_done", uop,
                                             rob_entry))

    # ------------------------------------------------------------------
    # Rename
    # ------------------------------------------------------------------

    def _rename(self, report: CycleReport):
        group_count = 0
        while group_count < self.config.width and self.fetch_queue:
            pc, instr, pred_taken = self.fetch_queue[0]
            op = instr.opcode
            if len(self.rob) >= self.config.rob_entries:
                break
            if op not in (Opcode.JMP, Opcode.HALT) and \
                    len(self.iq) >= self.config.iq_entries:
                break
            if op in BRANCH_OPS and not (self.rename.has_checkpoint_space()
                                         and not self.ledger.full()):
                break
            if op is Opcode.STORE and self.ledger.full():
                break
            alloc_before = self.rename.alloc_idx
            renamed = self.rename.rename_one(instr)
            if renamed is None:
                break  # free list exhausted: structural stall, partial group
            self.fetch_queue.popleft()
            seq = self.next_seq
            self.next_seq += 1
            uop = MicroOp(seq=seq, pc=pc, instr=instr, pred_taken=pred_taken,
                          pdst=renamed.pdst, prev_pdst=renamed.prev_pdst,
                          psrc1=renamed.psrc1, psrc2=renamed.psrc2,
                          alloc_idx_at_rename=alloc_before,
                          rename_cycle=self.cycle)
            self.trace[seq] = self._make_record(uop)
            if renamed.pdst is not None:
                self.preg_writer[renamed.pdst] = seq
                self.ready_at[renamed.pdst] = math.inf
                self.prf[renamed.pdst] = 0
            rob_entry = RobEntry(uop)
            self.rob.append(rob_entry)
            if op in BRANCH_OPS:
                self.ledger.register_shadow(seq, "C")
                self.rename.checkpoint(seq)
            elif op is Opcode.STORE:
                self.ledger.register_shadow(seq, "D")
                self.sq.append(StoreQueueEntry(uop, rob_entry))
            elif op is Opcode.LOAD:
                lqe = LoadQueueEntry(uop, rob_entry)
                if not self.ledger.is_speculative(seq):
                    # Born bound-to-commit; it never crosses the visibility
                    # point later, so record that now for the flow oracle.
                    lqe.nonspec_cycle = self.cycle
                    self.trace[seq].nonspec_cycle = self.cycle
                self.lq.append(lqe)
            self.scheme.on_rename_uop(uop)
            if op in (Opcode.JMP, Opcode.HALT):
                rob_entry.state = "completed"
            else:
                self.iq.append(uop)
            group_count += 1

    def _make_record(self, uop: MicroOp) -> UopRecord:
        def producer(preg):
            return None if preg is None else self.preg_writer[preg]

        op = uop.kind
        p1, p2 = producer(uop.psrc1), producer(uop.psrc2)
        if op is Opcode.STORE:
            gate = {"addr": (p1,), "data": (p2,)}
            value_srcs: tuple = ()
        elif op is Opcode.LOAD:
            gate = {"op": (p1,)}
            value_srcs = ()
        elif op in BRANCH_OPS:
            gate = {"op": (p1, p2)}
            value_srcs = ()
        elif op in (Opcode.ADD, Opcode.MUL):
            gate = {"op": (p1, p2)}
            value_srcs = (p1, p2)
        elif op is Opcode.ADDI:
            gate = {"op": (p1,)}
            value_srcs = (p1,)
        else:
            gate = {}
            value_srcs = ()
        return UopRecord(seq=uop.seq, pc=uop.pc, opcode=op.value,
                         is_load=uop.is_load,
                         is_transmitter=uop.is_transmitter,
                         gate_srcs=gate, value_srcs=value_srcs,
                         rename_cycle=self.cycle)

    # ------------------------------------------------------------------
    # Fetch
    # ------------------------------------------------------------------

    def _predict(self) -> bool:
        cfg = self.config
        if cfg.predictor == "always_taken":
            return True
        if cfg.predictor == "never_taken":
            return False
        outcome = cfg.predictor_script[self.script_pos % len(cfg.predictor_script)]
        self.script_pos += 1
        return bool(outcome)

    def _fetch(self, report: CycleReport):
        if self.fetch_blocked or self.halted_fetch:
            return
        limit = FETCH_BUFFER_FACTOR * self.config.width
        fetched = 0
        while fetched < self.config.width and len(self.fetch_queue) < limit:
            pc = self.fetch_pc
            if not 0 <= pc < len(self.program.instrs):
                instr = ArchInstr(Opcode.HALT)  # running off the end halts
            else:
                instr = self.program.instrs[pc]
            op = instr.opcode
            if op in BRANCH_OPS:
                pred = self._predict()
                self.fetch_queue.append((pc, instr, pred))
                fetched += 1
                if pred:
                    self.fetch_pc = instr.imm
                    break  # a taken control transfer ends the fetch group
                self.fetch_pc = pc + 1
            elif op is Opcode.JMP:
                self.fetch_queue.append((pc, instr, False))
                fetched += 1
                self.fetch_pc = instr.imm
                break
            elif op is Opcode.HALT:
                self.fetch_queue.append((pc, instr, False))
                fetched += 1
                self.halted_fetch = True
                break
            else:
                self.fetch_queue.append((pc, instr, False))
                fetched += 1
                self.fetch_pc = pc + 1
        report.fetched = fetched

    # ------------------------------------------------------------------
    # Lookups and debug checks
    # ------------------------------------------------------------------

    def _rob_entry(self, seq: int) -> RobEntry:
        for entry in self.rob:
            if entry.uop.seq == seq:
                return entry
        raise KeyError(seq)

    def _lq_entry(self, seq: int) -> LoadQueueEntry:
        for e in self.lq:
            if e.uop.seq == seq:
                return e
        raise KeyError(seq)

    def _sq_entry(self, seq: int) -> StoreQueueEntry:
        for e in self.sq:
            if e.uop.seq == seq:
                return e
        raise KeyError(seq)

    def check_rat_coherence(self):
        """Replaying committed-then-in-flight rename decisions sequentially
        must reproduce the RAT."""
        replay = list(self.arat)
        for entry in self.rob:
            uop = entry.uop
            if uop.pdst is not None:
                replay[uop.instr.dst] = uop.pdst
        assert replay == self.rename.rat, (replay, self.rename.rat)

    def check_free_list_disjoint(self):
        free = self.rename.free_set()
        live = set(self.rename.rat) | set(self.arat)
        for entry in self.rob:
            uop = entry.uop
            for p in (uop.pdst, uop.psrc1, uop.psrc2, uop.prev_pdst):
                if p is not None:
                    live.add(p)
        overlap = free & live
        assert not overlap, f"free/live overlap: {sorted(overlap)}"
