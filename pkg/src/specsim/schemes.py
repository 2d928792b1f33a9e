"""Secure speculation schemes installed as hooks into the core.

baseline     unsafe reference: no restrictions.
stt-rename   taint computed at rename over architectural registers; a
             per-arch-register taint file travels with the RAT, is
             checkpointed at branches, and masks ready transmitters in the
             issue queue. Untaint broadcasts reach select one cycle after
             the root load turns non-speculative.
stt-issue    taint computed at selection over physical registers; a selected
             tainted transmitter is killed to a no-op and its root is
             back-propagated onto the issue-queue entry, masking it until
             the untaint broadcast, which takes effect the same cycle.
             Store halves are gated independently, so untainted address
             generation can issue while the data operand is tainted.
nda          no taint tracking: a speculative load writes its result back
             but withholds the ready broadcast until the load crosses the
             visibility point; releases drain at mem_ports per cycle.
             Dependents of loads are woken without an L1-hit prediction.

Hooks never change architectural results, only event timing.
"""

from __future__ import annotations

from typing import Optional, TYPE_CHECKING

from .isa import Opcode, NUM_REGS

if TYPE_CHECKING:  # pragma: no cover
    from .core import Simulator, MicroOp, LoadQueueEntry


def join(*roots: Optional[int]) -> Optional[int]:
    """Youngest root of taint: the newest sequence number, None if untainted."""
    live = [r for r in roots if r is not None]
    return max(live) if live else None


class SchemeHooks:
    """Hook interface; the base class is the unsafe baseline."""

    name = "baseline"
    uses_speculative_wakeup = True

    def bind(self, sim: "Simulator"):
        self.sim = sim

    def on_rename_uop(self, uop: "MicroOp"):
        pass

    def on_rename(self, group: list["MicroOp"]):
        for uop in group:
            self.on_rename_uop(uop)

    def mask_ready(self, uop: "MicroOp", part: str, cycle: int) -> bool:
        """True masks the ready signal of this issue-queue entry part."""
        return False

    def on_issue_select(self, uop: "MicroOp", parts: list[str],
                        cycle: int) -> list[str]:
        """Filter the parts a selected op may actually execute; an empty
        result turns the issue slot into a no-op."""
        return parts

    def on_load_complete(self, uop: "MicroOp", cycle: int) -> bool:
        """Return True to broadcast the load result with its writeback."""
        return True

    def on_visibility_advance(self, load_seqs: list[int], cycle: int):
        pass

    def on_cycle(self, cycle: int):
        pass

    def on_recovery(self, branch_seq: int):
        pass

    def on_squash(self, squash_seq: int):
        pass

    def on_flush(self):
        pass


class Baseline(SchemeHooks):
    pass


class _SttCommon(SchemeHooks):
    """Shared STT machinery: transmitter gating and the untaint broadcast.

    Broadcast bandwidth is unlimited per cycle; ``unmask_delay`` is the
    number of cycles between a root clearing and a masked entry becoming
    selectable again (1 for the rename variant, 0 for the issue variant,
    which is the issue variant's one-cycle scheduling advantage).
    """

    unmask_delay = 0

    def bind(self, sim: "Simulator"):
        super().bind(sim)
        self.cleared_at: dict[int, int] = {}

    def root_active(self, root: Optional[int], cycle: int) -> bool:
        if root is None:
            return False
        cleared = self.cleared_at.get(root)
        return cleared is None or cycle < cleared + self.unmask_delay

    def may_execute(self, uop: "MicroOp", root: Optional[int],
                    cycle: int) -> bool:
        """Deny only tainted transmitters; invisible ops always execute."""
        return not (uop.is_transmitter and self.root_active(root, cycle))

    def on_visibility_advance(self, load_seqs: list[int], cycle: int):
        for seq in load_seqs:
            self.cleared_at[seq] = cycle

    def on_flush(self):
        self.cleared_at.clear()


class STTRename(_SttCommon):
    """Rename-stage tainting over architectural registers.

    The whole group's taints are computed in one rename cycle; a consumer
    inside the group takes the in-group producer's freshly computed root,
    which processing the group oldest-first yields directly. Stores carry a
    single root joined over both operands unless ``split_store_taint`` is
    set, so a tainted data operand also holds back address generation.
    """

    name = "stt-rename"
    unmask_delay = 1

    def __init__(self, split_store_taint: bool = False):
        self.split_store_taint = split_store_taint

    def bind(self, sim: "Simulator"):
        super().bind(sim)
        self.taint_file: list[Optional[int]] = [None] * NUM_REGS
        self.checkpoints: dict[int, list[Optional[int]]] = {}
        self.store_roots: dict[int, tuple[Optional[int], Optional[int]]] = {}

    def _src(self, arch_reg: int) -> Optional[int]:
        return None if arch_reg == 0 else self.taint_file[arch_reg]

    def on_rename_uop(self, uop: "MicroOp"):
        instr = uop.instr
        op = uop.kind
        if op in (Opcode.ADD, Opcode.MUL):
            gate = dst_root = join(self._src(instr.src1), self._src(instr.src2))
        elif op is Opcode.ADDI:
            gate = dst_root = self._src(instr.src1)
        elif op is Opcode.LOAD:
            gate = self._src(instr.src1)  # the address is the transmitter
            dst_root = (uop.seq if self.sim.ledger.is_speculative(uop.seq)
                        else None)
        elif op is Opcode.STORE:
            addr_root = self._src(instr.src1)
            data_root = self._src(instr.src2)
            gate = join(addr_root, data_root)
            self.store_roots[uop.seq] = (addr_root, data_root)
            dst_root = None
        elif op in (Opcode.BEQ, Opcode.BNE):
            gate = join(self._src(instr.src1), self._src(instr.src2))
            dst_root = None
        else:
            gate = dst_root = None
        uop.gate_root = gate
        if instr.opcode in (Opcode.ADD, Opcode.ADDI, Opcode.MUL, Opcode.LOAD) \
                and instr.dst not in (None, 0):
            self.taint_file[instr.dst] = dst_root
        if op in (Opcode.BEQ, Opcode.BNE):
            self.checkpoints[uop.seq] = list(self.taint_file)

    compute_group_yrot = SchemeHooks.on_rename

    def mask_ready(self, uop: "MicroOp", part: str, cycle: int) -> bool:
        root = uop.gate_root
        if self.split_store_taint and uop.is_store:
            addr_root, data_root = self.store_roots[uop.seq]
            root = addr_root if part == "addr" else data_root
            if part == "data":
                return False  # data delivery is not observable
        return not self.may_execute(uop, root, cycle)

    def on_visibility_advance(self, load_seqs: list[int], cycle: int):
        super().on_visibility_advance(load_seqs, cycle)
        cleared = set(load_seqs)
        for reg in range(NUM_REGS):
            if self.taint_file[reg] in cleared:
                self.taint_file[reg] = None

    def on_recovery(self, branch_seq: int):
        """Restore the checkpointed taint file, invalidating entries whose
        root fell outside the live window: roots already past the
        visibility point, and roots younger than the squash point."""
        snapshot = self.checkpoints.pop(branch_seq)
        vis = self.sim.ledger.visibility_seq
        self.taint_file = [
            None if root is None
            or root > branch_seq
            or (vis is None or root <= vis)
            else root
            for root in snapshot
        ]
        for seq in [s for s in self.checkpoints if s > branch_seq]:
            del self.checkpoints[seq]

    def on_squash(self, squash_seq: int):
        for seq in [s for s in self.store_roots if s > squash_seq]:
            del self.store_roots[seq]

    def on_flush(self):
        super().on_flush()
        self.taint_file = [None] * NUM_REGS
        self.checkpoints.clear()
        self.store_roots.clear()


class STTIssue(_SttCommon):
    """Issue-stage tainting over physical registers.

    Roots live in a taint unit indexed by physical register; reallocating a
    register rewrites its entry at the new writer's issue, before any reader
    can consult it, so no checkpointing is needed. The taint of an op is
    computed only when it wins selection; dependent ops never issue in the
    same cycle, so there is no in-group chain.
    """

    name = "stt-issue"
    unmask_delay = 0

    def bind(self, sim: "Simulator"):
        super().bind(sim)
        self.taint_unit: list[Optional[int]] = [None] * sim.config.phys_regs
        self.masked: dict[tuple[int, str], int] = {}

    def _taint(self, preg: Optional[int]) -> Optional[int]:
        return None if preg is None else self.taint_unit[preg]

    def mask_ready(self, uop: "MicroOp", part: str, cycle: int) -> bool:
        root = self.masked.get((uop.seq, part))
        if root is None:
            return False
        if self.root_active(root, cycle):
            return True
        del self.masked[(uop.seq, part)]
        return False

    def on_issue_select(self, uop: "MicroOp", parts: list[str],
                        cycle: int) -> list[str]:
        granted = []
        for part in parts:
            if uop.is_store:
                if part == "addr":
                    root = self._taint(uop.psrc1)
                    if self.may_execute(uop, root, cycle):
                        granted.append(part)
                    else:
                        self.masked[(uop.seq, part)] = root
                else:
                    granted.append(part)  # data delivery is not observable
                continue
            root = join(self._taint(uop.psrc1), self._taint(uop.psrc2))
            if uop.is_load:
                root = self._taint(uop.psrc1)
            if self.may_execute(uop, root, cycle):
                granted.append(part)
            else:
                self.masked[(uop.seq, part)] = root
        # The destination entry is written at selection time; a consumer is
        # selected no earlier than this op's completion broadcast, so it
        # always reads the fresh entry.
        if uop.pdst is not None:
            if uop.is_load:
                self.taint_unit[uop.pdst] = (
                    uop.seq if self.sim.ledger.is_speculative(uop.seq) else None)
            else:
                self.taint_unit[uop.pdst] = join(self._taint(uop.psrc1),
                                                 self._taint(uop.psrc2))
        return granted

    def on_visibility_advance(self, load_seqs: list[int], cycle: int):
        super().on_visibility_advance(load_seqs, cycle)
        cleared = set(load_seqs)
        for preg in range(len(self.taint_unit)):
            if self.taint_unit[preg] in cleared:
                self.taint_unit[preg] = None

    def on_squash(self, squash_seq: int):
        for key in [k for k in self.masked if k[0] > squash_seq]:
            del self.masked[key]

    def on_flush(self):
        super().on_flush()
        self.taint_unit = [None] * len(self.taint_unit)
        self.masked.clear()


class NDA(SchemeHooks):
    """Delayed broadcast: data writeback is decoupled from the ready
    broadcast. A load completing speculatively is parked in the pending
    queue; once the visibility point passes it, releases drain oldest-first
    at mem_ports per cycle, starting the crossing cycle. Loads completing
    non-speculatively broadcast with their writeback as in the baseline and
    do not consume release bandwidth."""

    name = "nda"
    uses_speculative_wakeup = False

    def bind(self, sim: "Simulator"):
        super().bind(sim)
        self.pending: list["LoadQueueEntry"] = []
        self.eligible: list["LoadQueueEntry"] = []
        self._budget_cycle = -1
        self._budget_used = 0

    def on_load_complete(self, uop: "MicroOp", cycle: int) -> bool:
        if not self.sim.ledger.is_speculative(uop.seq):
            return True
        lqe = self.sim._lq_entry(uop.seq)
        self.pending.append(lqe)
        peak = self.sim.counters["pending_broadcast_peak"]
        self.sim.counters["pending_broadcast_peak"] = max(peak, len(self.pending))
        self.sim._note(self.sim._active_report, "nda_pending", len(self.pending))
        return False

    def on_visibility_advance(self, load_seqs: list[int], cycle: int):
        crossed = set(load_seqs)
        newly = [e for e in self.pending if e.uop.seq in crossed]
        if newly:
            self.pending = [e for e in self.pending if e.uop.seq not in crossed]
            self.eligible.extend(newly)
            self.eligible.sort(key=lambda e: e.uop.seq)
        self._drain(cycle)

    def on_cycle(self, cycle: int):
        self._drain(cycle)

    def _drain(self, cycle: int):
        if self._budget_cycle != cycle:
            self._budget_cycle = cycle
            self._budget_used = 0
        while self.eligible and self._budget_used < self.sim.config.mem_ports:
            lqe = self.eligible.pop(0)
            if lqe.uop.squashed:
                continue
            self.sim.broadcast_load(lqe, cycle, deferred=True)
            self._budget_used += 1

    def on_squash(self, squash_seq: int):
        self.pending = [e for e in self.pending if e.uop.seq <= squash_seq]
        self.eligible = [e for e in self.eligible if e.uop.seq <= squash_seq]

    def on_flush(self):
        self.pending = []
        self.eligible = []


SCHEME_NAMES = ("baseline", "stt-rename", "stt-issue", "nda")
SECURE_SCHEMES = ("stt-rename", "stt-issue", "nda")

_SCHEMES = {
    "baseline": Baseline,
    "stt-rename": STTRename,
    "stt-issue": STTIssue,
    "nda": NDA,
}


def make_scheme(name: str) -> SchemeHooks:
    try:
        return _SCHEMES[name]()
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; have {SCHEME_NAMES}") from None
