"""Analytical combinational-cost model for the scheme logic.

Costs are abstract: depth counts levels of comparator+mux stages on the
critical path, not picoseconds, and unit counts are derived from an
explicitly constructed network. Only the scaling shapes are meaningful:
rename-stage taint computation forms a dependency chain across the group,
so its depth grows linearly with rename width; issue-stage taint units are
per-port and width-independent; the delayed-broadcast scheme adds no
combinational levels at all.
"""

from __future__ import annotations

from dataclasses import dataclass

TAG_BITS = 8       # abstract width of a taint root tag
IDX_BITS = 8       # abstract width of a physical register index
ARCH_REGS = 32
CHECKPOINTS = 16   # rename-scheme taint-file checkpoint copies


@dataclass(frozen=True)
class LogicCost:
    depth: int          # comparator+mux levels on the critical path
    comparators: int
    muxes: int
    storage_bits: int

    def __post_init__(self):
        if min(self.depth, self.comparators, self.muxes, self.storage_bits) < 0:
            raise ValueError("cost fields must be non-negative")


class _Net:
    """Minimal DAG accumulator: stages carry a level each; counts tally the
    comparators and 2-way muxes inside each stage."""

    def __init__(self):
        self.comparators = 0
        self.muxes = 0

    def stage(self, inputs: list[int], comparators: int, muxes: int) -> int:
        self.comparators += comparators
        self.muxes += muxes
        return (max(inputs) if inputs else 0) + 1


def cost_stt_rename(width: int, srcs_per_uop: int = 2) -> LogicCost:
    """Construct the group-wide rename taint network and measure it.

    Per uop: each source passes a bypass stage that matches the source
    register against every older in-group destination and muxes in the
    corresponding freshly computed root (older uops' outputs feed it, which
    creates the cross-group chain); a youngest-select stage then joins the
    sources. Everything must settle in one cycle to keep the taint file
    current for the next group.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    net = _Net()
    yrot_level: list[int] = []  # per-uop output level
    for i in range(width):
        src_levels = []
        for _ in range(srcs_per_uop):
            if i == 0:
                src_levels.append(0)  # straight taint-file read
            else:
                # i register-index match comparators select among the taint
                # file value and i older outputs: an (i+1)-way mux.
                level = net.stage(inputs=yrot_level[:i] + [0],
                                  comparators=i, muxes=i)
                src_levels.append(level)
        out = net.stage(inputs=src_levels, comparators=srcs_per_uop - 1,
                        muxes=srcs_per_uop - 1)
        yrot_level.append(out)
    storage = ARCH_REGS * TAG_BITS * (1 + CHECKPOINTS)
    return LogicCost(depth=max(yrot_level), comparators=net.comparators,
                     muxes=net.muxes, storage_bits=storage)


def cost_stt_issue(width: int, phys_regs: int) -> LogicCost:
    """Per-issue-port taint units: a youngest-select over the operand tags
    plus the kill/back-propagate decision. Ports are independent, so depth
    does not change with width; units and tag storage replicate linearly."""
    if width < 1:
        raise ValueError("width must be >= 1")
    if phys_regs < 1:
        raise ValueError("phys_regs must be >= 1")
    net = _Net()
    depth = 0
    for _ in range(width):
        select = net.stage(inputs=[0], comparators=1, muxes=1)
        kill = net.stage(inputs=[select], comparators=1, muxes=0)
        depth = max(depth, kill)
    return LogicCost(depth=depth, comparators=net.comparators,
                     muxes=net.muxes, storage_bits=phys_regs * TAG_BITS)


def cost_nda(width: int, mem_ports: int, lq_entries: int = 32) -> LogicCost:
    """Decoupled writeback/broadcast port selectors plus the pending queue;
    no added comparator levels anywhere near a critical path."""
    if mem_ports < 1:
        raise ValueError("mem_ports must be >= 1")
    if lq_entries < 1:
        raise ValueError("lq_entries must be >= 1")
    # One writeback-port selector and one broadcast-port selector per port
    # pair; the queue stores a root tag and register index per entry.
    return LogicCost(depth=0, comparators=0, muxes=2 * mem_ports,
                     storage_bits=lq_entries * (TAG_BITS + IDX_BITS))


SWEEP_COLUMNS = ("width", "scheme", "depth", "comparators", "muxes",
                 "storage_bits")


def sweep(max_width: int, phys_regs: int = 160, mem_ports: int = 2,
          lq_entries: int = 32) -> list[tuple]:
    """Cost rows for widths 1..max_width across all three schemes."""
    rows = []
    for width in range(1, max_width + 1):
        for scheme, cost in (
            ("stt-rename", cost_stt_rename(width)),
            ("stt-issue", cost_stt_issue(width, phys_regs)),
            ("nda", cost_nda(width, mem_ports, lq_entries)),
        ):
            rows.append((width, scheme, cost.depth, cost.comparators,
                         cost.muxes, cost.storage_bits))
    return rows
