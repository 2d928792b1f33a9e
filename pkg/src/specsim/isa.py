"""Tiny RISC-like instruction set: assembler, reference interpreter, workload generators.

The machine model is deliberately small: 32 integer registers (r0 reads as
zero, writes to it are discarded), 64-bit words, and a flat word-addressed
memory. Stores are a single operation carrying both an address operand
(src1 + imm) and a data operand (src2); the pipeline may issue the two
halves separately.

Assembly grammar (one instruction per line, ``#``/``;`` comments)::

    label:
        ADD   rd, rs1, rs2
        ADDI  rd, rs1, imm
        MUL   rd, rs1, rs2
        LOAD  rd, imm(rs1)
        STORE rs2, imm(rs1)        # mem[rs1 + imm] = rs2
        BEQ   rs1, rs2, target     # target: label or absolute index
        BNE   rs1, rs2, target
        JMP   target
        HALT
    .data   addr value             # initial memory word
    .secret addr                   # cell holding a secret for NI testing
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

WORD_BITS = 64
WORD_MASK = (1 << WORD_BITS) - 1
NUM_REGS = 32

ASM_FORMAT_TAG = "# specsim-asm v1"


class Opcode(Enum):
    ADD = "ADD"
    ADDI = "ADDI"
    MUL = "MUL"
    LOAD = "LOAD"
    STORE = "STORE"
    BEQ = "BEQ"
    BNE = "BNE"
    JMP = "JMP"
    HALT = "HALT"


# Opcodes that write a destination register.
WRITER_OPS = {Opcode.ADD, Opcode.ADDI, Opcode.MUL, Opcode.LOAD}
BRANCH_OPS = {Opcode.BEQ, Opcode.BNE}


class AsmError(ValueError):
    """Assembly syntax or semantic error, carrying a 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class ArchInstr:
    """One architectural instruction.

    ``dst`` is None for ops without a destination; unused source fields are
    normalized to 0 so instructions compare equal after a round-trip.
    """

    opcode: Opcode
    dst: Optional[int] = None
    src1: int = 0
    src2: int = 0
    imm: int = 0

    def __post_init__(self):
        for name, reg in (("dst", self.dst), ("src1", self.src1), ("src2", self.src2)):
            if reg is None:
                continue
            if not 0 <= reg < NUM_REGS:
                raise ValueError(f"{name} register out of range: {reg}")

    @property
    def is_transmitter(self) -> bool:
        # Loads expose their address, stores expose the address of their
        # address half, conditional branches expose their resolution.
        # Direct jumps carry no operand-dependent observable effect.
        return self.opcode in (Opcode.LOAD, Opcode.STORE, Opcode.BEQ, Opcode.BNE)


@dataclass
class Program:
    """Instructions plus initial memory image and designated secret cells."""

    instrs: list[ArchInstr] = field(default_factory=list)
    data_init: dict[int, int] = field(default_factory=dict)
    secret_cells: set[int] = field(default_factory=set)

    def __post_init__(self):
        for instr in self.instrs:
            if instr.opcode in BRANCH_OPS or instr.opcode is Opcode.JMP:
                if not 0 <= instr.imm <= len(self.instrs):
                    raise ValueError(
                        f"branch target {instr.imm} outside program of "
                        f"{len(self.instrs)} instructions"
                    )

    def with_secret_values(self, values: dict[int, int]) -> "Program":
        """Copy of this program with secret cells set to the given values."""
        unknown = set(values) - self.secret_cells
        if unknown:
            raise ValueError(f"addresses are not secret cells: {sorted(unknown)}")
        init = dict(self.data_init)
        init.update(values)
        return Program(list(self.instrs), init, set(self.secret_cells))


def to_signed(word: int) -> int:
    word &= WORD_MASK
    return word - (1 << WORD_BITS) if word >> (WORD_BITS - 1) else word


_REG_RE = re.compile(r"^r(\d{1,2})$")
_MEM_RE = re.compile(r"^(-?(?:0x[0-9a-fA-F]+|\d+))\((r\d{1,2})\)$")
_LABEL_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _parse_reg(tok: str, line_no: int) -> int:
    m = _REG_RE.match(tok)
    if not m:
        raise AsmError(line_no, f"expected register, got {tok!r}")
    reg = int(m.group(1))
    if reg >= NUM_REGS:
        raise AsmError(line_no, f"register out of range: {tok}")
    return reg


def _parse_int(tok: str, line_no: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(line_no, f"expected integer, got {tok!r}") from None


def assemble(text: str) -> Program:
    """Assemble source text into a Program, resolving labels.

    Raises AsmError with a line number on syntax errors, undefined labels,
    or out-of-range registers and targets.
    """
    labels: dict[str, int] = {}
    pending: list[tuple[int, str, list[str]]] = []  # (line_no, mnemonic, operands)
    data_init: dict[int, int] = {}
    secret_cells: set[int] = set()

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith(".data") or line.startswith(".secret"):
            parts = line.split()
            if parts[0] == ".data":
                if len(parts) != 3:
                    raise AsmError(line_no, ".data expects: .data addr value")
                data_init[_parse_int(parts[1], line_no)] = (
                    _parse_int(parts[2], line_no) & WORD_MASK
                )
            else:
                if len(parts) != 2:
                    raise AsmError(line_no, ".secret expects: .secret addr")
                secret_cells.add(_parse_int(parts[1], line_no))
            continue
        while ":" in line:
            name, line = line.split(":", 1)
            name = name.strip()
            if not _LABEL_RE.match(name):
                raise AsmError(line_no, f"bad label {name!r}")
            if name in labels:
                raise AsmError(line_no, f"duplicate label {name!r}")
            labels[name] = len(pending)
            line = line.strip()
        if not line:
            continue
        mnemonic, _, rest = line.partition(" ")
        operands = [op.strip() for op in rest.split(",")] if rest.strip() else []
        pending.append((line_no, mnemonic.upper(), operands))

    def target(tok: str, line_no: int) -> int:
        if _LABEL_RE.match(tok) and not _REG_RE.match(tok):
            if tok not in labels:
                raise AsmError(line_no, f"undefined label {tok!r}")
            return labels[tok]
        idx = _parse_int(tok, line_no)
        if not 0 <= idx <= len(pending):
            raise AsmError(line_no, f"branch target {idx} out of range")
        return idx

    instrs: list[ArchInstr] = []
    for line_no, mnemonic, ops in pending:
        try:
            opcode = Opcode(mnemonic)
        except ValueError:
            raise AsmError(line_no, f"unknown mnemonic {mnemonic!r}") from None

        def expect(n: int):
            if len(ops) != n:
                raise AsmError(line_no, f"{mnemonic} expects {n} operands, got {len(ops)}")

        if opcode in (Opcode.ADD, Opcode.MUL):
            expect(3)
            instrs.append(
                ArchInstr(opcode, _parse_reg(ops[0], line_no),
                          _parse_reg(ops[1], line_no), _parse_reg(ops[2], line_no))
            )
        elif opcode is Opcode.ADDI:
            expect(3)
            instrs.append(
                ArchInstr(opcode, _parse_reg(ops[0], line_no),
                          _parse_reg(ops[1], line_no), imm=_parse_int(ops[2], line_no))
            )
        elif opcode is Opcode.LOAD:
            expect(2)
            m = _MEM_RE.match(ops[1])
            if not m:
                raise AsmError(line_no, f"expected imm(reg), got {ops[1]!r}")
            instrs.append(
                ArchInstr(opcode, _parse_reg(ops[0], line_no),
                          _parse_reg(m.group(2), line_no), imm=int(m.group(1), 0))
            )
        elif opcode is Opcode.STORE:
            expect(2)
            m = _MEM_RE.match(ops[1])
            if not m:
                raise AsmError(line_no, f"expected imm(reg), got {ops[1]!r}")
            instrs.append(
                ArchInstr(opcode, None, _parse_reg(m.group(2), line_no),
                          _parse_reg(ops[0], line_no), imm=int(m.group(1), 0))
            )
        elif opcode in BRANCH_OPS:
            expect(3)
            instrs.append(
                ArchInstr(opcode, None, _parse_reg(ops[0], line_no),
                          _parse_reg(ops[1], line_no), imm=target(ops[2], line_no))
            )
        elif opcode is Opcode.JMP:
            expect(1)
            instrs.append(ArchInstr(opcode, None, imm=target(ops[0], line_no)))
        else:  # HALT
            expect(0)
            instrs.append(ArchInstr(opcode))

    return Program(instrs, data_init, secret_cells)


def disassemble(program: Program) -> str:
    """Deterministic, versioned text form; assemble(disassemble(p)) == p."""
    targets = {
        i.imm for i in program.instrs
        if i.opcode in BRANCH_OPS or i.opcode is Opcode.JMP
    }
    lines = [ASM_FORMAT_TAG]
    for addr in sorted(program.data_init):
        lines.append(f".data {addr} {program.data_init[addr]}")
    for addr in sorted(program.secret_cells):
        lines.append(f".secret {addr}")
    for idx, instr in enumerate(program.instrs):
        if idx in targets:
            lines.append(f"L{idx}:")
        op = instr.opcode
        if op in (Opcode.ADD, Opcode.MUL):
            text = f"{op.value} r{instr.dst}, r{instr.src1}, r{instr.src2}"
        elif op is Opcode.ADDI:
            text = f"ADDI r{instr.dst}, r{instr.src1}, {instr.imm}"
        elif op is Opcode.LOAD:
            text = f"LOAD r{instr.dst}, {instr.imm}(r{instr.src1})"
        elif op is Opcode.STORE:
            text = f"STORE r{instr.src2}, {instr.imm}(r{instr.src1})"
        elif op in BRANCH_OPS:
            text = f"{op.value} r{instr.src1}, r{instr.src2}, L{instr.imm}"
        elif op is Opcode.JMP:
            text = f"JMP L{instr.imm}"
        else:
            text = "HALT"
        lines.append("    " + text)
    if len(program.instrs) in targets:
        lines.append(f"L{len(program.instrs)}:")
    return "\n".join(lines) + "\n"


@dataclass
class InterpResult:
    """Architectural outcome of an in-order run: the functional ground truth."""

    regs: list[int]
    memory: dict[int, int]
    committed_pcs: list[int]
    load_addrs: list[int]
    steps: int


def interpret(program: Program, max_steps: int = 1_000_000) -> InterpResult:
    """Simple in-order interpreter; the oracle every pipeline run must match."""
    regs = [0] * NUM_REGS
    memory = dict(program.data_init)
    committed: list[int] = []
    load_addrs: list[int] = []
    pc = 0
    steps = 0
    while 0 <= pc < len(program.instrs):
        if steps >= max_steps:
            raise RuntimeError(f"interpreter exceeded {max_steps} steps")
        instr = program.instrs[pc]
        steps += 1
        committed.append(pc)
        op = instr.opcode
        next_pc = pc + 1
        if op is Opcode.ADD:
            value = (regs[instr.src1] + regs[instr.src2]) & WORD_MASK
        elif op is Opcode.ADDI:
            value = (regs[instr.src1] + instr.imm) & WORD_MASK
        elif op is Opcode.MUL:
            value = (regs[instr.src1] * regs[instr.src2]) & WORD_MASK
        elif op is Opcode.LOAD:
            addr = (regs[instr.src1] + instr.imm) & WORD_MASK
            load_addrs.append(addr)
            value = memory.get(addr, 0)
        elif op is Opcode.STORE:
            addr = (regs[instr.src1] + instr.imm) & WORD_MASK
            memory[addr] = regs[instr.src2]
            value = None
        elif op in BRANCH_OPS:
            taken = (regs[instr.src1] == regs[instr.src2]) == (op is Opcode.BEQ)
            next_pc = instr.imm if taken else pc + 1
            value = None
        elif op is Opcode.JMP:
            next_pc = instr.imm
            value = None
        else:  # HALT
            break
        if value is not None and instr.dst not in (None, 0):
            regs[instr.dst] = value
        pc = next_pc
    return InterpResult(regs, memory, committed, load_addrs, steps)


# ---------------------------------------------------------------------------
# Workload generation
# ---------------------------------------------------------------------------

WORKLOAD_KINDS = ("compute_bound", "pointer_chase", "store_load_mix", "mixed")

SPECTRE_CHASE_DEPTH = 8
SPECTRE_PROBE_BASE = 4096


def gen_spectre_v1(secret_addr: int, probe_stride: int) -> Program:
    """Bounds-check gadget: a gate value is pointer-chased from memory so the
    branch resolves slowly, the branch is predicted into the gadget, and the
    gadget transiently loads the secret and then loads base + secret * stride.

    The secret-reading load is reachable only on the mispredicted path; the
    committed path never touches the secret cell.
    """
    if probe_stride < 1:
        raise ValueError("probe_stride must be >= 1")
    if secret_addr < 0:
        raise ValueError("secret_addr must be non-negative")

    chase_base = 8
    if chase_base <= secret_addr <= chase_base + SPECTRE_CHASE_DEPTH:
        chase_base = secret_addr + 1
    cells = [chase_base + i for i in range(SPECTRE_CHASE_DEPTH)]
    data_init = {cells[i]: cells[i + 1] for i in range(len(cells) - 1)}
    data_init[cells[-1]] = 0
    data_init[secret_addr] = 0  # placeholder; variants override

    instrs = [
        ArchInstr(Opcode.ADDI, 5, 0, imm=secret_addr),
        ArchInstr(Opcode.ADDI, 7, 0, imm=probe_stride),
        ArchInstr(Opcode.ADDI, 8, 0, imm=SPECTRE_PROBE_BASE),
        ArchInstr(Opcode.ADDI, 9, 0, imm=cells[0]),
        ArchInstr(Opcode.LOAD, 2, 9, imm=0),
    ]
    for _ in range(SPECTRE_CHASE_DEPTH - 1):
        instrs.append(ArchInstr(Opcode.LOAD, 2, 2, imm=0))
    gadget = len(instrs) + 2
    done = gadget + 5
    instrs.append(ArchInstr(Opcode.BNE, None, 2, 0, imm=gadget))
    instrs.append(ArchInstr(Opcode.JMP, None, imm=done))
    instrs.append(ArchInstr(Opcode.LOAD, 4, 5, imm=0))   # transient secret read
    instrs.append(ArchInstr(Opcode.MUL, 6, 4, 7))
    instrs.append(ArchInstr(Opcode.ADD, 6, 6, 8))
    instrs.append(ArchInstr(Opcode.LOAD, 6, 6, imm=0))   # probe: the transmitter
    instrs.append(ArchInstr(Opcode.JMP, None, imm=done))
    instrs.append(ArchInstr(Opcode.HALT))
    return Program(instrs, data_init, {secret_addr})


class _Builder:
    """Shared emit helpers for the workload generators."""

    # Register conventions: r1 region base, r2 chase cursor, r3 accumulator,
    # r4..r11 rotating value pool.
    POOL = list(range(4, 12))

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.instrs: list[ArchInstr] = []
        self.data_init: dict[int, int] = {}
        self.pool_idx = 0

    def pick(self) -> int:
        reg = self.POOL[self.pool_idx % len(self.POOL)]
        self.pool_idx += 1
        return reg

    def emit(self, *args, **kwargs):
        self.instrs.append(ArchInstr(*args, **kwargs))

    def gate(self, base_reg: int = 1):
        # Always-taken branch comparing a loaded value against itself:
        # predicted correctly under the default predictor, so it never
        # squashes, but it resolves only once the load returns, keeping a
        # speculation window open over the following instructions the way a
        # bounds check on loaded data does.
        rv = self.pick()
        imm = self.rng.randrange(REGION_CELLS) if base_reg == 1 else 0
        self.emit(Opcode.LOAD, rv, base_reg, imm=imm)
        self.emit(Opcode.BEQ, None, rv, rv, imm=len(self.instrs) + 1)

    def data_branch(self, skip: int):
        # Outcome depends on runtime values; mispredicts arise naturally.
        a = self.rng.choice(self.POOL)
        b = self.rng.choice(self.POOL)
        op = self.rng.choice((Opcode.BEQ, Opcode.BNE))
        self.emit(op, None, a, b, imm=len(self.instrs) + 1 + skip)

    def alu_burst(self, count: int, consume: Optional[int] = None):
        for i in range(count):
            dst = self.pick()
            if consume is not None and i == 0:
                self.emit(Opcode.ADD, dst, consume, 3)
            elif self.rng.random() < 0.25:
                self.emit(Opcode.MUL, dst, self.rng.choice(self.POOL), 3)
            elif self.rng.random() < 0.5:
                self.emit(Opcode.ADDI, dst, self.rng.choice(self.POOL),
                          imm=self.rng.randrange(1, 64))
            else:
                self.emit(Opcode.ADD, dst, self.rng.choice(self.POOL),
                          self.rng.choice(self.POOL))


REGION_BASE = 256
REGION_CELLS = 8
CHASE_BASE = 512
CHASE_CELLS = 16


def _init_common(b: _Builder):
    for i in range(REGION_CELLS):
        b.data_init[REGION_BASE + i] = b.rng.randrange(1, 50)
    b.emit(Opcode.ADDI, 1, 0, imm=REGION_BASE)
    b.emit(Opcode.ADDI, 3, 0, imm=1)
    b.emit(Opcode.ADDI, 12, 0, imm=b.rng.randrange(1, 100))
    for reg in _Builder.POOL:
        b.emit(Opcode.ADDI, reg, 0, imm=b.rng.randrange(1, 20))


def _init_chase(b: _Builder):
    order = list(range(CHASE_CELLS))
    b.rng.shuffle(order)
    for i in range(CHASE_CELLS):
        b.data_init[CHASE_BASE + order[i]] = CHASE_BASE + order[(i + 1) % CHASE_CELLS]
    b.emit(Opcode.ADDI, 2, 0, imm=CHASE_BASE + order[0])


def _compute_block(b: _Builder):
    if b.rng.random() < 0.5:
        b.gate()
    consume = b.pick()
    b.emit(Opcode.LOAD, consume, 1, imm=b.rng.randrange(REGION_CELLS))
    b.alu_burst(b.rng.randrange(6, 11), consume=consume)


def _chase_block(b: _Builder, hops: int):
    if b.rng.random() < 0.5:
        # Gate on the chase cursor: resolution waits on the serialized
        # chain, which keeps the window open over the following hops.
        b.gate(base_reg=2)
    for _ in range(hops):
        b.emit(Opcode.LOAD, 2, 2, imm=0)


def _store_block(b: _Builder, tainted_data: bool = True):
    if b.rng.random() < 0.35:
        b.gate()
    src_off = b.rng.randrange(REGION_CELLS)
    dst_off = b.rng.randrange(REGION_CELLS)
    rv = b.pick()
    rw = b.pick()
    if tainted_data:
        b.emit(Opcode.LOAD, rv, 1, imm=src_off)
        b.emit(Opcode.ADDI, rv, rv, imm=b.rng.randrange(1, 8))
        b.emit(Opcode.STORE, None, 1, rv, imm=dst_off)
    else:
        b.emit(Opcode.STORE, None, 1, 12, imm=dst_off)
    b.emit(Opcode.LOAD, rw, 1, imm=dst_off)
    b.emit(Opcode.ADD, 3, 3, rw)


def gen_workload(kind: str, size: int, seed: int) -> Program:
    """Deterministic synthetic workload of roughly ``size`` body instructions.

    compute_bound  ALU chains behind occasional loads
    pointer_chase  serialized loads, each address produced by the previous load
    store_load_mix stores with loaded data and nearby aliasing loads
    mixed          seeded interleaving of all three
    """
    if kind not in WORKLOAD_KINDS:
        raise ValueError(f"unknown workload kind {kind!r}")
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = random.Random((kind, size, seed).__repr__())
    b = _Builder(rng)
    _init_common(b)
    if kind in ("pointer_chase", "mixed"):
        _init_chase(b)

    body_start = len(b.instrs)
    while len(b.instrs) - body_start < size:
        if kind == "compute_bound":
            _compute_block(b)
        elif kind == "pointer_chase":
            _chase_block(b, hops=rng.randrange(3, 7))
        elif kind == "store_load_mix":
            _store_block(b)
        else:
            roll = rng.random()
            if roll < 0.50:
                _compute_block(b)
            elif roll < 0.75:
                _chase_block(b, hops=rng.randrange(2, 5))
            elif roll < 0.85:
                _store_block(b, tainted_data=False)
            else:
                b.data_branch(skip=1)
                b.alu_burst(2)
    b.emit(Opcode.HALT)
    return Program(b.instrs, b.data_init, set())
