"""Experiment harness and command-line interface.

Config files and experiment specs are plain line-oriented text::

    # core config: one "key = value" per line
    width = 4
    mem_ports = 2
    rob_entries = 128
    predictor = scripted:1,0,1     # always_taken | never_taken | scripted:...

    # experiment spec
    schemes   = baseline, stt-rename, stt-issue, nda
    configs   = small, medium, large, mega      # presets or .cfg paths
    workloads = mixed:600, store_load_mix:400   # kind:size or .asm paths
    seeds     = 1, 2, 3
    security  = spectre:100:4                   # optional NI check
    output    = results                         # optional directory

Output directory precedence: -o flag, spec "output" entry, $SPECSIM_OUTDIR,
current directory. CLI --set key=value overrides config-file values.

The process exits nonzero iff a security check reports a secure scheme as
distinguishable.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, asdict, fields
from pathlib import Path
from typing import Callable, Optional

from . import timing
from .core import CoreConfig, PRESETS, preset
from .isa import Program, assemble, disassemble, gen_spectre_v1, gen_workload, \
    WORKLOAD_KINDS
from .observe import (
    NIVerdict, RunStats, STATS_SCHEMA, check_noninterference, collect_stats,
    simulate,
)
from .schemes import SCHEME_NAMES, SECURE_SCHEMES

MATRIX_SCHEMA = "matrix-v1"
NORMALIZED_SCHEMA = "normalized-ipc-v1"
TREND_SCHEMA = "width-trend-v1"
TIMING_SCHEMA = "timing-sweep-v1"
SECURITY_SCHEMA = "security-v1"
DEFAULT_SECRETS = tuple(range(8))


def parse_kv_text(text: str, path: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def config_from_entries(entries: dict[str, str]) -> CoreConfig:
    kwargs = {}
    valid = {f.name for f in fields(CoreConfig)}
    for key, value in entries.items():
        if key == "predictor":
            if value.startswith("scripted:"):
                kwargs["predictor"] = "scripted"
                kwargs["predictor_script"] = tuple(
                    int(tok) for tok in value.split(":", 1)[1].split(","))
            else:
                kwargs["predictor"] = value
            continue
        if key not in valid:
            raise ValueError(f"unknown config key {key!r}")
        if key == "speculative_wakeup":
            kwargs[key] = _BOOL[value.lower()]
        elif key == "predictor_script":
            kwargs[key] = tuple(int(tok) for tok in value.split(","))
        else:
            kwargs[key] = int(value)
    return CoreConfig(**kwargs)


def load_config(token: str, overrides: Optional[dict[str, str]] = None
                ) -> tuple[str, CoreConfig]:
    """Resolve a preset name or a .cfg path, then apply overrides."""
    if token in PRESETS:
        entries = {k: str(v) for k, v in asdict(preset(token)).items()
                   if k != "predictor_script"}
        name = token
    else:
        path = Path(token)
        if not path.exists():
            raise ValueError(f"config {token!r} is neither a preset nor a file")
        entries = parse_kv_text(path.read_text(), str(path))
        name = path.stem
    if overrides:
        entries.update(overrides)
    return name, config_from_entries(entries)


@dataclass
class WorkloadSpec:
    label: str
    build: Callable[[int], Program]  # seed -> program


def parse_workload(token: str) -> WorkloadSpec:
    if token.endswith(".asm"):
        program = assemble(Path(token).read_text())
        return WorkloadSpec(Path(token).stem, lambda seed: program)
    if ":" in token:
        kind, size_text = token.split(":", 1)
        size = int(size_text)
    else:
        kind, size = token, 400
    if kind not in WORKLOAD_KINDS:
        raise ValueError(f"unknown workload {token!r}")
    return WorkloadSpec(f"{kind}:{size}",
                        lambda seed, k=kind, s=size: gen_workload(k, s, seed))


@dataclass
class ExperimentSpec:
    schemes: list[str]
    configs: list[str]
    workloads: list[str]
    seeds: list[int]
    security: Optional[str] = None
    output: Optional[str] = None
    overrides: dict[str, str] = None

    @classmethod
    def from_text(cls, text: str, path: str = "<spec>") -> "ExperimentSpec":
        entries = parse_kv_text(text, path)
        def split(key, default=None):
            if key not in entries:
                if default is None:
                    raise ValueError(f"{path}: missing {key!r}")
                return default
            return [tok.strip() for tok in entries[key].split(",") if tok.strip()]
        schemes = split("schemes")
        for s in schemes:
            if s not in SCHEME_NAMES:
                raise ValueError(f"unknown scheme {s!r}")
        return cls(
            schemes=schemes,
            configs=split("configs"),
            workloads=split("workloads"),
            seeds=[int(s) for s in split("seeds", ["0"])],
            security=entries.get("security"),
            output=entries.get("output"),
        )


@dataclass
class MatrixRow:
    scheme: str
    config: str
    workload: str
    seed: int
    stats: RunStats


@dataclass
class MatrixResult:
    rows: list[MatrixRow]
    # (workload, config, scheme) -> summary dict with the paper's mean
    # convention: mean cycles and mean instructions separately, then ratio.
    summary: dict[tuple[str, str, str], dict]
    configs: list[str]
    schemes: list[str]
    workloads: list[str]
    security: list[tuple[str, str, NIVerdict]] = None


def run_matrix(spec: ExperimentSpec) -> MatrixResult:
    """Fill every (scheme, config, workload, seed) cell and summarize.

    Normalized IPC is computed against the baseline cell of the same
    (config, workload); requesting it without a baseline run is an error.
    """
    configs = [load_config(tok, spec.overrides) for tok in spec.configs]
    workloads = [parse_workload(tok) for tok in spec.workloads]
    rows: list[MatrixRow] = []
    cells: dict[tuple[str, str, str], list[RunStats]] = {}
    for workload in workloads:
        programs = {seed: workload.build(seed) for seed in spec.seeds}
        for config_name, config in configs:
            for scheme in spec.schemes:
                for seed in spec.seeds:
                    result = simulate(programs[seed], config, scheme)
                    stats = collect_stats(result)
                    rows.append(MatrixRow(scheme, config_name,
                                          workload.label, seed, stats))
                    key = (workload.label, config_name, scheme)
                    cells.setdefault(key, []).append(stats)

    summary: dict[tuple[str, str, str], dict] = {}
    for key, stats_list in cells.items():
        cycles = sum(s.cycles for s in stats_list) / len(stats_list)
        instrs = sum(s.committed_instrs for s in stats_list) / len(stats_list)
        summary[key] = {"cycles": cycles, "instrs": instrs,
                        "ipc": instrs / cycles, "normalized": None}
    for (workload, config, scheme), cell in summary.items():
        base = summary.get((workload, config, "baseline"))
        if base is None:
            if scheme != "baseline":
                raise ValueError(
                    f"missing baseline cell for ({workload}, {config})")
            continue
        cell["normalized"] = cell["ipc"] / base["ipc"]

    security = []
    if spec.security:
        program = _security_program(spec.security)
        variants = [{cell: v for cell in program.secret_cells}
                    for v in DEFAULT_SECRETS]
        for config_name, config in configs:
            for scheme in spec.schemes:
                verdict = check_noninterference(program, variants, scheme,
                                                config)
                security.append((scheme, config_name, verdict))

    return MatrixResult(rows=rows, summary=summary,
                        configs=[name for name, _ in configs],
                        schemes=list(spec.schemes),
                        workloads=[w.label for w in workloads],
                        security=security)


def _security_program(token: str) -> Program:
    parts = token.split(":")
    if parts[0] == "spectre":
        secret = int(parts[1]) if len(parts) > 1 else 100
        stride = int(parts[2]) if len(parts) > 2 else 4
        return gen_spectre_v1(secret, stride)
    if token.endswith(".asm"):
        return assemble(Path(token).read_text())
    raise ValueError(f"bad security workload {token!r}")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _csv(schema: str, header: list[str], rows: list[list]) -> str:
    lines = [f"# schema={schema}", ",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    return "\n".join(lines) + "\n"


def matrix_csv(result: MatrixResult) -> str:
    header = ["scheme", "config", "workload", "seed"] + RunStats.columns()
    rows = [[r.scheme, r.config, r.workload, r.seed] + r.stats.row()
            for r in result.rows]
    return _csv(MATRIX_SCHEMA, header, rows)


def report(result: Optional[MatrixResult], kind: str, text: bool = False,
           max_width: int = 8) -> str:
    """Render one report kind as CSV (or a plain-text bar chart)."""
    if kind == "timing_sweep":
        rows = timing.sweep(max_width)
        if text:
            return _bars([(f"{r[1]} w={r[0]}", r[2]) for r in rows], "depth")
        return _csv(TIMING_SCHEMA, list(timing.SWEEP_COLUMNS),
                    [list(r) for r in rows])
    if result is None:
        raise ValueError(f"report kind {kind!r} needs a run matrix")
    if kind == "normalized_ipc":
        header = ["workload", "config"] + result.schemes
        rows = []
        for workload in result.workloads:
            for config in result.configs:
                row = [workload, config]
                for scheme in result.schemes:
                    cell = result.summary[(workload, config, scheme)]
                    value = 1.0 if scheme == "baseline" else cell["normalized"]
                    row.append(repr(value))
                rows.append(row)
        if text:
            bars = []
            for workload in result.workloads:
                for config in result.configs:
                    for scheme in result.schemes:
                        cell = result.summary[(workload, config, scheme)]
                        value = cell["normalized"] if scheme != "baseline" else 1.0
                        bars.append((f"{workload}/{config}/{scheme}", value))
            return _bars(bars, "normalized ipc")
        return _csv(NORMALIZED_SCHEMA, header, rows)
    if kind == "width_trend":
        header = ["workload", "scheme"] + result.configs
        rows = []
        for workload in result.workloads:
            for scheme in result.schemes:
                if scheme == "baseline":
                    continue
                row = [workload, scheme]
                for config in result.configs:
                    row.append(repr(result.summary[(workload, config,
                                                    scheme)]["normalized"]))
                rows.append(row)
        return _csv(TREND_SCHEMA, header, rows)
    if kind == "security":
        header = ["scheme", "config", "verdict"]
        rows = [[scheme, config,
                 "indistinguishable" if v.indistinguishable
                 else "distinguishable"]
                for scheme, config, v in (result.security or [])]
        return _csv(SECURITY_SCHEMA, header, rows)
    raise ValueError(f"unknown report kind {kind!r}")


def _bars(items: list[tuple[str, float]], title: str, width: int = 40) -> str:
    top = max((v for _, v in items), default=1.0) or 1.0
    label_w = max((len(k) for k, _ in items), default=0)
    lines = [f"{title} (max={top:g})"]
    for key, value in items:
        filled = int(round(width * value / top))
        lines.append(f"{key.ljust(label_w)} |{'#' * filled:<{width}}| {value:.3f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _outdir(flag: Optional[str], spec_output: Optional[str]) -> Path:
    target = flag or spec_output or os.environ.get("SPECSIM_OUTDIR") or "."
    path = Path(target)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def cmd_run(args) -> int:
    spec = ExperimentSpec.from_text(Path(args.spec).read_text(), args.spec)
    spec.overrides = _parse_overrides(args.set)
    result = run_matrix(spec)
    outdir = _outdir(args.output, spec.output)
    (outdir / "runstats.csv").write_text(matrix_csv(result))
    (outdir / "normalized_ipc.csv").write_text(report(result, "normalized_ipc"))
    if len(result.configs) > 1:
        (outdir / "width_trend.csv").write_text(report(result, "width_trend"))
    print(f"wrote {len(result.rows)} runs to {outdir}/runstats.csv")
    if args.bars:
        print(report(result, "normalized_ipc", text=True))
    failed = False
    if result.security:
        (outdir / "security.csv").write_text(report(result, "security"))
        for scheme, config, verdict in result.security:
            print(f"security {scheme}/{config}: {verdict}")
            if scheme in SECURE_SCHEMES and not verdict.indistinguishable:
                failed = True
    return 1 if failed else 0


def cmd_security(args) -> int:
    program = assemble(Path(args.program).read_text())
    if not program.secret_cells:
        print("program declares no .secret cells", file=sys.stderr)
        return 2
    _, config = load_config(args.config, _parse_overrides(args.set))
    secrets = [int(tok) for tok in args.secrets.split(",")]
    variants = [{cell: v for cell in program.secret_cells} for v in secrets]
    verdict = check_noninterference(program, variants, args.scheme, config)
    print(f"{args.scheme}/{args.config}: {verdict}")
    if args.scheme in SECURE_SCHEMES and not verdict.indistinguishable:
        return 1
    return 0


def cmd_timing_sweep(args) -> int:
    output = report(None, "timing_sweep", text=args.bars,
                    max_width=args.max_width)
    if args.output:
        Path(args.output).write_text(output)
        print(f"wrote {args.output}")
    else:
        print(output, end="")
    return 0


def cmd_gen(args) -> int:
    if args.kind == "spectre":
        program = gen_spectre_v1(args.secret_addr, args.stride)
    else:
        program = gen_workload(args.kind, args.size, args.seed)
    text = disassemble(program)
    if args.output:
        Path(args.output).write_text(text)
        print(f"wrote {args.output}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specsim",
        description="out-of-order core simulator for secure speculation schemes")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment spec file")
    p_run.add_argument("spec")
    p_run.add_argument("-o", "--output", default=None,
                       help="output directory (overrides spec and env)")
    p_run.add_argument("--set", action="append", default=[],
                       help="config override key=value (repeatable)")
    p_run.add_argument("--bars", action="store_true",
                       help="also print plain-text bars")
    p_run.set_defaults(func=cmd_run)

    p_sec = sub.add_parser("security",
                           help="non-interference check for a program")
    p_sec.add_argument("program", help="assembly file with .secret cells")
    p_sec.add_argument("--scheme", required=True, choices=SCHEME_NAMES)
    p_sec.add_argument("--config", required=True)
    p_sec.add_argument("--secrets",
                       default=",".join(str(v) for v in DEFAULT_SECRETS))
    p_sec.add_argument("--set", action="append", default=[])
    p_sec.set_defaults(func=cmd_security)

    p_tim = sub.add_parser("timing-sweep",
                           help="logic-cost sweep across core widths")
    p_tim.add_argument("--max-width", type=int, default=8)
    p_tim.add_argument("-o", "--output", default=None)
    p_tim.add_argument("--bars", action="store_true")
    p_tim.set_defaults(func=cmd_timing_sweep)

    p_gen = sub.add_parser("gen", help="emit a generated program as assembly")
    p_gen.add_argument("kind", choices=list(WORKLOAD_KINDS) + ["spectre"])
    p_gen.add_argument("--size", type=int, default=400)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--secret-addr", type=int, default=100)
    p_gen.add_argument("--stride", type=int, default=4)
    p_gen.add_argument("-o", "--output", default=None)
    p_gen.set_defaults(func=cmd_gen)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
