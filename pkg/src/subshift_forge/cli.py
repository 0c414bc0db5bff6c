"""The ``forge`` command line: schedule, build, verify, seq and info."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from subshift_forge._core import artifacts
from subshift_forge._core.config import ALL_CHECKS, RunConfig, load_config
from subshift_forge._core.errors import (
    CapacityError,
    ConfigError,
    ConstructionFailedError,
    InvalidArgumentError,
    ScheduleError,
    VerificationError,
)
from subshift_forge._core.filters import required_sequence_length
from subshift_forge.ergodicity import (
    default_n_list,
    diameter_report,
    entropy_report,
    freq_spread,
    uniformity_sweep,
)
from subshift_forge.hierarchy import FamilyLevel, build_hierarchy, check_gamma_chain, reverify_level
from subshift_forge.schedule import Schedule, all_green, build_schedule, validate_schedule
from subshift_forge.sequences import (
    TestSequence,
    load_sequence,
    mobius,
    save_sequence,
    synthetic_pm1,
    verify_aperiodic,
)
from subshift_forge.symbolic import code_family_for_step

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONSTRUCTION = 3
EXIT_VERIFICATION = 4


def _checks(value: str) -> tuple[str, ...]:
    names = tuple(v.strip() for v in value.split(",") if v.strip())
    unknown = set(names) - set(ALL_CHECKS)
    if unknown:
        raise argparse.ArgumentTypeError(
            f"unknown checks {sorted(unknown)}; choose from {', '.join(ALL_CHECKS)}"
        )
    return names


def _u64(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="forge", description="Build and verify hierarchical block families."
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    commands = parser.add_subparsers(dest="command", required=True)

    def run_options(
        sub: argparse.ArgumentParser, config_required: bool = True, threads: bool = True
    ) -> None:
        sub.add_argument("--config", type=Path, required=config_required)
        sub.add_argument("--out", type=Path, required=True)
        sub.add_argument("--seed", type=_u64)
        sub.add_argument("--mode", choices=("desk", "faithful"))
        if threads:
            sub.add_argument("--threads", type=int, default=1)

    schedule = commands.add_parser("schedule", help="compute and validate the schedule")
    run_options(schedule, threads=False)

    build = commands.add_parser("build", help="build levels 0..K, resuming if possible")
    run_options(build)
    build.add_argument("--levels", type=int, help="highest level to build")
    build.add_argument("--progress", action="store_true")

    verify = commands.add_parser("verify", help="verify a built run directory")
    run_options(verify, config_required=False)
    verify.add_argument("--checks", type=_checks, default=ALL_CHECKS)

    seq = commands.add_parser("seq", help="test sequence utilities")
    seq_commands = seq.add_subparsers(dest="seq_command", required=True)
    seq_mobius = seq_commands.add_parser("mobius", help="write mu(1..n)")
    seq_mobius.add_argument("--n", type=int, required=True)
    seq_mobius.add_argument("--out", type=Path, required=True)
    seq_verify = seq_commands.add_parser("verify", help="screen a sequence file for aperiodicity")
    seq_verify.add_argument("--path", required=True)
    seq_verify.add_argument("--t-max", type=int, default=10)
    seq_verify.add_argument("--tol", type=float, default=0.05)

    commands.add_parser("info", help="print package versions for bug reports")
    return parser.parse_args(argv)


def _run_config(args: argparse.Namespace) -> RunConfig:
    return load_config(args.config).with_overrides(seed=args.seed, mode=args.mode)


def load_y(config: RunConfig, length: int) -> TestSequence:
    """The run's test sequence with at least ``length`` terms."""
    source = config.sequence
    n = source.length or length
    if n < length:
        raise ConfigError(f"'sequence.length' {n} is below the {length} terms the run reads.")
    if source.source == "mobius":
        return mobius(n)
    if source.source == "synthetic":
        return synthetic_pm1(source.seed, n)
    y = load_sequence(source.path)
    if len(y) < length:
        raise ConfigError(f"Sequence file {source.path} has {len(y)} terms; the run reads {length}.")
    return y


def sequence_length(schedule: Schedule, top: int) -> int:
    """Terms of ``y`` read by the correlation test up to level ``top``."""
    return max(
        (required_sequence_length(schedule.m(k), schedule.N_k(k)) for k in range(1, top + 1)),
        default=1,
    )


def cmd_schedule(args: argparse.Namespace) -> int:
    config = _run_config(args)
    schedule = build_schedule(config.schedule)
    report = validate_schedule(schedule)
    artifacts.write_config(args.out, config)
    artifacts.write_schedule(args.out, schedule, report, config)
    print(f"jumps: {json.dumps({str(m): K for m, K in sorted(schedule.jumps.items())})}")
    if schedule.faithful_jumps:
        print(
            "faithful jumps: "
            + json.dumps({str(m): K for m, K in sorted(schedule.faithful_jumps.items())})
        )
    failing = report[~report["holds"]]
    if len(failing):
        print(failing[["name", "lhs", "rhs", "gating"]].to_string(index=False))
    return EXIT_OK if all_green(report) else EXIT_VERIFICATION


def cmd_build(args: argparse.Namespace) -> int:
    config = _run_config(args)
    out = args.out
    schedule = build_schedule(config.schedule)
    artifacts.write_config(out, config)
    artifacts.write_schedule(out, schedule, validate_schedule(schedule), config)
    top = schedule.horizon if args.levels is None else min(args.levels, schedule.horizon)
    y = load_y(config, sequence_length(schedule, top))
    done = artifacts.completed_levels(out, config)
    if not done:
        done = build_hierarchy(schedule, y, config.caps, top=0)
        artifacts.write_level(out, done[0], config)
    levels = build_hierarchy(
        schedule,
        y,
        config.caps,
        seed=config.seed,
        threads=args.threads,
        progress=args.progress,
        levels=done,
        on_level=lambda level: artifacts.write_level(out, level, config),
        top=top,
    )
    for level in levels:
        print(level)
    return EXIT_OK


def _gate(section: dict, gating: bool, holds: bool) -> dict:
    section["gating"] = gating
    section["holds"] = bool(holds)
    return section


def run_checks(
    out: Path,
    config: RunConfig,
    schedule: Schedule,
    levels: list[FamilyLevel],
    y: TestSequence,
    checks: tuple[str, ...],
    threads: int = 1,
) -> tuple[dict, pd.DataFrame | None]:
    """Run the selected checks; returns the report sections and the uncorrelation trace.

    ``threads`` worker threads share the uncorrelation sweep.
    """
    sections = {}
    faithful = schedule.mode == "faithful"
    by_k = {level.k: level for level in levels}
    stepped = [level for level in levels if level.k >= 1]
    trace = None

    if "reverify" in checks:
        tables = []
        for level in stepped:
            reference = by_k.get(level.bernstein.p) if level.bernstein else None
            table = reverify_level(level, by_k[level.k - 1], schedule, y, reference=reference)
            stored = artifacts.read_json(artifacts.level_dir(out, level.k) / "meta.json")
            digest = int(stored["blocks_sha256"] != level.blocks_sha256)
            table.loc[len(table)] = ["blocks.txt digest", level.k, digest, 1, digest == 0]
            tables.append(table)
        table = pd.concat(tables, ignore_index=True) if tables else pd.DataFrame()
        holds = table["holds"].all() if len(table) else True
        sections["reverify"] = _gate({"rows": artifacts.table_records(table)}, True, holds)

    if "gamma" in checks:
        table = check_gamma_chain(levels, schedule)
        gating = table[table["gating"]]
        sections["gamma"] = _gate(
            {"rows": artifacts.table_records(table)}, faithful, gating["holds"].all()
        )

    if "entropy" in checks:
        report = entropy_report(levels, schedule.M)
        sections["entropy"] = _gate(
            {
                "levels": artifacts.table_records(report.levels),
                "pairs": artifacts.table_records(report.pairs),
            },
            True,
            report.holds,
        )

    bernstein_levels = [level for level in stepped if level.bernstein is not None]
    if "spread" in checks:
        rows = []
        for level in bernstein_levels:
            ue = schedule.ue_for_step(level.k)
            spread = freq_spread(level, ue.n)
            slack = ue.n * level.bernstein.q / level.N_k
            bound = ue.theta + 2 * slack
            rows.append(
                {
                    "k": level.k,
                    "n": ue.n,
                    "spread": spread.max_spread,
                    "bound": bound,
                    "worst_D": None if spread.worst_D is None else str(spread.worst_D),
                    "worst_pair": spread.worst_pair,
                    "holds": spread.max_spread <= bound,
                }
            )
        sections["spread"] = _gate({"rows": rows}, True, all(r["holds"] for r in rows))

    if "diameter" in checks:
        rows = []
        for level in bernstein_levels:
            ue = schedule.ue_for_step(level.k)
            report = diameter_report(
                level,
                ue,
                config.verify.samples,
                config.seed,
                length=config.verify.point_length,
            )
            rows.append(report.to_dict())
        holds = all(r["holds"] and r["contract_holds"] for r in rows)
        sections["diameter"] = _gate({"rows": rows}, True, holds)

    if "uncorrelation" in checks and stepped:
        top = stepped[-1]
        n_list = config.verify.n_list or default_n_list(schedule, top.k)
        tables, seen = [], set()
        for f in code_family_for_step(schedule.N, top.k, schedule.windows):
            # |A(n)| is the same for f and -f
            if f.negated().serialize() in seen:
                continue
            seen.add(f.serialize())
            table = uniformity_sweep(
                top, y, f, n_list, schedule=schedule, seed=config.seed, threads=threads
            )
            table.insert(0, "code", f.serialize())
            tables.append(table)
        trace = pd.concat(tables, ignore_index=True)
        holds = not (trace["status"] == "violated").any()
        sections["uncorrelation"] = _gate({"rows": artifacts.table_records(trace)}, True, holds)

    return sections, trace


def cmd_verify(args: argparse.Namespace) -> int:
    out = args.out
    stored = artifacts.read_config(out)
    config = load_config(args.config) if args.config is not None else stored
    config = config.with_overrides(seed=args.seed)
    if config.config_hash != stored.config_hash:
        raise ConfigError(
            f"Config {config.config_hash[:12]} does not match the run in {out} "
            f"({stored.config_hash[:12]})."
        )
    schedule = artifacts.read_schedule(out, config)
    # --mode here only decides which checks gate
    if args.mode is not None:
        schedule = dataclasses.replace(schedule, mode=args.mode)
    levels = artifacts.read_levels(out, config)
    top = levels[-1].k
    length = sequence_length(schedule, top)
    if config.verify.n_list:
        length = max(length, max(config.verify.n_list))
    y = load_y(config, length)
    sections, trace = run_checks(
        out, config, schedule, levels, y, args.checks, threads=args.threads
    )
    passed = all(s["holds"] for s in sections.values() if s["gating"])
    artifacts.write_report(
        out,
        {"mode": schedule.mode, "checks": sections, "passed": passed, "levels": top},
        config,
    )
    if trace is not None:
        artifacts.write_uncorrelation(out, trace)
    for name, section in sections.items():
        verdict = "ok" if section["holds"] else "FAIL"
        print(f"{name:<14} {verdict:<5} {'gating' if section['gating'] else 'reported'}")
    if not passed:
        raise VerificationError(f"gating checks failed; see {out / artifacts.REPORT_FILE}")
    return EXIT_OK


def cmd_seq(args: argparse.Namespace) -> int:
    if args.seq_command == "mobius":
        save_sequence(mobius(args.n), args.out)
        return EXIT_OK
    y = load_sequence(args.path)
    report = verify_aperiodic(y, args.t_max, args.tol)
    print(report.table.to_string(index=False))
    if report.note:
        print(report.note)
    return EXIT_OK if report.passed else EXIT_VERIFICATION


def cmd_info(args: argparse.Namespace) -> int:
    import session_info

    session_info.show(dependencies=True, html=False)
    return EXIT_OK


COMMANDS = {
    "schedule": cmd_schedule,
    "build": cmd_build,
    "verify": cmd_verify,
    "seq": cmd_seq,
    "info": cmd_info,
}


def main(argv: list[str] | None = None) -> int:
    """Entry point of the ``forge`` console script; returns the exit code."""
    args = _parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ScheduleError, InvalidArgumentError, CapacityError) as err:
        print(f"forge: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ConstructionFailedError as err:
        print(
            f"forge: construction failed at level {err.level}: {err} "
            f"(draws={err.draws}, worst={err.worst:.6g})",
            file=sys.stderr,
        )
        return EXIT_CONSTRUCTION
    except VerificationError as err:
        print(f"forge: {err}", file=sys.stderr)
        return EXIT_VERIFICATION


if __name__ == "__main__":
    raise SystemExit(main())
