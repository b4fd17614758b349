import argparse
import asyncio
import logging
import os
import sys

import numpy as np
import yaml

# Import application modules
from asmplan import data_handler, logger_setup
from asmplan.assembly import Assembly
from asmplan.baselines import BASELINE_NAMES, GeomPlannerConfig, as_path_planner
from asmplan.benchmark import PLANNERS, BenchConfig, run_benchmark
from asmplan.config import config_manager
from asmplan.fixtures import BENCHMARK_FIXTURES, FIXTURES, write_fixtures
from asmplan.path_planner import ActionMode, PathFailure, PathQuery, plan_group_path
from asmplan.physics import RigidState
from asmplan.pipeline import EmptyAssemblyError, PipelineParams, preprocess_corpus, preprocess_directory
from asmplan.seq_planner import SequenceFailure, plan_assembly, plan_disassembly_sequence
from asmplan.stats_manager import StatsManager, get_current_stats
from asmplan.validator import validate_record

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CONFIG_ERROR = 2


# --- Argument Parsing ---
def parse_seeds(value: str) -> tuple[int, ...]:
    """'3' means seeds 0, 1, 2; '4,7' lists seeds explicitly."""
    if "," in value:
        return tuple(int(v) for v in value.split(",") if v.strip())
    return tuple(range(int(value)))


def parse_override(value: str) -> tuple[str, object]:
    key, sep, raw = value.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"Expected key=value, got '{value}'")
    return key.strip(), yaml.safe_load(raw)


def _add_planner_flags(parser: argparse.ArgumentParser, sequence: bool = False):
    parser.add_argument("--planner", choices=PLANNERS, default="ours")
    parser.add_argument("--mode", choices=[m.value for m in ActionMode], default=ActionMode.TRANSLATION_ROTATION.value)
    parser.add_argument("--t-max", dest="t_max", type=float, default=None, help="Timeout per path attempt (s)")
    parser.add_argument("--seed", type=int, default=0)
    if sequence:
        parser.add_argument("--T-max", dest="T_max", type=float, default=None, help="Timeout per sequence (s)")
        parser.add_argument("--group-size", dest="group_size", type=int, default=1,
                            help="Largest number of parts moved together")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asmplan", description="Physics-based assembly and disassembly planning")
    parser.add_argument("--config", default=None, help="YAML configuration file (default: config.yaml)")
    parser.add_argument("--set", dest="overrides", action="append", type=parse_override, default=[],
                        metavar="KEY=VALUE", help="Override one configuration key")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="Clean raw assemblies into planner-ready manifests")
    p.add_argument("source", help="Assembly directory, or a corpus of assembly directories")
    p.add_argument("destination")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fixtures", help="Write the synthetic fixture assemblies")
    p.add_argument("destination")
    p.add_argument("--names", nargs="+", choices=sorted(FIXTURES), default=None,
                   help=f"Default: {' '.join(BENCHMARK_FIXTURES)}")

    p = sub.add_parser("plan-path", help="Plan a disassembly path for one part (or a group)")
    p.add_argument("manifest")
    p.add_argument("--part", nargs="+", required=True)
    p.add_argument("--d-max", dest="d_max", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_planner_flags(p)

    p = sub.add_parser("plan-sequence", help="Plan a full disassembly sequence")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    _add_planner_flags(p, sequence=True)

    p = sub.add_parser("plan-assembly", help="Plan an assembly by reversing a disassembly sequence")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--lift", type=float, default=5.0,
                   help="Start every part this far above its assembled pose")
    _add_planner_flags(p, sequence=True)

    p = sub.add_parser("benchmark", help="Run a planner over a corpus and seeds")
    p.add_argument("corpus")
    p.add_argument("--planner", choices=PLANNERS, default="ours")
    p.add_argument("--mode", choices=[m.value for m in ActionMode], default=ActionMode.TRANSLATION_ROTATION.value)
    p.add_argument("--t-max", dest="t_max", type=float, default=None)
    p.add_argument("--T-max", dest="T_max", type=float, default=None)
    p.add_argument("--seeds", type=parse_seeds, default=None, help="Seed count, or a comma-separated list")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--rotate", action="store_true", help="Randomly rotate each assembly per seed")
    p.add_argument("--group-size", dest="group_size", type=int, default=None)
    p.add_argument("--out", default=None, help="Report file (JSON)")

    p = sub.add_parser("validate", help="Replay a path, sequence or plan file through the validator")
    p.add_argument("manifest")
    p.add_argument("plan")
    p.add_argument("--no-replay", dest="replay", action="store_false", help="Skip the physics replay")
    p.add_argument("--out", default=None)
    return parser


def _path_planner(args):
    if args.planner in BASELINE_NAMES:
        return as_path_planner(args.planner, args.seed, GeomPlannerConfig.from_config(args.seed)), False
    return None, args.planner == "ours"


# --- Subcommands ---
def cmd_preprocess(args) -> int:
    params = PipelineParams.from_config(args.seed)
    if os.path.exists(os.path.join(args.source, "manifest.json")):
        try:
            report = preprocess_directory(args.source, args.destination, params)
        except EmptyAssemblyError as e:
            logger.error(f"{e}")
            return EXIT_OK
        logger.info(f"Removal counts: {report.removal_counts()}")
        return EXIT_OK
    records = preprocess_corpus(args.source, args.destination, params,
                                workers=args.workers or config_manager.get("workers"))
    flagged = sum(1 for r in records if r.get("review_required"))
    failed = sum(1 for r in records if r.get("error") or not r.get("final_parts"))
    logger.info(f"Preprocessed {len(records)} assemblies: {failed} without a result, {flagged} flagged for review")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    paths = write_fixtures(args.destination, args.names)
    for path in paths:
        print(path)
    return EXIT_OK


def cmd_plan_path(args) -> int:
    assembly = Assembly.from_manifest(args.manifest)
    t_max = args.t_max or config_manager.get("path_timeout")
    query = PathQuery(part_ids=tuple(args.part), t_max=t_max, d_max=args.d_max, mode=args.mode)
    planner, _ = _path_planner(args)
    if planner is not None:
        result = planner(assembly, query, StatsManager(name="plan-path"))
    else:
        result = plan_group_path(assembly, query)
    if isinstance(result, PathFailure):
        logger.warning(f"No path for {list(query.part_ids)}: {result.kind.value} ({result.message})")
        return EXIT_OK
    if len(result) == 1:
        data_handler.export_path(result[0], args.out)
    else:
        data_handler.save_sequence(args.out, {"header": {"kind": "disassembly", "order": [p.part_id for p in result]},
                                              "paths": [p.to_record() for p in result]})
    return EXIT_OK


def cmd_plan_sequence(args) -> int:
    assembly = Assembly.from_manifest(args.manifest)
    planner, progressive = _path_planner(args)
    result = plan_disassembly_sequence(assembly, t_max=args.t_max, T_max=args.T_max, progressive=progressive,
                                       mode=args.mode, path_planner=planner, group_size=args.group_size,
                                       planner_name=args.planner)
    if isinstance(result, SequenceFailure):
        logger.warning(f"Sequence planning failed ({result.kind.value}): {result.message}. Saving partial sequence.")
        result.partial.meta["failure"] = result.kind.value
        data_handler.save_sequence(args.out, result.partial)
    else:
        data_handler.save_sequence(args.out, result)
    return EXIT_OK


def cmd_plan_assembly(args) -> int:
    assembly = Assembly.from_manifest(args.manifest)
    planner, progressive = _path_planner(args)
    lift = np.array([0.0, 0.0, args.lift])
    initial = {pid: RigidState(t=part.assembled_state.t + lift) for pid, part in assembly.parts.items()}
    result = plan_assembly(assembly, initial, t_max=args.t_max, T_max=args.T_max, progressive=progressive,
                           mode=args.mode, path_planner=planner, group_size=args.group_size,
                           planner_name=args.planner)
    if isinstance(result, SequenceFailure):
        logger.warning(f"Assembly planning failed ({result.kind.value}): {result.message}")
        return EXIT_OK
    data_handler.save_plan(args.out, result)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = BenchConfig.from_config(planner=args.planner, mode=args.mode, t_max=args.t_max, T_max=args.T_max,
                                  seeds=args.seeds, workers=args.workers, rotate=args.rotate,
                                  group_size=args.group_size, overrides=dict(args.overrides))
    report = asyncio.run(run_benchmark(cfg, args.corpus))
    print(report.format_table())
    if args.out:
        data_handler.save_report(args.out, report)
    return EXIT_OK


def cmd_validate(args) -> int:
    assembly = Assembly.from_manifest(args.manifest)
    record = data_handler.load_plan(args.plan)
    if not record:
        raise ValueError(f"Nothing to validate in {args.plan}")
    report = validate_record(assembly, record, replay=args.replay)
    if args.out:
        data_handler.save_report(args.out, report)
    print(f"{'VALID' if report.ok else 'INVALID'}: {report.checked_states} states checked, "
          f"{report.replayed_paths} paths replayed, {len(report.issues)} issues")
    return EXIT_OK if report.ok else EXIT_INVALID


COMMANDS = {
    "preprocess": cmd_preprocess,
    "fixtures": cmd_fixtures,
    "plan-path": cmd_plan_path,
    "plan-sequence": cmd_plan_sequence,
    "plan-assembly": cmd_plan_assembly,
    "benchmark": cmd_benchmark,
    "validate": cmd_validate,
}


# --- Main ---
def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.config:
        if not os.path.exists(args.config):
            print(f"Configuration file not found: {args.config}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        config_manager.reload(args.config)
    config_manager.update(dict(args.overrides))

    # --- Setup ---
    logger_setup.setup_logging()
    config_manager.log_loaded_config() # Log the loaded configuration via the manager

    try:
        code = COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"{args.command} aborted: {e}")
        return EXIT_CONFIG_ERROR
    except KeyboardInterrupt:
        logger.info("Interrupted.")
        return EXIT_CONFIG_ERROR
    logger.debug(f"Planner counters: {get_current_stats().as_dict()}")
    return code


if __name__ == "__main__":
    sys.exit(main())
