"""Benchmark orchestration: planner x assembly x seed grid over a corpus of manifests."""
import asyncio
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
import pytz
from scipy.spatial.transform import Rotation

from . import data_handler, mesh_io
from .assembly import Assembly
from .baselines import BASELINE_NAMES, GeomPlannerConfig, as_path_planner
from .config import RUN_START_TIME_UTC, config_manager
from .path_planner import ActionMode, FailureKind
from .seq_planner import SequenceFailure, bfs_path_planner, plan_disassembly_sequence
from .stats_manager import StatsManager

logger = logging.getLogger(__name__)

PLANNERS = ("ours", "ours-full-bfs") + BASELINE_NAMES
ROTATIONAL_CATEGORIES = frozenset({"screw", "puzzle", "others", "rotational"})
SIZE_CATEGORIES = ("two-part", "small", "medium", "large")


def size_category(part_count: int) -> str:
    if part_count <= 2:
        return "two-part"
    if part_count < 10:
        return "small"
    if part_count < 50:
        return "medium"
    return "large"


# --- Configuration ---

@dataclass(frozen=True)
class BenchConfig:
    planner: str = "ours"
    mode: ActionMode = ActionMode.TRANSLATION_ROTATION
    t_max: float | None = None # None: per-category default from the config file
    T_max: float = 7200.0
    seeds: tuple[int, ...] | None = None # None: path_seeds for two-part assemblies, sequence_seeds otherwise
    workers: int = 1
    rotate: bool = False
    group_size: int | None = None # None: manifest hint, else 1
    overrides: dict = field(default_factory=dict)
    results_file: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", ActionMode(self.mode))
        if self.seeds is not None:
            object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.planner not in PLANNERS:
            raise ValueError(f"Unknown planner '{self.planner}'. Choose from: {', '.join(PLANNERS)}")
        if self.seeds is not None and not self.seeds:
            raise ValueError("A benchmark needs at least one seed")
        if self.t_max is not None and not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if not self.T_max > 0:
            raise ValueError(f"T_max must be positive, got {self.T_max}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        if self.group_size is not None and self.group_size < 1:
            raise ValueError(f"group_size must be at least 1, got {self.group_size}")

    @classmethod
    def from_config(cls, **kwargs) -> "BenchConfig":
        values = {
            "T_max": config_manager.get("sequence_timeout"),
            "workers": config_manager.get("workers"),
            "results_file": config_manager.get("results_file"),
        }
        values.update({k: v for k, v in kwargs.items() if v is not None})
        return cls(**values)

    def seeds_for(self, part_count: int) -> tuple[int, ...]:
        """The explicit seeds, else the configured count for the task kind."""
        if self.seeds is not None:
            return self.seeds
        key = "path_seeds" if part_count <= 2 else "sequence_seeds"
        return tuple(range(config_manager.get(key)))

    def path_timeout(self, category: str) -> float:
        """Per-attempt budget: the explicit t_max, else the default for the assembly's category."""
        if self.t_max is not None:
            return self.t_max
        if category in ROTATIONAL_CATEGORIES:
            return config_manager.get("rotational_timeout")
        if category == "two-part":
            return config_manager.get("two_part_timeout")
        return config_manager.get("path_timeout")

    def to_record(self) -> dict:
        return {"planner": self.planner, "mode": self.mode.value, "t_max": self.t_max, "T_max": self.T_max,
                "seeds": None if self.seeds is None else list(self.seeds), "workers": self.workers,
                "rotate": self.rotate, "group_size": self.group_size, "overrides": dict(self.overrides)}


def planner_for(name: str, seed: int):
    """(path planner callable, progressive flag) for a benchmark planner name."""
    if name == "ours":
        return bfs_path_planner, True
    if name == "ours-full-bfs":
        return bfs_path_planner, False
    if name in BASELINE_NAMES:
        return as_path_planner(name, seed, GeomPlannerConfig.from_config(seed)), False
    raise ValueError(f"Unknown planner '{name}'")


# --- Report ---

@dataclass
class BenchReport:
    rows: list[dict]
    config: dict = field(default_factory=dict)
    aggregates: dict = field(default_factory=dict)
    created_utc: str = field(default_factory=lambda: RUN_START_TIME_UTC.isoformat())

    def __post_init__(self):
        if not self.aggregates:
            self.aggregates = recompute_aggregates(self.rows)

    def success_matrix(self) -> dict[tuple[str, int, bool], bool]:
        return {(r["source_id"], r["seed"], r["rotated"]): bool(r["success"]) for r in self.rows}

    def to_record(self) -> dict:
        return {"created_utc": self.created_utc, "config": self.config,
                "aggregates": self.aggregates, "rows": self.rows}

    def format_table(self) -> str:
        lines = [f"{'category':<10} {'runs':>5} {'success':>8} {'rate':>7} {'s/part':>8}"]
        for name, agg in self.aggregates.items():
            per_part = "-" if agg["mean_time_per_part"] is None else f"{agg['mean_time_per_part']:.2f}"
            lines.append(f"{name:<10} {agg['runs']:>5} {agg['successes']:>8} {100.0 * agg['success_rate']:>6.1f}% "
                         f"{per_part:>8}")
        return "\n".join(lines)


def _aggregate(rows: list[dict]) -> dict:
    successes = [r for r in rows if r["success"]]
    parts = sum(r["parts"] for r in successes)
    return {
        "runs": len(rows),
        "successes": len(successes),
        "success_rate": len(successes) / len(rows) if rows else 0.0,
        "mean_time_per_part": sum(r["wall_time"] for r in successes) / parts if parts else None,
    }


def recompute_aggregates(rows: list[dict]) -> dict:
    """Success rate and mean time per part, per category and overall, from the rows alone."""
    categories = sorted({r["category"] for r in rows},
                        key=lambda c: (SIZE_CATEGORIES.index(c) if c in SIZE_CATEGORIES else len(SIZE_CATEGORIES), c))
    result = {c: _aggregate([r for r in rows if r["category"] == c]) for c in categories}
    result["overall"] = _aggregate(rows)
    return result


# --- Tasks ---

@dataclass(frozen=True)
class BenchTask:
    manifest_path: str
    seed: int
    config: BenchConfig
    config_snapshot: dict


def rotated_meshes(meshes: dict, seed: int) -> dict:
    """The whole assembly turned by one seeded uniform random rotation about its bounding-box centre."""
    lower = np.min([m.bounds[0] for m in meshes.values()], axis=0)
    upper = np.max([m.bounds[1] for m in meshes.values()], axis=0)
    centre = 0.5 * (lower + upper)
    transform = np.eye(4)
    transform[:3, :3] = Rotation.random(random_state=seed).as_matrix()
    transform[:3, 3] = centre - transform[:3, :3] @ centre
    result = {}
    for pid, mesh in meshes.items():
        turned = mesh.copy()
        turned.apply_transform(transform)
        result[pid] = turned
    return result


def _row(task: BenchTask, source_id: str, category: str, parts: int) -> dict:
    return {
        "source_id": source_id,
        "planner": task.config.planner,
        "mode": task.config.mode.value,
        "seed": task.seed,
        "rotated": task.config.rotate,
        "category": category,
        "parts": parts,
        "success": False,
        "failure_kind": None,
        "wall_time": 0.0,
        "sim_calls": 0,
        "path_length": None,
        "removed": 0,
        "order": [],
        "created_utc": datetime.now(pytz.utc).isoformat(),
    }


def _manifest_file(path: str) -> str:
    return os.path.join(path, mesh_io.MANIFEST_NAME) if os.path.isdir(path) else path


def run_task(task: BenchTask) -> dict:
    """One (assembly, seed) run. Never raises: crashes become rows with failure_kind 'error'."""
    config_manager.update(task.config_snapshot)
    config_manager.update(task.config.overrides)
    cfg = task.config
    manifest = data_handler.load_manifest(_manifest_file(task.manifest_path))
    source_id = manifest.get("source_id") or os.path.basename(os.path.dirname(task.manifest_path))
    part_count = len(manifest.get("parts", []))
    category = manifest.get("category") or size_category(part_count)
    row = _row(task, source_id, category, part_count)
    start = time.monotonic()
    try:
        raw = mesh_io.load_raw_assembly(task.manifest_path)
        meshes = raw.world_meshes()
        if cfg.rotate:
            meshes = rotated_meshes(meshes, task.seed)
        assembly = Assembly.from_meshes(meshes, source_id=raw.source_id, category=raw.category)
        group_size = cfg.group_size or int(manifest.get("group_size", 1))
        group_size = max(1, min(group_size, len(assembly.active) - 1))
        path_planner, progressive = planner_for(cfg.planner, task.seed)
        stats = StatsManager(name=f"{source_id}-{task.seed}")
        build_time = time.monotonic() - start

        result = plan_disassembly_sequence(
            assembly, t_max=cfg.path_timeout(category), T_max=cfg.T_max, progressive=progressive,
            mode=cfg.mode, path_planner=path_planner, group_size=group_size,
            planner_name=cfg.planner, stats=stats)
        sequence = result.partial if isinstance(result, SequenceFailure) else result
        row.update({
            "success": not isinstance(result, SequenceFailure),
            "failure_kind": result.kind.value if isinstance(result, SequenceFailure) else None,
            "wall_time": sequence.meta.get("wall_time", 0.0),
            "build_time": build_time,
            "sim_calls": stats.value("simulate_calls"),
            "removed": len(sequence.paths),
            "order": sequence.order,
            "path_length": float(sum(p.length for p in sequence.paths)),
        })
    except Exception as e:
        logger.exception(f"Benchmark task {source_id} seed {task.seed} crashed: {e}")
        row.update({"failure_kind": FailureKind.ERROR.value, "error": str(e),
                    "wall_time": time.monotonic() - start})
    logger.info(f"[{cfg.planner}] {source_id} seed {task.seed}: "
                f"{'success' if row['success'] else row['failure_kind']} in {row['wall_time']:.1f}s")
    return row


def discover_corpus(corpus_dir: str) -> list[str]:
    """Manifest paths of every assembly directly under ``corpus_dir`` (or the directory itself)."""
    if not os.path.isdir(corpus_dir):
        raise ValueError(f"Corpus directory not found: {corpus_dir}")
    own = os.path.join(corpus_dir, mesh_io.MANIFEST_NAME)
    if os.path.exists(own):
        return [own]
    return sorted(
        os.path.join(entry.path, mesh_io.MANIFEST_NAME) for entry in os.scandir(corpus_dir)
        if entry.is_dir() and os.path.exists(os.path.join(entry.path, mesh_io.MANIFEST_NAME))
    )


# --- Orchestration ---

def benchmark_tasks(cfg: BenchConfig, manifests: list[str], snapshot: dict | None = None) -> list[BenchTask]:
    """One task per (assembly, seed); the seed count follows the assembly's part count."""
    snapshot = config_manager.snapshot() if snapshot is None else snapshot
    tasks = []
    for path in manifests:
        part_count = len(data_handler.load_manifest(_manifest_file(path)).get("parts", []))
        tasks.extend(BenchTask(path, seed, cfg, snapshot) for seed in cfg.seeds_for(part_count))
    return tasks


async def run_benchmark(cfg: BenchConfig, corpus_dir: str) -> BenchReport:
    """Runs every (assembly, seed) task, in a process pool when ``cfg.workers`` > 1."""
    manifests = discover_corpus(corpus_dir)
    if not manifests:
        raise ValueError(f"No assemblies with a {mesh_io.MANIFEST_NAME} under {corpus_dir}")
    snapshot = config_manager.snapshot()
    tasks = benchmark_tasks(cfg, manifests, snapshot)
    logger.info(f"Benchmark '{cfg.planner}' ({cfg.mode.value}): {len(manifests)} assemblies, "
                f"{len(tasks)} runs on {cfg.workers} workers")

    if cfg.workers == 1:
        rows = [run_task(task) for task in tasks]
    else:
        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = await asyncio.gather(*(loop.run_in_executor(pool, run_task, task) for task in tasks))

    rows = sorted(rows, key=lambda r: (r["source_id"], r["seed"]))
    report = BenchReport(rows=list(rows), config=cfg.to_record())
    if cfg.results_file:
        data_handler.add_benchmark_rows_batch(cfg.results_file, report.rows)
    overall = report.aggregates["overall"]
    logger.info(f"Benchmark finished: {overall['successes']}/{overall['runs']} successful runs")
    return report


def run_benchmark_sync(cfg: BenchConfig, corpus_dir: str) -> BenchReport:
    return asyncio.run(run_benchmark(cfg, corpus_dir))
