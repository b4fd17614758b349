import logging
from .config_manager import ConfigManager # Use relative import within the asmplan package

logger = logging.getLogger(__name__)

# --- Run Start Time ---
# Stamped into benchmark reports and plan headers
import pytz
from datetime import datetime
RUN_START_TIME_UTC = datetime.now(pytz.utc)

# --- Default Configuration Values ---
# These values are used if not specified in config.yaml
DEFAULT_CONFIG = {
    "log_level": "INFO",
    "log_levels": {},
    "log_file": None,

    # Simulation
    "contact_stiffness": 1e6,
    "contact_damping": 0.0,
    "sim_time_step": 1e-3,
    "path_time_step": 0.1,
    "velocity_damping": 0.98,
    "penetration_threshold": 0.01,
    "action_magnitude": 100.0,
    "scene_dump_path": None,

    # Path planning (BFS)
    "similarity_translation": 0.05,
    "similarity_rotation": 0.5,
    "rollout_cap": 1000,
    "stall_translation": 0.005,
    "stall_rotation": 0.01,

    # Geometric baselines
    "tree_step_size": 0.01,
    "geom_max_penetration": 0.01,
    "trrt_goal_probability": 0.2,

    # SDF construction
    "sdf_max_cell": 0.05,
    "sdf_cells_per_extent": 20,
    "sdf_padding": 2,
    "sdf_cache_dir": None, # None disables the sidecar cache

    # Preprocessing
    "normalize_size": 10.0,
    "max_edge_length": 0.5,
    "overlap_threshold": 0.1,
    "overlap_samples": 10000,
    "thin_ratio": 0.01,

    # Benchmark
    "path_timeout": 120.0,
    "sequence_timeout": 7200.0,
    "two_part_timeout": 300.0,
    "rotational_timeout": 600.0,
    "path_seeds": 6,
    "sequence_seeds": 3,
    "workers": 1,
    "results_file": "results/benchmark_rows.json",
}

# --- Declared Types ---
# ConfigManager coerces every loaded value to the type declared here.
# Keys missing from this table are passed through untouched.
CONFIG_TYPES = {
    "log_level": str,
    "log_levels": dict,
    "log_file": "optional_str",
    "contact_stiffness": float,
    "contact_damping": float,
    "sim_time_step": float,
    "path_time_step": float,
    "velocity_damping": float,
    "penetration_threshold": float,
    "action_magnitude": float,
    "scene_dump_path": "optional_str",
    "similarity_translation": float,
    "similarity_rotation": float,
    "rollout_cap": int,
    "stall_translation": float,
    "stall_rotation": float,
    "tree_step_size": float,
    "geom_max_penetration": float,
    "trrt_goal_probability": float,
    "sdf_max_cell": float,
    "sdf_cells_per_extent": int,
    "sdf_padding": int,
    "sdf_cache_dir": "optional_str",
    "normalize_size": float,
    "max_edge_length": float,
    "overlap_threshold": float,
    "overlap_samples": int,
    "thin_ratio": float,
    "path_timeout": float,
    "sequence_timeout": float,
    "two_part_timeout": float,
    "rotational_timeout": float,
    "path_seeds": int,
    "sequence_seeds": int,
    "workers": int,
    "results_file": str,
}

# --- Required Configuration Keys ---
# These keys MUST be present in the final configuration (either in config.yaml or defaults)
# and should have non-empty values. The ConfigManager performs this check.
REQUIRED_KEYS = [
    "contact_stiffness",
    "sim_time_step",
    "path_time_step",
    "penetration_threshold",
    "action_magnitude",
    "similarity_translation",
    "similarity_rotation",
]

# --- Configuration File Path ---
# Assumes config.yaml is in the project root directory (where docker-compose.yml is)
CONFIG_FILE_PATH = "config.yaml"

# --- Instantiate the Config Manager ---
# This instance will be imported by other modules
config_manager = ConfigManager(
    config_path=CONFIG_FILE_PATH,
    defaults=DEFAULT_CONFIG,
    required_keys=REQUIRED_KEYS,
    types=CONFIG_TYPES,
)

# --- Usage Example (in other modules) ---
# from asmplan.config import config_manager
#
# k_n = config_manager.get("contact_stiffness")
# delta_t = config_manager.get("similarity_translation")
