import json
import logging
import os
import fcntl # For file locking on POSIX systems

logger = logging.getLogger(__name__)


def _as_record(obj) -> dict:
    return obj.to_record() if hasattr(obj, "to_record") else obj


def _load_json(filepath: str, label: str) -> dict:
    """
    Reads a JSON object under a shared lock.

    Returns an empty dict if the file doesn't exist or is invalid.
    """
    if not os.path.exists(filepath):
        logger.info(f"{label} file not found at {filepath}. Returning empty dict.")
        return {}
    try:
        with open(filepath, 'r', encoding='utf-8') as f:
            # Shared lock: readers don't block each other
            fcntl.flock(f, fcntl.LOCK_SH)
            try:
                data = json.load(f)
                if not isinstance(data, dict):
                    logger.warning(f"Invalid data format in {filepath}. Expected dict, got {type(data)}. Returning empty dict.")
                    return {}
                return data
            except json.JSONDecodeError:
                logger.exception(f"Error decoding JSON from {filepath}. Returning empty dict.")
                return {}
            finally:
                fcntl.flock(f, fcntl.LOCK_UN)
    except IOError as e:
        logger.exception(f"Could not read {label} file {filepath}: {e}")
        return {}


def _write_json(filepath: str, data: dict, label: str):
    """Replaces the file content under an exclusive lock. Errors are logged and re-raised."""
    try:
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
        # Create the file if missing, then rewrite it in place while holding the lock
        with open(filepath, 'a', encoding='utf-8'):
            pass
        with open(filepath, 'r+', encoding='utf-8') as f:
            fcntl.flock(f, fcntl.LOCK_EX)
            try:
                f.seek(0)
                f.truncate()
                json.dump(data, f, ensure_ascii=False, indent=2)
            finally:
                fcntl.flock(f, fcntl.LOCK_UN)
        logger.debug(f"Wrote {label} to {filepath}")
    except PermissionError as e:
        logger.error(
            f"Permission denied when trying to write {label} to {filepath}. "
            f"Check the permissions of the host directory mounted into the container. "
            f"Error details: {e}"
        )
        raise
    except Exception as e:
        logger.exception(f"An unexpected error occurred writing {label} to {filepath}: {e}")
        raise


# --- Paths, sequences and plans ---

def export_path(path, destination: str):
    """
    Writes one disassembly path as JSON.

    Args:
        path: A DisassemblyPath or its record
              {part, planner, states: [{step, t, q, action}], meta}.
        destination: Target file path.
    """
    record = _as_record(path)
    if not record.get("states"):
        raise ValueError(f"Refusing to export an empty path for part '{record.get('part')}'")
    _write_json(destination, record, "path")
    logger.info(f"Exported path of '{record['part']}' ({len(record['states'])} states) to {destination}")


def load_path(filepath: str) -> dict:
    return _load_json(filepath, "Path")


def save_sequence(filepath: str, sequence):
    record = _as_record(sequence)
    _write_json(filepath, record, "sequence")
    logger.info(f"Saved sequence of {len(record.get('paths', []))} paths to {filepath}")


def save_plan(filepath: str, plan):
    record = _as_record(plan)
    _write_json(filepath, record, "plan")
    logger.info(f"Saved {record.get('header', {}).get('kind', 'plan')} with {len(record.get('paths', []))} paths to {filepath}")


def load_plan(filepath: str) -> dict:
    """Loads a saved sequence or assembly plan record."""
    return _load_json(filepath, "Plan")


# --- Manifests and reports ---

def load_manifest(filepath: str) -> dict:
    return _load_json(filepath, "Manifest")


def save_manifest(filepath: str, manifest: dict):
    _write_json(filepath, manifest, "manifest")


def save_report(filepath: str, report):
    _write_json(filepath, _as_record(report), "report")


# --- Benchmark results ---

def row_key(row: dict) -> str:
    return "|".join(str(row.get(k)) for k in ("source_id", "planner", "mode", "seed", "rotated"))


def load_benchmark_rows(filepath: str) -> list[dict]:
    data = _load_json(filepath, "Benchmark results")
    return [data[key] for key in sorted(data)]


def add_benchmark_rows_batch(filepath: str, rows: list[dict]) -> int:
    """
    Adds benchmark rows to the results file with a single locked write.

    Rows already present (same assembly, planner, mode, seed and rotation)
    are kept as they are. Returns the number of rows added.
    """
    if not rows:
        logger.debug("No benchmark rows to add in batch, skipping write.")
        return 0

    try:
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)

        try:
            with open(filepath, 'a', encoding='utf-8'):
                pass
        except IOError as e:
            logger.error(f"Could not ensure file exists at {filepath}: {e}")
            return 0

        with open(filepath, 'r+', encoding='utf-8') as f:
            fcntl.flock(f, fcntl.LOCK_EX)
            try:
                f.seek(0)
                try:
                    current_data = json.load(f)
                    if not isinstance(current_data, dict):
                        logger.warning(f"Data in {filepath} is not a dict. Overwriting.")
                        current_data = {}
                except json.JSONDecodeError:
                    logger.warning(f"Could not decode JSON from {filepath}. Starting fresh.")
                    current_data = {}

                added_count = 0
                for row in rows:
                    key = row_key(row)
                    if key not in current_data:
                        current_data[key] = row
                        added_count += 1

                if added_count > 0:
                    f.seek(0)
                    f.truncate()
                    json.dump(current_data, f, ensure_ascii=False, indent=2)
                    logger.info(f"Batch added {added_count} benchmark rows to {filepath}")
                else:
                    logger.debug("All benchmark rows already exist, no write needed.")
                return added_count

            finally:
                fcntl.flock(f, fcntl.LOCK_UN)

    except PermissionError as e:
        logger.error(f"Permission denied for {filepath}: {e}")
    except Exception as e:
        logger.exception(f"Unexpected error in add_benchmark_rows_batch: {e}")
    return 0
