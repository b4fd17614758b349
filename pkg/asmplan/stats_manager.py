import logging
import threading
from dataclasses import asdict, dataclass, fields

logger = logging.getLogger(__name__)

@dataclass
class Stats:
    """Planner effort counters. ``simulate_calls`` is the cost measure reported per part."""
    simulate_calls: int = 0
    rollouts: int = 0
    nodes_expanded: int = 0
    path_attempts: int = 0
    path_successes: int = 0
    path_failures: int = 0
    validity_checks: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

_COUNTERS = frozenset(f.name for f in fields(Stats))

class StatsManager:
    """Counter set for one scope: a path attempt, a sequence run, or the whole process.

    Planners keep one instance per path attempt so that per-part counts are
    exact, then fold it into the enclosing scope with ``merge``.
    """

    def __init__(self, name: str = "local"):
        self.name = name
        self._stats = Stats()
        # Simulators and planners in worker threads may share a manager
        self._lock = threading.Lock()

    def increment(self, stat_name: str, amount: int = 1):
        if stat_name not in _COUNTERS:
            logger.warning(f"[{self.name}] Attempted to increment non-existent stat: {stat_name}")
            return
        with self._lock:
            setattr(self._stats, stat_name, getattr(self._stats, stat_name) + amount)

    def value(self, stat_name: str) -> int:
        with self._lock:
            return getattr(self._stats, stat_name)

    def merge(self, other: "StatsManager"):
        """Adds all counters of another manager into this one."""
        totals = other.get_stats().as_dict()
        with self._lock:
            for key, amount in totals.items():
                setattr(self._stats, key, getattr(self._stats, key) + amount)

    def get_stats(self) -> Stats:
        """Copy of the counters."""
        with self._lock:
            return Stats(**asdict(self._stats))

    def reset_stats(self):
        with self._lock:
            self._stats = Stats()
        logger.debug(f"Statistics '{self.name}' reset.")

# --- Singleton Instance ---
# Process-wide totals across all attempts
stats_manager = StatsManager(name="global")

def get_current_stats() -> Stats:
    return stats_manager.get_stats()
