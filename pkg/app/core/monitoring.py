import math
import threading
import time
from collections import defaultdict, deque
from collections.abc import Iterator
from contextlib import contextmanager
from typing import Any


class RunMonitor:
    """Timers and running extrema collected while a subcommand executes.

    Safe to share between the worker threads of a batch evaluation.
    """

    def __init__(self, maxlen: int = 1000) -> None:
        self._lock = threading.Lock()
        self._timers: dict[str, dict[str, Any]] = defaultdict(
            lambda: {"count": 0, "total_time": 0.0, "times": deque(maxlen=maxlen)}
        )
        self._minima: dict[str, float] = {}
        self._maxima: dict[str, float] = {}
        self._started = time.perf_counter()

    @contextmanager
    def timer(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            with self._lock:
                m = self._timers[name]
                m["count"] += 1
                m["total_time"] += elapsed
                m["times"].append(elapsed)

    def observe(self, name: str, value: float) -> None:
        if math.isnan(value):
            return
        with self._lock:
            self._minima[name] = min(value, self._minima.get(name, math.inf))
            self._maxima[name] = max(value, self._maxima.get(name, -math.inf))

    def extrema(self) -> dict[str, dict[str, float]]:
        with self._lock:
            return {
                name: {"min": self._minima[name], "max": self._maxima[name]}
                for name in sorted(self._minima)
            }

    def timings(self) -> dict[str, dict[str, float]]:
        with self._lock:
            out = {}
            for name in sorted(self._timers):
                m = self._timers[name]
                count = m["count"]
                out[name] = {
                    "count": count,
                    "total_time": m["total_time"],
                    "avg_time": m["total_time"] / count if count else 0.0,
                }
            return out

    def wall_time(self) -> float:
        return time.perf_counter() - self._started
