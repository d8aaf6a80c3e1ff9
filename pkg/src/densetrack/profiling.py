"""Stage timers with exclusive (non-overlapping) wall-clock accounting."""

from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass

STAGES = (
    "feature_extraction",
    "corr_multiscale",
    "corr_4d",
    "corr_project",
    "token_assembly",
    "phi_forward",
    "interpolation",
    "upsample",
)


@dataclass(frozen=True)
class StageTiming:
    stage: str
    iteration: int
    units: int
    wall_ms: float


class Profiler:
    """Collects per-stage timings.

    Nested stages pause their parent, so a parent's wall time excludes its
    children and the stage sum never double-counts.
    """

    enabled = True

    def __init__(self):
        self.records: list[StageTiming] = []
        self._stack: list[list] = []

    @contextmanager
    def stage(self, name: str, units: int = 0, iteration: int = 0):
        if name not in STAGES:
            raise ValueError(f"unknown stage {name!r}")
        now = time.perf_counter()
        if self._stack:
            top = self._stack[-1]
            top[1] += now - top[2]
        frame = [name, 0.0, now]
        self._stack.append(frame)
        try:
            yield
        finally:
            end = time.perf_counter()
            frame[1] += end - frame[2]
            self._stack.pop()
            self.records.append(StageTiming(name, iteration, int(units), frame[1] * 1e3))
            if self._stack:
                self._stack[-1][2] = end

    def summary(self) -> list[StageTiming]:
        """Records merged per (stage, iteration), in first-seen order."""
        acc: dict[tuple[str, int], list] = defaultdict(lambda: [0, 0.0])
        for r in self.records:
            a = acc[(r.stage, r.iteration)]
            a[0] += r.units
            a[1] += r.wall_ms
        return [StageTiming(s, i, u, w) for (s, i), (u, w) in acc.items()]

    def total_ms(self, stages=None) -> float:
        return sum(r.wall_ms for r in self.records if stages is None or r.stage in stages)


class NullProfiler(Profiler):
    enabled = False

    def stage(self, name: str, units: int = 0, iteration: int = 0):
        return nullcontext()
