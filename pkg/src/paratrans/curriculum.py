"""Easy-to-hard task schedule over the parallelism ladder.

Training runs through three phases: left-to-right (k=1), a staged middle
phase that climbs the ladder k=2,4,8,16 under a pacing function, and a final
fully-parallel phase (k=N). The pacing functions

    linear:      min(2^(floor(4i/S) + 1), 16)
    logarithmic: min(2^(floor(log_1.5(4i/S + 1)) + 1), 16)
    exponential: min(2^(floor(1.5^(4i/S))), 16)

map the middle-phase step i (with S the phase length) to a task. Stage
boundaries are evaluated in exact integer arithmetic, so a boundary never
drifts by one step from float rounding. A task window w > 1 trains w adjacent
ladder tasks at once per stage, with neighboring stages overlapping in w-1
tasks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .model import K_N, format_k, parse_k

__all__ = [
    "PACING_FUNCTIONS",
    "CurriculumSchedule",
    "Phase",
    "phase_of",
    "pacing_k",
    "pacing_boundaries",
    "stage_tasks",
    "sample_task",
    "schedule_rows",
]

PACING_FUNCTIONS = ("linear", "logarithmic", "exponential")

_SAT_LEVELS = (2, 4, 8, 16)


@dataclass(frozen=True)
class Phase:
    tag: str  # AT | SAT | NAT
    local_step: int


@dataclass(frozen=True)
class CurriculumSchedule:
    steps_at: int
    steps_sat: int
    steps_nat: int
    pacing: str = "exponential"
    window: int = 1
    ladder: tuple = (1, 2, 4, 8, 16, K_N)

    def __post_init__(self):
        if min(self.steps_at, self.steps_sat, self.steps_nat) < 0:
            raise ValueError("CurriculumSchedule: phase budgets must be >= 0")
        if self.total_steps == 0:
            raise ValueError("CurriculumSchedule: schedule has no steps")
        if self.pacing not in PACING_FUNCTIONS:
            raise ValueError(f"CurriculumSchedule: unknown pacing {self.pacing!r}")
        ladder = tuple(parse_k(k) for k in self.ladder)
        object.__setattr__(self, "ladder", ladder)
        if ladder[0] != 1 or ladder[-1] is not K_N:
            raise ValueError("CurriculumSchedule: ladder must start at 1 and end at N")
        ints = ladder[:-1]
        if any(b <= a for a, b in zip(ints, ints[1:])):
            raise ValueError("CurriculumSchedule: ladder must be strictly increasing")
        if not 1 <= self.window <= len(ladder):
            raise ValueError("CurriculumSchedule: window must be in [1, len(ladder)]")

    @property
    def total_steps(self) -> int:
        return self.steps_at + self.steps_sat + self.steps_nat

    def describe(self) -> dict:
        return {
            "steps_at": self.steps_at,
            "steps_sat": self.steps_sat,
            "steps_nat": self.steps_nat,
            "pacing": self.pacing,
            "window": self.window,
            "ladder": [format_k(k) for k in self.ladder],
        }


def phase_of(schedule: CurriculumSchedule, step: int) -> Phase:
    """Which of the three phases a global step falls into."""
    if step < 0:
        raise ValueError("phase_of: step must be >= 0")
    if step < schedule.steps_at:
        return Phase("AT", step)
    if step < schedule.steps_at + schedule.steps_sat:
        return Phase("SAT", step - schedule.steps_at)
    return Phase("NAT", step - schedule.steps_at - schedule.steps_sat)


# ---------------------------------------------------------------------------
# pacing functions, exact integer evaluation
# ---------------------------------------------------------------------------


def _exp_boundary(level: int, s_sat: int) -> int:
    """Smallest i with 1.5^(4i/S) >= level, i.e. 3^(4i) >= level^S * 2^(4i)."""
    if level <= 1:
        return 0
    rhs = level ** s_sat
    lo, hi = 0, s_sat
    # P(i) is monotone in i; P(s_sat) may still be false for tiny S.
    if not 3 ** (4 * hi) >= rhs * 2 ** (4 * hi):
        return s_sat
    while lo < hi:
        mid = (lo + hi) // 2
        if 3 ** (4 * mid) >= rhs * 2 ** (4 * mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


@lru_cache(maxsize=64)
def pacing_boundaries(pacing: str, s_sat: int) -> tuple[tuple[int, int], ...]:
    """((first_step, k), ...) for the middle phase, in increasing step order."""
    if pacing not in PACING_FUNCTIONS:
        raise ValueError(f"unknown pacing {pacing!r}")
    if s_sat <= 0:
        raise ValueError("pacing_boundaries: s_sat must be positive")
    out = []
    for j, k in enumerate(_SAT_LEVELS):
        if pacing == "linear":
            # floor(4i/S) >= j  <=>  i >= ceil(j*S/4)
            start = -(-j * s_sat // 4)
        elif pacing == "logarithmic":
            # floor(log_1.5(4i/S + 1)) >= j  <=>  2^j (4i + S) >= 3^j S
            start = -(-(s_sat * (3 ** j - 2 ** j)) // (4 * 2 ** j))
        else:
            # floor(1.5^(4i/S)) >= m at level index m = j + 1
            start = _exp_boundary(j + 1, s_sat)
        if start >= s_sat:
            break
        out.append((start, k))
    return tuple(out)


def pacing_k(pacing: str, i: int, s_sat: int) -> int:
    """Task k in {2,4,8,16} scheduled at middle-phase step i of s_sat."""
    if not 0 <= i < s_sat:
        raise ValueError(f"pacing_k: step {i} outside [0, {s_sat})")
    k = _SAT_LEVELS[0]
    for start, level in pacing_boundaries(pacing, s_sat):
        if i >= start:
            k = level
    return k


def _base_task(schedule: CurriculumSchedule, step: int):
    phase = phase_of(schedule, step)
    if phase.tag == "AT":
        return 1
    if phase.tag == "SAT":
        return pacing_k(schedule.pacing, phase.local_step, schedule.steps_sat)
    return K_N


def stage_tasks(schedule: CurriculumSchedule, step: int) -> tuple:
    """Tasks trained at a step: one ladder task for w=1; for w>1, the w-wide
    ladder window of the current stage.

    Windowed stages blur the phase boundaries, so they are laid out as equal
    slices: stage s of S = len(ladder)-w+1 stages spans
    [s*(at+sat)/(S-1), (s+1)*(at+sat)/(S-1)); the last stage therefore runs
    one slice into the final-phase budget, and every step after it trains the
    N-sentinel alone.
    """
    if schedule.window == 1:
        return (_base_task(schedule, step),)
    if step < 0:
        raise ValueError("stage_tasks: step must be >= 0")
    ladder = schedule.ladder
    w = schedule.window
    n_stages = len(ladder) - w + 1
    staged_span = schedule.steps_at + schedule.steps_sat
    if n_stages == 1 or staged_span == 0:
        stage_end = staged_span
        stage = 0
    else:
        # bound(s) = s * staged_span / (S - 1); stage s is [bound(s), bound(s+1))
        stage_end = (n_stages * staged_span) // (n_stages - 1)
        stage = min(step * (n_stages - 1) // staged_span, n_stages - 1)
    if step >= stage_end:
        return (K_N,)
    return tuple(ladder[stage : stage + w])


def sample_task(schedule: CurriculumSchedule, step: int, rng: np.random.Generator):
    """Uniform draw among the tasks staged at this step (deterministic for w=1)."""
    tasks = stage_tasks(schedule, step)
    if len(tasks) == 1:
        return tasks[0]
    return tasks[int(rng.integers(len(tasks)))]


def schedule_rows(schedule: CurriculumSchedule) -> Iterator[tuple[int, str, tuple]]:
    """(step, phase tag, staged tasks) for every step; audit/dump helper."""
    for step in range(schedule.total_steps):
        yield step, phase_of(schedule, step).tag, stage_tasks(schedule, step)
