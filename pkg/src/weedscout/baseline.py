"""Deterministic row-by-row (boustrophedon) coverage baseline.

The plan mimics a field mower: vertical swath lines spaced one FoV width
apart, each driven boundary to boundary, connected by short transits at
alternating ends. Swath lines span the full field (M-1 actions each) even
though the drone's cell is confined to the flight band; the overhanging
actions at each end execute as blocked moves while the FoV already covers
the remaining rows. That keeps the executed step count aligned with
field-operation path accounting while the drone never leaves the band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import Action


@dataclass
class CoveragePlan:
    field_size: int
    fov_size: int
    start: tuple[int, int]
    swath_centers: tuple[int, ...]
    actions: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.actions)


def swath_centers(field_size: int, fov_size: int) -> tuple[int, ...]:
    """Column centers h + i*F, the last clamped into the flight band."""
    h = fov_size // 2
    n = -(-field_size // fov_size)
    centers = [min(h + i * fov_size, field_size - 1 - h) for i in range(n)]
    out = []
    for c in centers:
        if not out or c > out[-1]:
            out.append(c)
    return tuple(out)


def plan_row_by_row(field_size: int, fov_size: int, start_corner: str = "top_left") -> CoveragePlan:
    """Serpentine coverage plan from the given corner.

    A single swath that already sees the whole field yields an empty plan.
    Identical inputs always yield the identical plan.
    """
    if fov_size % 2 != 1 or not 1 <= fov_size <= field_size:
        raise ValueError(f"fov_size must be odd and within the field, got {fov_size}")
    if start_corner not in ("top_left", "bottom_right"):
        raise ValueError(f"start_corner must be top_left or bottom_right, got {start_corner!r}")
    h = fov_size // 2
    centers = swath_centers(field_size, fov_size)
    lo, hi = h, field_size - 1 - h
    start = (lo, lo) if start_corner == "top_left" else (hi, hi)
    if len(centers) == 1:
        return CoveragePlan(field_size, fov_size, start, centers, ())

    columns = list(centers)
    sweep, transit = Action.SOUTH, Action.EAST
    if start_corner == "bottom_right":
        columns.reverse()
        sweep, transit = Action.NORTH, Action.WEST
    opposite = {Action.SOUTH: Action.NORTH, Action.NORTH: Action.SOUTH}

    actions: list[int] = []
    line = field_size - 1  # boundary-to-boundary swath length in actions
    for i, col in enumerate(columns):
        actions.extend([int(sweep)] * line)
        sweep = opposite[sweep]
        if i + 1 < len(columns):
            actions.extend([int(transit)] * abs(columns[i + 1] - col))
    return CoveragePlan(field_size, fov_size, start, centers, tuple(actions))


def plan_positions(plan: CoveragePlan) -> np.ndarray:
    """(len+1, 2) drone cells along the plan, band-clamped like the env."""
    h = plan.fov_size // 2
    lo, hi = h, plan.field_size - 1 - h
    pos = [plan.start]
    r, c = plan.start
    for a in plan.actions:
        dr, dc = {Action.NORTH: (-1, 0), Action.EAST: (0, 1), Action.SOUTH: (1, 0), Action.WEST: (0, -1)}[Action(a)]
        nr, nc = r + dr, c + dc
        if lo <= nr <= hi and lo <= nc <= hi:
            r, c = nr, nc
        pos.append((r, c))
    return np.array(pos)


class PlanPolicy:
    """Replays a coverage plan; act() returns None once the plan is exhausted.

    begin_episode() rebuilds the plan from the environment's sampled start
    corner so the baseline rides through the same env/logging path as any
    learned policy.
    """

    def __init__(self, plan: CoveragePlan | None = None):
        self.plan = plan
        self._i = 0

    def begin_episode(self, env) -> None:
        self.plan = plan_row_by_row(env.cfg.size, env.cfg.fov_size, env.state.start_corner)
        self._i = 0

    def act(self, obs) -> int | None:
        if self.plan is None:
            raise RuntimeError("PlanPolicy has no plan; call begin_episode() or pass one")
        if self._i >= len(self.plan.actions):
            return None
        a = self.plan.actions[self._i]
        self._i += 1
        return a
