"""Grid-world search environment.

The drone is a FoV-center cell confined to the band where its odd F x F
footprint stays inside the field. Each step it moves one cell (or lands, when
that action is enabled), runs one camera frame, and collects rewards for newly
found weeds, boundary bumps, elapsed time, and battery exhaustion. The agent
observes a local FoV stack, a drone-centered pooled global stack, and the
remaining battery fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from enum import IntEnum

import numpy as np

from .fieldsim import (
    DetectionConfig,
    Field,
    FieldConfig,
    PriorConfig,
    avg_pool,
    generate_field,
    generate_prior_map,
    simulate_detection_map,
)
from .rng import (
    RngStream,
    STREAM_DETECTION,
    STREAM_FIELD,
    STREAM_PRIOR,
    STREAM_START,
)


class Action(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3
    LAND = 4


# (row, col) deltas; row 0 is the north edge
MOVES = {
    Action.NORTH: (-1, 0),
    Action.EAST: (0, 1),
    Action.SOUTH: (1, 0),
    Action.WEST: (0, -1),
}

ACTION_NAMES = {a: a.name.lower() for a in Action}
ACTION_FROM_NAME = {v: k for k, v in ACTION_NAMES.items()}

STOPPING_KINDS = ("all_found", "coverage", "stalled", "learned_land", "none")


@dataclass(frozen=True)
class StoppingCriterion:
    """When the episode ends, besides the battery crash.

    all_found: every true weed detected at least once.
    coverage: the FoV has covered at least coverage_fraction of all cells.
    stalled: at least stall_min_found weeds found and none new for
        stall_window consecutive steps.
    learned_land: never triggers; only the land action (or the crash) ends
        the episode.
    none: never triggers; scripted plans run to exhaustion (or the crash).
    """

    kind: str = "all_found"
    coverage_fraction: float = 0.75
    stall_window: int = 50
    stall_min_found: int = 2

    def validate(self) -> None:
        if self.kind not in STOPPING_KINDS:
            raise ValueError(f"stopping.kind must be one of {STOPPING_KINDS}, got {self.kind!r}")
        if not 0 < self.coverage_fraction <= 1:
            raise ValueError("stopping.coverage_fraction must be in (0, 1]")
        if self.stall_window < 1:
            raise ValueError("stopping.stall_window must be >= 1")
        if self.stall_min_found < 0:
            raise ValueError("stopping.stall_min_found must be >= 0")


@dataclass
class EnvConfig:
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    detection: DetectionConfig = dc_field(default_factory=DetectionConfig)
    prior: PriorConfig = dc_field(default_factory=PriorConfig)
    stopping: StoppingCriterion = dc_field(default_factory=StoppingCriterion)
    fov_size: int = 11
    global_pool_kernel: int = 3
    battery_init: float = 75.0
    battery_per_step: float = 0.2
    detect_reward: float = 1.0
    boundary_reward: float = -1.0
    step_reward: float = -0.5
    crash_reward: float = -150.0
    land_action: bool = False
    start_rule: str = "random"  # random | top_left | bottom_right

    def validate(self) -> None:
        self.field.validate()
        self.detection.validate()
        self.prior.validate(self.field.size)
        self.stopping.validate()
        if self.fov_size % 2 != 1:
            raise ValueError(f"env.fov_size must be odd, got {self.fov_size}")
        if not 1 <= self.fov_size <= self.field.size:
            raise ValueError(
                f"env.fov_size must be in [1, field.size={self.field.size}], got {self.fov_size}"
            )
        if self.global_pool_kernel < 1:
            raise ValueError("env.global_pool_kernel must be >= 1")
        if self.battery_init <= 0 or self.battery_per_step <= 0:
            raise ValueError("battery_init and battery_per_step must be > 0")
        if self.start_rule not in ("random", "top_left", "bottom_right"):
            raise ValueError(f"unknown env.start_rule {self.start_rule!r}")
        if self.stopping.kind == "learned_land" and not self.land_action:
            raise ValueError("stopping.kind learned_land requires env.land_action")

    @property
    def size(self) -> int:
        return self.field.size

    @property
    def half_fov(self) -> int:
        return self.fov_size // 2

    @property
    def n_actions(self) -> int:
        return 5 if self.land_action else 4

    @property
    def global_size(self) -> int:
        return -(-(2 * self.field.size - 1) // self.global_pool_kernel)

    @property
    def max_steps(self) -> int:
        """First step count at which the battery reads <= 0."""
        return math.ceil(self.battery_init / self.battery_per_step - 1e-9)

    def band(self) -> tuple[int, int]:
        """Inclusive row/col range the drone may occupy."""
        return self.half_fov, self.field.size - 1 - self.half_fov


@dataclass
class EnvState:
    field: Field
    prior_map: np.ndarray
    row: int
    col: int
    found: np.ndarray           # (n,) bool, per true weed
    found_step: np.ndarray      # (n,) int, step of first detection, -1 if never
    detected_memory: np.ndarray  # (M, M) float {0,1}, all detections seen so far
    coverage: np.ndarray        # (M, M) bool, cells ever inside the FoV
    detection_map: np.ndarray   # (F, F) float {0,1}, current camera frame
    steps: int = 0
    done: bool = False
    done_reason: str = ""
    last_new_found_step: int = 0
    boundary_hits: int = 0
    found_at_reset: int = 0
    start_corner: str = "top_left"

    @property
    def found_count(self) -> int:
        return int(self.found.sum())


@dataclass
class Observation:
    local: np.ndarray    # (3, F, F) float32: field-area, detected memory, camera frame
    global_: np.ndarray  # (3, G, G) float32: field-area, detected memory, prior
    budget: float        # remaining battery fraction in [0, 1]


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict


def check_stop(state: EnvState, cfg: EnvConfig) -> str | None:
    """Stopping-criterion reason for the current state, or None."""
    crit = cfg.stopping
    if crit.kind == "all_found":
        if bool(state.found.all()):
            return "all_found"
    elif crit.kind == "coverage":
        if state.coverage.mean() >= crit.coverage_fraction:
            return "coverage"
    elif crit.kind == "stalled":
        if (
            state.found_count >= crit.stall_min_found
            and state.steps - state.last_new_found_step >= crit.stall_window
        ):
            return "stalled"
    return None


class SearchEnv:
    """One search episode generator.

    Randomness is split into per-purpose streams keyed by
    (seed, purpose, *key, episode), so a given (seed, key, episode index)
    reproduces the same field, prior, start corner, and detector noise
    regardless of what any other component draws.
    """

    def __init__(
        self,
        cfg: EnvConfig,
        seed: int,
        key: tuple[int, ...] = (),
        fixed_field: Field | None = None,
    ):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        self.key = tuple(key)
        self.fixed_field = fixed_field  # every episode replays this field when set
        self.episode = -1
        self.state: EnvState | None = None
        self._det_rng: RngStream | None = None
        m = cfg.size
        self._canvas = np.zeros((3, 2 * m - 1, 2 * m - 1))

    def reset(self, field: Field | None = None) -> Observation:
        """Start the next episode; optionally on an injected fixed field."""
        cfg = self.cfg
        self.episode += 1
        ep_key = self.key + (self.episode,)
        if field is None:
            field = self.fixed_field
        if field is None:
            field = generate_field(cfg.field, RngStream(self.seed, STREAM_FIELD, ep_key))
        prior = generate_prior_map(field, cfg.prior, RngStream(self.seed, STREAM_PRIOR, ep_key))
        self._det_rng = RngStream(self.seed, STREAM_DETECTION, ep_key)

        if cfg.start_rule == "random":
            corner_rng = RngStream(self.seed, STREAM_START, ep_key)
            corner = "top_left" if corner_rng.uniform() < 0.5 else "bottom_right"
        else:
            corner = cfg.start_rule
        h = cfg.half_fov
        row, col = (h, h) if corner == "top_left" else (cfg.size - 1 - h, cfg.size - 1 - h)

        n = field.n_weeds
        self.state = EnvState(
            field=field,
            prior_map=prior,
            row=row,
            col=col,
            found=np.zeros(n, dtype=bool),
            found_step=np.full(n, -1, dtype=int),
            detected_memory=np.zeros((cfg.size, cfg.size)),
            coverage=np.zeros((cfg.size, cfg.size), dtype=bool),
            detection_map=np.zeros((cfg.fov_size, cfg.fov_size)),
            start_corner=corner,
        )
        self.state.found_at_reset = self._detect()
        # a trivially complete episode (e.g. every weed under the starting
        # FoV, or a zero-weed field) is done before the first action
        reason = check_stop(self.state, cfg)
        if reason is not None:
            self.state.done = True
            self.state.done_reason = reason
        return self.observe()

    def _detect(self) -> int:
        """Run one camera frame at the current cell; returns newly found count."""
        st = self.state
        cfg = self.cfg
        det, visible = simulate_detection_map(
            st.field, st.row, st.col, cfg.fov_size, cfg.detection, self._det_rng
        )
        st.detection_map = det
        new = visible[~st.found[visible]] if len(visible) else visible
        st.found[new] = True
        st.found_step[new] = st.steps
        h = cfg.half_fov
        r0, c0 = st.row - h, st.col - h
        mem = st.detected_memory[r0 : r0 + cfg.fov_size, c0 : c0 + cfg.fov_size]
        np.maximum(mem, det, out=mem)
        st.coverage[r0 : r0 + cfg.fov_size, c0 : c0 + cfg.fov_size] = True
        return len(new)

    def step(self, action: int) -> StepResult:
        st = self.state
        cfg = self.cfg
        if st is None:
            raise RuntimeError("reset() must be called before step()")
        if st.done:
            raise RuntimeError("episode is done; call reset()")
        action = int(action)
        if not 0 <= action < cfg.n_actions:
            raise ValueError(f"action {action} invalid for {cfg.n_actions}-action space")

        if action == Action.LAND:
            st.steps += 1
            st.done = True
            st.done_reason = "landed"
            st.detection_map = np.zeros_like(st.detection_map)
            reward = cfg.step_reward
            return StepResult(
                self.observe(),
                reward,
                True,
                {"newly_found": 0, "hit_boundary": False, "done_reason": st.done_reason},
            )

        dr, dc = MOVES[Action(action)]
        lo, hi = cfg.band()
        nr, nc = st.row + dr, st.col + dc
        hit = not (lo <= nr <= hi and lo <= nc <= hi)
        if not hit:
            st.row, st.col = nr, nc
        else:
            st.boundary_hits += 1

        st.steps += 1
        newly = self._detect()
        if newly:
            st.last_new_found_step = st.steps
        reward = cfg.step_reward + newly * cfg.detect_reward
        if hit:
            reward += cfg.boundary_reward

        if st.steps >= cfg.max_steps:
            reward += cfg.crash_reward
            st.done = True
            st.done_reason = "crashed"
        else:
            reason = check_stop(st, cfg)
            if reason is not None:
                st.done = True
                st.done_reason = reason

        return StepResult(
            self.observe(),
            reward,
            st.done,
            {"newly_found": newly, "hit_boundary": hit, "done_reason": st.done_reason},
        )

    # --- observation encoding ---

    def budget_fraction(self, state: EnvState | None = None) -> float:
        st = state or self.state
        cfg = self.cfg
        return max(0.0, (cfg.battery_init - st.steps * cfg.battery_per_step) / cfg.battery_init)

    def encode_local(self, state: EnvState | None = None) -> np.ndarray:
        """(3, F, F) float32: field-area mask, detection memory, camera frame.

        In-band positions always have the full FoV inside the field; the
        out-of-field padding (area=1, memory=0) only activates for
        hand-constructed states used by analysis tooling.
        """
        st = state or self.state
        cfg = self.cfg
        f = cfg.fov_size
        m = cfg.size
        h = cfg.half_fov
        r0, c0 = st.row - h, st.col - h
        out = np.zeros((3, f, f), dtype=np.float32)
        rlo, rhi = max(r0, 0), min(r0 + f, m)
        clo, chi = max(c0, 0), min(c0 + f, m)
        out[0] = 1.0
        if rlo < rhi and clo < chi:
            out[0, rlo - r0 : rhi - r0, clo - c0 : chi - c0] = 0.0
            out[1, rlo - r0 : rhi - r0, clo - c0 : chi - c0] = st.detected_memory[rlo:rhi, clo:chi]
        out[2] = st.detection_map
        return out

    def encode_global(self, state: EnvState | None = None) -> np.ndarray:
        """(3, G, G) float32: drone-centered, pooled field-area/memory/prior.

        The field layers sit on a (2M-1)^2 canvas with the drone cell at the
        exact center; outside-field padding is 1 for the area layer and 0 for
        the others, then everything is average-pooled by the configured
        kernel with edge replication.
        """
        st = state or self.state
        cfg = self.cfg
        m = cfg.size
        canvas = self._canvas
        canvas[0].fill(1.0)
        canvas[1].fill(0.0)
        canvas[2].fill(0.0)
        r0 = m - 1 - st.row
        c0 = m - 1 - st.col
        canvas[0, r0 : r0 + m, c0 : c0 + m] = 0.0
        canvas[1, r0 : r0 + m, c0 : c0 + m] = st.detected_memory
        canvas[2, r0 : r0 + m, c0 : c0 + m] = st.prior_map
        return avg_pool(canvas, cfg.global_pool_kernel).astype(np.float32)

    def observe(self, state: EnvState | None = None) -> Observation:
        st = state or self.state
        return Observation(
            local=self.encode_local(st),
            global_=self.encode_global(st),
            budget=float(np.float32(self.budget_fraction(st))),
        )
