"""Continuous 2D mazes with kinematic moves and axis-aligned walls.

Geometry is a character map: ``#`` is a wall cell, ``b`` a removable
barrier cell, anything else free floor. One map cell is one arena unit and
row 0 of the map is the top (largest ``y``). Positions are continuous;
walls lie on integer cell boundaries. A move whose path would enter a wall
or barrier cell leaves the agent where it was.

Zones (starts, terminals, hazards, teleporters) are rectangles in arena
units, independent of the map characters.
"""

from __future__ import annotations

import copy
import csv
import math
import random
from dataclasses import dataclass, field
from typing import Dict, IO, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

Rect = Tuple[float, float, float, float]  # x0, y0, x1, y1

CARDINAL = ((0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0))  # up, right, down, left
ACTION_NAMES = {"cardinal": ("up", "right", "down", "left"), "turn": ("forward", "left", "right")}


class EpisodeOver(RuntimeError):
    pass


def in_rect(x: float, y: float, r: Rect) -> bool:
    return r[0] <= x < r[2] and r[1] <= y < r[3]


def cell_rect(col: int, row: int, n_rows: int) -> Rect:
    """Arena rectangle of map cell ``(col, row)``, rows counted from the top."""
    y0 = n_rows - 1 - row
    return (float(col), float(y0), col + 1.0, y0 + 1.0)


@dataclass
class Zone:
    rect: Rect
    reward: float = 0.0


@dataclass
class Hazard:
    rect: Rect
    penalty: float = -1.0
    probability: float = 0.25


@dataclass
class Teleporter:
    entry: Rect
    exit: Tuple[float, float]
    enabled: bool = False


@dataclass
class MazeSpec:
    layout: List[str]
    starts: List[Rect]
    terminals: Dict[str, Zone] = field(default_factory=dict)
    hazards: List[Hazard] = field(default_factory=list)
    teleporters: Dict[str, Teleporter] = field(default_factory=dict)
    barrier_up: bool = True
    step_penalty: float = -0.01
    step_size: float = 1.0
    max_steps: int = 200
    action_mode: str = "cardinal"
    obs_noise: float = 0.0
    start_heading: Optional[int] = None

    def __post_init__(self):
        widths = {len(r) for r in self.layout}
        if len(widths) != 1:
            raise ValueError("layout rows must have equal length")
        if self.action_mode not in ACTION_NAMES:
            raise ValueError(f"unknown action_mode {self.action_mode!r}")
        if not 0 < self.step_size <= 1.0:
            raise ValueError("step_size must be in (0, 1]")
        w, h = self.width, self.height
        rects = list(self.starts) + [z.rect for z in self.terminals.values()] + [hz.rect for hz in self.hazards]
        rects += [tp.entry for tp in self.teleporters.values()]
        for r in rects:
            if not (0 <= r[0] < r[2] <= w and 0 <= r[1] < r[3] <= h):
                raise ValueError(f"zone {r} lies outside the {w}x{h} arena")
        for hz in self.hazards:
            if not 0.0 <= hz.probability <= 1.0:
                raise ValueError("hazard probability must be in [0, 1]")

    @property
    def width(self) -> int:
        return len(self.layout[0])

    @property
    def height(self) -> int:
        return len(self.layout)

    @property
    def n_actions(self) -> int:
        return len(ACTION_NAMES[self.action_mode])

    @property
    def obs_dim(self) -> int:
        return 4 if self.action_mode == "turn" else 2

    def wall_segments(self) -> List[Tuple[float, float, float, float]]:
        """Unit segments separating wall cells from free cells (barriers included)."""
        segs = []
        h = self.height
        def solid(c, r):
            if not (0 <= r < h and 0 <= c < self.width):
                return True
            return self.layout[r][c] in "#b"
        for r in range(h):
            for c in range(self.width):
                if solid(c, r):
                    continue
                x0, y0, x1, y1 = cell_rect(c, r, h)
                if solid(c, r - 1):
                    segs.append((x0, y1, x1, y1))
                if solid(c, r + 1):
                    segs.append((x0, y0, x1, y0))
                if solid(c - 1, r):
                    segs.append((x0, y0, x0, y1))
                if solid(c + 1, r):
                    segs.append((x1, y0, x1, y1))
        return segs


class Pose(NamedTuple):
    x: float
    y: float
    heading: int = 0  # index into CARDINAL


class StepOutcome(NamedTuple):
    observation: np.ndarray
    reward: float
    terminal: bool
    info: dict


class Trace(NamedTuple):
    observations: List[np.ndarray]
    actions: List[int]
    rewards: List[float]
    poses: List[Pose]
    terminal: bool


class Maze:
    def __init__(self, spec: MazeSpec, seed: Optional[int] = None):
        self.spec = copy.deepcopy(spec)
        self.rng = random.Random(seed)
        self.noise_rng = np.random.default_rng(seed)
        self.pose: Optional[Pose] = None
        self.done = True
        self.t = 0
        self.zone_hit: Optional[str] = None

    # --- configuration changes

    def set_rewards(self, assignment: Dict[str, float]) -> None:
        unknown = set(assignment) - set(self.spec.terminals)
        if unknown:
            raise KeyError(f"unknown terminal zone(s): {sorted(unknown)}")
        for name, r in assignment.items():
            self.spec.terminals[name].reward = float(r)

    def reverse_rewards(self) -> None:
        self.set_rewards({n: -z.reward for n, z in self.spec.terminals.items()})

    def enable_teleporter(self, name: str, enabled: bool = True) -> None:
        if name not in self.spec.teleporters:
            raise KeyError(f"unknown teleporter {name!r}")
        self.spec.teleporters[name].enabled = enabled

    def set_barrier(self, up: bool) -> None:
        self.spec.barrier_up = up

    # --- geometry

    def free_cell(self, x: float, y: float) -> bool:
        h = self.spec.height
        col = math.floor(x)
        row = h - 1 - math.floor(y)
        if not (0 <= row < h and 0 <= col < self.spec.width):
            return False
        ch = self.spec.layout[row][col]
        return ch != "#" and not (ch == "b" and self.spec.barrier_up)

    def _path_clear(self, x0: float, y0: float, x1: float, y1: float) -> bool:
        # axis-aligned moves of at most one cell: start and end cells decide
        return self.free_cell(x1, y1) and self.free_cell(x0, y1) and self.free_cell(x1, y0)

    def observe(self, pose: Optional[Pose] = None) -> np.ndarray:
        p = pose or self.pose
        if self.spec.action_mode == "turn":
            dx, dy = CARDINAL[p.heading]
            o = np.array([p.x, p.y, dx, dy])
        else:
            o = np.array([p.x, p.y])
        if self.spec.obs_noise > 0:
            o = o + self.noise_rng.normal(0.0, self.spec.obs_noise, size=o.shape)
        return o

    def sample_start(self) -> Pose:
        starts = self.spec.starts
        areas = [(r[2] - r[0]) * (r[3] - r[1]) for r in starts]
        r = self.rng.choices(starts, weights=areas)[0]
        for _ in range(1000):
            x = self.rng.uniform(r[0], r[2])
            y = self.rng.uniform(r[1], r[3])
            if self.free_cell(x, y):
                break
        else:
            raise ValueError(f"start region {r} has no free floor")
        if self.spec.start_heading is not None:
            heading = self.spec.start_heading
        else:
            heading = self.rng.randrange(4)
        return Pose(x, y, heading)

    # --- episode API

    def reset(self, seed: Optional[int] = None, pose: Optional[Pose] = None) -> Tuple[Pose, np.ndarray]:
        if seed is not None:
            self.rng.seed(seed)
            self.noise_rng = np.random.default_rng(seed)
        self.pose = pose if pose is not None else self.sample_start()
        self.done = False
        self.t = 0
        self.zone_hit = None
        return self.pose, self.observe()

    def _move(self, action: int) -> Pose:
        p = self.pose
        step = self.spec.step_size
        if self.spec.action_mode == "cardinal":
            heading = action
        else:
            if action == 1:
                return Pose(p.x, p.y, (p.heading - 1) % 4)
            if action == 2:
                return Pose(p.x, p.y, (p.heading + 1) % 4)
            heading = p.heading
        dx, dy = CARDINAL[heading]
        nx, ny = p.x + dx * step, p.y + dy * step
        if self._path_clear(p.x, p.y, nx, ny):
            return Pose(nx, ny, p.heading)
        return p

    def step(self, action: int) -> StepOutcome:
        if self.done:
            raise EpisodeOver("step() called on a finished episode; call reset()")
        if not 0 <= action < self.spec.n_actions:
            raise ValueError(f"action {action} out of range")
        spec = self.spec
        self.pose = self._move(action)
        self.t += 1
        reward = 0.0
        info = {"hazard": False, "teleported": False, "zone": None, "timeout": False}
        x, y = self.pose.x, self.pose.y
        for hz in spec.hazards:
            if in_rect(x, y, hz.rect):
                info["hazard"] = True
                if self.rng.random() < hz.probability:
                    reward += hz.penalty
        terminal = False
        for name, zone in spec.terminals.items():
            if in_rect(x, y, zone.rect):
                reward += zone.reward
                terminal = True
                info["zone"] = name
                self.zone_hit = name
                break
        if not terminal:
            for tp in spec.teleporters.values():
                if tp.enabled and in_rect(x, y, tp.entry):
                    self.pose = Pose(tp.exit[0], tp.exit[1], self.pose.heading)
                    info["teleported"] = True
                    break
        reward += spec.step_penalty
        if not terminal and self.t >= spec.max_steps:
            info["timeout"] = True
            terminal = True
        self.done = terminal
        return StepOutcome(self.observe(), reward, terminal, info)

    def forced_run(self, script: Sequence[int], start: Pose) -> Trace:
        """Execute a fixed action list from ``start``; stops early on a terminal step."""
        if len(script) > self.spec.max_steps:
            raise ValueError("script longer than the episode limit")
        _, o = self.reset(pose=start)
        obs, acts, rews, poses = [o], [], [], [self.pose]
        terminal = False
        for a in script:
            out = self.step(a)
            obs.append(out.observation)
            acts.append(a)
            rews.append(out.reward)
            poses.append(self.pose)
            if out.terminal:
                terminal = not out.info["timeout"]
                break
        self.done = True
        return Trace(obs, acts, rews, poses, terminal)


def write_trace_csv(fh: IO[str], rows: Iterable[dict]) -> None:
    """Episode trace CSV: ``t, x, y, heading, action, reward, state_code``."""
    fh.write("# statetab-trace v1\n")
    w = csv.DictWriter(fh, fieldnames=["t", "x", "y", "heading", "action", "reward", "state_code"],
                       lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)


# ---------------------------------------------------------------- presets

def _cells(layout: List[str], chars: str) -> List[Rect]:
    h = len(layout)
    return [cell_rect(c, r, h) for r, row in enumerate(layout) for c, ch in enumerate(row) if ch in chars]


def _bbox(rects: List[Rect]) -> Rect:
    return (min(r[0] for r in rects), min(r[1] for r in rects), max(r[2] for r in rects), max(r[3] for r in rects))


def _strip(layout: List[str]) -> List[str]:
    # zone letters are annotations only; keep walls and barriers
    return ["".join(ch if ch in "#b" else "." for ch in row) for row in layout]


TMAZE = [
    "###########",
    "#SS...bbbb#",
    "#####.#####",
    "#####.#####",
    "#####.#####",
    "#####.#####",
    "#####G#####",
    "###########",
]

HMAZE = [
    "#############",
    "#S#########P#",
    "#.#########.#",
    "#.#########.#",
    "#.#########.#",
    "#...........#",
    "#.#########.#",
    "#.#########.#",
    "#.#########e#",
    "#D#########G#",
    "#############",
]

PLUSMAZE = [
    "#########",
    "####V####",
    "####.####",
    "####.####",
    "#H.....H#",
    "####.####",
    "####.####",
    "####V####",
    "#########",
]

RIMMAZE = [
    "###############",
    "#RRRRRRRRRRRRR#",
    "#R###x###.###R#",
    "#R#.........#R#",
    "#R#.###.###.#R#",
    "#R#.#.....#.#R#",
    "#Rx.#.#G#.#.xR#",
    "#R#...#.#...#R#",
    "#R#.#.#x#.#.#R#",
    "#R#.#.....#.#R#",
    "#R#.###x###.#R#",
    "#R#.........#R#",
    "#R###.###x###R#",
    "#RRRRRRRRRRRRR#",
    "###############",
]


def tmaze(**overrides) -> MazeSpec:
    """T-maze: start in the left arm, reward at the foot of the stem, right arm barred."""
    lay = TMAZE
    spec = dict(
        layout=_strip(lay),
        starts=[_bbox(_cells(lay, "S"))],
        terminals={"goal": Zone(_cells(lay, "G")[0], 1.0)},
        step_penalty=-0.01,
        max_steps=60,
    )
    spec.update(overrides)
    return MazeSpec(**spec)


TMAZE_JUNCTION = (5.5, 6.5)
TMAZE_FORCED_START = Pose(9.5, 6.5, 0)
TMAZE_FORCED_SCRIPT = [3, 3, 3, 3, 2, 2, 2]  # left along the barred arm, then down the stem


def hmaze(**overrides) -> MazeSpec:
    """H-maze: start top-left, reward bottom-right, penalty top-right, dead end bottom-left.

    The dead end hosts a teleporter (disabled initially) whose exit sits one
    step above the reward zone.
    """
    lay = HMAZE
    exit_rect = _cells(lay, "e")[0]
    spec = dict(
        layout=_strip(lay),
        starts=[_cells(lay, "S")[0]],
        terminals={"reward": Zone(_cells(lay, "G")[0], 1.0), "penalty": Zone(_cells(lay, "P")[0], -1.0)},
        teleporters={"dead_end": Teleporter(_cells(lay, "D")[0], (exit_rect[0] + 0.5, exit_rect[1] + 0.5))},
        step_penalty=-0.01,
        max_steps=100,
    )
    spec.update(overrides)
    return MazeSpec(**spec)


HMAZE_FORCED_START = Pose(1.5, 9.5, 0)
HMAZE_FORCED_SCRIPTS = {
    "rewarded": [2] * 8 + [2],           # down the left arm, through the teleporter, into the reward
    "penalized": [2] * 8 + [0] * 7,      # through the teleporter, then up the right arm into the penalty
}


def plusmaze(**overrides) -> MazeSpec:
    """Plus maze: horizontal arm ends pay +1, vertical arm ends -1; start anywhere on the floor."""
    lay = PLUSMAZE
    h_ends = _cells(lay, "H")
    v_ends = _cells(lay, "V")
    floor = _cells(lay, ".")
    spec = dict(
        layout=_strip(lay),
        starts=floor,
        terminals={"west": Zone(h_ends[0], 1.0), "east": Zone(h_ends[1], 1.0),
                   "north": Zone(v_ends[0], -1.0), "south": Zone(v_ends[1], -1.0)},
        step_penalty=-0.01,
        max_steps=50,
    )
    spec.update(overrides)
    return MazeSpec(**spec)


def rimmaze(hazards: bool = True, **overrides) -> MazeSpec:
    """Rim-to-center maze: start on the outer rim, +1 at the centre, six optional hazards."""
    lay = RIMMAZE
    spec = dict(
        layout=_strip(lay),
        starts=_cells(lay, "R"),
        terminals={"center": Zone(_cells(lay, "G")[0], 1.0)},
        hazards=[Hazard(r, -1.0, 0.25) for r in _cells(lay, "x")] if hazards else [],
        step_penalty=-0.01,
        max_steps=200,
    )
    spec.update(overrides)
    return MazeSpec(**spec)


PRESETS = {"tmaze": tmaze, "hmaze": hmaze, "plusmaze": plusmaze, "rimmaze": rimmaze}


def make_maze(name: str, **overrides) -> MazeSpec:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown maze preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**overrides)
