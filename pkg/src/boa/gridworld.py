"""Deterministic POMDP gridworlds with egocentric partial observations.

Six tasks are available. Navigation tasks (``hallway``, ``one_room``,
``four_rooms``, ``t_maze``, ``maze_s3``) ask the agent to step onto a goal
cell using 3 actions (left, right, forward). ``pick_place`` uses 6 actions
(left, right, forward, back, pick up, drop) and succeeds once the yellow
block sits 4-adjacent to the red block.

On success the reward is ``1 - 0.2 * t / T`` where ``t`` is the number of
steps taken before the successful one and ``T`` the episode limit; every
other step yields 0. Hence returns lie in ``{0} | (0.8, 1]``.

``width``/``height`` of an :class:`EnvSpec` are interior dimensions whose
meaning depends on the task:

=============  ===================================================
hallway        corridor length x 1
one_room       room interior
four_rooms     whole interior, split by a cross of walls
t_maze         length of the top bar x length of the stem
maze_s3        interior area the three rooms are placed in
pick_place     room interior
=============  ===================================================
"""

from __future__ import annotations

import dataclasses
import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ExpertError, SpecError, UsageError

WALL, FLOOR, GOAL, YELLOW, RED, OUT = range(6)
NUM_CODES = 6
CODE_CHARS = "#.GYR "

LEFT, RIGHT, FORWARD, BACK, PICK, DROP = range(6)
ACTION_NAMES = ("left", "right", "forward", "back", "pick_up", "drop")
# expert tie-break order among equally short plans
_PREFERENCE = (FORWARD, LEFT, RIGHT, BACK, PICK, DROP)

# headings N, E, S, W as (dx, dy) with y growing downwards
_DIRS = ((0, -1), (1, 0), (0, 1), (-1, 0))

TASKS = ("hallway", "one_room", "four_rooms", "t_maze", "maze_s3", "pick_place")
_DEFAULT_SIZE = {
    "hallway": (12, 1),
    "one_room": (6, 6),
    "four_rooms": (11, 11),
    "t_maze": (9, 5),
    "maze_s3": (15, 15),
    "pick_place": (6, 6),
}


@dataclass(frozen=True)
class EnvSpec:
    task: str
    width: int = 0
    height: int = 0
    max_steps: int = 0
    view_radius: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise SpecError(f"unknown task {self.task!r}; expected one of {TASKS}")
        w, h = _DEFAULT_SIZE[self.task]
        if self.width == 0:
            object.__setattr__(self, "width", w)
        if self.height == 0:
            object.__setattr__(self, "height", h)
        if self.max_steps == 0:
            object.__setattr__(self, "max_steps", 200 if self.task == "pick_place" else 100)
        if self.max_steps < 1:
            raise SpecError("max_steps must be >= 1")
        if self.view_radius < 0:
            raise SpecError("view_radius must be >= 0")
        _check_size(self.task, self.width, self.height)

    @property
    def num_actions(self) -> int:
        return 6 if self.task == "pick_place" else 3

    @property
    def view_size(self) -> int:
        return 2 * self.view_radius + 1

    def with_seed(self, seed: int) -> "EnvSpec":
        return dataclasses.replace(self, seed=int(seed))

    def to_dict(self, include_seed: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if not include_seed:
            d.pop("seed")
        return d

    def fingerprint(self) -> str:
        """Everything but the seed: episodes of one fingerprint are comparable."""
        return json.dumps(self.to_dict(include_seed=False), sort_keys=True, separators=(",", ":"))


def _check_size(task: str, w: int, h: int) -> None:
    minimum = {
        "hallway": (2, 1),
        "one_room": (2, 2),
        "four_rooms": (5, 5),
        "t_maze": (3, 1),
        "maze_s3": (11, 11),
        "pick_place": (3, 3),
    }[task]
    if w < minimum[0] or h < minimum[1]:
        raise SpecError(f"{task} needs at least {minimum[0]}x{minimum[1]} cells, got {w}x{h}")
    if task == "hallway" and h != 1:
        raise SpecError("hallway is a 1-cell-wide corridor; height must be 1")
    if task == "t_maze" and w % 2 == 0:
        raise SpecError("t_maze bar length must be odd")


@dataclass(frozen=True)
class Observation:
    """Egocentric window of cell codes, rotated so the agent faces up."""

    cells: np.ndarray
    carried: bool = False

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    def to_bytes(self) -> bytes:
        return self.cells.tobytes() + bytes([int(self.carried)])

    @classmethod
    def from_bytes(cls, data: bytes, size: int) -> "Observation":
        if len(data) != size * size + 1:
            raise DimensionError(f"expected {size * size + 1} bytes, got {len(data)}")
        cells = np.frombuffer(data, dtype=np.uint8, count=size * size).reshape(size, size)
        return cls(cells, bool(data[-1]))

    def __eq__(self, other):
        return isinstance(other, Observation) and self.to_bytes() == other.to_bytes()

    def __hash__(self):
        return hash(self.to_bytes())


@dataclass
class EnvState:
    x: int
    y: int
    heading: int
    t: int = 0
    goal: tuple[int, int] | None = None
    yellow: tuple[int, int] | None = None
    red: tuple[int, int] | None = None
    carrying: bool = False
    done: bool = False
    success: bool = False


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    success: bool


class GridWorld:
    """One episode of a task. Build with :func:`make_env`."""

    def __init__(self, spec: EnvSpec, grid: np.ndarray, state: EnvState):
        self.spec = spec
        self.grid = grid
        self.grid.flags.writeable = False
        self.state = state
        self._dist_cache: dict = {}

    @property
    def num_actions(self) -> int:
        return self.spec.num_actions

    def cell(self, x: int, y: int) -> int:
        h, w = self.grid.shape
        if not (0 <= x < w and 0 <= y < h):
            return OUT
        s = self.state
        if s.yellow == (x, y):
            return YELLOW
        if s.red == (x, y):
            return RED
        if s.goal == (x, y):
            return GOAL
        return int(self.grid[y, x])

    def observe(self) -> Observation:
        s = self.state
        r = self.spec.view_radius
        fx, fy = _DIRS[s.heading]
        rx, ry = _DIRS[(s.heading + 1) % 4]
        size = 2 * r + 1
        cells = np.empty((size, size), dtype=np.uint8)
        for i in range(size):
            ahead = r - i
            for j in range(size):
                side = j - r
                cells[i, j] = self.cell(s.x + ahead * fx + side * rx, s.y + ahead * fy + side * ry)
        return Observation(cells, s.carrying)

    def step(self, action: int) -> StepResult:
        s = self.state
        if s.done:
            raise UsageError("step() called on a finished episode")
        if not 0 <= action < self.num_actions:
            raise UsageError(f"action {action} outside [0, {self.num_actions})")
        t_before = s.t
        _apply(self, s, action)
        s.t += 1
        reward = 0.0
        if s.success:
            reward = 1.0 - 0.2 * t_before / self.spec.max_steps
            s.done = True
        elif s.t >= self.spec.max_steps:
            s.done = True
        return StepResult(self.observe(), reward, s.done, s.success)

    def render(self) -> str:
        """ASCII view of the full layout; the agent is drawn as ^ > v <."""
        h, w = self.grid.shape
        rows = []
        for y in range(h):
            row = []
            for x in range(w):
                if (x, y) == (self.state.x, self.state.y):
                    row.append("^>v<"[self.state.heading])
                else:
                    row.append(CODE_CHARS[self.cell(x, y)])
            rows.append("".join(row))
        return "\n".join(rows)

    # expert ---------------------------------------------------------------

    def shortest_distance(self) -> int:
        """Fewest actions (turns included) from the current state to success."""
        dist = self._distances()
        d = dist.get(_key(self.state))
        if d is None:
            raise ExpertError("objective unreachable from the current state")
        return d

    def optimal_actions(self) -> list[int]:
        s = self.state
        if s.done:
            raise UsageError("episode already finished")
        dist = self._distances()
        here = dist.get(_key(s))
        if here is None:
            raise ExpertError("objective unreachable from the current state")
        best = []
        for a in _PREFERENCE[: self.num_actions]:
            nxt = _successor(self, s, a)
            if nxt is _SUCCESS:
                d = 0
            elif nxt is None:
                continue
            else:
                d = dist.get(nxt)
            if d is not None and d == here - 1:
                best.append(a)
        return best

    def _distances(self) -> dict:
        cfg = (self.state.carrying, self.state.yellow)
        if cfg not in self._dist_cache:
            self._dist_cache[cfg] = _backward_bfs(self)
        return self._dist_cache[cfg]


def expert_action(env: GridWorld, rng: np.random.Generator | None = None, eta: float = 0.0) -> int:
    """Next action on a shortest path to the current objective.

    Ties go to forward, then left, right, back. With probability ``eta`` the
    choice is instead uniform among all optimal first moves.
    """
    best = env.optimal_actions()
    if not best:
        raise ExpertError("no action reduces the distance to the objective")
    if eta > 0.0 and rng is not None and rng.random() < eta:
        return best[int(rng.integers(len(best)))]
    return best[0]


# dynamics -------------------------------------------------------------------

_SUCCESS = object()


def _walkable(env: GridWorld, x: int, y: int, yellow, red) -> bool:
    h, w = env.grid.shape
    if not (0 <= x < w and 0 <= y < h):
        return False
    if (x, y) == yellow or (x, y) == red:
        return False
    return env.grid[y, x] != WALL


def _adjacent(a, b) -> bool:
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


def _apply(env: GridWorld, s: EnvState, action: int) -> None:
    if action == LEFT:
        s.heading = (s.heading - 1) % 4
    elif action == RIGHT:
        s.heading = (s.heading + 1) % 4
    elif action in (FORWARD, BACK):
        dx, dy = _DIRS[s.heading]
        if action == BACK:
            dx, dy = -dx, -dy
        nx, ny = s.x + dx, s.y + dy
        if _walkable(env, nx, ny, s.yellow, s.red):
            s.x, s.y = nx, ny
            if s.goal == (nx, ny):
                s.success = True
    else:
        dx, dy = _DIRS[s.heading]
        ahead = (s.x + dx, s.y + dy)
        if action == PICK and not s.carrying and s.yellow == ahead:
            s.carrying = True
            s.yellow = None
        elif action == DROP and s.carrying and _walkable(env, *ahead, None, s.red):
            s.carrying = False
            s.yellow = ahead
            if s.red is not None and _adjacent(ahead, s.red):
                s.success = True


def _key(s: EnvState):
    return (s.x, s.y, s.heading, s.carrying)


def _successor(env: GridWorld, s: EnvState, action: int):
    """Pose key after ``action``; _SUCCESS on completion, None if nothing changes."""
    probe = dataclasses.replace(s)
    _apply(env, probe, action)
    if probe.success:
        return _SUCCESS
    if probe.carrying != s.carrying and not probe.carrying:
        # a drop that did not finish the task leaves the modeled configuration
        return None
    k = _key(probe)
    return None if k == _key(s) else k


def _backward_bfs(env: GridWorld) -> dict:
    """Distance-to-success for every pose reachable in the current block config."""
    s0 = env.state
    h, w = env.grid.shape
    phases = [s0.carrying] if s0.carrying else [False, True]
    if env.spec.task != "pick_place":
        phases = [False]
    preds: dict = {}
    finishers = []
    for carrying in phases:
        yellow = None if carrying else s0.yellow
        for y in range(h):
            for x in range(w):
                if not _walkable(env, x, y, yellow, s0.red) or (x, y) == s0.goal:
                    continue
                for heading in range(4):
                    st = dataclasses.replace(
                        s0, x=x, y=y, heading=heading, carrying=carrying, yellow=yellow,
                        success=False, done=False,
                    )
                    src = _key(st)
                    for a in range(env.num_actions):
                        nxt = _successor(env, st, a)
                        if nxt is _SUCCESS:
                            finishers.append(src)
                        elif nxt is not None:
                            preds.setdefault(nxt, []).append(src)
    dist: dict = {}
    queue = deque()
    for src in finishers:
        if src not in dist:
            dist[src] = 1
            queue.append(src)
    while queue:
        cur = queue.popleft()
        for p in preds.get(cur, ()):
            if p not in dist:
                dist[p] = dist[cur] + 1
                queue.append(p)
    return dist


# layouts --------------------------------------------------------------------


def _room(w: int, h: int) -> np.ndarray:
    grid = np.full((h + 2, w + 2), WALL, dtype=np.uint8)
    grid[1:-1, 1:-1] = FLOOR
    return grid


def _floor_cells(grid: np.ndarray) -> list[tuple[int, int]]:
    ys, xs = np.nonzero(grid == FLOOR)
    return list(zip(xs.tolist(), ys.tolist()))


def _pick(rng: np.random.Generator, cells):
    return cells[int(rng.integers(len(cells)))]


def _layout_hallway(spec, rng):
    grid = _room(spec.width, 1)
    length = spec.width
    goal = (int(rng.integers(length // 2 + 1, length + 1)), 1)
    return grid, EnvState(1, 1, int(rng.integers(4)), goal=goal)


def _layout_one_room(spec, rng):
    grid = _room(spec.width, spec.height)
    cells = _floor_cells(grid)
    i, j = rng.choice(len(cells), size=2, replace=False)
    (sx, sy), goal = cells[i], cells[j]
    return grid, EnvState(sx, sy, int(rng.integers(4)), goal=goal)


def _layout_four_rooms(spec, rng):
    w, h = spec.width, spec.height
    grid = _room(w, h)
    cx, cy = 1 + w // 2, 1 + h // 2
    grid[:, cx] = WALL
    grid[cy, :] = WALL
    # one door in each of the four wall segments
    grid[int(rng.integers(1, cy)), cx] = FLOOR
    grid[int(rng.integers(cy + 1, h + 1)), cx] = FLOOR
    grid[cy, int(rng.integers(1, cx))] = FLOOR
    grid[cy, int(rng.integers(cx + 1, w + 1))] = FLOOR
    cells = _floor_cells(grid)
    i, j = rng.choice(len(cells), size=2, replace=False)
    (sx, sy), goal = cells[i], cells[j]
    return grid, EnvState(sx, sy, int(rng.integers(4)), goal=goal)


def _layout_t_maze(spec, rng):
    bar, stem = spec.width, spec.height
    grid = np.full((stem + 3, bar + 2), WALL, dtype=np.uint8)
    mid = 1 + bar // 2
    grid[1, 1:-1] = FLOOR
    grid[1 : stem + 2, mid] = FLOOR
    goal = (1, 1) if rng.random() < 0.5 else (bar, 1)
    return grid, EnvState(mid, stem + 1, 0, goal=goal)


def _layout_maze_s3(spec, rng):
    w, h = spec.width, spec.height
    grid = np.full((h + 2, w + 2), WALL, dtype=np.uint8)
    rooms = []
    for _ in range(200):
        if len(rooms) == 3:
            break
        rw, rh = int(rng.integers(3, 6)), int(rng.integers(3, 6))
        x0, y0 = int(rng.integers(1, w - rw + 2)), int(rng.integers(1, h - rh + 2))
        cand = (x0, y0, rw, rh)
        # keep at least one wall cell between rooms
        if all(
            x0 > ox + ow or ox > x0 + rw or y0 > oy + oh or oy > y0 + rh
            for ox, oy, ow, oh in rooms
        ):
            rooms.append(cand)
    if len(rooms) < 3:
        rooms = [(1, 1, 3, 3), (w - 3, 1, 3, 3), (1, h - 3, 3, 3)]
    for x0, y0, rw, rh in rooms:
        grid[y0 : y0 + rh, x0 : x0 + rw] = FLOOR
    centers = [(x0 + rw // 2, y0 + rh // 2) for x0, y0, rw, rh in rooms]
    for (ax, ay), (bx, by) in zip(centers, centers[1:]):
        if rng.random() < 0.5:
            grid[ay, min(ax, bx) : max(ax, bx) + 1] = FLOOR
            grid[min(ay, by) : max(ay, by) + 1, bx] = FLOOR
        else:
            grid[min(ay, by) : max(ay, by) + 1, ax] = FLOOR
            grid[by, min(ax, bx) : max(ax, bx) + 1] = FLOOR

    def cells_of(room):
        x0, y0, rw, rh = room
        return [(x, y) for y in range(y0, y0 + rh) for x in range(x0, x0 + rw)]

    sx, sy = _pick(rng, cells_of(rooms[0]))
    goal = _pick(rng, cells_of(rooms[2]))
    return grid, EnvState(sx, sy, int(rng.integers(4)), goal=goal)


def _layout_pick_place(spec, rng):
    grid = _room(spec.width, spec.height)
    cells = _floor_cells(grid)
    while True:
        i, j, k = rng.choice(len(cells), size=3, replace=False)
        yellow, red, agent = cells[i], cells[j], cells[k]
        if not _adjacent(yellow, red):
            break
    return grid, EnvState(agent[0], agent[1], int(rng.integers(4)), yellow=yellow, red=red)


_LAYOUTS = {
    "hallway": _layout_hallway,
    "one_room": _layout_one_room,
    "four_rooms": _layout_four_rooms,
    "t_maze": _layout_t_maze,
    "maze_s3": _layout_maze_s3,
    "pick_place": _layout_pick_place,
}


def make_env(spec: EnvSpec, seed: int | None = None) -> GridWorld:
    """Fresh episode; layout, spawn and goal are a pure function of the seed."""
    if seed is not None:
        spec = spec.with_seed(seed)
    rng = np.random.Generator(np.random.PCG64(spec.seed & 0xFFFFFFFFFFFFFFFF))
    grid, state = _LAYOUTS[spec.task](spec, rng)
    return GridWorld(spec, grid, state)
