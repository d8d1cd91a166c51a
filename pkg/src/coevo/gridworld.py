"""Fully observable key-door maze in the MiniGrid tile encoding.

Tiles are ``(object_idx, color_idx, state)`` triples indexed ``tiles[x, y]``.
Directions follow MiniGrid: 0 = +x, 1 = +y, 2 = -x, 3 = -y.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .errors import GenerationError, MalformedLevel, OutOfBounds

# object indices
UNSEEN, EMPTY, WALL, FLOOR, DOOR, KEY, BALL, BOX, GOAL, LAVA, AGENT = range(11)
OBJECT_NAMES = ("unseen", "empty", "wall", "floor", "door", "key", "ball", "box", "goal", "lava", "agent")
COLOR_NAMES = ("red", "green", "blue", "purple", "yellow", "grey")
# door states
OPEN, CLOSED, LOCKED = 0, 1, 2

TURN_LEFT, TURN_RIGHT, FORWARD, PICKUP, DROP, TOGGLE = range(6)
ACTION_NAMES = ("turn_left", "turn_right", "forward", "pickup", "drop", "toggle")

DIR_VEC = ((1, 0), (0, 1), (-1, 0), (0, -1))
CHANNEL_MAX = np.array([10.0, 5.0, 2.0])
MAX_DOORS = 6


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def passable(obj: int, state: int) -> bool:
    return obj in (EMPTY, FLOOR, GOAL) or (obj == DOOR and state == OPEN)


@dataclass(frozen=True)
class GridLevel:
    """One concrete maze layout."""

    size: int
    tiles: np.ndarray = field(repr=False)
    agent_start: tuple[int, int]
    agent_dir: int
    goal: tuple[int, int]
    max_steps: int

    def __post_init__(self):
        tiles = np.array(self.tiles, dtype=np.uint8, copy=True)
        object.__setattr__(self, "tiles", _readonly(tiles))
        object.__setattr__(self, "agent_start", tuple(int(v) for v in self.agent_start))
        object.__setattr__(self, "goal", tuple(int(v) for v in self.goal))
        validate_grid_level(self)

    @property
    def num_doors(self) -> int:
        return int(np.count_nonzero(self.tiles[:, :, 0] == DOOR))

    def __eq__(self, other):
        if not isinstance(other, GridLevel):
            return NotImplemented
        return (
            self.size == other.size
            and self.agent_start == other.agent_start
            and self.agent_dir == other.agent_dir
            and self.goal == other.goal
            and self.max_steps == other.max_steps
            and np.array_equal(self.tiles, other.tiles)
        )

    def __hash__(self):
        return hash((self.size, self.agent_start, self.agent_dir, self.goal, self.max_steps, self.tiles.tobytes()))


def validate_grid_level(level: GridLevel) -> None:
    n = level.size
    t = level.tiles
    if n < 3:
        raise MalformedLevel(f"grid size {n} too small")
    if t.shape != (n, n, 3):
        raise MalformedLevel(f"tiles shape {t.shape} != ({n}, {n}, 3)")
    if level.max_steps < 1:
        raise MalformedLevel("max_steps must be positive")
    obj, col, st = t[:, :, 0], t[:, :, 1], t[:, :, 2]
    if obj.max() > AGENT or col.max() > 5 or st.max() > 2:
        raise MalformedLevel("tile index out of range")
    if np.any(obj == AGENT):
        raise MalformedLevel("the agent is not stored in the tile grid")
    border = np.ones((n, n), dtype=bool)
    border[1:-1, 1:-1] = False
    if np.any(obj[border] != WALL):
        raise MalformedLevel("perimeter tiles must be walls")
    goals = np.argwhere(obj == GOAL)
    if len(goals) != 1:
        raise MalformedLevel(f"expected exactly one goal tile, found {len(goals)}")
    if tuple(goals[0]) != level.goal:
        raise MalformedLevel(f"goal field {level.goal} does not match goal tile {tuple(goals[0])}")
    if np.any(st[obj != DOOR] != 0):
        raise MalformedLevel("only doors carry a non-zero state")
    if level.num_doors > MAX_DOORS:
        raise MalformedLevel(f"at most {MAX_DOORS} doors allowed")
    key_colors = set(col[obj == KEY].tolist())
    for c in col[(obj == DOOR) & (st == LOCKED)].tolist():
        if c not in key_colors:
            raise MalformedLevel(f"locked {COLOR_NAMES[c]} door has no matching key")
    x, y = level.agent_start
    if not (0 <= x < n and 0 <= y < n) or obj[x, y] not in (EMPTY, FLOOR):
        raise MalformedLevel(f"agent start {level.agent_start} is not on an empty tile")
    if level.agent_dir not in range(4):
        raise MalformedLevel(f"agent_dir {level.agent_dir} not in 0..3")


# ------------------------------------------------------------------ state


@dataclass(frozen=True)
class GridState:
    tiles: np.ndarray = field(repr=False)
    agent_pos: tuple[int, int]
    agent_dir: int
    carrying: int | None
    steps: int
    max_steps: int
    outcome: str | None = None  # "goal" | "timeout"

    @property
    def terminated(self) -> bool:
        return self.outcome is not None

    def front(self) -> tuple[int, int]:
        dx, dy = DIR_VEC[self.agent_dir]
        return self.agent_pos[0] + dx, self.agent_pos[1] + dy

    def key(self) -> tuple:
        """Hashable snapshot of everything the dynamics depend on."""
        return (self.tiles.tobytes(), self.agent_pos, self.agent_dir, self.carrying, self.steps, self.outcome)

    def __eq__(self, other):
        if not isinstance(other, GridState):
            return NotImplemented
        return self.key() == other.key() and self.max_steps == other.max_steps

    def __hash__(self):
        return hash(self.key())


def grid_reset(level: GridLevel) -> GridState:
    return GridState(
        tiles=level.tiles,
        agent_pos=level.agent_start,
        agent_dir=level.agent_dir,
        carrying=None,
        steps=0,
        max_steps=level.max_steps,
    )


def grid_step(state: GridState, action: int) -> GridState:
    """Advance one step. Illegal or ineffective actions still consume the step."""
    if state.terminated:
        raise ValueError("episode already terminated")
    tiles = state.tiles
    pos, d, carrying = state.agent_pos, state.agent_dir, state.carrying
    outcome = None
    fx, fy = state.front()
    fobj, fcol, fst = (int(v) for v in tiles[fx, fy])

    if action == TURN_LEFT:
        d = (d - 1) % 4
    elif action == TURN_RIGHT:
        d = (d + 1) % 4
    elif action == FORWARD:
        if passable(fobj, fst):
            pos = (fx, fy)
            if fobj == GOAL:
                outcome = "goal"
    elif action == PICKUP:
        if fobj == KEY and carrying is None:
            carrying = fcol
            tiles = tiles.copy()
            tiles[fx, fy] = (EMPTY, 0, 0)
            _readonly(tiles)
    elif action == DROP:
        if carrying is not None and fobj == EMPTY:
            tiles = tiles.copy()
            tiles[fx, fy] = (KEY, carrying, 0)
            _readonly(tiles)
            carrying = None
    elif action == TOGGLE:
        if fobj == DOOR and (fst == CLOSED or (fst == LOCKED and carrying == fcol)):
            tiles = tiles.copy()
            tiles[fx, fy, 2] = OPEN
            _readonly(tiles)

    steps = state.steps + 1
    if outcome is None and steps >= state.max_steps:
        outcome = "timeout"
    return GridState(tiles, pos, d, carrying, steps, state.max_steps, outcome)


def shaped_score(success: bool, steps: int, max_steps: int) -> float:
    """MiniGrid-style return: 1 - 0.9 * t / T on success, else 0."""
    return 1.0 - 0.9 * steps / max_steps if success else 0.0


# ------------------------------------------------------------ observation


@dataclass(frozen=True)
class GridObservation:
    tiles: np.ndarray = field(repr=False)  # raw n x n x 3 integers
    agent_pos: tuple[int, int]
    agent_dir: int
    carrying: int | None

    @property
    def size(self) -> int:
        return self.tiles.shape[0]

    @property
    def normalized(self) -> np.ndarray:
        return (self.tiles / CHANNEL_MAX).reshape(-1)

    def vector(self) -> np.ndarray:
        """Flattened normalized tiles followed by x, y and direction."""
        return np.concatenate([self.normalized, [*self.agent_pos, self.agent_dir]]).astype(float)

    def key(self) -> tuple:
        return (self.tiles.tobytes(), self.tiles.shape, self.agent_pos, self.agent_dir, self.carrying)

    def to_message(self) -> dict:
        return {
            "image": self.tiles.astype(int).tolist(),
            "flat": self.normalized.tolist(),
            "agent_pos": list(self.agent_pos),
            "agent_dir": self.agent_dir,
            "carrying": -1 if self.carrying is None else self.carrying,
        }


def grid_observe(state: GridState) -> GridObservation:
    return GridObservation(state.tiles, state.agent_pos, state.agent_dir, state.carrying)


# ------------------------------------------------------------ reachability


def _neighbors(n: int, x: int, y: int) -> Iterator[tuple[int, int]]:
    for dx, dy in DIR_VEC:
        nx, ny = x + dx, y + dy
        if 0 <= nx < n and 0 <= ny < n:
            yield nx, ny


def _bfs(level: GridLevel, start, goal, door_ok) -> bool:
    n = level.size
    for p in (start, goal):
        if not (0 <= p[0] < n and 0 <= p[1] < n):
            raise OutOfBounds(f"{p} outside {n}x{n} grid")
    t = level.tiles

    def ok(x, y):
        obj, _, st = t[x, y]
        if obj == DOOR:
            return door_ok(int(st))
        return obj in (EMPTY, FLOOR, GOAL, KEY)

    start, goal = tuple(start), tuple(goal)
    if start == goal:
        return True
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for nb in _neighbors(n, x, y):
            if nb in seen or not ok(*nb):
                continue
            if nb == goal:
                return True
            seen.add(nb)
            queue.append(nb)
    return False


def bfs_block_locked(level: GridLevel, start, goal) -> bool:
    """Reachability with locked doors as walls. Keys are stepped over."""
    return _bfs(level, start, goal, lambda st: st != LOCKED)


def bfs_ignore_doors(level: GridLevel, start, goal) -> bool:
    """Reachability with every door treated as open."""
    return _bfs(level, start, goal, lambda st: True)


def _component(tiles: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    n = tiles.shape[0]
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for nb in _neighbors(n, x, y):
            if nb not in seen:
                obj, _, st = tiles[nb]
                if passable(int(obj), int(st)):
                    seen.add(nb)
                    queue.append(nb)
    return sorted(seen)


def _safe_drop_cell(tiles: np.ndarray, comp: list, comp_set: set):
    """An empty region cell whose loss changes nothing else, or None.

    The cell must border only region cells or walls, and removing it must
    leave the region connected, so a key dropped there blocks no door, key or
    route.
    """
    n = tiles.shape[0]
    if len(comp) < 2:
        return None
    for e in comp:
        if tiles[e][0] != EMPTY:
            continue
        nbs = list(_neighbors(n, *e))
        if any(nb not in comp_set and tiles[nb][0] != WALL for nb in nbs):
            continue
        rest = comp_set - {e}
        seed = next(nb for nb in nbs if nb in rest) if any(nb in rest for nb in nbs) else None
        if seed is None:
            continue
        seen = {seed}
        stack = [seed]
        while stack:
            c = stack.pop()
            for nb in _neighbors(n, *c):
                if nb in rest and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) == len(rest):
            return e
    return None


def _macro_search(level: GridLevel, max_states: int, all_drops: bool) -> bool | None:
    """Search over (tile configuration, carried key, agent component).

    Inside a connected passable region the agent's cell and heading are free to
    change, so only interactions with the region's boundary create new states.
    With ``all_drops`` off the search is restricted: keys whose doors are all
    open are never collected, and a carried key is only swapped for a boundary
    key by dropping it on a "safe" region cell (see ``_safe_drop_cell``) or
    on a free cell beside the pickup pose. Every restricted transition is a legal macro move, so a True
    answer stays sound. Returns None when ``max_states`` is exhausted.
    """
    n = level.size
    goal = level.goal
    start_tiles = np.array(level.tiles)

    def canon(tiles, cell):
        comp = _component(tiles, cell)
        return comp[0], comp

    root_rep, root_comp = canon(start_tiles, level.agent_start)
    seen = {(start_tiles.tobytes(), None, root_rep)}
    queue = deque([(start_tiles, None, root_comp)])
    while queue:
        tiles, carrying, comp = queue.popleft()
        comp_set = set(comp)
        if goal in comp_set:
            return True
        successors = []
        if not all_drops:
            doors = tiles[:, :, 0] == DOOR
            useful = set(tiles[:, :, 1][doors & (tiles[:, :, 2] == LOCKED)].tolist())
        handled = set()
        safe = None
        for a in comp:
            for b in _neighbors(n, *a):
                if b in comp_set:
                    continue
                obj, col, st = (int(v) for v in tiles[b])
                if obj == KEY:
                    if all_drops:
                        if carrying is None:
                            nt = tiles.copy()
                            nt[b] = (EMPTY, 0, 0)
                            successors.append((nt, col, a))
                        continue
                    if col not in useful or col == carrying or b in handled:
                        continue
                    if carrying is None:
                        nt = tiles.copy()
                        nt[b] = (EMPTY, 0, 0)
                        successors.append((nt, col, a))
                        handled.add(b)
                        continue
                    if safe is None:
                        safe = _safe_drop_cell(tiles, comp, comp_set)
                    drops = [safe] if safe is not None and safe != a else []
                    drops += [e for e in _neighbors(n, *a) if e in comp_set and tiles[e][0] == EMPTY and e not in drops]
                    for e in drops:
                        nt = tiles.copy()
                        nt[e] = (KEY, carrying, 0)
                        nt[b] = (EMPTY, 0, 0)
                        successors.append((nt, col, a))
                    handled.add(b)
                elif obj == DOOR and (st == CLOSED or (st == LOCKED and carrying == col)):
                    nt = tiles.copy()
                    nt[b[0], b[1], 2] = OPEN
                    successors.append((nt, carrying, a))
        if all_drops and carrying is not None:
            for a in comp:
                for e in _neighbors(n, *a):
                    if e in comp_set and tiles[e][0] == EMPTY:
                        nt = tiles.copy()
                        nt[e] = (KEY, carrying, 0)
                        successors.append((nt, None, a))
        for nt, nc, cell in successors:
            rep, ncomp = canon(nt, cell)
            k = (nt.tobytes(), nc, rep)
            if k in seen:
                continue
            seen.add(k)
            if len(seen) > max_states:
                return None
            queue.append((nt, nc, ncomp))
    return False


EXACT_MAX_INTERIOR = 36


def check_solvable(level: GridLevel, max_states: int = 20_000) -> bool:
    """True iff some action sequence reaches the goal under key/door/drop semantics.

    A restricted search runs first (see ``_macro_search``). If that
    fails and the interior has at most ``EXACT_MAX_INTERIOR`` cells, the
    unrestricted search decides. Larger levels rely on the restricted answer,
    and a budget overrun reports unsolvable, so True is always backed by a
    concrete solution.
    """
    validate_grid_level(level)
    if _macro_search(level, max_states, all_drops=False):
        return True
    if (level.size - 2) ** 2 > EXACT_MAX_INTERIOR:
        return False
    return bool(_macro_search(level, max_states, all_drops=True))


def exhaustive_solvable(level: GridLevel, max_states: int = 2_000_000) -> bool:
    """Brute-force breadth-first search over primitive states using ``grid_step``.

    Independent of ``check_solvable``: it ignores the step horizon and explores
    every (tiles, position, heading, carried key) reachable by the six actions.
    """
    validate_grid_level(level)
    s0 = replace(grid_reset(level), max_steps=1 << 62)

    def k(s):
        return (s.tiles.tobytes(), s.agent_pos, s.agent_dir, s.carrying)

    seen = {k(s0)}
    queue = deque([s0])
    while queue:
        s = queue.popleft()
        for a in range(6):
            s2 = grid_step(s, a)
            if s2.outcome == "goal":
                return True
            key = k(s2)
            if key not in seen:
                seen.add(key)
                if len(seen) > max_states:
                    raise RuntimeError("exhaustive search budget exceeded")
                queue.append(replace(s2, steps=0))
    return False


# ------------------------------------------------------------ serialization


def grid_level_to_dict(level: GridLevel) -> dict:
    return {
        "size": level.size,
        "max_steps": level.max_steps,
        "tiles": level.tiles.reshape(-1, 3).astype(int).tolist(),
        "agent_start": list(level.agent_start),
        "agent_dir": level.agent_dir,
        "goal": list(level.goal),
    }


GRID_FIELDS = ("size", "max_steps", "tiles", "agent_start", "agent_dir", "goal")


def grid_level_from_dict(doc: dict) -> GridLevel:
    missing = [f for f in GRID_FIELDS if f not in doc]
    if missing:
        raise MalformedLevel(f"grid level document missing fields {missing}")
    n = int(doc["size"])
    tiles = np.asarray(doc["tiles"], dtype=np.int64)
    if tiles.size != n * n * 3:
        raise MalformedLevel(f"tiles hold {tiles.size // 3} triples, expected {n * n}")
    if tiles.min() < 0 or tiles.max() > 255:
        raise MalformedLevel("tile values out of range")
    return GridLevel(
        size=n,
        tiles=tiles.reshape(n, n, 3).astype(np.uint8),
        agent_start=tuple(doc["agent_start"]),
        agent_dir=int(doc["agent_dir"]),
        goal=tuple(doc["goal"]),
        max_steps=int(doc["max_steps"]),
    )


def dumps_grid_level(level: GridLevel) -> str:
    return json.dumps(grid_level_to_dict(level))


def loads_grid_level(text: str) -> GridLevel:
    return grid_level_from_dict(json.loads(text))


_GLYPHS = {UNSEEN: "?", EMPTY: ".", WALL: "#", FLOOR: "_", KEY: "k", BALL: "o", BOX: "b", GOAL: "G", LAVA: "~"}


def render_ascii(level: GridLevel) -> str:
    """Rows are y, columns are x. Doors: D locked, d closed, / open."""
    lines = []
    for y in range(level.size):
        row = []
        for x in range(level.size):
            obj, col, st = (int(v) for v in level.tiles[x, y])
            if (x, y) == level.agent_start:
                row.append("A")
            elif obj == DOOR:
                row.append({OPEN: "/", CLOSED: "d", LOCKED: "D"}[st])
            elif obj == KEY:
                row.append("k")
            else:
                row.append(_GLYPHS.get(obj, "?"))
        lines.append("".join(row))
    return "\n".join(lines)


# -------------------------------------------------------------- generation


def empty_tiles(n: int) -> np.ndarray:
    tiles = np.zeros((n, n, 3), dtype=np.uint8)
    tiles[:, :, 0] = EMPTY
    tiles[0, :, 0] = tiles[-1, :, 0] = WALL
    tiles[:, 0, 0] = tiles[:, -1, 0] = WALL
    return tiles


def default_max_steps(n: int) -> int:
    return 10 * n * n


def empty_room(n: int, start=(1, 1), goal=None, agent_dir: int = 0, max_steps: int | None = None) -> GridLevel:
    tiles = empty_tiles(n)
    goal = goal or (n - 2, n - 2)
    tiles[goal] = (GOAL, 0, 0)
    return GridLevel(n, tiles, start, agent_dir, goal, max_steps or default_max_steps(n))


def generate_grid_level(
    rng: np.random.Generator,
    size: int,
    num_doors: int,
    max_steps: int | None = None,
    max_attempts: int = 1000,
    palette: tuple[int, ...] = tuple(range(6)),
) -> GridLevel:
    """Structured layout: vertical partitions with one door each, keys in earlier chambers.

    The agent starts in the first chamber and the goal sits in the last one.
    Layouts are redrawn until ``check_solvable`` accepts one.
    """
    num_doors = min(num_doors, MAX_DOORS)
    interior = size - 2
    if num_doors and interior < 2 * num_doors + 1:
        raise GenerationError(f"size {size} cannot host {num_doors} partitions")
    for _ in range(max_attempts):
        tiles = empty_tiles(size)
        # partitions at least two apart, none adjacent to the perimeter
        slots = np.arange(2, size - 2 - (num_doors - 1)) if num_doors else np.arange(0)
        walls = [int(w) + i for i, w in enumerate(sorted(rng.choice(slots, size=num_doors, replace=False)))]
        bounds = [1, *walls, size - 1]
        colors = rng.permutation(palette)[:num_doors].tolist() if len(palette) >= num_doors else None
        if colors is None:
            colors = [palette[i % len(palette)] for i in range(num_doors)]
        for i, wx in enumerate(walls):
            tiles[wx, 1:-1] = (WALL, 0, 0)
            dy = int(rng.integers(1, size - 1))
            tiles[wx, dy] = (DOOR, colors[i], LOCKED)
        for i in range(num_doors):
            chamber = int(rng.integers(0, i + 1))
            lo, hi = bounds[chamber] + (1 if chamber else 0), bounds[chamber + 1]
            cells = [(x, y) for x in range(lo, hi) for y in range(1, size - 1) if tiles[x, y, 0] == EMPTY]
            if not cells:
                break
            kx, ky = cells[int(rng.integers(len(cells)))]
            tiles[kx, ky] = (KEY, colors[i], 0)
        else:
            first = [(x, y) for x in range(1, bounds[1]) for y in range(1, size - 1) if tiles[x, y, 0] == EMPTY]
            last_lo = bounds[-2] + (1 if num_doors else 0)
            last = [(x, y) for x in range(last_lo, size - 1) for y in range(1, size - 1) if tiles[x, y, 0] == EMPTY]
            if not first or not last:
                continue
            start = first[int(rng.integers(len(first)))]
            goal_choices = [c for c in last if c != start]
            if not goal_choices:
                continue
            goal = goal_choices[int(rng.integers(len(goal_choices)))]
            tiles[goal] = (GOAL, 0, 0)
            level = GridLevel(size, tiles, start, int(rng.integers(4)), goal, max_steps or default_max_steps(size))
            if check_solvable(level):
                return level
    raise GenerationError(f"no solvable {size}x{size} layout with {num_doors} doors after {max_attempts} attempts")


def random_grid_layout(rng: np.random.Generator, size: int, max_doors: int = 2, wall_prob: float = 0.25) -> GridLevel:
    """Unstructured well-formed layout; may or may not be solvable. Used for oracle cross-checks."""
    while True:
        tiles = empty_tiles(size)
        cells = [(x, y) for x in range(1, size - 1) for y in range(1, size - 1)]
        order = rng.permutation(len(cells))
        cells = [cells[i] for i in order]
        start, goal = cells[0], cells[1]
        rest = cells[2:]
        tiles[goal] = (GOAL, 0, 0)
        n_doors = int(rng.integers(0, max_doors + 1))
        idx = 0
        for _ in range(n_doors):
            if idx + 1 >= len(rest):
                break
            color = int(rng.integers(0, 3))
            state = int(rng.choice([CLOSED, LOCKED, LOCKED]))
            tiles[rest[idx]] = (DOOR, color, state)
            tiles[rest[idx + 1]] = (KEY, color, 0)
            idx += 2
        for c in rest[idx:]:
            if rng.random() < wall_prob:
                tiles[c] = (WALL, 0, 0)
        try:
            return GridLevel(size, tiles, start, int(rng.integers(4)), goal, default_max_steps(size))
        except MalformedLevel:
            continue
