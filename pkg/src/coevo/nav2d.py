"""Continuous 2-D navigation: a circular agent among axis-aligned rectangles.

Reachability discretizes the arena at ``agent_radius / 3`` and blocks every
cell whose center sits within ``agent_radius + clearance`` of an obstacle or a
wall. The small clearance (``radius / 60``) guarantees that the straight move
between two adjacent free cell centers never clips an inflated rounded corner,
so a controller that hops from center to center is collision-free.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import GenerationError, MalformedLevel

AGENT_RADIUS = 15.0
GOAL_MARGIN = 10.0
LATTICE_TOL = 1e-6


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle given by center and size."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.w, self.h)):
            raise MalformedLevel("rectangle fields must be finite")
        if self.w <= 0 or self.h <= 0:
            raise MalformedLevel(f"rectangle size must be positive, got {self.w}x{self.h}")

    @classmethod
    def from_corners(cls, x0, y0, x1, y1) -> "Rect":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2

    @property
    def x1(self) -> float:
        return self.cx + self.w / 2

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2

    @property
    def y1(self) -> float:
        return self.cy + self.h / 2

    def inflate(self, d: float) -> "Rect":
        return Rect(self.cx, self.cy, self.w + 2 * d, self.h + 2 * d)

    def intersects(self, other: "Rect") -> bool:
        """Open-interior overlap; shared edges do not count."""
        return self.x0 < other.x1 and other.x0 < self.x1 and self.y0 < other.y1 and other.y0 < self.y1

    def to_dict(self) -> dict:
        return {"pos": [self.cx, self.cy], "size": [self.w, self.h]}

    @classmethod
    def from_dict(cls, d: dict) -> "Rect":
        return cls(d["pos"][0], d["pos"][1], d["size"][0], d["size"][1])


def point_rect_distance(p, rect: Rect) -> float:
    qx = min(max(p[0], rect.x0), rect.x1)
    qy = min(max(p[1], rect.y0), rect.y1)
    return math.hypot(p[0] - qx, p[1] - qy)


def circle_rect_collision(center, radius: float, rect: Rect) -> bool:
    """True iff the open disc meets the rectangle; tangency is not a collision."""
    return point_rect_distance(center, rect) < radius


def _point_segment_distance(p, a, b) -> float:
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    L2 = dx * dx + dy * dy
    t = 0.0 if L2 == 0 else max(0.0, min(1.0, ((p[0] - ax) * dx + (p[1] - ay) * dy) / L2))
    return math.hypot(p[0] - (ax + t * dx), p[1] - (ay + t * dy))


def _segments_cross(a, b, c, d) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    o1, o2, o3, o4 = orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b)
    return (o1 * o2 < 0) and (o3 * o4 < 0)


def segment_rect_distance(a, b, rect: Rect) -> float:
    """Exact distance between segment ab and a closed rectangle."""
    if point_rect_distance(a, rect) == 0 or point_rect_distance(b, rect) == 0:
        return 0.0
    corners = [(rect.x0, rect.y0), (rect.x1, rect.y0), (rect.x1, rect.y1), (rect.x0, rect.y1)]
    edges = list(zip(corners, corners[1:] + corners[:1]))
    if any(_segments_cross(a, b, c, d) for c, d in edges):
        return 0.0
    best = min(point_rect_distance(a, rect), point_rect_distance(b, rect))
    for c in corners:
        best = min(best, _point_segment_distance(c, a, b))
    return best


@dataclass(frozen=True)
class NavLevel:
    bounds: tuple[float, float]
    agent_start: tuple[float, float]
    goal_zone: Rect
    obstacles: tuple[Rect, ...] = ()
    speed: float = 5.0
    max_steps: int = 400
    min_start_goal_distance: float = 0.0
    agent_radius: float = AGENT_RADIUS

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(float(v) for v in self.bounds))
        object.__setattr__(self, "agent_start", tuple(float(v) for v in self.agent_start))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        validate_nav_level(self)

    @property
    def num_obstacles(self) -> int:
        return len(self.obstacles)


def validate_nav_level(level: NavLevel) -> None:
    W, H = level.bounds
    r = level.agent_radius
    vals = (W, H, *level.agent_start, level.speed, r, level.min_start_goal_distance)
    if not all(math.isfinite(v) for v in vals):
        raise MalformedLevel("navigation level fields must be finite")
    if W <= 0 or H <= 0 or r <= 0 or level.speed <= 0 or level.max_steps < 1:
        raise MalformedLevel("bounds, radius, speed and max_steps must be positive")
    for rect in (level.goal_zone, *level.obstacles):
        if rect.x0 < 0 or rect.y0 < 0 or rect.x1 > W or rect.y1 > H:
            raise MalformedLevel(f"{rect} lies outside the {W}x{H} arena")
    if not in_bounds(level.agent_start, r, level.bounds):
        raise MalformedLevel("agent start circle leaves the arena")
    if any(circle_rect_collision(level.agent_start, r, o) for o in level.obstacles):
        raise MalformedLevel("agent start collides with an obstacle")


def in_bounds(center, radius, bounds) -> bool:
    x, y = center
    return radius <= x <= bounds[0] - radius and radius <= y <= bounds[1] - radius


def circle_in_rect(center, radius, rect: Rect) -> bool:
    x, y = center
    return rect.x0 <= x - radius and x + radius <= rect.x1 and rect.y0 <= y - radius and y + radius <= rect.y1


def structural_violations(level: NavLevel) -> list[str]:
    """Placement rules every archived level must satisfy (besides reachability)."""
    r = level.agent_radius
    out = []
    g = level.goal_zone
    if min(g.w, g.h) < 2 * r + GOAL_MARGIN:
        out.append(f"goal zone {g.w}x{g.h} smaller than 2*radius + {GOAL_MARGIN}")
    for i, o in enumerate(level.obstacles):
        if o.intersects(g):
            out.append(f"obstacle {i} overlaps the goal zone")
        for j, p in enumerate(level.obstacles[:i]):
            if o.inflate(r).intersects(p) or p.inflate(r).intersects(o):
                out.append(f"obstacles {j} and {i} violate the inflated spacing rule")
    d = math.dist(level.agent_start, (g.cx, g.cy))
    if d < level.min_start_goal_distance:
        out.append(f"start-goal distance {d:.1f} below {level.min_start_goal_distance}")
    return out


# ------------------------------------------------------------------ dynamics


@dataclass(frozen=True)
class NavState:
    pos: tuple[float, float]
    steps: int = 0
    outcome: str | None = None

    @property
    def terminated(self) -> bool:
        return self.outcome is not None


def nav_reset(level: NavLevel) -> NavState:
    return NavState(level.agent_start)


def clamp_action(action) -> tuple[float, float]:
    try:
        dx, dy = (float(v) for v in action)
    except (TypeError, ValueError):
        return 0.0, 0.0
    dx = 0.0 if not math.isfinite(dx) else min(1.0, max(-1.0, dx))
    dy = 0.0 if not math.isfinite(dy) else min(1.0, max(-1.0, dy))
    return dx, dy


def position_valid(level: NavLevel, pos) -> bool:
    r = level.agent_radius
    return in_bounds(pos, r, level.bounds) and not any(circle_rect_collision(pos, r, o) for o in level.obstacles)


def goal_reached(state: NavState, level: NavLevel) -> bool:
    return circle_in_rect(state.pos, level.agent_radius, level.goal_zone)


def nav_step(state: NavState, level: NavLevel, action) -> NavState:
    """Move by ``speed * clamp(action)`` unless the destination is invalid."""
    if state.terminated:
        raise ValueError("episode already terminated")
    dx, dy = clamp_action(action)
    proposal = (state.pos[0] + level.speed * dx, state.pos[1] + level.speed * dy)
    pos = proposal if position_valid(level, proposal) else state.pos
    steps = state.steps + 1
    nxt = NavState(pos, steps)
    if goal_reached(nxt, level):
        return NavState(pos, steps, "goal")
    if steps >= level.max_steps:
        return NavState(pos, steps, "timeout")
    return nxt


def shaped_return(success: bool, steps: int) -> float:
    """Sparse return with a per-step penalty: +1 on success, -0.01 per other step."""
    return (1.0 - 0.01 * (steps - 1)) if success else -0.01 * steps


# -------------------------------------------------------------- observation


def nav_observe(state: NavState, level: NavLevel) -> dict:
    g = level.goal_zone
    objects = [{"type": "zone", "pos": [g.cx, g.cy], "size": [g.w, g.h], "purpose": "goal"}]
    for o in level.obstacles:
        objects.append({"type": "obstacle", "shape": "rect", "pos": [o.cx, o.cy], "size": [o.w, o.h]})
    return {
        "agent_pos": [state.pos[0], state.pos[1]],
        "agent_radius": level.agent_radius,
        "objects": objects,
        "bounds": [level.bounds[0], level.bounds[1]],
        "step_count": state.steps,
        "max_steps": level.max_steps,
    }


def geometry_from_obs(obs: dict) -> tuple:
    """Hashable description of the static scene in an observation."""
    goal = None
    obstacles = []
    for o in obs["objects"]:
        rect = (float(o["pos"][0]), float(o["pos"][1]), float(o["size"][0]), float(o["size"][1]))
        if o.get("purpose") == "goal":
            goal = rect
        elif o.get("type") == "obstacle":
            obstacles.append(rect)
    if goal is None:
        raise MalformedLevel("observation has no goal zone")
    return (tuple(float(v) for v in obs["bounds"]), float(obs["agent_radius"]), goal, tuple(obstacles))


def geometry_of(level: NavLevel) -> tuple:
    g = level.goal_zone
    return (
        level.bounds,
        level.agent_radius,
        (g.cx, g.cy, g.w, g.h),
        tuple((o.cx, o.cy, o.w, o.h) for o in level.obstacles),
    )


# -------------------------------------------------------------- occupancy


@dataclass(frozen=True)
class Occupancy:
    cell: float
    free: np.ndarray = field(repr=False)  # [ix, iy]
    target: np.ndarray = field(repr=False)
    dist: np.ndarray = field(repr=False)  # BFS cell distance to nearest target, -1 unreachable

    def center(self, ix: int, iy: int) -> tuple[float, float]:
        return ((ix + 0.5) * self.cell, (iy + 0.5) * self.cell)

    def cell_of(self, p) -> tuple[int, int]:
        nx, ny = self.free.shape
        return (min(nx - 1, max(0, int(p[0] // self.cell))), min(ny - 1, max(0, int(p[1] // self.cell))))


_NEIGHBORS = ((1, 0), (0, 1), (-1, 0), (0, -1))


@lru_cache(maxsize=256)
def occupancy(geometry: tuple) -> Occupancy:
    (W, H), r, goal, obstacles = geometry
    cell = r / 3.0
    clearance = r / 60.0
    nx, ny = int(W // cell), int(H // cell)
    xs = (np.arange(nx) + 0.5) * cell
    ys = (np.arange(ny) + 0.5) * cell
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    need = r + clearance
    free = (X >= need) & (X <= W - need) & (Y >= need) & (Y <= H - need)
    for cx, cy, w, h in obstacles:
        qx = np.clip(X, cx - w / 2, cx + w / 2)
        qy = np.clip(Y, cy - h / 2, cy + h / 2)
        free &= np.hypot(X - qx, Y - qy) >= need
    gx, gy, gw, gh = goal
    inset = r + LATTICE_TOL
    target = free & (X - inset >= gx - gw / 2) & (X + inset <= gx + gw / 2)
    target &= (Y - inset >= gy - gh / 2) & (Y + inset <= gy + gh / 2)
    dist = np.full((nx, ny), -1, dtype=np.int64)
    queue = deque()
    for ix, iy in zip(*np.nonzero(target)):
        dist[ix, iy] = 0
        queue.append((int(ix), int(iy)))
    while queue:
        ix, iy = queue.popleft()
        d = dist[ix, iy] + 1
        for dx, dy in _NEIGHBORS:
            jx, jy = ix + dx, iy + dy
            if 0 <= jx < nx and 0 <= jy < ny and free[jx, jy] and dist[jx, jy] < 0:
                dist[jx, jy] = d
                queue.append((jx, jy))
    for a in (free, target, dist):
        a.flags.writeable = False
    return Occupancy(cell, free, target, dist)


def _steps_for(length: float, speed: float) -> int:
    return max(0, math.ceil(length / speed - 1e-9))


def start_entry(level: NavLevel, occ: Occupancy | None = None):
    """Cell the controller enters from the start, or None if that entry is unsafe."""
    occ = occ or occupancy(geometry_of(level))
    ix, iy = occ.cell_of(level.agent_start)
    if not occ.free[ix, iy] or occ.dist[ix, iy] < 0:
        return None
    c = occ.center(ix, iy)
    r = level.agent_radius
    if not (in_bounds(level.agent_start, r, level.bounds) and in_bounds(c, r, level.bounds)):
        return None
    if any(segment_rect_distance(level.agent_start, c, o) < r for o in level.obstacles):
        return None
    return ix, iy


def planned_steps(level: NavLevel) -> int | None:
    """Upper bound on the grid controller's episode length, None if unreachable."""
    occ = occupancy(geometry_of(level))
    entry = start_entry(level, occ)
    if entry is None:
        return None
    c = occ.center(*entry)
    return _steps_for(math.dist(level.agent_start, c), level.speed) + int(occ.dist[entry]) * _steps_for(
        occ.cell, level.speed
    )


def reachable(level: NavLevel) -> bool:
    """Inflated-grid reachability within the level's step horizon."""
    if not position_valid(level, level.agent_start):
        return False
    steps = planned_steps(level)
    return steps is not None and steps + 1 <= level.max_steps


# --------------------------------------------------------------- controller


def _toward(pos, target, speed) -> tuple[float, float]:
    dx, dy = target[0] - pos[0], target[1] - pos[1]
    d = math.hypot(dx, dy)
    if d == 0:
        return 0.0, 0.0
    scale = max(d, speed)
    return dx / scale, dy / scale


def grid_controller_action(geometry: tuple, pos, speed: float) -> tuple[float, float]:
    """Follow the BFS distance field over the inflated occupancy grid.

    On the lattice (at a free cell center or on the segment between two
    adjacent free centers) the controller heads for the adjacent center with
    the smaller distance-to-goal; off the lattice it returns to the center of
    the cell containing it.
    """
    occ = occupancy(geometry)
    nx, ny = occ.free.shape
    ix, iy = occ.cell_of(pos)
    best = None
    for jx in range(ix - 1, ix + 2):
        for jy in range(iy - 1, iy + 2):
            if not (0 <= jx < nx and 0 <= jy < ny) or occ.dist[jx, jy] < 0:
                continue
            c = occ.center(jx, jy)
            if math.dist(c, pos) <= LATTICE_TOL:
                here = (jx, jy)
                for dx, dy in _NEIGHBORS:
                    kx, ky = jx + dx, jy + dy
                    if 0 <= kx < nx and 0 <= ky < ny and 0 <= occ.dist[kx, ky] < occ.dist[here]:
                        return _toward(pos, occ.center(kx, ky), speed)
                return _toward(pos, c, speed)
            aligned = abs(c[0] - pos[0]) <= LATTICE_TOL or abs(c[1] - pos[1]) <= LATTICE_TOL
            if aligned and math.dist(c, pos) <= occ.cell + LATTICE_TOL:
                if best is None or occ.dist[jx, jy] < occ.dist[best]:
                    best = (jx, jy)
    if best is not None:
        # the pair must be adjacent free centers bracketing pos
        bx, by = occ.center(*best)
        for dx, dy in _NEIGHBORS:
            ox, oy = best[0] + dx, best[1] + dy
            if 0 <= ox < nx and 0 <= oy < ny and occ.dist[ox, oy] >= 0:
                o = occ.center(ox, oy)
                if abs(math.dist(o, pos) + math.dist(pos, (bx, by)) - occ.cell) <= 1e-6:
                    return _toward(pos, (bx, by), speed)
    return _toward(pos, occ.center(ix, iy), speed)


# ------------------------------------------------------------ serialization

NAV_FIELDS = (
    "bounds",
    "agent_radius",
    "agent_start",
    "goal_zone",
    "obstacles",
    "speed",
    "max_steps",
    "min_start_goal_distance",
)


def nav_level_to_dict(level: NavLevel) -> dict:
    return {
        "bounds": list(level.bounds),
        "agent_radius": level.agent_radius,
        "agent_start": list(level.agent_start),
        "goal_zone": level.goal_zone.to_dict(),
        "obstacles": [o.to_dict() for o in level.obstacles],
        "speed": level.speed,
        "max_steps": level.max_steps,
        "min_start_goal_distance": level.min_start_goal_distance,
    }


def nav_level_from_dict(doc: dict) -> NavLevel:
    missing = [f for f in NAV_FIELDS if f not in doc]
    if missing:
        raise MalformedLevel(f"navigation level document missing fields {missing}")
    try:
        return NavLevel(
            bounds=tuple(doc["bounds"]),
            agent_radius=float(doc["agent_radius"]),
            agent_start=tuple(doc["agent_start"]),
            goal_zone=Rect.from_dict(doc["goal_zone"]),
            obstacles=tuple(Rect.from_dict(o) for o in doc["obstacles"]),
            speed=float(doc["speed"]),
            max_steps=int(doc["max_steps"]),
            min_start_goal_distance=float(doc["min_start_goal_distance"]),
        )
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise MalformedLevel(f"bad navigation level document: {exc}") from None


def dumps_nav_level(level: NavLevel) -> str:
    return json.dumps(nav_level_to_dict(level))


def loads_nav_level(text: str) -> NavLevel:
    return nav_level_from_dict(json.loads(text))


# --------------------------------------------------------------- generation


def default_nav_max_steps(W: float, H: float, speed: float, radius: float = AGENT_RADIUS) -> int:
    cell = radius / 3.0
    return int(math.ceil(3.0 * (W + H) / cell * max(1, _steps_for(cell, speed)))) + 20


def _sample_free_point(rng, level_like, r, bounds, obstacles, tries=200):
    W, H = bounds
    for _ in range(tries):
        p = (float(rng.uniform(r, W - r)), float(rng.uniform(r, H - r)))
        if not any(circle_rect_collision(p, r, o) for o in obstacles):
            return p
    return None


def try_add_obstacle(rng, level: NavLevel, min_size=20.0, max_size=120.0, tries=100) -> NavLevel | None:
    """Place one more rectangle under the inflated spacing rule, or None."""
    r = level.agent_radius
    W, H = level.bounds
    for _ in range(tries):
        w = float(rng.uniform(min_size, max_size))
        h = float(rng.uniform(min_size, max_size))
        if w >= W or h >= H:
            continue
        cx = float(rng.uniform(w / 2, W - w / 2))
        cy = float(rng.uniform(h / 2, H - h / 2))
        rect = Rect(round(cx, 1), round(cy, 1), round(w, 1), round(h, 1))
        if rect.x0 < 0 or rect.y0 < 0 or rect.x1 > W or rect.y1 > H:
            continue
        if rect.inflate(r).intersects(level.goal_zone):
            continue
        if any(rect.inflate(r).intersects(o) for o in level.obstacles):
            continue
        if circle_rect_collision(level.agent_start, r, rect):
            continue
        return NavLevel(
            level.bounds, level.agent_start, level.goal_zone, level.obstacles + (rect,),
            level.speed, level.max_steps, level.min_start_goal_distance, level.agent_radius,
        )
    return None


def generate_nav_level(
    rng: np.random.Generator,
    bounds=(400.0, 300.0),
    n_obstacles: int = 3,
    speed: float = 5.0,
    min_start_goal_distance: float = 100.0,
    max_steps: int | None = None,
    radius: float = AGENT_RADIUS,
    max_attempts: int = 1000,
) -> NavLevel:
    W, H = (float(v) for v in bounds)
    max_steps = max_steps or default_nav_max_steps(W, H, speed, radius)
    for _ in range(max_attempts):
        gw = float(rng.uniform(2 * radius + GOAL_MARGIN, 2 * radius + GOAL_MARGIN + 30))
        gh = float(rng.uniform(2 * radius + GOAL_MARGIN, 2 * radius + GOAL_MARGIN + 30))
        if gw > W or gh > H:
            raise GenerationError("arena too small for a goal zone")
        goal = Rect(round(float(rng.uniform(gw / 2, W - gw / 2)), 1), round(float(rng.uniform(gh / 2, H - gh / 2)), 1),
                    round(gw, 1), round(gh, 1))
        if goal.x0 < 0 or goal.y0 < 0 or goal.x1 > W or goal.y1 > H:
            continue
        start = None
        for _ in range(200):
            p = (round(float(rng.uniform(radius, W - radius)), 1), round(float(rng.uniform(radius, H - radius)), 1))
            if math.dist(p, (goal.cx, goal.cy)) >= min_start_goal_distance and not circle_rect_collision(p, radius, goal):
                start = p
                break
        if start is None:
            continue
        level = NavLevel((W, H), start, goal, (), speed, max_steps, min_start_goal_distance, radius)
        for _ in range(n_obstacles):
            nxt = try_add_obstacle(rng, level)
            if nxt is None:
                break
            level = nxt
        if level.num_obstacles == n_obstacles and not structural_violations(level) and reachable(level):
            return level
    raise GenerationError(f"no feasible navigation level after {max_attempts} attempts")
