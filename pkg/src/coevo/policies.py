"""Policy handles and the deterministic built-in policy programs.

Built-ins stand in for generated policy code: each is a small parametric
program whose parameters are the units the scripted designer mutates.
"""

from __future__ import annotations

import math
import sys
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import gridworld as gw
from . import nav2d as nv
from .errors import FamilyMismatch, MalformedLevel
from .level import GRID, NAV

GRID_PROGRAMS = ("grid_planner", "grid_noop")
NAV_PROGRAMS = ("nav_straight", "nav_greedy", "nav_planner", "nav_noop")
PROGRAM_FAMILY = {**{p: GRID for p in GRID_PROGRAMS}, **{p: NAV for p in NAV_PROGRAMS}}

GRID_DEFAULTS = {
    "doors": True,
    "drop": True,
    "keys": tuple(range(6)),
    "pinned_goal": None,
    "turn_pref": "left",
}
NAV_DEFAULTS = {"n_dirs": 8, "clearance": 0.0, "shortcut": True}

RUNNER_COMMAND = (sys.executable, "-m", "coevo.policy_runner", "{source_path}")


@dataclass(frozen=True)
class BuiltinProgram:
    """A built-in program name plus a frozen parameter map."""

    program: str
    params: tuple = ()

    def __post_init__(self):
        if self.program not in PROGRAM_FAMILY:
            raise ValueError(f"unknown builtin program {self.program!r}")
        items = dict(self.params)
        defaults = GRID_DEFAULTS if self.family == GRID else NAV_DEFAULTS
        unknown = set(items) - set(defaults)
        if unknown:
            raise ValueError(f"unknown parameters {sorted(unknown)} for {self.program}")
        norm = {k: _freeze(items.get(k, v)) for k, v in defaults.items()}
        object.__setattr__(self, "params", tuple(sorted(norm.items())))

    @property
    def family(self) -> str:
        return PROGRAM_FAMILY[self.program]

    def get(self, name: str):
        return dict(self.params)[name]

    def replace(self, program: str | None = None, **changes) -> "BuiltinProgram":
        items = dict(self.params)
        items.update(changes)
        return BuiltinProgram(program or self.program, tuple(items.items()))

    def to_dict(self) -> dict:
        return {"program": self.program, "params": {k: _thaw(v) for k, v in self.params}}

    @classmethod
    def from_dict(cls, d: dict) -> "BuiltinProgram":
        return cls(d["program"], tuple(d.get("params", {}).items()))


def _freeze(v):
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    if isinstance(v, tuple):
        return tuple(_freeze(x) for x in v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _thaw(v):
    return [_thaw(x) for x in v] if isinstance(v, tuple) else v


@dataclass(frozen=True)
class PolicyHandle:
    """A policy in the archive: a built-in program or an external process."""

    id: str
    kind: str
    family: str
    program: BuiltinProgram | None = None
    command: tuple = ()
    step_timeout_ms: int = 1000
    source: str | None = field(default=None, repr=False)
    parent: str | None = None
    mutation: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "command", tuple(self.command))
        if self.kind == "builtin":
            if self.program is None:
                raise ValueError("builtin handle needs a program")
            if self.program.family != self.family:
                raise FamilyMismatch(f"program {self.program.program} is not a {self.family} program")
        elif self.kind == "external":
            if not self.command:
                raise ValueError("external handle needs a launch command")
            if self.source is None:
                raise ValueError("external handle must carry its source artifact")
            if self.step_timeout_ms <= 0:
                raise ValueError("step timeout must be positive")
        else:
            raise ValueError(f"unknown policy kind {self.kind!r}")

    def renamed(self, new_id: str) -> "PolicyHandle":
        return PolicyHandle(
            new_id, self.kind, self.family, self.program, self.command,
            self.step_timeout_ms, self.source, self.parent, self.mutation,
        )

    @property
    def behavior_key(self):
        """Identity of the behaviour, ignoring the id and provenance."""
        return (self.kind, self.family, self.program, self.command, self.source)


def builtin(policy_id: str, program: str, parent=None, mutation=None, **params) -> PolicyHandle:
    prog = BuiltinProgram(program, tuple(params.items()))
    return PolicyHandle(policy_id, "builtin", prog.family, prog, parent=parent, mutation=mutation)


def external(policy_id: str, family: str, source: str, command=RUNNER_COMMAND, step_timeout_ms: int = 1000,
             parent=None, mutation=None) -> PolicyHandle:
    return PolicyHandle(policy_id, "external", family, None, tuple(command), step_timeout_ms, source, parent, mutation)


def bootstrap_policy(family: str, policy_id: str = "bootstrap") -> PolicyHandle:
    """Family default used as the iteration-0 base: no door handling / straight to goal."""
    if family == GRID:
        return builtin(policy_id, "grid_planner", doors=False, drop=False)
    if family == NAV:
        return builtin(policy_id, "nav_straight")
    raise FamilyMismatch(f"unknown family {family!r}")


def policy_to_dict(p: PolicyHandle) -> dict:
    return {
        "id": p.id,
        "kind": p.kind,
        "family": p.family,
        "program": p.program.to_dict() if p.program else None,
        "command": list(p.command),
        "step_timeout_ms": p.step_timeout_ms,
        "source": p.source,
        "parent": p.parent,
        "mutation": p.mutation,
    }


def policy_from_dict(d: dict) -> PolicyHandle:
    return PolicyHandle(
        d["id"], d["kind"], d["family"],
        BuiltinProgram.from_dict(d["program"]) if d.get("program") else None,
        tuple(d.get("command", ())), int(d.get("step_timeout_ms", 1000)), d.get("source"),
        d.get("parent"), d.get("mutation"),
    )


# ================================================================ grid planner


def _passable_grid(tiles: np.ndarray) -> np.ndarray:
    obj, st = tiles[:, :, 0], tiles[:, :, 2]
    return np.isin(obj, (gw.EMPTY, gw.FLOOR, gw.GOAL)) | ((obj == gw.DOOR) & (st == gw.OPEN))


def _flood(free: np.ndarray, start) -> np.ndarray:
    n = free.shape[0]
    seen = np.zeros_like(free)
    seen[start] = True
    q = deque([start])
    while q:
        x, y = q.popleft()
        for dx, dy in gw.DIR_VEC:
            nx, ny = x + dx, y + dy
            if 0 <= nx < n and 0 <= ny < n and free[nx, ny] and not seen[nx, ny]:
                seen[nx, ny] = True
                q.append((nx, ny))
    return seen


def _adjacent_to(region: np.ndarray, cell) -> bool:
    n = region.shape[0]
    x, y = cell
    return any(0 <= x + dx < n and 0 <= y + dy < n and region[x + dx, y + dy] for dx, dy in gw.DIR_VEC)


class _Planner:
    def __init__(self, prog: BuiltinProgram, obs: gw.GridObservation):
        self.tiles = obs.tiles
        self.n = obs.tiles.shape[0]
        self.pos = tuple(obs.agent_pos)
        self.dir = int(obs.agent_dir)
        self.carrying = obs.carrying
        self.doors = prog.get("doors")
        self.drop = prog.get("drop")
        self.keys = set(prog.get("keys"))
        self.pinned = prog.get("pinned_goal")
        left = prog.get("turn_pref") == "left"
        self.order = (gw.FORWARD, gw.TURN_LEFT, gw.TURN_RIGHT) if left else (gw.FORWARD, gw.TURN_RIGHT, gw.TURN_LEFT)
        self.stall = gw.TURN_LEFT if left else gw.TURN_RIGHT
        self.free = _passable_grid(self.tiles)
        self.region = _flood(self.free, self.pos)

    def search(self, accept):
        """First action of a shortest (turn/forward) path to a pose accepted by ``accept``."""
        start = (self.pos, self.dir)
        if accept(*start):
            return "here"
        seen = {start: None}
        q = deque([(start, None)])
        while q:
            (p, d), first = q.popleft()
            for a in self.order:
                if a == gw.FORWARD:
                    dx, dy = gw.DIR_VEC[d]
                    np_ = (p[0] + dx, p[1] + dy)
                    if not self.free[np_]:
                        continue
                    nxt = (np_, d)
                else:
                    nxt = (p, (d - 1) % 4 if a == gw.TURN_LEFT else (d + 1) % 4)
                if nxt in seen:
                    continue
                f = first if first is not None else a
                seen[nxt] = f
                if accept(*nxt):
                    return f
                q.append((nxt, f))
        return None

    def facing(self, cells):
        cells = set(cells)

        def accept(p, d):
            dx, dy = gw.DIR_VEC[d]
            return (p[0] + dx, p[1] + dy) in cells

        return accept

    def interact(self, cells, action):
        a = self.search(self.facing(cells))
        if a == "here":
            return action
        return a

    def goto(self, cell):
        a = self.search(lambda p, d: p == cell)
        return None if a == "here" else a

    def drop_spot(self, keep_adjacent):
        """Pose facing an empty cell where the carried key can be put down.

        Prefers cells whose blocking leaves the region connected; otherwise any
        cell that keeps the still-needed doors and keys reachable from the
        dropping pose.
        """
        verdict = {}

        def ok_drop(p, cell, strict):
            k = (p, cell, strict)
            if k in verdict:
                return verdict[k]
            ok = bool(self.tiles[cell][0] == gw.EMPTY) and cell != p and bool(self.region[cell])
            if ok:
                rest = self.region.copy()
                rest[cell] = False
                reach = _flood(rest, p)
                ok = all(_adjacent_to(reach, c) for c in keep_adjacent)
                if strict:
                    ok = ok and int(reach.sum()) == int(rest.sum())
            verdict[k] = ok
            return ok

        for strict in (True, False):
            def accept(p, d):
                dx, dy = gw.DIR_VEC[d]
                return ok_drop(p, (p[0] + dx, p[1] + dy), strict)

            a = self.search(accept)
            if a is not None:
                return gw.DROP if a == "here" else a
        return None

    def act(self) -> int:
        obj = self.tiles[:, :, 0]
        if self.pinned is not None:
            target = tuple(self.pinned)
        else:
            goals = np.argwhere(obj == gw.GOAL)
            if len(goals) == 0:
                return self.stall
            target = tuple(int(v) for v in goals[0])
        inside = 0 <= target[0] < self.n and 0 <= target[1] < self.n
        if inside and self.region[target]:
            a = self.goto(target)
            return self.stall if a is None else a
        if not self.doors:
            return self.stall
        col, st = self.tiles[:, :, 1], self.tiles[:, :, 2]
        frontier = [
            (int(x), int(y)) for x, y in np.argwhere((obj == gw.DOOR) & (st != gw.OPEN))
            if _adjacent_to(self.region, (int(x), int(y)))
        ]
        for d in frontier:
            if st[d] == gw.CLOSED or (st[d] == gw.LOCKED and self.carrying == int(col[d])):
                a = self.interact([d], gw.TOGGLE)
                if a is not None:
                    return a
        keys = [(int(x), int(y)) for x, y in np.argwhere(obj == gw.KEY) if _adjacent_to(self.region, (int(x), int(y)))]
        for d in frontier:
            c = int(col[d])
            if st[d] != gw.LOCKED or c not in self.keys:
                continue
            cands = [k for k in keys if int(col[k]) == c]
            if not cands:
                continue
            if self.carrying is not None:
                if not self.drop:
                    continue
                a = self.drop_spot([d, *cands])
                if a is not None:
                    return a
                continue
            a = self.interact(cands, gw.PICKUP)
            if a is not None:
                return a
        # a key plugging a corridor: clear it if lifting it reveals new cells
        spare = [k for k in keys if int(col[k]) in self.keys and self._reveals(k)]
        if spare:
            if self.carrying is None:
                a = self.interact(spare, gw.PICKUP)
            else:
                a = self.drop_spot(spare) if self.drop else None
            if a is not None:
                return a
        return self.stall

    def _reveals(self, cell) -> bool:
        """Would lifting the key at ``cell`` expose new cells or a new door?"""
        x, y = cell
        for dx, dy in gw.DIR_VEC:
            c = (x + dx, y + dy)
            if not (0 <= c[0] < self.n and 0 <= c[1] < self.n):
                continue
            if self.free[c] and not self.region[c]:
                return True
            if self.tiles[c][0] == gw.DOOR and self.tiles[c][2] != gw.OPEN and not _adjacent_to(self.region, c):
                return True
        return False


def grid_planner_act(prog: BuiltinProgram, obs: gw.GridObservation) -> int:
    return _Planner(prog, obs).act()


# ================================================================ nav programs


def _goal_of(obs: dict):
    for o in obs["objects"]:
        if o.get("purpose") == "goal":
            return float(o["pos"][0]), float(o["pos"][1])
    raise MalformedLevel("observation has no goal zone")


def _rects(obs: dict):
    return [
        nv.Rect(o["pos"][0], o["pos"][1], o["size"][0], o["size"][1])
        for o in obs["objects"] if o.get("type") == "obstacle"
    ]


def _toward(pos, target, speed):
    return nv._toward(pos, target, speed) if speed else _unit(pos, target)


def _unit(pos, target):
    dx, dy = target[0] - pos[0], target[1] - pos[1]
    d = math.hypot(dx, dy)
    return (0.0, 0.0) if d == 0 else (dx / d, dy / d)


def nav_straight_act(prog: BuiltinProgram, obs: dict, speed: float | None) -> tuple[float, float]:
    return _toward(obs["agent_pos"], _goal_of(obs), speed)


def nav_greedy_act(prog: BuiltinProgram, obs: dict, speed: float | None) -> tuple[float, float]:
    """Score a fan of headings and take the safe one that gets closest to the goal."""
    pos = tuple(obs["agent_pos"])
    goal = _goal_of(obs)
    step = speed or 1.0
    if math.dist(pos, goal) <= step:
        return _toward(pos, goal, speed)
    r = float(obs["agent_radius"]) + float(prog.get("clearance"))
    bounds = obs["bounds"]
    rects = _rects(obs)
    k = int(prog.get("n_dirs"))
    base = math.atan2(goal[1] - pos[1], goal[0] - pos[0])
    best, best_d = (0.0, 0.0), math.inf
    for i in range(k):
        # fan out alternately around the goal heading so ties favour small deviations
        off = ((i + 1) // 2) * (2 * math.pi / k) * (1 if i % 2 else -1)
        ang = base + off
        u = (math.cos(ang), math.sin(ang))
        nxt = (pos[0] + step * u[0], pos[1] + step * u[1])
        if not nv.in_bounds(nxt, r, bounds) or any(nv.circle_rect_collision(nxt, r, o) for o in rects):
            continue
        d = math.dist(nxt, goal)
        if d < best_d - 1e-12:
            best, best_d = u, d
    return best


def _line_clear(obs: dict, a, b) -> bool:
    r = float(obs["agent_radius"])
    if not (nv.in_bounds(a, r, obs["bounds"]) and nv.in_bounds(b, r, obs["bounds"])):
        return False
    return all(nv.segment_rect_distance(a, b, o) >= r for o in _rects(obs))


def nav_planner_act(prog: BuiltinProgram, obs: dict, speed: float | None) -> tuple[float, float]:
    """Head straight for the goal when the line is clear, else follow the inflated-grid field."""
    pos = tuple(float(v) for v in obs["agent_pos"])
    goal = _goal_of(obs)
    if prog.get("shortcut") and _line_clear(obs, pos, goal):
        return _toward(pos, goal, speed)
    return nv.grid_controller_action(nv.geometry_from_obs(obs), pos, speed or 1.0)


# ================================================================ dispatch


_ACT_CACHE: dict = {}
_ACT_CACHE_MAX = 200_000


def _obs_family(obs) -> str:
    if isinstance(obs, gw.GridObservation):
        return GRID
    if isinstance(obs, dict) and "objects" in obs:
        return NAV
    raise FamilyMismatch(f"unrecognized observation type {type(obs).__name__}")


def _obs_key(obs):
    if isinstance(obs, gw.GridObservation):
        return obs.key()
    return (nv.geometry_from_obs(obs), tuple(float(v) for v in obs["agent_pos"]))


def builtin_policy_act(program: BuiltinProgram, observation, task: dict | None = None):
    """Action of a built-in program; a pure function of its inputs (results are memoized)."""
    fam = _obs_family(observation)
    if program.family != fam:
        raise FamilyMismatch(f"{program.program} is a {program.family} program, observation is {fam}")
    speed = (task or {}).get("speed")
    key = (program, _obs_key(observation), speed)
    hit = _ACT_CACHE.get(key)
    if hit is not None:
        return hit
    p = program.program
    if p == "grid_noop":
        a = gw.DROP
    elif p == "grid_planner":
        a = grid_planner_act(program, observation)
    elif p == "nav_noop":
        a = (0.0, 0.0)
    elif p == "nav_straight":
        a = nav_straight_act(program, observation, speed)
    elif p == "nav_greedy":
        a = nav_greedy_act(program, observation, speed)
    else:
        a = nav_planner_act(program, observation, speed)
    if fam == NAV:
        a = nv.clamp_action(a)
    else:
        a = int(a)
    if len(_ACT_CACHE) >= _ACT_CACHE_MAX:
        _ACT_CACHE.clear()
    _ACT_CACHE[key] = a
    return a
