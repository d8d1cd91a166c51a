from __future__ import annotations

import textwrap

import numpy as np
import pytest

from coevo import gridworld as gw
from coevo import nav2d as nv
from coevo.level import make_level
from coevo.policies import external


def corridor_level(locked: bool = True, color: int = 2, size: int = 7) -> gw.GridLevel:
    """Two rooms split by a wall at x=3 with a single door at (3, 3); key on the start side."""
    tiles = gw.empty_tiles(size)
    for y in range(1, size - 1):
        tiles[3, y] = (gw.WALL, 0, 0)
    tiles[3, 3] = (gw.DOOR, color, gw.LOCKED if locked else gw.CLOSED)
    if locked:
        tiles[1, 4] = (gw.KEY, color, 0)
    goal = (size - 2, size - 2)
    tiles[goal] = (gw.GOAL, 0, 0)
    return gw.GridLevel(size, tiles, (1, 1), 0, goal, gw.default_max_steps(size))


def open_arena(W=400.0, H=300.0, goal=(330.0, 152.5, 60.0, 60.0), start=(52.5, 152.5), obstacles=(), **kw):
    return nv.NavLevel((W, H), start, nv.Rect(*goal), tuple(obstacles), **kw)


def wall_with_gap(gap: float, W=400.0, H=300.0, thickness=20.0, cy: float = 152.5) -> nv.NavLevel:
    """Vertical wall at x=200 with one opening of width ``gap`` centred at ``cy``.

    The default centre sits on a row of the 5 px occupancy lattice.
    """
    top_h = cy - gap / 2
    bot_y0 = cy + gap / 2
    obstacles = []
    if top_h > 0:
        obstacles.append(nv.Rect.from_corners(200 - thickness / 2, 0, 200 + thickness / 2, top_h))
    if bot_y0 < H:
        obstacles.append(nv.Rect.from_corners(200 - thickness / 2, bot_y0, 200 + thickness / 2, H))
    return open_arena(W, H, obstacles=obstacles, max_steps=1000)



def ext(policy_id: str, family: str, source: str, timeout_ms: int = 1000):
    return external(policy_id, family, textwrap.dedent(source), step_timeout_ms=timeout_ms)


@pytest.fixture
def empty5():
    return make_level("empty5", (gw.empty_room(5, goal=(3, 3)),))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)




def follow_lattice(level: nv.NavLevel) -> bool:
    """Scripted follower of the inflated-grid distance field; True on success."""
    geom = nv.geometry_of(level)
    s = nv.nav_reset(level)
    while not s.terminated:
        s = nv.nav_step(s, level, nv.grid_controller_action(geom, s.pos, level.speed))
    return s.outcome == "goal"
