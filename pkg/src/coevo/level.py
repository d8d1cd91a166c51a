"""Environment families and the certified ``Level`` wrapper stored in archives."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from . import gridworld as gw
from . import nav2d as nv
from .errors import FamilyMismatch, MalformedLevel

GRID = "gridworld"
NAV = "nav2d"
FAMILY_NAMES = (GRID, NAV)


class GridFamily:
    name = GRID
    layout_type = gw.GridLevel

    reset = staticmethod(gw.grid_reset)

    @staticmethod
    def step(state, layout, action):
        return gw.grid_step(state, action)

    @staticmethod
    def observe(state, layout):
        return gw.grid_observe(state)

    @staticmethod
    def message(obs) -> dict:
        return obs.to_message()

    @staticmethod
    def noop_action():
        return gw.DROP

    @staticmethod
    def parse_action(raw):
        """Strict decoding of an external action; None if malformed."""
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            return None
        if isinstance(raw, float) and (not math.isfinite(raw) or raw != int(raw)):
            return None
        a = int(raw)
        return a if 0 <= a <= 5 else None

    @staticmethod
    def shaped(success: bool, steps: int, layout) -> float:
        return gw.shaped_score(success, steps, layout.max_steps)

    @staticmethod
    def certify(layout) -> dict:
        if not gw.check_solvable(layout):
            raise MalformedLevel("grid layout is not solvable")
        return {"oracle": "check_solvable", "result": True}

    to_dict = staticmethod(gw.grid_level_to_dict)
    from_dict = staticmethod(gw.grid_level_from_dict)

    @staticmethod
    def task(layout) -> dict:
        return {"size": layout.size, "max_steps": layout.max_steps}

    @staticmethod
    def task_description(layout) -> str:
        return (
            f"Fully observable {layout.size}x{layout.size} key-door maze. Reach the goal tile (object 8) "
            f"within {layout.max_steps} steps. Tiles are (object, color, state) triples indexed [x][y]. "
            "Actions: 0 turn left, 1 turn right, 2 forward, 3 pick up, 4 drop, 5 toggle. "
            "Locked doors (state 2) open when toggled while carrying the key of the same color; "
            "closed doors (state 1) open when toggled. The agent carries at most one key."
        )

    @staticmethod
    def observation_spec(layout) -> dict:
        n = layout.size
        return {
            "image": f"int array [{n}][{n}][3] of (object_idx, color_idx, state), indexed [x][y]",
            "flat": f"{n * n * 3} floats, image normalized by (10, 5, 2)",
            "agent_pos": "[x, y]",
            "agent_dir": "0=+x, 1=+y, 2=-x, 3=-y",
            "carrying": "color index of the carried key, -1 if none",
        }

    @staticmethod
    def action_spec(layout) -> dict:
        return {"type": "discrete", "n": 6}


class NavFamily:
    name = NAV
    layout_type = nv.NavLevel

    reset = staticmethod(nv.nav_reset)
    step = staticmethod(nv.nav_step)
    observe = staticmethod(nv.nav_observe)

    @staticmethod
    def message(obs) -> dict:
        return obs

    @staticmethod
    def noop_action():
        return (0.0, 0.0)

    @staticmethod
    def parse_action(raw):
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            return None
        out = []
        for v in raw:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                return None
            if not -1.0 <= v <= 1.0:
                return None
            out.append(float(v))
        return tuple(out)

    @staticmethod
    def shaped(success: bool, steps: int, layout) -> float:
        return nv.shaped_return(success, steps)

    @staticmethod
    def certify(layout) -> dict:
        problems = nv.structural_violations(layout)
        if problems:
            raise MalformedLevel("; ".join(problems))
        if not nv.reachable(layout):
            raise MalformedLevel("navigation layout is not reachable within its horizon")
        return {"oracle": "reachable", "result": True, "planned_steps": nv.planned_steps(layout)}

    to_dict = staticmethod(nv.nav_level_to_dict)
    from_dict = staticmethod(nv.nav_level_from_dict)

    @staticmethod
    def task(layout) -> dict:
        return {"speed": layout.speed, "max_steps": layout.max_steps}

    @staticmethod
    def task_description(layout) -> str:
        W, H = layout.bounds
        return (
            f"Move a circular agent (radius {layout.agent_radius:g} px) in a {W:g}x{H:g} px arena until its "
            f"whole body lies inside the goal zone, within {layout.max_steps} steps. "
            f"Action: continuous [dx, dy] in [-1, 1]^2, displacement speed*[dx, dy] with speed {layout.speed:g} px. "
            "Moves that would overlap an obstacle or leave the arena are rejected and the agent stays put."
        )

    @staticmethod
    def observation_spec(layout) -> dict:
        return {
            "agent_pos": "[x, y] pixels",
            "agent_radius": "pixels",
            "objects": "list of {type: zone|obstacle, pos: [cx, cy], size: [w, h], purpose?: goal}",
            "bounds": "[W, H]",
            "step_count": "steps elapsed",
            "max_steps": "step limit",
        }

    @staticmethod
    def action_spec(layout) -> dict:
        return {"type": "continuous", "shape": [2], "low": -1.0, "high": 1.0}


FAMILIES = {GRID: GridFamily, NAV: NavFamily}


def family_of(name: str):
    try:
        return FAMILIES[name]
    except KeyError:
        raise FamilyMismatch(f"unknown family {name!r}; expected one of {FAMILY_NAMES}") from None


def family_of_layout(layout) -> str:
    if isinstance(layout, gw.GridLevel):
        return GRID
    if isinstance(layout, nv.NavLevel):
        return NAV
    raise FamilyMismatch(f"not a level layout: {type(layout).__name__}")


@dataclass(frozen=True)
class Level:
    """A certified environment: one or more layouts plus provenance.

    An episode's seed picks the layout, so a multi-layout level behaves like a
    generator with a fixed finite set of instances.
    """

    id: str
    family: str
    layouts: tuple
    certificate: dict = field(default_factory=dict, compare=False, hash=False)
    parent: str | None = None
    mutation: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "layouts", tuple(self.layouts))
        if not self.layouts:
            raise MalformedLevel("a level needs at least one layout")
        fam = family_of(self.family)
        for lay in self.layouts:
            if not isinstance(lay, fam.layout_type):
                raise FamilyMismatch(f"layout {type(lay).__name__} does not belong to family {self.family}")

    @property
    def layout(self):
        return self.layouts[0]

    def layout_for_seed(self, seed: int):
        return self.layouts[seed % len(self.layouts)]

    def renamed(self, new_id: str) -> "Level":
        return Level(new_id, self.family, self.layouts, self.certificate, self.parent, self.mutation)


def make_level(level_id: str, layouts, parent=None, mutation=None, family: str | None = None) -> Level:
    """Build a level after running the family's feasibility oracle on every layout."""
    layouts = tuple(layouts) if isinstance(layouts, (list, tuple)) else (layouts,)
    family = family or family_of_layout(layouts[0])
    fam = family_of(family)
    certs = [fam.certify(lay) for lay in layouts]
    cert = dict(certs[0]) if len(certs) == 1 else {"oracle": certs[0]["oracle"], "result": True, "layouts": len(certs)}
    return Level(level_id, family, layouts, cert, parent, mutation)


def level_to_dict(level: Level) -> dict:
    fam = family_of(level.family)
    return {
        "id": level.id,
        "family": level.family,
        "parent": level.parent,
        "mutation": level.mutation,
        "certificate": level.certificate,
        "layouts": [fam.to_dict(lay) for lay in level.layouts],
    }


def level_from_dict(doc: dict, verify: bool = True) -> Level:
    try:
        fam = family_of(doc["family"])
        layouts = tuple(fam.from_dict(d) for d in doc["layouts"])
        if verify:
            return make_level(doc["id"], layouts, doc.get("parent"), doc.get("mutation"), doc["family"])
        return Level(doc["id"], doc["family"], layouts, doc.get("certificate", {}), doc.get("parent"), doc.get("mutation"))
    except KeyError as exc:
        raise MalformedLevel(f"level document missing field {exc}") from None


def dumps_level(level: Level) -> str:
    return json.dumps(level_to_dict(level), sort_keys=True)


def loads_level(text: str, verify: bool = True) -> Level:
    return level_from_dict(json.loads(text), verify=verify)
