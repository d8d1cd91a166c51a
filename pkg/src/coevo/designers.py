"""Policy and environment designers: propose K one-change mutations, select by payoff.

Scripted mode is a deterministic mutator over built-in program parameters and
level parameter structures. LLM mode fills prompt templates and parses the
reply (a policy program or a level document).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import gridworld as gw
from . import nav2d as nv
from .errors import DimensionMismatch, EmptyCandidates, GenerationError, GenerationExhausted, MalformedLevel
from .level import GRID, NAV, Level, family_of, make_level
from .llm import LLMClient, LLMConfig, LLMError, extract_json_object, extract_policy_source, fill_template, load_template
from .matrix_game import SUPPORT_EPS, GameSolution
from .policies import RUNNER_COMMAND, PolicyHandle, external, policy_to_dict
from .rollout import estimate_payoff
from .seeding import rng_for

GRID_LEVEL_OPS = ("grow", "add_wall", "add_key_door", "relocate_goal")
NAV_LEVEL_OPS = ("add_obstacle", "grow_bounds", "raise_min_distance", "narrow_passage")


@dataclass(frozen=True)
class DesignerConfig:
    mode: str = "scripted"
    K: int = 5
    max_retries: int = 50
    llm: LLMConfig = field(default_factory=LLMConfig)
    # scripted policy designer: put the goal-pinning specialization first among refinements
    specialize: bool = False
    # scripted environment designer
    ops: tuple | None = None
    door_limit: int = gw.MAX_DOORS
    palette: tuple = tuple(range(6))
    max_size: int = 16
    max_obstacles: int = 12
    max_bounds: tuple = (800.0, 600.0)
    step_timeout_ms: int = 1000

    def __post_init__(self):
        if self.mode not in ("scripted", "llm"):
            raise ValueError(f"designer mode must be scripted or llm, got {self.mode!r}")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if not 0 <= self.door_limit <= gw.MAX_DOORS:
            raise ValueError(f"door_limit must lie in 0..{gw.MAX_DOORS}")


@dataclass(frozen=True)
class MutationRecord:
    parent: str
    child: str
    kind: str  # "policy" | "level"
    description: str
    mode: str

    def to_dict(self) -> dict:
        return {"parent": self.parent, "child": self.child, "kind": self.kind,
                "description": self.description, "mode": self.mode}


# ====================================================================== policies


def _grid_policy_ops(prog, layout) -> tuple[list[str], list[str]]:
    """(capability ops, refinement ops) available from a grid program."""
    if prog.program == "grid_noop":
        return ["program=grid_planner"], []
    cap, ref = [], []
    p = dict(prog.params)
    if not p["doors"]:
        cap.append("doors=on")
    else:
        ref.append("doors=off")
    if not p["drop"]:
        cap.append("drop=on")
    else:
        ref.append("drop=off")
    if p["pinned_goal"] is not None:
        cap.append("unpin_goal")
    if layout is not None and p["pinned_goal"] != tuple(layout.goal):
        ref.insert(0, f"pin_goal={layout.goal[0]},{layout.goal[1]}")
    ref.append("turn_pref=right" if p["turn_pref"] == "left" else "turn_pref=left")
    for c in range(6):
        (ref if c in p["keys"] else cap).append(f"{'forbid' if c in p['keys'] else 'allow'}_key={c}")
    return cap, ref


_NAV_RANK = {"nav_noop": 0, "nav_straight": 1, "nav_greedy": 2, "nav_planner": 3}


def _nav_policy_ops(prog, layout) -> tuple[list[str], list[str]]:
    cap, ref = [], []
    for name, rank in _NAV_RANK.items():
        if name == prog.program or name == "nav_noop":
            continue
        (cap if rank > _NAV_RANK[prog.program] else ref).append(f"program={name}")
    p = dict(prog.params)
    for n in (8, 16, 32):
        if n != p["n_dirs"]:
            ref.append(f"n_dirs={n}")
    for c in (0.0, 2.0, 5.0):
        if c != p["clearance"]:
            ref.append(f"clearance={c:g}")
    (ref if p["shortcut"] else cap).append("shortcut=" + ("off" if p["shortcut"] else "on"))
    return cap, ref


def apply_policy_op(prog, op: str):
    """Apply one textual mutation to a built-in program."""
    name, _, arg = op.partition("=")
    if name == "program":
        return prog.replace(program=arg)
    if name in ("doors", "drop", "shortcut"):
        return prog.replace(**{name: arg == "on"})
    if name == "unpin_goal":
        return prog.replace(pinned_goal=None)
    if name == "pin_goal":
        x, y = (int(v) for v in arg.split(","))
        return prog.replace(pinned_goal=(x, y))
    if name == "turn_pref":
        return prog.replace(turn_pref=arg)
    if name in ("allow_key", "forbid_key"):
        keys = set(prog.get("keys"))
        keys = keys | {int(arg)} if name == "allow_key" else keys - {int(arg)}
        return prog.replace(keys=tuple(sorted(keys)))
    if name == "n_dirs":
        return prog.replace(n_dirs=int(arg))
    if name == "clearance":
        return prog.replace(clearance=float(arg))
    raise ValueError(f"unknown policy mutation {op!r}")


def policy_mutation_pool(base: PolicyHandle, level: Level, base_score: float, seed: int,
                         specialize: bool = False) -> list[str]:
    """Ordered mutation list: capabilities first while the base fails, refinements first once it succeeds."""
    layout = level.layout if level is not None else None
    ops_fn = _grid_policy_ops if base.family == GRID else _nav_policy_ops
    cap, ref = ops_fn(base.program, layout)
    rng = rng_for(seed, "policy-pool", base.id)
    cap = [cap[i] for i in rng.permutation(len(cap))]
    ref = [ref[i] for i in rng.permutation(len(ref))]
    if specialize:
        ref.sort(key=lambda op: not op.startswith("pin_goal"))
    return cap + ref if base_score < 1.0 else ref + cap


def propose_policies(base: PolicyHandle, level: Level, K: int, config: DesignerConfig | None = None,
                     seed: int = 0, base_score: float | None = None, n_episodes: int = 100,
                     id_prefix: str | None = None, llm_client: LLMClient | None = None):
    """K candidates, each one recorded mutation away from ``base``.

    Returns a list of (PolicyHandle, MutationRecord).
    """
    config = config or DesignerConfig()
    if base.family != level.family:
        raise MalformedLevel(f"policy {base.id} is {base.family}, level {level.id} is {level.family}")
    prefix = id_prefix or f"{base.id}.m"
    if base_score is None:
        base_score = estimate_payoff(base, level, n_episodes, seed).mean_success
    if config.mode == "llm":
        return _propose_policies_llm(base, level, K, config, base_score, prefix, llm_client)
    if base.kind != "builtin":
        raise GenerationExhausted("scripted policy mutation needs a built-in base policy")
    pool = policy_mutation_pool(base, level, base_score, seed, config.specialize)
    out, seen = [], {base.program}
    for op in pool:
        if len(out) == K:
            break
        prog = apply_policy_op(base.program, op)
        if prog in seen:
            continue
        seen.add(prog)
        cid = f"{prefix}{len(out)}"
        cand = PolicyHandle(cid, "builtin", base.family, prog, parent=base.id, mutation=op)
        out.append((cand, MutationRecord(base.id, cid, "policy", op, "scripted")))
    if len(out) < K:
        raise GenerationExhausted(f"only {len(out)} distinct policy mutations of {base.id}, need {K}")
    return out


def seed_policy_source(family: str) -> str:
    return load_template("grid_seed_policy" if family == GRID else "nav_seed_policy")


def _policy_text(p: PolicyHandle) -> str:
    if p.kind == "external":
        return p.source or ""
    return json.dumps(p.program.to_dict())


def _propose_policies_llm(base, level, K, config, base_score, prefix, client):
    if client is None:
        raise GenerationExhausted("llm mode requires a client")
    fam = family_of(level.family)
    template = load_template(config.llm.template or f"{'grid' if level.family == GRID else 'nav'}_policy")
    source = base.source if base.kind == "external" else seed_policy_source(level.family)
    prompt = fill_template(
        template,
        ActualScore=f"{base_score:.3f}",
        Policy=source,
        obs_dict=json.dumps(fam.observation_spec(level.layout)),
    )
    out, failures = [], 0
    while len(out) < K:
        try:
            reply = client.complete(prompt, tag=f"policy_{prefix}{len(out)}")
            src = extract_policy_source(reply)
        except LLMError:
            src = None
        if src is None or any(src == c.source for c, _ in out):
            failures += 1
            if failures > config.max_retries:
                raise GenerationExhausted(f"llm produced {len(out)} usable policies of {K} after {failures} failures")
            continue
        cid = f"{prefix}{len(out)}"
        cand = external(cid, level.family, src, RUNNER_COMMAND, config.step_timeout_ms, parent=base.id,
                        mutation="llm rewrite")
        out.append((cand, MutationRecord(base.id, cid, "policy", "llm rewrite", "llm")))
    return out


def score_policies(candidates, level: Level, n_episodes: int, seed: int, workers: int = 1) -> list[float]:
    return [estimate_payoff(c, level, n_episodes, seed, workers).mean_success for c in candidates]


def argmax_first(scores) -> int:
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best


def argmin_first(scores) -> int:
    best = 0
    for i, s in enumerate(scores):
        if s < scores[best]:
            best = i
    return best


def select_best_policy(candidates, level: Level, n_episodes: int = 100, seed: int = 0, workers: int = 1,
                       scores: list | None = None) -> PolicyHandle:
    """Candidate with the highest estimated payoff on ``level``; ties go to the lowest index."""
    if not candidates:
        raise EmptyCandidates("no policy candidates to select from")
    scores = scores if scores is not None else score_policies(candidates, level, n_episodes, seed, workers)
    return candidates[argmax_first(scores)]


# ====================================================================== levels


def _grid_grow(layout: gw.GridLevel, rng, cfg: DesignerConfig):
    n = layout.size
    if n >= cfg.max_size:
        return None, "grow"
    t = gw.empty_tiles(n + 1)
    t[: n - 1, : n - 1] = layout.tiles[: n - 1, : n - 1]
    obj = layout.tiles[:, :, 0]
    # full partitions keep spanning the enlarged interior
    for x in range(1, n - 1):
        if np.all(np.isin(obj[x, 1 : n - 1], (gw.WALL, gw.DOOR))):
            t[x, n - 1] = (gw.WALL, 0, 0)
    for y in range(1, n - 1):
        if np.all(np.isin(obj[1 : n - 1, y], (gw.WALL, gw.DOOR))):
            t[n - 1, y] = (gw.WALL, 0, 0)
    if layout.max_steps == gw.default_max_steps(n):
        steps = gw.default_max_steps(n + 1)
    else:
        steps = int(math.ceil(layout.max_steps * ((n + 1) / n) ** 2))
    lvl = gw.GridLevel(n + 1, t, layout.agent_start, layout.agent_dir, layout.goal, steps)
    return lvl, f"grow size {n}->{n + 1}"


def _free_cells(layout: gw.GridLevel) -> list[tuple[int, int]]:
    obj = layout.tiles[:, :, 0]
    return [
        (int(x), int(y)) for x, y in np.argwhere(obj == gw.EMPTY)
        if (int(x), int(y)) != layout.agent_start
    ]


def _grid_add_wall(layout, rng, cfg):
    cells = _free_cells(layout)
    if not cells:
        return None, "add_wall"
    x, y = cells[int(rng.integers(len(cells)))]
    length = int(rng.integers(1, 4))
    dx, dy = ((1, 0), (0, 1))[int(rng.integers(2))]
    seg = [(x + i * dx, y + i * dy) for i in range(length)]
    obj = layout.tiles[:, :, 0]
    if any(c == layout.agent_start or obj[c] != gw.EMPTY for c in seg):
        return None, "add_wall"
    t = layout.tiles.copy()
    for c in seg:
        t[c] = (gw.WALL, 0, 0)
    lvl = gw.GridLevel(layout.size, t, layout.agent_start, layout.agent_dir, layout.goal, layout.max_steps)
    return lvl, f"add wall segment {seg[0]}..{seg[-1]}"


def _grid_add_key_door(layout, rng, cfg):
    if layout.num_doors >= cfg.door_limit:
        return None, "add_key_door"
    n = layout.size
    obj = layout.tiles[:, :, 0]
    (sx, sy), (gx, gy) = layout.agent_start, layout.goal
    options = []
    for x in range(min(sx, gx) + 1, max(sx, gx)):
        if np.all(obj[x, 1 : n - 1] == gw.EMPTY):
            options.append(("x", x))
    for y in range(min(sy, gy) + 1, max(sy, gy)):
        if np.all(obj[1 : n - 1, y] == gw.EMPTY):
            options.append(("y", y))
    if not options:
        return None, "add_key_door"
    axis, k = options[int(rng.integers(len(options)))]
    used = set(layout.tiles[:, :, 1][obj == gw.DOOR].tolist())
    fresh = [c for c in cfg.palette if c not in used]
    pool = fresh or list(cfg.palette)
    color = int(pool[int(rng.integers(len(pool)))])
    t = layout.tiles.copy()
    d = int(rng.integers(1, n - 1))
    if axis == "x":
        t[k, 1 : n - 1] = (gw.WALL, 0, 0)
        door = (k, d)
    else:
        t[1 : n - 1, k] = (gw.WALL, 0, 0)
        door = (d, k)
    t[door] = (gw.DOOR, color, gw.LOCKED)
    # key goes somewhere on the start side
    from .policies import _flood, _passable_grid

    region = _flood(_passable_grid(t), layout.agent_start)
    spots = [
        (int(x), int(y)) for x, y in np.argwhere(region & (t[:, :, 0] == gw.EMPTY))
        if (int(x), int(y)) != layout.agent_start
    ]
    if not spots:
        return None, "add_key_door"
    key = spots[int(rng.integers(len(spots)))]
    t[key] = (gw.KEY, color, 0)
    lvl = gw.GridLevel(n, t, layout.agent_start, layout.agent_dir, layout.goal, layout.max_steps)
    return lvl, f"add {gw.COLOR_NAMES[color]} locked door at {door} with key at {key}"


def _grid_relocate_goal(layout, rng, cfg):
    cells = _free_cells(layout)
    if not cells:
        return None, "relocate_goal"
    new = cells[int(rng.integers(len(cells)))]
    t = layout.tiles.copy()
    t[layout.goal] = (gw.EMPTY, 0, 0)
    t[new] = (gw.GOAL, 0, 0)
    lvl = gw.GridLevel(layout.size, t, layout.agent_start, layout.agent_dir, new, layout.max_steps)
    return lvl, f"relocate goal {layout.goal}->{new}"


def _nav_with(layout: nv.NavLevel, **changes) -> nv.NavLevel:
    d = dict(
        bounds=layout.bounds, agent_start=layout.agent_start, goal_zone=layout.goal_zone,
        obstacles=layout.obstacles, speed=layout.speed, max_steps=layout.max_steps,
        min_start_goal_distance=layout.min_start_goal_distance, agent_radius=layout.agent_radius,
    )
    d.update(changes)
    return nv.NavLevel(**d)


def _nav_add_obstacle(layout, rng, cfg):
    if layout.num_obstacles >= cfg.max_obstacles:
        return None, "add_obstacle"
    lvl = nv.try_add_obstacle(rng, layout, tries=20)
    if lvl is None:
        return None, "add_obstacle"
    o = lvl.obstacles[-1]
    return lvl, f"add obstacle at ({o.cx:g},{o.cy:g}) size {o.w:g}x{o.h:g}"


def _nav_grow_bounds(layout, rng, cfg):
    W, H = layout.bounds
    f = float(rng.choice([1.1, 1.2, 1.3]))
    nW, nH = round(W * f, 1), round(H * f, 1)
    if nW > cfg.max_bounds[0] or nH > cfg.max_bounds[1]:
        return None, "grow_bounds"
    steps = int(math.ceil(layout.max_steps * f))
    return _nav_with(layout, bounds=(nW, nH), max_steps=steps), f"grow bounds {W:g}x{H:g}->{nW:g}x{nH:g}"


def _nav_raise_min_distance(layout, rng, cfg):
    r = layout.agent_radius
    g = layout.goal_zone
    new_min = round(layout.min_start_goal_distance + float(rng.choice([20.0, 40.0, 60.0])), 1)
    W, H = layout.bounds
    for _ in range(50):
        p = (round(float(rng.uniform(r, W - r)), 1), round(float(rng.uniform(r, H - r)), 1))
        if math.dist(p, (g.cx, g.cy)) < new_min or nv.circle_rect_collision(p, r, g):
            continue
        if any(nv.circle_rect_collision(p, r, o) for o in layout.obstacles):
            continue
        lvl = _nav_with(layout, agent_start=p, min_start_goal_distance=new_min)
        return lvl, f"raise min start-goal distance to {new_min:g} (start {p})"
    return None, "raise_min_distance"


def _nav_gap(layout, i: int, side: str) -> float:
    """Free distance from obstacle i's ``side`` edge to the nearest facing obstacle or wall."""
    o = layout.obstacles[i]
    W, H = layout.bounds
    best = {"left": o.x0, "right": W - o.x1, "bottom": o.y0, "top": H - o.y1}[side]
    for j, p in enumerate(layout.obstacles):
        if j == i:
            continue
        if side in ("left", "right"):
            if p.y1 <= o.y0 or p.y0 >= o.y1:
                continue
            gap = o.x0 - p.x1 if side == "left" else p.x0 - o.x1
        else:
            if p.x1 <= o.x0 or p.x0 >= o.x1:
                continue
            gap = o.y0 - p.y1 if side == "bottom" else p.y0 - o.y1
        if gap >= 0:
            best = min(best, gap)
    return best


def narrow_passage(layout: nv.NavLevel, index: int, side: str, new_gap: float):
    """Extend obstacle ``index`` on ``side`` so the facing gap becomes ``new_gap``.

    Returns None when the result would close the passage to the agent
    (gap below twice the radius) or would not narrow anything.
    """
    r = layout.agent_radius
    gap = _nav_gap(layout, index, side)
    if new_gap < 2 * r or new_gap >= gap:
        return None
    o = layout.obstacles[index]
    grow = gap - new_gap
    x0, y0, x1, y1 = o.x0, o.y0, o.x1, o.y1
    if side == "left":
        x0 -= grow
    elif side == "right":
        x1 += grow
    elif side == "bottom":
        y0 -= grow
    else:
        y1 += grow
    rect = nv.Rect.from_corners(x0, y0, x1, y1)
    obstacles = layout.obstacles[:index] + (rect,) + layout.obstacles[index + 1 :]
    try:
        lvl = _nav_with(layout, obstacles=obstacles)
    except MalformedLevel:
        return None
    return lvl


def _nav_narrow(layout, rng, cfg):
    if not layout.obstacles:
        return None, "narrow_passage"
    r = layout.agent_radius
    i = int(rng.integers(layout.num_obstacles))
    side = ("left", "right", "bottom", "top")[int(rng.integers(4))]
    gap = _nav_gap(layout, i, side)
    if gap <= 2 * r + 1:
        return None, "narrow_passage"
    new_gap = round(float(rng.uniform(2 * r + 1, gap)), 1)
    lvl = narrow_passage(layout, i, side, new_gap)
    return lvl, f"narrow passage: obstacle {i} {side} gap {gap:.1f}->{new_gap:g}"


LEVEL_OPS = {
    "grow": _grid_grow,
    "add_wall": _grid_add_wall,
    "add_key_door": _grid_add_key_door,
    "relocate_goal": _grid_relocate_goal,
    "add_obstacle": _nav_add_obstacle,
    "grow_bounds": _nav_grow_bounds,
    "raise_min_distance": _nav_raise_min_distance,
    "narrow_passage": _nav_narrow,
}


def apply_level_op(op: str, layout, rng, cfg: DesignerConfig | None = None):
    """Draft one mutation; returns (layout or None, description)."""
    cfg = cfg or DesignerConfig()
    try:
        return LEVEL_OPS[op](layout, rng, cfg)
    except (MalformedLevel, GenerationError):
        return None, op


def propose_levels(base: Level, nash: GameSolution | None, K: int, config: DesignerConfig | None = None,
                   seed: int = 0, id_prefix: str | None = None, policies=None, llm_client: LLMClient | None = None,
                   base_score: float | None = None):
    """K feasible candidates one structural change away from ``base``.

    Returns a list of (Level, MutationRecord). Infeasible or duplicate drafts
    consume retries; running out raises GenerationExhausted.
    """
    config = config or DesignerConfig()
    if not base.certificate.get("result"):
        raise MalformedLevel(f"base level {base.id} carries no feasibility certificate")
    prefix = id_prefix or f"{base.id}.m"
    if config.mode == "llm":
        return _propose_levels_llm(base, nash, K, config, prefix, policies, llm_client, base_score)
    ops = config.ops or (GRID_LEVEL_OPS if base.family == GRID else NAV_LEVEL_OPS)
    unknown = [op for op in ops if op not in LEVEL_OPS]
    if unknown:
        raise ValueError(f"unknown level mutations {unknown}")
    rng = rng_for(seed, "level-design", base.id)
    order = [ops[i] for i in rng.permutation(len(ops))]
    out, seen = [], {base.layout}
    failures = drafts = 0
    while len(out) < K:
        op = order[drafts % len(order)]
        drafts += 1
        lay, desc = apply_level_op(op, base.layout, rng, config)
        ok = lay is not None and lay not in seen
        if ok:
            try:
                cid = f"{prefix}{len(out)}"
                cand = make_level(cid, (lay,), base.id, desc, base.family)
            except MalformedLevel:
                ok = False
        if not ok:
            failures += 1
            if failures > config.max_retries:
                raise GenerationExhausted(
                    f"only {len(out)} feasible level mutations of {base.id} after {failures} rejected drafts"
                )
            continue
        seen.add(lay)
        out.append((cand, MutationRecord(base.id, cid, "level", desc, "scripted")))
    return out


def _describe_mix(policies, nash) -> tuple[str, str]:
    weights = [f"{p.id}: {w:.4f}" for p, w in zip(policies, nash.strategy.weights) if w > SUPPORT_EPS]
    texts = [f"# {p.id}\n{_policy_text(p)}" for p, w in zip(policies, nash.strategy.weights) if w > SUPPORT_EPS]
    return "\n".join(weights), "\n\n".join(texts)


def _propose_levels_llm(base, nash, K, config, prefix, policies, client, base_score):
    if client is None or policies is None or nash is None:
        raise GenerationExhausted("llm level design needs a client, the policy archive and a Nash solution")
    fam = family_of(base.family)
    template = load_template(config.llm.template or f"{'grid' if base.family == GRID else 'nav'}_env")
    weights, texts = _describe_mix(policies, nash)
    prompt = fill_template(
        template, Weights=weights, Policies=texts,
        ActualScore="unknown" if base_score is None else f"{base_score:.3f}",
        Level=json.dumps(fam.to_dict(base.layout)),
    )
    out, seen, failures = [], {base.layout}, 0
    while len(out) < K:
        lvl = None
        try:
            doc = extract_json_object(client.complete(prompt, tag=f"level_{prefix}{len(out)}"))
            lay = fam.from_dict(doc) if doc is not None else None
            if lay is not None and lay not in seen:
                changed = sorted(k for k, v in fam.to_dict(lay).items() if fam.to_dict(base.layout)[k] != v)
                cid = f"{prefix}{len(out)}"
                lvl = make_level(cid, (lay,), base.id, f"llm edit of {', '.join(changed)}", base.family)
        except (LLMError, MalformedLevel, GenerationError, TypeError, ValueError, KeyError):
            lvl = None
        if lvl is None:
            failures += 1
            if failures > config.max_retries:
                raise GenerationExhausted(f"llm produced {len(out)} feasible levels of {K}")
            continue
        seen.add(lvl.layout)
        out.append((lvl, MutationRecord(base.id, lvl.id, "level", lvl.mutation, "llm")))
    return out


def mixture_payoffs(candidates, policies, nash: GameSolution, n_episodes: int, seed: int,
                    workers: int = 1) -> list[float]:
    """Nash-weighted expected payoff of each candidate level over the support policies."""
    w = np.asarray(nash.strategy.weights, dtype=float)
    if len(w) != len(policies):
        raise DimensionMismatch(f"strategy has {len(w)} weights for {len(policies)} policies")
    out = []
    for lvl in candidates:
        total = 0.0
        for p, wi in zip(policies, w):
            if wi > SUPPORT_EPS:
                total += wi * estimate_payoff(p, lvl, n_episodes, seed, workers).mean_success
        out.append(total)
    return out


def select_best_level(candidates, policy_archive, nash: GameSolution, n_episodes: int = 100, seed: int = 0,
                      workers: int = 1, scores: list | None = None) -> Level:
    """Candidate minimizing the mixture's expected payoff; ties go to the lowest index."""
    if not candidates:
        raise EmptyCandidates("no level candidates to select from")
    if len(nash.strategy.weights) != len(policy_archive):
        raise DimensionMismatch("Nash strategy length differs from the policy archive size")
    scores = scores if scores is not None else mixture_payoffs(candidates, policy_archive, nash, n_episodes, seed, workers)
    return candidates[argmin_first(scores)]


__all__ = [
    "DesignerConfig", "MutationRecord", "propose_policies", "select_best_policy", "propose_levels",
    "select_best_level", "apply_level_op", "apply_policy_op", "narrow_passage", "mixture_payoffs",
    "policy_to_dict",
]
