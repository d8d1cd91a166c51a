"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from coevo import coevolve as ce
from coevo import gridworld as gw
from coevo import nav2d as nv
from coevo.config import config_from_dict
from coevo.level import GRID, make_level
from coevo.matrix_game import (
    PayoffMatrix,
    append_column,
    append_row,
    mixture_column_values,
    pure_maximin,
    solve_nash,
    uniform_strategy,
)
from coevo.policies import bootstrap_policy, builtin
from coevo.rollout import CRASH, NONE, PROTOCOL, TIMEOUT, estimate_payoff, run_many

from conftest import corridor_level, ext, follow_lattice


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    return emit


def simplex_lattice(r: int, k: int) -> np.ndarray:
    """All points of the r-simplex with coordinates in multiples of 1/k."""
    if r == 1:
        return np.ones((1, 1))
    if r == 2:
        a = np.arange(k + 1) / k
        return np.stack([a, 1 - a], axis=1)
    i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    keep = i + j <= k
    i, j = i[keep], j[keep]
    return np.stack([i, j, k - i - j], axis=1) / k


_LATTICES = {r: simplex_lattice(r, 1000) for r in (1, 2, 3)}


def random_matrices(rng, count, max_dim):
    for _ in range(count):
        r, t = (int(v) for v in rng.integers(1, max_dim + 1, size=2))
        yield PayoffMatrix.from_rows(rng.random((r, t)))


def dominance_ok(m: PayoffMatrix, sol) -> bool:
    mix = mixture_column_values(m, sol.strategy).min()
    return mix >= mixture_column_values(m, uniform_strategy(m.rows)).min() - 1e-9 and mix >= pure_maximin(m) - 1e-9


# ------------------------------------------------------------------ 1 and 2


def test_criteria_1_and_2_nash_oracle_and_dominance(report):
    rng = np.random.default_rng(2024)
    t0 = time.monotonic()
    worst_gap, dominance_failures, cert_worst = 0.0, 0, 0.0
    for m in random_matrices(rng, 500, 3):
        sol = solve_nash(m)
        grid = float((_LATTICES[m.rows] @ m.values).min(axis=1).max())
        worst_gap = max(worst_gap, abs(sol.value - grid))
        dominance_failures += not dominance_ok(m, sol)
    for m in random_matrices(rng, 1000, 8):
        sol = solve_nash(m)
        primal = sol.value - mixture_column_values(m, sol.strategy).min()
        dual = (m.values @ sol.dual_weights).max() - sol.value
        cert_worst = max(cert_worst, primal, dual)
        dominance_failures += not dominance_ok(m, sol)
    elapsed = time.monotonic() - t0
    ok1 = worst_gap <= 2e-3 and cert_worst <= 1e-6 and elapsed < 60
    report(1, ok1, f"max |value - grid(1e-3)| = {worst_gap:.2e} (<= 2e-3), "
                   f"max certificate slack = {cert_worst:.2e} (<= 1e-6), {elapsed:.1f}s (< 60s)")
    report(2, dominance_failures == 0, f"{dominance_failures} dominance violations over 1500 matrices")
    assert ok1 and dominance_failures == 0


# ------------------------------------------------------------------ 3


def test_criterion_3_growth_monotone(report):
    rng = np.random.default_rng(3)
    violations = worst = 0
    for _ in range(500):
        m = PayoffMatrix(("r0",), ("c0",), rng.random((1, 1)))
        v = solve_nash(m).value
        for _ in range(int(rng.integers(3, 9))):
            if rng.random() < 0.5:
                m = append_row(m, f"r{m.rows}", rng.random(m.cols))
                v2 = solve_nash(m).value
                drift = v - v2
            else:
                m = append_column(m, f"c{m.cols}", rng.random(m.rows))
                v2 = solve_nash(m).value
                drift = v2 - v
            worst = max(worst, drift)
            violations += drift > 1e-9
            v = v2
    report(3, violations == 0, f"{violations} monotonicity violations over 500 sequences (worst {worst:.1e})")
    assert violations == 0


# ------------------------------------------------------------------ 4


def random_nav_arena(rng) -> nv.NavLevel:
    """Unfiltered arena: random rectangles, possibly sealing the goal off."""
    while True:
        W, H = 400.0, 300.0
        r = nv.AGENT_RADIUS
        goal = nv.Rect(round(float(rng.uniform(60, 340)), 1), round(float(rng.uniform(60, 240)), 1), 50.0, 50.0)
        start = (round(float(rng.uniform(r, W - r)), 1), round(float(rng.uniform(r, H - r)), 1))
        if nv.circle_rect_collision(start, r, goal):
            continue
        obstacles = []
        if rng.random() < 0.5:
            # a full-height wall whose gap straddles the agent diameter
            x, gap, cy = float(rng.uniform(30, 370)), float(rng.uniform(20, 50)), float(rng.uniform(40, 260))
            for y0, y1 in ((0.0, cy - gap / 2), (cy + gap / 2, H)):
                obstacles.append(nv.Rect.from_corners(x - 8, y0, x + 8, y1))
        for _ in range(int(rng.integers(0, 17))):
            w, h = float(rng.uniform(20, 260)), float(rng.uniform(20, 260))
            rect = nv.Rect(round(float(rng.uniform(w / 2, W - w / 2)), 1),
                           round(float(rng.uniform(h / 2, H - h / 2)), 1), round(w, 1), round(h, 1))
            obstacles.append(rect)
        obstacles = [o for o in obstacles if not nv.circle_rect_collision(start, r, o) and not o.intersects(goal)]
        try:
            return nv.NavLevel((W, H), start, goal, tuple(obstacles), max_steps=1000)
        except Exception:
            continue


def test_criterion_4_feasibility_oracles(report):
    t0 = time.monotonic()
    rng = np.random.default_rng(4)
    disagreements, solvable = 0, 0
    for _ in range(200):
        lvl = gw.random_grid_layout(rng, int(rng.integers(4, 7)), max_doors=2,
                                    wall_prob=float(rng.uniform(0.3, 0.7)))
        fast, exact = gw.check_solvable(lvl), gw.exhaustive_solvable(lvl)
        solvable += exact
        disagreements += fast != exact
    violations, reach = 0, 0
    for _ in range(100):
        lvl = random_nav_arena(rng)
        if nv.reachable(lvl):
            reach += 1
            violations += not follow_lattice(lvl)
    elapsed = time.monotonic() - t0
    ok = disagreements == 0 and violations == 0 and elapsed < 300
    report(4, ok, f"grid: {disagreements} disagreements on 200 levels ({solvable} solvable); "
                  f"nav: {violations} soundness violations on 100 levels ({reach} reachable); {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 5


FORGETTING = {"family": "gridworld", "T": 6, "K": 5, "n_episodes": 100, "run_seed": 0,
              "policy_designer": {"specialize": True}, "initial_level": {"empty_room": {"size": 7}}}


def test_criterion_5_forgetting(report):
    t0 = time.monotonic()
    st = ce.run(config_from_dict(FORGETTING))
    k = st.iteration
    g, m = ce.evaluate_strategy(st, "greedy", k), ce.evaluate_strategy(st, "msne", k)
    elapsed = time.monotonic() - t0
    ok = g.mean < m.mean and m.min >= 0.5 and g.min <= 0.2 and elapsed < 600
    report(5, ok, f"over {', '.join(g.level_ids)}: greedy mean {g.mean:.3f} < msne mean {m.mean:.3f}; "
                  f"msne min {m.min:.2f} >= 0.5; greedy min {g.min:.2f} <= 0.2; {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 6


CURRICULUM = {"family": "gridworld", "T": 6, "K": 5, "n_episodes": 100, "run_seed": 2,
              "env_designer": {"door_limit": 3}, "initial_level": {"empty_room": {"size": 8}}}


def test_criterion_6_curriculum_beats_zero_shot(report):
    t0 = time.monotonic()
    cfg = config_from_dict(CURRICULUM)
    st = ce.run(cfg)
    k = st.iteration
    final = st.levels[k]  # newest level that a best response was trained on
    co = float(ce.evaluate_strategy(st, "msne", k).values[k])
    zs = ce.zero_shot_ablation(cfg, final, cfg.K * cfg.T)
    elapsed = time.monotonic() - t0
    ok = co - zs.best_payoff >= 0.3 and elapsed < 600
    report(6, ok, f"on {final.id}: co-evolution {co:.2f} vs zero-shot {zs.best_payoff:.2f} "
                  f"({zs.mutations_used} mutations, budget {cfg.K * cfg.T}); {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 7


def test_criterion_7_determinism(tmp_path, report):
    t0 = time.monotonic()
    same = []
    for fam, extra in (("gridworld", {"initial_level": {"empty_room": {"size": 7}}}), ("nav2d", {})):
        cfg = config_from_dict({"family": fam, "T": 4, "K": 5, "n_episodes": 100, "run_seed": 11, **extra})
        for tag in ("a", "b"):
            ce.run(cfg, tmp_path / f"{fam}-{tag}")
        for name in ("payoff.csv", "nash.csv"):
            same.append((tmp_path / f"{fam}-a" / name).read_bytes() == (tmp_path / f"{fam}-b" / name).read_bytes())
    elapsed = time.monotonic() - t0
    ok = all(same) and elapsed < 600
    report(7, ok, f"{sum(same)}/4 files bitwise identical across repeated runs (both families); {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 8


CRASH_ON_3 = """
calls = 0
def policy(obs, agent_pos, agent_dir):
    global calls
    calls += 1
    if calls == 3:
        raise RuntimeError("boom")
    return 0
"""

SLEEPER = """
import time
def policy(obs, agent_pos, agent_dir):
    time.sleep(2)
    return 2
"""

GARBAGE = """
def policy(obs, agent_pos, agent_dir):
    print("<<not json>>")
    return 2
"""

GOOD = """
def policy(obs, agent_pos, agent_dir):
    return 2
"""


def test_criterion_8_protocol_robustness(report):
    level = make_level("one", (gw.empty_room(5, goal=(2, 1), max_steps=20),))
    kinds = [
        (ext("crash", GRID, CRASH_ON_3), (0, CRASH)),
        (ext("sleep", GRID, SLEEPER, timeout_ms=1000), (0, TIMEOUT)),
        (ext("junk", GRID, GARBAGE), (0, PROTOCOL)),
        (ext("good", GRID, GOOD), (1, NONE)),
        (builtin("planner", "grid_planner"), (1, NONE)),
    ]
    plan = [i % len(kinds) for i in range(100)]
    t0 = time.monotonic()
    results = run_many([(kinds[k][0], level, i) for i, k in enumerate(plan)], workers=16)
    wrong = [i for i, (k, r) in enumerate(zip(plan, results)) if (r.success, r.failure_kind) != kinds[k][1]]
    elapsed = time.monotonic() - t0
    ok = not wrong
    report(8, ok, f"100 mixed concurrent episodes, {len(wrong)} with a wrong outcome or failure kind; {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 9


def test_criterion_9_payoff_statistics(report):
    lvl = make_level("half", (gw.empty_room(6), corridor_level()))
    p = bootstrap_policy(GRID)
    n = 10_000
    est = estimate_payoff(p, lvl, n, base_seed=9)
    sd = math.sqrt(0.25 / n)
    z = (est.mean_success - 0.5) / sd
    ok = abs(z) <= 3
    report(9, ok, f"mean success {est.mean_success:.4f} over {n} episodes, z = {z:+.2f} (|z| <= 3)")
    assert ok
