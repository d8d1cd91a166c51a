from __future__ import annotations

import json

import numpy as np
import pytest

from coevo import designers as ds
from coevo import gridworld as gw
from coevo import nav2d as nv
from coevo.errors import DimensionMismatch, EmptyCandidates, GenerationExhausted
from coevo.level import GRID, NAV, make_level
from coevo.matrix_game import PayoffMatrix, solve_nash
from coevo.policies import bootstrap_policy, builtin

from conftest import corridor_level, open_arena


class FakeClient:
    """Returns canned replies in order, cycling the last one."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []

    def complete(self, prompt, tag="request"):
        self.prompts.append(prompt)
        return self.replies[min(len(self.prompts) - 1, len(self.replies) - 1)]


def solo_nash(n_policies=1):
    return solve_nash(PayoffMatrix.from_rows(np.zeros((n_policies, 1))))


class TestProposePolicies:
    def test_k_distinct_one_change_candidates(self, empty5):
        base = bootstrap_policy(GRID)
        out = ds.propose_policies(base, empty5, 5, seed=1, base_score=0.0, id_prefix="pi0.c")
        assert [c.id for c, _ in out] == [f"pi0.c{i}" for i in range(5)]
        assert len({c.program for c, _ in out}) == 5
        for cand, rec in out:
            assert cand.parent == base.id and rec.kind == "policy" and rec.mode == "scripted"
            assert ds.apply_policy_op(base.program, rec.description) == cand.program
            diff = {k for k, v in cand.program.params if dict(base.program.params)[k] != v}
            assert len(diff) <= 1

    def test_capabilities_first_when_failing(self):
        lvl = make_level("c", (corridor_level(),))
        pool = ds.policy_mutation_pool(bootstrap_policy(GRID), lvl, 0.0, seed=0)
        assert set(pool[:2]) == {"doors=on", "drop=on"}

    def test_refinements_first_when_solved(self, empty5):
        pool = ds.policy_mutation_pool(builtin("p", "grid_planner"), empty5, 1.0, seed=0, specialize=True)
        assert pool[0].startswith("pin_goal")

    def test_exhausted_when_k_too_large(self, empty5):
        with pytest.raises(GenerationExhausted):
            ds.propose_policies(bootstrap_policy(GRID), empty5, 60, base_score=0.0)

    def test_deterministic(self, empty5):
        a = ds.propose_policies(bootstrap_policy(GRID), empty5, 4, seed=9, base_score=0.0)
        b = ds.propose_policies(bootstrap_policy(GRID), empty5, 4, seed=9, base_score=0.0)
        assert a == b

    def test_llm_mode(self, empty5):
        reply = "Here you go:\n```python\ndef policy(obs, agent_pos, agent_dir):\n    return {}\n```\n"
        client = FakeClient([reply.format(i) for i in range(3)])
        cfg = ds.DesignerConfig(mode="llm", K=3)
        out = ds.propose_policies(bootstrap_policy(GRID), empty5, 3, cfg, base_score=0.25, llm_client=client)
        assert [c.kind for c, _ in out] == ["external"] * 3
        assert "0.250" in client.prompts[0] and "{ActualScore}" not in client.prompts[0]

    def test_llm_no_retries_exhausts(self, empty5):
        cfg = ds.DesignerConfig(mode="llm", K=2, max_retries=0)
        with pytest.raises(GenerationExhausted):
            ds.propose_policies(bootstrap_policy(GRID), empty5, 2, cfg, base_score=0.0,
                                llm_client=FakeClient(["no code here"]))

    def test_llm_duplicates_count_as_failures(self, empty5):
        same = "```python\ndef policy(obs, agent_pos, agent_dir):\n    return 2\n```"
        cfg = ds.DesignerConfig(mode="llm", K=2, max_retries=3)
        with pytest.raises(GenerationExhausted):
            ds.propose_policies(bootstrap_policy(GRID), empty5, 2, cfg, base_score=0.0,
                                llm_client=FakeClient([same]))


class TestSelection:
    def test_argmax_ties_lowest(self):
        assert ds.argmax_first([0.2, 0.9, 0.9]) == 1
        assert ds.argmin_first([0.5, 0.1, 0.1]) == 1

    def test_select_policy_example(self, empty5):
        cands = [bootstrap_policy(GRID, "a"), builtin("b", "grid_planner"), builtin("c", "grid_noop")]
        assert ds.select_best_policy(cands, empty5, scores=[0.3, 0.8, 0.8]).id == "b"

    def test_empty(self, empty5):
        with pytest.raises(EmptyCandidates):
            ds.select_best_policy([], empty5)
        with pytest.raises(EmptyCandidates):
            ds.select_best_level([], [], solo_nash())

    def test_select_level_minimizes_mixture(self, empty5):
        hard = make_level("hard", (corridor_level(),))
        pols = [bootstrap_policy(GRID, "p0")]
        best = ds.select_best_level([empty5, hard], pols, solo_nash(), n_episodes=5)
        assert best.id == "hard"

    def test_mixture_payoffs_weighting(self, empty5):
        hard = make_level("hard", (corridor_level(),))
        pols = [bootstrap_policy(GRID, "p0"), builtin("p1", "grid_planner")]
        nash = solve_nash(PayoffMatrix.from_rows([[1.0, 0.0], [0.0, 1.0]]))
        vals = ds.mixture_payoffs([empty5, hard], pols, nash, 4, 0)
        assert vals == pytest.approx([1.0, 0.5])

    def test_length_mismatch(self, empty5):
        with pytest.raises(DimensionMismatch):
            ds.mixture_payoffs([empty5], [bootstrap_policy(GRID)], solo_nash(2), 1, 0)


class TestProposeLevels:
    def test_grid_candidates_feasible_and_distinct(self):
        base = make_level("theta0", (gw.empty_room(7),))
        out = ds.propose_levels(base, None, 5, seed=3, id_prefix="theta1.c")
        assert [lvl.id for lvl, _ in out] == [f"theta1.c{i}" for i in range(5)]
        layouts = {lvl.layout for lvl, _ in out}
        assert len(layouts) == 5 and base.layout not in layouts
        for lvl, rec in out:
            assert lvl.certificate["result"] is True and lvl.parent == "theta0"
            assert gw.check_solvable(lvl.layout)

    def test_nav_candidates_reachable(self):
        base = make_level("theta0", (nv.generate_nav_level(np.random.default_rng(1), n_obstacles=2),))
        out = ds.propose_levels(base, None, 4, seed=0)
        for lvl, _ in out:
            assert nv.reachable(lvl.layout)

    def test_one_change_ops(self, rng):
        base = gw.empty_room(7)
        for _ in range(20):
            lay, _ = ds.apply_level_op("add_wall", base, rng)
            if lay is not None:
                changed = np.argwhere(np.any(lay.tiles != base.tiles, axis=2))
                assert 1 <= len(changed) <= 3
                assert all(lay.tiles[tuple(c)][0] == gw.WALL for c in changed)
            lay, _ = ds.apply_level_op("relocate_goal", base, rng)
            assert len(np.argwhere(np.any(lay.tiles != base.tiles, axis=2))) == 2

    def test_door_limit_respected(self):
        cfg = ds.DesignerConfig(door_limit=0)
        lay, _ = ds.apply_level_op("add_key_door", gw.empty_room(7), np.random.default_rng(0), cfg)
        assert lay is None

    def test_exhausted(self):
        # a 3x3 room has one free cell, no room for anything
        base = make_level("tiny", (gw.empty_room(4, goal=(2, 2)),))
        cfg = ds.DesignerConfig(ops=("add_key_door",), max_retries=5)
        with pytest.raises(GenerationExhausted):
            ds.propose_levels(base, None, 2, cfg)

    def test_llm_level(self):
        base = make_level("theta0", (gw.empty_room(6),))
        moved = gw.grid_level_to_dict(gw.empty_room(6, goal=(1, 4)))
        client = FakeClient(["```json\n" + json.dumps(moved) + "\n```", "not json", "{}"])
        cfg = ds.DesignerConfig(mode="llm", K=1, max_retries=2)
        out = ds.propose_levels(base, solo_nash(), 1, cfg, policies=[bootstrap_policy(GRID)], llm_client=client)
        assert out[0][0].layout.goal == (1, 4)
        assert "goal" in out[0][1].description
        assert "{Weights}" not in client.prompts[0] and "bootstrap" in client.prompts[0]

    def test_llm_infeasible_rejected(self):
        base = make_level("theta0", (gw.empty_room(6),))
        bad = gw.grid_level_to_dict(gw.empty_room(6))
        for x, y in ((3, 4), (4, 3)):  # wall the goal into its corner
            bad["tiles"][x * 6 + y] = [gw.WALL, 0, 0]
        cfg = ds.DesignerConfig(mode="llm", K=1, max_retries=1)
        with pytest.raises(GenerationExhausted):
            ds.propose_levels(base, solo_nash(), 1, cfg, policies=[bootstrap_policy(GRID)],
                              llm_client=FakeClient([json.dumps(bad)]))


class TestNarrowPassage:
    def setup_method(self):
        r = nv.AGENT_RADIUS
        self.r = r
        self.lvl = open_arena(obstacles=[nv.Rect.from_corners(190, 0, 210, 100)], max_steps=1000)

    def test_below_agent_diameter_rejected(self):
        assert ds.narrow_passage(self.lvl, 0, "top", 2 * self.r - 1) is None

    def test_widening_rejected(self):
        assert ds.narrow_passage(self.lvl, 0, "top", 250.0) is None

    def test_narrowing_keeps_reachable(self):
        out = ds.narrow_passage(self.lvl, 0, "top", 2 * self.r + 20)
        assert out is not None
        assert out.obstacles[0].y1 == pytest.approx(300 - (2 * self.r + 20))
        assert nv.reachable(out)
