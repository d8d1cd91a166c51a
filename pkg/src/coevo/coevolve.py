"""Co-evolution loop: policy best response, payoff update, Nash, adversarial level.

One iteration ``t`` (0-based) does, in order:

1. propose K policies mutated from the base (bootstrap at t=0, otherwise the
   Nash-heaviest archive policy) and keep the best one on the newest level as
   ``pi{t}``;
2. fill the new payoff row;
3. solve the empirical game on the (t+1) x (t+1) matrix;
4. propose K levels mutated from the newest level and keep the one that
   minimizes the Nash mixture's payoff as ``theta{t+1}``; its column is filled
   immediately so every checkpoint satisfies rows == |P| and cols == |L|.
"""

from __future__ import annotations

import json
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import filelock
import numpy as np
import scipy

from . import gridworld as gw
from . import nav2d as nv
from .config import CoevolutionConfig, config_from_dict, config_to_dict
from .designers import (
    MutationRecord,
    argmax_first,
    argmin_first,
    mixture_payoffs,
    propose_levels,
    propose_policies,
    score_policies,
)
from .errors import (
    ConfigError,
    FamilyMismatch,
    GenerationExhausted,
    IterationOutOfRange,
    MissingCheckpoint,
    RunAborted,
)
from .level import GRID, Level, family_of, level_from_dict, level_to_dict, make_level
from .llm import LLMClient, api_key_from_env
from .matrix_game import (
    GameSolution,
    PayoffMatrix,
    format_entry,
    matrix_to_csv,
    mixture_column_values,
    solve_nash,
)
from .policies import PolicyHandle, bootstrap_policy, policy_from_dict, policy_to_dict
from .rollout import episode_seed, estimate_payoff, run_many
from .seeding import derive_seed, rng_for

STRATEGY_KINDS = ("greedy", "uniform", "msne")
STATE_VERSION = 1


@dataclass
class RunState:
    config: CoevolutionConfig
    levels: list = field(default_factory=list)
    policies: list = field(default_factory=list)
    matrix: PayoffMatrix = field(default_factory=PayoffMatrix.empty)
    nash_history: list = field(default_factory=list)
    mutations: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    cache: dict = field(default_factory=dict)
    completed: int = 0
    evaluations: int = 0

    @property
    def run_seed(self) -> int:
        return self.config.run_seed

    @property
    def iteration(self) -> int:
        """Index of the last completed iteration (-1 before the first)."""
        return self.completed - 1

    @property
    def family(self) -> str:
        return self.config.family

    @property
    def nash(self) -> GameSolution | None:
        return self.nash_history[-1] if self.nash_history else None


# ------------------------------------------------------------ initial level


def initial_level(config: CoevolutionConfig) -> Level:
    """Build theta0 from the config's ``initial_level`` block.

    Accepted forms: ``{"empty_room": {size}}`` (grid), ``{"generate": {...}}``,
    ``{"layout": <layout dict>}``, ``{"path": <level or layout json>}``.
    """
    block = config.initial_level or {}
    if len(block) > 1:
        raise ConfigError("initial_level takes exactly one of empty_room, generate, layout, path")
    kind, args = next(iter(block.items())) if block else ("default", {})
    args = dict(args or {}) if kind != "path" else args
    fam = family_of(config.family)
    rng = rng_for(config.run_seed, "initial-level")
    try:
        if kind == "default":
            layout = gw.empty_room(6) if config.family == GRID else nv.generate_nav_level(rng, n_obstacles=0)
        elif kind == "empty_room":
            if config.family != GRID:
                raise ConfigError("initial_level.empty_room is a gridworld option")
            layout = gw.empty_room(int(args.pop("size", 6)), **args)
        elif kind == "generate":
            if "seed" in args:
                rng = np.random.default_rng(int(args.pop("seed")))
            if config.family == GRID:
                layout = gw.generate_grid_level(rng, int(args.pop("size", 6)), int(args.pop("num_doors", 0)), **args)
            else:
                if "bounds" in args:
                    args["bounds"] = tuple(args["bounds"])
                layout = nv.generate_nav_level(rng, **args)
        elif kind == "layout":
            layout = fam.from_dict(args)
        elif kind == "path":
            doc = json.loads(Path(args).read_text())
            if "layouts" in doc:
                lvl = level_from_dict(doc)
                if lvl.family != config.family:
                    raise FamilyMismatch(f"initial level is {lvl.family}, run family is {config.family}")
                return lvl.renamed("theta0")
            layout = fam.from_dict(doc)
        else:
            raise ConfigError(f"unknown initial_level source {kind!r}")
    except TypeError as exc:
        raise ConfigError(f"initial_level.{kind}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"initial_level.path: {exc}") from None
    return make_level("theta0", (layout,), family=config.family)


def new_state(config: CoevolutionConfig, theta0: Level | None = None) -> RunState:
    theta0 = theta0 or initial_level(config)
    if theta0.family != config.family:
        raise FamilyMismatch(f"initial level is {theta0.family}, run family is {config.family}")
    if theta0.id != "theta0":
        theta0 = theta0.renamed("theta0")
    return RunState(config=config, levels=[theta0], matrix=PayoffMatrix((), ("theta0",), np.zeros((0, 1))))


# ------------------------------------------------------------ payoff matrix


def payoff(state: RunState, policy: PolicyHandle, level: Level, n: int | None = None) -> float:
    cfg = state.config
    return estimate_payoff(policy, level, n or cfg.n_episodes, cfg.run_seed, cfg.workers).mean_success


def update_matrix(state: RunState) -> RunState:
    """Evaluate every (policy, level) pair that has no cached entry.

    With ``config.reevaluate`` the cache is dropped first, so every entry is
    recomputed as in the literal loop.
    """
    if state.config.reevaluate:
        state.cache.clear()
    values = np.zeros((len(state.policies), len(state.levels)))
    for i, p in enumerate(state.policies):
        for j, lvl in enumerate(state.levels):
            key = (p.id, lvl.id)
            if key not in state.cache:
                state.cache[key] = payoff(state, p, lvl)
                state.evaluations += 1
            values[i, j] = state.cache[key]
    state.matrix = PayoffMatrix(
        tuple(p.id for p in state.policies), tuple(lvl.id for lvl in state.levels), values
    )
    return state


# ------------------------------------------------------------ iteration


def policy_base(state: RunState) -> PolicyHandle:
    cfg = state.config
    if not state.policies:
        if cfg.bootstrap_policy:
            return policy_from_dict({"id": "bootstrap", "family": cfg.family, **cfg.bootstrap_policy})
        return bootstrap_policy(cfg.family)
    if cfg.policy_base == "latest":
        return state.policies[-1]
    return state.policies[argmax_first(list(state.nash.strategy.weights))]


def _candidate_rows(t: int, kind: str, cands, scores, chosen: int) -> list[dict]:
    return [
        {"iteration": t, "kind": kind, "id": c.id, "parent": c.parent, "mutation": c.mutation,
         "score": float(s), "selected": i == chosen}
        for i, (c, s) in enumerate(zip(cands, scores))
    ]


def run_iteration(state: RunState, llm_client: LLMClient | None = None) -> dict:
    """Advance ``state`` by one iteration in place; returns a summary dict.

    The state is only modified once both designers have produced their
    candidates, so a GenerationExhausted leaves it at the previous iteration.
    """
    cfg = state.config
    t = state.completed
    n_sel = cfg.selection_n
    newest = state.levels[-1]

    base = policy_base(state)
    base_score = payoff(state, base, newest, n_sel)
    pcands = propose_policies(
        base, newest, cfg.K, cfg.designer("policy"), derive_seed(cfg.run_seed, "policy-design", t),
        base_score, n_sel, id_prefix=f"pi{t}.c", llm_client=llm_client,
    )
    handles = [c for c, _ in pcands]
    pscores = score_policies(handles, newest, n_sel, cfg.run_seed, cfg.workers)
    pi = argmax_first(pscores)
    winner = handles[pi].renamed(f"pi{t}")
    precord = MutationRecord(base.id, winner.id, "policy", pcands[pi][1].description, pcands[pi][1].mode)

    policies = state.policies + [winner]
    trial = RunState(cfg, state.levels, policies, cache=dict(state.cache))
    update_matrix(trial)
    nash = solve_nash(trial.matrix)

    lcands = propose_levels(
        newest, nash, cfg.K, cfg.designer("env"), derive_seed(cfg.run_seed, "level-design", t),
        id_prefix=f"theta{t + 1}.c", policies=policies, llm_client=llm_client,
        base_score=float(mixture_column_values(trial.matrix, nash.strategy)[-1]),
    )
    lvls = [lvl for lvl, _ in lcands]
    lscores = mixture_payoffs(lvls, policies, nash, n_sel, cfg.run_seed, cfg.workers)
    li = argmin_first(lscores)
    new_level = lvls[li].renamed(f"theta{t + 1}")
    lrecord = MutationRecord(newest.id, new_level.id, "level", lcands[li][1].description, lcands[li][1].mode)

    # commit
    state.evaluations += trial.evaluations
    state.cache = trial.cache
    state.policies = policies
    state.nash_history.append(nash)
    state.levels = state.levels + [new_level]
    update_matrix(state)
    state.mutations += [precord.to_dict() | {"iteration": t}, lrecord.to_dict() | {"iteration": t}]
    state.candidates += _candidate_rows(t, "policy", handles, pscores, pi)
    state.candidates += _candidate_rows(t, "level", lvls, lscores, li)
    state.completed += 1
    return {
        "iteration": t,
        "policy": winner.id,
        "policy_mutation": precord.description,
        "policy_score": float(pscores[pi]),
        "level": new_level.id,
        "level_mutation": lrecord.description,
        "level_score": float(lscores[li]),
        "nash_value": nash.value,
        "nash_support": [policies[i].id for i in nash.support],
    }


def make_llm_client(config: CoevolutionConfig, out_dir=None) -> LLMClient | None:
    if not config.uses_llm:
        return None
    key = api_key_from_env()
    llm_cfg = config.policy_designer.llm if config.policy_designer.mode == "llm" else config.env_designer.llm
    return LLMClient(llm_cfg, key, log_dir=Path(out_dir) / "llm" if out_dir else None)


def _advance(state: RunState, T: int, out_dir, progress, llm_client) -> RunState:
    while state.completed < T:
        try:
            summary = run_iteration(state, llm_client)
        except GenerationExhausted as exc:
            if out_dir is not None:
                write_manifest(state, out_dir, status="aborted", reason=str(exc))
            aborted = RunAborted(f"iteration {state.completed}: {exc}")
            aborted.state = state
            raise aborted from exc
        if out_dir is not None:
            write_checkpoint(state, out_dir)
        if progress is not None:
            progress(summary)
    if out_dir is not None:
        write_manifest(state, out_dir, status="complete")
    return state


def _locked(out_dir):
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return filelock.FileLock(str(path / ".lock"), timeout=0)


def run(config: CoevolutionConfig, out_dir=None, progress=None, llm_client=None,
        theta0: Level | None = None) -> RunState:
    """Run ``config.T`` iterations from scratch; checkpoints go to ``out_dir`` if given."""
    if llm_client is None:
        llm_client = make_llm_client(config, out_dir)
    state = new_state(config, theta0)
    if out_dir is None:
        return _advance(state, config.T, None, progress, llm_client)
    try:
        with _locked(out_dir):
            write_manifest(state, out_dir, status="running")
            return _advance(state, config.T, out_dir, progress, llm_client)
    except filelock.Timeout:
        raise ConfigError(f"run directory {out_dir} is locked by another process") from None


def resume(out_dir, T: int | None = None, checkpoint: int | None = None, progress=None,
           llm_client=None) -> RunState:
    """Continue a run from its latest (or a given) checkpoint up to ``T`` iterations."""
    state = load_state(out_dir, checkpoint)
    if T is not None and T != state.config.T:
        state.config = state.config.replace(T=T)
    if llm_client is None:
        llm_client = make_llm_client(state.config, out_dir)
    try:
        with _locked(out_dir):
            return _advance(state, state.config.T, out_dir, progress, llm_client)
    except filelock.Timeout:
        raise ConfigError(f"run directory {out_dir} is locked by another process") from None


# ------------------------------------------------------------ strategies


@dataclass(frozen=True)
class StrategyEval:
    kind: str
    iteration: int
    level_ids: tuple
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def min(self) -> float:
        return float(self.values.min())


def strategy_weights(state: RunState, kind: str, k: int) -> np.ndarray:
    """Weights over policies 0..k for the given strategy at iteration k."""
    if kind not in STRATEGY_KINDS:
        raise ValueError(f"unknown strategy {kind!r}; expected one of {STRATEGY_KINDS}")
    if not 0 <= k <= state.iteration:
        raise IterationOutOfRange(f"iteration {k} not in 0..{state.iteration}")
    if kind == "greedy":
        w = np.zeros(k + 1)
        w[k] = 1.0
    elif kind == "uniform":
        w = np.full(k + 1, 1.0 / (k + 1))
    else:
        w = np.asarray(state.nash_history[k].strategy.weights, dtype=float)
    return w


def evaluate_strategy(state: RunState, kind: str, k: int) -> StrategyEval:
    """Expected success of a strategy on every archive level theta0..thetak."""
    w = strategy_weights(state, kind, k)
    sub = state.matrix.values[: k + 1, : k + 1]
    if kind == "greedy":
        vals = sub[k].copy()
    elif kind == "uniform":
        vals = sub.mean(axis=0)
    else:
        vals = w @ sub
    return StrategyEval(kind, k, state.matrix.col_ids[: k + 1], np.asarray(vals, dtype=float))


def strategy_table(state: RunState, kinds=STRATEGY_KINDS) -> list[StrategyEval]:
    return [evaluate_strategy(state, kind, k) for k in range(state.completed) for kind in kinds]


def strategy_eval_csv(rows: list[StrategyEval], level_ids) -> str:
    lines = [",".join(["iteration", "kind", "mean", "min", *level_ids])]
    for r in rows:
        per = [format_entry(v) for v in r.values] + [""] * (len(level_ids) - len(r.values))
        lines.append(",".join([str(r.iteration), r.kind, format_entry(r.mean), format_entry(r.min), *per]))
    return "\n".join(lines) + "\n"


def generalization_eval(state: RunState, kind: str, held_out, k: int | None = None,
                        n_episodes: int | None = None) -> list[tuple[str, float]]:
    """Mean success on held-out levels; mixtures sample one policy per episode."""
    k = state.iteration if k is None else k
    w = strategy_weights(state, kind, k)
    n = n_episodes or state.config.n_episodes
    out = []
    for lvl in held_out:
        if lvl.family != state.family:
            raise FamilyMismatch(f"held-out level {lvl.id} is {lvl.family}, run family is {state.family}")
        rng = rng_for(state.run_seed, "generalization", kind, k, lvl.id)
        picks = rng.choice(len(w), size=n, p=w / w.sum())
        jobs = [
            (state.policies[int(i)], lvl, episode_seed(state.run_seed, f"mixture:{kind}:{k}", lvl.id, e))
            for e, i in enumerate(picks)
        ]
        results = run_many(jobs, state.config.workers)
        out.append((lvl.id, sum(r.success for r in results) / n))
    return out


@dataclass(frozen=True)
class ZeroShotResult:
    best_payoff: float
    best_policy: PolicyHandle
    mutations_used: int
    trajectory: tuple


def zero_shot_ablation(config: CoevolutionConfig, hardest_level: Level, k_mutations: int,
                       initial: PolicyHandle | None = None, llm_client=None) -> ZeroShotResult:
    """Mutate policies against one fixed level, without a curriculum.

    Rounds of up to K candidates are drawn from the current incumbent, which is
    replaced only by a strictly better candidate, until ``k_mutations``
    candidates have been spent or the level is solved.
    """
    if hardest_level.family != config.family:
        raise FamilyMismatch(f"level {hardest_level.id} is {hardest_level.family}, config is {config.family}")
    n = config.selection_n
    incumbent = initial or bootstrap_policy(config.family)
    best = estimate_payoff(incumbent, hardest_level, n, config.run_seed, config.workers).mean_success
    used, rnd, traj = 0, 0, [best]
    while used < k_mutations and best < 1.0:
        m = min(config.K, k_mutations - used)
        cands = propose_policies(
            incumbent, hardest_level, m, config.designer("policy"), derive_seed(config.run_seed, "zero-shot", rnd),
            best, n, id_prefix=f"zs{rnd}.c", llm_client=llm_client,
        )
        handles = [c for c, _ in cands]
        scores = score_policies(handles, hardest_level, n, config.run_seed, config.workers)
        used += m
        rnd += 1
        i = argmax_first(scores)
        if scores[i] > best:
            incumbent, best = handles[i], scores[i]
        traj.append(best)
    return ZeroShotResult(best, incumbent, used, tuple(traj))


# ------------------------------------------------------------ persistence


def state_to_dict(state: RunState) -> dict:
    return {
        "state_version": STATE_VERSION,
        "config": config_to_dict(state.config),
        "completed_iterations": state.completed,
        "levels": [level_to_dict(lvl) for lvl in state.levels],
        "policies": [policy_to_dict(p) for p in state.policies],
        "cache": [[pid, lid, v] for (pid, lid), v in state.cache.items()],
        "nash": [
            {"iteration": k, "value": s.value, "weights": [float(x) for x in s.strategy.weights]}
            for k, s in enumerate(state.nash_history)
        ],
        "mutations": state.mutations,
        "evaluations": state.evaluations,
    }


def state_from_dict(doc: dict) -> RunState:
    config = config_from_dict(doc["config"])
    state = RunState(config=config)
    state.levels = [level_from_dict(d, verify=False) for d in doc["levels"]]
    state.policies = [policy_from_dict(d) for d in doc["policies"]]
    state.cache = {(pid, lid): float(v) for pid, lid, v in doc["cache"]}
    state.mutations = list(doc.get("mutations", []))
    state.completed = int(doc["completed_iterations"])
    state.evaluations = int(doc.get("evaluations", 0))
    reevaluate = config.reevaluate
    state.config = config.replace(reevaluate=False)
    update_matrix(state)
    state.config = config.replace(reevaluate=reevaluate)
    # the solver is deterministic, so each iteration's solution is recomputed exactly
    state.nash_history = [solve_nash(state.matrix.submatrix(k + 1, k + 1)) for k in range(state.completed)]
    return state


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _versions() -> dict:
    try:
        from importlib.metadata import version
        pkg = version("artifact")
    except Exception:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "package": pkg, "platform": sys.platform}


def write_manifest(state: RunState, out_dir, status: str, reason: str | None = None) -> None:
    doc = {
        "manifest_version": 1,
        "config": config_to_dict(state.config),
        "run_seed": state.run_seed,
        "versions": _versions(),
        "status": status,
        "completed_iterations": state.completed,
        "policies": [p.id for p in state.policies],
        "levels": [lvl.id for lvl in state.levels],
        "indexing": "iteration t appends pi{t} (best response on theta{t}) then theta{t+1}",
        # the level appended by the last iteration has no responding policy yet
        "dangling_level": state.levels[-1].id if state.completed else None,
        "final_nash_iteration": state.iteration if state.completed else None,
    }
    if reason:
        doc["abort_reason"] = reason
    _write(Path(out_dir) / "manifest.json", json.dumps(doc, indent=2))


def nash_csv(state: RunState) -> str:
    ids = [p.id for p in state.policies]
    lines = [",".join(["iteration", "value", *ids])]
    for k, sol in enumerate(state.nash_history):
        w = [format_entry(x) for x in sol.strategy.weights] + [format_entry(0.0)] * (len(ids) - len(sol.strategy))
        lines.append(",".join([str(k), format_entry(sol.value), *w]))
    return "\n".join(lines) + "\n"


def write_checkpoint(state: RunState, out_dir) -> None:
    out = Path(out_dir)
    k = state.iteration
    doc = json.dumps(state_to_dict(state), indent=1)
    payoff_text = matrix_to_csv(state.matrix)
    ck = out / "checkpoints" / f"{k:04d}"
    _write(ck / "payoff.csv", payoff_text)
    _write(ck / "state.json", doc)
    for lvl in state.levels:
        _write(out / "levels" / f"{lvl.id}.json", json.dumps(level_to_dict(lvl), indent=1))
    for p in state.policies:
        _write(out / "policies" / f"{p.id}.json", json.dumps(policy_to_dict(p), indent=1))
        if p.kind == "external":
            _write(out / "policies" / f"{p.id}.py", p.source)
    _write(out / "mutations.jsonl", "".join(json.dumps(m) + "\n" for m in state.mutations))
    _write(out / "candidates.jsonl", "".join(json.dumps(c) + "\n" for c in state.candidates))
    _write(out / "payoff.csv", payoff_text)
    _write(out / "nash.csv", nash_csv(state))
    _write(out / "strategy_eval.csv", strategy_eval_csv(strategy_table(state), state.matrix.col_ids))
    _write(out / "state.json", doc)
    write_manifest(state, out, status="running")


def load_state(out_dir, checkpoint: int | None = None) -> RunState:
    out = Path(out_dir)
    path = out / "state.json" if checkpoint is None else out / "checkpoints" / f"{checkpoint:04d}" / "state.json"
    if not path.exists():
        raise MissingCheckpoint(f"no checkpoint at {path}")
    state = state_from_dict(json.loads(path.read_text()))
    cpath = out / "candidates.jsonl"
    if cpath.exists():
        rows = [json.loads(line) for line in cpath.read_text().splitlines() if line.strip()]
        state.candidates = [r for r in rows if r["iteration"] < state.completed]
    return state


__all__ = [
    "RunState", "StrategyEval", "ZeroShotResult", "STRATEGY_KINDS", "initial_level", "new_state", "update_matrix",
    "run_iteration", "run", "resume", "evaluate_strategy", "strategy_table", "generalization_eval",
    "zero_shot_ablation", "load_state", "write_checkpoint", "state_to_dict", "state_from_dict",
]
