"""Episode execution, payoff estimation and the external policy protocol.

External policies run as child processes speaking line-delimited JSON on
stdin/stdout. One process serves one episode:

    engine -> {"protocol_version": 1, "family", "task_description", "observation_spec",
               "action_spec", "max_steps"}
    policy -> {"ready": true}
    engine -> {"step": k, "observation": {...}}      policy -> {"action": ...}   (repeated)
    engine -> {"done": true, "success": bool}
"""

from __future__ import annotations

import json
import os
import queue
import subprocess
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

from .errors import FamilyMismatch, LaunchFailure
from .level import Level, family_of
from .policies import PolicyHandle, builtin_policy_act
from .seeding import episode_seed

PROTOCOL_VERSION = 1
DEFAULT_STEP_TIMEOUT_MS = 1000
DEFAULT_STARTUP_TIMEOUT_MS = 10_000
DEFAULT_EPISODES = 100

NONE, CRASH, TIMEOUT, PROTOCOL = "none", "crash", "timeout", "protocol_violation"
FAILURE_KINDS = (NONE, CRASH, TIMEOUT, PROTOCOL)


@dataclass(frozen=True)
class RolloutResult:
    success: int
    steps_used: int
    shaped_return: float
    seed: int
    failure_kind: str = NONE
    layout_index: int = 0

    def __post_init__(self):
        if self.success not in (0, 1):
            raise ValueError("success must be 0 or 1")
        if self.failure_kind not in FAILURE_KINDS:
            raise ValueError(f"unknown failure kind {self.failure_kind!r}")
        if self.success and self.failure_kind != NONE:
            raise ValueError("a successful episode cannot carry a failure")


@dataclass(frozen=True)
class PayoffEstimate:
    mean_success: float
    n_episodes: int
    seeds: tuple
    successes: int
    failures: dict

    @property
    def fraction(self) -> tuple[int, int]:
        return self.successes, self.n_episodes


def _check_family(policy: PolicyHandle, level: Level) -> None:
    if policy.family != level.family:
        raise FamilyMismatch(f"policy {policy.id} ({policy.family}) cannot play level {level.id} ({level.family})")


# ------------------------------------------------------------------ builtin


@lru_cache(maxsize=65_536)
def _builtin_outcome(program, family: str, layout) -> tuple[int, int, float]:
    fam = family_of(family)
    task = fam.task(layout)
    state = fam.reset(layout)
    while not state.terminated:
        obs = fam.observe(state, layout)
        state = fam.step(state, layout, builtin_policy_act(program, obs, task))
    success = int(state.outcome == "goal")
    return success, state.steps, fam.shaped(bool(success), state.steps, layout)


# ----------------------------------------------------------------- external


class _Channel:
    """Child process plus a reader thread feeding stdout lines into a queue."""

    def __init__(self, command, workdir):
        try:
            self.proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
                cwd=workdir,
            )
        except OSError as exc:
            raise LaunchFailure(f"cannot launch {command[0]!r}: {exc}") from exc
        self.lines: queue.Queue = queue.Queue()
        self.reader = threading.Thread(target=self._pump, daemon=True)
        self.reader.start()

    def _pump(self):
        try:
            for line in self.proc.stdout:
                self.lines.put(line)
        except (OSError, ValueError):
            pass
        self.lines.put(None)

    def send(self, msg: dict) -> bool:
        try:
            self.proc.stdin.write(json.dumps(msg) + "\n")
            self.proc.stdin.flush()
            return True
        except (OSError, ValueError):
            return False

    def receive(self, timeout_s: float):
        """Next line, None on EOF, or raises queue.Empty on timeout."""
        return self.lines.get(timeout=timeout_s)

    def close(self):
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=0.2)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        self.reader.join(timeout=1.0)
        if self.proc.stdout:
            self.proc.stdout.close()


class _Fail(Exception):
    def __init__(self, kind):
        self.kind = kind


def _read_json(chan: _Channel, timeout_s: float) -> dict:
    try:
        line = chan.receive(timeout_s)
    except queue.Empty:
        raise _Fail(TIMEOUT) from None
    if line is None:
        raise _Fail(CRASH)
    try:
        msg = json.loads(line)
    except ValueError:
        raise _Fail(PROTOCOL) from None
    if not isinstance(msg, dict):
        raise _Fail(PROTOCOL)
    return msg


def _external_episode(policy: PolicyHandle, level: Level, layout, seed: int, startup_timeout_ms: int):
    fam = family_of(level.family)
    with tempfile.TemporaryDirectory(prefix="coevo-policy-") as workdir:
        src_path = os.path.join(workdir, "policy_source.py")
        with open(src_path, "w") as fh:
            fh.write(policy.source or "")
        command = [part.replace("{source_path}", src_path) for part in policy.command]
        chan = _Channel(command, workdir)
        state = fam.reset(layout)
        failure = NONE
        try:
            init = {
                "protocol_version": PROTOCOL_VERSION,
                "family": level.family,
                "task_description": fam.task_description(layout),
                "observation_spec": fam.observation_spec(layout),
                "action_spec": fam.action_spec(layout),
                "max_steps": layout.max_steps,
                "task": fam.task(layout),
                "seed": seed,
            }
            if not chan.send(init):
                raise _Fail(CRASH)
            ready = _read_json(chan, startup_timeout_ms / 1000)
            if not ready.get("ready"):
                raise _Fail(PROTOCOL)
            step_timeout = policy.step_timeout_ms / 1000
            while not state.terminated:
                obs = fam.observe(state, layout)
                if not chan.send({"step": state.steps, "observation": fam.message(obs)}):
                    raise _Fail(CRASH)
                reply = _read_json(chan, step_timeout)
                if "action" not in reply:
                    raise _Fail(PROTOCOL)
                action = fam.parse_action(reply["action"])
                if action is None:
                    raise _Fail(PROTOCOL)
                state = fam.step(state, layout, action)
            chan.send({"done": True, "success": state.outcome == "goal"})
        except _Fail as f:
            failure = f.kind
            chan.send({"done": True, "success": False})
        finally:
            chan.close()
    success = int(failure == NONE and state.outcome == "goal")
    return success, state.steps, fam.shaped(bool(success), state.steps, layout), failure


# ------------------------------------------------------------------ public


def run_episode(policy: PolicyHandle, level: Level, seed: int,
                startup_timeout_ms: int = DEFAULT_STARTUP_TIMEOUT_MS) -> RolloutResult:
    """Play one episode; the seed selects the level's layout."""
    _check_family(policy, level)
    idx = seed % len(level.layouts)
    layout = level.layouts[idx]
    if policy.kind == "builtin":
        success, steps, shaped = _builtin_outcome(policy.program, level.family, layout)
        return RolloutResult(success, steps, shaped, seed, NONE, idx)
    success, steps, shaped, failure = _external_episode(policy, level, layout, seed, startup_timeout_ms)
    return RolloutResult(success, steps, shaped, seed, failure, idx)


def episode_seeds(policy_id: str, level_id: str, n: int, base_seed: int) -> list[int]:
    return [episode_seed(base_seed, policy_id, level_id, i) for i in range(n)]


def estimate_payoff(policy: PolicyHandle, level: Level, n: int = DEFAULT_EPISODES, base_seed: int = 0,
                    workers: int = 1) -> PayoffEstimate:
    """Mean success over ``n`` episodes with per-episode derived seeds."""
    if n < 1:
        raise ValueError("n must be at least 1")
    _check_family(policy, level)
    seeds = episode_seeds(policy.id, level.id, n, base_seed)
    if policy.kind == "builtin":
        results = [run_episode(policy, level, s) for s in seeds]
    else:
        results = run_many([(policy, level, s) for s in seeds], workers)
    successes = sum(r.success for r in results)
    failures: dict = {}
    for r in results:
        if r.failure_kind != NONE:
            failures[r.failure_kind] = failures.get(r.failure_kind, 0) + 1
    return PayoffEstimate(successes / n, n, tuple(seeds), successes, failures)


def run_many(jobs, workers: int = 1) -> list[RolloutResult]:
    """Run (policy, level, seed) jobs, possibly concurrently; results keep job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [run_episode(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: run_episode(*job), jobs))


def liveness_bound_s(policy: PolicyHandle, layout, dynamics_s: float = 0.01,
                     startup_timeout_ms: int = DEFAULT_STARTUP_TIMEOUT_MS) -> float:
    """Wall-time ceiling for one external episode."""
    return startup_timeout_ms / 1000 + layout.max_steps * (policy.step_timeout_ms / 1000 + dynamics_s) + 1.0
