"""Host a generated ``policy`` function behind the line protocol.

Usage: ``python -m coevo.policy_runner SOURCE.py``

Grid sources define ``policy(obs, agent_pos, agent_dir) -> int`` where ``obs``
is the (n, n, 3) tile array; a module-level ``carrying`` variable is refreshed
before each call. Navigation sources define ``policy(obs) -> [dx, dy]``.
Any exception ends the process, which the engine records as a crash.
"""

from __future__ import annotations

import json
import sys

import numpy as np


def load_policy(path: str) -> tuple[dict, object]:
    with open(path) as fh:
        source = fh.read()
    namespace: dict = {"np": np, "numpy": np, "__name__": "generated_policy"}
    exec(compile(source, path, "exec"), namespace)
    fn = namespace.get("policy")
    if not callable(fn):
        raise SystemExit("source does not define policy()")
    return namespace, fn


def _to_jsonable(action):
    if isinstance(action, np.ndarray):
        action = action.tolist()
    if isinstance(action, (list, tuple)):
        return [float(v) if isinstance(v, (np.floating, np.integer)) else v for v in action]
    if isinstance(action, np.integer):
        return int(action)
    if isinstance(action, np.floating):
        return float(action)
    return action


def serve(path: str, stdin=sys.stdin, stdout=sys.stdout) -> int:
    namespace, fn = load_policy(path)

    def send(msg):
        stdout.write(json.dumps(msg) + "\n")
        stdout.flush()

    family = None
    for line in stdin:
        msg = json.loads(line)
        if "protocol_version" in msg:
            family = msg.get("family")
            namespace["task"] = msg.get("task", {})
            send({"ready": True})
        elif "observation" in msg:
            obs = msg["observation"]
            if family == "gridworld":
                namespace["carrying"] = obs.get("carrying", -1)
                action = fn(np.asarray(obs["image"], dtype=np.int64), tuple(obs["agent_pos"]), int(obs["agent_dir"]))
            else:
                action = fn(obs)
            send({"action": _to_jsonable(action)})
        elif msg.get("done"):
            break
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m coevo.policy_runner SOURCE.py", file=sys.stderr)
        return 2
    return serve(argv[0])


if __name__ == "__main__":
    raise SystemExit(main())
