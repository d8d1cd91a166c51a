"""Chat-completions client, prompt templates and response extraction."""

from __future__ import annotations

import ast
import json
import os
import re
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import httpx

from .errors import ConfigError, CoevoError

API_KEY_ENV = "LLM_API_KEY"
PLACEHOLDERS = ("ActualScore", "Policy", "Weights", "Policies", "obs_dict")


class LLMError(CoevoError):
    """Transport failed after all retries or the reply had no content."""


@dataclass(frozen=True)
class LLMConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o-mini"
    temperature: float = 0.7
    template: str | None = None  # template id; family default when None
    timeout_s: float = 120.0


def api_key_from_env(var: str = API_KEY_ENV) -> str:
    key = os.environ.get(var, "").strip()
    if not key:
        raise ConfigError(f"llm designer mode needs the {var} environment variable")
    return key


def load_template(template_id: str) -> str:
    try:
        return resources.files("coevo.prompts").joinpath(f"{template_id}.txt").read_text()
    except FileNotFoundError:
        raise ConfigError(f"unknown prompt template {template_id!r}") from None


def fill_template(template: str, **values) -> str:
    """Substitute ``{Name}`` placeholders; other braces are left alone."""
    out = template
    for name, value in values.items():
        out = out.replace("{" + name + "}", str(value))
    return out


class LLMClient:
    """Sequential chat-completions caller with exponential backoff.

    Every request/response pair is written to ``log_dir`` when one is given.
    """

    def __init__(self, config: LLMConfig, api_key: str, transport: httpx.BaseTransport | None = None,
                 log_dir=None, attempts: int = 3, backoff_s: float = 1.0, sleep=time.sleep):
        self.config = config
        self.api_key = api_key
        self.client = httpx.Client(transport=transport, timeout=config.timeout_s)
        self.log_dir = Path(log_dir) if log_dir else None
        self.attempts = attempts
        self.backoff_s = backoff_s
        self.sleep = sleep
        self.calls = 0

    def _log(self, tag: str, payload: dict, reply) -> None:
        if self.log_dir is None:
            return
        self.log_dir.mkdir(parents=True, exist_ok=True)
        path = self.log_dir / f"{self.calls:04d}_{tag}.json"
        path.write_text(json.dumps({"request": payload, "response": reply}, indent=1))

    def complete(self, prompt: str, tag: str = "request") -> str:
        payload = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        self.calls += 1
        last = None
        for attempt in range(self.attempts):
            try:
                resp = self.client.post(self.config.endpoint, json=payload, headers=headers)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                else:
                    resp.raise_for_status()
                    body = resp.json()
                    self._log(tag, payload, body)
                    try:
                        return body["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError):
                        raise LLMError("reply has no choices[0].message.content") from None
            except httpx.TransportError as exc:
                last = repr(exc)
            except httpx.HTTPStatusError as exc:
                self._log(tag, payload, {"error": str(exc)})
                raise LLMError(str(exc)) from None
            if attempt + 1 < self.attempts:
                self.sleep(self.backoff_s * 2**attempt)
        self._log(tag, payload, {"error": last})
        raise LLMError(f"request failed after {self.attempts} attempts: {last}")

    def close(self):
        self.client.close()


_FENCE = re.compile(r"```(?:[A-Za-z0-9_+-]*)\n(.*?)```", re.DOTALL)


def extract_policy_source(text: str) -> str | None:
    """Pull a program defining ``policy`` out of a reply, or None."""
    blocks = _FENCE.findall(text) or [text]
    for block in blocks:
        idx = block.find("def policy")
        if idx < 0:
            continue
        # keep imports that precede the function
        head = block[:idx]
        lines = [ln for ln in head.splitlines() if ln.startswith(("import ", "from "))]
        src = "\n".join(lines + [block[idx:]]).strip() + "\n"
        try:
            tree = ast.parse(src)
        except SyntaxError:
            continue
        if any(isinstance(n, ast.FunctionDef) and n.name == "policy" for n in tree.body):
            return src
    return None


def extract_json_object(text: str) -> dict | None:
    """First JSON object in a reply (fenced or bare), or None."""
    candidates = _FENCE.findall(text) + [text]
    decoder = json.JSONDecoder()
    for chunk in candidates:
        for i, ch in enumerate(chunk):
            if ch != "{":
                continue
            try:
                obj, _ = decoder.raw_decode(chunk[i:])
            except ValueError:
                continue
            if isinstance(obj, dict):
                return obj
    return None
