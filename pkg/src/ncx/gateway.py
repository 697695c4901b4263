"""Pluggable model-completion client: prompt templates, a live HTTP
backend, and a deterministic record/replay backend for tests.

Replay fixtures are JSON lines {"template": ..., "prompt_sha256": ...,
"reply": ...}; the key is a content hash of the rendered prompt, so editing
a template loudly invalidates stale fixtures instead of silently serving
them.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import requests

from .errors import (
    ContractViolationError,
    FixtureMissError,
    GatewayError,
    MissingPlaceholderError,
)

PLACEHOLDER = "$input$"

TEMPLATE_IDS = (
    "math_query",
    "convex_query",
    "code_query",
    "execute_code_query",
    "feasibility_check_query",
    "repair_query",
)

_CONTRACTS = {
    "math_query": "DSL",
    "convex_query": "DSL",
    "code_query": "free-text",
    "execute_code_query": "free-text",
    "feasibility_check_query": "binary01",
    "repair_query": "JSON",
}

ENV_URL = "NC2C_API_URL"
ENV_KEY = "NC2C_API_KEY"
ENV_MODEL = "NC2C_MODEL"


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    user_text: str
    system_text: str | None = None
    contract: str = "free-text"  # DSL | JSON | free-text | binary01

    def __post_init__(self):
        count = self.user_text.count(PLACEHOLDER)
        if count != 1:
            raise MissingPlaceholderError(self.id, count)


def render_prompt(template: PromptTemplate, input_text: str) -> str:
    """Exactly one substitution of the placeholder, nothing else changed."""
    return template.user_text.replace(PLACEHOLDER, input_text, 1)


def _read_template_file(name: str) -> str:
    return resources.files("ncx.templates").joinpath(name).read_text(encoding="utf-8")


def load_templates() -> dict[str, PromptTemplate]:
    """The built-in template set, validated at load time."""
    out: dict[str, PromptTemplate] = {}
    system_for = {"convex_query": _read_template_file("convex_example.txt")}
    for tid in TEMPLATE_IDS:
        out[tid] = PromptTemplate(
            id=tid,
            user_text=_read_template_file(f"{tid}.txt"),
            system_text=system_for.get(tid),
            contract=_CONTRACTS[tid],
        )
    return out


def prompt_key(template_id: str, rendered: str) -> tuple[str, str]:
    digest = hashlib.sha256(rendered.encode("utf-8")).hexdigest()
    return template_id, digest


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


def extract_fenced(reply: str) -> str | None:
    """Payload of the first fenced code block, if any."""
    match = _FENCE_RE.search(reply)
    return match.group(1).strip() if match else None


def normalize_binary(reply: str) -> str:
    """Strip decoration and reduce a yes/no style reply to "0" or "1"."""
    cleaned = reply.strip().strip("`'\".")
    if cleaned in ("0", "1"):
        return cleaned
    raise ContractViolationError("binary01", reply)


def _check_contract(tag: str, reply: str) -> None:
    if tag == "binary01":
        normalize_binary(reply)
        return
    if tag in ("DSL", "JSON"):
        if extract_fenced(reply) is None:
            raise ContractViolationError(tag, reply)
        return
    # free-text: anything non-empty
    if not reply.strip():
        raise ContractViolationError(tag, reply)


@dataclass(frozen=True)
class GatewayConfig:
    mode: str = "replay"  # live | replay | record
    endpoint: str | None = None
    api_key_env: str = ENV_KEY
    model: str | None = None
    timeout: float = 30.0
    max_retries: int = 2
    fixture_path: str | Path | None = None

    def __post_init__(self):
        if self.mode not in ("live", "replay", "record"):
            raise ValueError(f"unknown gateway mode {self.mode!r}")
        if self.mode in ("replay", "record") and self.fixture_path is None:
            raise ValueError(f"{self.mode} mode requires a fixture path")
        if self.mode in ("live", "record") and not self.endpoint:
            raise ValueError(f"{self.mode} mode requires an endpoint")

    @classmethod
    def from_env(cls, mode: str = "live",
                 fixture_path: str | Path | None = None) -> GatewayConfig:
        return cls(
            mode=mode,
            endpoint=os.environ.get(ENV_URL),
            model=os.environ.get(ENV_MODEL),
            fixture_path=fixture_path,
        )


@dataclass(frozen=True)
class TranscriptEntry:
    template_id: str
    prompt_sha256: str
    reply: str
    latency: float


@dataclass
class Transcript:
    entries: list[TranscriptEntry] = field(default_factory=list)

    def append(self, entry: TranscriptEntry) -> None:
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)


def write_fixture(path: str | Path, entries) -> None:
    """Write replay entries: iterable of (template_id, rendered_prompt, reply)."""
    with open(path, "w", encoding="utf-8") as fh:
        for template_id, rendered, reply in entries:
            _, digest = prompt_key(template_id, rendered)
            fh.write(json.dumps(
                {"template": template_id, "prompt_sha256": digest, "reply": reply}
            ) + "\n")


class ModelGateway:
    """Completion client; safe for concurrent complete() calls."""

    def __init__(self, cfg: GatewayConfig, templates: dict[str, PromptTemplate] | None = None):
        self.cfg = cfg
        self.templates = templates or load_templates()
        self.transcript = Transcript()
        self._lock = threading.Lock()
        self._fixtures: dict[tuple[str, str], str] = {}
        if cfg.mode == "replay":
            self._fixtures = self._load_fixtures(cfg.fixture_path)

    @staticmethod
    def _load_fixtures(path: str | Path) -> dict[tuple[str, str], str]:
        out: dict[tuple[str, str], str] = {}
        fixture = Path(path)
        if not fixture.exists():
            return out
        with open(fixture, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                doc = json.loads(line)
                out[(doc["template"], doc["prompt_sha256"])] = doc["reply"]
        return out

    def template(self, template_id: str) -> PromptTemplate:
        try:
            return self.templates[template_id]
        except KeyError:
            raise GatewayError(f"unknown template {template_id!r}") from None

    def complete(self, template: PromptTemplate | str, input_text: str) -> str:
        if isinstance(template, str):
            template = self.template(template)
        rendered = render_prompt(template, input_text)
        key = prompt_key(template.id, rendered)
        started = time.perf_counter()
        if self.cfg.mode == "replay":
            try:
                reply = self._fixtures[key]
            except KeyError:
                raise FixtureMissError(key) from None
        else:
            reply = self._live_call(template, rendered)
            if self.cfg.mode == "record":
                with self._lock:
                    with open(self.cfg.fixture_path, "a", encoding="utf-8") as fh:
                        fh.write(json.dumps({
                            "template": template.id,
                            "prompt_sha256": key[1],
                            "reply": reply,
                        }) + "\n")
        _check_contract(template.contract, reply)
        with self._lock:
            self.transcript.append(TranscriptEntry(
                template.id, key[1], reply, time.perf_counter() - started))
        return reply

    def _live_call(self, template: PromptTemplate, rendered: str) -> str:
        key = os.environ.get(self.cfg.api_key_env)
        if not key:
            raise GatewayError(
                f"API key environment variable {self.cfg.api_key_env} is not set"
            )
        messages = []
        if template.system_text:
            messages.append({"role": "system", "content": template.system_text})
        messages.append({"role": "user", "content": rendered})
        payload = {"model": self.cfg.model, "messages": messages}
        headers = {"Authorization": f"Bearer {key}"}
        last_error = "no attempts made"
        for _ in range(self.cfg.max_retries + 1):
            try:
                response = requests.post(
                    self.cfg.endpoint, json=payload, headers=headers,
                    timeout=self.cfg.timeout,
                )
            except requests.RequestException as exc:
                last_error = type(exc).__name__
                continue
            if response.status_code >= 500:
                last_error = f"server status {response.status_code}"
                continue
            if response.status_code != 200:
                raise GatewayError(f"endpoint returned status {response.status_code}")
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise GatewayError(f"malformed completion payload: {exc}") from None
        raise GatewayError(f"request failed after retries: {last_error}")
