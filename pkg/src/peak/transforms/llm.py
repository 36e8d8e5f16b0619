"""LLM client contract, the deterministic mock, and the live HTTP client.

Every client maps an (assembled prompt, call coordinates) pair to raw text.
The mock resolves responses from fixture files keyed by transformation,
pass index, region, and optionally attempt and input-region hash, which
makes the whole pipeline runnable offline and byte-deterministic. The live
client speaks a chat-completions style HTTP endpoint configured through
environment variables, with request/response audit logging (secrets never
reach the log).
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path

from ..errors import LlmClientError, MockFixtureMissing

ENV_URL = "PEAK_LLM_URL"
ENV_MODEL = "PEAK_LLM_MODEL"
ENV_TOKEN = "PEAK_LLM_TOKEN"
ENV_INFLIGHT = "PEAK_LLM_MAX_INFLIGHT"


@dataclass(frozen=True)
class LlmRequest:
    system: str
    user: str
    model_tag: str = ""


@dataclass(frozen=True)
class LlmResponse:
    raw_text: str


@dataclass(frozen=True)
class CallMeta:
    """Coordinates of one LLM call inside a transformation application."""

    transformation: str
    pass_index: int
    region: str
    attempt: int
    input_region_hash: str  # sha-256 of the region text being replaced, 12 hex chars


def region_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:12]


class LlmClient:
    def complete(self, request: LlmRequest, meta: CallMeta) -> LlmResponse:
        raise NotImplementedError

    def start_trial(self, index: int) -> None:
        """Reliability-harness hook; stateless clients ignore it."""


class MockLlmClient(LlmClient):
    """Fixture-backed client.

    Lookup order under `<root>/<transformation>/`, most specific first:

        pass<k>_<region>_h<hash12>_a<attempt>.md
        pass<k>_<region>_h<hash12>.md
        pass<k>_<region>_a<attempt>.md
        pass<k>_<region>.md

    The file content is the verbatim "model" response (prose plus fenced
    code blocks). Identical call coordinates always yield identical bytes.
    """

    def __init__(self, fixtures_root: Path | str):
        self.root = Path(fixtures_root)
        if not self.root.is_dir():
            raise MockFixtureMissing(f"no fixture directory {self.root}")

    def complete(self, request: LlmRequest, meta: CallMeta) -> LlmResponse:
        base = self.root / meta.transformation
        stem = f"pass{meta.pass_index}_{meta.region}"
        candidates = [
            f"{stem}_h{meta.input_region_hash}_a{meta.attempt}.md",
            f"{stem}_h{meta.input_region_hash}.md",
            f"{stem}_a{meta.attempt}.md",
            f"{stem}.md",
        ]
        for name in candidates:
            path = base / name
            if path.exists():
                return LlmResponse(path.read_text(encoding="utf-8"))
        raise MockFixtureMissing(
            f"no mock fixture for {meta.transformation} {stem} "
            f"(attempt {meta.attempt}, hash {meta.input_region_hash}) under {base}")


class ScriptedFailureClient(LlmClient):
    """Wraps another client and corrupts responses on scheduled trials.

    The schedule maps a trial index to a failure plan:

        ("compile", None)              -- append a non-compiling line
        ("reference", (old, new))      -- plant a semantic bug via substitution
        ("extraction", None)           -- strip the code fences entirely

    Corruption applies to every call of the scheduled trial, which is enough
    to force the corresponding failure classification downstream.
    """

    def __init__(self, inner: LlmClient, schedule: dict[int, tuple]):
        self.inner = inner
        self.schedule = schedule
        self.trial = 0

    def start_trial(self, index: int) -> None:
        self.trial = index
        self.inner.start_trial(index)

    def complete(self, request: LlmRequest, meta: CallMeta) -> LlmResponse:
        response = self.inner.complete(request, meta)
        plan = self.schedule.get(self.trial)
        if plan is None:
            return response
        kind, payload = plan
        text = response.raw_text
        if kind == "compile":
            idx = text.rstrip().rfind("```")
            text = text[:idx] + "this line does not compile;\n```\n"
        elif kind == "reference":
            old, new = payload
            text = text.replace(old, new)
        elif kind == "extraction":
            text = text.replace("```", "")
        else:
            raise ValueError(f"unknown scripted failure kind '{kind}'")
        return LlmResponse(text)


class HttpLlmClient(LlmClient):
    """Chat-completions style endpoint; configuration via environment.

    PEAK_LLM_URL       endpoint base (POST <url>)
    PEAK_LLM_MODEL     model tag placed in the request body
    PEAK_LLM_TOKEN     bearer token (never written to the audit log)
    PEAK_LLM_MAX_INFLIGHT  concurrent request limit (default 2)
    """

    def __init__(
        self,
        url: str | None = None,
        model_tag: str | None = None,
        token: str | None = None,
        audit_path: Path | str | None = None,
        transport=None,
    ):
        import httpx

        self.url = url or os.environ.get(ENV_URL, "")
        self.model_tag = model_tag or os.environ.get(ENV_MODEL, "")
        self._token = token if token is not None else os.environ.get(ENV_TOKEN, "")
        if not self.url:
            raise LlmClientError(f"no endpoint configured ({ENV_URL})")
        limit = int(os.environ.get(ENV_INFLIGHT, "2"))
        self._inflight = threading.BoundedSemaphore(max(1, limit))
        self.audit_path = Path(audit_path) if audit_path else None
        self._client = httpx.Client(timeout=120.0, transport=transport)

    def complete(self, request: LlmRequest, meta: CallMeta) -> LlmResponse:
        body = {
            "model": request.model_tag or self.model_tag,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        }
        headers = {}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        with self._inflight:
            response = self._client.post(self.url, json=body, headers=headers)
        if response.status_code != 200:
            raise LlmClientError(
                f"endpoint returned {response.status_code}: {response.text[:300]}")
        payload = response.json()
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise LlmClientError(
                f"unexpected response shape: {str(payload)[:300]}") from None
        self._audit(body, text, meta)
        return LlmResponse(text)

    def _audit(self, body: dict, text: str, meta: CallMeta) -> None:
        if self.audit_path is None:
            return
        entry = {
            "transformation": meta.transformation,
            "pass_index": meta.pass_index,
            "region": meta.region,
            "attempt": meta.attempt,
            "request": body,  # headers (and the token) are never included
            "response_text": text,
        }
        self.audit_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.audit_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")
