"""Client for OpenAI-compatible chat-completions endpoints with logprobs."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterator

import httpx

from ..observations import TokenObservation
from .base import DriverConfigError, DriverError, Generation

if TYPE_CHECKING:
    from ..induction import InductionPrompt

logger = logging.getLogger(__name__)

RETRY_STATUS = {408, 429, 500, 502, 503, 504}
DEFAULT_QUESTION_TEMPLATE = "{question}\nPlease reason step by step, and put your final answer within \\boxed{{}}."


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "default"
    top_k: int = 20
    timeout_s: float = 120.0
    max_attempts: int = 3
    backoff_s: float = 0.5
    api_key_env: str = "OPENAI_API_KEY"
    question_template: str = DEFAULT_QUESTION_TEMPLATE
    temperature: float = 0.6
    max_tokens: int = 16384
    # lets the server continue the assistant turn instead of opening a new one
    induction_extra_body: dict[str, Any] = field(
        default_factory=lambda: {"continue_final_message": True, "add_generation_prompt": False}
    )

    def __post_init__(self) -> None:
        if not (1 <= self.top_k <= 20):
            raise ValueError("top_k must be in [1, 20] for OpenAI-compatible logprobs")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"


def _observations(logprobs: dict[str, Any] | None, offset: int) -> list[TokenObservation]:
    if not logprobs or logprobs.get("content") is None:
        raise DriverConfigError(
            "endpoint returned no token logprobs; confidence scoring needs logprobs=true with top_logprobs"
        )
    out = []
    for i, entry in enumerate(logprobs["content"]):
        top = [(t["token"], float(t["logprob"])) for t in entry.get("top_logprobs") or []]
        out.append(TokenObservation.from_logprobs(entry["token"], entry.get("logprob"), top, offset + i))
    return out


class LiveStream:
    """Iterator over a server-sent-events completion; ``close()`` cancels it."""

    def __init__(self, response: httpx.Response) -> None:
        self._response = response
        self.closed = False
        self.delivered = 0

    def __iter__(self) -> Iterator[TokenObservation]:
        try:
            for line in self._response.iter_lines():
                if self.closed:
                    return
                if not line.startswith("data:"):
                    continue
                payload = line[5:].strip()
                if payload == "[DONE]":
                    return
                chunk = json.loads(payload)
                choices = chunk.get("choices") or []
                if not choices:
                    continue
                choice = choices[0]
                delta = choice.get("delta") or {}
                has_text = bool(delta.get("content") or delta.get("reasoning_content"))
                if choice.get("logprobs") is None:
                    if has_text:
                        _observations(None, 0)
                    continue
                for obs in _observations(choice["logprobs"], self.delivered):
                    if self.closed:
                        return
                    self.delivered += 1
                    yield obs
        except httpx.HTTPError as exc:
            raise DriverError(f"stream interrupted after {self.delivered} tokens: {exc}") from exc
        finally:
            self.close()

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._response.close()


class LiveDriver:
    """Talks to a running inference server; safe to share across sessions."""

    name = "live"

    def __init__(self, config: EndpointConfig, client: httpx.Client | None = None) -> None:
        self.config = config
        headers = {}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(timeout=config.timeout_s, headers=headers)
        if client is not None and key:
            self._client.headers.update(headers)

    def close(self) -> None:
        self._client.close()

    def _messages(self, question: str) -> list[dict[str, str]]:
        return [{"role": "user", "content": self.config.question_template.format(question=question)}]

    def _send(self, body: dict[str, Any], stream: bool) -> httpx.Response:
        cfg = self.config
        last: Exception | None = None
        for attempt in range(cfg.max_attempts):
            if attempt:
                time.sleep(cfg.backoff_s * 2 ** (attempt - 1))
            try:
                req = self._client.build_request("POST", cfg.url, json=body)
                resp = self._client.send(req, stream=stream)
            except httpx.TransportError as exc:
                last = exc
                logger.warning("attempt %d/%d failed: %s", attempt + 1, cfg.max_attempts, exc)
                continue
            if resp.status_code in RETRY_STATUS:
                resp.read()
                resp.close()
                last = DriverError(f"HTTP {resp.status_code}")
                logger.warning("attempt %d/%d got HTTP %d", attempt + 1, cfg.max_attempts, resp.status_code)
                continue
            if resp.status_code >= 400:
                detail = resp.read().decode("utf-8", "replace")[:500]
                resp.close()
                if "logprob" in detail.lower():
                    raise DriverConfigError(f"endpoint rejected logprobs request: {detail}")
                raise DriverError(f"HTTP {resp.status_code}: {detail}")
            return resp
        raise DriverError(f"giving up after {cfg.max_attempts} attempts: {last}")

    def stream(self, question: str) -> LiveStream:
        cfg = self.config
        body = {
            "model": cfg.model,
            "messages": self._messages(question),
            "stream": True,
            "logprobs": True,
            "top_logprobs": cfg.top_k,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        return LiveStream(self._send(body, stream=True))

    def induce(self, question: str, reasoning: str, prompt: "InductionPrompt", step_index: int) -> Generation:
        cfg = self.config
        body = {
            "model": cfg.model,
            "messages": self._messages(question) + [{"role": "assistant", "content": prompt.render(reasoning)}],
            "stream": False,
            "logprobs": True,
            "top_logprobs": cfg.top_k,
            "temperature": 0.0,
            "max_tokens": prompt.max_answer_tokens,
            **cfg.induction_extra_body,
        }
        resp = self._send(body, stream=False)
        try:
            data = resp.json()
        finally:
            resp.close()
        choice = data["choices"][0]
        tokens = tuple(_observations(choice.get("logprobs"), 0))
        text = (choice.get("message") or {}).get("content")
        if text is None:
            text = "".join(t.text for t in tokens)
        return Generation(text, tokens)
