"""Minimal chat-completions client with retries, plus the tutor hint call.

Requests follow the common chat wire schema: POST ``{base_url}/chat/completions``
with ``{"model", "messages": [{"role", "content"}], "temperature"}``; the
assistant text is read from ``choices[0].message.content``. Transient
failures (timeouts, connection errors, 429 and 5xx statuses) are retried
with exponential backoff and jitter; other statuses and malformed bodies
fail immediately.
"""

from __future__ import annotations

import logging
import os
import random
import time
from dataclasses import dataclass
from importlib import resources

import httpx

logger = logging.getLogger(__name__)

TUTOR_SYSTEM_MESSAGE = "You are a helpful math tutor."
TUTOR_PROMPT_TEMPLATE = (
    resources.files(__package__).joinpath("templates", "tutor_prompt.txt")
    .read_text(encoding="utf-8")
    .removesuffix("\n")
)


class EndpointError(Exception):
    pass


class EndpointTimeout(EndpointError):
    pass


class HttpStatus(EndpointError):
    def __init__(self, code: int, detail: str = ""):
        super().__init__(f"HTTP {code}" + (f": {detail}" if detail else ""))
        self.code = code


class MalformedResponseBody(EndpointError):
    pass


@dataclass(frozen=True)
class EndpointSpec:
    base_url: str
    model: str
    temperature: float = 0.0
    timeout_s: float = 60.0
    max_retries: int = 3
    auth_env: str = ""  # name of the env var holding the bearer token
    backoff_initial_ms: float = 500.0

    def validate(self) -> None:
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def to_dict(self) -> dict:
        return {
            "base_url": self.base_url,
            "model": self.model,
            "temperature": self.temperature,
            "timeout_s": self.timeout_s,
            "max_retries": self.max_retries,
            "auth_env": self.auth_env,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EndpointSpec":
        spec = cls(
            base_url=obj["base_url"],
            model=obj.get("model", ""),
            temperature=obj.get("temperature", 0.0),
            timeout_s=obj.get("timeout_s", 60.0),
            max_retries=obj.get("max_retries", 3),
            auth_env=obj.get("auth_env", ""),
            backoff_initial_ms=obj.get("backoff_initial_ms", 500.0),
        )
        spec.validate()
        return spec


def _headers(spec: EndpointSpec) -> dict:
    headers = {"Content-Type": "application/json"}
    if spec.auth_env:
        token = os.environ.get(spec.auth_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
    return headers


def _extract_content(body: dict) -> str:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponseBody(f"unexpected completion body shape: {exc}") from exc
    if not isinstance(content, str):
        raise MalformedResponseBody("completion content is not text")
    return content


def llm_complete(
    spec: EndpointSpec,
    messages: list[dict],
    *,
    transport: httpx.BaseTransport | None = None,
    sleep=time.sleep,
) -> str:
    """Send one chat completion request and return the assistant text."""
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[0].get("role") != "system":
        raise ValueError("first message must have the system role")
    spec.validate()

    url = spec.base_url.rstrip("/") + "/chat/completions"
    payload = {"model": spec.model, "messages": messages, "temperature": spec.temperature}
    attempts = spec.max_retries + 1
    last_error: EndpointError | None = None

    with httpx.Client(timeout=spec.timeout_s, transport=transport) as client:
        for attempt in range(attempts):
            if attempt:
                delay = spec.backoff_initial_ms / 1000.0 * (2 ** (attempt - 1))
                delay *= 1.0 + random.random() * 0.25  # jitter
                sleep(delay)
            try:
                response = client.post(url, json=payload, headers=_headers(spec))
            except httpx.TimeoutException as exc:
                last_error = EndpointTimeout(str(exc))
                logger.warning("completion attempt %d timed out: %s", attempt + 1, exc)
                continue
            except httpx.TransportError as exc:
                last_error = EndpointError(str(exc))
                logger.warning("completion attempt %d failed: %s", attempt + 1, exc)
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = HttpStatus(response.status_code, response.text[:200])
                logger.warning("completion attempt %d got HTTP %d", attempt + 1, response.status_code)
                continue
            if response.status_code != 200:
                raise HttpStatus(response.status_code, response.text[:200])
            try:
                body = response.json()
            except ValueError as exc:
                raise MalformedResponseBody(f"response is not JSON: {exc}") from exc
            return _extract_content(body)

    raise last_error if last_error is not None else EndpointError("no attempts made")


def render_tutor_prompt(question: str, wrong_answer: str) -> str:
    return TUTOR_PROMPT_TEMPLATE.format(question=question, wrong_answer=wrong_answer)


def tutor_feedback(
    spec: EndpointSpec,
    question: str,
    wrong_answer: str,
    *,
    transport: httpx.BaseTransport | None = None,
) -> str:
    """Ask the tutor model for a hint about an incorrect answer."""
    messages = [
        {"role": "system", "content": TUTOR_SYSTEM_MESSAGE},
        {"role": "user", "content": render_tutor_prompt(question, wrong_answer)},
    ]
    return llm_complete(spec, messages, transport=transport)
