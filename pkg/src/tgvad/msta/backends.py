"""LLM backends: a deterministic offline mock and an HTTP chat-completion client."""

from __future__ import annotations

import hashlib
import logging
import math
import os
import time
from collections import Counter
from typing import Protocol

import httpx
import numpy as np

from ..errors import BackendError, ConfigError
from .embedders import tokenize
from .prompts import PromptTemplates

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "TGVAD_LLM_ENDPOINT"
ENV_API_KEY = "TGVAD_LLM_API_KEY"
ENV_MODEL = "TGVAD_LLM_MODEL"

STOPWORDS = frozenset(
    "a an the and or of in on at to from into with by for is are was were be been being "
    "this that these those it its as near next after who which while another two".split()
)


class LlmBackend(Protocol):
    identity: str

    def complete(self, prompt: str) -> str: ...


def content_words(text: str) -> list[str]:
    return [w for w in tokenize(text) if len(w) > 2 and w not in STOPWORDS]


def _seeded_rng(seed: int, prompt: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}\x00{prompt}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


class MockBackend:
    """Offline stand-in for the LLM; output depends only on ``(seed, prompt)``.

    It recognizes the three stage prompts by their leading instruction:

    * summarize: orders the video's distinct captions by how unusual their
      words are within the video and keeps the first 30 words;
    * annotate: scores the target caption with a naive-Bayes vote over the
      word occurrences of the labelled demonstrations;
    * generate: splices the first half of one example onto the second half
      of another.

    Any other prompt is echoed back, truncated to 30 words.
    """

    identity = "mock"

    def __init__(self, seed: int = 0, templates: PromptTemplates = PromptTemplates(), jitter: float = 0.02):
        self.seed = seed
        self.templates = templates
        self.jitter = jitter

    def complete(self, prompt: str) -> str:
        lines = prompt.split("\n")
        head = lines[0]
        t = self.templates
        if head == t.summarize:
            return self._summarize(lines[1:])
        if head == t.annotate:
            return self._annotate(lines[1:], prompt)
        if head == t.generate:
            return self._generate(lines[1:], prompt)
        return " ".join(prompt.split()[:30])

    def _summarize(self, captions: list[str]) -> str:
        unique = list(dict.fromkeys(c for c in captions if c.strip()))
        counts = Counter(w for c in captions for w in set(content_words(c)))

        def rarity(c):
            words = content_words(c)
            return sum(1.0 / counts[w] for w in words) / len(words) if words else 0.0

        ordered = sorted(unique, key=rarity, reverse=True)
        words = " , ".join(ordered).split()[:30]
        text = " ".join(words).replace(" ,", ",").rstrip(",")
        return text + "."

    def _annotate(self, lines: list[str], prompt: str) -> str:
        t = self.templates
        demos = []
        i = 0
        # body: (P_VD, text, P_AS, y)* then target, P_AS
        while i + 3 < len(lines) and lines[i] == t.video_description:
            try:
                y = float(lines[i + 3])
            except ValueError:
                y = 0.0
            demos.append((set(content_words(lines[i + 1])), y >= 0.5))
            i += 4
        target = lines[i] if i < len(lines) else ""
        n_pos = sum(1 for _, pos in demos if pos)
        n_neg = len(demos) - n_pos
        logit = math.log((n_pos + 1) / (n_neg + 1))
        for w in set(content_words(target)):
            c_pos = sum(1 for words, pos in demos if pos and w in words)
            c_neg = sum(1 for words, pos in demos if not pos and w in words)
            if c_pos + c_neg == 0:
                continue
            logit += math.log((c_pos + 1) / (n_pos + 2)) - math.log((c_neg + 1) / (n_neg + 2))
        score = 1.0 / (1.0 + math.exp(-max(min(logit, 50.0), -50.0)))
        score += _seeded_rng(self.seed, prompt).uniform(-self.jitter, self.jitter)
        return f"{min(max(score, 0.0), 1.0):.2f}"

    def _generate(self, lines: list[str], prompt: str) -> str:
        examples = [l for l in lines if l and l != self.templates.example]
        if not examples:
            return ""
        rng = _seeded_rng(self.seed, prompt)
        a, b = rng.choice(len(examples), size=2, replace=len(examples) < 2)
        wa, wb = examples[a].rstrip(".").split(), examples[b].rstrip(".").split()
        words = wa[: max(1, len(wa) // 2)] + wb[len(wb) // 2 :]
        return " ".join(words) + "."


class ChatCompletionBackend:
    """OpenAI-style ``/chat/completions`` endpoint over HTTP.

    One retry with exponential backoff on transport errors and 5xx/429
    responses; anything else fails immediately.
    """

    identity = "remote"

    def __init__(
        self,
        endpoint: str,
        api_key: str,
        model: str,
        timeout: float = 60.0,
        retries: int = 1,
        backoff: float = 1.0,
        temperature: float = 0.7,
        client: httpx.Client | None = None,
        sleep=time.sleep,
    ):
        self.endpoint = endpoint
        self.api_key = api_key
        self.model = model
        self.retries = retries
        self.backoff = backoff
        self.temperature = temperature
        self.client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep

    @classmethod
    def from_env(cls, env=None, **kwargs) -> "ChatCompletionBackend":
        env = os.environ if env is None else env
        missing = [k for k in (ENV_ENDPOINT, ENV_API_KEY, ENV_MODEL) if not env.get(k, "").strip()]
        if missing:
            raise ConfigError(f"remote LLM backend needs environment variables {missing}")
        return cls(env[ENV_ENDPOINT].strip(), env[ENV_API_KEY].strip(), env[ENV_MODEL].strip(), **kwargs)

    def request_body(self, prompt: str) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }

    def complete(self, prompt: str) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(self.endpoint, json=self.request_body(prompt), headers=headers)
            except httpx.TransportError as exc:
                last = exc
                logger.warning("LLM transport error (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = BackendError(f"LLM endpoint returned HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise BackendError(
                    f"LLM endpoint rejected the request: HTTP {resp.status_code} {resp.text[:200]}",
                    retriable=False,
                )
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed chat-completion response: {exc}", retriable=False) from None
        raise BackendError(f"LLM endpoint unreachable after {self.retries + 1} attempts: {last}")


def make_backend(name: str, seed: int = 0, templates: PromptTemplates = PromptTemplates()) -> LlmBackend:
    if name == "mock":
        return MockBackend(seed, templates)
    if name == "remote":
        return ChatCompletionBackend.from_env()
    raise ConfigError(f"unknown backend {name!r}; use 'mock' or 'remote'")
