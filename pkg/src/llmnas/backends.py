"""Chat-completion backends.

Every backend implements :meth:`Backend.chat`.  The base class validates
the message list, strips reasoning segments from the reply and appends the
exchange to an optional JSON-lines transcript; subclasses only implement
``_complete``.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import httpx
import numpy as np

from .archspace.nb201 import (
    find_cell_strings,
    nb201_from_index,
    nb201_index,
    neighbors,
    parse_nb201,
    serialize_nb201,
)
from .errors import BackendError, HttpError, MalformedResponse, ScriptExhausted, Timeout

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")

    def to_json(self) -> dict:
        return {"role": self.role, "content": self.content}


def validate_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("at least one message is required")
    systems = [i for i, m in enumerate(messages) if m.role == "system"]
    if len(systems) > 1 or (systems and systems[0] != 0):
        raise ValueError("at most one system message, and only in first position")


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.6
    max_tokens: Optional[int] = None
    reasoning: bool = True

    def __post_init__(self):
        if not self.temperature >= 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens is not None and self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


def strip_thinking(text: str, open_tag: str = "<think>", close_tag: str = "</think>") -> str:
    """Drop ``open_tag ... close_tag`` blocks.

    A close tag without an opener (servers that put the opener in the
    prompt) drops everything before it; an unterminated opener drops the rest.
    """
    if close_tag in text and open_tag not in text.split(close_tag, 1)[0]:
        text = text.split(close_tag, 1)[1]
    text = re.sub(re.escape(open_tag) + r".*?" + re.escape(close_tag), "", text, flags=re.S)
    if open_tag in text:
        text = text.split(open_tag, 1)[0]
    return text.strip()


class TranscriptLog:
    """Append-only JSON-lines log of requests and replies (no timestamps, so replays diff cleanly)."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, entry: dict) -> None:
        line = json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n"
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line)


class Backend:
    name = "backend"

    def __init__(self, *, log: Optional[TranscriptLog] = None, think_tags=("<think>", "</think>")):
        self.log = log
        self.think_tags = tuple(think_tags)
        self.calls = 0

    def _complete(self, messages: Sequence[ChatMessage], params: SamplingParams, role: Optional[str]) -> str:
        raise NotImplementedError

    def chat(self, messages: Sequence[ChatMessage], params: Optional[SamplingParams] = None, *,
             role: Optional[str] = None) -> str:
        validate_messages(messages)
        params = params or SamplingParams()
        self.calls += 1
        raw = self._complete(messages, params, role)
        text = strip_thinking(raw, *self.think_tags)
        if self.log is not None:
            self.log.append({
                "call": self.calls,
                "role": role,
                "params": asdict(params),
                "messages": [m.to_json() for m in messages],
                "response": raw,
            })
        return text

    def describe(self) -> dict:
        return {"name": self.name}


class ScriptedBackend(Backend):
    """Replays canned replies in order; raises ScriptExhausted when they run out.

    ``script`` is a list of strings or a JSON-lines file whose records carry
    a ``response`` field (a transcript written by any backend qualifies).
    """

    name = "scripted"

    def __init__(self, script: Union[Sequence[str], str, Path], **kw):
        super().__init__(**kw)
        if isinstance(script, (str, Path)):
            self.source = str(script)
            self.replies = [
                json.loads(line)["response"]
                for line in Path(script).read_text(encoding="utf-8").splitlines()
                if line.strip()
            ]
        else:
            self.source = None
            self.replies = list(script)
        self._pos = 0
        self._lock = threading.Lock()

    def _complete(self, messages, params, role):
        with self._lock:
            if self._pos >= len(self.replies):
                raise ScriptExhausted(f"script has only {len(self.replies)} replies")
            reply = self.replies[self._pos]
            self._pos += 1
        return reply

    def describe(self):
        return {"name": self.name, "source": self.source, "replies": len(self.replies)}


class RemoteBackend(Backend):
    """OpenAI-compatible ``/chat/completions`` client.

    Defaults come from ``LLMNAS_BASE_URL`` (or ``OPENAI_BASE_URL``),
    ``LLMNAS_MODEL`` and ``LLMNAS_API_KEY`` (or ``OPENAI_API_KEY``).
    """

    name = "remote"

    def __init__(self, base_url: Optional[str] = None, model: Optional[str] = None,
                 api_key: Optional[str] = None, *, timeout: float = 120.0,
                 transport: Optional[httpx.BaseTransport] = None, **kw):
        super().__init__(**kw)
        self.base_url = (base_url or os.environ.get("LLMNAS_BASE_URL")
                         or os.environ.get("OPENAI_BASE_URL") or "http://localhost:8000/v1").rstrip("/")
        self.model = model or os.environ.get("LLMNAS_MODEL") or "default"
        api_key = api_key or os.environ.get("LLMNAS_API_KEY") or os.environ.get("OPENAI_API_KEY")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self._lock = threading.Lock()

    def payload(self, messages, params: SamplingParams) -> dict:
        body = {
            "model": self.model,
            "messages": [m.to_json() for m in messages],
            "temperature": params.temperature,
        }
        if params.max_tokens is not None:
            body["max_tokens"] = params.max_tokens
        if not params.reasoning:
            body["chat_template_kwargs"] = {"enable_thinking": False}
        return body

    def _complete(self, messages, params, role):
        body = self.payload(messages, params)
        try:
            with self._lock:
                resp = self._client.post(f"{self.base_url}/chat/completions", json=body)
        except httpx.TimeoutException as exc:
            raise Timeout(f"request to {self.base_url} timed out") from exc
        except httpx.HTTPError as exc:
            raise BackendError(f"request to {self.base_url} failed: {exc}") from exc
        if resp.status_code != 200:
            raise HttpError(resp.status_code, resp.text[:500])
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response body: {resp.text[:200]!r}") from exc
        if not isinstance(content, str):
            raise MalformedResponse("message content is not a string")
        return content

    def close(self) -> None:
        self._client.close()

    def describe(self):
        return {"name": self.name, "base_url": self.base_url, "model": self.model}


def chat_with_retry(backend: Backend, messages, params: Optional[SamplingParams] = None, *,
                    role: Optional[str] = None, attempts: int = 3, backoff: float = 1.0,
                    sleep=time.sleep) -> str:
    """Retry transient failures (timeouts, HTTP errors) with exponential backoff.

    Other backend errors (malformed replies, exhausted scripts) are raised at once.
    """
    for attempt in range(attempts):
        try:
            return backend.chat(messages, params, role=role)
        except (Timeout, HttpError) as exc:
            if attempt == attempts - 1:
                raise BackendError(f"{role or 'chat'} failed after {attempts} attempts: {exc}") from exc
            sleep(backoff * 2 ** attempt)
    raise AssertionError("unreachable")


# -- oracle mock --------------------------------------------------------------

ORACLE_MODES = ("random", "greedy", "epsilon-greedy")
_COUNT = re.compile(r"exactly\s+(\d+)")
_STRATEGY = ("Exploit the best cell found so far: change one edge at a time, "
             "keep changes that improve accuracy, and avoid cells already evaluated.")


class OracleBackend(Backend):
    """Benchmark-peeking stand-in for an LLM on NB201.

    As Navigator it returns a fixed strategy sentence.  As Generator it
    answers with cell strings chosen from the table:

    * ``random``: uniformly random unseen cells;
    * ``greedy``: steepest-ascent hill climbing over single-edge changes,
      restarting from a random cell at local optima that are not the global
      optimum (a global optimum is proposed again and again);
    * ``epsilon-greedy``: greedy, except that each proposal is random with
      probability ``epsilon``.

    The role is taken from the ``role`` argument of :meth:`chat`; the number
    of candidates from the phrase "exactly N" in the last message.  Asked
    as ``ranker`` it returns the true order of the cells in the request.
    """

    name = "oracle"

    def __init__(self, table, dataset_id, mode: str = "greedy", seed: int = 0, epsilon: float = 0.2, **kw):
        super().__init__(**kw)
        if mode not in ORACLE_MODES:
            raise ValueError(f"mode must be one of {ORACLE_MODES}")
        self.table = table
        self.dataset_id = dataset_id
        self.mode = mode
        self.seed = seed
        self.epsilon = epsilon
        self.rng = np.random.default_rng(seed)
        col = table.column(dataset_id)
        self._acc = np.where(np.isnan(col), -np.inf, col)
        self._best = float(np.max(self._acc))
        self._seen: set[int] = set()
        self.current: Optional[int] = None

    def _random_unseen(self) -> int:
        for _ in range(1000):
            i = int(self.rng.integers(len(self._acc)))
            if i not in self._seen:
                return i
        return int(self.rng.integers(len(self._acc)))

    def _climb(self) -> int:
        if self.current is None:
            return self._random_unseen()
        nbrs = [nb201_index(a) for a in neighbors(nb201_from_index(self.current))]
        top = max(nbrs, key=lambda i: (self._acc[i], -i))
        if self._acc[top] > self._acc[self.current]:
            return top
        if self._acc[self.current] >= self._best:
            return self.current
        return self._random_unseen()

    def propose(self) -> int:
        """Next cell index; greedy modes move ``current`` to the proposal."""
        if self.mode == "random" or (self.mode == "epsilon-greedy" and self.rng.random() < self.epsilon):
            i = self._random_unseen()
            if self.mode == "epsilon-greedy" and self.current is not None and self._acc[i] <= self._acc[self.current]:
                self._seen.add(i)
                return i
        else:
            i = self._climb()
        self._seen.add(i)
        self.current = i
        return i

    def _rank(self, text: str) -> str:
        cells = find_cell_strings(text)
        order = sorted(range(len(cells)), key=lambda k: -self._acc[nb201_index(parse_nb201(cells[k]))])
        return "\n".join(f"{r}. Architecture {k + 1}" for r, k in enumerate(order, start=1))

    def _complete(self, messages, params, role):
        if role == "navigator":
            return _STRATEGY
        if role == "ranker":
            return self._rank(messages[-1].content)
        m = _COUNT.search(messages[-1].content)
        n = int(m.group(1)) if m else 5
        cells = [serialize_nb201(nb201_from_index(self.propose())) for _ in range(n)]
        return "Candidates:\n" + "\n".join(cells)

    def describe(self):
        return {"name": self.name, "mode": self.mode, "seed": self.seed, "dataset": str(self.dataset_id)}
