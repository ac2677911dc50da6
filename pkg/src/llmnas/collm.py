"""Two-role LLM architecture search and its single-model ablation.

A stateful Navigator turns search history into a natural-language strategy;
a stateless Generator turns the latest strategy into candidate
architectures; the coordinator (this module plus :class:`SearchSession`)
validates, deduplicates, evaluates and feeds results back.

Loop shape, for ``t = 1..T``::

    generate C_t from S_{t-1}; filter visited/illegal; evaluate;
    update best under the constraint; stop if best >= target;
    append (S_{t-1}, R_t) to history; S_t <- refine(history)

The budget is checked by the coordinator: once it is spent the loop ends
without a further Navigator call.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .archspace.spaces import Extracted, SearchSpace
from .backends import Backend, ChatMessage, SamplingParams, chat_with_retry
from .core import EvalRecord, Evaluator, SearchConfig, SearchResult, SearchSession
from .errors import BackendError, ConfigError, EmptyStrategy, NoValidCandidates
from .prompts import PromptSet, render


@dataclass(frozen=True)
class Strategy:
    text: str
    t: int

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyStrategy(f"navigator returned an empty strategy at t={self.t}")


@dataclass
class HistoryEntry:
    strategy: Strategy
    records: list[EvalRecord]
    iteration: int
    note: Optional[str] = None


@dataclass(frozen=True)
class MemoryPolicy:
    navigator_retains: bool = True
    generator_retains: bool = False

    @property
    def label(self) -> str:
        mark = {True: "+", False: "-"}
        return f"N{mark[self.navigator_retains]}G{mark[self.generator_retains]}"


@dataclass
class CollmConfig:
    search: SearchConfig = field(default_factory=lambda: SearchConfig(arch_budget=100, iteration_limit=20))
    memory: MemoryPolicy = field(default_factory=MemoryPolicy)
    candidates_per_iteration: Optional[int] = None
    min_candidates: int = 5
    navigator_params: SamplingParams = field(default_factory=SamplingParams)
    generator_params: SamplingParams = field(default_factory=SamplingParams)
    prompts: Optional[PromptSet] = None
    history_limit: int = 10
    retry_attempts: int = 3
    retry_backoff: float = 1.0

    def __post_init__(self):
        if self.candidates_per_iteration is not None and self.candidates_per_iteration < 1:
            raise ConfigError("candidates_per_iteration must be >= 1")
        if self.history_limit < 1:
            raise ConfigError("history_limit must be >= 1")

    def n_candidates(self, remaining_budget: int, t: int) -> int:
        if self.candidates_per_iteration is not None:
            return self.candidates_per_iteration
        remaining_iters = self.search.iteration_limit - t + 1
        return max(self.min_candidates, math.ceil(remaining_budget / remaining_iters))

    def to_json(self) -> dict:
        return {
            "search": self.search.to_json(),
            "memory": {"navigator_retains": self.memory.navigator_retains,
                       "generator_retains": self.memory.generator_retains},
            "candidates_per_iteration": self.candidates_per_iteration,
            "min_candidates": self.min_candidates,
            "navigator_temperature": self.navigator_params.temperature,
            "generator_temperature": self.generator_params.temperature,
            "history_limit": self.history_limit,
            "retry_attempts": self.retry_attempts,
        }


class ChatSession:
    """A system prompt plus, when ``retains``, the running dialogue."""

    def __init__(self, backend: Backend, system: str, *, retains: bool, role: str,
                 params: SamplingParams, attempts: int = 3, backoff: float = 1.0, sleep=None):
        self.backend = backend
        self.system = ChatMessage("system", system)
        self.retains = retains
        self.role = role
        self.params = params
        self.attempts = attempts
        self.backoff = backoff
        self.sleep = sleep
        self.dialogue: list[ChatMessage] = []
        self.calls = 0

    @property
    def messages(self) -> list[ChatMessage]:
        return [self.system, *self.dialogue]

    def ask(self, text: str, *, role: Optional[str] = None, params: Optional[SamplingParams] = None) -> str:
        user = ChatMessage("user", text)
        kw = {"sleep": self.sleep} if self.sleep is not None else {}
        self.calls += 1
        reply = chat_with_retry(self.backend, [*self.messages, user], params or self.params,
                                role=role or self.role, attempts=self.attempts, backoff=self.backoff, **kw)
        if self.retains:
            self.dialogue += [user, ChatMessage("assistant", reply)]
        return reply


# -- rendering -------------------------------------------------------------------

def format_record(record: EvalRecord) -> str:
    """One fixed-format feedback line: architecture | accuracy | cost | status."""
    acc = "-" if record.accuracy is None else f"{record.accuracy:.2f}"
    if record.cost is None:
        cost = "-"
    else:
        cost = f"{record.cost.flops:.2f} MFLOPs, {record.cost.params:.3f} M params"
    line = f"{record.text} | {acc} | {cost} | {'LEGAL' if record.status == 'EVALUATED' else record.status}"
    if record.status == "EVALUATED" and record.feasible is False:
        line += " (violates constraint)"
    if record.reason and record.status == "ILLEGAL":
        line += f" ({record.reason})"
    return line


def render_entry(entry: HistoryEntry) -> str:
    lines = [f"Iteration {entry.iteration}", f"Strategy: {entry.strategy.text}",
             "architecture | accuracy | cost | status"]
    lines += [format_record(r) for r in entry.records]
    if entry.note:
        lines.append(entry.note)
    return "\n".join(lines)


def render_history(history: Sequence[HistoryEntry], limit: int, best: Optional[float] = None) -> tuple[str, bool]:
    """Render entries oldest first, keeping only the newest ``limit``.

    Returns the text and whether older entries were dropped.
    """
    shown = list(history)[-limit:]
    parts = []
    truncated = len(history) > limit
    if truncated:
        summary = f"({len(history) - limit} earlier iterations omitted"
        if best is not None:
            summary += f"; best accuracy so far {best:.2f}"
        parts.append(summary + ")")
    parts += [render_entry(e) for e in shown]
    return "\n\n".join(parts), truncated


def _format_target(target: Optional[float]) -> str:
    return "none (maximise accuracy)" if target is None else f"{target:g}%"


# -- roles --------------------------------------------------------------------

NO_CANDIDATES_NOTE = "No valid architecture could be extracted from the Generator output."


def select_candidates(extracted: Sequence[Extracted], n: int) -> list[Extracted]:
    """Items in order of appearance up to the ``n``-th valid architecture."""
    out, valid = [], 0
    for item in extracted:
        if valid == n:
            break
        out.append(item)
        valid += item.ok
    return out


def generator_propose(strategy: Strategy, space: SearchSpace, n: int, session: ChatSession,
                      prompts: PromptSet, *, role: str = "generator") -> list[Extracted]:
    """Ask for ``n`` candidates and extract them leniently from the reply.

    Raises NoValidCandidates (carrying the failed extractions) when nothing
    usable comes back.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    reply = session.ask(render(prompts.generator_user, strategy=strategy.text, n_candidates=n), role=role)
    items = select_candidates(space.extract(reply), n)
    if not any(i.ok for i in items):
        raise NoValidCandidates(f"no valid architecture in generator reply at t={strategy.t}",
                                invalid=tuple(items))
    return items


class _Team:
    """Navigator and Generator sessions for one run."""

    def __init__(self, backend: Backend, generator_backend: Backend, space: SearchSpace,
                 config: CollmConfig, sleep=None):
        self.config = config
        self.prompts = config.prompts or PromptSet.load()
        p = self.prompts
        desc = space.describe()
        goal = dict(target=_format_target(config.search.target), constraint=str(config.search.constraint))
        common = dict(attempts=config.retry_attempts, backoff=config.retry_backoff, sleep=sleep)
        self.navigator = ChatSession(
            backend, render(p.navigator_system, search_space_description=desc, **goal),
            retains=config.memory.navigator_retains, role="navigator", params=config.navigator_params, **common)
        self.generator = ChatSession(
            generator_backend, render(p.generator_system, search_space_description=desc),
            retains=config.memory.generator_retains, role="generator", params=config.generator_params, **common)
        self.truncations = 0

    def init(self) -> Strategy:
        return Strategy(self.navigator.ask(self.prompts.navigator_init), 0)

    def refine(self, history: Sequence[HistoryEntry], t: int, best: Optional[float]) -> Strategy:
        if not history:
            raise ValueError("refine needs a non-empty history")
        if self.navigator.retains:
            text = render(self.prompts.navigator_feedback, history=render_entry(history[-1]))
        else:
            rendered, truncated = render_history(history, self.config.history_limit, best)
            self.truncations += truncated
            text = render(self.prompts.navigator_refine, history=rendered)
        return Strategy(self.navigator.ask(text), t)

    def propose(self, strategy: Strategy, space: SearchSpace, n: int) -> list[Extracted]:
        return generator_propose(strategy, space, n, self.generator, self.prompts)

    @property
    def navigator_calls(self) -> int:
        return self.navigator.calls

    @property
    def generator_calls(self) -> int:
        return self.generator.calls


class _SingleModel(_Team):
    """One retaining session answers both the strategy and the candidate prompts."""

    def __init__(self, backend: Backend, space: SearchSpace, config: CollmConfig, sleep=None):
        self.config = config
        self.prompts = config.prompts or PromptSet.load()
        p = self.prompts
        system = render(p.sillm_system, search_space_description=space.describe(),
                        target=_format_target(config.search.target), constraint=str(config.search.constraint))
        self.session = ChatSession(backend, system, retains=True, role="navigator",
                                   params=config.navigator_params, attempts=config.retry_attempts,
                                   backoff=config.retry_backoff, sleep=sleep)
        self.truncations = 0
        self._nav = 0
        self._gen = 0

    def init(self):
        self._nav += 1
        return Strategy(self.session.ask(self.prompts.navigator_init, role="navigator"), 0)

    def refine(self, history, t, best):
        self._nav += 1
        text = render(self.prompts.navigator_feedback, history=render_entry(history[-1]))
        return Strategy(self.session.ask(text, role="navigator", params=self.config.navigator_params), t)

    def propose(self, strategy, space, n):
        self._gen += 1
        return generator_propose(strategy, space, n, _Relay(self.session, self.config.generator_params),
                                 self.prompts)

    @property
    def navigator_calls(self):
        return self._nav

    @property
    def generator_calls(self):
        return self._gen


class _Relay:
    """Routes a generator request into the shared single-model session."""

    def __init__(self, session: ChatSession, params: SamplingParams):
        self.session = session
        self.params = params

    def ask(self, text, *, role=None, params=None):
        return self.session.ask(text, role="generator", params=self.params)


# -- search loop ------------------------------------------------------------------

def _submit(session: SearchSession, items: Sequence[Extracted], t: int,
            executor: Optional[Executor]) -> list[EvalRecord]:
    """Record extracted items in order of appearance."""
    records: list[EvalRecord] = []
    chunk: list = []
    for item in items:
        if item.ok:
            chunk.append(item.arch)
            continue
        if chunk:
            records += session.submit_batch(chunk, t, executor)
            chunk = []
        records.append(session.submit_invalid(item.raw, item.error, t))
    if chunk:
        records += session.submit_batch(chunk, t, executor)
    return records


def _run(team: _Team, method: str, space: SearchSpace, evaluator: Evaluator, config: CollmConfig,
         executor: Optional[Executor]) -> SearchResult:
    sc = config.search
    session = SearchSession(space, evaluator, sc.constraint, sc.arch_budget)
    history: list[HistoryEntry] = []
    strategies: list[str] = []
    empty_iterations: list[int] = []
    status, error, stop = "complete", None, "iteration_limit"

    def finish():
        extra = {
            "navigator_calls": team.navigator_calls,
            "generator_calls": team.generator_calls,
            "strategies": strategies,
            "empty_iterations": empty_iterations,
            "history_truncations": team.truncations,
            "memory": config.memory.label,
            "stop": stop,
        }
        return session.result(method, sc.seed, config=config.to_json(), status=status, error=error, extra=extra)

    try:
        strategy = team.init()
        strategies.append(strategy.text)
        for t in range(1, sc.iteration_limit + 1):
            n = config.n_candidates(session.remaining, t)
            try:
                items = team.propose(strategy, space, n)
                note = None
            except NoValidCandidates as exc:
                items, note = list(exc.invalid), NO_CANDIDATES_NOTE
                empty_iterations.append(t)
            records = _submit(session, items, t, executor)
            session.end_iteration(t)
            if sc.target is not None and session.best_key is not None and session.best_accuracy >= sc.target:
                stop = "target"
                break
            if session.exhausted:
                stop = "budget"
                break
            history.append(HistoryEntry(strategy, records, t, note))
            best = session.best_accuracy if session.best_key is not None else None
            strategy = team.refine(history, t, best)
            strategies.append(strategy.text)
    except (BackendError, EmptyStrategy) as exc:
        status, error, stop = "partial", f"{type(exc).__name__}: {exc}", "error"
    return finish()


def collm_search(space: SearchSpace, evaluator: Evaluator, backend: Backend,
                 config: Optional[CollmConfig] = None, *, generator_backend: Optional[Backend] = None,
                 executor: Optional[Executor] = None, sleep=None) -> SearchResult:
    """Two-role search; ``generator_backend`` defaults to ``backend``.

    A backend failure that survives the retry policy ends the run with a
    result whose ``status`` is ``"partial"``.
    """
    config = config or CollmConfig()
    team = _Team(backend, generator_backend or backend, space, config, sleep)
    return _run(team, "collm", space, evaluator, config, executor)


def sillm_search(space: SearchSpace, evaluator: Evaluator, backend: Backend,
                 config: Optional[CollmConfig] = None, *, executor: Optional[Executor] = None,
                 sleep=None) -> SearchResult:
    """Single-session ablation: one dialogue alternates strategy and candidate requests."""
    config = config or CollmConfig()
    team = _SingleModel(backend, space, config, sleep)
    return _run(team, "sillm", space, evaluator, config, executor)


def paired_curve_csv(results: dict[str, SearchResult]) -> str:
    """Best accuracy per iteration for several runs side by side (blank past a run's end)."""
    labels = list(results)
    curves = {k: {t: best for t, _, best in r.curve} for k, r in results.items()}
    last = max((max(c) for c in curves.values() if c), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", *labels])
    for t in range(1, last + 1):
        w.writerow([t, *(curves[k].get(t, "") for k in labels)])
    return buf.getvalue()
