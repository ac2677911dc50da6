"""Blind ranking experiment: can a model order NB201 cells by accuracy?

Each trial samples distinct-accuracy cells, asks the backend to rank them
from the architecture strings alone, and scores the answer with Kendall's
tau against the table.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
import statistics
from concurrent.futures import Executor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .archspace.nb201 import find_cell_strings, nb201_from_index, parse_nb201, serialize_nb201
from .archspace.spaces import Nb201Space
from .backends import Backend, ChatMessage, SamplingParams, chat_with_retry
from .bench import BenchTable, DatasetId
from .errors import ArchError, BackendError, LengthMismatch, NotAPermutation, UnparseableRanking
from .prompts import PromptSet, render


def _sort_count(seq: list) -> tuple[list, int]:
    """Merge sort that also returns the number of inversions."""
    if len(seq) < 2:
        return seq, 0
    mid = len(seq) // 2
    left, a = _sort_count(seq[:mid])
    right, b = _sort_count(seq[mid:])
    merged, inv, i, j = [], a + b, 0, 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            inv += len(left) - i
            j += 1
    merged += left[i:] + right[j:]
    return merged, inv


def kendall_tau(order_a: Sequence, order_b: Sequence) -> float:
    """Kendall's tau (no ties) between two orderings of the same items.

    ``order_a[k]`` is the item ranked ``k``-th by the first ranking.
    O(n log n) via inversion counting.
    """
    if len(order_a) != len(order_b):
        raise LengthMismatch(f"orders have lengths {len(order_a)} and {len(order_b)}")
    n = len(order_a)
    if n < 2:
        raise LengthMismatch("need at least two items")
    if len(set(order_a)) != n or len(set(order_b)) != n or set(order_a) != set(order_b):
        raise NotAPermutation("both orders must list the same items exactly once")
    pos_b = {x: i for i, x in enumerate(order_b)}
    _, discordant = _sort_count([pos_b[x] for x in order_a])
    pairs = n * (n - 1) // 2
    return (pairs - 2 * discordant) / pairs


# -- reply parsing ----------------------------------------------------------------

_ID = re.compile(r"(?:\b(?:architecture|arch|id|no\.?|number)|#)\s*#?\s*(\d+)", re.I)
_ENUMERATOR = re.compile(r"^\s*(?:[-*]\s*)?(?:rank(?:ing)?\s*)?\d+\s*[.):\-]\s+", re.I)
_INT = re.compile(r"\d+")


def _first_occurrences(values, n: int) -> list[int]:
    out = []
    for v in values:
        if 0 <= v < n and v not in out:
            out.append(v)
    return out


def parse_ranking(reply: str, archs: Sequence[str]) -> list[int]:
    """Predicted order (0-based sample indices, best first) from a free-form reply.

    Tried in turn, first complete match wins: re-emitted architecture
    strings; "architecture N" / "ID N" mentions; the first number of each
    line after stripping list enumerators; every number in the text.
    IDs in replies are 1-based.
    """
    n = len(archs)
    keys = {}
    for i, a in enumerate(archs):
        keys[serialize_nb201(parse_nb201(a))] = i
    strings = []
    for raw in find_cell_strings(reply):
        try:
            strings.append(keys.get(serialize_nb201(parse_nb201(raw)), -1))
        except ArchError:
            continue
    candidates = [_first_occurrences(strings, n)]
    candidates.append(_first_occurrences((int(m) - 1 for m in _ID.findall(reply)), n))
    per_line = []
    for line in reply.splitlines():
        m = _INT.search(_ENUMERATOR.sub("", line, count=1))
        if m:
            per_line.append(int(m.group()) - 1)
    candidates.append(_first_occurrences(per_line, n))
    candidates.append(_first_occurrences((int(m) - 1 for m in _INT.findall(reply)), n))
    for order in candidates:
        if len(order) == n:
            return order
    raise UnparseableRanking(f"could not read a ranking of {n} architectures from the reply")


# -- trials -----------------------------------------------------------------------

def sample_distinct(table: BenchTable, dataset_id: DatasetId, n: int, rng: np.random.Generator,
                    max_tries: int = 1000) -> list[int]:
    """``n`` distinct cell indices whose accuracies are pairwise distinct."""
    col = table.column(dataset_id)
    present = np.flatnonzero(~np.isnan(col))
    for _ in range(max_tries):
        idx = rng.choice(present, size=n, replace=False)
        if len(set(col[idx].tolist())) == n:
            return [int(i) for i in idx]
    raise ValueError(f"could not draw {n} cells with distinct accuracies")


def ground_truth_order(accuracies: Sequence[float]) -> list[int]:
    return sorted(range(len(accuracies)), key=lambda i: -accuracies[i])


def format_archs(archs: Sequence[str]) -> str:
    return "\n" + "\n".join(f"Architecture {i}: {a}" for i, a in enumerate(archs, start=1))


@dataclass
class RankingTrial:
    trial_id: int
    seed: int
    temperature: float
    archs: list[str]
    accuracies: list[float]
    predicted: Optional[list[int]] = None
    tau: Optional[float] = None
    top1_correct: Optional[bool] = None
    reply: str = ""
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.tau is None

    @property
    def reply_digest(self) -> str:
        return hashlib.blake2b(self.reply.encode(), digest_size=8).hexdigest()

    def predicted_ranks(self) -> Optional[list[int]]:
        """Predicted rank (1 = best) of the architecture with true rank k, for k = 1..n."""
        if self.predicted is None:
            return None
        rank_of = {item: r for r, item in enumerate(self.predicted, start=1)}
        return [rank_of[i] for i in ground_truth_order(self.accuracies)]


def score_trial(trial: RankingTrial) -> RankingTrial:
    try:
        order = parse_ranking(trial.reply, trial.archs)
    except UnparseableRanking as exc:
        trial.error = str(exc)
        return trial
    truth = ground_truth_order(trial.accuracies)
    trial.predicted = order
    trial.tau = kendall_tau(truth, order)
    trial.top1_correct = order[0] == truth[0]
    return trial


def run_trial(archs: Sequence[str], accuracies: Sequence[float], backend: Backend, prompts: PromptSet, *,
              trial_id: int = 0, seed: int = 0, temperature: float = 0.6,
              description: Optional[str] = None) -> RankingTrial:
    description = description if description is not None else Nb201Space().describe()
    messages = [
        ChatMessage("system", render(prompts.ranking_system, search_space_description=description)),
        ChatMessage("user", render(prompts.ranking_user, archs=format_archs(archs))),
    ]
    trial = RankingTrial(trial_id, seed, temperature, list(archs), [float(a) for a in accuracies])
    try:
        trial.reply = chat_with_retry(backend, messages, SamplingParams(temperature=temperature), role="ranker")
    except BackendError as exc:
        trial.error = f"{type(exc).__name__}: {exc}"
        return trial
    return score_trial(trial)


@dataclass
class PocReport:
    trials: list[RankingTrial]
    dataset: str
    n_archs: int
    meta: dict = field(default_factory=dict)

    @property
    def scored(self) -> list[RankingTrial]:
        return [t for t in self.trials if not t.failed]

    @property
    def failed(self) -> int:
        return len(self.trials) - len(self.scored)

    @property
    def mean_tau(self) -> Optional[float]:
        taus = [t.tau for t in self.scored]
        return statistics.fmean(taus) if taus else None

    @property
    def std_tau(self) -> Optional[float]:
        taus = [t.tau for t in self.scored]
        return statistics.pstdev(taus) if taus else None

    @property
    def top1_rate(self) -> Optional[float]:
        s = self.scored
        return sum(t.top1_correct for t in s) / len(s) if s else None

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "n_archs": self.n_archs,
            "trials": len(self.trials),
            "failed": self.failed,
            "mean_tau": self.mean_tau,
            "std_tau": self.std_tau,
            "top1_rate": self.top1_rate,
            **self.meta,
        }

    def trials_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial_id", "seed", "tau", "top1_correct", "raw_reply_digest"])
        for t in self.trials:
            w.writerow([t.trial_id, t.seed, "" if t.tau is None else repr(t.tau),
                        "" if t.top1_correct is None else int(t.top1_correct), t.reply_digest])
        return buf.getvalue()

    def rank_matrix_csv(self) -> str:
        """One row per scored trial: predicted rank of the true 1st, 2nd, ... architecture."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial_id", *(f"true_rank_{k}" for k in range(1, self.n_archs + 1))])
        for t in self.scored:
            w.writerow([t.trial_id, *t.predicted_ranks()])
        return buf.getvalue()

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "poc_report.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        (directory / "poc_trials.csv").write_text(self.trials_csv())
        (directory / "poc_rank_matrix.csv").write_text(self.rank_matrix_csv())


def run_poc(table: BenchTable, dataset_id: DatasetId, backend: Backend, *, n_archs: int = 10,
            n_trials: int = 40, seeds: Optional[Sequence[int]] = None,
            temperatures: Sequence[float] = (0.6,), prompts: Optional[PromptSet] = None,
            executor: Optional[Executor] = None) -> PocReport:
    """Run ``n_trials`` ranking trials; trial ``i`` uses ``seeds[i]`` and cycles through ``temperatures``.

    Trials whose reply cannot be parsed (or whose backend call fails) are
    kept in the report, flagged, and left out of the tau statistics.
    """
    seeds = list(range(n_trials)) if seeds is None else list(seeds)
    if len(seeds) != n_trials:
        raise ValueError(f"{len(seeds)} seeds for {n_trials} trials")
    if not temperatures:
        raise ValueError("need at least one temperature")
    prompts = prompts or PromptSet.load()
    description = Nb201Space().describe()

    def one(i: int) -> RankingTrial:
        rng = np.random.default_rng(seeds[i])
        idx = sample_distinct(table, dataset_id, n_archs, rng)
        archs = [serialize_nb201(nb201_from_index(j)) for j in idx]
        accs = [table.lookup(j, dataset_id) for j in idx]
        return run_trial(archs, accs, backend, prompts, trial_id=i, seed=seeds[i],
                         temperature=temperatures[i % len(temperatures)], description=description)

    if executor is not None:
        trials = list(executor.map(one, range(n_trials)))
    else:
        trials = [one(i) for i in range(n_trials)]
    return PocReport(trials, str(dataset_id), n_archs, {"temperatures": list(temperatures),
                                                        "backend": backend.describe()})
