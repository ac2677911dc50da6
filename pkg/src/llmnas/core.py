"""Search substrate shared by every method.

``SearchSession`` is the coordinator's bookkeeping: it owns the archive of
visited architectures, charges the evaluation budget, gates the best
architecture on the resource constraint and records the full trajectory,
including candidates that were rejected as illegal or duplicate.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import statistics
from concurrent.futures import Executor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from .archspace.cost import CostEstimate
from .archspace.spaces import SearchSpace
from .bench import BenchTable, DatasetId
from .errors import BudgetExhausted, ConfigError, EmptyInput

CONSTRAINT_METRICS = ("none", "flops", "params")


@dataclass(frozen=True)
class Constraint:
    metric: str = "none"
    bound: Optional[float] = None

    def __post_init__(self):
        if self.metric not in CONSTRAINT_METRICS:
            raise ConfigError(f"constraint metric must be one of {CONSTRAINT_METRICS}, got {self.metric!r}")
        if self.metric != "none" and (self.bound is None or not self.bound > 0):
            raise ConfigError(f"constraint on {self.metric} needs a positive bound, got {self.bound!r}")

    @classmethod
    def parse(cls, text: Optional[str]) -> "Constraint":
        """``"flops:330"``, ``"params:6"`` or ``"none"``."""
        if not text or text == "none":
            return cls()
        metric, sep, value = text.partition(":")
        if not sep:
            raise ConfigError(f"constraint must look like <metric>:<value>, got {text!r}")
        try:
            return cls(metric, float(value))
        except ValueError:
            raise ConfigError(f"constraint bound {value!r} is not a number") from None

    def __str__(self) -> str:
        if self.metric == "none":
            return "none"
        unit = "MFLOPs" if self.metric == "flops" else "M parameters"
        return f"{self.metric} <= {self.bound:g} {unit}"


def check_constraint(cost: Optional[CostEstimate], constraint: Constraint) -> bool:
    """Inclusive bound: ``cost.metric <= bound``; always true for metric ``none``."""
    if constraint.metric == "none":
        return True
    if cost is None:
        return False
    return cost.get(constraint.metric) <= constraint.bound


# -- records -------------------------------------------------------------------

EVALUATED, DUPLICATE, ILLEGAL = "EVALUATED", "DUPLICATE", "ILLEGAL"


@dataclass
class EvalRecord:
    """One candidate seen by the coordinator.

    Duplicate and illegal candidates carry no accuracy and cost no budget.
    ``key`` is the canonical architecture key, or ``None`` when the candidate
    could not even be parsed (``raw`` then holds the text).
    """

    iteration: int
    key: Optional[str]
    accuracy: Optional[float] = None
    cost: Optional[CostEstimate] = None
    legal: bool = True
    duplicate: bool = False
    feasible: Optional[bool] = None
    raw: Optional[str] = None
    reason: Optional[str] = None
    arch: Any = field(default=None, repr=False, compare=False)

    @property
    def status(self) -> str:
        if not self.legal:
            return ILLEGAL
        return DUPLICATE if self.duplicate else EVALUATED

    @property
    def text(self) -> str:
        return self.key if self.key is not None else (self.raw or "")

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "arch": self.text,
            "status": self.status,
            "accuracy": self.accuracy,
            "flops": None if self.cost is None else round(self.cost.flops, 6),
            "params": None if self.cost is None else round(self.cost.params, 6),
            "feasible": self.feasible,
            "reason": self.reason,
        }


class Archive:
    """Visited set plus the append-only list of evaluated records."""

    def __init__(self):
        self.visited: set[str] = set()
        self.records: list[EvalRecord] = []
        self._by_key: dict[str, EvalRecord] = {}

    def __contains__(self, key: str) -> bool:
        return key in self.visited

    def __len__(self) -> int:
        return len(self.records)

    def add(self, record: EvalRecord) -> None:
        if record.key in self.visited:
            raise ValueError(f"{record.key} already archived")
        self.visited.add(record.key)
        self.records.append(record)
        self._by_key[record.key] = record

    def get(self, key: str) -> Optional[EvalRecord]:
        return self._by_key.get(key)


# -- evaluators ------------------------------------------------------------------

class Evaluator:
    """``evaluate(arch) -> (accuracy percent, CostEstimate)``; deterministic per arch."""

    name = "evaluator"

    def evaluate(self, arch) -> tuple[float, CostEstimate]:
        raise NotImplementedError

    def metrics(self, arch) -> dict:
        """Extra numbers reported for the final best architecture."""
        return {}

    def describe(self) -> dict:
        return {"name": self.name}


class BenchEvaluator(Evaluator):
    """Ground-truth lookups in an NB201 table; cost from the analytic model."""

    name = "bench"

    def __init__(self, table: BenchTable, dataset_id: DatasetId, space: Optional[SearchSpace] = None):
        from .archspace.spaces import Nb201Space

        self.table = table
        self.dataset_id = dataset_id
        self.space = space or Nb201Space(dataset_id.dataset)
        self._cost_cache: dict[str, CostEstimate] = {}

    def evaluate(self, arch):
        key = self.space.key(arch)
        cost = self._cost_cache.get(key)
        if cost is None:
            cost = self._cost_cache[key] = self.space.cost(arch)
        return self.table.lookup(arch, self.dataset_id), cost

    def metrics(self, arch):
        rec = self.table.record(arch)
        ds = self.dataset_id.dataset
        return {f"{ds}/valid": rec[f"{ds}/valid"], f"{ds}/test": rec[f"{ds}/test"]}

    def describe(self):
        return {"name": self.name, "dataset": str(self.dataset_id), "table_digest": self.table.digest}


class FunctionEvaluator(Evaluator):
    """Wraps ``fn(arch) -> accuracy``; cost comes from the space."""

    def __init__(self, fn: Callable[[Any], float], space: SearchSpace, name: str = "function"):
        self.fn = fn
        self.space = space
        self.name = name

    def evaluate(self, arch):
        return float(self.fn(arch)), self.space.cost(arch)


class SurrogateEvaluator(Evaluator):
    """Synthetic "surrogate accuracy" for macro spaces.

    Accuracy rises with the square root of log-FLOPs towards a ceiling, plus a
    deterministic per-architecture perturbation of up to +/-0.5 points.  It is
    a stand-in landscape for exercising the search machinery, not a model of
    ImageNet accuracy.
    """

    name = "surrogate"

    def __init__(self, space: SearchSpace, seed: int = 0, ceiling: float = 82.0):
        self.space = space
        self.seed = seed
        self.ceiling = ceiling

    def evaluate(self, arch):
        cost = self.space.cost(arch)
        digest = hashlib.blake2b(f"{self.seed}:{self.space.key(arch)}".encode(), digest_size=8).digest()
        jitter = int.from_bytes(digest, "big") / 2 ** 64 - 0.5
        acc = self.ceiling - 40.0 / math.sqrt(max(math.log(cost.macs + 1.0), 1e-9)) + jitter
        return round(min(max(acc, 0.0), 100.0), 4), cost

    def describe(self):
        return {"name": self.name, "space": self.space.name, "seed": self.seed,
                "label": "surrogate accuracy"}


# -- configuration / results -------------------------------------------------------

@dataclass
class SearchConfig:
    arch_budget: int = 100
    iteration_limit: int = 20
    target: Optional[float] = None
    constraint: Constraint = field(default_factory=Constraint)
    dataset: str = "cifar10/test"
    seed: int = 0

    def __post_init__(self):
        if self.arch_budget < 1:
            raise ConfigError("arch_budget must be >= 1")
        if self.iteration_limit < 1:
            raise ConfigError("iteration_limit must be >= 1")

    def to_json(self) -> dict:
        d = asdict(self)
        d["constraint"] = {"metric": self.constraint.metric, "bound": self.constraint.bound}
        return d


@dataclass
class Counters:
    generated: int = 0
    invalid: int = 0
    duplicate: int = 0
    evaluated: int = 0


@dataclass
class SearchResult:
    method: str
    seed: int
    best_key: Optional[str]
    best_arch: Any
    best_accuracy: float
    best_metrics: dict
    evaluations: int
    iterations: int
    counters: Counters
    trajectory: list[EvalRecord]
    curve: list[tuple[int, int, float]]
    status: str = "complete"
    error: Optional[str] = None
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return self.status != "complete"

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "status": self.status,
            "error": self.error,
            "best_arch": self.best_key,
            "best_accuracy": self.best_accuracy,
            "best_metrics": self.best_metrics,
            "evaluations": self.evaluations,
            "iterations": self.iterations,
            "counters": asdict(self.counters),
            "config": self.config,
            "extra": self.extra,
        }

    def trajectory_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in self.trajectory)

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "evaluations", "best_accuracy"])
        w.writerows(self.curve)
        return buf.getvalue()

    def write(self, directory, stem: str) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        (directory / f"{stem}.trajectory.jsonl").write_text(self.trajectory_jsonl())
        (directory / f"{stem}.curve.csv").write_text(self.curve_csv())


class SearchSession:
    """Coordinator state for a single run.

    Best-tracking follows the strict rule ``feasible and p > p*`` starting from
    ``p* = 0``, so ties keep the earlier architecture.
    """

    def __init__(self, space: SearchSpace, evaluator: Evaluator, constraint: Constraint = Constraint(),
                 budget: int = 100):
        if budget < 1:
            raise ConfigError("budget must be >= 1")
        self.space = space
        self.evaluator = evaluator
        self.constraint = constraint
        self.budget = budget
        self.archive = Archive()
        self.trajectory: list[EvalRecord] = []
        self.counters = Counters()
        self.curve: list[tuple[int, int, float]] = []
        self.best_key: Optional[str] = None
        self.best_arch = None
        self.best_accuracy = 0.0
        self.iterations = 0

    @property
    def used(self) -> int:
        return len(self.archive)

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    @property
    def exhausted(self) -> bool:
        return self.remaining <= 0

    def accuracy_of(self, key: str) -> Optional[float]:
        rec = self.archive.get(key)
        return None if rec is None else rec.accuracy

    # -- submission -----------------------------------------------------------
    def _classify(self, arch, t: int, pending: set) -> Optional[EvalRecord]:
        """Record for an illegal/duplicate candidate, or None if it must be evaluated."""
        verdict = self.space.validate(arch) if arch is not None else None
        if verdict is None or not verdict:
            key = None
            try:
                key = self.space.key(arch)
            except Exception:  # unkeyable garbage still gets an ILLEGAL record
                pass
            return EvalRecord(t, key, legal=False, raw=None if key else repr(arch),
                              reason=str(verdict), arch=arch)
        key = self.space.key(arch)
        if key in self.archive or key in pending:
            return EvalRecord(t, key, duplicate=True, arch=arch)
        return None

    def _log(self, record: EvalRecord) -> EvalRecord:
        self.counters.generated += 1
        if not record.legal:
            self.counters.invalid += 1
        elif record.duplicate:
            self.counters.duplicate += 1
        else:
            self.counters.evaluated += 1
            self.archive.add(record)
            if record.feasible and record.accuracy > self.best_accuracy:
                self.best_accuracy = record.accuracy
                self.best_key = record.key
                self.best_arch = record.arch
        self.trajectory.append(record)
        return record

    def _evaluated(self, arch, t: int, outcome) -> EvalRecord:
        accuracy, cost = outcome
        return EvalRecord(t, self.space.key(arch), accuracy=float(accuracy), cost=cost,
                          feasible=check_constraint(cost, self.constraint), arch=arch)

    def submit(self, arch, t: int) -> EvalRecord:
        """Validate, deduplicate and (if new) evaluate one candidate."""
        if self.exhausted:
            raise BudgetExhausted(f"budget of {self.budget} evaluations used up")
        rejected = self._classify(arch, t, set())
        if rejected is not None:
            return self._log(rejected)
        return self._log(self._evaluated(arch, t, self.evaluator.evaluate(arch)))

    def submit_invalid(self, raw: str, reason: str, t: int) -> EvalRecord:
        """Record text that could not be turned into an architecture at all."""
        return self._log(EvalRecord(t, None, legal=False, raw=raw, reason=reason))

    def submit_batch(self, archs: Sequence, t: int, executor: Optional[Executor] = None) -> list[EvalRecord]:
        """Submit candidates in order; new ones may be evaluated concurrently.

        Classification and archive insertion happen in candidate order on the
        calling thread, so results do not depend on ``executor``.  Once the
        budget is spent the remaining candidates are dropped unrecorded.
        """
        plan: list[tuple[Any, Optional[EvalRecord]]] = []
        pending: set[str] = set()
        slots = self.remaining
        for arch in archs:
            rejected = self._classify(arch, t, pending)
            if rejected is None:
                if slots == 0:
                    break
                slots -= 1
                pending.add(self.space.key(arch))
            plan.append((arch, rejected))
        todo = [arch for arch, rejected in plan if rejected is None]
        if executor is not None and len(todo) > 1:
            outcomes = list(executor.map(self.evaluator.evaluate, todo))
        else:
            outcomes = [self.evaluator.evaluate(a) for a in todo]
        it = iter(outcomes)
        out = []
        for arch, rejected in plan:
            rec = rejected if rejected is not None else self._evaluated(arch, t, next(it))
            out.append(self._log(rec))
        return out

    def end_iteration(self, t: int) -> None:
        self.iterations = t
        self.curve.append((t, self.used, self.best_accuracy))

    def result(self, method: str, seed: int, *, config: Optional[dict] = None, status: str = "complete",
               error: Optional[str] = None, extra: Optional[dict] = None) -> SearchResult:
        metrics = self.evaluator.metrics(self.best_arch) if self.best_arch is not None else {}
        best_json = self.space.to_json(self.best_arch) if self.best_arch is not None else None
        return SearchResult(
            method=method, seed=seed, best_key=self.best_key, best_arch=best_json,
            best_accuracy=self.best_accuracy, best_metrics=metrics, evaluations=self.used,
            iterations=self.iterations, counters=Counters(**asdict(self.counters)),
            trajectory=list(self.trajectory), curve=list(self.curve), status=status, error=error,
            config=config or {}, extra=extra or {},
        )


# -- statistics ------------------------------------------------------------------

@dataclass(frozen=True)
class Stats:
    mean: float
    std: float
    n: int

    def __str__(self) -> str:
        return f"{self.mean:.2f} ± {self.std:.2f}"


def summarize(results: Sequence[SearchResult], metrics: Optional[Sequence[str]] = None) -> dict[str, Stats]:
    """Mean and population standard deviation (ddof=0) of each metric.

    ``metrics`` defaults to ``best_accuracy`` plus every key of the results'
    ``best_metrics``; a result missing a metric is skipped for that metric.
    """
    if not results:
        raise EmptyInput("summarize needs at least one result")
    if metrics is None:
        keys = ["best_accuracy"]
        for r in results:
            keys.extend(k for k in r.best_metrics if k not in keys)
        metrics = keys
    out = {}
    for m in metrics:
        values = [r.best_accuracy if m == "best_accuracy" else r.best_metrics.get(m) for r in results]
        values = [v for v in values if v is not None]
        if values:
            out[m] = Stats(statistics.fmean(values), statistics.pstdev(values), len(values))
    return out


def coefficient_of_variation(values: Sequence[float]) -> float:
    """Population std / mean, in percent."""
    if not values:
        raise EmptyInput("no values")
    mean = statistics.fmean(values)
    if mean == 0:
        return 0.0
    return 100.0 * statistics.pstdev(values) / mean
