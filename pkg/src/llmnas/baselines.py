"""Comparator search methods: random search, evolution and REINFORCE.

All three drive a :class:`~llmnas.core.SearchSession`, so they share its
archive, budget accounting and result schema with the LLM methods.
"""

from __future__ import annotations

import itertools
from concurrent.futures import Executor
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .archspace.nb201 import NUM_ARCHS, nb201_from_index
from .archspace.spaces import Nb201Space, SearchSpace
from .core import Evaluator, SearchConfig, SearchResult, SearchSession
from .errors import ConfigError


def _reached(session: SearchSession, target: Optional[float]) -> bool:
    return target is not None and session.best_key is not None and session.best_accuracy >= target


def _fresh(session: SearchSession, draw: Callable[[], object], pending: set, retries: int):
    """Draw until the candidate is unseen, giving up after ``retries`` redraws."""
    arch = draw()
    for _ in range(retries):
        key = session.space.key(arch)
        if key not in session.archive and key not in pending:
            break
        arch = draw()
    return arch


# -- random search ------------------------------------------------------------

def random_search(space: SearchSpace, evaluator: Evaluator, config: SearchConfig, *,
                  batch: int = 10, executor: Optional[Executor] = None) -> SearchResult:
    """Uniform sampling without replacement until the budget is spent.

    NB201 draws a random permutation of the 15,625 cell indices; other spaces
    use rejection sampling against the archive.
    """
    if batch < 1:
        raise ConfigError("batch must be >= 1")
    rng = np.random.default_rng(config.seed)
    session = SearchSession(space, evaluator, config.constraint, config.arch_budget)
    if isinstance(space, Nb201Space):
        order = rng.permutation(NUM_ARCHS)[: config.arch_budget]
        stream = (nb201_from_index(int(i)) for i in order)
    else:
        stream = None
    for t in itertools.count(1):
        if session.exhausted:
            break
        n = min(batch, session.remaining)
        if stream is not None:
            archs = list(itertools.islice(stream, n))
            if not archs:
                break
        else:
            pending: set = set()
            archs = []
            for _ in range(n):
                arch = _fresh(session, lambda: space.sample(rng), pending, retries=1000)
                pending.add(space.key(arch))
                archs.append(arch)
        session.submit_batch(archs, t, executor)
        session.end_iteration(t)
        if _reached(session, config.target):
            break
    return session.result("rs", config.seed, config=config.to_json(), extra={"batch": batch})


# -- evolution ------------------------------------------------------------------

@dataclass(frozen=True)
class EaConfig:
    population: int = 10
    iterations: int = 10
    elite_fraction: float = 0.5
    mutation_rate: float = 0.1
    crossover_prob: float = 0.5
    max_retries: int = 10

    def __post_init__(self):
        if self.population < 1 or self.iterations < 1:
            raise ConfigError("population and iterations must be >= 1")
        if not 0.0 < self.elite_fraction <= 1.0:
            raise ConfigError("elite_fraction must be in (0, 1]")
        if not 0.0 <= self.mutation_rate <= 1.0 or not 0.0 <= self.crossover_prob <= 1.0:
            raise ConfigError("mutation_rate and crossover_prob must be in [0, 1]")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")

    @property
    def n_elites(self) -> int:
        return int(np.ceil(self.elite_fraction * self.population))


def _fitness(session: SearchSession, arch) -> tuple:
    rec = session.archive.get(session.space.key(arch))
    if rec is None:  # illegal offspring
        return (False, float("-inf"))
    return (bool(rec.feasible), rec.accuracy)


def evolutionary_search(space: SearchSpace, evaluator: Evaluator, config: SearchConfig,
                        ea: EaConfig = EaConfig(), *, executor: Optional[Executor] = None) -> SearchResult:
    """Generational EA with elite preservation.

    Generation 1 is a random population.  Every later generation breeds
    ``population`` offspring from uniformly chosen elites (the top
    ``ceil(elite_fraction * population)`` members): crossover of two elites
    with probability ``crossover_prob``, otherwise mutation of one.  The next
    population is the elites plus the best offspring filling the remaining
    slots, so a generation costs at most ``population`` evaluations and the
    run spends at most ``population * iterations``.  Infeasible members rank
    below every feasible one.  An offspring already seen is redrawn up to
    ``max_retries`` times and then admitted as a duplicate, which costs no
    budget and keeps its archived accuracy; a converged population therefore
    spends less than its schedule.
    """
    if ea.population * ea.iterations > config.arch_budget:
        raise ConfigError(
            f"population x iterations = {ea.population * ea.iterations} exceeds budget {config.arch_budget}"
        )
    rng = np.random.default_rng(config.seed)
    session = SearchSession(space, evaluator, config.constraint, config.arch_budget)

    def breed(elites: Sequence):
        def draw():
            if len(elites) > 1 and rng.random() < ea.crossover_prob:
                i, j = rng.choice(len(elites), size=2, replace=False)
                return space.crossover(elites[int(i)], elites[int(j)], rng)
            parent = elites[int(rng.integers(len(elites)))]
            return space.mutate(parent, rng, ea.mutation_rate)
        return draw

    def rank(archs):
        return sorted(archs, key=lambda a: _fitness(session, a), reverse=True)

    population: list = []
    populations: list[list[str]] = []
    for gen in range(1, ea.iterations + 1):
        elites = rank(population)[: ea.n_elites]
        draw = breed(elites) if elites else (lambda: space.sample(rng))
        pending: set = set()
        children = []
        for _ in range(ea.population):
            child = _fresh(session, draw, pending, ea.max_retries)
            pending.add(space.key(child))
            children.append(child)
        records = session.submit_batch(children, gen, executor)
        seen = {space.key(a) for a in elites}
        offspring = []
        for r in records:
            if r.legal and r.key not in seen:
                seen.add(r.key)
                offspring.append(r.arch)
        population = elites + rank(offspring)[: ea.population - len(elites)]
        populations.append(sorted(space.key(a) for a in population))
        session.end_iteration(gen)
        if session.exhausted or _reached(session, config.target):
            break
    return session.result("ea", config.seed, config=config.to_json(),
                          extra={"ea": asdict(ea), "populations": populations})


# -- REINFORCE ----------------------------------------------------------------

@dataclass(frozen=True)
class RlConfig:
    learning_rate: float = 0.01
    ema_momentum: float = 0.9
    batch: int = 1
    max_steps: Optional[int] = None

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ConfigError("ema_momentum must be in [0, 1)")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


class CategoricalPolicy:
    """Independent softmax distribution per categorical dimension."""

    def __init__(self, sizes: Sequence[int]):
        self.logits = [np.zeros(n) for n in sizes]

    def probs(self) -> list[np.ndarray]:
        return [softmax(l) for l in self.logits]

    def sample(self, rng: np.random.Generator) -> tuple[int, ...]:
        return tuple(int(rng.choice(len(p), p=p)) for p in self.probs())

    def log_prob(self, action: Sequence[int]) -> float:
        return float(sum(np.log(p[a]) for p, a in zip(self.probs(), action)))

    def score(self, action: Sequence[int]) -> list[np.ndarray]:
        """Gradient of ``log pi(action)`` with respect to each logit vector."""
        out = []
        for p, a in zip(self.probs(), action):
            g = -p.copy()
            g[a] += 1.0
            out.append(g)
        return out

    def step(self, actions: Sequence, advantages: Sequence[float], lr: float) -> None:
        grads = [np.zeros_like(l) for l in self.logits]
        for action, adv in zip(actions, advantages):
            for g, s in zip(grads, self.score(action)):
                g += adv * s
        for l, g in zip(self.logits, grads):
            l += lr * g / len(actions)


def policy_gradient(policy: CategoricalPolicy, reward: Callable[[tuple], float],
                    baseline: float = 0.0) -> list[np.ndarray]:
    """Exact expectation of the REINFORCE estimator, by enumerating all actions.

    Equals the gradient of ``E[reward]`` for any constant baseline.
    """
    probs = policy.probs()
    grads = [np.zeros_like(l) for l in policy.logits]
    for action in itertools.product(*(range(len(p)) for p in probs)):
        pa = float(np.prod([p[a] for p, a in zip(probs, action)]))
        adv = reward(action) - baseline
        for g, s in zip(grads, policy.score(action)):
            g += pa * adv * s
    return grads


def rl_search(space: SearchSpace, evaluator: Evaluator, config: SearchConfig,
              rl: RlConfig = RlConfig(), *, executor: Optional[Executor] = None) -> SearchResult:
    """REINFORCE over the space's categorical factorisation.

    Rewards are accuracies in percent.  The baseline is an exponential moving
    average of batch-mean reward, seeded with the first batch.  Architectures
    already in the archive reuse their recorded reward and cost no budget;
    infeasible or illegal samples get reward 0.  Stops when the budget is
    spent or after ``max_steps`` policy updates (default ``20 * budget``).
    """
    rng = np.random.default_rng(config.seed)
    session = SearchSession(space, evaluator, config.constraint, config.arch_budget)
    dims = space.dimensions()
    policy = CategoricalPolicy([len(d) for d in dims])
    max_steps = rl.max_steps if rl.max_steps is not None else 20 * config.arch_budget
    baseline = None
    for step in range(1, max_steps + 1):
        actions = [policy.sample(rng) for _ in range(rl.batch)]
        archs = [space.from_choices([d[a] for d, a in zip(dims, act)]) for act in actions]
        session.submit_batch(archs, step, executor)
        rewards = []
        for arch in archs:
            rec = session.archive.get(space.key(arch)) if space.is_legal(arch) else None
            rewards.append(rec.accuracy if rec is not None and rec.feasible else 0.0)
        mean = float(np.mean(rewards))
        baseline = mean if baseline is None else rl.ema_momentum * baseline + (1 - rl.ema_momentum) * mean
        policy.step(actions, [r - baseline for r in rewards], rl.learning_rate)
        session.end_iteration(step)
        if session.exhausted or _reached(session, config.target):
            break
    result = session.result("rl", config.seed, config=config.to_json(), extra={"rl": asdict(rl)})
    result.extra["final_probs"] = [p.round(6).tolist() for p in policy.probs()]
    return result
