import json

import pytest

from conftest import CIFAR10_TEST
from llmnas.archspace.cost import nb201_cost
from llmnas.archspace.nb201 import Nb201Arch, OpKind, parse_nb201, serialize_nb201
from llmnas.archspace.spaces import Nb201Space
from llmnas.backends import OracleBackend, ScriptedBackend, TranscriptLog
from llmnas.collm import (
    NO_CANDIDATES_NOTE,
    CollmConfig,
    MemoryPolicy,
    collm_search,
    paired_curve_csv,
    render_history,
    select_candidates,
    sillm_search,
)
from llmnas.core import BenchEvaluator, Constraint, FunctionEvaluator, SearchConfig
from llmnas.errors import ConfigError, Timeout
from llmnas.prompts import PromptSet, render

SPACE = Nb201Space()
PROMPTS = PromptSet.load()


def score(arch):
    """10 points per 3x3 conv, 1 per 1x1 conv: easy to trace by hand."""
    return float(sum(10 if op is OpKind.NOR_CONV_3X3 else op is OpKind.NOR_CONV_1X1 for op in arch.ops))


EVALUATOR = FunctionEvaluator(score, SPACE)


def cell(*ops):
    """Cell string from six short op names: n, s, c1, c3, p."""
    names = {"n": "none", "s": "skip_connect", "c1": "nor_conv_1x1", "c3": "nor_conv_3x3", "p": "avg_pool_3x3"}
    return serialize_nb201(Nb201Arch(tuple(OpKind(names[o]) for o in ops)))


BEST = cell("c3", "c3", "c3", "c3", "c3", "c3")  # 60
A = cell("c1", "n", "n", "n", "n", "s")  # 1
B = cell("c3", "n", "n", "n", "n", "s")  # 10
C = cell("c3", "c3", "c1", "n", "n", "s")  # 21
D = cell("c3", "c3", "c3", "n", "n", "s")  # 30
E = cell("p", "p", "p", "p", "p", "p")  # 0


class Recorder(ScriptedBackend):
    """Scripted backend that also keeps every request it was sent."""

    def __init__(self, script, **kw):
        super().__init__(script, **kw)
        self.requests = []

    def _complete(self, messages, params, role):
        self.requests.append((role, list(messages)))
        return super()._complete(messages, params, role)

    def by_role(self, role):
        return [m for r, m in self.requests if r == role]


def config(budget=100, T=5, **kw):
    search = kw.pop("search", {})
    return CollmConfig(search=SearchConfig(arch_budget=budget, iteration_limit=T, **search), **kw)


def statuses(result):
    return [r.status for r in result.trajectory]


def test_stops_as_soon_as_the_target_is_met():
    b = Recorder(["explore", f"{A}\n{BEST}\n{B}"])
    result = collm_search(SPACE, EVALUATOR, b, config(search=dict(target=60.0)))
    assert result.extra["stop"] == "target"
    assert result.best_key == BEST and result.best_accuracy == 60.0
    assert result.iterations == 1 and result.evaluations == 3
    assert result.extra["navigator_calls"] == 1 and result.extra["generator_calls"] == 1


def test_repeated_architecture_is_evaluated_once_and_the_run_goes_on():
    b = Recorder(["s0", A, "s1", A, "s2", A, "s3"])
    result = collm_search(SPACE, EVALUATOR, b, config(T=3))
    assert result.evaluations == 1 and result.iterations == 3
    assert statuses(result) == ["EVALUATED", "DUPLICATE", "DUPLICATE"]
    assert result.extra["stop"] == "iteration_limit"
    assert result.extra["navigator_calls"] == 4 and result.extra["generator_calls"] == 3
    assert result.extra["strategies"] == ["s0", "s1", "s2", "s3"]
    assert b.calls == 7


def test_malformed_strings_are_recorded_as_illegal():
    reply = "\n".join([A, "|conv_7x7~0|+|none~0|none~1|+|none~0|none~1|none~2|",
                       "|none~1|+|none~0|none~1|+|none~0|none~1|none~2|", B])
    result = collm_search(SPACE, EVALUATOR, Recorder(["s0", reply, "s1"]), config(T=1))
    assert statuses(result) == ["EVALUATED", "ILLEGAL", "ILLEGAL", "EVALUATED"]
    assert result.counters.invalid == 2 and result.evaluations == 2
    illegal = result.trajectory[1]
    assert illegal.accuracy is None and "UnknownOp" in illegal.reason


def test_reply_without_candidates_is_fed_back():
    b = Recorder(["s0", "Sorry, I cannot help with that.", "s1", B, "s2"])
    result = collm_search(SPACE, EVALUATOR, b, config(T=2))
    assert result.extra["empty_iterations"] == [1]
    assert result.evaluations == 1 and result.best_key == B
    first_refine = b.by_role("navigator")[1][-1].content
    assert NO_CANDIDATES_NOTE in first_refine
    assert result.status == "complete"


def test_invalid_only_reply_keeps_its_rejections():
    bad = "|conv_7x7~0|+|none~0|none~1|+|none~0|none~1|none~2|"
    b = Recorder(["s0", bad, "s1"])
    result = collm_search(SPACE, EVALUATOR, b, config(T=1))
    assert statuses(result) == ["ILLEGAL"]
    assert result.extra["empty_iterations"] == [1]
    assert bad in b.by_role("navigator")[1][-1].content


def test_stateless_navigator_sees_the_whole_history():
    b = Recorder(["s0", A, "s1", B, "s2", C, "s3"])
    memory = MemoryPolicy(navigator_retains=False)
    result = collm_search(SPACE, EVALUATOR, b, config(T=3, memory=memory))
    nav = b.by_role("navigator")
    assert [len(m) for m in nav] == [2, 2, 2, 2]
    last = nav[-1][-1].content
    for i, (strategy, arch) in enumerate([("s0", A), ("s1", B), ("s2", C)], start=1):
        assert f"Iteration {i}" in last and f"Strategy: {strategy}" in last and arch in last
    assert last.index("Iteration 1") < last.index("Iteration 2") < last.index("Iteration 3")
    assert result.extra["memory"] == "N-G-"


def test_retaining_navigator_grows_its_dialogue():
    b = Recorder(["s0", A, "s1", B, "s2", C, "s3"])
    collm_search(SPACE, EVALUATOR, b, config(T=3))
    nav = b.by_role("navigator")
    assert [len(m) for m in nav] == [2, 4, 6, 8]
    assert nav[1][1].content == PROMPTS.navigator_init and nav[1][2].content == "s0"
    # each refine prompt carries only the latest iteration
    assert "Iteration 2" in nav[2][-1].content and "Iteration 1" not in nav[2][-1].content


def test_generator_request_is_system_plus_strategy():
    b = Recorder(["try convs", A, "s1"])
    collm_search(SPACE, EVALUATOR, b, config(budget=20, T=1))
    (gen,) = b.by_role("generator")
    assert [m.role for m in gen] == ["system", "user"]
    assert gen[0].content == render(PROMPTS.generator_system, search_space_description=SPACE.describe())
    assert gen[1].content == render(PROMPTS.generator_user, strategy="try convs", n_candidates=20)


def test_retaining_generator_keeps_its_dialogue():
    b = Recorder(["s0", A, "s1", B, "s2"])
    collm_search(SPACE, EVALUATOR, b, config(T=2, memory=MemoryPolicy(True, True)))
    assert [len(m) for m in b.by_role("generator")] == [2, 4]


def test_exhausted_script_gives_partial_result():
    result = collm_search(SPACE, EVALUATOR, Recorder(["s0", f"{A}\n{B}", "s1"]), config(T=5))
    assert result.status == "partial" and result.partial
    assert result.error.startswith("ScriptExhausted")
    assert result.evaluations == 2 and result.best_key == B
    assert result.extra["stop"] == "error"


def test_timeouts_exhaust_retries_and_give_partial_result():
    class Slow(ScriptedBackend):
        def _complete(self, messages, params, role):
            if role == "generator":
                raise Timeout("no answer")
            return super()._complete(messages, params, role)

    sleeps = []
    b = Slow(["s0"])
    result = collm_search(SPACE, EVALUATOR, b, config(), sleep=sleeps.append)
    assert result.status == "partial" and "after 3 attempts" in result.error
    assert sleeps == [1.0, 2.0] and result.evaluations == 0
    assert result.best_arch is None


def test_empty_strategy_gives_partial_result():
    result = collm_search(SPACE, EVALUATOR, Recorder(["s0", A, "   "]), config())
    assert result.status == "partial" and result.error.startswith("EmptyStrategy")
    assert result.evaluations == 1


def test_single_model_ablation_follows_the_same_trajectory():
    script = ["s0", f"{A}\n{B}", "s1", f"{C}\n{A}", "s2", D, "s3"]
    two = collm_search(SPACE, EVALUATOR, Recorder(script), config(T=3))
    b = Recorder(script)
    one = sillm_search(SPACE, EVALUATOR, b, config(T=3))
    assert one.method == "sillm"
    assert one.trajectory_jsonl() == two.trajectory_jsonl()
    assert one.extra["navigator_calls"] == 4 and one.extra["generator_calls"] == 3
    assert [len(m) for _, m in b.requests] == [2, 4, 6, 8, 10, 12, 14]
    assert b.requests[1][1][-1].content == render(PROMPTS.generator_user, strategy="s0", n_candidates=34)


def test_oracle_run_replays_byte_identically(tmp_path, synth):
    log = tmp_path / "transcript.jsonl"
    cfg = CollmConfig(search=SearchConfig(arch_budget=60, iteration_limit=6))
    ev = BenchEvaluator(synth, CIFAR10_TEST)
    live = collm_search(SPACE, ev, OracleBackend(synth, CIFAR10_TEST, seed=3, log=TranscriptLog(log)), cfg)
    replay = collm_search(SPACE, ev, ScriptedBackend(log), cfg)
    assert replay.trajectory_jsonl() == live.trajectory_jsonl()
    assert json.dumps(replay.to_json(), sort_keys=True) == json.dumps(live.to_json(), sort_keys=True)
    assert replay.curve_csv() == live.curve_csv()
    assert len(log.read_text().splitlines()) == live.extra["navigator_calls"] + live.extra["generator_calls"]


def test_budget_exhaustion_drops_surplus_and_skips_refine():
    b = Recorder(["s0", "\n".join([A, B, C, D, E]), "s1", "\n".join([BEST, cell("c3", "n", "n", "n", "n", "n"),
                                                                      cell("s", "n", "n", "n", "n", "n")])])
    result = collm_search(SPACE, EVALUATOR, b, config(budget=7, T=5))
    assert result.evaluations == 7 and result.iterations == 2
    assert result.extra["stop"] == "budget"
    assert result.extra["navigator_calls"] == 2
    assert len(result.trajectory) == 7
    assert result.best_key == BEST


def test_constraint_gates_the_best_architecture():
    bound = nb201_cost(parse_nb201(D)).flops
    b = Recorder(["s0", f"{BEST}\n{D}\n{A}", "s1"])
    result = collm_search(SPACE, EVALUATOR, b, config(T=1, search=dict(constraint=Constraint("flops", bound))))
    assert [r.feasible for r in result.trajectory] == [False, True, True]
    assert result.best_key == D and result.best_accuracy == 30.0
    feedback = b.by_role("navigator")[1][-1].content
    (line,) = [l for l in feedback.splitlines() if l.startswith(BEST)]
    assert line.endswith("| LEGAL (violates constraint)")
    assert str(Constraint("flops", bound)) in b.by_role("navigator")[0][0].content


def test_hand_traced_trajectory():
    # t=1: A=1, B=10 -> best 10; t=2: C=21, A repeated -> best 21; t=3: E=0 -> best 21
    b = Recorder(["s0", f"{A}\n{B}", "s1", f"{C}\n{A}", "s2", E, "s3"])
    result = collm_search(SPACE, EVALUATOR, b, config(budget=30, T=3))
    assert result.curve == [(1, 2, 10.0), (2, 3, 21.0), (3, 4, 21.0)]
    assert [(r.iteration, r.key, r.accuracy, r.status) for r in result.trajectory] == [
        (1, A, 1.0, "EVALUATED"), (1, B, 10.0, "EVALUATED"),
        (2, C, 21.0, "EVALUATED"), (2, A, None, "DUPLICATE"),
        (3, E, 0.0, "EVALUATED"),
    ]
    assert result.counters.duplicate == 1 and result.best_key == C
    requested = [m[-1].content.split("exactly ")[1].split()[0] for m in b.by_role("generator")]
    assert requested == ["10", "14", "27"]  # ceil(30/3), ceil(28/2), ceil(27/1)


@pytest.mark.parametrize("remaining,t,T,expected", [
    (100, 1, 20, 5), (100, 1, 10, 10), (101, 1, 10, 11), (7, 5, 5, 7), (3, 5, 5, 5), (0, 3, 5, 5),
])
def test_candidates_per_iteration(remaining, t, T, expected):
    cfg = CollmConfig(search=SearchConfig(arch_budget=100, iteration_limit=T))
    assert cfg.n_candidates(remaining, t) == expected


def test_fixed_candidate_count_and_validation():
    assert CollmConfig(candidates_per_iteration=3).n_candidates(100, 1) == 3
    with pytest.raises(ConfigError):
        CollmConfig(candidates_per_iteration=0)
    with pytest.raises(ConfigError):
        CollmConfig(history_limit=0)


def test_extra_candidates_past_n_are_ignored():
    b = Recorder(["s0", "\n".join([A, B, C, D, E, BEST]), "s1"])
    result = collm_search(SPACE, EVALUATOR, b, config(budget=5, T=1))
    assert result.evaluations == 5 and BEST not in [r.key for r in result.trajectory]
    bad = "|conv_7x7~0|+|none~0|none~1|+|none~0|none~1|none~2|"
    items = SPACE.extract("\n".join([A, bad, B, C]))
    assert [i.raw for i in select_candidates(items, 2)] == [A, bad, B]


def test_history_truncation_for_stateless_navigator():
    script = ["s0"]
    for i, arch in enumerate([A, B, C, D], start=1):
        script += [arch, f"s{i}"]
    b = Recorder(script)
    cfg = config(T=4, memory=MemoryPolicy(False, False), history_limit=2)
    result = collm_search(SPACE, EVALUATOR, b, cfg)
    assert result.extra["history_truncations"] == 2
    last = b.by_role("navigator")[-1][-1].content
    assert "(2 earlier iterations omitted; best accuracy so far 30.00)" in last
    assert "Iteration 1\n" not in last and "Iteration 4" in last


def test_render_history_of_empty_history():
    text, truncated = render_history([], 3)
    assert text == "" and not truncated


def test_paired_curve_csv():
    short = collm_search(SPACE, EVALUATOR, Recorder(["s0", A, "s1"]), config(T=1))
    long = collm_search(SPACE, EVALUATOR, Recorder(["s0", A, "s1", B, "s2"]), config(T=2))
    assert paired_curve_csv({"a": short, "b": long}).splitlines() == [
        "iteration,a,b", "1,1.0,1.0", "2,,10.0"]


def test_separate_generator_backend():
    nav = Recorder(["s0", "s1"])
    gen = Recorder([A])
    result = collm_search(SPACE, EVALUATOR, nav, config(T=1), generator_backend=gen)
    assert nav.calls == 2 and gen.calls == 1 and result.best_key == A
