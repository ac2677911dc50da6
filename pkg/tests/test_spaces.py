import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from llmnas.archspace.nb201 import OPS, parse_nb201, serialize_nb201
from llmnas.archspace.spaces import (
    SPACE_NAMES,
    AutoFormerSpace,
    MobileNetSpace,
    Nb201Space,
    ShuffleNetSpace,
    arch_from_json,
    arch_to_json,
    crossover,
    get_space,
    mutate,
    random_arch,
)
from llmnas.errors import ArchError, UnsupportedSpace

ALL_SPACES = [get_space(name) for name in SPACE_NAMES]
CATEGORICAL = [Nb201Space(), MobileNetSpace(), ShuffleNetSpace()]
GOOD = "|nor_conv_3x3~0|+|nor_conv_3x3~0|nor_conv_3x3~1|+|skip_connect~0|nor_conv_3x3~1|nor_conv_1x1~2|"
SPARSE = "|none~0|+|none~0|none~1|+|none~0|none~1|skip_connect~2|"


def ids(spaces):
    return [s.name for s in spaces]


@pytest.mark.parametrize("space", ALL_SPACES, ids=ids(ALL_SPACES))
def test_mutate_rate_zero_is_identity(space):
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = random_arch(space, rng)
        assert mutate(space, a, rng, 0.0) == a


@pytest.mark.parametrize("space", ALL_SPACES, ids=ids(ALL_SPACES))
def test_crossover_with_itself_is_identity(space):
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = random_arch(space, rng)
        assert crossover(space, a, a, rng) == a


@pytest.mark.parametrize("space", CATEGORICAL, ids=ids(CATEGORICAL))
def test_mutate_rate_one_changes_every_dimension(space):
    rng = np.random.default_rng(2)
    a = space.sample(rng)
    b = space.mutate(a, rng, 1.0)
    assert all(x != y for x, y in zip(space.values(a), space.values(b)))


@pytest.mark.parametrize("space", CATEGORICAL, ids=ids(CATEGORICAL))
def test_crossover_takes_each_dimension_from_a_parent(space):
    rng = np.random.default_rng(3)
    a, b = space.sample(rng), space.sample(rng)
    from_a = 0
    total = 0
    for _ in range(200):
        child = space.crossover(a, b, rng)
        for x, y, c in zip(space.values(a), space.values(b), space.values(child)):
            assert c in (x, y)
            if x != y:
                total += 1
                from_a += c == x
    assert abs(from_a / total - 0.5) < 0.05


def test_mutation_rate_matches_flip_frequency():
    space = Nb201Space()
    rng = np.random.default_rng(4)
    a = space.sample(rng)
    flips = sum(x != y for _ in range(5000) for x, y in zip(a.ops, space.mutate(a, rng, 0.1).ops))
    assert abs(flips / (5000 * 6) - 0.1) < 0.01


def test_nb201_op_frequencies_are_uniform():
    rng = np.random.default_rng(5)
    space = Nb201Space()
    counts = np.zeros((6, 5))
    for _ in range(10_000):
        for edge, op in enumerate(space.sample(rng).ops):
            counts[edge, OPS.index(op)] += 1
    freq = counts / 10_000
    assert np.all(np.abs(freq - 0.2) <= 0.02)
    for edge in range(6):
        assert stats.chisquare(counts[edge]).pvalue > 1e-3


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(ALL_SPACES), st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0))
def test_property_variation_is_closed_over_legality(space, seed, rate):
    rng = np.random.default_rng(seed)
    a, b = space.sample(rng), space.sample(rng)
    assert space.validate(a) and space.validate(b)
    assert space.validate(space.mutate(a, rng, rate))
    assert space.validate(space.crossover(a, b, rng))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(ALL_SPACES), st.integers(0, 2 ** 32 - 1))
def test_property_choice_vectors_decode(space, seed):
    rng = np.random.default_rng(seed)
    dims = space.dimensions()
    values = [d[int(rng.integers(len(d)))] for d in dims]
    arch = space.from_choices(values)
    assert space.validate(arch)
    assert arch_from_json(arch_to_json(arch)) == arch


def test_autoformer_mutation_can_change_depth():
    space = AutoFormerSpace("autoformer-t")
    rng = np.random.default_rng(6)
    a = space.sample(rng)
    depths = {space.mutate(a, rng, 0.5).depth for _ in range(200)}
    assert len(depths) == 3
    for _ in range(50):
        m = space.mutate(a, rng, 0.5)
        assert len(m.heads) == len(m.mlp_ratios) == m.depth


def test_nb201_extraction_is_lenient():
    reply = (f"Sure! Candidates:\n1. {GOOD}\n2. `{SPARSE}`\n"
             "3. |conv_9x9~0|+|none~0|none~1|+|none~0|none~1|none~2|\nThat's all.")
    items = Nb201Space().extract(reply)
    assert [i.ok for i in items] == [True, True, False]
    assert items[0].arch == parse_nb201(GOOD)
    assert items[1].arch == parse_nb201(SPARSE)
    assert "UnknownOp" in items[2].error


def test_macro_extraction_reads_json_records():
    space = ShuffleNetSpace()
    good = json.dumps({"blocks": [0] * 20})
    reply = f'Try {good} and also {{"blocks": [0, 9]}} and {{"space": "mobilenet"}}'
    items = space.extract(reply)
    assert items[0].ok and items[0].arch.blocks == (0,) * 20
    assert not items[1].ok and "block length" in items[1].error
    assert len(items) == 3
    assert not items[2].ok and "VariantMismatch" in items[2].error


def test_keys_and_json():
    space = Nb201Space()
    arch = parse_nb201(GOOD)
    assert space.key(arch) == GOOD == space.format(arch)
    assert space.to_json(arch) == {"space": "nb201", "arch": GOOD}
    assert space.from_json({"arch": GOOD}) == arch
    with pytest.raises(ArchError):
        space.from_json({"space": "mobilenet", "arch": GOOD})
    with pytest.raises(ArchError):
        arch_from_json({"arch": GOOD})
    mb = MobileNetSpace().sample(np.random.default_rng(0))
    assert json.loads(MobileNetSpace().key(mb))["space"] == "mobilenet"


def test_get_space():
    assert isinstance(get_space("NAS-Bench-201"), Nb201Space)
    assert get_space("autoformer-b").definition.embed_dims == (528, 576, 624)
    with pytest.raises(UnsupportedSpace):
        get_space("darts")
    with pytest.raises(UnsupportedSpace):
        AutoFormerSpace("autoformer-xl")


def test_validate_rejects_foreign_objects():
    space = Nb201Space()
    assert not space.validate("not a cell")
    assert not space.is_legal(None)
    assert not MobileNetSpace().is_legal(ShuffleNetSpace().sample(np.random.default_rng(0)))


@pytest.mark.parametrize("space", ALL_SPACES, ids=ids(ALL_SPACES))
def test_descriptions_ship(space):
    text = space.describe()
    assert "Search Space" in text


def test_nb201_description_kept_verbatim():
    text = Nb201Space().describe()
    assert "Each cell contains 4 nodes (node 0-3)" in text
    example = text.split("Example: `", 1)[1].split("`", 1)[0]
    assert serialize_nb201(parse_nb201(example)) == example
