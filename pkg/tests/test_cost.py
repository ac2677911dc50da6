import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from llmnas.archspace.cost import (
    CostEstimate,
    Tally,
    estimate_cost,
    make_divisible,
    mobilenet_cost,
    nb201_cost,
    shufflenet_cost,
    transformer_cost,
)
from llmnas.archspace.macro import AutoFormerArch, MobileNetArch, ShuffleNetArch
from llmnas.archspace.nb201 import Nb201Arch, OpKind, parse_nb201
from llmnas.errors import UnsupportedSpace
from test_macro import AUTOFORMER_ARCHS, OFA_ARCHS, SPOS_ARCH, autoformer, ofa


def brute_force_vit(embed, heads, ratios, image, patch, classes, head_dim=64):
    """Walk the network tensor op by tensor op, listing (MACs, params) for each."""
    grid = image // patch
    tokens = grid * grid + 1
    ops = []
    # patch embedding: a patch x patch conv with stride patch, with bias
    ops.append((grid * grid * embed * 3 * patch * patch, embed * 3 * patch * patch + embed))
    ops.append((0, embed))  # class token
    ops.append((0, tokens * embed))  # position embedding
    for h, r in zip(heads, ratios):
        inner = h * head_dim
        hidden = int(r * embed)
        ops.append((0, 2 * embed))  # pre-attention layer norm
        for _ in range(3):  # q, k, v projections
            ops.append((tokens * embed * inner, embed * inner + inner))
        ops.append((h * tokens * tokens * head_dim, 0))  # scores
        ops.append((h * tokens * head_dim * tokens, 0))  # weighted sum
        ops.append((tokens * inner * embed, inner * embed + embed))  # output projection
        ops.append((0, 2 * embed))  # pre-MLP layer norm
        ops.append((tokens * embed * hidden, embed * hidden + hidden))
        ops.append((tokens * hidden * embed, hidden * embed + embed))
    ops.append((0, 2 * embed))  # final norm
    ops.append((embed * classes, embed * classes + classes))  # classifier on the class token
    macs = sum(m for m, _ in ops)
    params = sum(p for _, p in ops)
    return 2 * macs / 1e6, params / 1e6


def test_toy_transformer_matches_brute_force_tally():
    est = transformer_cost(32, [2, 3], [2.0, 3.5], image_size=32, patch_size=8, num_classes=10, head_dim=8)
    flops, params = brute_force_vit(32, [2, 3], [2.0, 3.5], 32, 8, 10, head_dim=8)
    assert est.flops == pytest.approx(flops, rel=0, abs=1e-12)
    assert est.params == pytest.approx(params, rel=0, abs=1e-12)


@given(st.sampled_from([192, 216, 240]), st.lists(st.tuples(st.sampled_from([3, 4]),
                                                            st.sampled_from([3.0, 3.5, 4.0])),
                                                  min_size=1, max_size=4))
def test_property_transformer_matches_brute_force(embed, layers):
    heads = [h for h, _ in layers]
    ratios = [r for _, r in layers]
    est = transformer_cost(embed, heads, ratios)
    flops, params = brute_force_vit(embed, heads, ratios, 224, 16, 1000)
    assert math.isclose(est.flops, flops, rel_tol=1e-12)
    assert math.isclose(est.params, params, rel_tol=1e-12)


def test_transformer_layer_mismatch():
    with pytest.raises(ValueError):
        transformer_cost(192, [3, 3], [4.0])


def test_autoformer_tiny_params_near_published():
    assert estimate_cost(autoformer("autoformer-t")).params == pytest.approx(6.0, rel=0.10)


@pytest.mark.parametrize("variant,params", [("autoformer-s", 22.9), ("autoformer-b", 52.8)])
def test_larger_autoformers_params_near_published(variant, params):
    assert estimate_cost(autoformer(variant)).params == pytest.approx(params, rel=0.10)


# Published compute of the discovered models; these numbers are multiply-accumulates.
PUBLISHED_MACS = {"tiny": 199, "small": 297, "small-sota": 320, "base": 396, "large": 494}


@pytest.mark.parametrize("name", sorted(PUBLISHED_MACS))
def test_mobilenet_macs_near_published(name):
    assert estimate_cost(ofa(name)).macs == pytest.approx(PUBLISHED_MACS[name], rel=0.10)


def test_shufflenet_macs_near_published():
    assert estimate_cost(ShuffleNetArch(SPOS_ARCH)).macs == pytest.approx(325, rel=0.05)


@pytest.mark.parametrize("variant,macs", [("autoformer-t", 1366), ("autoformer-s", 4897),
                                          ("autoformer-b", 11074)])
def test_transformer_macs_near_published(variant, macs):
    assert estimate_cost(autoformer(variant)).macs == pytest.approx(macs, rel=0.10)


def test_flops_are_twice_macs():
    t = Tally()
    t.conv(4, 8, 3, 5)
    est = t.estimate()
    assert est.flops == 2 * 4 * 8 * 9 * 25 / 1e6
    assert est.macs == 4 * 8 * 9 * 25 / 1e6
    assert est.get("flops") == est.flops and est.get("params") == est.params
    with pytest.raises(KeyError):
        est.get("latency")


def test_zero_depth_network_costs_only_the_fixed_parts():
    res = 224
    empty = mobilenet_cost(res, [0] * 5, [7] * 20, [6] * 20)
    # stem conv + first block (dw3x3 + 1x1 project, no expansion) + final expand + feature mix + classifier
    stem = first = make_divisible(16 * 1.2)
    final_expand, last = make_divisible(960 * 1.2), make_divisible(1280 * 1.2)
    hw = 112
    t = Tally()
    t.conv(3, stem, 3, hw)
    t.dwconv(stem, 3, hw)
    t.conv(stem, first, 1, hw)
    t.conv(first, final_expand, 1, hw)
    t.conv(final_expand, last, 1, 1)
    t.linear(last, 1000)
    assert empty.flops == pytest.approx(t.estimate().flops, rel=1e-12)


def test_zero_depth_stage_adds_nothing():
    k, e = [5] * 20, [4] * 20
    a = mobilenet_cost(224, [2, 0, 0, 0, 0], k, e)
    # only the first two slots are active, so every other slot is ignored
    c = mobilenet_cost(224, [2, 0, 0, 0, 0], [5, 5] + [3] * 18, [4, 4] + [6] * 18)
    assert a == c
    assert a != mobilenet_cost(224, [2, 0, 0, 0, 0], [3] * 20, [4] * 20)


mobilenet_archs = st.builds(
    lambda r, d, k, e: (r, d, k, e),
    st.sampled_from([160, 176, 192, 208, 224]),
    st.lists(st.sampled_from([2, 3, 4]), min_size=5, max_size=5),
    st.lists(st.sampled_from([3, 5, 7]), min_size=20, max_size=20),
    st.lists(st.sampled_from([3, 4, 6]), min_size=20, max_size=20),
)


def _nondecreasing(small: CostEstimate, large: CostEstimate):
    assert large.flops >= small.flops - 1e-12
    assert large.params >= small.params - 1e-12


@given(mobilenet_archs, st.integers(0, 19), st.data())
def test_property_mobilenet_monotone_in_kernel_and_expand(arch, slot, data):
    r, d, k, e = arch
    base = mobilenet_cost(r, d, k, e)
    bigger_k = list(k)
    bigger_k[slot] = data.draw(st.sampled_from([v for v in (3, 5, 7) if v >= k[slot]]))
    _nondecreasing(base, mobilenet_cost(r, d, bigger_k, e))
    bigger_e = list(e)
    bigger_e[slot] = data.draw(st.sampled_from([v for v in (3, 4, 6) if v >= e[slot]]))
    _nondecreasing(base, mobilenet_cost(r, d, k, bigger_e))


@given(mobilenet_archs, st.integers(0, 4))
def test_property_mobilenet_monotone_in_depth_and_resolution(arch, stage):
    r, d, k, e = arch
    base = mobilenet_cost(r, d, k, e)
    if d[stage] < 4:
        deeper = list(d)
        deeper[stage] += 1
        _nondecreasing(base, mobilenet_cost(r, deeper, k, e))
    if r < 224:
        _nondecreasing(base, mobilenet_cost(r + 16, d, k, e))


@given(st.sampled_from([192, 216]), st.lists(st.tuples(st.sampled_from([3, 4]), st.sampled_from([3.0, 3.5])),
                                             min_size=12, max_size=13), st.data())
def test_property_transformer_monotone(embed, layers, data):
    heads = [h for h, _ in layers]
    ratios = [r for _, r in layers]
    base = transformer_cost(embed, heads, ratios)
    _nondecreasing(base, transformer_cost(embed + 24, heads, ratios))
    _nondecreasing(base, transformer_cost(embed, heads + [3], ratios + [3.0]))
    i = data.draw(st.integers(0, len(layers) - 1))
    more_heads = list(heads)
    more_heads[i] = 4
    _nondecreasing(base, transformer_cost(embed, more_heads, ratios))
    wider = list(ratios)
    wider[i] = 4.0
    _nondecreasing(base, transformer_cost(embed, heads, wider))


@given(st.lists(st.sampled_from([0, 1, 2]), min_size=20, max_size=20), st.integers(0, 19))
def test_property_shufflenet_monotone_in_kernel(blocks, slot):
    assume(blocks[slot] < 2)
    bigger = list(blocks)
    bigger[slot] += 1
    _nondecreasing(shufflenet_cost(blocks), shufflenet_cost(bigger))


def test_nb201_cost_orders_operations():
    none = nb201_cost(Nb201Arch((OpKind.NONE,) * 6))
    for op in (OpKind.SKIP_CONNECT, OpKind.AVG_POOL_3X3):
        assert nb201_cost(Nb201Arch((op,) * 6)) == none
    c1 = nb201_cost(Nb201Arch((OpKind.NOR_CONV_1X1,) * 6))
    c3 = nb201_cost(Nb201Arch((OpKind.NOR_CONV_3X3,) * 6))
    assert 0 < none.flops < c1.flops < c3.flops
    assert 0 < none.params < c1.params < c3.params


def test_nb201_cost_depends_on_dataset():
    arch = parse_nb201("|nor_conv_3x3~0|+|nor_conv_3x3~0|nor_conv_3x3~1|+|skip_connect~0|nor_conv_3x3~1|"
                       "nor_conv_1x1~2|")
    c10 = nb201_cost(arch, "cifar10")
    assert nb201_cost(arch, "cifar100").params > c10.params
    assert nb201_cost(arch, "imagenet16-120").flops < c10.flops
    with pytest.raises(UnsupportedSpace):
        nb201_cost(arch, "mnist")


def test_estimate_cost_dispatch():
    assert estimate_cost(MobileNetArch(*OFA_ARCHS["tiny"])) == mobilenet_cost(*OFA_ARCHS["tiny"])
    t = AUTOFORMER_ARCHS["autoformer-t"]
    assert estimate_cost(AutoFormerArch("autoformer-t", *t)) == transformer_cost(t[1], t[2], t[3])
    with pytest.raises(UnsupportedSpace):
        estimate_cost("resnet50")


def test_costs_are_non_negative():
    for arch in [ofa(n) for n in OFA_ARCHS] + [ShuffleNetArch(SPOS_ARCH), autoformer("autoformer-t")]:
        est = estimate_cost(arch)
        assert est.flops > 0 and est.params > 0
