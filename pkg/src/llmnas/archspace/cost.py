"""Analytic FLOPs / parameter counts for every supported search space.

Counting conventions (fixed for the whole package):

* Convolutions and linear layers count one multiply-accumulate (MAC) per
  weight per output position; biases are counted as parameters only.
* Attention counts the two token-by-token matmuls (Q K^T and A V).
* Normalisation layers contribute their affine parameters (2 per channel)
  and no MACs.  Activations, pooling, residual adds, softmax and the
  squeeze-excitation rescale are free.
* ``flops = 2 * MACs``.  Both numbers are reported in millions, so a model
  that benchmarks quote as "200M FLOPs" (really MACs) shows up here as
  ``flops ~= 400`` and ``macs ~= 200``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from ..errors import UnsupportedSpace
from .macro import AutoFormerArch, MobileNetArch, ShuffleNetArch
from .nb201 import Nb201Arch, OpKind


@dataclass(frozen=True)
class CostEstimate:
    flops: float  # mega-FLOPs
    params: float  # mega-parameters

    @property
    def macs(self) -> float:
        return self.flops / 2.0

    def get(self, metric: str) -> float:
        if metric == "flops":
            return self.flops
        if metric == "params":
            return self.params
        raise KeyError(metric)

    def to_json(self) -> dict:
        return {"flops": round(self.flops, 6), "params": round(self.params, 6)}


class Tally:
    """Running count of MACs and parameters (raw units)."""

    def __init__(self):
        self.macs = 0
        self.params = 0

    def conv(self, cin, cout, k, out_hw, *, groups=1, bias=False):
        weights = cout * (cin // groups) * k * k
        self.params += weights + (cout if bias else 0)
        self.macs += weights * out_hw * out_hw

    def dwconv(self, c, k, out_hw):
        self.conv(c, c, k, out_hw, groups=c)

    def norm(self, c):
        self.params += 2 * c

    def linear(self, fin, fout, *, tokens=1, bias=True):
        self.params += fin * fout + (fout if bias else 0)
        self.macs += fin * fout * tokens

    def matmul(self, m, k, n):
        self.macs += m * k * n

    def estimate(self) -> CostEstimate:
        return CostEstimate(flops=2 * self.macs / 1e6, params=self.params / 1e6)


# -- NAS-Bench-201 -------------------------------------------------------------

NB201_DATASETS = {
    # name: (input resolution, classes)
    "cifar10": (32, 10),
    "cifar100": (32, 100),
    "imagenet16-120": (16, 120),
}


def nb201_cost(arch: Nb201Arch, dataset: str = "cifar10", *, channels: int = 16,
               cells_per_stage: int = 5) -> CostEstimate:
    """Cost of the full NB201 network: stem, 3 x 5 cells, 2 residual reductions."""
    try:
        hw, classes = NB201_DATASETS[dataset]
    except KeyError:
        raise UnsupportedSpace(f"no NB201 cost layout for dataset {dataset!r}") from None
    t = Tally()
    c = channels
    t.conv(3, c, 3, hw)
    t.norm(c)
    for stage in range(3):
        if stage:
            cin, c = c, c * 2
            hw = (hw + 1) // 2
            t.conv(cin, c, 3, hw)  # conv_a, stride 2
            t.norm(c)
            t.conv(c, c, 3, hw)  # conv_b
            t.norm(c)
            t.conv(cin, c, 1, hw)  # avg-pool shortcut + 1x1 projection
        for _ in range(cells_per_stage):
            for op in arch.ops:
                if op is OpKind.NOR_CONV_1X1:
                    t.conv(c, c, 1, hw)
                    t.norm(c)
                elif op is OpKind.NOR_CONV_3X3:
                    t.conv(c, c, 3, hw)
                    t.norm(c)
    t.norm(c)
    t.linear(c, classes)
    return t.estimate()


# -- MobileNetV3 (OFA layout) ----------------------------------------------------

MBV3_BASE_WIDTHS = (16, 16, 24, 40, 80, 112, 160, 960, 1280)
MBV3_STAGE_STRIDES = (2, 2, 2, 1, 2)
MBV3_STAGE_SE = (False, True, False, True, True)


def make_divisible(v: float, divisor: int = 8, min_value: Optional[int] = None) -> int:
    min_value = min_value or divisor
    new_v = max(min_value, int(v + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * v:
        new_v += divisor
    return new_v


def _mbconv(t: Tally, cin, cout, k, expand, stride, se, hw) -> int:
    out_hw = math.ceil(hw / stride)
    mid = make_divisible(round(cin * expand)) if expand != 1 else cin
    if expand != 1:
        t.conv(cin, mid, 1, hw)
        t.norm(mid)
    t.dwconv(mid, k, out_hw)
    t.norm(mid)
    if se:
        reduced = make_divisible(mid // 4)
        t.conv(mid, reduced, 1, 1, bias=True)
        t.conv(reduced, mid, 1, 1, bias=True)
    t.conv(mid, cout, 1, out_hw)
    t.norm(cout)
    return out_hw


def mobilenet_cost(resolution: int, depths: Sequence[int], kernels: Sequence[int],
                   expands: Sequence[int], *, width_mult: float = 1.2, num_classes: int = 1000,
                   blocks_per_stage: int = 4) -> CostEstimate:
    """Cost of an OFA MobileNetV3 subnet (default supernet width 1.2).

    Stage depths of 0 are accepted (the stage is simply skipped) so that the
    fixed stem/head cost can be isolated.
    """
    stem, first, *stages, final_expand, last = (
        make_divisible(w * width_mult) for w in MBV3_BASE_WIDTHS
    )
    t = Tally()
    hw = math.ceil(resolution / 2)
    t.conv(3, stem, 3, hw)
    t.norm(stem)
    hw = _mbconv(t, stem, first, 3, 1, 1, False, hw)
    c = first
    for stage, depth in enumerate(depths):
        for j in range(depth):
            slot = stage * blocks_per_stage + j
            stride = MBV3_STAGE_STRIDES[stage] if j == 0 else 1
            cout = stages[stage]
            hw = _mbconv(t, c, cout, kernels[slot], expands[slot], stride,
                         MBV3_STAGE_SE[stage], hw)
            c = cout
    t.conv(c, final_expand, 1, hw)
    t.norm(final_expand)
    t.conv(final_expand, last, 1, 1)
    t.linear(last, num_classes)
    return t.estimate()


# -- ShuffleNetV2 one-shot space (SPOS layout) ----------------------------------

SPOS_STAGE_REPEATS = (4, 4, 8, 4)
SPOS_STAGE_WIDTHS = (64, 160, 320, 640)


def _shuffle_block(t: Tally, cin, cout, choice, stride, hw) -> int:
    out_hw = math.ceil(hw / stride)
    inp = cin if stride == 2 else cin // 2
    mid = cout // 2
    outputs = cout - inp
    if choice in (0, 1, 2):
        k = 3 + 2 * choice
        t.conv(inp, mid, 1, hw)
        t.norm(mid)
        t.dwconv(mid, k, out_hw)
        t.norm(mid)
        t.conv(mid, outputs, 1, out_hw)
        t.norm(outputs)
    else:  # xception: three dw3x3 + 1x1 pairs
        t.dwconv(inp, 3, out_hw)
        t.norm(inp)
        t.conv(inp, mid, 1, out_hw)
        t.norm(mid)
        t.dwconv(mid, 3, out_hw)
        t.norm(mid)
        t.conv(mid, mid, 1, out_hw)
        t.norm(mid)
        t.dwconv(mid, 3, out_hw)
        t.norm(mid)
        t.conv(mid, outputs, 1, out_hw)
        t.norm(outputs)
    if stride == 2:
        k = 3 + 2 * choice if choice in (0, 1, 2) else 3
        t.dwconv(inp, k, out_hw)
        t.norm(inp)
        t.conv(inp, inp, 1, out_hw)
        t.norm(inp)
    return out_hw


def shufflenet_cost(blocks: Sequence[int], *, resolution: int = 224,
                    num_classes: int = 1000) -> CostEstimate:
    t = Tally()
    hw = math.ceil(resolution / 2)
    t.conv(3, 16, 3, hw)
    t.norm(16)
    c = 16
    slot = 0
    for repeats, cout in zip(SPOS_STAGE_REPEATS, SPOS_STAGE_WIDTHS):
        for j in range(repeats):
            hw = _shuffle_block(t, c, cout, blocks[slot], 2 if j == 0 else 1, hw)
            c = cout
            slot += 1
    t.conv(c, 1024, 1, hw)
    t.norm(1024)
    t.linear(1024, num_classes, bias=False)
    return t.estimate()


# -- Vision transformer (AutoFormer layout) -------------------------------------

def transformer_cost(embed_dim: int, heads: Sequence[int], mlp_ratios: Sequence[float], *,
                     image_size: int = 224, patch_size: int = 16, num_classes: int = 1000,
                     head_dim: int = 64) -> CostEstimate:
    """Cost of a ViT whose depth is ``len(heads)``.

    Each layer projects to ``heads * head_dim`` for Q, K and V; the MLP hidden
    width is ``int(ratio * embed_dim)``; the classifier reads the class token.
    """
    if len(heads) != len(mlp_ratios):
        raise ValueError("heads and mlp_ratios must have one entry per layer")
    t = Tally()
    e = embed_dim
    patches = (image_size // patch_size) ** 2
    tokens = patches + 1
    t.conv(3, e, patch_size, image_size // patch_size, bias=True)
    t.params += e + tokens * e  # class token, position embedding
    for h, ratio in zip(heads, mlp_ratios):
        qkv = h * head_dim
        hidden = int(ratio * e)
        t.norm(e)
        t.linear(e, 3 * qkv, tokens=tokens)
        t.matmul(h * tokens, head_dim, tokens)  # Q K^T
        t.matmul(h * tokens, tokens, head_dim)  # A V
        t.linear(qkv, e, tokens=tokens)
        t.norm(e)
        t.linear(e, hidden, tokens=tokens)
        t.linear(hidden, e, tokens=tokens)
    t.norm(e)
    t.linear(e, num_classes)
    return t.estimate()


def estimate_cost(arch, space=None, *, dataset: str = "cifar10") -> CostEstimate:
    """Dispatch to the cost model matching the architecture type.

    ``space`` is accepted for symmetry with the other archspace helpers and
    is not needed to pick a layout.  ``dataset`` only matters for NB201 cells.
    """
    if isinstance(arch, Nb201Arch):
        return nb201_cost(arch, getattr(space, "dataset", None) or dataset)
    if isinstance(arch, MobileNetArch):
        return mobilenet_cost(arch.resolution, arch.depths, arch.kernels, arch.expands)
    if isinstance(arch, ShuffleNetArch):
        return shufflenet_cost(arch.blocks)
    if isinstance(arch, AutoFormerArch):
        return transformer_cost(arch.embed_dim, arch.heads, arch.mlp_ratios)
    raise UnsupportedSpace(f"no cost model for {type(arch).__name__}")
