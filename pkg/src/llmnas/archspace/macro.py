"""Macro search spaces: OFA MobileNetV3, SPOS ShuffleNetV2 and AutoFormer.

Each space has a small frozen definition object listing the allowed values
per dimension, and an immutable architecture record.  ``validate_macro``
reports the first dimension that falls outside its allowed set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from ..errors import ArchError, VariantMismatch

MOBILENET = "mobilenet"
SHUFFLENET = "shufflenet"
AUTOFORMER_T = "autoformer-t"
AUTOFORMER_S = "autoformer-s"
AUTOFORMER_B = "autoformer-b"

SHUFFLE_BLOCK_NAMES = ("shuffle_3x3", "shuffle_5x5", "shuffle_7x7", "xception")


@dataclass(frozen=True)
class MobileNetDef:
    variant: str = MOBILENET
    resolutions: tuple[int, ...] = (160, 176, 192, 208, 224)
    depths: tuple[int, ...] = (2, 3, 4)
    kernels: tuple[int, ...] = (3, 5, 7)
    expands: tuple[int, ...] = (3, 4, 6)
    n_stages: int = 5
    max_blocks_per_stage: int = 4

    @property
    def n_blocks(self) -> int:
        return self.n_stages * self.max_blocks_per_stage


@dataclass(frozen=True)
class ShuffleNetDef:
    variant: str = SHUFFLENET
    choices: tuple[int, ...] = (0, 1, 2, 3)
    n_blocks: int = 20


@dataclass(frozen=True)
class AutoFormerDef:
    variant: str
    depths: tuple[int, ...]
    embed_dims: tuple[int, ...]
    heads: tuple[int, ...]
    mlp_ratios: tuple[float, ...] = (3.0, 3.5, 4.0)

    @property
    def max_depth(self) -> int:
        return max(self.depths)


MacroSpaceDef = Union[MobileNetDef, ShuffleNetDef, AutoFormerDef]

MOBILENET_DEF = MobileNetDef()
SHUFFLENET_DEF = ShuffleNetDef()
AUTOFORMER_DEFS = {
    AUTOFORMER_T: AutoFormerDef(AUTOFORMER_T, (12, 13, 14), (192, 216, 240), (3, 4)),
    AUTOFORMER_S: AutoFormerDef(AUTOFORMER_S, (12, 13, 14), (320, 384, 448), (5, 6, 7)),
    AUTOFORMER_B: AutoFormerDef(AUTOFORMER_B, (14, 15, 16), (528, 576, 624), (8, 9, 10)),
}

MACRO_DEFS: dict[str, MacroSpaceDef] = {
    MOBILENET: MOBILENET_DEF,
    SHUFFLENET: SHUFFLENET_DEF,
    **AUTOFORMER_DEFS,
}


@dataclass(frozen=True)
class MobileNetArch:
    """OFA-style encoding.

    ``kernels`` and ``expands`` always hold one slot per possible block
    (20); a stage of depth ``d`` uses the first ``d`` of its 4 slots and the
    remaining slots are carried along but ignored.
    """

    resolution: int
    depths: tuple[int, ...]
    kernels: tuple[int, ...]
    expands: tuple[int, ...]
    variant: str = field(default=MOBILENET, init=False)

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(self.depths))
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "expands", tuple(self.expands))

    def active_blocks(self, per_stage: int = 4) -> list[int]:
        return [
            stage * per_stage + j
            for stage, d in enumerate(self.depths)
            for j in range(d)
        ]


@dataclass(frozen=True)
class ShuffleNetArch:
    blocks: tuple[int, ...]
    variant: str = field(default=SHUFFLENET, init=False)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))


@dataclass(frozen=True)
class AutoFormerArch:
    """Per-layer heads and MLP ratios; one embedding dim for the whole model."""

    variant: str
    depth: int
    embed_dim: int
    heads: tuple[int, ...]
    mlp_ratios: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(self.heads))
        object.__setattr__(self, "mlp_ratios", tuple(float(r) for r in self.mlp_ratios))


MacroArch = Union[MobileNetArch, ShuffleNetArch, AutoFormerArch]


@dataclass(frozen=True)
class Verdict:
    legal: bool
    dimension: Optional[str] = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.legal

    def __str__(self) -> str:
        return "Legal" if self.legal else f"Illegal({self.dimension}: {self.reason})"


LEGAL = Verdict(True)


def _illegal(dimension: str, reason: str) -> Verdict:
    return Verdict(False, dimension, reason)


def _check_seq(name, values, length, allowed) -> Optional[Verdict]:
    if not isinstance(values, tuple) or len(values) != length:
        n = len(values) if hasattr(values, "__len__") else "?"
        return _illegal(f"{name} length", f"expected {length} values, got {n}")
    for slot, v in enumerate(values, start=1):
        if v not in allowed:
            return _illegal(f"{name} slot {slot}", f"{v!r} not in {sorted(allowed)}")
    return None


def validate_macro(arch: MacroArch, space: MacroSpaceDef) -> Verdict:
    """Return ``LEGAL`` or an illegal verdict naming the first bad dimension.

    Slots are numbered from 1, matching ``k_1 .. k_20`` style naming.
    """
    variant = getattr(arch, "variant", None)
    if variant != space.variant:
        raise VariantMismatch(f"architecture is {variant!r}, space is {space.variant!r}")

    if isinstance(space, MobileNetDef):
        if arch.resolution not in space.resolutions:
            return _illegal("resolution", f"{arch.resolution!r} not in {list(space.resolutions)}")
        for name, values, length, allowed in (
            ("depth", arch.depths, space.n_stages, space.depths),
            ("kernel", arch.kernels, space.n_blocks, space.kernels),
            ("expand", arch.expands, space.n_blocks, space.expands),
        ):
            bad = _check_seq(name, values, length, allowed)
            if bad is not None:
                return bad
        return LEGAL

    if isinstance(space, ShuffleNetDef):
        bad = _check_seq("block", arch.blocks, space.n_blocks, space.choices)
        return LEGAL if bad is None else bad

    if isinstance(space, AutoFormerDef):
        if arch.depth not in space.depths:
            return _illegal("depth", f"{arch.depth!r} not in {list(space.depths)}")
        if arch.embed_dim not in space.embed_dims:
            return _illegal("embed_dim", f"{arch.embed_dim!r} not in {list(space.embed_dims)}")
        for name, values, allowed in (
            ("heads", arch.heads, space.heads),
            ("mlp_ratio", arch.mlp_ratios, space.mlp_ratios),
        ):
            bad = _check_seq(name, values, arch.depth, allowed)
            if bad is not None:
                return bad
        return LEGAL

    raise ArchError(f"unknown macro space definition {space!r}")


# -- JSON records ---------------------------------------------------------------

def macro_to_json(arch: MacroArch) -> dict:
    if isinstance(arch, MobileNetArch):
        return {
            "space": arch.variant,
            "resolution": arch.resolution,
            "depths": list(arch.depths),
            "kernels": list(arch.kernels),
            "expands": list(arch.expands),
        }
    if isinstance(arch, ShuffleNetArch):
        return {"space": arch.variant, "blocks": list(arch.blocks)}
    if isinstance(arch, AutoFormerArch):
        return {
            "space": arch.variant,
            "depth": arch.depth,
            "embed_dim": arch.embed_dim,
            "heads": list(arch.heads),
            "mlp_ratios": list(arch.mlp_ratios),
        }
    raise ArchError(f"not a macro architecture: {arch!r}")


def _int_list(value, name):
    if not isinstance(value, list):
        raise ArchError(f"{name!r} must be a list")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
            raise ArchError(f"{name!r} holds a non-integer value {v!r}")
        out.append(int(v))
    return tuple(out)


def macro_from_json(record: dict, variant: Optional[str] = None) -> MacroArch:
    """Build a macro architecture from its JSON record.

    ``variant`` fills in a missing ``space`` field; a conflicting one raises
    VariantMismatch.
    """
    space = record.get("space", variant)
    if variant is not None and space != variant:
        raise VariantMismatch(f"record is for {space!r}, expected {variant!r}")
    try:
        if space == MOBILENET:
            res = record["resolution"]
            if isinstance(res, bool) or not isinstance(res, int):
                raise ArchError("'resolution' must be an integer")
            return MobileNetArch(
                res,
                _int_list(record["depths"], "depths"),
                _int_list(record["kernels"], "kernels"),
                _int_list(record["expands"], "expands"),
            )
        if space == SHUFFLENET:
            return ShuffleNetArch(_int_list(record["blocks"], "blocks"))
        if space in AUTOFORMER_DEFS:
            ratios = record["mlp_ratios"]
            if not isinstance(ratios, list) or not all(
                isinstance(r, (int, float)) and not isinstance(r, bool) for r in ratios
            ):
                raise ArchError("'mlp_ratios' must be a list of numbers")
            depth, embed = record["depth"], record["embed_dim"]
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in (depth, embed)):
                raise ArchError("'depth' and 'embed_dim' must be integers")
            return AutoFormerArch(
                space, depth, embed, _int_list(record["heads"], "heads"), tuple(ratios)
            )
    except KeyError as exc:
        raise ArchError(f"missing field {exc.args[0]!r}") from None
    raise ArchError(f"unknown macro space {space!r}")
