"""Uniform search-space interface used by every search method.

A space knows how to sample, vary, validate, key, serialise and describe
its architectures, and how to pull candidate architectures out of free-form
LLM text.  All randomness flows through an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from ..prompts import read_asset
from ..errors import ArchError, NasError, UnsupportedSpace
from . import macro
from .cost import CostEstimate, estimate_cost, nb201_cost
from .macro import (
    AutoFormerArch,
    AutoFormerDef,
    MobileNetArch,
    ShuffleNetArch,
    Verdict,
    macro_from_json,
    macro_to_json,
    validate_macro,
)
from .nb201 import OPS, Nb201Arch, find_cell_strings, parse_nb201, serialize_nb201

LEGAL = macro.LEGAL


@dataclass(frozen=True)
class Extracted:
    """One candidate found in generator output."""

    raw: str
    arch: Any = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.arch is not None and self.error is None


def _resample_other(rng: np.random.Generator, choices: Sequence, current) -> Any:
    others = [c for c in choices if c != current]
    return others[int(rng.integers(len(others)))]


def _pick(rng: np.random.Generator, choices: Sequence) -> Any:
    return choices[int(rng.integers(len(choices)))]


class SearchSpace:
    name: str = ""
    description_asset: str = ""

    # -- to implement ---------------------------------------------------------
    def sample(self, rng: np.random.Generator):
        raise NotImplementedError

    def mutate(self, arch, rng: np.random.Generator, rate: float = 0.1):
        raise NotImplementedError

    def crossover(self, a, b, rng: np.random.Generator):
        raise NotImplementedError

    def validate(self, arch) -> Verdict:
        raise NotImplementedError

    def to_json(self, arch) -> dict:
        raise NotImplementedError

    def from_json(self, record: dict):
        raise NotImplementedError

    def dimensions(self) -> list[tuple]:
        """Categorical factorisation: one tuple of allowed values per dimension."""
        raise NotImplementedError

    def from_choices(self, values: Sequence):
        raise NotImplementedError

    def cost(self, arch) -> CostEstimate:
        return estimate_cost(arch)

    # -- shared ---------------------------------------------------------------
    def is_legal(self, arch) -> bool:
        try:
            return bool(self.validate(arch))
        except NasError:
            return False

    def key(self, arch) -> str:
        return json.dumps(self.to_json(arch), sort_keys=True, separators=(",", ":"))

    def format(self, arch) -> str:
        """Text form used in prompts and feedback tables."""
        return self.key(arch)

    def describe(self) -> str:
        return load_asset(self.description_asset)

    def extract(self, text: str) -> list[Extracted]:
        """Find JSON architecture records in ``text`` (macro spaces)."""
        decoder = json.JSONDecoder()
        out = []
        i = text.find("{")
        while i != -1:
            try:
                obj, end = decoder.raw_decode(text, i)
            except json.JSONDecodeError:
                i = text.find("{", i + 1)
                continue
            raw = text[i:end]
            if isinstance(obj, dict):
                try:
                    arch = self.from_json(obj)
                    verdict = self.validate(arch)
                    out.append(Extracted(raw, arch) if verdict else Extracted(raw, None, str(verdict)))
                except NasError as exc:
                    out.append(Extracted(raw, None, f"{type(exc).__name__}: {exc}"))
            i = text.find("{", end)
        return out


def load_asset(name: str) -> str:
    return read_asset(name).rstrip("\n")


class _CategoricalSpace(SearchSpace):
    """Spaces whose architecture is a fixed-length vector of categorical values."""

    def values(self, arch) -> tuple:
        raise NotImplementedError

    def sample(self, rng):
        return self.from_choices([_pick(rng, dim) for dim in self.dimensions()])

    def mutate(self, arch, rng, rate=0.1):
        values = list(self.values(arch))
        for i, dim in enumerate(self.dimensions()):
            if rng.random() < rate:
                values[i] = _resample_other(rng, dim, values[i])
        return self.from_choices(values)

    def crossover(self, a, b, rng):
        va, vb = self.values(a), self.values(b)
        return self.from_choices([x if rng.random() < 0.5 else y for x, y in zip(va, vb)])


class Nb201Space(_CategoricalSpace):
    name = "nb201"
    description_asset = "nb201_space.txt"

    def __init__(self, dataset: str = "cifar10"):
        self.dataset = dataset

    def dimensions(self):
        return [OPS] * 6

    def values(self, arch):
        return arch.ops

    def from_choices(self, values):
        return Nb201Arch(tuple(values))

    def validate(self, arch):
        if not isinstance(arch, Nb201Arch):
            return Verdict(False, "type", f"not an NB201 cell: {type(arch).__name__}")
        return LEGAL

    def key(self, arch):
        return serialize_nb201(arch)

    def format(self, arch):
        return serialize_nb201(arch)

    def to_json(self, arch):
        return {"space": self.name, "arch": serialize_nb201(arch)}

    def from_json(self, record):
        if record.get("space", self.name) != self.name or "arch" not in record:
            raise ArchError(f"not an NB201 record: {record!r}")
        return parse_nb201(record["arch"])

    def cost(self, arch):
        return nb201_cost(arch, self.dataset)

    def extract(self, text):
        out = []
        for raw in find_cell_strings(text):
            try:
                out.append(Extracted(raw, parse_nb201(raw)))
            except ArchError as exc:
                out.append(Extracted(raw, None, f"{type(exc).__name__}: {exc}"))
        return out


class MobileNetSpace(_CategoricalSpace):
    name = macro.MOBILENET
    description_asset = "mobilenet_space.txt"
    definition = macro.MOBILENET_DEF

    def dimensions(self):
        d = self.definition
        return ([d.resolutions] + [d.depths] * d.n_stages
                + [d.kernels] * d.n_blocks + [d.expands] * d.n_blocks)

    def values(self, arch):
        return (arch.resolution, *arch.depths, *arch.kernels, *arch.expands)

    def from_choices(self, values):
        d = self.definition
        values = list(values)
        n, s = d.n_blocks, d.n_stages
        return MobileNetArch(values[0], values[1:1 + s], values[1 + s:1 + s + n],
                             values[1 + s + n:1 + s + 2 * n])

    def validate(self, arch):
        return validate_macro(arch, self.definition)

    def to_json(self, arch):
        return macro_to_json(arch)

    def from_json(self, record):
        return macro_from_json(record, self.name)


class ShuffleNetSpace(_CategoricalSpace):
    name = macro.SHUFFLENET
    description_asset = "shufflenet_space.txt"
    definition = macro.SHUFFLENET_DEF

    def dimensions(self):
        return [self.definition.choices] * self.definition.n_blocks

    def values(self, arch):
        return arch.blocks

    def from_choices(self, values):
        return ShuffleNetArch(tuple(values))

    def validate(self, arch):
        return validate_macro(arch, self.definition)

    def to_json(self, arch):
        return macro_to_json(arch)

    def from_json(self, record):
        return macro_from_json(record, self.name)


class AutoFormerSpace(SearchSpace):
    """Variable-depth transformer space.

    Variation works on the visible layers; growing the depth appends freshly
    sampled layers.  For the categorical factorisation every layer slot up to
    the maximum depth gets its own dimensions and slots past ``depth`` are
    dropped when decoding.
    """

    description_asset = "autoformer_space.txt"

    def __init__(self, variant: str = macro.AUTOFORMER_T):
        if variant not in macro.AUTOFORMER_DEFS:
            raise UnsupportedSpace(f"unknown AutoFormer variant {variant!r}")
        self.name = variant
        self.definition: AutoFormerDef = macro.AUTOFORMER_DEFS[variant]

    def _layer(self, rng):
        d = self.definition
        return _pick(rng, d.heads), _pick(rng, d.mlp_ratios)

    def _build(self, depth, embed, layers):
        return AutoFormerArch(self.name, depth, embed,
                              tuple(h for h, _ in layers), tuple(r for _, r in layers))

    def sample(self, rng):
        d = self.definition
        depth = _pick(rng, d.depths)
        embed = _pick(rng, d.embed_dims)
        return self._build(depth, embed, [self._layer(rng) for _ in range(depth)])

    def mutate(self, arch, rng, rate=0.1):
        d = self.definition
        depth = _resample_other(rng, d.depths, arch.depth) if rng.random() < rate else arch.depth
        embed = _resample_other(rng, d.embed_dims, arch.embed_dim) if rng.random() < rate else arch.embed_dim
        layers = list(zip(arch.heads, arch.mlp_ratios))[:depth]
        while len(layers) < depth:
            layers.append(self._layer(rng))
        out = []
        for h, r in layers:
            if rng.random() < rate:
                h = _resample_other(rng, d.heads, h)
            if rng.random() < rate:
                r = _resample_other(rng, d.mlp_ratios, r)
            out.append((h, r))
        return self._build(depth, embed, out)

    def crossover(self, a, b, rng):
        depth = a.depth if rng.random() < 0.5 else b.depth
        embed = a.embed_dim if rng.random() < 0.5 else b.embed_dim
        la, lb = list(zip(a.heads, a.mlp_ratios)), list(zip(b.heads, b.mlp_ratios))
        layers = []
        for i in range(depth):
            if i < len(la) and i < len(lb):
                h = la[i][0] if rng.random() < 0.5 else lb[i][0]
                r = la[i][1] if rng.random() < 0.5 else lb[i][1]
                layers.append((h, r))
            else:
                layers.append(la[i] if i < len(la) else lb[i])
        return self._build(depth, embed, layers)

    def dimensions(self):
        d = self.definition
        return [d.depths, d.embed_dims] + [d.heads] * d.max_depth + [d.mlp_ratios] * d.max_depth

    def from_choices(self, values):
        m = self.definition.max_depth
        depth, embed = values[0], values[1]
        heads, ratios = values[2:2 + m], values[2 + m:2 + 2 * m]
        return AutoFormerArch(self.name, depth, embed, tuple(heads[:depth]), tuple(ratios[:depth]))

    def validate(self, arch):
        return validate_macro(arch, self.definition)

    def to_json(self, arch):
        return macro_to_json(arch)

    def from_json(self, record):
        return macro_from_json(record, self.name)


SPACE_NAMES = ("nb201", macro.MOBILENET, macro.SHUFFLENET,
               macro.AUTOFORMER_T, macro.AUTOFORMER_S, macro.AUTOFORMER_B)


def get_space(name: str, **kwargs) -> SearchSpace:
    name = name.lower()
    if name in ("nb201", "nas-bench-201", "nasbench201"):
        return Nb201Space(**kwargs)
    if name == macro.MOBILENET:
        return MobileNetSpace()
    if name == macro.SHUFFLENET:
        return ShuffleNetSpace()
    if name in macro.AUTOFORMER_DEFS:
        return AutoFormerSpace(name)
    raise UnsupportedSpace(f"unknown search space {name!r}; choose from {', '.join(SPACE_NAMES)}")


def random_arch(space: SearchSpace, rng: np.random.Generator):
    return space.sample(rng)


def mutate(space: SearchSpace, arch, rng: np.random.Generator, rate: float = 0.1):
    return space.mutate(arch, rng, rate)


def crossover(space: SearchSpace, a, b, rng: np.random.Generator):
    return space.crossover(a, b, rng)


def arch_to_json(arch) -> dict:
    if isinstance(arch, Nb201Arch):
        return {"space": "nb201", "arch": serialize_nb201(arch)}
    return macro_to_json(arch)


def arch_from_json(record: dict):
    space = record.get("space")
    if space is None:
        raise ArchError("record has no 'space' field")
    return get_space(space).from_json(record)
