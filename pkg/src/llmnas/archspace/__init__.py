"""Architecture representations, grammar, legality, variation and cost."""

from .cost import CostEstimate, estimate_cost
from .macro import (
    AutoFormerArch,
    MacroArch,
    MacroSpaceDef,
    MobileNetArch,
    ShuffleNetArch,
    Verdict,
    validate_macro,
)
from .nb201 import (
    NUM_ARCHS,
    OPS,
    Nb201Arch,
    OpKind,
    enumerate_nb201,
    nb201_from_index,
    nb201_index,
    parse_nb201,
    serialize_nb201,
)
from .spaces import (
    AutoFormerSpace,
    Extracted,
    MobileNetSpace,
    Nb201Space,
    SearchSpace,
    ShuffleNetSpace,
    arch_from_json,
    arch_to_json,
    crossover,
    get_space,
    mutate,
    random_arch,
)

__all__ = [
    "AutoFormerArch", "AutoFormerSpace", "CostEstimate", "Extracted", "MacroArch",
    "MacroSpaceDef", "MobileNetArch", "MobileNetSpace", "NUM_ARCHS", "Nb201Arch",
    "Nb201Space", "OPS", "OpKind", "SearchSpace", "ShuffleNetArch", "ShuffleNetSpace",
    "Verdict", "arch_from_json", "arch_to_json", "crossover", "enumerate_nb201",
    "estimate_cost", "get_space", "mutate", "nb201_from_index", "nb201_index",
    "parse_nb201", "random_arch", "serialize_nb201", "validate_macro",
]
