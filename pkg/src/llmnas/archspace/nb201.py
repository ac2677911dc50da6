"""NAS-Bench-201 cell encoding.

A cell is a 4-node DAG whose 6 edges each carry one of five operations.
Edges are ordered by target node, then source node::

    (0->1), (0->2), (1->2), (0->3), (1->3), (2->3)

which is also the order in which they appear in the text form
``|op~0|+|op~0|op~1|+|op~0|op~1|op~2|``.  The integer index of a cell is the
base-5 number whose i-th digit (least significant first) is the opcode of
edge i.
"""

from __future__ import annotations

import enum
import operator
import re
from dataclasses import dataclass
from typing import Iterator, Sequence

from ..errors import IndexOutOfRange, MalformedString, UnknownOp, WrongSourceIndex


class OpKind(str, enum.Enum):
    NONE = "none"
    SKIP_CONNECT = "skip_connect"
    NOR_CONV_1X1 = "nor_conv_1x1"
    NOR_CONV_3X3 = "nor_conv_3x3"
    AVG_POOL_3X3 = "avg_pool_3x3"

    @property
    def code(self) -> int:
        return _OPCODES[self]

    def __str__(self) -> str:
        return self.value


OPS: tuple[OpKind, ...] = tuple(OpKind)
OP_NAMES: tuple[str, ...] = tuple(op.value for op in OPS)
_OPCODES = {op: i for i, op in enumerate(OPS)}
_BY_NAME = {op.value: op for op in OPS}

EDGES: tuple[tuple[int, int], ...] = ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))
NUM_EDGES = len(EDGES)
NUM_ARCHS = len(OPS) ** NUM_EDGES  # 15625


@dataclass(frozen=True)
class Nb201Arch:
    ops: tuple[OpKind, ...]

    def __post_init__(self):
        ops = tuple(self.ops)
        if len(ops) != NUM_EDGES:
            raise MalformedString(f"expected {NUM_EDGES} edge ops, got {len(ops)}")
        try:
            ops = tuple(op if isinstance(op, OpKind) else _BY_NAME[op] for op in ops)
        except KeyError as exc:
            raise UnknownOp(f"unknown operation {exc.args[0]!r}") from None
        object.__setattr__(self, "ops", ops)

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "Nb201Arch":
        return cls(tuple(names))

    @property
    def index(self) -> int:
        return nb201_index(self)

    def __str__(self) -> str:
        return serialize_nb201(self)


def parse_nb201(text: str) -> Nb201Arch:
    """Parse the ``|op~0|+|op~0|op~1|+|...|`` cell string.

    Raises MalformedString for structural problems, UnknownOp for a token
    outside the five-op vocabulary and WrongSourceIndex when a ``~k``
    suffix does not match the position of the edge inside its section.
    """
    if not isinstance(text, str):
        raise MalformedString(f"expected a string, got {type(text).__name__}")
    s = text.strip()
    if not s:
        raise MalformedString("empty architecture string")
    sections = s.split("+")
    if len(sections) != 3:
        raise MalformedString(f"expected 3 '+'-separated sections, got {len(sections)}")
    ops: list[OpKind] = []
    for node, section in enumerate(sections, start=1):
        if len(section) < 2 or not section.startswith("|") or not section.endswith("|"):
            raise MalformedString(f"section {node} is not delimited by '|': {section!r}")
        tokens = section[1:-1].split("|")
        if len(tokens) != node:
            raise MalformedString(
                f"section {node} must hold {node} edge(s), found {len(tokens)}"
            )
        for position, token in enumerate(tokens):
            name, sep, source = token.partition("~")
            if not sep or not name or not source:
                raise MalformedString(f"edge token {token!r} is not of the form op~k")
            if not source.isdigit():
                raise MalformedString(f"edge token {token!r} has a non-numeric source")
            op = _BY_NAME.get(name)
            if op is None:
                raise UnknownOp(f"unknown operation {name!r}")
            if int(source) != position:
                raise WrongSourceIndex(
                    f"edge {token!r} into node {node} must come from node {position}"
                )
            ops.append(op)
    return Nb201Arch(tuple(ops))


def serialize_nb201(arch: Nb201Arch) -> str:
    names = [op.value for op in arch.ops]
    return (
        f"|{names[0]}~0|"
        f"+|{names[1]}~0|{names[2]}~1|"
        f"+|{names[3]}~0|{names[4]}~1|{names[5]}~2|"
    )


def nb201_index(arch: Nb201Arch) -> int:
    index = 0
    for i, op in enumerate(arch.ops):
        index += _OPCODES[op] * len(OPS) ** i
    return index


def nb201_from_index(index: int) -> Nb201Arch:
    try:
        index = operator.index(index)
    except TypeError:
        raise IndexOutOfRange(f"index must be an integer, got {index!r}") from None
    if not 0 <= index < NUM_ARCHS:
        raise IndexOutOfRange(f"index {index} outside [0, {NUM_ARCHS - 1}]")
    ops = []
    for _ in range(NUM_EDGES):
        index, code = divmod(index, len(OPS))
        ops.append(OPS[code])
    return Nb201Arch(tuple(ops))


def enumerate_nb201() -> Iterator[Nb201Arch]:
    for i in range(NUM_ARCHS):
        yield nb201_from_index(i)


_RUN = re.compile(r"[^\s`'\"<>,;]+")


def find_cell_strings(text: str) -> list[str]:
    """Return substrings of ``text`` that look like cell strings, in order.

    Any whitespace-delimited run holding both ``|`` and ``~`` is a candidate;
    it is trimmed to the span between its first and last ``|``.  Candidates
    are not validated here so near-misses can be reported by the caller.
    """
    found = []
    for m in _RUN.finditer(text):
        run = m.group(0)
        if "~" not in run or run.count("|") < 2:
            continue
        found.append(run[run.index("|"): run.rindex("|") + 1])
    return found


def neighbors(arch: Nb201Arch) -> list[Nb201Arch]:
    """All cells that differ from ``arch`` on exactly one edge."""
    out = []
    for i, current in enumerate(arch.ops):
        for op in OPS:
            if op is not current:
                ops = list(arch.ops)
                ops[i] = op
                out.append(Nb201Arch(tuple(ops)))
    return out
