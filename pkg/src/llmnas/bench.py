"""NAS-Bench-201 accuracy tables.

The ingest format is JSON lines, one architecture per line::

    {"arch": "|nor_conv_3x3~0|+|...|", "cifar10": {"valid": 91.6, "test": 94.37},
     "cifar100": {"valid": ..., "test": ...}, "imagenet16_120": {"valid": ..., "test": ...}}

Accuracies are percentages.  Rows are keyed by the architecture string, so
the integer index used internally never has to agree with any upstream
numbering.  ``scripts/convert_nb201.py`` produces this file from the
official benchmark release.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .archspace.nb201 import (
    NUM_ARCHS,
    Nb201Arch,
    nb201_from_index,
    nb201_index,
    parse_nb201,
    serialize_nb201,
)
from .errors import (
    ArchError,
    ConfigError,
    DuplicateArch,
    IncompleteTable,
    MissingEntry,
    ParseError,
)

DATASETS = ("cifar10", "cifar100", "imagenet16-120")
SPLITS = ("valid", "test")
FILE_KEYS = {"cifar10": "cifar10", "cifar100": "cifar100", "imagenet16-120": "imagenet16_120"}
_ALIASES = {
    "cifar10": "cifar10",
    "cifar-10": "cifar10",
    "cifar100": "cifar100",
    "cifar-100": "cifar100",
    "imagenet16-120": "imagenet16-120",
    "imagenet16_120": "imagenet16-120",
    "imagenet-16-120": "imagenet16-120",
    "imagenet": "imagenet16-120",
}


@dataclass(frozen=True)
class DatasetId:
    dataset: str
    split: str = "test"

    def __post_init__(self):
        dataset = _ALIASES.get(self.dataset.lower())
        if dataset is None:
            raise ConfigError(f"unknown dataset {self.dataset!r}; choose from {', '.join(DATASETS)}")
        if self.split not in SPLITS:
            raise ConfigError(f"unknown split {self.split!r}; choose from {', '.join(SPLITS)}")
        object.__setattr__(self, "dataset", dataset)

    @classmethod
    def parse(cls, text: str) -> "DatasetId":
        """``"cifar10/test"`` or ``"cifar10"`` (split defaults to test)."""
        dataset, _, split = text.partition("/")
        return cls(dataset, split or "test")

    @property
    def column(self) -> tuple[int, int]:
        return DATASETS.index(self.dataset), SPLITS.index(self.split)

    def __str__(self) -> str:
        return f"{self.dataset}/{self.split}"


def _digest(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=8).hexdigest()


class BenchTable:
    """Immutable accuracy table indexed by NB201 cell index.

    ``data`` has shape ``(15625, 3, 2)`` -- (arch, dataset, split) -- with NaN
    marking absent rows.
    """

    def __init__(self, data: np.ndarray, digest: Optional[str] = None, source: Optional[str] = None):
        if data.shape != (NUM_ARCHS, len(DATASETS), len(SPLITS)):
            raise ValueError(f"bad table shape {data.shape}")
        self._data = np.array(data, dtype=np.float64)
        self._data.setflags(write=False)
        self._present = ~np.isnan(self._data).any(axis=(1, 2))
        self.source = source
        self.digest = digest or _digest(self.to_jsonl_bytes())

    # -- construction ---------------------------------------------------------
    @classmethod
    def from_records(cls, records: Iterable[dict], *, allow_partial: bool = False) -> "BenchTable":
        data = _assemble(enumerate(records, start=1), allow_partial, "records")
        return cls(data)

    @classmethod
    def from_array(cls, data: np.ndarray) -> "BenchTable":
        return cls(data)

    # -- queries ----------------------------------------------------------------
    def __len__(self) -> int:
        return int(self._present.sum())

    @property
    def complete(self) -> bool:
        return len(self) == NUM_ARCHS

    @property
    def array(self) -> np.ndarray:
        return self._data

    def column(self, dataset_id: DatasetId) -> np.ndarray:
        d, s = dataset_id.column
        return self._data[:, d, s]

    def lookup(self, arch: Union[Nb201Arch, int, str], dataset_id: DatasetId) -> float:
        index = _to_index(arch)
        d, s = dataset_id.column
        value = self._data[index, d, s]
        if math.isnan(value):
            raise MissingEntry(f"no {dataset_id} entry for {serialize_nb201(nb201_from_index(index))}")
        return float(value)

    def record(self, arch) -> dict:
        """All six accuracies of one architecture, keyed ``"<dataset>/<split>"``."""
        index = _to_index(arch)
        if not self._present[index]:
            raise MissingEntry(f"no entry for {serialize_nb201(nb201_from_index(index))}")
        return {
            f"{ds}/{sp}": float(self._data[index, i, j])
            for i, ds in enumerate(DATASETS)
            for j, sp in enumerate(SPLITS)
        }

    def optimal(self, dataset_id: DatasetId) -> tuple[Nb201Arch, float]:
        """Best architecture for a column; ties go to the smallest index."""
        col = self.column(dataset_id)
        if np.isnan(col).all():
            raise MissingEntry("table is empty")
        index = int(np.nanargmax(col))
        return nb201_from_index(index), float(col[index])

    # -- output -------------------------------------------------------------------
    def iter_records(self):
        for index in np.flatnonzero(self._present):
            row = {"arch": serialize_nb201(nb201_from_index(int(index)))}
            for i, ds in enumerate(DATASETS):
                row[FILE_KEYS[ds]] = {sp: float(self._data[index, i, j]) for j, sp in enumerate(SPLITS)}
            yield row

    def to_jsonl_bytes(self) -> bytes:
        lines = [json.dumps(r, separators=(", ", ": ")) for r in self.iter_records()]
        return ("\n".join(lines) + "\n").encode() if lines else b""

    def write(self, path: Union[str, Path]) -> str:
        """Write the canonical JSON-lines form and return its digest."""
        data = self.to_jsonl_bytes()
        Path(path).write_bytes(data)
        return _digest(data)


def _to_index(arch) -> int:
    if isinstance(arch, Nb201Arch):
        return nb201_index(arch)
    if isinstance(arch, str):
        return nb201_index(parse_nb201(arch))
    return nb201_index(nb201_from_index(arch))


def _accuracy(value, lineno: int, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(lineno, f"{where} is not a number: {value!r}")
    value = float(value)
    if not 0.0 <= value <= 100.0:
        raise ParseError(lineno, f"{where} = {value} outside [0, 100]")
    return value


def _parse_row(record, lineno: int) -> tuple[int, np.ndarray]:
    if not isinstance(record, dict):
        raise ParseError(lineno, "expected a JSON object")
    if "arch" not in record:
        raise ParseError(lineno, "missing 'arch'")
    try:
        index = nb201_index(parse_nb201(record["arch"]))
    except ArchError as exc:
        raise ParseError(lineno, f"bad architecture string: {exc}") from None
    row = np.empty((len(DATASETS), len(SPLITS)))
    for i, ds in enumerate(DATASETS):
        entry = record.get(FILE_KEYS[ds])
        if not isinstance(entry, dict):
            raise ParseError(lineno, f"missing dataset object {FILE_KEYS[ds]!r}")
        for j, sp in enumerate(SPLITS):
            if sp not in entry:
                raise ParseError(lineno, f"missing {FILE_KEYS[ds]}.{sp}")
            row[i, j] = _accuracy(entry[sp], lineno, f"{FILE_KEYS[ds]}.{sp}")
    return index, row


def _assemble(numbered_records, allow_partial: bool, source: str) -> np.ndarray:
    data = np.full((NUM_ARCHS, len(DATASETS), len(SPLITS)), np.nan)
    seen: dict[int, int] = {}
    for lineno, record in numbered_records:
        index, row = _parse_row(record, lineno)
        if index in seen:
            raise DuplicateArch(
                f"line {lineno}: {serialize_nb201(nb201_from_index(index))} "
                f"already given on line {seen[index]}"
            )
        seen[index] = lineno
        data[index] = row
    if len(seen) != NUM_ARCHS and not allow_partial:
        raise IncompleteTable(f"{source}: {len(seen)} of {NUM_ARCHS} architectures present")
    return data


def load_benchmark(path: Union[str, Path], *, allow_partial: bool = False) -> BenchTable:
    """Load and validate a JSON-lines benchmark file.

    Raises ParseError (with line number), DuplicateArch, or IncompleteTable
    when fewer than 15,625 rows are present and ``allow_partial`` is false.
    The digest is taken over the raw file bytes.
    """
    raw = Path(path).read_bytes()

    def numbered():
        for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from None

    data = _assemble(numbered(), allow_partial, str(path))
    return BenchTable(data, digest=_digest(raw), source=str(path))


def lookup(table: BenchTable, arch, dataset_id: DatasetId) -> float:
    return table.lookup(arch, dataset_id)


def optimal(table: BenchTable, dataset_id: DatasetId) -> tuple[Nb201Arch, float]:
    return table.optimal(dataset_id)


# -- synthetic tables ------------------------------------------------------------

# Rough per-dataset (floor, ceiling) of test accuracy on the real benchmark.
_SYNTH_RANGES = {"cifar10": (10.0, 94.0), "cifar100": (1.0, 73.0), "imagenet16-120": (0.8, 47.0)}


def _reachable_output(codes: np.ndarray) -> np.ndarray:
    """Whether node 3 is connected to node 0 through non-``none`` edges."""
    live = codes != 0
    n1 = live[:, 0]
    n2 = live[:, 1] | (n1 & live[:, 2])
    return live[:, 3] | (n1 & live[:, 4]) | (n2 & live[:, 5])


def synthetic_table(seed: int = 0) -> BenchTable:
    """A seeded, benchmark-shaped table for tests and demos.

    Scores combine per-edge operation preferences (convolutions favoured),
    small pairwise edge interactions and noise; cells with no path from input
    to output sit at the chance floor.  Every dataset/split column gets its
    own noise so their argmaxes need not coincide.
    """
    rng = np.random.default_rng(seed)
    idx = np.arange(NUM_ARCHS)
    codes = np.stack([(idx // 5 ** i) % 5 for i in range(6)], axis=1)
    # op order: none, skip, conv1x1, conv3x3, avgpool
    op_pref = np.array([0.0, 0.45, 0.75, 1.0, 0.35])
    edge_w = rng.uniform(0.6, 1.4, size=(6, 5)) * op_pref
    score = edge_w[np.arange(6), codes].sum(axis=1)
    inter = rng.normal(0.0, 0.08, size=(6, 6, 5, 5))
    for a in range(6):
        for b in range(a + 1, 6):
            score += inter[a, b, codes[:, a], codes[:, b]]
    score = (score - score.min()) / (score.max() - score.min())
    connected = _reachable_output(codes)
    data = np.empty((NUM_ARCHS, len(DATASETS), len(SPLITS)))
    for i, ds in enumerate(DATASETS):
        floor, ceil = _SYNTH_RANGES[ds]
        base = floor + (ceil - floor) * score ** 1.5
        for j in range(len(SPLITS)):
            noisy = base + rng.normal(0.0, 0.15 + 0.1 * j, size=NUM_ARCHS)
            col = np.where(connected, noisy, floor)
            data[:, i, j] = np.round(np.clip(col, 0.0, 100.0), 4)
    return BenchTable(data)
