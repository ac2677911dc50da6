import os
import time

import numpy as np
import pytest

from llmnas.archspace.nb201 import OpKind, nb201_index, parse_nb201
from llmnas.bench import DATASETS, SPLITS, BenchTable, DatasetId, load_benchmark, synthetic_table

# Ten published cells: (id, cell string, cifar10 test accuracy, true rank).
RANKED_SAMPLE = [
    (1, "|none~0|+|none~0|none~1|+|none~0|none~1|skip_connect~2|", 10.00, 10),
    (2, "|none~0|+|none~0|none~1|+|nor_conv_1x1~0|nor_conv_1x1~1|skip_connect~2|", 88.67, 7),
    (3, "|nor_conv_3x3~0|+|nor_conv_3x3~0|nor_conv_3x3~1|+|skip_connect~0|nor_conv_3x3~1|nor_conv_1x1~2|",
     94.37, 1),
    (4, "|nor_conv_3x3~0|+|skip_connect~0|nor_conv_1x1~1|+|nor_conv_3x3~0|nor_conv_1x1~1|nor_conv_3x3~2|",
     92.98, 2),
    (5, "|avg_pool_3x3~0|+|none~0|none~1|+|skip_connect~0|none~1|none~2|", 86.63, 8),
    (6, "|none~0|+|nor_conv_1x1~0|avg_pool_3x3~1|+|nor_conv_1x1~0|nor_conv_3x3~1|nor_conv_1x1~2|", 89.53, 6),
    (7, "|nor_conv_1x1~0|+|nor_conv_3x3~0|nor_conv_1x1~1|+|nor_conv_1x1~0|skip_connect~1|skip_connect~2|",
     92.36, 3),
    (8, "|avg_pool_3x3~0|+|none~0|avg_pool_3x3~1|+|skip_connect~0|avg_pool_3x3~1|none~2|", 78.71, 9),
    (9, "|nor_conv_3x3~0|+|none~0|avg_pool_3x3~1|+|nor_conv_3x3~0|skip_connect~1|avg_pool_3x3~2|", 92.03, 4),
    (10, "|nor_conv_3x3~0|+|avg_pool_3x3~0|avg_pool_3x3~1|+|nor_conv_3x3~0|none~1|skip_connect~2|", 90.75, 5),
]

CIFAR10_TEST = DatasetId("cifar10", "test")

# Published optimum accuracies per dataset (test split).
PUBLISHED_OPTIMA = {"cifar10": 94.37, "cifar100": 73.51, "imagenet16-120": 47.31}


def conv3_count(arch) -> float:
    return float(sum(op is OpKind.NOR_CONV_3X3 for op in arch.ops))


@pytest.fixture(scope="session")
def synth():
    return synthetic_table(0)


@pytest.fixture(scope="session")
def ranked_table(synth):
    """Synthetic table with the ten published cells' cifar10/test values patched in."""
    data = synth.array.copy()
    d, s = CIFAR10_TEST.column
    for _, cell, acc, _ in RANKED_SAMPLE:
        data[nb201_index(parse_nb201(cell)), d, s] = acc
    return BenchTable(data)


@pytest.fixture(scope="session")
def real_table():
    """Ingested benchmark named by NB201_JSONL; tests needing it skip otherwise."""
    path = os.environ.get("NB201_JSONL")
    if not path or not os.path.isfile(path):
        pytest.skip("NB201_JSONL not set to an ingested benchmark file")
    return load_benchmark(path)


def small_table(entries):
    """Partial table from ``{index: accuracy}`` (same value in every column)."""
    data = np.full((15625, len(DATASETS), len(SPLITS)), np.nan)
    for index, acc in entries.items():
        data[index] = acc
    return BenchTable(data)


# -- acceptance summary ------------------------------------------------------------

ACCEPTANCE: dict = {}
_START = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        tr.write_line(ACCEPTANCE[number])
    elapsed = time.perf_counter() - _START
    tr.write_line(f"{'PASS' if elapsed < 120 else 'FAIL'} criterion 5 (runtime): "
                  f"total suite wall time {elapsed:.1f} s (< 120 s)")
