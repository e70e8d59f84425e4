"""Agreement between two partitions: adjusted Rand index and negative variation of information"""
from dataclasses import dataclass

import numpy as np
from scipy.special import comb
from scipy.stats import entropy
from sklearn.metrics import mutual_info_score
from sklearn.metrics.cluster import contingency_matrix

from utils.errors import LengthMismatch
from utils.types import Partition


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray
    row_sums: np.ndarray
    col_sums: np.ndarray
    n: int


def _labels(partition):
    return partition.labels if isinstance(partition, Partition) else np.asarray(partition)


def contingency_table(a, b):
    a, b = _labels(a), _labels(b)
    if a.shape != b.shape:
        raise LengthMismatch(f"partitions have {a.size} and {b.size} points")
    counts = contingency_matrix(a, b)
    return ContingencyTable(counts, counts.sum(axis=1), counts.sum(axis=0), int(counts.sum()))


def adjusted_rand_index(a, b):
    """Hubert-Arabie ARI; 1.0 when the chance-corrected denominator vanishes"""
    table = contingency_table(a, b)
    total_pairs = comb(table.n, 2)
    if total_pairs == 0:
        return 1.0
    index = comb(table.counts, 2).sum()
    row_pairs = comb(table.row_sums, 2).sum()
    col_pairs = comb(table.col_sums, 2).sum()
    expected = row_pairs * col_pairs / total_pairs
    maximum = 0.5 * (row_pairs + col_pairs)
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def variation_of_information(a, b):
    """H(a) + H(b) - 2 I(a, b) in nats"""
    table = contingency_table(a, b)
    mutual_information = mutual_info_score(None, None, contingency=table.counts)
    vi = entropy(table.row_sums) + entropy(table.col_sums) - 2.0 * mutual_information
    return max(float(vi), 0.0)


def negative_vic(a, b):
    return -variation_of_information(a, b)
