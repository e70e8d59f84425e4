"""Dataset ingestion, preprocessing and CSV output"""
import logging
import os

import numpy as np
import pandas as pd

from utils.errors import DataError, EmptyData, NotEnoughPoints, ParseError
from utils.types import DataMatrix

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def _read_frame(path):
    if not os.path.isfile(path):
        raise DataError(f"file not found: {path}")
    try:
        return pd.read_csv(path, sep=',', decimal='.', encoding='utf-8', skipinitialspace=True,
                           float_precision='round_trip')
    except pd.errors.EmptyDataError:
        raise EmptyData(f"{path} is empty")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: {e}")


def load_csv(path, label_column=None):
    """
    Load a header-first CSV into a DataMatrix.

    Every column except label_column must parse as finite reals; missing
    cells and short rows are rejected rather than imputed.
    """
    frame = _read_frame(path)

    labels = None
    if label_column is not None:
        if label_column not in frame.columns:
            raise ParseError(f"{path}: label column '{label_column}' not found")
        labels = frame.pop(label_column).to_numpy()
        if pd.isna(labels).any():
            raise ParseError(f"{path}: label column '{label_column}' has missing entries")

    if frame.shape[0] == 0 or frame.shape[1] == 0:
        raise EmptyData(f"{path}: no data (n={frame.shape[0]}, p={frame.shape[1]})")

    columns = []
    for name in frame.columns:
        try:
            column = pd.to_numeric(frame[name], errors='raise')
        except (ValueError, TypeError) as e:
            raise ParseError(f"{path}: column '{name}' is not numeric ({e})")
        columns.append(column.to_numpy(dtype=float))

    values = np.column_stack(columns)
    if not np.all(np.isfinite(values)):
        bad_row = int(np.argwhere(~np.isfinite(values))[0][0])
        raise ParseError(f"{path}: missing or non-finite value at data row {bad_row + 1}")

    logger.info(f"Loaded {path}: n={values.shape[0]}, p={values.shape[1]}"
                + (f", {len(np.unique(labels))} classes" if labels is not None else ''))
    return DataMatrix(values, labels, tuple(str(c) for c in frame.columns))


def load_labels(path, column=None):
    """Read one column of class ids (the first column unless named)"""
    frame = _read_frame(path)
    if frame.shape[0] == 0:
        raise EmptyData(f"{path}: no labels")
    name = column if column is not None else frame.columns[0]
    if name not in frame.columns:
        raise ParseError(f"{path}: column '{name}' not found")
    labels = frame[name].to_numpy()
    if pd.isna(labels).any():
        raise ParseError(f"{path}: missing labels")
    return labels


def write_csv(data, path, label_column='label'):
    """Write values at 17 significant digits so load_csv reads them back bit-identical"""
    names = list(data.feature_names) if data.feature_names else [f'x{j + 1}' for j in range(data.p)]
    frame = pd.DataFrame(np.asarray(data.values), columns=names)
    if data.labels is not None:
        frame[label_column] = np.asarray(data.labels)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def standardize(data):
    """Center every column and scale by its sample sd; constant columns are only centered"""
    if data.n < 2:
        raise NotEnoughPoints("standardize needs at least 2 points")

    values = np.asarray(data.values, dtype=float)
    centered = values - values.mean(axis=0)
    zero_variance = np.ptp(values, axis=0) == 0
    sd = centered.std(axis=0, ddof=1)
    scale = np.where(zero_variance, 1.0, sd)
    if zero_variance.any():
        logger.warning(f"Columns {np.flatnonzero(zero_variance).tolist()} have zero variance; centered only")

    return DataMatrix(centered / scale, data.labels, data.feature_names, tuple(bool(z) for z in zero_variance))
