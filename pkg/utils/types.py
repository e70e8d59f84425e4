"""Domain types shared across services"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from utils.errors import DataError, EmptyData, InvalidConfiguration, LengthMismatch


def _frozen_array(values, dtype=float):
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


class ScoreMode(str, Enum):
    HARD = 'hard'
    SMOOTH = 'smooth'


class Backend(str, Enum):
    KMEANS = 'kmeans'
    KMEDOIDS = 'kmedoids'
    GAUSSIAN_EM = 'gem'


class CovarianceModel(str, Enum):
    EII = 'EII'
    VII = 'VII'
    EEI = 'EEI'
    VVI = 'VVI'
    EEE = 'EEE'
    VVV = 'VVV'

    @property
    def common(self):
        """Whether every component shares one scatter matrix"""
        return self in (CovarianceModel.EII, CovarianceModel.EEI, CovarianceModel.EEE)


# Parametrizations of the full taxonomy that are recognised but not fitted
EXCLUDED_MODELS = ('EVI', 'VEI', 'EVE', 'VEE', 'VVE', 'EEV', 'VEV', 'EVV')


class Init(str, Enum):
    KMEANS_PLUS_PLUS = 'kmpp'
    PAM_BUILD = 'pam'
    RANDOM_PARTITION = 'random'


class Criterion(str, Enum):
    QH = 'QH'
    QS = 'QS'
    CVQH = 'CVQH'
    CVQS = 'CVQS'
    BQH = 'BQH'
    BQS = 'BQS'
    AIC = 'AIC'
    BIC = 'BIC'
    ICL = 'ICL'
    CH = 'CH'
    ASW = 'ASW'
    FW = 'FW'
    CVLK = 'CVLK'

    @property
    def mode(self):
        """Score mode for the quadratic-score criteria, None otherwise"""
        if self in (Criterion.QH, Criterion.CVQH, Criterion.BQH):
            return ScoreMode.HARD
        if self in (Criterion.QS, Criterion.CVQS, Criterion.BQS):
            return ScoreMode.SMOOTH
        return None


@dataclass(frozen=True)
class DataMatrix:
    """n x p observations with optional ground-truth labels"""
    values: np.ndarray
    labels: Optional[np.ndarray] = None
    feature_names: Optional[Tuple[str, ...]] = None
    zero_variance: Optional[Tuple[bool, ...]] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise EmptyData(f"Data matrix must be non-empty and two-dimensional, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("Data matrix contains NaN or infinite entries")
        object.__setattr__(self, 'values', _frozen_array(values))

        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (values.shape[0],):
                raise LengthMismatch(f"Expected {values.shape[0]} labels, got {labels.size}")
            object.__setattr__(self, 'labels', _frozen_array(labels, dtype=labels.dtype))

        if self.feature_names is not None:
            names = tuple(str(name) for name in self.feature_names)
            if len(names) != values.shape[1]:
                raise LengthMismatch(f"Expected {values.shape[1]} feature names, got {len(names)}")
            object.__setattr__(self, 'feature_names', names)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    def rows(self, index):
        """Sub-sample (with repetition allowed) keeping labels aligned"""
        index = np.asarray(index, dtype=int)
        labels = None if self.labels is None else self.labels[index]
        return DataMatrix(self.values[index], labels, self.feature_names, self.zero_variance)


@dataclass(frozen=True)
class ClusterTriplet:
    """Size, center and scatter of one cluster"""
    pi: float
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'pi', float(self.pi))
        object.__setattr__(self, 'mu', _frozen_array(np.atleast_1d(self.mu)))
        object.__setattr__(self, 'sigma', _frozen_array(np.atleast_2d(self.sigma)))


@dataclass(frozen=True)
class ClusterConfiguration:
    triplets: Tuple[ClusterTriplet, ...]
    method_id: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'triplets', tuple(self.triplets))
        if not self.triplets:
            raise InvalidConfiguration("configuration needs at least one triplet (K >= 1)")

    @property
    def k(self):
        return len(self.triplets)

    @property
    def p(self):
        return self.triplets[0].mu.shape[0]

    @property
    def pis(self):
        return np.array([t.pi for t in self.triplets])

    @property
    def mus(self):
        return np.stack([t.mu for t in self.triplets])

    @property
    def sigmas(self):
        return np.stack([t.sigma for t in self.triplets])

    @classmethod
    def from_arrays(cls, pis, mus, sigmas, method_id=''):
        return cls(tuple(ClusterTriplet(pi, mu, sigma) for pi, mu, sigma in zip(pis, mus, sigmas)), method_id)


@dataclass(frozen=True)
class Partition:
    """Cluster index in 0..k-1 for every point"""
    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise InvalidConfiguration("partition labels must be one-dimensional")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise InvalidConfiguration(f"partition labels must lie in 0..{self.k - 1}")
        object.__setattr__(self, 'labels', _frozen_array(labels, dtype=int))
        object.__setattr__(self, 'k', int(self.k))

    @property
    def n(self):
        return self.labels.shape[0]

    @property
    def sizes(self):
        return np.bincount(self.labels, minlength=self.k)

    @classmethod
    def from_labels(cls, labels):
        """Relabel arbitrary class ids as 0..K-1 in sorted order of the ids"""
        _, codes = np.unique(np.asarray(labels), return_inverse=True)
        codes = codes.reshape(-1)
        return cls(codes, int(codes.max()) + 1 if codes.size else 0)


@dataclass(frozen=True)
class ScoreWeights:
    weights: np.ndarray
    mode: ScoreMode

    def __post_init__(self):
        object.__setattr__(self, 'weights', _frozen_array(np.atleast_2d(self.weights)))


@dataclass(frozen=True)
class GaussianEvaluation:
    """Per point and component: log(pi * density), quadratic score; per point log mixture density"""
    log_component: np.ndarray
    qs: np.ndarray
    log_mixture: np.ndarray = field(repr=False)
