"""Baseline selection criteria: AIC, BIC, ICL, CH, ASW, FW stability and CVLK"""
import logging
import math

import numpy as np
from sklearn.metrics import calinski_harabasz_score, silhouette_score
from sklearn.metrics.cluster import contingency_matrix

from services import backend_service
from services.qscore_service import assignment_entropy, expected_complete_loglik, mixture_loglik, posterior_weights
from services.resampling_service import bootstrap_indices, check_failures, refit_outcomes, run_folds
from services.work_queue import run_indexed
from utils.errors import ComputeError, DegenerateScatter, NotApplicable
from utils.types import Backend, DataMatrix

logger = logging.getLogger(__name__)


def _values(data):
    return data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=float)


def _require_likelihood(fit, name):
    spec = fit.spec
    if spec.backend is not Backend.GAUSSIAN_EM:
        raise NotApplicable(f"{name} needs a likelihood backend, {spec.method_id} is not one")
    if not math.isinf(spec.gamma):
        # defined for unconstrained (gamma = inf) fits only
        raise NotApplicable(f"{name} is not defined for eigen-ratio constrained fits ({spec.method_id})")


def aic_bic(fit, n):
    """(AIC, BIC) on the 2 log-likelihood scale, larger is better"""
    _require_likelihood(fit, 'AIC/BIC')
    aic = 2.0 * fit.loglik - 2.0 * fit.n_params
    bic = 2.0 * fit.loglik - math.log(n) * fit.n_params
    return aic, bic


def icl(fit, data):
    """
    Integrated complete-data likelihood: 2 E[complete loglik | X] - log(n) nu.

    Equals BIC minus twice the summed posterior assignment entropy; the two
    routes are compared and a disagreement is logged.
    """
    _require_likelihood(fit, 'ICL')
    values = _values(data)
    n = values.shape[0]
    value = 2.0 * expected_complete_loglik(values, fit.theta) - math.log(n) * fit.n_params

    bic = 2.0 * mixture_loglik(values, fit.theta) - math.log(n) * fit.n_params
    via_entropy = bic - 2.0 * n * assignment_entropy(posterior_weights(values, fit.theta))
    if abs(value - via_entropy) > 1e-8 * max(1.0, abs(value)):
        logger.warning(f"{fit.method_id}: ICL routes disagree ({value} vs {via_entropy})")
    return value


def _cluster_count(labels):
    return np.unique(labels).shape[0]


def calinski_harabasz(data, partition):
    """Between over within squared-Euclidean scatter, scaled by (n-K)/(K-1)"""
    values = _values(data)
    labels = partition.labels
    k = _cluster_count(labels)
    if k < 2:
        raise NotApplicable("CH needs at least two clusters")
    within = 0.0
    for label in np.unique(labels):
        members = values[labels == label]
        within += float(np.sum((members - members.mean(axis=0)) ** 2))
    if within <= 0.0:
        raise DegenerateScatter("within-cluster scatter is zero")
    return float(calinski_harabasz_score(values, labels))


def average_silhouette_width(data, partition):
    """Mean Euclidean silhouette; singleton clusters contribute 0"""
    values = _values(data)
    labels = partition.labels
    k = _cluster_count(labels)
    if k < 2:
        raise NotApplicable("ASW needs at least two clusters")
    if k == values.shape[0]:
        return 0.0
    return float(silhouette_score(values, labels, metric='euclidean'))


def coassignment_distance(a, b):
    """Share of ordered point pairs on which the two partitions disagree about co-membership"""
    counts = contingency_matrix(a, b).astype(float)
    n = counts.sum()
    disagreement = np.sum(counts.sum(axis=1) ** 2) + np.sum(counts.sum(axis=0) ** 2) - 2.0 * np.sum(counts ** 2)
    return float(disagreement / n ** 2)


def fw_stability(data, spec, b, rng, fitter=None, workers=None):
    """
    Negative mean instability over b pairs of independent bootstrap fits.

    Each fit of a pair labels the original sample; the pair's distance is
    the co-assignment mismatch rate.
    """
    if spec.k < 2:
        raise NotApplicable("FW stability needs K >= 2")
    if b < 1:
        raise ComputeError(f"FW needs b >= 1, got {b}")
    fitter = fitter or backend_service.fit
    values = _values(data)
    n = values.shape[0]
    pair_rng = rng.derive('fw')

    def pair(index):
        labelings = []
        for side in (0, 1):
            replicate = 2 * index + side
            rows = bootstrap_indices(n, replicate, pair_rng)
            result = fitter(values[rows], spec, pair_rng.derive('fit', replicate, spec.method_id))
            labelings.append(result.assign(values))
        return coassignment_distance(*labelings)

    distances, failed = refit_outcomes(run_indexed(pair, range(b), workers))
    check_failures(len(failed), b, f"{spec.method_id} FW")
    return -float(np.mean(distances))


def cvlk_from_folds(data, splits):
    """Mean over folds of the held-out average log mixture density"""
    values = _values(data)
    fold_values = [mixture_loglik(values[split.test], split.result.theta) / split.test.shape[0]
                   for split in splits if split.result is not None]
    return float(np.mean(fold_values))


def cvlk(data, spec, folds, rng, fitter=None, workers=None):
    """Cross-validated log-likelihood of a GaussianEM method"""
    if spec.backend is not Backend.GAUSSIAN_EM:
        raise NotApplicable(f"CVLK needs a likelihood backend, {spec.method_id} is not one")
    splits = run_folds(data, spec, folds, rng, fitter, workers)
    return cvlk_from_folds(data, splits)
