"""Quadratic score, quadratic partition and the hard/smooth score criteria"""
import math

import numpy as np
from scipy import linalg
from scipy.special import entr, logsumexp, softmax

from utils.errors import InvalidConfiguration, SingularSigma
from utils.types import DataMatrix, GaussianEvaluation, Partition, ScoreMode, ScoreWeights

# Cholesky diagonal below this (relative to the largest) means eigenvalues under ~1e-300
_CHOLESKY_RELATIVE_FLOOR = 1e-150


def _values(data):
    if isinstance(data, DataMatrix):
        return data.values
    values = np.asarray(data, dtype=float)
    return values.reshape(-1, 1) if values.ndim == 1 else values


def score_constant(p):
    """qs - log(pi * density) for Gaussian components in dimension p"""
    return 0.5 * p * math.log(2.0 * math.pi)


def _cholesky(sigma):
    try:
        lower = linalg.cholesky(sigma, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise SingularSigma(f"covariance factorization failed: {e}")
    diagonal = np.diag(lower)
    if diagonal.min() <= _CHOLESKY_RELATIVE_FLOOR * diagonal.max():
        raise SingularSigma("covariance is numerically singular")
    return lower, diagonal


def _component_scores(values, pi, mu, sigma):
    """log pi - 1/2 log det sigma - 1/2 Mahalanobis^2, for every row of values"""
    lower, diagonal = _cholesky(sigma)
    whitened = linalg.solve_triangular(lower, (values - mu).T, lower=True, check_finite=False)
    half_logdet = np.sum(np.log(diagonal))
    return math.log(pi) - half_logdet - 0.5 * np.sum(whitened * whitened, axis=0)


def quadratic_score(x, triplet):
    """Quadratic score of a single point for one cluster triplet"""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != triplet.mu.shape:
        raise InvalidConfiguration(f"point has dimension {x.shape[0]}, triplet has {triplet.mu.shape[0]}")
    return float(_component_scores(x.reshape(1, -1), triplet.pi, triplet.mu, triplet.sigma)[0])


def score_matrix(data, theta):
    """n x K matrix of quadratic scores"""
    values = _values(data)
    if values.shape[1] != theta.p:
        raise InvalidConfiguration(f"data has p={values.shape[1]}, configuration has p={theta.p}")
    return np.column_stack([
        _component_scores(values, t.pi, t.mu, t.sigma) for t in theta.triplets
    ])


def gaussian_evaluation(data, theta):
    qs = score_matrix(data, theta)
    log_component = qs - score_constant(theta.p)
    return GaussianEvaluation(log_component, qs, logsumexp(log_component, axis=1))


def quadratic_partition(data, theta):
    """Assign every point to its highest-scoring cluster (lowest index on ties)"""
    qs = score_matrix(data, theta)
    return Partition(np.argmax(qs, axis=1), theta.k)


def hard_score(data, theta):
    """H_n: mean over points of the largest quadratic score"""
    return float(np.mean(np.max(score_matrix(data, theta), axis=1)))


def smooth_weights(data, theta):
    """Softmax of the quadratic scores across clusters, per point"""
    return ScoreWeights(softmax(score_matrix(data, theta), axis=1), ScoreMode.SMOOTH)


def smooth_score(data, theta):
    """T_n: mean over points of the softmax-weighted quadratic scores"""
    qs = score_matrix(data, theta)
    return float(np.mean(np.sum(softmax(qs, axis=1) * qs, axis=1)))


def sample_score(data, theta, mode):
    mode = ScoreMode(mode)
    return hard_score(data, theta) if mode is ScoreMode.HARD else smooth_score(data, theta)


def posterior_weights(data, theta):
    """Gaussian posterior membership probabilities"""
    evaluation = gaussian_evaluation(data, theta)
    weights = np.exp(evaluation.log_component - evaluation.log_mixture[:, None])
    return ScoreWeights(weights, ScoreMode.SMOOTH)


def map_assign(weights):
    """Row argmax, lowest index on ties"""
    matrix = weights.weights
    return Partition(np.argmax(matrix, axis=1), matrix.shape[1])


def assignment_entropy(weights):
    """Mean per-point entropy of the weights, with 0 log 0 = 0"""
    return float(np.mean(np.sum(entr(weights.weights), axis=1)))


def complete_data_loglik(data, theta, z):
    """Sum over points of log(pi * density) of the assigned component"""
    if z.k != theta.k:
        raise InvalidConfiguration(f"partition has k={z.k}, configuration has k={theta.k}")
    log_component = gaussian_evaluation(data, theta).log_component
    if z.n != log_component.shape[0]:
        raise InvalidConfiguration(f"partition has n={z.n}, data has n={log_component.shape[0]}")
    return float(np.sum(log_component[np.arange(z.n), z.labels]))


def expected_complete_loglik(data, theta):
    """Complete-data log-likelihood averaged over the posterior assignment"""
    evaluation = gaussian_evaluation(data, theta)
    weights = np.exp(evaluation.log_component - evaluation.log_mixture[:, None])
    return float(np.sum(weights * evaluation.log_component))


def mixture_loglik(data, theta):
    return float(np.sum(gaussian_evaluation(data, theta).log_mixture))
