"""Clustering backends: k-means, PAM k-medoids and Gaussian-mixture EM"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus

from config import Config
from services.qscore_service import score_constant, score_matrix
from utils.errors import (
    ComputeError, ConfigError, DegenerateFit, EmptyCluster, NotApplicable,
    NotEnoughPoints, UnsupportedModel,
)
from utils.types import (
    EXCLUDED_MODELS, Backend, ClusterConfiguration, CovarianceModel,
    DataMatrix, Init, Partition,
)
from utils.validators import validate_configuration

logger = logging.getLogger(__name__)


def parse_covariance_model(name):
    """Map a model label to CovarianceModel; recognised but excluded labels raise UnsupportedModel"""
    if isinstance(name, CovarianceModel):
        return name
    label = str(name).upper()
    if label in EXCLUDED_MODELS:
        raise UnsupportedModel(f"covariance model {label} is not implemented")
    try:
        return CovarianceModel(label)
    except ValueError:
        raise ConfigError(f"unknown covariance model '{name}'")


def _gamma_tag(gamma):
    return 'inf' if math.isinf(gamma) else f'{gamma:g}'


@dataclass(frozen=True)
class MethodSpec:
    """One candidate method: backend plus hyper-parameters"""
    backend: Backend
    k: int
    covariance_model: CovarianceModel = CovarianceModel.VVV
    gamma: float = math.inf
    init: Init = Init.KMEANS_PLUS_PLUS
    restarts: int = Config.RESTARTS
    max_iter: int = Config.EM_MAX_ITER
    tol: float = Config.EM_TOL

    def __post_init__(self):
        object.__setattr__(self, 'backend', Backend(self.backend))
        object.__setattr__(self, 'covariance_model', parse_covariance_model(self.covariance_model))
        object.__setattr__(self, 'init', Init(self.init))
        object.__setattr__(self, 'gamma', float(self.gamma))
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not self.gamma >= 1:
            raise ConfigError(f"gamma must be >= 1, got {self.gamma}")
        if self.restarts < 1:
            raise ConfigError(f"restarts must be >= 1, got {self.restarts}")
        if self.max_iter < 1 or not self.tol > 0:
            raise ConfigError("max_iter must be >= 1 and tol > 0")

    @property
    def method_id(self):
        if self.backend is Backend.GAUSSIAN_EM:
            return f"gem-{self.covariance_model.value}-g{_gamma_tag(self.gamma)}-{self.init.value}-K{self.k}"
        return f"{self.backend.value}-{self.init.value}-K{self.k}"

    @property
    def is_likelihood(self):
        return self.backend is Backend.GAUSSIAN_EM

    def to_dict(self):
        return {
            'backend': self.backend.value,
            'k': self.k,
            'covariance_model': self.covariance_model.value,
            'gamma': None if math.isinf(self.gamma) else self.gamma,
            'init': self.init.value,
            'restarts': self.restarts,
            'max_iter': self.max_iter,
            'tol': self.tol,
        }


@dataclass(frozen=True)
class FitResult:
    """
    Outcome of one backend fit.

    loglik holds the maximized log-likelihood for GaussianEM and the minimized
    objective (within-cluster SSE for k-means, total dissimilarity for PAM)
    for the other backends. history is the per-iteration sequence of the same
    quantity of the winning restart.
    """
    spec: MethodSpec
    theta: ClusterConfiguration
    partition: Partition
    loglik: float
    n_params: int
    converged: bool
    iterations: int
    centers: Optional[np.ndarray] = None
    history: Tuple[float, ...] = field(default=(), repr=False)

    @property
    def method_id(self):
        return self.spec.method_id

    def assign(self, data):
        """Cluster labels for new points: quadratic partition for EM, nearest center otherwise"""
        values = data.values if isinstance(data, DataMatrix) else np.atleast_2d(np.asarray(data, dtype=float))
        if self.spec.backend is Backend.GAUSSIAN_EM:
            return np.argmax(score_matrix(values, self.theta), axis=1)
        return np.argmin(cdist(values, self.centers, 'sqeuclidean'), axis=1)


def count_free_params(spec, p):
    """Free parameters of a Gaussian mixture under the method's covariance model"""
    if spec.backend is not Backend.GAUSSIAN_EM:
        raise NotApplicable(f"{spec.method_id}: parameter count is defined for GaussianEM only")
    k = spec.k
    alpha = k * p + k - 1
    beta = p * (p + 1) // 2
    model = spec.covariance_model
    terms = {
        CovarianceModel.EII: 1,
        CovarianceModel.VII: k,
        CovarianceModel.EEI: p,
        CovarianceModel.VVI: k * p,
        CovarianceModel.EEE: beta,
        CovarianceModel.VVV: k * beta,
    }
    return alpha + terms[model]


def _erc_objective(m, eigenvalues, weights, gamma):
    clipped = np.clip(eigenvalues, m, gamma * m)
    return float(np.sum(weights[:, None] * (np.log(clipped) + eigenvalues / clipped)))


def _erc_threshold(eigenvalues, weights, gamma):
    """Lower truncation level m minimizing the weighted deviation over [m, gamma m] clippings"""
    breakpoints = np.unique(np.concatenate([eigenvalues.ravel(), eigenvalues.ravel() / gamma]))
    weight_grid = np.broadcast_to(weights[:, None], eigenvalues.shape)
    candidates = list(breakpoints)
    for lo, hi in zip(breakpoints[:-1], breakpoints[1:]):
        mid = 0.5 * (lo + hi)
        below = eigenvalues < mid
        above = eigenvalues > gamma * mid
        denominator = weight_grid[below].sum() + weight_grid[above].sum()
        if denominator > 0:
            optimum = (np.sum(weight_grid[below] * eigenvalues[below])
                       + np.sum(weight_grid[above] * eigenvalues[above]) / gamma) / denominator
            candidates.append(min(max(optimum, lo), hi))
    objective = [_erc_objective(m, eigenvalues, weights, gamma) for m in candidates]
    return candidates[int(np.argmin(objective))]


def enforce_erc(sigmas, gamma, weights=None):
    """
    Bound the ratio of largest to smallest eigenvalue across all matrices by gamma.

    Eigenvalues are truncated into [m, gamma m] keeping eigenvectors. With
    weights equal to the component sizes this is the exact constrained
    M-step. Inputs that already satisfy the bound are returned as they are.
    """
    sigmas = [np.asarray(s, dtype=float) for s in sigmas]
    if math.isinf(gamma) or not sigmas:
        return sigmas

    decompositions = [np.linalg.eigh(s) for s in sigmas]
    eigenvalues = np.stack([values for values, _ in decompositions])
    if eigenvalues.max() <= gamma * eigenvalues.min() * (1 + 1e-9):
        return sigmas

    weights = np.ones(len(sigmas)) if weights is None else np.asarray(weights, dtype=float)
    m = _erc_threshold(eigenvalues, weights, gamma)
    constrained = []
    for values, vectors in decompositions:
        clipped = np.clip(values, m, gamma * m)
        matrix = (vectors * clipped) @ vectors.T
        constrained.append(0.5 * (matrix + matrix.T))
    return constrained


def eigen_floor(values):
    """Smallest admissible covariance eigenvalue for a sample"""
    values = np.asarray(values, dtype=float)
    if values.shape[0] > 1:
        scale = np.trace(np.atleast_2d(np.cov(values, rowvar=False, bias=True))) / values.shape[1]
    else:
        scale = 0.0
    floor = Config.EIGEN_FLOOR * scale
    return floor if floor > 0 else Config.EIGEN_FLOOR


def _apply_floor(sigma, floor):
    """Raise eigenvalues below floor; returns (matrix, whether the floor was hit)"""
    values, vectors = np.linalg.eigh(sigma)
    if values.min() >= floor:
        return sigma, False
    values = np.maximum(values, floor)
    matrix = (vectors * values) @ vectors.T
    return 0.5 * (matrix + matrix.T), True


def triplets_from_partition(data, partition, gamma, method_id=''):
    """Cluster sizes, means and ML covariances of a partition, floored and ERC-regularized"""
    values = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=float)
    n, p = values.shape
    sizes = np.bincount(partition.labels, minlength=partition.k)
    if np.any(sizes == 0):
        raise EmptyCluster(f"clusters {np.flatnonzero(sizes == 0).tolist()} are empty")

    floor = eigen_floor(values)
    pis = sizes / n
    mus, sigmas = [], []
    for k in range(partition.k):
        members = values[partition.labels == k]
        center = members.mean(axis=0)
        deviations = members - center
        sigma, _ = _apply_floor(deviations.T @ deviations / members.shape[0], floor)
        mus.append(center)
        sigmas.append(sigma)

    sigmas = enforce_erc(sigmas, gamma, weights=sizes)
    return ClusterConfiguration.from_arrays(pis, mus, sigmas, method_id)


# ---------------------------------------------------------------------------
# Initialization

def _pam_build(distances, k):
    """Greedy BUILD phase: medoid indices"""
    medoids = [int(np.argmin(distances.sum(axis=0)))]
    nearest = distances[:, medoids[0]].copy()
    for _ in range(1, k):
        gains = np.maximum(nearest[:, None] - distances, 0.0).sum(axis=0)
        gains[medoids] = -np.inf
        chosen = int(np.argmax(gains))
        medoids.append(chosen)
        nearest = np.minimum(nearest, distances[:, chosen])
    return np.array(medoids)


def _random_partition(n, k, rng):
    """Balanced random labels with every cluster non-empty"""
    return rng.generator.permutation(np.arange(n) % k)


def _initial_labels(values, k, init, rng):
    if init is Init.RANDOM_PARTITION:
        return _random_partition(values.shape[0], k, rng)
    if init is Init.PAM_BUILD:
        medoids = _pam_build(cdist(values, values), k)
        return np.argmin(cdist(values, values[medoids], 'sqeuclidean'), axis=1)
    centers, _ = kmeans_plusplus(values, k, random_state=rng.random_state())
    return np.argmin(cdist(values, centers, 'sqeuclidean'), axis=1)


# ---------------------------------------------------------------------------
# k-means

def _means(values, labels, k):
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, values.shape[1]))
    np.add.at(sums, labels, values)
    return sums / counts[:, None]


def _repair_empty(values, labels, distances, k):
    """Move the point farthest from its center into each empty cluster"""
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k)
    own = distances[np.arange(values.shape[0]), labels]
    for empty in np.flatnonzero(counts == 0):
        movable = counts[labels] > 1
        if not movable.any():
            raise EmptyCluster("no point can seed an empty cluster")
        candidate = int(np.argmax(np.where(movable, own, -np.inf)))
        counts[labels[candidate]] -= 1
        labels[candidate] = empty
        counts[empty] += 1
        own[candidate] = 0.0
    return labels


def _kmeans_once(values, spec, rng):
    k = spec.k
    n = values.shape[0]
    if spec.init is Init.KMEANS_PLUS_PLUS:
        centers, _ = kmeans_plusplus(values, k, random_state=rng.random_state())
    else:
        centers = _means(values, _initial_labels(values, k, spec.init, rng), k)

    distances = cdist(values, centers, 'sqeuclidean')
    labels = np.argmin(distances, axis=1)
    history = []
    repaired = False
    converged = False
    iterations = 0
    for iterations in range(1, spec.max_iter + 1):
        if np.any(np.bincount(labels, minlength=k) == 0):
            if repaired:
                raise EmptyCluster("cluster emptied twice in one restart")
            repaired = True
            labels = _repair_empty(values, labels, distances, k)
        centers = _means(values, labels, k)
        distances = cdist(values, centers, 'sqeuclidean')
        new_labels = np.argmin(distances, axis=1)
        history.append(float(distances[np.arange(n), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels

    if np.any(np.bincount(labels, minlength=k) == 0):
        raise EmptyCluster("k-means ended with an empty cluster")
    return labels, centers, history, converged, iterations


# ---------------------------------------------------------------------------
# PAM

def _pam_once(values, spec, rng, distances):
    k = spec.k
    n = values.shape[0]
    if spec.init is Init.PAM_BUILD:
        medoids = _pam_build(distances, k)
    elif spec.init is Init.KMEANS_PLUS_PLUS:
        _, medoids = kmeans_plusplus(values, k, random_state=rng.random_state())
        medoids = np.asarray(medoids, dtype=int)
    else:
        medoids = rng.generator.choice(n, size=k, replace=False)

    history = []
    converged = False
    iterations = 0
    for iterations in range(1, spec.max_iter + 1):
        to_medoids = distances[:, medoids]
        order = np.argsort(to_medoids, axis=1, kind='stable')
        first = to_medoids[np.arange(n), order[:, 0]]
        second = to_medoids[np.arange(n), order[:, 1]] if k > 1 else np.full(n, np.inf)
        total = float(first.sum())
        history.append(total)

        best_cost, best_slot, best_point = total, None, None
        is_medoid = np.zeros(n, dtype=bool)
        is_medoid[medoids] = True
        for slot in range(k):
            without = np.where(order[:, 0] == slot, second, first)
            costs = np.minimum(distances, without[:, None]).sum(axis=0)
            costs[is_medoid] = np.inf
            point = int(np.argmin(costs))
            if costs[point] < best_cost - 1e-12 * max(total, 1.0):
                best_cost, best_slot, best_point = float(costs[point]), slot, point

        if best_slot is None:
            converged = True
            break
        medoids = medoids.copy()
        medoids[best_slot] = best_point

    labels = np.argmin(distances[:, medoids], axis=1)
    if np.any(np.bincount(labels, minlength=k) == 0):
        raise EmptyCluster("duplicate medoid locations left a cluster empty")
    return labels, values[medoids], history, converged, iterations


# ---------------------------------------------------------------------------
# Gaussian EM

def _m_step(values, responsibilities, model, gamma, floor):
    """Weighted moments under the covariance model, then floor and ERC"""
    n, p = values.shape
    nk = responsibilities.sum(axis=0)
    pis = nk / n
    mus = (responsibilities.T @ values) / nk[:, None]
    scatters = []
    for k in range(nk.shape[0]):
        deviations = values - mus[k]
        scatters.append((responsibilities[:, k, None] * deviations).T @ deviations)
    scatters = np.stack(scatters)

    if model is CovarianceModel.VVV:
        sigmas = scatters / nk[:, None, None]
    elif model is CovarianceModel.EEE:
        sigmas = np.broadcast_to(scatters.sum(axis=0) / n, scatters.shape).copy()
    elif model is CovarianceModel.VVI:
        sigmas = np.stack([np.diag(np.diag(w) / size) for w, size in zip(scatters, nk)])
    elif model is CovarianceModel.EEI:
        sigmas = np.broadcast_to(np.diag(np.diag(scatters.sum(axis=0)) / n), scatters.shape).copy()
    elif model is CovarianceModel.VII:
        sigmas = np.stack([np.trace(w) / (p * size) * np.eye(p) for w, size in zip(scatters, nk)])
    else:
        sigmas = np.broadcast_to(np.trace(scatters.sum(axis=0)) / (n * p) * np.eye(p), scatters.shape).copy()

    if model.common:
        common, floored = _apply_floor(sigmas[0], floor)
        common = enforce_erc([common], gamma, weights=[n])[0]
        return pis, mus, np.stack([common] * nk.shape[0]), nk.shape[0] if floored else 0

    floored_count = 0
    floored_sigmas = []
    for sigma in sigmas:
        sigma, floored = _apply_floor(sigma, floor)
        floored_count += floored
        floored_sigmas.append(sigma)
    return pis, mus, np.stack(enforce_erc(floored_sigmas, gamma, weights=nk)), floored_count


def _log_components(values, pis, mus, sigmas):
    theta = ClusterConfiguration.from_arrays(pis, mus, sigmas)
    return score_matrix(values, theta) - score_constant(values.shape[1])


def _gem_once(values, spec, rng, floor):
    n = values.shape[0]
    k = spec.k
    labels = _initial_labels(values, k, spec.init, rng)
    if np.any(np.bincount(labels, minlength=k) == 0):
        labels = _repair_empty(values, labels, cdist(values, _means_safe(values, labels, k), 'sqeuclidean'), k)
    responsibilities = np.eye(k)[labels]

    repaired = False
    history = []
    converged = False
    iterations = 0
    degenerate_limit = Config.DEGENERATE_SHARE * k
    for iterations in range(1, spec.max_iter + 1):
        pis, mus, sigmas, floored = _m_step(values, responsibilities, spec.covariance_model, spec.gamma, floor)
        if floored > degenerate_limit:
            raise DegenerateFit(f"{floored} of {k} components hit the eigenvalue floor")

        log_components = _log_components(values, pis, mus, sigmas)
        log_mixture = logsumexp(log_components, axis=1)
        loglik = float(log_mixture.sum())
        history.append(loglik)
        if len(history) > 1 and abs(loglik - history[-2]) < spec.tol * abs(loglik):
            converged = True
            break

        responsibilities = np.exp(log_components - log_mixture[:, None])
        if np.any(responsibilities.sum(axis=0) < 1e-8 * n):
            if repaired:
                raise EmptyCluster("component collapsed twice in one restart")
            repaired = True
            responsibilities = _revive_component(responsibilities, log_mixture)

    theta = ClusterConfiguration.from_arrays(pis, mus, sigmas, spec.method_id)
    labels = np.argmax(log_components, axis=1)
    return theta, labels, history, converged, iterations


def _means_safe(values, labels, k):
    counts = np.bincount(labels, minlength=k)
    centers = np.zeros((k, values.shape[1]))
    for j in range(k):
        centers[j] = values[labels == j].mean(axis=0) if counts[j] else values.mean(axis=0)
    return centers


def _revive_component(responsibilities, log_mixture):
    """Hand the worst-fitted point to each collapsed component"""
    responsibilities = responsibilities.copy()
    order = np.argsort(log_mixture, kind='stable')
    for slot, component in enumerate(np.flatnonzero(responsibilities.sum(axis=0) < 1e-8 * responsibilities.shape[0])):
        point = order[slot]
        responsibilities[point] = 0.0
        responsibilities[point, component] = 1.0
    return responsibilities


# ---------------------------------------------------------------------------
# Driver

def fit(data, spec, rng):
    """
    Best-of-restarts fit of one method.

    Restart r draws from rng.derive('restart', r). Restarts that collapse are
    logged and skipped; if none survives the fit raises DegenerateFit.
    """
    values = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=float)
    n = values.shape[0]
    if spec.k > n:
        raise NotEnoughPoints(f"{spec.method_id}: k={spec.k} exceeds n={n}")

    distances = cdist(values, values) if spec.backend is Backend.KMEDOIDS else None
    floor = eigen_floor(values)
    best = None
    errors = []
    for restart in range(spec.restarts):
        restart_rng = rng.derive('restart', restart)
        try:
            if spec.backend is Backend.GAUSSIAN_EM:
                theta, labels, history, converged, iterations = _gem_once(values, spec, restart_rng, floor)
                candidate = FitResult(spec, theta, Partition(labels, spec.k), history[-1],
                                      count_free_params(spec, values.shape[1]), converged, iterations,
                                      history=tuple(history))
                better = best is None or candidate.loglik > best.loglik
            else:
                if spec.backend is Backend.KMEANS:
                    labels, centers, history, converged, iterations = _kmeans_once(values, spec, restart_rng)
                else:
                    labels, centers, history, converged, iterations = _pam_once(values, spec, restart_rng, distances)
                partition = Partition(labels, spec.k)
                theta = triplets_from_partition(values, partition, Config.TRIPLET_GAMMA, spec.method_id)
                candidate = FitResult(spec, theta, partition, history[-1], spec.k * values.shape[1],
                                      converged, iterations, centers=np.asarray(centers), history=tuple(history))
                better = best is None or candidate.loglik < best.loglik
            validate_configuration(candidate.theta, values.shape[1])
        except (ComputeError, np.linalg.LinAlgError) as e:
            logger.debug(f"{spec.method_id}: restart {restart} failed: {e}")
            errors.append(e)
            continue
        if better:
            best = candidate

    if best is None:
        raise DegenerateFit(f"{spec.method_id}: all {spec.restarts} restarts failed ({errors[-1]})")
    if not best.converged:
        logger.warning(f"{spec.method_id}: stopped after {best.iterations} iterations without converging")
    return best
