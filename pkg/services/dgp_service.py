"""Simulated designs and the population-score experiment on dgpG / dgpU"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import softmax
from scipy.stats import multivariate_t

from services.qscore_service import score_matrix
from services.work_queue import run_indexed, split_failures
from utils.errors import ComputeError, ConfigError
from utils.types import ClusterConfiguration, DataMatrix, ScoreMode

logger = logging.getLogger(__name__)


class Design(str, Enum):
    PENTAGON5 = 'Pentagon5'
    T52D = 'T52D'
    T510D = 'T510D'
    FLOWER2 = 'Flower2'
    UNIFORM = 'Uniform'
    DGP_G = 'dgpG'
    DGP_U = 'dgpU'

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        for design in cls:
            if design.value.lower() == str(name).lower():
                return design
        raise ConfigError(f"unknown design '{name}'")


@dataclass(frozen=True)
class DgpSpec:
    design: Design
    n: int
    d: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'design', Design.parse(self.design))
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.d < 0:
            raise ConfigError(f"d must be >= 0, got {self.d}")


PENTAGON5 = {
    'pi': np.array([0.2, 0.35, 0.35, 0.05, 0.05]),
    'mu': np.array([[0.0, 5.0], [-4.5, -0.5], [4.5, -0.5], [3.0, -2.5], [-3.0, -2.5]]),
}

T52D = {
    'pi': np.array([0.15, 0.4, 0.05, 0.15, 0.25]),
    'df': np.array([10, 12, 14, 16, 18]),
    'mu': np.array([[0.0, 3.0], [7.0, 1.0], [5.0, 9.0], [-11.0, 11.0], [-7.0, 5.0]]),
    'sigma': np.array([
        [[1.0, 0.5], [0.5, 1.0]],
        [[2.0, -1.5], [-1.5, 2.0]],
        [[2.0, 1.3], [1.3, 2.0]],
        [[0.5, 0.0], [0.0, 0.5]],
        [[2.5, 0.0], [0.0, 2.5]],
    ]),
}

T510D_NOISE_DIMS = 8

FLOWER2_DF = 9
FLOWER2_T_MU = np.array([0.0, 5.0])
FLOWER2_T_SIGMA = np.diag([1.0, 10.0])


def rotation(degrees):
    """Counter-clockwise rotation for positive angles; clockwise is rotation(-degrees)"""
    theta = math.radians(degrees)
    return np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])


def _student_t(mu, covariance, df, size, generator):
    """Student-t draws whose covariance (not scatter) equals the given matrix"""
    if size == 0:
        return np.empty((0, len(mu)))
    shape = np.asarray(covariance) * (df - 2) / df
    draws = multivariate_t(loc=mu, shape=shape, df=df).rvs(size=size, random_state=generator)
    return np.asarray(draws).reshape(size, len(mu))


def _component_labels(pis, n, generator):
    return generator.choice(len(pis), size=n, p=pis)


def _sample_pentagon5(n, generator):
    labels = _component_labels(PENTAGON5['pi'], n, generator)
    values = PENTAGON5['mu'][labels] + generator.standard_normal((n, 2))
    return values, labels


def _sample_t52d(n, generator):
    labels = _component_labels(T52D['pi'], n, generator)
    values = np.empty((n, 2))
    for k in range(len(T52D['pi'])):
        members = labels == k
        values[members] = _student_t(T52D['mu'][k], T52D['sigma'][k], T52D['df'][k], int(members.sum()), generator)
    return values, labels


def _sample_t510d(n, generator):
    values, labels = _sample_t52d(n, generator)
    return np.hstack([values, generator.standard_normal((n, T510D_NOISE_DIMS))]), labels


def _sample_flower2(n, generator):
    labels = _component_labels(np.full(5, 0.2), n, generator)
    values = np.empty((n, 2))
    for k, angle in ((0, -45.0), (1, 45.0)):
        members = labels == k
        size = int(members.sum())
        rectangle = np.column_stack([generator.uniform(-1.0, 1.0, size), generator.uniform(1.0, 10.0, size)])
        values[members] = rectangle @ rotation(angle).T
    for k, angle in ((2, -135.0), (3, 135.0)):
        members = labels == k
        draws = _student_t(FLOWER2_T_MU, FLOWER2_T_SIGMA, FLOWER2_DF, int(members.sum()), generator)
        values[members] = draws @ rotation(angle).T
    members = labels == 4
    values[members] = generator.standard_normal((int(members.sum()), 2))
    return values, labels


def _sample_uniform(n, generator):
    return generator.uniform(0.0, 1.0, (n, 2)), np.zeros(n, dtype=int)


def _sample_two_groups(design, n, d, generator):
    labels = generator.integers(0, 2, size=n)
    if design is Design.DGP_G:
        noise = generator.standard_normal((n, 2))
    else:
        noise = generator.uniform(-1.0, 1.0, (n, 2))
    return _shift(noise, labels, d), labels


def _shift(noise, labels, d):
    values = noise.copy()
    values[:, 0] += d * labels
    return values


def sample(spec, rng):
    """n draws from the design with the generating component as label"""
    generator = rng.generator
    design = spec.design
    if design is Design.PENTAGON5:
        values, labels = _sample_pentagon5(spec.n, generator)
    elif design is Design.T52D:
        values, labels = _sample_t52d(spec.n, generator)
    elif design is Design.T510D:
        values, labels = _sample_t510d(spec.n, generator)
    elif design is Design.FLOWER2:
        values, labels = _sample_flower2(spec.n, generator)
    elif design is Design.UNIFORM:
        values, labels = _sample_uniform(spec.n, generator)
    else:
        values, labels = _sample_two_groups(design, spec.n, spec.d, generator)
    return DataMatrix(values, labels)


def true_k(design):
    return {Design.UNIFORM: 1, Design.DGP_G: 2, Design.DGP_U: 2}.get(Design.parse(design), 5)


# ---------------------------------------------------------------------------
# Population scores

def _group_variance(design):
    return 1.0 if design is Design.DGP_G else 1.0 / 3.0


def reference_configurations(design, d):
    """
    One-cluster and two-cluster descriptions of the two-group design at separation d.

    The single cluster takes the mixture mean and covariance in closed form;
    the two clusters take the group means with the group covariance.
    """
    design = Design.parse(design)
    if design not in (Design.DGP_G, Design.DGP_U):
        raise ConfigError(f"reference configurations exist for dgpG and dgpU only, not {design.value}")
    if d < 0:
        raise ConfigError(f"d must be >= 0, got {d}")
    v = _group_variance(design)
    single = ClusterConfiguration.from_arrays(
        [1.0], [[d / 2.0, 0.0]], [np.diag([v + d * d / 4.0, v])], method_id=f'{design.value}-K1')
    pair = ClusterConfiguration.from_arrays(
        [0.5, 0.5], [[0.0, 0.0], [d, 0.0]], [v * np.eye(2), v * np.eye(2)], method_id=f'{design.value}-K2')
    return single, pair


@dataclass(frozen=True)
class PopulationScoreResult:
    d_grid: np.ndarray
    h_k1: np.ndarray
    h_k2: np.ndarray
    t_k1: np.ndarray
    t_k2: np.ndarray
    se_h_k1: np.ndarray
    se_h_k2: np.ndarray
    se_t_k1: np.ndarray
    se_t_k2: np.ndarray
    mode: ScoreMode = ScoreMode.HARD

    @property
    def mc_se(self):
        """Largest standard error among the curves of the requested mode"""
        if self.mode is ScoreMode.HARD:
            return np.maximum(self.se_h_k1, self.se_h_k2)
        return np.maximum(self.se_t_k1, self.se_t_k2)

    def crossing(self, mode):
        """d where the two-cluster curve overtakes the one-cluster curve"""
        mode = ScoreMode(mode)
        if mode is ScoreMode.HARD:
            return locate_crossing(self.d_grid, self.h_k2 - self.h_k1)
        return locate_crossing(self.d_grid, self.t_k2 - self.t_k1)

    def to_frame(self):
        return pd.DataFrame({
            'd': self.d_grid,
            'h_k1': self.h_k1, 'h_k2': self.h_k2, 't_k1': self.t_k1, 't_k2': self.t_k2,
            'se_h_k1': self.se_h_k1, 'se_h_k2': self.se_h_k2,
            'se_t_k1': self.se_t_k1, 'se_t_k2': self.se_t_k2,
        })


def locate_crossing(d_grid, difference) -> Optional[float]:
    """First upward zero of difference, by linear interpolation between grid points"""
    d_grid = np.asarray(d_grid, dtype=float)
    difference = np.asarray(difference, dtype=float)
    for i in range(len(d_grid) - 1):
        left, right = difference[i], difference[i + 1]
        if left == 0.0 and right > 0.0:
            return float(d_grid[i])
        if left < 0.0 <= right:
            return float(d_grid[i] + (d_grid[i + 1] - d_grid[i]) * (-left) / (right - left))
    return None


def _scores(values, theta):
    qs = score_matrix(values, theta)
    return float(np.mean(np.max(qs, axis=1))), float(np.mean(np.sum(softmax(qs, axis=1) * qs, axis=1)))


def population_score_curve(design, d_grid, draws, repeats, mode, rng, workers=None):
    """
    Monte Carlo population hard and smooth scores of both reference configurations.

    Within a repeat the same base draws are shifted for every d; repeats use
    independent draws and give the standard errors.
    """
    design = Design.parse(design)
    d_grid = np.asarray(d_grid, dtype=float)
    if draws < 1000:
        raise ConfigError(f"draws must be >= 1000, got {draws}")
    if repeats < 2:
        raise ConfigError(f"repeats must be >= 2, got {repeats}")
    if d_grid.size == 0:
        raise ConfigError("empty d grid")

    def one_repeat(index):
        generator = rng.derive('repeat', index).generator
        labels = generator.integers(0, 2, size=draws)
        if design is Design.DGP_G:
            noise = generator.standard_normal((draws, 2))
        else:
            noise = generator.uniform(-1.0, 1.0, (draws, 2))
        curves = np.empty((4, d_grid.size))
        for j, d in enumerate(d_grid):
            values = _shift(noise, labels, d)
            single, pair = reference_configurations(design, d)
            curves[0, j], curves[2, j] = _scores(values, single)
            curves[1, j], curves[3, j] = _scores(values, pair)
        return curves

    outcomes = run_indexed(one_repeat, range(repeats), workers)
    _, failed = split_failures(outcomes)
    if failed:
        raise ComputeError(f"population score repeat failed: {failed[0].error}")
    stacked = np.stack(outcomes)
    mean = stacked.mean(axis=0)
    se = stacked.std(axis=0, ddof=1) / math.sqrt(repeats)
    logger.info(f"{design.value}: population scores on {d_grid.size} grid points, {repeats} x {draws} draws")
    return PopulationScoreResult(d_grid, mean[0], mean[1], mean[2], mean[3],
                                 se[0], se[1], se[2], se[3], ScoreMode(mode))
