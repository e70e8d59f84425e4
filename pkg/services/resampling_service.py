"""Bootstrap and cross-validated quadratic scoring, and the selection rule"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from config import Config
from services import backend_service
from services.qscore_service import sample_score
from services.work_queue import run_indexed, split_failures
from utils.errors import ComputeError, FoldTooSmall, NoApplicableMethod, TooManyFailures
from utils.types import DataMatrix, ScoreMode

logger = logging.getLogger(__name__)


def _values(data):
    return data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=float)


def in_sample_score(data, theta, mode):
    """QH / QS value of a configuration on the sample"""
    return sample_score(data, theta, mode)


# ---------------------------------------------------------------------------
# Bootstrap

@dataclass(frozen=True)
class BootstrapScore:
    """Replicate scores (NaN where the refit failed) and their percentile summary"""
    replicate_scores: np.ndarray
    w_tilde: float
    lower: float
    upper: float
    alpha: float
    failures: int
    n: int

    @property
    def b(self):
        return self.replicate_scores.shape[0]

    def head(self, b):
        """Summary restricted to the first b replicates"""
        return summarize_bootstrap(self.replicate_scores[:b], self.n, self.alpha)


def summarize_bootstrap(replicate_scores, n, alpha):
    """
    Mean and percentile bounds on the score scale.

    With R = sqrt(n) (S - mean), lower = mean + q_{alpha/2}(R) / sqrt(n) and
    upper = mean + q_{1-alpha/2}(R) / sqrt(n), where q is the left-continuous
    empirical quantile inf{x : F(x) >= level}.
    """
    scores = np.asarray(replicate_scores, dtype=float)
    finite = scores[np.isfinite(scores)]
    failures = int(scores.size - finite.size)
    if finite.size == 0:
        raise TooManyFailures("every bootstrap refit failed", failures, scores.size)
    w_tilde = float(np.mean(finite))
    root_n = math.sqrt(n)
    roots = root_n * (finite - w_tilde)
    lower = w_tilde + float(np.quantile(roots, alpha / 2, method='inverted_cdf')) / root_n
    upper = w_tilde + float(np.quantile(roots, 1 - alpha / 2, method='inverted_cdf')) / root_n
    return BootstrapScore(scores, w_tilde, lower, upper, alpha, failures, n)


def bootstrap_indices(n, replicate, rng):
    """Row indices of replicate b; shared by every method in the menu"""
    return rng.derive('bootstrap', replicate).generator.integers(0, n, size=n)


REFIT_ERRORS = (ComputeError, np.linalg.LinAlgError)


def refit_outcomes(outcomes):
    """Successful outcomes and failed refits; any other failure is raised"""
    ok, failed = split_failures(outcomes)
    for failure in failed:
        if not isinstance(failure.error, REFIT_ERRORS):
            raise failure.error
    return ok, failed


def check_failures(failures, attempts, what):
    if failures > Config.MAX_FAILURE_RATE * attempts:
        raise TooManyFailures(f"{what}: {failures} of {attempts} refits failed", failures, attempts)
    if failures:
        logger.warning(f"{what}: {failures} of {attempts} refits failed and were skipped")


def bootstrap_scores(data, spec, b, alpha, rng, modes=(ScoreMode.HARD, ScoreMode.SMOOTH),
                     fitter=None, workers=None):
    """
    Refit on b bootstrap samples and score every refit on the original sample.

    One refit serves all requested modes. Returns {mode: BootstrapScore};
    raises TooManyFailures when more than the allowed share of refits fail.
    """
    fitter = fitter or backend_service.fit
    values = _values(data)
    n = values.shape[0]
    modes = [ScoreMode(mode) for mode in modes]

    def replicate(index):
        rows = bootstrap_indices(n, index, rng)
        result = fitter(values[rows], spec, rng.derive('fit', index, spec.method_id))
        return [sample_score(values, result.theta, mode) for mode in modes]

    ok, failed = refit_outcomes(run_indexed(replicate, range(b), workers))
    failed_rows = {failure.index for failure in failed}
    scores = np.full((b, len(modes)), np.nan)
    if ok:
        scores[[index for index in range(b) if index not in failed_rows]] = ok

    failures = int(np.sum(~np.isfinite(scores[:, 0])))
    check_failures(failures, b, f"{spec.method_id} bootstrap")
    logger.info(f"{spec.method_id}: {b - failures} bootstrap replicates scored")
    return {mode: summarize_bootstrap(scores[:, j], n, alpha) for j, mode in enumerate(modes)}


def bootstrap_score(data, spec, mode, b, alpha, rng, fitter=None, workers=None):
    """BQH / BQS summary for one method"""
    if b < 2:
        raise ComputeError(f"bootstrap needs b >= 2, got {b}")
    if not 0 < alpha < 1:
        raise ComputeError(f"alpha must be in (0, 1), got {alpha}")
    mode = ScoreMode(mode)
    return bootstrap_scores(data, spec, b, alpha, rng, (mode,), fitter, workers)[mode]


# ---------------------------------------------------------------------------
# Cross-validation

@dataclass(frozen=True)
class CvScore:
    fold_scores: np.ndarray
    mean: float
    sd: float
    adjusted: float
    delta: float


@dataclass
class FoldFit:
    train: np.ndarray
    test: np.ndarray
    result: Optional[object] = None
    error: Optional[Exception] = None


def fold_assignment(n, folds, rng):
    """Held-out index sets of a random near-equal split, shared by every method"""
    if not 2 <= folds <= n:
        raise FoldTooSmall(f"cannot split n={n} points into {folds} folds")
    permutation = rng.derive('folds').generator.permutation(n)
    return [np.sort(part) for part in np.array_split(permutation, folds)]


def run_folds(data, spec, folds, rng, fitter=None, workers=None):
    """Fit the method on every training complement; failures are kept per fold"""
    fitter = fitter or backend_service.fit
    values = _values(data)
    n = values.shape[0]
    tests = fold_assignment(n, folds, rng)
    smallest_train = n - max(len(test) for test in tests)
    if smallest_train < spec.k:
        raise FoldTooSmall(f"{spec.method_id}: training fold of {smallest_train} points is smaller than k={spec.k}")

    splits = []
    for test in tests:
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        splits.append(FoldFit(np.flatnonzero(mask), test))

    def fit_fold(index):
        split = splits[index]
        return fitter(values[split.train], spec, rng.derive('fold-fit', index, spec.method_id))

    outcomes = run_indexed(fit_fold, range(folds), workers)
    _, failed = refit_outcomes(outcomes)
    for failure in failed:
        splits[failure.index].error = failure.error
    for split, outcome in zip(splits, outcomes):
        if split.error is None:
            split.result = outcome

    failures = sum(split.result is None for split in splits)
    check_failures(failures, folds, f"{spec.method_id} cross-validation")
    return splits


def summarize_cv(fold_scores, delta):
    """Mean, sample sd and the mean penalized by delta standard errors"""
    scores = np.asarray(fold_scores, dtype=float)
    mean = float(np.mean(scores))
    sd = float(np.std(scores, ddof=1)) if scores.size > 1 else 0.0
    return CvScore(scores, mean, sd, mean - delta * sd / math.sqrt(scores.size), delta)


def cv_scores_from_folds(data, splits, delta, modes=(ScoreMode.HARD, ScoreMode.SMOOTH)):
    values = _values(data)
    summaries = {}
    for mode in modes:
        mode = ScoreMode(mode)
        scores = [sample_score(values[split.test], split.result.theta, mode)
                  for split in splits if split.result is not None]
        summaries[mode] = summarize_cv(scores, delta)
    return summaries


def cv_score(data, spec, mode, folds, delta, rng, fitter=None, workers=None):
    """CVQH / CVQS summary for one method"""
    mode = ScoreMode(mode)
    splits = run_folds(data, spec, folds, rng, fitter, workers)
    return cv_scores_from_folds(data, splits, delta, (mode,))[mode]


# ---------------------------------------------------------------------------
# Selection

def tied_best(values):
    """Method ids sharing the maximal value, in menu order"""
    applicable = [(method_id, value) for method_id, value in values.items()
                  if value is not None and np.isfinite(value)]
    if not applicable:
        return []
    best = max(value for _, value in applicable)
    return [method_id for method_id, value in applicable if value == best]


def select(values, criterion, rng):
    """
    Argmax of a criterion over the applicable methods.

    values maps method id to the criterion value (None when not applicable).
    Exact ties are broken by a uniform draw from the criterion's own stream.
    """
    tied = tied_best(values)
    if not tied:
        raise NoApplicableMethod(f"no method has an applicable {criterion} value")
    if len(tied) == 1:
        return tied[0]
    choice = tied[int(rng.derive('select', str(criterion)).generator.integers(len(tied)))]
    logger.info(f"{criterion}: {len(tied)} methods tied, drew {choice}")
    return choice


@dataclass
class SelectionReport:
    """Per-method criterion values plus the winner of every criterion"""
    rows: List[Dict] = field(default_factory=list)
    selected: Dict[str, str] = field(default_factory=dict)
    ties: Dict[str, List[str]] = field(default_factory=dict)

    def values(self, criterion):
        return {row['method_id']: row['criteria'].get(criterion) for row in self.rows}

    def select_all(self, criteria, rng):
        for criterion in criteria:
            values = self.values(criterion)
            tied = tied_best(values)
            try:
                self.selected[criterion] = select(values, criterion, rng)
            except NoApplicableMethod:
                logger.warning(f"{criterion}: no applicable method")
                continue
            if len(tied) > 1:
                self.ties[criterion] = tied
        return self.selected
