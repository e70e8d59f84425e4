"""Experiment configuration, menu evaluation and report output"""
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from config import Config
from services import backend_service, criteria_service, dgp_service, metrics_service, resampling_service
from services.backend_service import MethodSpec
from utils.data_io import FLOAT_FORMAT, load_csv, standardize
from utils.errors import ComputeError, ConfigError, DegenerateScatter, NotApplicable, TooManyFailures
from utils.rng import SeededRng
from utils.types import Backend, Criterion, CovarianceModel, Init, Partition, ScoreMode
from utils.validators import validate_nonnegative, validate_positive_int, validate_probability

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Named configurations: smooth (gamma = 1) and crisp (gamma = 1e6) VVV mixtures with K = 3
MENU_ALIASES = {
    'gm-s': {'backend': 'gem', 'k': 3, 'models': ['VVV'], 'gamma': [1.0]},
    'gm-c': {'backend': 'gem', 'k': 3, 'models': ['VVV'], 'gamma': [1e6]},
}


# ---------------------------------------------------------------------------
# Configuration

@dataclass
class ExperimentConfig:
    seed: int
    menu: List[MethodSpec]
    criteria: List[Criterion]
    csv_path: Optional[str] = None
    label_column: Optional[str] = None
    design: Optional[dgp_service.DgpSpec] = None
    monte_carlo_reps: int = 1
    b: int = Config.B
    b_subset: int = Config.B_SUBSET
    alpha: float = Config.ALPHA
    folds: int = Config.FOLDS
    delta: float = Config.DELTA
    fw_b: int = Config.FW_B
    output_dir: str = Config.OUTPUT_DIR
    standardize: bool = False
    raw_menu: list = field(default_factory=list, repr=False)

    def to_dict(self):
        data = {'csv': self.csv_path, 'label_column': self.label_column} if self.csv_path else {
            'design': self.design.design.value, 'n': self.design.n, 'd': self.design.d,
            'monte_carlo_reps': self.monte_carlo_reps,
        }
        return {
            'schema_version': SCHEMA_VERSION,
            'seed': self.seed,
            'data': data,
            'menu': self.raw_menu,
            'criteria': [criterion.value for criterion in self.criteria],
            'b': self.b,
            'b_subset': self.b_subset,
            'alpha': self.alpha,
            'folds': self.folds,
            'delta': self.delta,
            'fw_b': self.fw_b,
            'output_dir': self.output_dir,
            'standardize': self.standardize,
        }


def _parse_gamma(value):
    if value is None or (isinstance(value, str) and value.lower() in ('inf', 'infinity')):
        return math.inf
    try:
        gamma = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"gamma must be a number, 'inf' or null, got {value!r}")
    if not gamma >= 1:
        raise ConfigError(f"gamma must be >= 1, got {gamma}")
    return gamma


def _parse_ks(value):
    if isinstance(value, dict):
        try:
            low, high = int(value['min']), int(value['max'])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"k range needs integer 'min' and 'max', got {value!r}")
        if low < 1 or high < low:
            raise ConfigError(f"invalid k range {low}..{high}")
        return list(range(low, high + 1))
    values = value if isinstance(value, list) else [value]
    return [validate_positive_int('k', k) for k in values]


def _as_list(value, default):
    if value is None:
        return list(default)
    return value if isinstance(value, list) else [value]


def expand_menu(entries):
    """Expand menu entries (k ranges, model and gamma lists, aliases) into MethodSpecs"""
    if not isinstance(entries, list) or not entries:
        raise ConfigError("menu must be a non-empty list")
    specs = []
    for entry in entries:
        if isinstance(entry, str):
            if entry not in MENU_ALIASES:
                raise ConfigError(f"unknown menu alias '{entry}'")
            entry = MENU_ALIASES[entry]
        if not isinstance(entry, dict) or 'backend' not in entry or 'k' not in entry:
            raise ConfigError(f"menu entry needs 'backend' and 'k': {entry!r}")
        try:
            backend = Backend(entry['backend'])
        except ValueError:
            raise ConfigError(f"unknown backend '{entry['backend']}'")

        ks = _parse_ks(entry['k'])
        inits = [_parse_init(init) for init in _as_list(entry.get('init'), [Init.KMEANS_PLUS_PLUS])]
        restarts = validate_positive_int('restarts', entry.get('restarts', Config.RESTARTS))
        max_iter = validate_positive_int('max_iter', entry.get('max_iter', Config.EM_MAX_ITER))
        tol = float(entry.get('tol', Config.EM_TOL))
        if backend is Backend.GAUSSIAN_EM:
            models = [backend_service.parse_covariance_model(m)
                      for m in _as_list(entry.get('models', entry.get('covariance_model')), [CovarianceModel.VVV])]
            gammas = [_parse_gamma(g) for g in _as_list(entry.get('gamma'), [None])]
        else:
            models, gammas = [CovarianceModel.VVV], [math.inf]

        for model in models:
            for gamma in gammas:
                for init in inits:
                    for k in ks:
                        specs.append(MethodSpec(backend, k, model, gamma, init, restarts, max_iter, tol))

    seen = set()
    unique = []
    for spec in specs:
        if spec.method_id not in seen:
            seen.add(spec.method_id)
            unique.append(spec)
    return unique


def _parse_init(value):
    try:
        return Init(value)
    except ValueError:
        raise ConfigError(f"unknown init '{value}'")


def parse_config(document, overrides=None):
    """
    Validate a schema_version 1 experiment document and build an ExperimentConfig.

    overrides (command-line values) replace document entries when not None.
    """
    if not isinstance(document, dict):
        raise ConfigError("config must be a JSON object")
    document = dict(document)
    for key, value in (overrides or {}).items():
        if value is not None:
            document[key] = value

    if document.get('schema_version') != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {document.get('schema_version')!r}, expected {SCHEMA_VERSION}")
    if document.get('seed') is None:
        raise ConfigError("seed is required")
    seed = validate_positive_int('seed', document['seed'], minimum=0)

    criteria_names = document.get('criteria')
    if not isinstance(criteria_names, list) or not criteria_names:
        raise ConfigError("criteria must be a non-empty list")
    try:
        criteria = [Criterion(str(name).upper()) for name in criteria_names]
    except ValueError as e:
        raise ConfigError(f"unknown criterion: {e}")

    raw_menu = document.get('menu')
    menu = expand_menu(raw_menu)

    data = document.get('data')
    if not isinstance(data, dict):
        raise ConfigError("data must be an object with 'csv' or 'design'")
    config = ExperimentConfig(seed=seed, menu=menu, criteria=criteria, raw_menu=raw_menu)
    if data.get('csv'):
        config.csv_path = str(data['csv'])
        config.label_column = data.get('label_column')
    elif data.get('design'):
        config.design = dgp_service.DgpSpec(data['design'], validate_positive_int('n', data.get('n', 300)),
                                            validate_nonnegative('d', data.get('d', 0.0)))
        config.monte_carlo_reps = validate_positive_int('monte_carlo_reps', data.get('monte_carlo_reps', 1))
    else:
        raise ConfigError("data needs either 'csv' or 'design'")

    default_b = Config.B if config.csv_path else Config.B_SIMULATION
    config.b = validate_positive_int('b', document.get('b', default_b), minimum=2)
    config.b_subset = validate_positive_int('b_subset', document.get('b_subset', Config.B_SUBSET), minimum=2)
    config.alpha = validate_probability('alpha', document.get('alpha', Config.ALPHA))
    config.folds = validate_positive_int('folds', document.get('folds', Config.FOLDS), minimum=2)
    config.delta = validate_nonnegative('delta', document.get('delta', Config.DELTA))
    config.fw_b = validate_positive_int('fw_b', document.get('fw_b', Config.FW_B))
    config.output_dir = str(document.get('output_dir', Config.OUTPUT_DIR))
    config.standardize = bool(document.get('standardize', False))
    return config


def load_config(path, overrides=None):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding='utf-8') as handle:
            document = json.load(handle)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})")
    return parse_config(document, overrides)


# ---------------------------------------------------------------------------
# Menu evaluation

RESAMPLING_SKIPS = (NotApplicable, DegenerateScatter, TooManyFailures, ComputeError, np.linalg.LinAlgError)


def _wants(criteria, *names):
    return any(Criterion(name) in criteria for name in names)


def evaluate_method(data, spec, config, rng, workers=None, fitter=None):
    """Criterion values and resampling summaries of one menu method"""
    row = {
        'method_id': spec.method_id, 'backend': spec.backend.value, 'k': spec.k,
        'covariance_model': spec.covariance_model.value if spec.is_likelihood else '',
        'gamma': spec.gamma if spec.is_likelihood else math.nan, 'init': spec.init.value,
        'criteria': {}, 'bands': {}, 'replicates': {},
    }
    criteria = config.criteria
    values = row['criteria']
    try:
        full_rng = rng.derive('full', spec.method_id)
        fit = fitter(data.values, spec, full_rng) if fitter else backend_service.fit(data, spec, full_rng)
    except ComputeError as e:
        logger.warning(f"{spec.method_id}: full-sample fit failed ({e}); all criteria not applicable")
        row['error'] = str(e)
        return row, None

    values[Criterion.QH.value] = resampling_service.in_sample_score(data, fit.theta, ScoreMode.HARD)
    values[Criterion.QS.value] = resampling_service.in_sample_score(data, fit.theta, ScoreMode.SMOOTH)

    def attempt(name, compute):
        try:
            values[name] = compute()
        except RESAMPLING_SKIPS as e:
            logger.info(f"{spec.method_id}: {name} not available ({e})")
            values[name] = None

    if _wants(criteria, 'AIC', 'BIC'):
        try:
            values['AIC'], values['BIC'] = criteria_service.aic_bic(fit, data.n)
        except NotApplicable:
            values['AIC'] = values['BIC'] = None
    if _wants(criteria, 'ICL'):
        attempt('ICL', lambda: criteria_service.icl(fit, data))
    if _wants(criteria, 'CH'):
        attempt('CH', lambda: criteria_service.calinski_harabasz(data, fit.partition))
    if _wants(criteria, 'ASW'):
        attempt('ASW', lambda: criteria_service.average_silhouette_width(data, fit.partition))
    if _wants(criteria, 'FW'):
        attempt('FW', lambda: criteria_service.fw_stability(data, spec, config.fw_b, rng, fitter, workers))

    if _wants(criteria, 'CVQH', 'CVQS', 'CVLK'):
        try:
            splits = resampling_service.run_folds(data, spec, config.folds, rng, fitter, workers)
            cv = resampling_service.cv_scores_from_folds(data, splits, config.delta)
            for name, mode in (('CVQH', ScoreMode.HARD), ('CVQS', ScoreMode.SMOOTH)):
                values[name] = cv[mode].adjusted
                row['bands'][name] = {'mean': cv[mode].mean, 'sd': cv[mode].sd}
            values['CVLK'] = criteria_service.cvlk_from_folds(data, splits) if spec.is_likelihood else None
        except RESAMPLING_SKIPS as e:
            logger.info(f"{spec.method_id}: cross-validation not available ({e})")
            values['CVQH'] = values['CVQS'] = values['CVLK'] = None

    if _wants(criteria, 'BQH', 'BQS'):
        try:
            boot = resampling_service.bootstrap_scores(data, spec, config.b, config.alpha, rng,
                                                       fitter=fitter, workers=workers)
            for name, mode in (('BQH', ScoreMode.HARD), ('BQS', ScoreMode.SMOOTH)):
                summary = boot[mode]
                values[name] = summary.lower
                row['bands'][name] = {'w_tilde': summary.w_tilde, 'lower': summary.lower, 'upper': summary.upper,
                                      'failures': summary.failures}
                row['replicates'][name] = summary.replicate_scores
                if config.b > config.b_subset:
                    try:
                        values[f'{name}@{config.b_subset}'] = summary.head(config.b_subset).lower
                    except TooManyFailures:
                        values[f'{name}@{config.b_subset}'] = None
        except RESAMPLING_SKIPS as e:
            logger.warning(f"{spec.method_id}: disqualified from bootstrap scoring ({e})")
            values['BQH'] = values['BQS'] = None

    if data.labels is not None:
        truth = Partition.from_labels(data.labels)
        row['ari'] = metrics_service.adjusted_rand_index(truth, fit.partition)
        row['neg_vic'] = metrics_service.negative_vic(truth, fit.partition)
    return row, fit


def evaluate_menu(data, config, rng, workers=None, fitter=None):
    """Evaluate every menu method and select one per criterion"""
    report = resampling_service.SelectionReport()
    for spec in config.menu:
        row, _ = evaluate_method(data, spec, config, rng, workers, fitter)
        report.rows.append(row)
        logger.info(f"Evaluated {spec.method_id}")

    selection_keys = [criterion.value for criterion in config.criteria]
    for name in ('BQH', 'BQS'):
        if name in selection_keys and config.b > config.b_subset:
            selection_keys.append(f'{name}@{config.b_subset}')
    report.select_all(selection_keys, rng)

    if data.labels is not None:
        for metric in ('ari', 'neg_vic'):
            best = resampling_service.tied_best({row['method_id']: row.get(metric) for row in report.rows})
            for row in report.rows:
                row[f'best_{metric}'] = row['method_id'] in best
    for criterion, method_id in report.selected.items():
        logger.info(f"{criterion}: selected {method_id}")
    return report


# ---------------------------------------------------------------------------
# Reports

def _row_frame(report, criteria_keys):
    records = []
    for row in report.rows:
        record = {key: row[key] for key in ('method_id', 'backend', 'k', 'covariance_model', 'gamma', 'init')}
        for key in criteria_keys:
            value = row['criteria'].get(key)
            record[key] = math.nan if value is None else value
        for key in criteria_keys:
            record[f'selected_{key}'] = report.selected.get(key) == row['method_id']
        for key in ('ari', 'neg_vic', 'best_ari', 'best_neg_vic'):
            if key in row:
                record[key] = row[key]
        records.append(record)
    return pd.DataFrame.from_records(records)


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        return None if not math.isfinite(float(value)) else float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _curve_frame(report):
    """Score-curve rows ordered by backend, covariance model, gamma, init and K"""
    records = []
    for row in report.rows:
        bands = row['bands']
        record = {
            'method_id': row['method_id'], 'backend': row['backend'], 'covariance_model': row['covariance_model'],
            'gamma': row['gamma'], 'init': row['init'], 'k': row['k'],
            'qh': row['criteria'].get('QH'), 'qs': row['criteria'].get('QS'),
        }
        for name in ('BQH', 'BQS'):
            band = bands.get(name, {})
            record[f'{name.lower()}_w'] = band.get('w_tilde')
            record[f'{name.lower()}_lower'] = band.get('lower')
            record[f'{name.lower()}_upper'] = band.get('upper')
        for name in ('CVQH', 'CVQS'):
            band = bands.get(name, {})
            record[f'{name.lower()}_mean'] = band.get('mean')
            record[f'{name.lower()}_adjusted'] = row['criteria'].get(name)
        records.append(record)
    frame = pd.DataFrame.from_records(records)
    if frame.empty:
        return frame
    return frame.sort_values(['backend', 'covariance_model', 'gamma', 'init', 'k'], kind='stable',
                             na_position='last').reset_index(drop=True)


def write_selection_report(report, config, out_dir, verbose=False):
    """report.csv, report.json, score_curve.csv and curves/<method_id>.csv"""
    os.makedirs(os.path.join(out_dir, 'curves'), exist_ok=True)
    keys = list(report.selected.keys()) or [c.value for c in config.criteria]
    keys = [c.value for c in config.criteria] + [k for k in keys if k not in {c.value for c in config.criteria}]
    _row_frame(report, keys).to_csv(os.path.join(out_dir, 'report.csv'), index=False, float_format=FLOAT_FORMAT)

    curves = _curve_frame(report)
    curves.to_csv(os.path.join(out_dir, 'score_curve.csv'), index=False, float_format=FLOAT_FORMAT)
    for _, record in curves.iterrows():
        record.to_frame().T.to_csv(os.path.join(out_dir, 'curves', f"{record['method_id']}.csv"),
                                   index=False, float_format=FLOAT_FORMAT)

    rows = []
    for row in report.rows:
        entry = {key: value for key, value in row.items() if key != 'replicates'}
        if verbose:
            entry['replicates'] = row['replicates']
        rows.append(entry)
    document = {
        'config': config.to_dict(),
        'rows': rows,
        'selected': report.selected,
        'ties': report.ties,
    }
    with open(os.path.join(out_dir, 'report.json'), 'w', encoding='utf-8') as handle:
        json.dump(_json_safe(document), handle, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Commands

def _row_by_id(report, method_id):
    return next(row for row in report.rows if row['method_id'] == method_id)


def cmd_select(config, workers=None, verbose=False, fitter=None):
    """Fit the whole menu on a CSV data set, select per criterion and write the reports"""
    if not config.csv_path:
        raise ConfigError("select needs a 'csv' data source")
    data = load_csv(config.csv_path, config.label_column)
    if config.standardize:
        data = standardize(data)
    rng = SeededRng(config.seed)
    report = evaluate_menu(data, config, rng, workers, fitter)
    write_selection_report(report, config, config.output_dir, verbose)
    return report


@dataclass
class SimulationSummary:
    replicates: pd.DataFrame
    aggregate: pd.DataFrame
    reports: List[resampling_service.SelectionReport] = field(default_factory=list, repr=False)


def _aggregate(replicates, expected_k):
    records = []
    for criterion, group in replicates.groupby('criterion', sort=False):
        ks = group['k'].dropna().astype(int)
        counts = ks.value_counts()
        modal_k = int(min(counts[counts == counts.max()].index)) if len(counts) else None
        record = {
            'criterion': criterion,
            'modal_k': modal_k,
            'modal_k_frequency': float(counts.max() / len(group)) if len(counts) else 0.0,
            'true_k': expected_k,
            'true_k_frequency': float(counts.get(expected_k, 0) / len(group)),
            'reps': len(group),
        }
        for metric in ('ari', 'neg_vic'):
            column = group[metric].dropna().to_numpy(dtype=float)
            record[f'{metric}_mean'] = float(column.mean()) if column.size else math.nan
            record[f'{metric}_sd'] = float(column.std(ddof=1)) if column.size > 1 else 0.0
        records.append(record)
    return pd.DataFrame.from_records(records)


def cmd_simulate(config, workers=None, verbose=False, fitter=None):
    """Repeat sample -> select over Monte Carlo replicates and aggregate the selections"""
    if config.design is None:
        raise ConfigError("simulate needs a 'design' data source")
    root = SeededRng(config.seed)
    out_dir = config.output_dir
    os.makedirs(os.path.join(out_dir, 'mc'), exist_ok=True)

    expected_k = dgp_service.true_k(config.design.design)
    logger.info(f"Simulating {config.design.design.value}: true K = {expected_k}, {config.monte_carlo_reps} replicates")
    rows = []
    reports = []
    for replicate in range(config.monte_carlo_reps):
        data = dgp_service.sample(config.design, root.derive('sample', replicate))
        if config.standardize:
            data = standardize(data)
        report = evaluate_menu(data, config, root.derive('replicate', replicate), workers, fitter)
        reports.append(report)
        replicate_rows = []
        for criterion, method_id in report.selected.items():
            chosen = _row_by_id(report, method_id)
            replicate_rows.append({
                'replicate': replicate, 'criterion': criterion, 'method_id': method_id, 'k': chosen['k'],
                'ari': chosen.get('ari'), 'neg_vic': chosen.get('neg_vic'),
            })
        pd.DataFrame.from_records(replicate_rows).to_csv(
            os.path.join(out_dir, 'mc', f'replicate_{replicate}.csv'), index=False, float_format=FLOAT_FORMAT)
        rows.extend(replicate_rows)
        logger.info(f"Monte Carlo replicate {replicate + 1}/{config.monte_carlo_reps} done")

    replicates = pd.DataFrame.from_records(rows, columns=['replicate', 'criterion', 'method_id', 'k', 'ari', 'neg_vic'])
    aggregate = _aggregate(replicates, expected_k)
    aggregate.to_csv(os.path.join(out_dir, 'report.csv'), index=False, float_format=FLOAT_FORMAT)
    document = {'config': config.to_dict(), 'aggregate': aggregate.to_dict(orient='records')}
    if verbose:
        document['replicates'] = replicates.to_dict(orient='records')
    with open(os.path.join(out_dir, 'report.json'), 'w', encoding='utf-8') as handle:
        json.dump(_json_safe(document), handle, indent=2, sort_keys=True)
    return SimulationSummary(replicates, aggregate, reports)


def d_grid(d_min, d_max, step):
    if step <= 0:
        raise ConfigError(f"step must be > 0, got {step}")
    if d_min < 0 or d_min > d_max:
        raise ConfigError(f"invalid d range [{d_min}, {d_max}]")
    count = int(math.floor((d_max - d_min) / step + 1e-9)) + 1
    return np.round(d_min + step * np.arange(count), 10)


def cmd_population_curve(design, d_min, d_max, step, draws, repeats, seed, out_dir, workers=None):
    """Write the population-score curves of dgpG/dgpU and return them with the crossings"""
    grid = d_grid(d_min, d_max, step)
    result = dgp_service.population_score_curve(design, grid, draws, repeats, ScoreMode.HARD,
                                                SeededRng(seed), workers)
    gap = float(np.max(np.abs(result.h_k1 - result.t_k1)))
    if gap > 1e-9 * max(1.0, float(np.max(np.abs(result.h_k1)))):
        raise ComputeError(f"one-cluster hard and smooth scores differ by {gap:.3e}")
    os.makedirs(out_dir, exist_ok=True)
    result.to_frame().to_csv(os.path.join(out_dir, 'score_curve.csv'), index=False, float_format=FLOAT_FORMAT)
    crossings = {mode.value: result.crossing(mode) for mode in ScoreMode}
    return result, crossings
