#!/usr/bin/env python3
"""
Tests for experiment configs, menu evaluation, report output and the command line
"""
import sys
import os
import dataclasses
import json
import math

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pandas as pd
import pytest

import app
from services import backend_service, dgp_service
from services.dgp_service import Design
from services.experiment_service import (
    MENU_ALIASES, cmd_population_curve, cmd_select, cmd_simulate, d_grid, expand_menu, load_config, parse_config,
)
from utils.errors import ComputeError, ConfigError, DataError, UnsupportedModel
from utils.types import Backend, CovarianceModel, Criterion, DataMatrix

ALL_CRITERIA = [criterion.value for criterion in Criterion]


def write_blobs(tmp_path, seed=0, n=60):
    generator = np.random.default_rng(seed)
    labels = np.repeat([0, 1], n // 2)
    values = np.array([[-4.0, 0.0], [4.0, 0.0]])[labels] + 0.6 * generator.standard_normal((n, 2))
    path = tmp_path / 'blobs.csv'
    frame = pd.DataFrame(values, columns=['x', 'y'])
    frame['species'] = labels
    frame.to_csv(path, index=False)
    return str(path)


def document(csv_path, out_dir, menu=None, criteria=None, **extra):
    config = {
        'schema_version': 1,
        'seed': 7,
        'data': {'csv': csv_path, 'label_column': 'species'},
        'menu': menu or [{'backend': 'kmeans', 'k': {'min': 1, 'max': 3}}],
        'criteria': criteria or ['QH', 'QS'],
        'b': 10,
        'folds': 5,
        'fw_b': 3,
        'output_dir': out_dir,
    }
    config.update(extra)
    return config


class TestConfigParsing:
    def test_defaults_filled(self):
        config = parse_config(document('x.csv', 'out'))
        assert config.seed == 7
        assert [spec.method_id for spec in config.menu] == ['kmeans-kmpp-K1', 'kmeans-kmpp-K2', 'kmeans-kmpp-K3']
        assert config.criteria == [Criterion.QH, Criterion.QS]
        assert config.alpha == 0.05 and config.delta == 1.96

    def test_overrides_replace_document_values(self):
        config = parse_config(document('x.csv', 'out'), {'seed': 99, 'b': None, 'output_dir': 'elsewhere'})
        assert config.seed == 99
        assert config.b == 10
        assert config.output_dir == 'elsewhere'

    def test_menu_expansion(self):
        specs = expand_menu([{'backend': 'gem', 'k': [1, 2], 'models': ['EII', 'VVV'], 'gamma': ['inf', 10]}])
        assert len(specs) == 8
        assert specs[0].method_id == 'gem-EII-ginf-kmpp-K1'
        assert {spec.covariance_model for spec in specs} == {CovarianceModel.EII, CovarianceModel.VVV}
        assert {spec.gamma for spec in specs} == {math.inf, 10.0}

    def test_duplicates_dropped(self):
        specs = expand_menu([{'backend': 'kmeans', 'k': 2}, {'backend': 'kmeans', 'k': [2, 3]}])
        assert [spec.k for spec in specs] == [2, 3]

    def test_aliases(self):
        smooth, crisp = expand_menu(['gm-s', 'gm-c'])
        assert smooth.method_id == 'gem-VVV-g1-kmpp-K3'
        assert crisp.gamma == 1e6
        assert set(MENU_ALIASES) == {'gm-s', 'gm-c'}

    def test_non_likelihood_backends_ignore_models(self):
        (spec,) = expand_menu([{'backend': 'kmedoids', 'k': 2, 'init': 'pam'}])
        assert spec.backend is Backend.KMEDOIDS
        assert spec.method_id == 'kmedoids-pam-K2'

    @pytest.mark.parametrize('change, message', [
        ({'schema_version': 2}, 'schema_version'),
        ({'seed': None}, 'seed'),
        ({'criteria': ['QH', 'XYZ']}, 'criterion'),
        ({'criteria': []}, 'criteria'),
        ({'menu': []}, 'menu'),
        ({'menu': ['gm-x']}, 'alias'),
        ({'menu': [{'backend': 'dbscan', 'k': 2}]}, 'backend'),
        ({'menu': [{'backend': 'gem', 'k': 2, 'gamma': 0.5}]}, 'gamma'),
        ({'menu': [{'backend': 'gem', 'k': {'min': 3, 'max': 2}}]}, 'k range'),
        ({'data': {}}, 'csv'),
        ({'alpha': 1.5}, 'alpha'),
        ({'folds': 1}, 'folds'),
    ])
    def test_schema_faults(self, change, message):
        config = document('x.csv', 'out')
        config.update(change)
        with pytest.raises(ConfigError, match=message):
            parse_config(config)

    def test_excluded_covariance_model(self):
        with pytest.raises(UnsupportedModel):
            expand_menu([{'backend': 'gem', 'k': 2, 'models': ['VEV']}])

    def test_design_source(self):
        config = document(None, 'out')
        config['data'] = {'design': 'dgpG', 'n': 100, 'd': 3.0, 'monte_carlo_reps': 4}
        parsed = parse_config(config)
        assert parsed.design.n == 100 and parsed.design.d == 3.0
        assert parsed.monte_carlo_reps == 4

    def test_load_config_faults(self, tmp_path):
        with pytest.raises(ConfigError, match='not found'):
            load_config(str(tmp_path / 'missing.json'))
        broken = tmp_path / 'broken.json'
        broken.write_text('{"seed": ', encoding='utf-8')
        with pytest.raises(ConfigError, match='invalid JSON'):
            load_config(str(broken))


class TestSelect:
    def test_single_method_wins_every_criterion(self, tmp_path):
        csv_path = write_blobs(tmp_path)
        menu = [{'backend': 'gem', 'k': 2, 'models': ['VVV'], 'restarts': 2}]
        config = parse_config(document(csv_path, str(tmp_path / 'out'), menu, ALL_CRITERIA))
        report = cmd_select(config, workers=1)
        assert report.selected == {name: 'gem-VVV-ginf-kmpp-K2' for name in ALL_CRITERIA}
        assert report.rows[0]['ari'] == 1.0

    def test_missing_csv(self, tmp_path):
        config = parse_config(document(str(tmp_path / 'nope.csv'), str(tmp_path / 'out')))
        with pytest.raises(DataError, match='file not found'):
            cmd_select(config, workers=1)

    def test_requires_a_csv_source(self):
        config = parse_config(document(None, 'out', data={'design': 'Uniform', 'n': 50}))
        with pytest.raises(ConfigError):
            cmd_select(config)

    def test_report_files(self, tmp_path):
        csv_path = write_blobs(tmp_path)
        out_dir = tmp_path / 'out'
        config = parse_config(document(csv_path, str(out_dir), criteria=['QH', 'QS', 'BQH', 'BQS', 'CVQH', 'CH']))
        report = cmd_select(config, workers=2)

        frame = pd.read_csv(out_dir / 'report.csv')
        assert list(frame['method_id']) == ['kmeans-kmpp-K1', 'kmeans-kmpp-K2', 'kmeans-kmpp-K3']
        assert frame['selected_QH'].sum() == 1
        # CH is undefined for a single cluster
        assert math.isnan(frame.loc[0, 'CH'])
        for method_id in frame['method_id']:
            assert (out_dir / 'curves' / f'{method_id}.csv').is_file()
        curve = pd.read_csv(out_dir / 'score_curve.csv')
        assert list(curve['k']) == [1, 2, 3]
        assert (curve['bqh_lower'] <= curve['bqh_upper']).all()

        saved = json.loads((out_dir / 'report.json').read_text(encoding='utf-8'))
        assert saved['selected'] == report.selected
        assert 'replicates' not in saved['rows'][0]
        assert report.selected['CH'] == 'kmeans-kmpp-K2'

    def test_report_config_round_trips(self, tmp_path):
        csv_path = write_blobs(tmp_path)
        config = parse_config(document(csv_path, str(tmp_path / 'out'), menu=['gm-s'], criteria=['QS']))
        cmd_select(config, workers=1)
        saved = json.loads((tmp_path / 'out' / 'report.json').read_text(encoding='utf-8'))
        reparsed = parse_config(saved['config'])
        assert [spec.method_id for spec in reparsed.menu] == [spec.method_id for spec in config.menu]
        assert reparsed.seed == config.seed and reparsed.b == config.b

    def test_full_fits_not_retained_between_runs(self, tmp_path, monkeypatch):
        real = backend_service.fit
        full_fits = []

        def counting(data, spec, rng):
            if isinstance(data, DataMatrix):
                full_fits.append(spec.method_id)
            return real(data, spec, rng)

        monkeypatch.setattr(backend_service, 'fit', counting)
        csv_path = write_blobs(tmp_path)
        config = parse_config(document(csv_path, str(tmp_path / 'out')))
        first = cmd_select(config, workers=1)
        second = cmd_select(config, workers=1)
        assert full_fits == ['kmeans-kmpp-K1', 'kmeans-kmpp-K2', 'kmeans-kmpp-K3'] * 2
        assert first.selected == second.selected

    def test_byte_identical_across_worker_counts(self, tmp_path):
        csv_path = write_blobs(tmp_path, seed=3)
        menu = [{'backend': 'kmeans', 'k': {'min': 1, 'max': 3}},
                {'backend': 'gem', 'k': [1, 2], 'models': ['EII', 'VVV'], 'restarts': 2}]
        criteria = ['QH', 'QS', 'BQH', 'BQS', 'CVQH', 'CVQS', 'AIC', 'BIC', 'CH']
        outputs = []
        for workers in (1, 4):
            out_dir = tmp_path / f'out{workers}'
            cmd_select(parse_config(document(csv_path, str(out_dir), menu, criteria)), workers=workers)
            outputs.append((out_dir / 'report.csv').read_bytes())
        assert outputs[0] == outputs[1]

    def test_verbose_report_keeps_replicates(self, tmp_path):
        csv_path = write_blobs(tmp_path)
        out_dir = tmp_path / 'out'
        config = parse_config(document(csv_path, str(out_dir), menu=[{'backend': 'kmeans', 'k': 2}], criteria=['BQH']))
        cmd_select(config, workers=1, verbose=True)
        saved = json.loads((out_dir / 'report.json').read_text(encoding='utf-8'))
        assert len(saved['rows'][0]['replicates']['BQH']) == 10


class TestSimulate:
    def test_single_replicate_aggregate(self, tmp_path):
        out_dir = tmp_path / 'sim'
        config = parse_config(document(None, str(out_dir), criteria=['QH', 'BQS'],
                                       data={'design': 'Pentagon5', 'n': 80, 'monte_carlo_reps': 1}))
        summary = cmd_simulate(config, workers=1)

        assert (out_dir / 'mc' / 'replicate_0.csv').is_file()
        assert set(summary.aggregate['criterion']) == {'QH', 'BQS'}
        for _, record in summary.aggregate.iterrows():
            chosen = summary.replicates[summary.replicates['criterion'] == record['criterion']].iloc[0]
            assert record['modal_k'] == chosen['k']
            assert record['modal_k_frequency'] == 1.0
            assert record['reps'] == 1
            assert record['true_k'] == 5
            assert record['true_k_frequency'] == float(chosen['k'] == 5)
            assert record['ari_mean'] == pytest.approx(chosen['ari'])
            assert record['ari_sd'] == 0.0

    def test_replicates_differ(self, tmp_path):
        config = parse_config(document(None, str(tmp_path / 'sim'), criteria=['QH'],
                                       data={'design': 'Uniform', 'n': 40, 'monte_carlo_reps': 2}))
        summary = cmd_simulate(config, workers=1)
        assert len(summary.replicates) == 2
        assert len(summary.reports) == 2
        assert summary.aggregate.loc[0, 'reps'] == 2
        assert summary.aggregate.loc[0, 'true_k'] == 1

    def test_requires_a_design(self, tmp_path):
        with pytest.raises(ConfigError):
            cmd_simulate(parse_config(document('x.csv', str(tmp_path))))


class TestPopulationCurveCommand:
    def test_d_grid(self):
        np.testing.assert_allclose(d_grid(0.0, 1.0, 0.25), [0.0, 0.25, 0.5, 0.75, 1.0])
        assert d_grid(2.0, 2.0, 0.1).tolist() == [2.0]
        with pytest.raises(ConfigError):
            d_grid(3.0, 2.0, 0.1)
        with pytest.raises(ConfigError):
            d_grid(0.0, 1.0, 0.0)

    def test_writes_curve(self, tmp_path):
        result, crossings = cmd_population_curve('dgpG', 1.0, 5.0, 1.0, 20000, 2, 3, str(tmp_path), workers=1)
        frame = pd.read_csv(tmp_path / 'score_curve.csv')
        assert frame['d'].tolist() == [1.0, 2.0, 3.0, 4.0, 5.0]
        assert set(crossings) == {'hard', 'smooth'}
        assert 3.0 <= crossings['hard'] <= 4.0
        np.testing.assert_allclose(frame['h_k1'], result.h_k1, rtol=1e-9)
        np.testing.assert_array_equal(result.h_k1, result.t_k1)

    def test_diverging_single_cluster_scores_rejected(self, tmp_path, monkeypatch):
        real = dgp_service.population_score_curve

        def skewed(*args, **kwargs):
            result = real(*args, **kwargs)
            return dataclasses.replace(result, t_k1=result.t_k1 - 1e-3)

        monkeypatch.setattr(dgp_service, 'population_score_curve', skewed)
        with pytest.raises(ComputeError, match='one-cluster'):
            cmd_population_curve('dgpU', 1.0, 2.0, 1.0, 1000, 2, 3, str(tmp_path), workers=1)
        assert not (tmp_path / 'score_curve.csv').exists()

    def test_accepts_design_members(self, tmp_path):
        _, crossings = cmd_population_curve(Design.DGP_U, 1.0, 3.0, 0.5, 2000, 2, 4, str(tmp_path), workers=1)
        assert crossings['hard'] is not None and 1.0 < crossings['hard'] < 3.0


class TestCommandLine:
    def test_select_exit_codes(self, tmp_path, capsys):
        csv_path = write_blobs(tmp_path)
        config_path = tmp_path / 'config.json'
        config_path.write_text(json.dumps(document(csv_path, str(tmp_path / 'out'))), encoding='utf-8')
        assert app.main(['select', '--config', str(config_path), '--workers', '1']) == 0
        assert 'kmeans-kmpp-K' in capsys.readouterr().out

        missing = tmp_path / 'missing.json'
        missing.write_text(json.dumps(document(str(tmp_path / 'nope.csv'), str(tmp_path / 'out'))), encoding='utf-8')
        assert app.main(['select', '--config', str(missing)]) == 3

    def test_config_errors(self, tmp_path):
        assert app.main(['select', '--config', str(tmp_path / 'absent.json')]) == 2
        assert app.main(['select']) == 2

    def test_empty_population_range(self, tmp_path):
        code = app.main(['population-curve', '--seed', '1', '--d-min', '4', '--d-max', '3', '--out', str(tmp_path)])
        assert code == 2

    def test_population_curve_prints_crossings(self, tmp_path, capsys):
        code = app.main(['population-curve', '--design', 'dgpU', '--seed', '1', '--d-min', '1', '--d-max', '3',
                         '--step', '0.5', '--draws', '1000', '--repeats', '2', '--out', str(tmp_path),
                         '--workers', '1'])
        assert code == 0
        assert 'dgpU hard crossing' in capsys.readouterr().out

    def test_metrics(self, tmp_path, capsys):
        a = tmp_path / 'a.csv'
        b = tmp_path / 'b.csv'
        a.write_text('label\n0\n0\n1\n1\n', encoding='utf-8')
        b.write_text('label\n5\n5\n2\n2\n', encoding='utf-8')
        assert app.main(['metrics', str(a), str(b)]) == 0
        out = capsys.readouterr().out
        assert 'ARI  1.000000' in out
        assert '-VIC ' in out


@pytest.mark.slow
class TestScaledReproductions:
    def test_uniform_square(self, tmp_path):
        config = parse_config(document(
            None, str(tmp_path), menu=[{'backend': 'gem', 'k': {'min': 1, 'max': 10}, 'models': ['VVV']}],
            criteria=['BQS', 'BQH'], b=50, data={'design': 'Uniform', 'n': 200, 'monte_carlo_reps': 20}))
        aggregate = cmd_simulate(config).aggregate.set_index('criterion')
        assert aggregate.loc['BQS', 'modal_k'] == 1
        assert aggregate.loc['BQS', 'modal_k_frequency'] >= 0.8
        assert aggregate.loc['BQH', 'modal_k'] >= 9

    def test_iris(self, tmp_path):
        from sklearn.datasets import load_iris

        iris = load_iris(as_frame=True).frame.rename(columns={'target': 'species'})
        csv_path = tmp_path / 'iris.csv'
        iris.to_csv(csv_path, index=False)
        menu = [{'backend': 'gem', 'k': {'min': 1, 'max': 5}, 'models': ['EEE', 'VVV'], 'gamma': [1, 10, 100, 10000]}]
        config = parse_config(document(str(csv_path), str(tmp_path / 'out'), menu, ['BQS'], b=1000, b_subset=100))
        report = cmd_select(config)
        chosen = next(row for row in report.rows if row['method_id'] == report.selected['BQS'])
        assert chosen['k'] == 3
        assert chosen['ari'] >= 0.85
        assert chosen['neg_vic'] >= -0.45
        subset = next(row for row in report.rows if row['method_id'] == report.selected['BQS@100'])
        assert subset['k'] == 3

    def test_t52d(self, tmp_path):
        config = parse_config(document(
            None, str(tmp_path), menu=[{'backend': 'gem', 'k': {'min': 1, 'max': 7}, 'models': ['VVV']}],
            criteria=['BQS'], b=50, data={'design': 'T52D', 'n': 500, 'monte_carlo_reps': 20}))
        aggregate = cmd_simulate(config).aggregate.set_index('criterion')
        assert aggregate.loc['BQS', 'modal_k'] == 5
        assert aggregate.loc['BQS', 'ari_mean'] >= 0.9


    def test_pentagon5(self, tmp_path):
        config = parse_config(document(
            None, str(tmp_path), menu=[{'backend': 'gem', 'k': {'min': 1, 'max': 6}, 'models': ['VVV']}],
            criteria=['BQS'], b=50, data={'design': 'Pentagon5', 'n': 500, 'monte_carlo_reps': 20}))
        aggregate = cmd_simulate(config).aggregate.set_index('criterion')
        assert aggregate.loc['BQS', 'modal_k'] == 3
        assert 0.75 <= aggregate.loc['BQS', 'ari_mean'] <= 0.95
