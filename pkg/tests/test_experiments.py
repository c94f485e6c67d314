"""
Tests du pipeline complet, de l'ablation, des balayages et du benchmark
"""

from dataclasses import replace

import numpy as np
import pytest

from config.settings import BENCHMARK_CONFIG_PATH, load_config
from src.core.exceptions import DataError, ParameterError
from src.core.experiments import (DEFAULT_GRID, ablation_configs, domain_gap, run_ablation,
                                  run_benchmark, run_pipeline, run_sensitivity, upper_bound_data)
from src.core.model import EVAL
from src.data.embeddings import DomainPartition, PartitionResult, partition
from src.data.synthetic import SyntheticSpec, generate_synthetic


class TestRunPipeline:

    def test_full_run(self, fast_config, small_partition):
        result = run_pipeline(fast_config, small_partition)
        assert result.trace.tta_applied
        assert result.model.mode == EVAL
        assert result.model is not result.trained
        assert 0.0 <= result.report.accuracy <= 1.0
        assert result.report.total == len(small_partition.target_test)

    def test_tta_only_changes_estimates(self, fast_config, small_partition):
        result = run_pipeline(fast_config, small_partition)
        for name, param in result.trained.parameters().items():
            assert result.model.parameters()[name].tobytes() == param.tobytes()
        assert not np.array_equal(result.model.bn1.running_mean, result.trained.bn1.running_mean)

    def test_without_tta(self, fast_config, small_partition):
        result = run_pipeline(replace(fast_config, use_tta=False), small_partition)
        assert not result.trace.tta_applied
        assert result.model is result.trained

    def test_reproducible(self, fast_config, small_partition):
        a = run_pipeline(fast_config, small_partition)
        b = run_pipeline(fast_config, small_partition)
        assert a.report.to_dict() == b.report.to_dict()

    def test_empty_source_pool(self, fast_config, small_partition):
        data = PartitionResult(source=[], target_train=small_partition.target_train,
                               target_test=small_partition.target_test)
        with pytest.raises(DataError):
            run_pipeline(fast_config, data)


class TestAblation:

    def test_configurations(self, small_config):
        configs = ablation_configs(small_config)
        assert list(configs) == ['full', 'w/o contrastive', 'w/o MMD', 'w/o TTA']
        assert configs['w/o contrastive'].loss_weights.lambda_ctr == 0.0
        assert configs['w/o MMD'].loss_weights.lambda_mmd == 0.0
        assert configs['w/o TTA'].use_tta is False
        assert len({c.seed for c in configs.values()}) == 1

    def test_table(self, fast_config, small_partition):
        table = run_ablation(fast_config, small_partition)
        assert list(table['config']) == ['full', 'w/o contrastive', 'w/o MMD', 'w/o TTA']
        assert list(table.columns) == ['config', 'f1', 'accuracy', 'tta_applied', 'n_seeds']
        flags = dict(zip(table['config'], table['tta_applied']))
        assert flags == {'full': True, 'w/o contrastive': True, 'w/o MMD': True, 'w/o TTA': False}
        assert set(table['n_seeds']) == {1}

    def test_full_row_matches_pipeline(self, fast_config, small_partition):
        table = run_ablation(fast_config, small_partition)
        result = run_pipeline(fast_config, small_partition)
        assert table.loc[table['config'] == 'full', 'accuracy'].item() == result.report.accuracy


class TestSensitivity:

    def test_single_point_equals_plain_run(self, fast_config, small_partition):
        value = fast_config.loss_weights.lambda_mmd
        table = run_sensitivity(fast_config, small_partition, {'lambda_mmd': [value]})
        result = run_pipeline(fast_config, small_partition)
        assert len(table) == 1
        assert table['accuracy'].item() == result.report.accuracy
        assert table['f1'].item() == result.report.f1

    def test_grid_order_does_not_change_points(self, fast_config, small_partition):
        a = run_sensitivity(fast_config, small_partition, {'lambda_ctr': [0.1, 2.0]})
        b = run_sensitivity(fast_config, small_partition, {'lambda_ctr': [2.0, 0.1]})
        a = a.sort_values('value').reset_index(drop=True)
        b = b.sort_values('value').reset_index(drop=True)
        assert a.equals(b)

    def test_tta_batch_axis(self, fast_config, small_partition):
        table = run_sensitivity(fast_config, small_partition, {'tta_batch_size': [8, 20]})
        assert list(table['parameter']) == ['tta_batch_size'] * 2
        assert list(table['value']) == [8.0, 20.0]

    def test_unknown_parameter(self, fast_config, small_partition):
        with pytest.raises(ParameterError):
            run_sensitivity(fast_config, small_partition, {'dropout': [0.1]})


class TestUpperBound:

    def test_labeled_target_added(self, small_records, small_partition):
        data = upper_bound_data(small_records, small_partition)
        assert len(data.source) == len(small_partition.source) + len(small_partition.target_train)
        assert all(r.label is not None for r in data.source)
        test_ids = {r.id for r in data.target_test}
        assert not test_ids & {r.id for r in data.source}

    def test_domain_gap_keys(self, fast_config, small_partition):
        result = run_pipeline(fast_config, small_partition)
        gap = domain_gap(result.model, small_partition, seed=0)
        assert set(gap) == {'mmd_x', 'mmd_z', 'var_x_target', 'var_z_target'}
        assert all(v >= 0.0 for v in gap.values())


class TestBenchmark:

    def test_small_benchmark_rows(self, fast_config):
        spec = SyntheticSpec(n_domains=3, n_per_domain=60, dim=6, shift=2.0)
        table = run_benchmark(spec, fast_config, seeds=[0, 1])
        assert list(table['seed']) == [0, 1]
        for column in ('source_only', 'full', 'upper_bound', 'mmd_x', 'mmd_z', 'negative_transfer'):
            assert column in table.columns
        assert table['negative_transfer'].tolist() == list(table['full'] < table['source_only'])


ACCEPTANCE_SPEC = SyntheticSpec(n_domains=3, n_per_domain=2000, dim=32, shift=2.0)
ACCEPTANCE_JOBS = 5


@pytest.fixture(scope='module')
def benchmark_config():
    return load_config(BENCHMARK_CONFIG_PATH, environ={})


@pytest.fixture(scope='module')
def benchmark_table(benchmark_config):
    return run_benchmark(ACCEPTANCE_SPEC, benchmark_config, seeds=[0, 1, 2, 3, 4],
                         n_jobs=ACCEPTANCE_JOBS)


@pytest.fixture(scope='module')
def benchmark_partition(benchmark_config):
    records = generate_synthetic(ACCEPTANCE_SPEC)
    return partition(records, DomainPartition.from_strings('domain_0,domain_1', 'domain_2'),
                     benchmark_config.target_test_fraction, 0)


@pytest.mark.slow
class TestAcceptance:
    """Benchmark synthétique à l'échelle: 3 domaines, d=32, 2000 points, shift 2.0"""

    def test_gap_closing(self, benchmark_table):
        assert benchmark_table['full'].mean() >= benchmark_table['source_only'].mean() + 0.02
        assert benchmark_table['full'].mean() <= benchmark_table['upper_bound'].mean()

    def test_domain_invariance(self, benchmark_table):
        assert (benchmark_table['mmd_z'] <= 0.5 * benchmark_table['mmd_x']).all()
        assert (benchmark_table['var_z_target'] < benchmark_table['var_x_target']).sum() >= 4

    def test_ablation_ordering(self, benchmark_config, benchmark_partition):
        table = run_ablation(benchmark_config, benchmark_partition, seeds=[0, 1, 2, 3, 4],
                             n_jobs=ACCEPTANCE_JOBS).set_index('config')
        for name in ('w/o contrastive', 'w/o MMD', 'w/o TTA'):
            assert table.loc['full', 'accuracy'] >= table.loc[name, 'accuracy']

    def test_sensitivity_is_flat(self, benchmark_config, benchmark_partition):
        table = run_sensitivity(benchmark_config, benchmark_partition, n_jobs=ACCEPTANCE_JOBS)
        assert len(table) == sum(len(v) for v in DEFAULT_GRID.values()) == 12
        spread = table.groupby('parameter')['accuracy'].agg(lambda a: a.max() - a.min())
        assert set(spread.index) == set(DEFAULT_GRID)
        assert (spread < 0.15).all()
