"""
Tests de l'interface en ligne de commande
"""

import json

import pytest

from config.settings import BENCHMARK_CONFIG_PATH
from src.cli import build_parser, main
from src.core.checkpoint import load_checkpoint
from src.utils.exports import read_table


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / 'data'
    assert main(['generate', '--out', str(out), '--per-domain', '60', '--dim', '4']) == 0
    return out / 'embeddings.jsonl'


def train_args(dataset, out, *extra):
    return ['train', '--data', str(dataset), '--source-domains', 'domain_0,domain_1',
            '--target-domains', 'domain_2', '--config', str(BENCHMARK_CONFIG_PATH),
            '--epochs', '2', '--batch-size', '32', '--out', str(out), *extra]


class TestParser:

    def test_help(self):
        assert main(['--help']) == 0

    def test_missing_domains(self, tmp_path):
        assert main(['train', '--data', str(tmp_path / 'x.jsonl'), '--target-domains', 'b']) == 2

    def test_unknown_command(self):
        assert main(['fit']) == 2

    def test_benchmark_defaults_to_small_widths(self):
        args = build_parser().parse_args(['benchmark'])
        assert args.config.endswith('benchmark.conf')
        assert args.seeds == [0, 1, 2, 3, 4]


class TestCommands:

    def test_gradcheck(self, tmp_path):
        assert main(['gradcheck', '--seed', '7', '--out', str(tmp_path)]) == 0
        report = json.loads((tmp_path / 'gradcheck.json').read_text())
        assert report['passed'] is True
        assert report['seed'] == 7

    def test_generate_is_reproducible(self, tmp_path):
        for name in ('a', 'b'):
            assert main(['generate', '--out', str(tmp_path / name), '--per-domain', '20',
                         '--dim', '4', '--seed', '3']) == 0
        assert ((tmp_path / 'a' / 'embeddings.jsonl').read_bytes()
                == (tmp_path / 'b' / 'embeddings.jsonl').read_bytes())

    def test_train_outputs(self, dataset, tmp_path):
        out = tmp_path / 'run'
        assert main(train_args(dataset, out)) == 0
        for name in ('checkpoint.json', 'checkpoint_tta.json', 'trace.csv', 'trace.json',
                     'metrics.json', 'projection2d.csv', 'resolved_config.conf'):
            assert (out / name).exists(), name

        metrics = json.loads((out / 'metrics.json').read_text())
        assert metrics['tta_applied'] is True
        assert metrics['metadata']['config']['max_epochs'] == 2
        assert len(read_table(out / 'trace.csv')) == 2

    def test_train_then_tta_then_evaluate(self, dataset, tmp_path):
        out = tmp_path / 'run'
        assert main(train_args(dataset, out, '--no-tta')) == 0
        assert not (out / 'checkpoint_tta.json').exists()

        common = ['--data', str(dataset), '--source-domains', 'domain_0,domain_1',
                  '--target-domains', 'domain_2', '--config', str(BENCHMARK_CONFIG_PATH)]
        adapted = tmp_path / 'adapted'
        assert main(['tta', '--checkpoint', str(out / 'checkpoint.json'), '--out', str(adapted),
                     *common]) == 0
        model = load_checkpoint(adapted / 'checkpoint_tta.json')
        assert model.mode == 'eval'

        evaluated = tmp_path / 'eval'
        assert main(['evaluate', '--checkpoint', str(adapted / 'checkpoint_tta.json'),
                     '--out', str(evaluated), *common]) == 0
        assert 'accuracy' in json.loads((evaluated / 'metrics.json').read_text())

    def test_train_is_byte_reproducible(self, dataset, tmp_path):
        for name in ('a', 'b'):
            assert main(train_args(dataset, tmp_path / name)) == 0
        for name in ('checkpoint.json', 'checkpoint_tta.json', 'metrics.json', 'trace.csv'):
            assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes(), name

    def test_empty_source_pool_fails(self, dataset, tmp_path):
        target_only = tmp_path / 'target_only.jsonl'
        lines = [line for line in dataset.read_text(encoding='utf-8').splitlines()
                 if line.strip() and json.loads(line)['domain'] == 'domain_2']
        target_only.write_text('\n'.join(lines) + '\n', encoding='utf-8')
        assert main(train_args(target_only, tmp_path / 'run')) == 1

    def test_unknown_domain_fails(self, dataset, tmp_path):
        args = train_args(dataset, tmp_path / 'run')
        args[args.index('domain_2')] = 'domain_9'
        assert main(args) == 1

    def test_missing_data_file(self, tmp_path):
        assert main(train_args(tmp_path / 'absent.jsonl', tmp_path / 'run')) == 1

    def test_bad_config_key(self, dataset, tmp_path):
        conf = tmp_path / 'bad.conf'
        conf.write_text('width=3\n')
        args = train_args(dataset, tmp_path / 'run')
        args[args.index(str(BENCHMARK_CONFIG_PATH))] = str(conf)
        assert main(args) == 1
