"""
Tests de la configuration et des exports
"""

import unittest

import pandas as pd
import pytest

from config.settings import (BENCHMARK_CONFIG_PATH, DEFAULT_CONFIG_PATH, default_config,
                             fingerprint, load_config, save_resolved_config, validate_config)
from src.core.exceptions import ParameterError
from src.core.losses import SigmaPolicy
from src.core.trainer import TrainConfig
from src.utils.exports import config_hash, read_table, render_config, write_json, write_table


class TestLoadConfig:

    def test_default_file_matches_defaults(self):
        assert load_config(DEFAULT_CONFIG_PATH, environ={}) == TrainConfig()

    def test_precedence(self, tmp_path):
        path = tmp_path / 'run.conf'
        path.write_text('lambda_mmd=2.0\nbatch_size=16\n')
        env = {'CONDA_TTA_LAMBDA_MMD': '3.0'}

        assert load_config(path, environ={}).loss_weights.lambda_mmd == 2.0
        assert load_config(path, environ=env).loss_weights.lambda_mmd == 3.0
        cfg = load_config(path, overrides={'lambda_mmd': 4.0}, environ=env)
        assert cfg.loss_weights.lambda_mmd == 4.0
        assert cfg.batch_size == 16

    def test_booleans_and_sigma(self, tmp_path):
        path = tmp_path / 'run.conf'
        path.write_text('use_tta=no\nsigma=1.5\nsymmetrize_contrastive=true\n')
        cfg = load_config(path, environ={})
        assert cfg.use_tta is False
        assert cfg.symmetrize_contrastive is True
        assert cfg.loss_weights.sigma == SigmaPolicy.fixed(1.5)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / 'run.conf'
        path.write_text('lambda_foo=1\n')
        with pytest.raises(ParameterError):
            load_config(path, environ={})

    def test_unknown_env_key(self):
        with pytest.raises(ParameterError):
            load_config(DEFAULT_CONFIG_PATH, environ={'CONDA_TTA_WIDTH': '3'})

    def test_invalid_value(self, tmp_path):
        path = tmp_path / 'run.conf'
        path.write_text('batch_size=large\n')
        with pytest.raises(ParameterError):
            load_config(path, environ={})

    def test_negative_weight(self):
        with pytest.raises(ParameterError):
            load_config(DEFAULT_CONFIG_PATH, overrides={'lambda_ctr': -1.0}, environ={})

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / 'absent.conf', environ={})

    def test_benchmark_widths(self):
        cfg = load_config(BENCHMARK_CONFIG_PATH, environ={})
        assert (cfg.proj_hidden, cfg.proj_dim, cfg.cls_hidden) == (64, 32, 64)
        assert cfg.loss_weights.temperature_t == 0.5

    def test_resolved_config_reloads(self, tmp_path):
        cfg = load_config(BENCHMARK_CONFIG_PATH, overrides={'seed': 9}, environ={})
        path = save_resolved_config(cfg, tmp_path / 'resolved.conf')
        assert load_config(path, environ={}) == cfg
        assert fingerprint(load_config(path, environ={})) == fingerprint(cfg)


class TestValidateConfig(unittest.TestCase):

    def test_defaults_valid(self):
        self.assertTrue(validate_config(default_config()))

    def test_missing_key(self):
        config = default_config()
        del config['seed']
        with self.assertRaises(ParameterError):
            validate_config(config)

    def test_fraction_range(self):
        config = default_config()
        config['target_test_fraction'] = 1.5
        with self.assertRaises(ParameterError):
            validate_config(config)


class TestExports(unittest.TestCase):

    def test_table_round_trip(self):
        import tempfile
        from pathlib import Path

        frame = pd.DataFrame({'name': ['a', 'b'], 'value': [0.1 + 0.2, 1 / 3]})
        with tempfile.TemporaryDirectory() as tmp:
            path = write_table(frame, Path(tmp) / 'table.csv')
            self.assertTrue(read_table(path).equals(frame))

    def test_render_is_sorted(self):
        text = render_config({'b': 1, 'a': True, 'c': 0.5})
        self.assertEqual(text, 'a=true\nb=1\nc=0.5\n')

    def test_hash_ignores_key_order(self):
        self.assertEqual(config_hash({'a': 1, 'b': 2}), config_hash({'b': 2, 'a': 1}))
        self.assertEqual(len(config_hash({'a': 1})), 12)

    def test_json_numpy_values(self):
        import json
        import tempfile
        from pathlib import Path

        import numpy as np

        with tempfile.TemporaryDirectory() as tmp:
            path = write_json({'x': np.float64(0.5), 'v': np.arange(2)}, Path(tmp) / 'd.json')
            self.assertEqual(json.loads(path.read_text()), {'v': [0, 1], 'x': 0.5})


if __name__ == '__main__':
    unittest.main()
