"""
Tests de l'optimiseur Adam
"""

import unittest

import numpy as np

from src.core.adam import AdamState, adam_step
from src.core.exceptions import ParameterError, ShapeError


class TestAdamStep(unittest.TestCase):
    """Tests pour adam_step"""

    def test_zero_gradient_keeps_parameters(self):
        params = {'w': np.array([1.0, -2.0, 3.0])}
        opt = AdamState(lr=0.1)
        for _ in range(5):
            adam_step(opt, params, {'w': np.zeros(3)})
        np.testing.assert_array_equal(params['w'], [1.0, -2.0, 3.0])

    def test_first_step_oracle(self):
        """Test un pas sur w² depuis w=1 (moments corrigés du biais)"""
        params = {'w': np.array([1.0])}
        opt = AdamState(lr=0.1)
        adam_step(opt, params, {'w': 2.0 * params['w']})

        g = 2.0
        m_hat = (1 - 0.9) * g / (1 - 0.9)
        v_hat = (1 - 0.999) * g * g / (1 - 0.999)
        expected = 1.0 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
        self.assertAlmostEqual(params['w'][0], expected, places=12)
        self.assertEqual(opt.step_count, 1)

    def test_updates_in_place(self):
        w = np.array([[0.5, 0.5]])
        params = {'w': w}
        adam_step(AdamState(lr=0.01), params, {'w': np.ones((1, 2))})
        self.assertIs(params['w'], w)
        self.assertTrue(np.all(w < 0.5))

    def test_converges_on_quadratic(self):
        """Test minimisation de (w-3)²"""
        params = {'w': np.array([0.0])}
        opt = AdamState(lr=0.05)
        for _ in range(500):
            adam_step(opt, params, {'w': 2.0 * (params['w'] - 3.0)})
        self.assertLess(abs(params['w'][0] - 3.0), 0.05)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            adam_step(AdamState(), {'w': np.zeros(3)}, {'w': np.zeros(2)})

    def test_missing_gradient(self):
        with self.assertRaises(ShapeError):
            adam_step(AdamState(), {'w': np.zeros(3)}, {})

    def test_invalid_learning_rate(self):
        with self.assertRaises(ParameterError):
            AdamState(lr=0.0)
        with self.assertRaises(ParameterError):
            adam_step(AdamState(), {'w': np.zeros(1)}, {'w': np.zeros(1)}, lr=-1.0)


if __name__ == '__main__':
    unittest.main()
