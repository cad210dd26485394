"""Unit tests for the finite-difference gradient checker."""

import unittest

import numpy as np

from fuselab import autodiff as ad
from fuselab.gradcheck import CASES, check_gradients, relative_error, run_gradcheck


class TestRelativeError(unittest.TestCase):

    def test_exact_match(self):
        self.assertEqual(relative_error(np.ones(3), np.ones(3)), 0.0)

    def test_tiny_entries_count_as_exact(self):
        self.assertEqual(relative_error(np.array([1e-9]), np.array([0.0])), 0.0)

    def test_relative_scale(self):
        self.assertAlmostEqual(relative_error(np.array([2.0]), np.array([1.0])), 0.5)


class TestCheckGradients(unittest.TestCase):

    def test_correct_gradient_passes(self):
        rng = np.random.default_rng(0)
        worst = check_gradients(lambda t: ad.tanh(ad.matmul(t[0], t[1])),
                                [rng.normal(size=(3, 2)), rng.normal(size=(2, 4))], rng)
        self.assertLess(worst, 1e-4)

    def test_wrong_gradient_is_caught(self):
        rng = np.random.default_rng(0)

        def detached_square(t):
            # the second factor carries no gradient, so d(x*x) is reported as x instead of 2x
            return t[0] * t[0].detach()

        worst = check_gradients(detached_square, [rng.uniform(0.5, 1.5, size=(4,))], rng)
        self.assertGreater(worst, 0.4)


class TestGradcheckCases(unittest.TestCase):

    def test_every_case_passes(self):
        # at least 100 random draws per differentiable op and layer
        results = run_gradcheck(trials=100)
        self.assertTrue(all(r.trials >= 100 for r in results))
        self.assertEqual([r.name for r in results], sorted(CASES))
        failed = [f"{r.name} ({r.max_rel_error:.2e})" for r in results if not r.passed]
        self.assertEqual(failed, [])

    def test_unknown_case(self):
        with self.assertRaises(KeyError):
            run_gradcheck(["softsign"])


if __name__ == '__main__':
    unittest.main()
