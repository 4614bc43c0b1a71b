import numpy as np
import pytest

from vns.grid import TorusField, TorusGrid
from vns.harness.validate import check_w1_atoms, check_w1_axioms, check_w1_split
from vns.wasserstein import coarse_grain, torus_cost, wasserstein1


def smooth(grid, a, b):
    return TorusField.from_function(grid, lambda x, y: 1.0 + a * np.cos(x) + b * np.sin(x + y))


class TestOracles:
    def test_atom_pairs(self):
        res = check_w1_atoms()
        assert res.passed, res.detail

    def test_split_mass(self):
        res = check_w1_split()
        assert res.passed, res.detail

    def test_metric_axioms(self):
        res = check_w1_axioms(triples=10)
        assert res.passed, res.detail


class TestWasserstein:
    def test_identity(self):
        g = TorusGrid(2, 16)
        mu = smooth(g, 0.3, 0.2)
        assert wasserstein1(mu, mu) == 0.0

    def test_mass_mismatch_rejected(self):
        g = TorusGrid(2, 8)
        with pytest.raises(ValueError):
            wasserstein1(smooth(g, 0.1, 0.0), TorusField(g, 1.1 * np.ones((1, 8, 8))))

    def test_negative_rejected(self):
        g = TorusGrid(2, 8)
        neg = TorusField(g, np.cos(g.coords[0])[None])
        with pytest.raises(ValueError):
            wasserstein1(neg, neg)

    def test_exact_and_entropic_agree(self):
        g = TorusGrid(2, 16)
        mu, nu = smooth(g, 0.3, 0.0), smooth(g, 0.0, 0.4)
        exact = wasserstein1(mu, nu, method="exact")
        approx = wasserstein1(mu, nu, method="sinkhorn")
        assert abs(exact - approx) <= 1e-3

    def test_shift_of_cosine(self):
        # x-only densities reduce to the circle, where W1 = min_c int |F - G - c| dx
        g = TorusGrid(2, 32)
        a, s = 0.5, np.pi / 2
        mu = TorusField.from_function(g, lambda x, y: 1.0 + a * np.cos(x))
        nu = TorusField.from_function(g, lambda x, y: 1.0 + a * np.cos(x - s))
        xs = np.linspace(0, 2 * np.pi, 200001)
        diff = a * (np.sin(xs) - np.sin(xs - s)) - a * (0 - np.sin(-s))
        # the minimizing c is the median of F - G
        c = np.median(diff)
        expected = np.trapezoid(np.abs(diff - c), xs) / (2 * np.pi)
        assert wasserstein1(mu, nu) == pytest.approx(expected, rel=2e-2)

    def test_scales_with_mass(self):
        g = TorusGrid(2, 8)
        mu, nu = smooth(g, 0.3, 0.0), smooth(g, 0.0, 0.4)
        base = wasserstein1(mu, nu)
        doubled = wasserstein1(TorusField(g, 2 * mu.values), TorusField(g, 2 * nu.values))
        assert doubled == pytest.approx(2 * base, rel=1e-10)


class TestHelpers:
    def test_torus_cost_wraps(self):
        a = np.array([[0.1, 0.0]])
        b = np.array([[2 * np.pi - 0.1, 0.0]])
        assert torus_cost(a, b)[0, 0] == pytest.approx(0.2)

    def test_coarse_grain_preserves_mean(self):
        g = TorusGrid(2, 32)
        f = smooth(g, 0.4, 0.3)
        vals, pts = coarse_grain(f, 8)
        assert vals.shape == (8, 8)
        assert pts.shape == (64, 2)
        assert vals.mean() == pytest.approx(f.values.mean(), rel=1e-14)
