import numpy as np
import pytest

from vns.grid import (
    TorusField,
    TorusGrid,
    grad_linf,
    heat_semigroup,
    l2_norm,
    leray_project,
    read_field,
    sobolev_norm,
    write_field,
)


def field2(grid, fx, fy):
    return TorusField.from_function(grid, lambda x, y: (fx(x, y), fy(x, y)))


class TestTorusGrid:
    def test_rejects_bad_sizes(self):
        for n in (4, 7, 12, 6):
            with pytest.raises(ValueError):
                TorusGrid(2, n)
        with pytest.raises(ValueError):
            TorusGrid(4, 16)

    def test_wavenumber_set(self):
        g = TorusGrid(2, 8)
        k0 = g.wavenumbers[0][:, 0]
        assert sorted(k0.tolist()) == list(range(-3, 5))

    def test_mean_mode_real(self):
        g = TorusGrid(2, 16)
        rng = np.random.default_rng(0)
        f = TorusField(g, rng.normal(size=(1, 16, 16)))
        a0 = f.spectrum()[0, 0, 0]
        assert a0.imag == 0.0
        assert a0.real == pytest.approx(f.values.mean(), abs=1e-15)

    def test_parseval_normalized(self):
        g = TorusGrid(3, 8)
        rng = np.random.default_rng(1)
        f = TorusField(g, rng.normal(size=(3, 8, 8, 8)))
        assert g.mean_square_hat(f.spectrum()) == pytest.approx(np.mean(np.sum(f.values**2, axis=0)), rel=1e-13)


class TestLeray:
    def test_gradient_annihilated(self):
        g = TorusGrid(2, 16)
        v = field2(g, lambda x, y: np.sin(x), lambda x, y: 0 * y)
        assert np.abs(leray_project(v).values).max() < 1e-14

    def test_taylor_green_fixed(self):
        g = TorusGrid(2, 16)
        v = field2(g, lambda x, y: np.sin(x) * np.cos(y), lambda x, y: -np.cos(x) * np.sin(y))
        assert np.abs(leray_project(v).values - v.values).max() < 1e-14

    def test_two_mode_example(self):
        g = TorusGrid(2, 16)
        v = field2(g, lambda x, y: np.sin(x) + np.cos(y), lambda x, y: 0 * y)
        expected = field2(g, lambda x, y: np.cos(y), lambda x, y: 0 * y)
        assert np.abs(leray_project(v).values - expected.values).max() < 1e-14

    def test_mean_preserved_and_divergence_free(self):
        g = TorusGrid(3, 8)
        rng = np.random.default_rng(2)
        v = TorusField(g, rng.normal(size=(3, 8, 8, 8)))
        p = leray_project(v)
        assert np.allclose(p.mean(), v.mean(), atol=1e-15)
        assert p.divergence_max() < 1e-12

    def test_rejects_non_finite(self):
        g = TorusGrid(2, 8)
        vals = np.zeros((2, 8, 8))
        vals[0, 1, 1] = np.nan
        with pytest.raises(ValueError):
            leray_project(TorusField(g, vals))


class TestHeatAndNorms:
    def test_heat_single_modes(self):
        g = TorusGrid(2, 16)
        f = TorusField.from_function(g, lambda x, y: np.cos(x))
        assert np.allclose(heat_semigroup(f, 1.0).values, np.exp(-1.0) * f.values, atol=1e-15)
        f2 = TorusField.from_function(g, lambda x, y: np.cos(2 * x))
        assert np.allclose(heat_semigroup(f2, 0.5).values, np.exp(-2.0) * f2.values, atol=1e-15)

    def test_heat_constant_invariant(self):
        g = TorusGrid(2, 8)
        c = TorusField(g, np.full((1, 8, 8), 3.5))
        assert np.allclose(heat_semigroup(c, 7.0).values, 3.5, atol=1e-14)

    def test_heat_negative_time(self):
        g = TorusGrid(2, 8)
        with pytest.raises(ValueError):
            heat_semigroup(TorusField.zeros(g), -1.0)

    def test_sobolev_examples(self):
        g = TorusGrid(2, 16)
        c1 = TorusField.from_function(g, lambda x, y: np.cos(x))
        assert sobolev_norm(c1, -1.0) == pytest.approx(l2_norm(c1), rel=1e-14)
        c2 = TorusField.from_function(g, lambda x, y: np.cos(2 * x))
        assert sobolev_norm(c2, 1.0) == pytest.approx(2.0 * l2_norm(c2), rel=1e-14)
        const = TorusField(g, np.full((1, 16, 16), 2.0))
        assert sobolev_norm(const, 3.0) == 0.0
        assert sobolev_norm(const, 0.0, homogeneous=False) == pytest.approx(2.0, rel=1e-14)

    def test_grad_linf(self):
        g = TorusGrid(2, 32)
        assert grad_linf(TorusField(g, np.ones((2, 32, 32)))) < 1e-14
        v = field2(g, lambda x, y: np.sin(x), lambda x, y: 0 * y)
        assert grad_linf(v) == pytest.approx(1.0, rel=1e-13)
        assert grad_linf(TorusField(g, -2.5 * v.values)) == pytest.approx(2.5, rel=1e-13)


class TestFieldIO:
    def test_roundtrip(self, tmp_path):
        g = TorusGrid(2, 8)
        rng = np.random.default_rng(3)
        f = TorusField(g, rng.normal(size=(2, 8, 8)))
        path = tmp_path / "f.vnsf"
        write_field(path, f)
        back = read_field(path)
        assert back.grid == g
        assert np.array_equal(back.values, f.values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"XXXX" + bytes(16))
        with pytest.raises(ValueError):
            read_field(path)
