import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from manybohm.grid_field import GridError, GridSpec, ScalarField, total_integral
from manybohm.wavefunction import (
    DensityModel,
    Orbital,
    OrbitalError,
    _canonical_det,
    conditional_function,
    m_particle_density,
    marginal_function,
    one_particle_density,
    overlap,
)

from .oracles import gaussian_orbital, quad

BOX = ((-6.0, 6.0),)


def gauss(c, w=1.0, box=BOX):
    return Orbital("gaussian", center=(c,), width=w, box=box)


@pytest.fixture(scope="module")
def slater():
    return DensityModel((gauss(-1.0), gauss(1.0, 0.8)), N=2, box=BOX)


@pytest.fixture(scope="module")
def grid101():
    return GridSpec.uniform(-6, 6, 101, d=1, M=2)


class TestOrbital:
    def test_missing_width(self):
        with pytest.raises(OrbitalError, match="missing width"):
            Orbital("gaussian", center=(0.0,))

    def test_unknown_kind(self):
        with pytest.raises(OrbitalError, match="unknown orbital kind"):
            Orbital("sto", center=(0.0,), width=1.0)

    def test_normalization_checked_on_box(self):
        with pytest.raises(OrbitalError, match="not normalized"):
            Orbital("gaussian", center=(0.0,), width=1.0, box=((-1.0, 1.0),))

    @pytest.mark.parametrize(
        "orb",
        [
            Orbital("gaussian", center=(0.3, -0.2), width=0.7),
            Orbital("harmonic", center=(0.0,), width=1.2, index=(3,)),
            Orbital("harmonic", center=(0.1, 0.0), width=0.9, index=(1, 2)),
            Orbital("exponential", center=(0.0,), decay=1.5),
            Orbital("plane_wave", index=(2,), box=((0.0, 3.0),)),
            Orbital("uniform", box=((0.0, 2.0), (-1.0, 1.0))),
        ],
        ids=["gauss2d", "harm1d", "harm2d", "exp1d", "plane", "uniform"],
    )
    def test_kinds_normalized(self, orb):
        box = orb.box or tuple((c - 12.0, c + 12.0) for c in orb.center)
        assert orb.norm_on_box(box) == pytest.approx(1.0, abs=1e-8)

    def test_exponential_3d_normalized(self):
        orb = Orbital("exponential", center=(0.0, 0.0, 0.0), decay=2.0)
        assert orb.norm_on_box(((-12, 12),) * 3) == pytest.approx(1.0, abs=1e-6)

    def test_gaussian_closed_form(self):
        x = np.linspace(-3, 3, 13)
        o = Orbital("gaussian", center=(0.5,), width=1.3)
        assert np.allclose(o(x[:, None]), gaussian_orbital(x, 0.5, 1.3), rtol=1e-14)

    @pytest.mark.parametrize(
        "orb",
        [
            Orbital("gaussian", center=(0.3, -0.2), width=0.7),
            Orbital("harmonic", center=(0.0, 0.2), width=1.1, index=(2, 1)),
            Orbital("exponential", center=(0.0, 0.0), decay=1.3),
            Orbital("plane_wave", index=(1, 2), box=((0.0, 3.0), (0.0, 2.0))),
        ],
    )
    def test_analytic_derivatives(self, orb):
        x = np.array([[0.41, 0.73], [1.1, 0.35], [0.6, 1.4]])
        h = 1e-4
        eye = np.eye(2) * h
        num_grad = np.stack([(orb(x + e) - orb(x - e)) / (2 * h) for e in eye], axis=-1)
        num_lap = sum((orb(x + e) - 2 * orb(x) + orb(x - e)) / h**2 for e in eye)
        assert np.allclose(orb.gradient(x), num_grad, atol=1e-7)
        assert np.allclose(orb.laplacian(x), num_lap, atol=1e-5)

    def test_overlap_orthogonal(self):
        box = ((-10.0, 10.0),)
        a = Orbital("harmonic", center=(0.0,), width=1.0, index=(0,))
        b = Orbital("harmonic", center=(0.0,), width=1.0, index=(1,))
        assert abs(overlap(a, b, box)) < 1e-12


class TestAmplitude:
    def test_swap_negates_exactly(self, slater):
        x = np.array([[0.3], [-1.7]])
        assert slater.amplitude(x[::-1]) == -slater.amplitude(x)

    def test_identical_orbitals_vanish(self):
        with pytest.raises(OrbitalError, match="distinct"):
            DensityModel((gauss(0.0), gauss(0.0)), N=2, box=BOX)
        o = gauss(0.0)
        pts = np.random.default_rng(1).uniform(-3, 3, (50, 2, 1))
        A = np.stack([o(pts), o(pts)], axis=-1)
        assert np.all(_canonical_det(A, pts) == 0.0)

    def test_product_matches_orbitals(self):
        a, b = gauss(0.0), gauss(0.0)
        model = DensityModel((a, b), N=2, box=BOX, mode="product")
        x = np.array([0.0, 0.0])
        assert model.amplitude(x) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-14)
        pts = np.array([[0.4], [-1.2]])
        assert model.amplitude(pts) == a(pts[0]) * b(pts[1])

    def test_slater_normalization_constant(self, slater):
        # two orthogonal-enough orbitals: det / sqrt(2 det S); check the 2-particle norm by cubature
        from scipy import integrate

        val, _ = integrate.dblquad(
            lambda y, x: slater.amplitude(np.array([x, y])) ** 2, -6, 6, -6, 6, epsabs=1e-10
        )
        assert val == pytest.approx(1.0, abs=1e-7)

    def test_outside_box(self, slater):
        with pytest.raises(GridError, match="outside the box"):
            slater.amplitude(np.array([0.0, 7.0]))

    def test_grid_model_mismatch(self, slater):
        with pytest.raises(GridError):
            m_particle_density(slater, GridSpec.uniform(-6, 6, 11, d=1, M=3))

    def test_field_matches_pointwise(self, slater):
        g = GridSpec.uniform(-6, 6, 13, d=1, M=2)
        field = slater.amplitude_field(g)
        x1, x2 = g.meshgrid()
        pts = np.stack([x1, x2], axis=-1)[..., None]
        assert np.array_equal(field.values, slater.amplitude(pts))


class TestDensities:
    def test_m_particle_integral(self, slater, grid101):
        assert total_integral(m_particle_density(slater, grid101)) == pytest.approx(2.0, abs=1e-4)

    def test_product_density_factorizes(self):
        a, b = gauss(-0.5), gauss(1.0, 1.2)
        model = DensityModel((a, b), N=3, box=BOX, mode="product")
        g = GridSpec.uniform(-6, 6, 31, d=1, M=2)
        x = g.coords(0)[:, None]
        expected = 3 * np.outer(a(x) ** 2, b(x) ** 2)
        assert np.allclose(m_particle_density(model, g).values, expected, rtol=1e-13)

    def test_diagonal_zero(self, slater, grid101):
        rho = m_particle_density(slater, grid101).values
        assert np.max(np.abs(np.diag(rho))) <= 1e-12

    def test_one_particle_integral(self, slater, grid101):
        rho = one_particle_density(slater, grid101)
        assert rho.grid.ndim == 1
        assert total_integral(rho) == pytest.approx(2.0, abs=1e-4)

    def test_one_particle_product_identical(self, grid101):
        model = DensityModel((gauss(0.0), gauss(0.0)), N=2, box=BOX, mode="product")
        x = grid101.coords(0)
        rho = one_particle_density(model, grid101).values
        assert np.max(np.abs(rho - 2 * gaussian_orbital(x) ** 2)) <= 1e-6

    def test_single_particle_identity(self):
        model = DensityModel((gauss(0.2),), N=1, box=BOX)
        g = GridSpec.uniform(-6, 6, 41)
        assert np.array_equal(one_particle_density(model, g).values, m_particle_density(model, g).values)

    def test_marginal_norm(self, slater, grid101):
        phi = marginal_function(slater, grid101)
        assert total_integral(ScalarField(phi.grid, phi.values**2)) == pytest.approx(1.0, abs=1e-4)
        assert np.all(phi.values >= 0)

    def test_marginal_product_closed_form(self, grid101):
        model = DensityModel((gauss(0.0), gauss(0.0)), N=2, box=BOX, mode="product")
        x = grid101.coords(0)
        phi = marginal_function(model, grid101).values
        assert np.max(np.abs(phi - gaussian_orbital(x))) <= 1e-6

    def test_marginal_no_interior_zeros(self, slater, grid101):
        phi = marginal_function(slater, grid101).values
        assert phi[1:-1].min() > 0

    def test_conditional_normalized(self, slater, grid101):
        beta = conditional_function(slater, grid101)
        norm = np.trapezoid(beta.values**2, dx=grid101.spacing[1], axis=1)
        ok = ~beta.flags[:, 0]
        assert ok.sum() > 50
        assert np.max(np.abs(norm[ok] - 1.0)) <= 1e-3

    def test_conditional_flags_floor(self, slater, grid101):
        beta = conditional_function(slater, grid101, floor=1e-3)
        phi = marginal_function(slater, grid101).values
        assert np.array_equal(beta.flags[:, 0], phi < 1e-3)
        with pytest.raises(ValueError):
            conditional_function(slater, grid101, floor=0.0)

    def test_conditional_product_independent_of_r(self, grid101):
        model = DensityModel((gauss(0.0), gauss(0.5)), N=2, box=BOX, mode="product")
        beta = conditional_function(model, grid101)
        ok = ~beta.flags[:, 0]
        spread = np.ptp(beta.values[ok], axis=0)
        assert spread.max() <= 1e-10

    def test_conditional_single_particle(self):
        model = DensityModel((gauss(0.0),), N=1, box=BOX)
        beta = conditional_function(model, GridSpec.uniform(-6, 6, 21))
        assert np.all(beta.values == 1.0)

    def test_two_dimensional_normalization(self):
        box = ((-5.0, 5.0), (-5.0, 5.0))
        model = DensityModel(
            (
                Orbital("gaussian", center=(0.0, 0.0), width=1.0, box=box),
                Orbital("harmonic", center=(0.0, 0.0), width=1.0, index=(1, 0), box=box),
            ),
            N=2,
            box=box,
        )
        g = GridSpec.uniform(-5, 5, 21, d=2, M=2)
        assert total_integral(m_particle_density(model, g)) == pytest.approx(2.0, abs=1e-4)


@given(
    st.lists(st.floats(-5.9, 5.9), min_size=3, max_size=3),
    st.permutations(range(3)),
)
def test_three_particle_antisymmetry(coords, perm):
    box = ((-6.0, 6.0),)
    orbs = tuple(Orbital("harmonic", center=(0.0,), width=1.0, index=(n,), box=box) for n in range(3))
    model = DensityModel(orbs, N=3, box=box)
    x = np.array(coords)[:, None]
    inversions = sum(1 for i, j in itertools.combinations(range(3), 2) if perm[i] > perm[j])
    sign = -1.0 if inversions % 2 else 1.0
    assert model.amplitude(x[list(perm)]) == sign * model.amplitude(x)


def test_antisymmetry_random_points(slater):
    pts = np.random.default_rng(7).uniform(-6, 6, (100, 2, 1))
    assert np.array_equal(slater.amplitude(pts[:, ::-1]), -slater.amplitude(pts))


def test_normalization_against_quadrature():
    a, b = gauss(-1.0), gauss(1.0, 0.8)
    s_ab = quad(lambda x: gaussian_orbital(x, -1.0) * gaussian_orbital(x, 1.0, 0.8), -6, 6)
    model = DensityModel((a, b), N=2, box=BOX)
    x = np.array([[0.2], [1.3]])
    det = a(x[0]) * b(x[1]) - b(x[0]) * a(x[1])
    assert model.amplitude(x) == pytest.approx(det / math.sqrt(2 * (1 - s_ab**2)), rel=1e-10)
