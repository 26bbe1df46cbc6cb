"""Torus Green's function tests: lattice sums against the frozen image-sum
oracle, spectral solves, representation formula, symmetry/positivity,
derivative envelopes, field serialization."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polygreen import euclid, torus
from polygreen.errors import BudgetError, DomainError
from polygreen.giraud import psi_value
from polygreen.params import ProblemParams

PI = math.pi
G3 = torus.TorusGeometry(3, 1.0)

# truncated image sum at alpha=100, v=(1/2,0,0), L=1 (image radius 6),
# computed ahead of the build at 40 digits
LATTICE_ORACLE = 0.0021528642328906954


class TestDistance:
    def test_wraparound(self):
        d, v = torus.torus_distance(G3, np.zeros(3), np.array([0.75, 0.0, 0.0]))
        assert d == pytest.approx(0.25)
        np.testing.assert_allclose(v, [-0.25, 0.0, 0.0])

    def test_coincident(self):
        d, _ = torus.torus_distance(G3, np.full(3, 0.3), np.full(3, 0.3))
        assert d == 0.0

    def test_boundary_tie_break(self):
        geom = torus.TorusGeometry(3, 2.0)
        d, v = torus.torus_distance(geom, np.zeros(3), np.array([1.0, 1.0, 1.0]))
        assert d == pytest.approx(math.sqrt(3.0))
        np.testing.assert_allclose(v, [-1.0, -1.0, -1.0])

    def test_injectivity_radius(self):
        assert G3.injectivity_radius == 0.5

    @given(
        x=st.lists(st.floats(0, 1, allow_nan=False), min_size=3, max_size=3),
        y=st.lists(st.floats(0, 1, allow_nan=False), min_size=3, max_size=3),
    )
    @settings(max_examples=50, deadline=None)
    def test_metric_properties(self, x, y):
        x, y = np.array(x), np.array(y)
        dxy, _ = torus.torus_distance(G3, x, y)
        dyx, _ = torus.torus_distance(G3, y, x)
        assert dxy == pytest.approx(dyx, abs=1e-12)
        assert dxy <= math.sqrt(3.0) / 2.0 + 1e-12


class TestLatticeSum:
    def test_oracle_value(self):
        p = ProblemParams(3, 1, 100.0)
        val, tail = torus.green_lattice_sum(p, G3, np.zeros(3), np.array([0.5, 0, 0]), tol=1e-14)
        assert val == pytest.approx(LATTICE_ORACLE, abs=1e-15)
        assert tail <= 1e-14

    def test_symmetry_exact(self):
        p = ProblemParams(3, 1, 500.0)
        x, y = np.array([0.1, 0.7, 0.3]), np.array([0.4, 0.2, 0.9])
        a, _ = torus.green_lattice_sum(p, G3, x, y)
        b, _ = torus.green_lattice_sum(p, G3, y, x)
        assert a == pytest.approx(b, rel=1e-14)

    def test_large_alpha_reduces_to_kernel(self):
        p = ProblemParams(3, 1, 1e4)
        d = 0.1
        val, _ = torus.green_lattice_sum(p, G3, np.zeros(3), np.array([d, 0, 0]))
        assert val == pytest.approx(euclid.kernel_alpha(p, d), rel=1e-13)

    def test_translation_invariance(self):
        p = ProblemParams(3, 1, 200.0)
        x, y = np.array([0.2, 0.3, 0.4]), np.array([0.6, 0.1, 0.8])
        t = np.array([0.125, 0.25, 0.5])
        a, _ = torus.green_lattice_sum(p, G3, x, y)
        b, _ = torus.green_lattice_sum(p, G3, x + t, y + t)
        assert a == b

    def test_diagonal_rejected(self):
        p = ProblemParams(3, 1, 100.0)
        with pytest.raises(DomainError):
            torus.green_lattice_sum(p, G3, np.zeros(3), np.array([1.0, 0.0, 0.0]))

    def test_tiny_alpha_budget(self):
        p = ProblemParams(3, 1, 1e-6)
        with pytest.raises(BudgetError):
            torus.green_lattice_sum(p, G3, np.zeros(3), np.array([0.5, 0, 0]), tol=1e-10)

    def test_batch_matches_single(self):
        p = ProblemParams(3, 1, 300.0)
        vs = np.array([[0.2, 0.1, 0.05], [0.4, 0.4, 0.1]])
        batch = torus.green_lattice_sum_many(p, G3, vs, tol=1e-12)
        for row, v in zip(batch, vs):
            single, _ = torus.green_lattice_sum(p, G3, np.zeros(3), v, tol=1e-12)
            assert row == pytest.approx(single, rel=1e-12)

    def test_near_diagonal_expansion(self):
        # |G d^{n-2k} / c_{n,k} - 1| <= C eta(sqrt(alpha) d), alpha-stable C
        cs = []
        for alpha in (500.0, 2000.0, 8000.0):
            p = ProblemParams(3, 1, alpha)
            worst = 0.0
            for t in np.geomspace(0.02, 1.0, 12):
                d = t / p.sqrt_alpha
                g, _ = torus.green_lattice_sum(p, G3, np.zeros(3), np.array([d, 0, 0]))
                dev = abs(g * d / euclid.c_nk(3, 1) - 1.0)
                worst = max(worst, dev / euclid.eta(t, 3, 1))
            cs.append(worst)
        assert max(cs) / min(cs) < 2.0

    def test_three_regime_envelope_conformance(self):
        # G <= C_eps * (near power; reduced-rate exponential; saturated) with
        # a fitted constant stable within factor 2 over the alpha ladder
        eps = 0.1
        cs = []
        for alpha in (500.0, 2000.0, 8000.0):
            p = ProblemParams(3, 1, alpha)
            worst = 0.0
            for d in np.geomspace(0.01, 0.45, 24):
                g, _ = torus.green_lattice_sum(p, G3, np.zeros(3), np.array([d, 0, 0]))
                t = p.sqrt_alpha * d
                if d >= G3.injectivity_radius / 2:
                    bound = math.exp(-(1 - eps) * p.sqrt_alpha * G3.injectivity_radius / 2)
                elif t >= 1.0:
                    bound = d ** (-1) * math.exp(-(1 - eps) * t)
                else:
                    bound = d ** (-1)
                worst = max(worst, g / bound)
            cs.append(worst)
        assert max(cs) / min(cs) < 2.0


class TestSpectralSolve:
    def test_constant_mode(self):
        p = ProblemParams(3, 1, 100.0)
        u = torus.spectral_solve(p, G3, {(0, 0, 0): 1.0}, grid=8)
        np.testing.assert_allclose(u.values, 0.01, rtol=1e-14)

    def test_single_cosine(self):
        p = ProblemParams(3, 1, 1.0)
        u = torus.spectral_solve(p, G3, {(1, 0, 0): 0.5, (-1, 0, 0): 0.5}, grid=16)
        coords = np.arange(16) / 16.0
        expected = np.cos(2 * PI * coords) / ((2 * PI) ** 2 + 1.0)
        np.testing.assert_allclose(u.values[:, 0, 0], expected, atol=1e-15)

    def test_k2_factorisation(self):
        geom = torus.TorusGeometry(5, 1.0)
        rng = np.random.default_rng(3)
        f = torus.TorusField(geom, 8, rng.normal(size=(8,) * 5))
        p1, p2 = ProblemParams(5, 1, 3.0), ProblemParams(5, 2, 3.0)
        once = torus.spectral_solve(p2, geom, f)
        twice = torus.spectral_solve(p1, geom, torus.spectral_solve(p1, geom, f))
        np.testing.assert_allclose(once.values, twice.values, atol=1e-16)


class TestRepresentation:
    @pytest.mark.parametrize(
        "phi",
        [
            {(0, 0, 0): 1.0},
            {(1, 0, 0): 0.5, (-1, 0, 0): 0.5},
        ],
    )
    def test_defect_small(self, phi):
        p = ProblemParams(3, 1, 2000.0)
        defect, est = torus.representation_check(p, G3, phi, np.zeros(3), grid=64)
        assert defect < 5e-4

    def test_constant_mode_identity(self):
        # integral of G equals alpha^{-k}, forced by testing against phi = 1
        p = ProblemParams(3, 1, 2000.0)
        defect, _ = torus.representation_check(p, G3, {(0, 0, 0): 1.0}, np.zeros(3), grid=64)
        assert defect < 5e-6

    def test_zero_source(self):
        p = ProblemParams(3, 1, 2000.0)
        defect, _ = torus.representation_check(p, G3, {(1, 0, 0): 0.0}, np.zeros(3), grid=32)
        assert defect == 0.0

    def test_even_dimension_rejected(self):
        p = ProblemParams(4, 1, 2000.0)
        with pytest.raises(DomainError):
            torus.representation_check(
                p, torus.TorusGeometry(4, 1.0), {(0, 0, 0, 0): 1.0}, np.zeros(4), grid=8
            )


class TestScan:
    def test_positive_and_symmetric(self):
        p = ProblemParams(3, 1, 500.0)
        report = torus.symmetry_positivity_scan(p, G3, 100, seed=7)
        assert report.all_positive
        assert report.min_value > 0.0
        assert report.max_asymmetry <= 1e-12

    def test_far_corner_underflow_flagged(self):
        p = ProblemParams(3, 1, 1e6)  # sqrt(alpha) * |v| > 700 at the corner
        pairs = [(np.zeros(3), np.array([0.5, 0.5, 0.5]))]
        report = torus.symmetry_positivity_scan(p, G3, pairs)
        assert report.underflow_pairs == 1
        assert report.all_positive

    def test_k2_n5_coarse(self):
        p = ProblemParams(5, 2, 200.0)
        geom = torus.TorusGeometry(5, 1.0)
        report = torus.symmetry_positivity_scan(p, geom, 20, seed=5, tol=1e-8)
        assert report.all_positive and report.min_value > 0.0


class TestDerivatives:
    def test_matches_finite_differences(self):
        p = ProblemParams(3, 1, 500.0)
        x = np.zeros(3)
        y = np.array([0.2, 0.1, 0.05])
        d, v = torus.torus_distance(G3, x, y)
        vhat = v / d
        h = 5e-5
        gp, _ = torus.green_lattice_sum(p, G3, x, y + h * vhat, tol=1e-14)
        gm, _ = torus.green_lattice_sum(p, G3, x, y - h * vhat, tol=1e-14)
        fd = (gp - gm) / (2 * h)
        assert abs(fd) == pytest.approx(torus.green_derivative(p, G3, x, y, 1), rel=1e-5)

    def test_near_regime_yukawa_gradient(self):
        # principal image dominates: |G'| -> (1 + sqrt(alpha) r) e^{-sqrt(a) r}/(4 pi r^2)
        p = ProblemParams(3, 1, 500.0)
        d = 0.05
        got = torus.green_derivative(p, G3, np.zeros(3), np.array([d, 0, 0]), 1)
        t = p.sqrt_alpha * d
        expect = (1 + t) * math.exp(-t) / (4 * PI * d**2)
        assert got == pytest.approx(expect, rel=1e-6)

    def test_gradient_vector_aligns(self):
        p = ProblemParams(3, 1, 500.0)
        x, y = np.zeros(3), np.array([0.15, 0.1, 0.0])
        grad = torus.green_gradient(p, G3, x, y)
        d, v = torus.torus_distance(G3, x, y)
        directional = torus.green_derivative(p, G3, x, y, 1)
        assert abs(np.dot(grad, v / d)) == pytest.approx(directional, rel=1e-10)

    def test_product_bound_alpha_stable(self):
        # |d/dt (t^{n-2k} G)| <= C t^{-1} eta(sqrt(alpha) t), C stable in alpha
        cs = []
        for alpha in (500.0, 2000.0):
            p = ProblemParams(3, 1, alpha)
            worst = 0.0
            for t in np.geomspace(0.05, 1.0, 8):
                d = t / p.sqrt_alpha
                y = np.array([d, 0, 0])
                val = torus.green_product_derivative(p, G3, np.zeros(3), y)
                worst = max(worst, val * d / euclid.eta(t, 3, 1))
            cs.append(worst)
        assert max(cs) <= 1.05 / (4 * PI)  # exact Yukawa constant
        assert max(cs) / min(cs) < 1.5

    def test_order_2k_rejected(self):
        p = ProblemParams(3, 1, 500.0)
        with pytest.raises(DomainError):
            torus.green_derivative(p, G3, np.zeros(3), np.array([0.1, 0, 0]), 2)

    def test_k2_second_derivative_fd(self):
        p = ProblemParams(5, 2, 300.0)
        geom = torus.TorusGeometry(5, 1.0)
        x = np.zeros(5)
        y = np.array([0.15, 0.05, 0.0, 0.0, 0.0])
        d, v = torus.torus_distance(geom, x, y)
        vhat = v / d
        h = 2e-4
        vals = []
        for s in (-1, 0, 1):
            g, _ = torus.green_lattice_sum(p, geom, x, y + s * h * vhat, tol=1e-13)
            vals.append(g)
        fd2 = (vals[2] - 2 * vals[1] + vals[0]) / h**2
        assert abs(fd2) == pytest.approx(
            torus.green_derivative(p, geom, x, y, 2), rel=1e-4
        )


class TestPsiEnvelopeOfDerivatives:
    def test_three_regime_derivative_bound(self):
        # |grad G| <= C (rate-0.9) three-regime shape with d^{-(n-2k+1)} near
        eps = 0.1
        p = ProblemParams(3, 1, 2000.0)
        for d in np.geomspace(0.01, 0.45, 12):
            val = torus.green_derivative(p, G3, np.zeros(3), np.array([d, 0, 0]), 1)
            t = p.sqrt_alpha * d
            if d >= 0.25:
                bound = math.exp(-(1 - eps) * p.sqrt_alpha * 0.25)
            elif t >= 1:
                bound = d**-2 * math.exp(-(1 - eps) * t)
            else:
                bound = d**-2
            assert val <= 1.0 * bound


class TestFieldSerialization:
    def test_tfld_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        field = torus.TorusField(G3, 8, rng.normal(size=(8, 8, 8)))
        path = tmp_path / "field.tfld"
        field.write_tfld(path)
        back = torus.TorusField.read_tfld(path)
        assert back.geometry == field.geometry
        assert back.grid_size == field.grid_size
        np.testing.assert_array_equal(back.values, field.values)
        # 32-byte header with the TFLD magic
        raw = path.read_bytes()
        assert raw[:4] == b"TFLD"
        assert len(raw) == 32 + 8 * 8**3

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tfld"
        path.write_bytes(b"NOPE" + b"\0" * 28)
        with pytest.raises(DomainError):
            torus.TorusField.read_tfld(path)


@pytest.mark.slow
def test_k2_factorization_against_convolution():
    """G^(2) on the torus equals the periodised Euclidean self-convolution.

    The torus convolution of periodisations is the periodisation of the
    Euclidean convolution, evaluated here with the numerical convolution
    engine as the oracle at sampled pairs.
    """
    from polygreen.giraud import radial_convolve

    geom = torus.TorusGeometry(5, 1.0)
    alpha = 100.0
    p1 = ProblemParams(5, 1, alpha)
    p2 = ProblemParams(5, 2, alpha)
    kern = euclid.green_radial_kernel(p1)
    v = np.array([0.3, 0.1, 0.0, 0.0, 0.0])
    direct, _ = torus.green_lattice_sum(p2, geom, np.zeros(5), v, tol=1e-12)
    total = 0.0
    for shift in torus._lattice_box(5, 1) * geom.L:
        r = float(np.linalg.norm(v + shift))
        val, _ = radial_convolve(kern, kern, 5, r, tol=1e-9)
        total += val
    assert total == pytest.approx(direct, rel=1e-4)
