import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from superadiabatic.model import (
    InvalidParameters,
    ModelParams,
    adiabatic_frame,
    adiabatic_projector,
    basis_xyzw,
    f_power,
    f_powers,
    hamiltonian,
    theta,
    theta_prime,
)

H_FD = 1e-5
TOL_FD = 1e-6


def fd(fun, t, h=H_FD):
    return (fun(t + h) - fun(t - h)) / (2 * h)


times = st.floats(min_value=-20.0, max_value=20.0, allow_nan=False)
gammas = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)
pole_distances = st.floats(min_value=0.2, max_value=5.0)


class TestParams:
    def test_defaults(self):
        p = ModelParams()
        assert (p.gamma, p.t_c, p.eps) == (0.5, 1.0, 0.1)
        assert p.ratio == pytest.approx(10.0)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(t_c=0.0), dict(t_c=-1.0), dict(eps=0.0), dict(eps=-0.1), dict(gamma=math.inf), dict(eps=0.5)],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(InvalidParameters):
            ModelParams(**kwargs)

    def test_smallest_admissible_eps(self):
        assert ModelParams(eps=1.0 / 3.0).ratio == pytest.approx(3.0)


class TestCoupling:
    def test_value_at_origin(self):
        assert theta_prime(0.0, ModelParams(gamma=1.0, t_c=1.0)) == pytest.approx(2.0)

    def test_value_at_pole_distance(self):
        assert theta_prime(1.0, ModelParams(gamma=1.0, t_c=1.0)) == pytest.approx(1.0)

    def test_value_off_axis(self):
        p = ModelParams(gamma=0.5, t_c=2.0, eps=0.1)
        assert theta_prime(3.0, p) == pytest.approx(2.0 / 13.0)

    @given(times, gammas, pole_distances)
    def test_is_derivative_of_angle(self, t, gamma, t_c):
        p = ModelParams(gamma=gamma, t_c=t_c, eps=t_c / 10)
        num = fd(lambda s: theta(s, p), t)
        assert num == pytest.approx(theta_prime(t, p), rel=TOL_FD, abs=1e-9)

    @given(times, pole_distances)
    def test_even_and_positive(self, t, t_c):
        p = ModelParams(gamma=0.7, t_c=t_c, eps=t_c / 10)
        assert theta_prime(t, p) == theta_prime(-t, p) > 0

    def test_vectorised(self):
        out = theta_prime(np.array([0.0, 1.0]), ModelParams(gamma=1.0))
        np.testing.assert_allclose(out, [2.0, 1.0])


class TestAngle:
    def test_values(self):
        assert theta(0.0, ModelParams()) == 0.0
        assert theta(1.0, ModelParams(gamma=1.0)) == pytest.approx(math.pi / 2)
        assert theta(1e12, ModelParams(gamma=0.5)) == pytest.approx(math.pi / 2)

    @given(times)
    def test_odd(self, t):
        p = ModelParams(gamma=0.8)
        assert theta(-t, p) == pytest.approx(-theta(t, p))


class TestHamiltonian:
    def test_origin(self):
        np.testing.assert_allclose(hamiltonian(0.0, ModelParams()), [[0.5, 0], [0, -0.5]])

    def test_quarter_turn(self):
        np.testing.assert_allclose(hamiltonian(1.0, ModelParams(gamma=1.0)), [[0, 0.5], [0.5, 0]], atol=1e-15)

    @given(times, gammas)
    def test_spectrum(self, t, gamma):
        H = hamiltonian(t, ModelParams(gamma=gamma))
        assert np.linalg.det(H) == pytest.approx(-0.25)
        assert np.trace(H) == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(H, H.T)
        np.testing.assert_allclose(np.linalg.eigvalsh(H), [-0.5, 0.5])


class TestAdiabaticFrame:
    def test_origin(self):
        np.testing.assert_allclose(adiabatic_frame(0.0, ModelParams()), [[1, 0], [0, -1]])

    def test_quarter_turn_entries(self):
        U = adiabatic_frame(1.0, ModelParams(gamma=1.0))
        np.testing.assert_allclose(np.abs(U), math.sqrt(2) / 2)

    @given(times, gammas)
    def test_involution_and_diagonalisation(self, t, gamma):
        p = ModelParams(gamma=gamma)
        U = adiabatic_frame(t, p)
        np.testing.assert_allclose(U @ U, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(U @ hamiltonian(t, p) @ U, np.diag([0.5, -0.5]), atol=1e-14)


class TestBasis:
    p = ModelParams(gamma=0.6, t_c=1.3, eps=0.1)

    def test_constant_x(self):
        X1 = basis_xyzw(-2.0, self.p)[0]
        X2 = basis_xyzw(3.0, self.p)[0]
        np.testing.assert_array_equal(X1, X2)

    def test_values_at_origin(self):
        X, Y, Z, W = basis_xyzw(0.0, self.p)
        np.testing.assert_array_equal(Y, [[-1, 0], [0, 1]])
        np.testing.assert_allclose(Z, [[0, 1], [1, 0]])
        np.testing.assert_array_equal(W, np.eye(2))

    @pytest.mark.parametrize("t", [-3.0, -0.4, 0.0, 0.9, 5.0])
    def test_derivatives(self, t):
        p = self.p
        tp = theta_prime(t, p)
        X, Y, Z, _ = basis_xyzw(t, p)
        dX = fd(lambda s: basis_xyzw(s, p)[0], t)
        dY = fd(lambda s: basis_xyzw(s, p)[1], t)
        dZ = fd(lambda s: basis_xyzw(s, p)[2], t)
        assert np.abs(dX).max() == 0.0
        assert np.abs(dY + tp * Z).max() <= TOL_FD * max(1.0, tp)
        assert np.abs(dZ - tp * Y).max() <= TOL_FD * max(1.0, tp)

    @given(times)
    def test_products(self, t):
        X, Y, Z, W = basis_xyzw(t, self.p)
        anti = lambda A, B: A @ B + B @ A  # noqa: E731
        for A, B in ((X, Y), (X, Z), (Y, Z)):
            assert np.abs(anti(A, B)).max() <= 1e-15
        for M in (-X @ X, Y @ Y, Z @ Z):
            assert np.abs(M - W).max() <= 1e-15

    @given(times)
    def test_commutators_with_projector(self, t):
        X, Y, Z, W = basis_xyzw(t, self.p)
        P = adiabatic_projector(t, self.p)
        comm = lambda A, B: A @ B - B @ A  # noqa: E731
        assert np.abs(comm(X, P) - Z).max() <= 1e-15
        assert np.abs(comm(Y, P)).max() <= 1e-15
        assert np.abs(comm(Z, P) - X).max() <= 1e-15
        assert np.abs(W - (W @ P + P @ W) - Y).max() <= 1e-15


class TestFPower:
    p = ModelParams(gamma=0.5, t_c=1.0, eps=0.1)

    def test_origin(self):
        for m in (1, 2, 7):
            assert f_power(0.0, m, self.p) == 1 + 0j

    def test_at_pole_distance(self):
        assert f_power(1.0, 2, self.p) == pytest.approx(0.5j)

    def test_rejects_zero_exponent(self):
        with pytest.raises(ValueError):
            f_power(0.3, 0, self.p)

    @given(times, st.integers(min_value=1, max_value=40), pole_distances)
    def test_polar_matches_naive(self, t, m, t_c):
        p = ModelParams(gamma=0.5, t_c=t_c, eps=t_c / 10)
        naive = (1j * t_c / (t + 1j * t_c)) ** m
        assert f_power(t, m, p) == pytest.approx(naive, rel=1e-12, abs=1e-300)
        assert abs(f_power(t, m, p)) == pytest.approx((1 + t * t / t_c**2) ** (-m / 2), rel=1e-12)

    def test_no_underflow_trouble(self):
        assert f_power(1e6, 200, self.p) == 0j or abs(f_power(1e6, 200, self.p)) < 1e-300

    def test_table_matches_scalar(self):
        t = np.array([-2.0, 0.5])
        re, im = f_powers(t, 5, self.p.t_c)
        for m in range(1, 6):
            np.testing.assert_allclose(re[m] + 1j * im[m], f_power(t, m, self.p), rtol=1e-14)


class TestFIdentities:
    """Multiplication by theta' and differentiation stay inside the f-basis."""

    p = ModelParams(gamma=0.7, t_c=1.4, eps=0.1)
    grid = np.linspace(-4.0, 4.0, 17)

    def f(self, t, m):
        return f_power(t, m, self.p)

    @pytest.mark.parametrize("m", range(1, 9))
    def test_multiplication(self, m):
        g, tc = self.p.gamma, self.p.t_c
        for t in self.grid:
            tp = theta_prime(t, self.p)
            im_rhs = g / tc * sum(2.0**-i * self.f(t, m + 1 - i).imag for i in range(m))
            re_rhs = g / tc * (
                sum(2.0**-i * self.f(t, m + 1 - i).real for i in range(m)) + 2.0 ** (1 - m) * self.f(t, 1).real
            )
            assert tp * self.f(t, m).imag == pytest.approx(im_rhs, rel=1e-12, abs=1e-15)
            assert tp * self.f(t, m).real == pytest.approx(re_rhs, rel=1e-12, abs=1e-15)

    @pytest.mark.parametrize("m", range(1, 9))
    def test_differentiation(self, m):
        tc = self.p.t_c
        for t in self.grid:
            exact = 1j * m * self.f(t, m + 1) / tc
            num = fd(lambda s: self.f(s, m), t)
            assert abs(num - exact) <= TOL_FD * max(1.0, abs(exact))
            assert exact.real == pytest.approx(-m / tc * self.f(t, m + 1).imag)
            assert exact.imag == pytest.approx(m / tc * self.f(t, m + 1).real)
