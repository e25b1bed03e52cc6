import csv
import io
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superadiabatic.coeffs import (
    FSeries,
    MalformedSeries,
    a0_limit,
    build_coefficients,
    decompose_xyz,
    matrix_projectors,
    oracle_exact_series,
    oracle_exact_start,
    oracle_exact_step,
    oracle_matrix_step,
    xn_series,
    yn_series,
    zn_series,
)
from superadiabatic.model import ModelParams, f_power, theta_prime

P = ModelParams(gamma=0.7, t_c=1.3, eps=0.1)
GRID = np.linspace(-4.0, 4.0, 9)


def assert_bounded(q):
    """Bounded along n in {4..400}: never above the early maximum plus a
    geometrically shrinking drift (a log-type growth keeps a constant drift)."""
    early = max(q(n) for n in range(4, 101, 2))
    q100, q200, q400 = q(100), q(200), q(400)
    d1, d2 = q200 - q100, q400 - q200
    assert q400 <= early or (d2 <= 0.75 * d1 and q400 <= early + 2 * d1)


class TestTable:
    def test_start(self):
        t = build_coefficients(2, 0.8)
        np.testing.assert_array_equal(t.a[2], [1.0, 0.0])
        np.testing.assert_allclose(t.b[2], [0.5, 1.0])

    @pytest.mark.parametrize("gamma", [0.5, 1.0, 1.7])
    def test_first_step_by_hand(self, gamma):
        a4 = build_coefficients(4, gamma).a[4]
        g2 = gamma * gamma
        np.testing.assert_allclose(a4, [1 - g2 / 4, -g2 / 2, -g2 / 2, 0.0], atol=1e-15)

    def test_first_step_matches_product_form(self):
        # a_0^(n) = prod_{k=1}^{(n-2)/2} (1 - gamma^2 / (4 k^2)) from the sine product
        gamma = 0.9
        t = build_coefficients(30, gamma)
        for n in range(4, 31, 2):
            prod = np.prod([1 - gamma**2 / (4 * k * k) for k in range(1, n // 2)])
            assert t.a[n][0] == pytest.approx(prod, rel=1e-13)

    @pytest.mark.parametrize("bad", [0, 1, 3, 7, -2])
    def test_rejects_bad_cap(self, bad):
        with pytest.raises(ValueError):
            build_coefficients(bad, 0.5)

    @given(st.floats(min_value=-2.0, max_value=2.0), st.sampled_from([4, 10, 24]))
    def test_closing_rules(self, gamma, n_max):
        t = build_coefficients(n_max, gamma)
        for n in range(2, n_max - 1, 2):
            nxt = t.a[n + 2]
            assert nxt[n] == nxt[n - 1]
            assert nxt[n + 1] == 0.0
            # the closing value also follows from summing the recursion
            expected = -2 * gamma**2 * t.b[n].sum() / ((n + 1) * n)
            assert nxt[n] == pytest.approx(expected, rel=1e-10, abs=1e-14)

    def test_b_definition(self):
        t = build_coefficients(12, 1.1)
        for n in range(2, 13, 2):
            ref = [sum(t.a[n][: j + 1]) / (n - j) for j in range(n)]
            np.testing.assert_allclose(t.b[n], ref, rtol=1e-14, atol=1e-16)

    @pytest.mark.parametrize("gamma", [0.3, 0.8, 1.0])
    def test_leading_coefficient_bounded(self, gamma):
        t = build_coefficients(200, gamma)
        assert all(0.0 <= t.a[n][0] <= 1.0 for n in range(2, 201, 2))

    def test_csv_export(self):
        text = build_coefficients(4, 1.0).to_csv()
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["n", "j", "a", "b"]
        assert ["4", "0", "0.75", "0.1875"] in rows
        keys = [(int(r[0]), int(r[1])) for r in rows[1:]]
        assert keys == sorted(keys)
        assert len(rows) == 1 + 2 + 4

    def test_csv_round_trips(self):
        t = build_coefficients(40, 0.77)
        for n, j, a, b in csv.reader(io.StringIO(t.to_csv().split("\n", 1)[1])):
            assert float(a) == t.a[int(n)][int(j)]
            assert float(b) == t.b[int(n)][int(j)]


class TestLimits:
    def test_values(self):
        assert a0_limit(1.0) == pytest.approx(2 / math.pi)
        assert a0_limit(0.0) == 1.0
        assert a0_limit(1e-9) == pytest.approx(1.0)
        assert a0_limit(2.0) == pytest.approx(0.0, abs=1e-16)

    @pytest.mark.parametrize("gamma", [0.5, 1.0, 1.5])
    def test_leading_coefficient_converges(self, gamma):
        t = build_coefficients(400, gamma)
        errs = [abs(t.a[n][0] - a0_limit(gamma)) for n in (50, 100, 200, 400)]
        assert all(b < a for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 2e-3

    @pytest.mark.parametrize("gamma", [0.5, 1.0, 1.5])
    def test_leading_coefficient_decay_exponent(self, gamma):
        t = build_coefficients(200, gamma)
        ns = np.arange(10, 201, 2)
        err = [abs(t.a[n][0] - a0_limit(gamma)) for n in ns]
        exponent = -np.polyfit(np.log(ns), np.log(err), 1)[0]
        assert exponent >= 1.9

    @pytest.mark.parametrize("gamma", [0.5, 1.0, 1.5])
    def test_second_coefficient_bound(self, gamma):
        t = build_coefficients(400, gamma)
        assert_bounded(lambda n: abs(t.a[n][1]) * (n - 1) / math.log(n))

    @pytest.mark.parametrize("gamma", [0.5, 1.0, 1.5])
    def test_tail_coefficients_bound(self, gamma):
        t = build_coefficients(400, gamma)
        assert_bounded(lambda n: max(1.2**-j * abs(t.a[n][j]) for j in range(2, n)) * (n - 1))

    @pytest.mark.parametrize("gamma", [0.5, 1.0, 1.5])
    def test_b_coefficients_bound(self, gamma):
        t = build_coefficients(400, gamma)
        assert_bounded(lambda n: max(1.2 ** -np.arange(n) * t.b[n]) * (n - 1))


class TestClosedForms:
    table = build_coefficients(44, P.gamma)

    def test_first_odd_order(self):
        s = xn_series(1, self.table, P)
        for t in GRID:
            assert s(t) == pytest.approx(-theta_prime(t, P) / 2)

    def test_second_order(self):
        z2, y2 = zn_series(2, self.table, P), yn_series(2, self.table, P)
        for t in GRID:
            assert z2(t) == pytest.approx(P.gamma / P.t_c**2 * f_power(t, 2, P).imag)
            assert y2(t) == pytest.approx(theta_prime(t, P) ** 2 / 4)

    def test_third_order_at_origin(self):
        p = ModelParams(gamma=1.0, t_c=1.0)
        table = build_coefficients(4, 1.0)
        s = xn_series(3, table, p)
        a4 = table.a[4]
        expected = -2.0 * sum(2.0**-j * 3 / (3 - j) * a4[j] for j in range(3))
        assert s(0.0) == pytest.approx(expected)

    def test_term_types(self):
        for n in range(2, 13, 2):
            assert all(r == 0 for _, r, _ in zn_series(n, self.table, P).terms)
            assert all(i == 0 for _, _, i in yn_series(n, self.table, P).terms)
        for n in range(1, 13, 2):
            assert all(i == 0 for _, _, i in xn_series(n, self.table, P).terms)

    @pytest.mark.parametrize("n", [2, 4, 10])
    def test_value_at_origin_is_sum_of_re_coefficients(self, n):
        s = yn_series(n, self.table, P)
        assert s(0.0) == pytest.approx(sum(r for _, r, _ in s.terms))

    def test_parity(self):
        t = np.linspace(0.1, 6.0, 12)
        for n in range(2, 13, 2):
            z, y = zn_series(n, self.table, P), yn_series(n, self.table, P)
            np.testing.assert_allclose(z(-t), -z(t), rtol=1e-12)
            np.testing.assert_allclose(y(-t), y(t), rtol=1e-12)
            assert z(0.0) == 0.0
        for n in range(1, 13, 2):
            x = xn_series(n, self.table, P)
            np.testing.assert_allclose(x(-t), x(t), rtol=1e-12)

    def test_decay(self):
        for n in (2, 6, 12):
            assert abs(yn_series(n, self.table, P)(1e4)) < 1e-6

    @pytest.mark.parametrize(
        "fn,n", [(xn_series, 2), (zn_series, 3), (yn_series, 5), (xn_series, 45), (zn_series, 46)]
    )
    def test_rejects_wrong_order(self, fn, n):
        with pytest.raises(ValueError):
            fn(n, self.table, P)

    def test_leading_term(self):
        ts = np.linspace(-5.0, 5.0, 401)
        fmod = np.abs(P.t_c / (ts + 1j * P.t_c))
        lead_amp = 2 * math.sin(P.gamma * math.pi / 2) / math.pi
        consts = []
        for n in (11, 21, 41):
            s = xn_series(n, self.table, P)
            scaled = s(ts, extra_log=-s.scale_log)
            lead = -lead_amp * np.real(f_power(ts, n, P))
            R = np.maximum(fmod**n, 2.0 ** (-(n - 2) / 2) * fmod**2) / (n - 1) ** 0.9
            consts.append(np.max(np.abs(scaled - lead) / R))
        # fitted constant stays O(1) and does not grow beyond a log factor
        assert max(consts) <= 5.0
        assert consts[-1] <= 1.5 * consts[0]

    def test_large_order_no_overflow(self):
        table = build_coefficients(400, 0.5)
        s = zn_series(400, table, ModelParams(gamma=0.5))
        assert s.scale_log > 700
        assert math.isfinite(s(0.3, extra_log=-s.scale_log))


class TestExactOracle:
    def test_start(self):
        x1, y2, z2 = oracle_exact_start(P)
        for t in GRID:
            assert x1(t) == pytest.approx(-theta_prime(t, P) / 2)
            assert z2(t) == pytest.approx(P.gamma / P.t_c**2 * f_power(t, 2, P).imag)

    @pytest.mark.parametrize("gamma", [0.3, 0.7, 1.0, 1.9])
    def test_matches_closed_forms(self, gamma):
        p = ModelParams(gamma=gamma, t_c=1.3)
        table = build_coefficients(14, gamma)
        X, y, z = oracle_exact_series(13, p)
        for n in range(2, 13, 2):
            assert zn_series(n, table, p).max_rel_diff(z[n]) <= 1e-12
            assert yn_series(n, table, p).max_rel_diff(y[n]) <= 1e-12
        for n in range(1, 14, 2):
            assert xn_series(n, table, p).max_rel_diff(X[n]) <= 1e-12

    def test_uncoupled(self):
        X, y, z = oracle_exact_series(9, ModelParams(gamma=0.0))
        for k in list(X)[1:] + list(y):
            for s in (X.get(k), y.get(k), z.get(k)):
                if s is not None:
                    assert not s.terms

    def test_rejects_nonzero_even_x(self):
        zero = FSeries.zero(P.t_c)
        with pytest.raises(ValueError):
            oracle_exact_step(FSeries([0, 1.0], [0, 0], P.t_c), zero, zero, P)

    def test_rejects_unintegrable(self):
        with pytest.raises(MalformedSeries):
            FSeries([0, 1.0], [0, 0], P.t_c).antiderivative()


class TestFSeries:
    coeffs = st.lists(st.floats(min_value=-3, max_value=3), min_size=4, max_size=8)

    @given(coeffs, coeffs, st.floats(min_value=-5, max_value=5))
    @settings(max_examples=50)
    def test_derivative_matches_finite_difference(self, re, im, t):
        s = FSeries([0.0] + re, [0.0] + im, P.t_c)
        h = 1e-5
        num = (s(t + h) - s(t - h)) / (2 * h)
        assert s.derivative()(t) == pytest.approx(num, rel=1e-6, abs=1e-6)

    @given(coeffs, coeffs, st.floats(min_value=-5, max_value=5))
    @settings(max_examples=50)
    def test_antiderivative_inverts_derivative(self, re, im, t):
        s = FSeries([0.0, 0.0] + re, [0.0, 0.0] + im, P.t_c)
        back = s.antiderivative().derivative()
        assert back.max_rel_diff(s) <= 1e-13
        assert abs(s.antiderivative()(-1e6)) < 1e-5

    @given(coeffs, coeffs, st.floats(min_value=-5, max_value=5))
    @settings(max_examples=50)
    def test_theta_prime_product(self, re, im, t):
        s = FSeries([0.0] + re, [0.0] + im, P.t_c, scale_log=0.3)
        assert s.times_theta_prime(P.gamma)(t) == pytest.approx(
            theta_prime(t, P) * s(t), rel=1e-11, abs=1e-12
        )

    def test_linear_ops(self):
        a = FSeries([0, 1.0, 2.0], [0, 0, 1.0], 1.0, scale_log=0.5)
        b = FSeries([0, -1.0], [0, 3.0], 1.0)
        for t in (-1.0, 0.4):
            assert (a + b)(t) == pytest.approx(a(t) + b(t))
            assert (a - b)(t) == pytest.approx(a(t) - b(t))
            assert a.scaled(2.5)(t) == pytest.approx(2.5 * a(t))


class TestMatrixOracle:
    def test_first_order_is_x_type(self):
        for t in GRID:
            pi1 = oracle_matrix_step(0, P, [t])[0]
            x, y, z, w = decompose_xyz(pi1, t, P)
            assert x == pytest.approx(-0.5j * theta_prime(t, P))
            assert abs(y) + abs(z) + abs(w) < 1e-15

    @pytest.mark.parametrize("n", range(0, 7))
    def test_matches_scalar_path(self, n):
        X, y, z = oracle_exact_series(7, P)
        k = n + 1
        for t, m in zip(GRID, oracle_matrix_step(n, P, GRID)):
            x_, y_, z_, w_ = decompose_xyz(m, t, P)
            if k % 2:
                ref = np.array([1j * X[k](t), 0, 0, 0])
            else:
                ref = np.array([0, y[k](t), z[k](t), 0])
            scale = np.abs(ref).max()
            assert np.abs(np.array([x_, y_, z_, w_]) - ref).max() <= 1e-5 * scale

    @pytest.mark.parametrize("n", range(0, 3))
    def test_finite_difference_mode(self, n):
        ta = oracle_matrix_step(n, P, [-0.4, 0.7])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            fd = oracle_matrix_step(n, P, [-0.4, 0.7], method="fd")
        for a, b in zip(fd, ta):
            assert np.abs(a - b).max() <= 1e-5 * np.abs(b).max()

    def test_finite_difference_warns_when_inaccurate(self):
        with pytest.warns(RuntimeWarning):
            oracle_matrix_step(5, P, [0.3], method="fd")

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            oracle_matrix_step(1, P, [0.0], method="spline")

    @pytest.mark.parametrize("t", [-1.5, 0.2, 3.0])
    def test_derivatives_off_diagonal(self, t):
        # pi_0 pi_n' pi_0 = 0: compare with the Taylor coefficient of order one
        from superadiabatic.coeffs import _matrix_recursion, _projector_taylor, _tder

        pi0 = _projector_taylor(t, P, 7)
        pis = _matrix_recursion(pi0, 5, _tder)
        for k in range(1, 6):
            d = _tder(pis[k])[0]
            assert np.abs(pi0[0] @ d @ pi0[0]).max() <= 1e-12 * max(1.0, np.abs(d).max())

    def test_projector_list(self):
        pis = matrix_projectors(3, P, 0.5)
        assert len(pis) == 5
        np.testing.assert_allclose(pis[0] @ pis[0], pis[0], atol=1e-15)
