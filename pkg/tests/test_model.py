"""Vector field, rate functions, equilibria and eigenvalue crossings."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hhcycles import model
from hhcycles.errors import NoSignChange

RNG = np.random.default_rng(20260826)


class TestExpc:
    def test_value_at_zero(self):
        assert model.expc(0.0) == 1.0

    def test_matches_closed_form_away_from_zero(self):
        x = np.array([-30.0, -2.0, -0.5, 0.5, 2.0, 30.0])
        expected = x / np.expm1(x)
        assert np.allclose(model.expc(x), expected, rtol=1e-14)

    @given(st.floats(min_value=-50.0, max_value=50.0))
    @settings(max_examples=300, deadline=None)
    def test_identity_x_equals_expc_times_expm1(self, x):
        # x = expc(x) * (e^x - 1) wherever the closed form is finite
        if abs(x) < 1e-12:
            return
        assert model.expc(x) * np.expm1(x) == pytest.approx(x, rel=1e-10)

    @given(st.floats(min_value=-1e-3, max_value=1e-3))
    @settings(max_examples=300, deadline=None)
    def test_no_catastrophic_cancellation_near_zero(self, x):
        val = model.expc(x)
        # series reference accurate to ~1e-16 in this window
        ref = 1.0 - x / 2.0 + x * x / 12.0
        assert val == pytest.approx(ref, abs=1e-12)
        assert np.isfinite(val)

    def test_series_matches_closed_form_at_cutoff(self):
        # both branches agree where they meet
        for x in (1e-4, -1e-4, 1.0000001e-4):
            closed = x / np.expm1(x)
            assert model.expc(x) == pytest.approx(closed, rel=1e-11)

    def test_prime_matches_finite_difference(self):
        xs = np.array([-3.0, -0.3, 1e-5, 0.2, 4.0])
        h = 1e-6
        fd = (model.expc(xs + h) - model.expc(xs - h)) / (2 * h)
        assert np.allclose(model.expc_prime(xs), fd, atol=1e-9)


class TestRates:
    def test_all_rates_positive_over_physical_range(self):
        V = np.linspace(-120.0, 40.0, 500)
        for arr in model.rate_arrays(V):
            assert np.all(arr > 0)

    def test_rate_derivatives_match_finite_difference(self):
        V = np.linspace(-100.0, 30.0, 53)
        h = 1e-6
        up = model.rate_arrays(V + h)
        dn = model.rate_arrays(V - h)
        exact = model.rate_derivative_arrays(V)
        for e, u, d in zip(exact, up, dn):
            assert np.allclose(e, (u - d) / (2 * h), atol=1e-8)

    def test_gating_steady_states_in_unit_interval(self):
        V = np.linspace(-110.0, 30.0, 200)
        for g in model.gating_steady_states(V):
            assert np.all((g > 0) & (g < 1))


class TestVectorField:
    def test_jacobian_matches_finite_difference(self):
        for _ in range(20):
            x = np.array([RNG.uniform(-110, 30), RNG.uniform(0.05, 0.95),
                          RNG.uniform(0.05, 0.95), RNG.uniform(0.05, 0.95)])
            I = RNG.uniform(0, 160)
            J = model.jacobian(x, I=I)
            Jfd = np.empty((4, 4))
            h = 1e-6
            for j in range(4):
                e = np.zeros(4)
                e[j] = h
                Jfd[:, j] = (model.vector_field(x + e, I=I)
                             - model.vector_field(x - e, I=I)) / (2 * h)
            scale = np.max(np.abs(Jfd)) + 1.0
            assert np.max(np.abs(J - Jfd)) / scale < 1e-7

    def test_batch_evaluation_matches_loop(self):
        xs = np.column_stack([RNG.uniform(-100, 20, 7),
                              RNG.uniform(0.1, 0.9, (7, 3)).reshape(7, 3)])
        batch_f = model.vector_field(xs, I=12.0)
        batch_J = model.jacobian(xs, I=12.0)
        for i, x in enumerate(xs):
            assert np.allclose(batch_f[i], model.vector_field(x, I=12.0))
            assert np.allclose(batch_J[i], model.jacobian(x, I=12.0))

    def test_stimulus_depolarizes(self):
        # larger I pushes the equilibrium potential to more negative V
        # (spikes are negative in this sign convention)
        v0 = model.find_equilibrium(0.0)[0]
        v50 = model.find_equilibrium(50.0)[0]
        assert v50 < v0


class TestEquilibrium:
    def test_residual_at_roundoff(self):
        for I in (0.0, 5.0, 9.8, 50.0, 154.0):
            x = model.find_equilibrium(I)
            assert np.max(np.abs(model.vector_field(x, I=I))) < 1e-12

    def test_rest_state_at_zero_current(self):
        # classical resting point: V near 0, gates near their textbook values
        x = model.find_equilibrium(0.0)
        assert abs(x[0]) < 1e-3
        assert x[1] == pytest.approx(0.3177, abs=2e-3)   # n
        assert x[2] == pytest.approx(0.5961, abs=2e-3)   # h
        assert x[3] == pytest.approx(0.0529, abs=2e-3)   # m

    def test_guess_is_optional_across_the_sweep(self):
        for I in np.linspace(0.0, 160.0, 17):
            x = model.find_equilibrium(float(I))
            assert np.all(np.isfinite(x))

    def test_explicit_guess_converges_to_same_root(self):
        a = model.find_equilibrium(20.0)
        b = model.find_equilibrium(20.0, guess=a[0] + 0.5)
        assert np.allclose(a, b, atol=1e-10)


class TestHopfDetection:
    def test_low_current_crossing(self, hopf_points):
        (I_low, omega_low), _ = hopf_points
        # frozen oracle values for this vector field (bisection to 1e-6,
        # verified against an independent eigenvalue sweep)
        assert I_low == pytest.approx(9.779638, abs=5e-5)
        assert omega_low == pytest.approx(0.58623, abs=1e-3)

    def test_high_current_crossing(self, hopf_points):
        _, (I_high, omega_high) = hopf_points
        assert I_high == pytest.approx(154.52663, abs=5e-5)
        assert omega_high == pytest.approx(1.06292, abs=1e-3)

    def test_equilibrium_stability_flips_across_crossings(self, hopf_points):
        (I_low, _), (I_high, _) = hopf_points
        def max_re(I):
            return float(np.max(model.equilibrium_eigenvalues(I).real))
        assert max_re(I_low - 0.5) < 0
        assert max_re(0.5 * (I_low + I_high)) > 0
        assert max_re(I_high + 0.5) < 0

    def test_no_crossing_raises(self):
        with pytest.raises(NoSignChange):
            model.detect_hopf(20.0, 30.0)

    def test_params_are_validated(self):
        with pytest.raises(ValueError):
            model.HHParams(C=-1.0)
