import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nvcavity import fitting as ft
from nvcavity import spin_dynamics as sd
from nvcavity.errors import DomainError, InputError, RankDeficiencyError

DRAWS = {
    "lorentzian": lambda r: [r.uniform(-1, 1), r.uniform(0.1, 2), r.uniform(0.5, 2), r.uniform(-1, 1)],
    "exponential_decay": lambda r: [r.uniform(1, 20), r.uniform(0.5, 2), r.uniform(-0.5, 0.5)],
    "rabi_beat": lambda r: [r.uniform(2, 5), r.uniform(5.5, 8), r.uniform(2, 20),
                            r.uniform(0.2, 1), r.uniform(0, 1)],
    "linear": lambda r: [r.uniform(-2, 2), r.uniform(-2, 2)],
}
GRIDS = {
    "lorentzian": np.linspace(-4, 4, 201),
    "exponential_decay": np.linspace(0, 60, 200),
    # short record: a 20% frequency error must stay within half a cycle of phase
    "rabi_beat": np.linspace(0, 0.4, 241),
    "linear": np.linspace(-3, 3, 30),
}


class TestModels:
    def test_lorentzian_points(self):
        p = [637.0, 0.0643, 1.0, 0.1]
        assert ft.model_lorentzian(p, 637.0) == pytest.approx(1.1)
        assert ft.model_lorentzian(p, 637.0 + 0.0643 / 2) == pytest.approx(0.6)
        assert ft.lorentzian_q(p) == pytest.approx(9906, abs=1)
        with pytest.raises(DomainError):
            ft.model_lorentzian([0, 0, 1, 0], 0.0)

    def test_exponential_and_beat_at_zero(self):
        assert ft.model_exponential([6.7, 2.0, 0.5], 0.0) == pytest.approx(2.5)
        assert ft.model_rabi_beat([5, 5.857, 10, 0.4, 0.5], 0.0) == pytest.approx(0.9)
        with pytest.raises(DomainError):
            ft.model_exponential([0.0, 1, 0], 1.0)

    def test_echo_model_matches_spin_module(self):
        m = sd.EchoModel(t2=230, revival_period=46.7, revival_depth=0.7)
        tau = np.linspace(0, 200, 101)
        np.testing.assert_array_equal(ft.model_echo_envelope([230, 1, 46.7, 0.7, 5.0], tau),
                                      sd.hahn_echo_signal(m, tau))

    @pytest.mark.parametrize("kind", sorted(DRAWS))
    def test_jacobian_matches_finite_differences(self, kind):
        model = ft.get_model(kind)
        rng = np.random.default_rng(11)
        x = GRIDS[kind]
        for _ in range(25):
            p = np.array(DRAWS[kind](rng))
            analytic = model.jacobian(p, x)
            numeric = ft.numerical_jacobian(model.evaluate, p, x)
            scale = np.maximum(np.abs(analytic).max(axis=0), 1e-12)
            assert np.all(np.abs(analytic - numeric).max(axis=0) / scale < 1e-5)

    def test_unknown_model(self):
        with pytest.raises(InputError):
            ft.get_model("gaussian")


class TestEngine:
    def test_noiseless_lorentzian_exact(self):
        truth = np.array([637.0, 0.0643, 1.0, 0.0])
        x = np.linspace(637.0 - 0.25, 637.0 + 0.25, 201)
        y = ft.model_lorentzian(truth, x)
        res = ft.fit(ft.LORENTZIAN, x, y, init=truth * [1, 1.15, 0.9, 1] + [0.01, 0, 0, 0.02])
        assert res.converged
        np.testing.assert_allclose(res.params, truth, rtol=1e-9, atol=1e-9)

    def test_linear_matches_weighted_lstsq(self):
        rng = np.random.default_rng(3)
        x = np.linspace(0, 10, 40)
        y = 1.5 - 0.3 * x + rng.normal(0, 0.2, x.size)
        w = rng.uniform(0.5, 4, x.size)
        res = ft.fit(ft.LINEAR, x, y, weights=w)
        a = np.column_stack([np.ones_like(x), x]) * np.sqrt(w)[:, None]
        coef = np.linalg.lstsq(a, y * np.sqrt(w), rcond=None)[0]
        np.testing.assert_allclose(res.params, coef, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(res.covariance, np.linalg.inv(a.T @ a), rtol=1e-10)

    @pytest.mark.parametrize("kind", sorted(DRAWS))
    def test_chi2_never_increases(self, kind):
        model = ft.get_model(kind)
        rng = np.random.default_rng(5)
        p = np.array(DRAWS[kind](rng))
        x = GRIDS[kind]
        y = model.evaluate(p, x) + rng.normal(0, 0.05, x.size)
        res = ft.fit(model, x, y, init=p * rng.uniform(0.85, 1.15, p.size))
        assert np.all(np.diff(res.chi2_history) <= 0)

    @pytest.mark.parametrize("kind", sorted(DRAWS))
    def test_basin(self, kind):
        model = ft.get_model(kind)
        rng = np.random.default_rng(9)
        x = GRIDS[kind]
        for _ in range(20):
            p = np.array(DRAWS[kind](rng))
            init = p * rng.uniform(0.8, 1.2, p.size)
            res = ft.fit(model, x, model.evaluate(p, x), init=init)
            assert res.converged
            got = res.params.copy()
            if kind == "rabi_beat":
                got[:2] = np.sort(got[:2])  # the two tones are interchangeable
            np.testing.assert_allclose(got, p, rtol=1e-6, atol=1e-7)

    def test_covariance_properties(self):
        x = GRIDS["lorentzian"]
        y = ft.synthetic(ft.LORENTZIAN, [0, 1, 1, 0], x, 0.05, seed=2)
        res = ft.fit(ft.LORENTZIAN, x, y)
        np.testing.assert_array_equal(res.covariance, res.covariance.T)
        assert np.linalg.eigvalsh(res.covariance).min() >= 0
        np.testing.assert_allclose(res.sigma, np.sqrt(np.diag(res.covariance)))

    def test_coverage(self):
        truth = np.array([0.0, 1.0, 1.0, 0.1])
        x = GRIDS["lorentzian"]
        hits = np.zeros(4)
        reps = 500
        for seed in range(reps):
            y = ft.synthetic(ft.LORENTZIAN, truth, x, 0.05, seed=seed)
            res = ft.fit(ft.LORENTZIAN, x, y, init=truth)
            hits += np.abs(res.params - truth) <= res.sigma
        rate = hits / reps
        assert np.all(np.abs(rate - 0.683) <= 0.10), rate

    def test_rank_deficiency(self):
        x = np.full(10, 2.0)
        with pytest.raises(RankDeficiencyError):
            ft.fit(ft.LINEAR, x, np.arange(10.0), init=[0.0, 1.0])

    def test_non_convergence_reports_best(self):
        x = GRIDS["exponential_decay"]
        y = ft.model_exponential([8.0, 1.0, 0.1], x)
        res = ft.fit(ft.EXPONENTIAL, x, y, init=[3.0, 0.5, 0.0], max_iter=2)
        assert not res.converged
        assert res.chi2 <= res.chi2_history[0]

    def test_input_checks(self):
        with pytest.raises(InputError):
            ft.fit(ft.LINEAR, [1.0], [1.0])
        with pytest.raises(InputError):
            ft.fit(ft.LINEAR, [1.0, 2.0], [1.0, 2.0], init=[np.nan, 1.0])
        with pytest.raises(InputError):
            ft.synthetic(ft.LINEAR, [0, 1], [1.0], 0.1, seed=None)

    def test_seeded_noise_reproducible(self):
        a = ft.synthetic(ft.LINEAR, [0, 1], np.arange(5.0), 0.1, seed=4)
        b = ft.synthetic(ft.LINEAR, [0, 1], np.arange(5.0), 0.1, seed=4)
        np.testing.assert_array_equal(a, b)


class TestRecovery:
    def test_q_from_noisy_spectrum(self):
        x0, q = 637.0, 9900.0
        fwhm = x0 / q
        x = np.linspace(x0 - 2.5 * fwhm, x0 + 2.5 * fwhm, 200)
        y = ft.synthetic(ft.LORENTZIAN, [x0, fwhm, 1.0, 0.0], x, 0.03, seed=0)
        res = ft.fit(ft.LORENTZIAN, x, y)
        assert ft.lorentzian_q(res.params) == pytest.approx(q, abs=400)
        assert 100 <= ft.lorentzian_q_sigma(res) <= 400

    @pytest.mark.parametrize("tau", [6.7, 18.4])
    def test_lifetime(self, tau):
        t = np.linspace(0, 5 * tau, 300)
        clean = ft.model_exponential([tau, 1.0, 0.0], t)
        sigma = 0.05 * clean
        y = clean + np.random.default_rng(1).normal(0, 1, t.size) * sigma
        res = ft.fit(ft.EXPONENTIAL, t, y, weights=1 / sigma**2)
        assert res.params[0] == pytest.approx(tau, rel=0.03)

    def test_rabi_beat_from_spin_generator(self):
        p = sd.SpinParams(t2_prime=10.0)
        t = np.linspace(0, 4, 801)
        s = sd.rabi_signal(5.0, p, p.a_hyperfine / 2, t)
        s = s + np.random.default_rng(0).normal(0, 0.02, t.size)
        res = ft.fit(ft.RABI_BEAT, t, s)
        assert res.params[0] == pytest.approx(5.000, rel=0.01)
        assert res.params[1] == pytest.approx(5.857, rel=0.01)

    @given(st.integers(0, 2**31))
    @settings(max_examples=10, deadline=None)
    def test_guess_lorentzian_converges(self, seed):
        x = GRIDS["lorentzian"]
        y = ft.synthetic(ft.LORENTZIAN, [0.3, 0.8, 1.0, 0.0], x, 0.02, seed=seed)
        res = ft.fit(ft.LORENTZIAN, x, y)
        assert res.params[0] == pytest.approx(0.3, abs=0.05)
