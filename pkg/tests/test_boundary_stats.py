"""Statistics layer: slopes, tails, KS, medians, verdicts."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lorentzdiff import DomainError, InsufficientData
from lorentzdiff.boundary_stats import (REGISTRY, cauchy_tail, load_thresholds,
                                        lyapunov, median_ci,
                                        overall_exit_code, two_start_ks,
                                        verdict_suite)


class TestLyapunov:

    def test_exact_linear_recovery(self):
        s = np.linspace(0.0, 50.0, 400)
        series = 0.5 * s + 3.0
        slope, half = lyapunov(s, series)
        assert np.isclose(float(slope), 0.5, atol=1e-12)
        assert float(half) <= 1e-10

    def test_batched_paths(self):
        s = np.linspace(0.0, 20.0, 150)
        rates = np.array([0.1, 0.7, -0.3])
        series = rates[:, None] * s
        slope, half = lyapunov(s, series)
        assert np.allclose(slope, rates, atol=1e-12)
        assert slope.shape == (3,)

    def test_window_restricts_to_tail(self):
        # a transient in the first half must not pollute the fit
        s = np.linspace(0.0, 40.0, 300)
        series = np.where(s < 20.0, np.sin(5.0 * s), 2.0 * s)
        slope, _ = lyapunov(s, series, window=0.4)
        assert np.isclose(float(slope), 2.0, atol=1e-9)

    def test_noisy_slope_has_width(self):
        gen = np.random.Generator(np.random.Philox(key=[3, 1]))
        s = np.linspace(0.0, 30.0, 200)
        series = 1.2 * s + gen.standard_normal(200)
        slope, half = lyapunov(s, series)
        assert abs(float(slope) - 1.2) < 0.1
        assert 0.0 < float(half) < 0.2

    def test_insufficient_samples(self):
        with pytest.raises(InsufficientData):
            lyapunov(np.linspace(0, 1, 8), np.zeros(8))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.1, 5.0), st.floats(-2.0, 2.0))
    def test_scale_covariance(self, c, rate):
        s = np.linspace(0.0, 10.0, 60)
        series = rate * s
        slope, _ = lyapunov(s, series)
        scaled, _ = lyapunov(s, c * series)
        assert np.isclose(float(scaled), c * float(slope),
                          rtol=1e-9, atol=1e-9)


class TestCauchyTail:

    def test_constant_series_is_zero(self):
        s = np.linspace(0.0, 10.0, 50)
        series = np.ones((4, 50, 3))
        assert np.array_equal(cauchy_tail(s, series), np.zeros(4))

    def test_converging_series_small(self):
        s = np.linspace(0.0, 10.0, 100)
        vec = np.array([1.0, -2.0, 0.5])
        series = np.exp(-s)[:, None] * vec
        val = cauchy_tail(s, series)
        # first tail sample dominates: exp(-s_tail0) * |vec|
        bound = np.exp(-5.0) * np.linalg.norm(vec) * 1.05
        assert float(val) < bound

    def test_angle_metric(self):
        s = np.linspace(0.0, 1.0, 21)  # grid hits the split point exactly
        angles = np.linspace(0.0, np.pi / 2.0, 21)
        series = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        val = cauchy_tail(s, series, metric="angle")
        assert np.isclose(float(val), np.pi / 4.0, atol=1e-9)

    def test_matrix_metric(self):
        s = np.linspace(0.0, 1.0, 16)
        series = np.zeros((16, 2, 2))
        series[:, 0, 1] = np.linspace(0.0, 1.0, 16)
        val = cauchy_tail(s, series, metric="matrix")
        assert np.isclose(float(val), 0.5, atol=0.04)

    def test_scalar_metric(self):
        s = np.linspace(0.0, 1.0, 16)
        val = cauchy_tail(s, np.linspace(0.0, 2.0, 16), metric="abs")
        assert np.isclose(float(val), 1.0, atol=0.07)

    def test_insufficient_tail(self):
        with pytest.raises(InsufficientData):
            cauchy_tail(np.linspace(0, 1, 5), np.zeros((5, 2)), split=0.2)

    def test_unknown_metric(self):
        with pytest.raises(DomainError):
            cauchy_tail(np.linspace(0, 1, 30), np.zeros((30, 2)),
                        metric="chebyshev")


class TestTwoStartKS:

    def test_identical_samples(self):
        a = np.linspace(0.0, 1.0, 64)
        assert two_start_ks(a, a.copy()) == 0.0

    def test_shifted_uniform_grids_give_half(self):
        n = 100
        a = (np.arange(n) + 0.5) / n           # uniform grid on (0, 1)
        b = (np.arange(n) + 50.5) / n          # same grid on (0.5, 1.5)
        assert two_start_ks(a, b) == 0.5

    def test_disjoint_supports(self):
        a = np.linspace(0.0, 1.0, 60)
        b = np.linspace(5.0, 6.0, 60)
        assert two_start_ks(a, b) == 1.0

    def test_needs_fifty_per_side(self):
        with pytest.raises(InsufficientData):
            two_start_ks(np.zeros(49), np.zeros(100))

    def test_permutation_invariant(self):
        gen = np.random.Generator(np.random.Philox(key=[5, 5]))
        a = gen.standard_normal(200)
        b = gen.standard_normal(200) + 0.3
        d1 = two_start_ks(a, b)
        d2 = two_start_ks(gen.permutation(a), gen.permutation(b))
        assert d1 == d2


class TestMedianCI:

    def test_odd_sample_median(self):
        med, lo, hi = median_ci(np.arange(101.0))
        assert med == 50.0
        assert lo < med < hi

    def test_ci_tightens_with_n(self):
        gen = np.random.Generator(np.random.Philox(key=[5, 7]))
        small = median_ci(gen.standard_normal(50))
        large = median_ci(gen.standard_normal(5000))
        assert (large[2] - large[1]) < (small[2] - small[1])

    def test_permutation_invariant(self):
        gen = np.random.Generator(np.random.Philox(key=[5, 8]))
        v = gen.standard_normal(301)
        assert median_ci(v) == median_ci(gen.permutation(v))

    def test_empty_raises(self):
        with pytest.raises(InsufficientData):
            median_ci([])


class TestVerdicts:

    def test_flat_registry_is_exactly_pinned(self):
        assert set(REGISTRY["InfFlatLine"]) == {
            "lyapunov-tdot", "lyapunov-alpha", "theta-converges",
            "delta-converges", "pseudo-norm"}

    def test_healthy_flat_stats_pass(self):
        stats = {"tdot_slope_median": 0.66, "alpha_slope_median": 0.33,
                 "theta_tail_median": 0.01, "delta_tail_median": 0.02,
                 "pseudo_norm_max": 2e-8}
        out = verdict_suite("InfFlatLine", stats)
        assert all(v["verdict"] == "pass" for v in out.values())
        assert overall_exit_code(out) == 0

    def test_zeroed_slopes_fail(self):
        # negative control: synthetic ensemble with slopes zeroed out
        stats = {"tdot_slope_median": 0.0, "alpha_slope_median": 0.0,
                 "theta_tail_median": 0.01, "delta_tail_median": 0.02,
                 "pseudo_norm_max": 2e-8}
        out = verdict_suite("InfFlatLine", stats)
        assert out["lyapunov-tdot"]["verdict"] == "fail"
        assert out["lyapunov-alpha"]["verdict"] == "fail"
        assert overall_exit_code(out) == 1

    def test_missing_stat_is_inconclusive(self):
        stats = {"tdot_slope_median": 0.66}
        out = verdict_suite("InfFlatLine", stats)
        assert out["theta-converges"]["verdict"] == "inconclusive"
        assert overall_exit_code(out) == 2

    def test_model_registries(self):
        ds = verdict_suite("desitter", {"beta_slope_ci_lo": 0.2,
                                        "n_tail_q90": 1e-4,
                                        "theta_ks": 0.03})
        assert all(v["verdict"] == "pass" for v in ds.values())
        ads = verdict_suite("antidesitter", {"chamber_ordering_ok": False,
                                             "n_tail_q90": 1e-4,
                                             "isotropy_ratio_median": 0.01})
        assert ads["chamber-ordering"]["verdict"] == "fail"

    def test_unknown_regime(self):
        with pytest.raises(DomainError):
            verdict_suite("Oscillating", {})

    def test_thresholds_file_loads(self):
        table = load_thresholds()
        assert table["version"] == 1
        assert table["checks"]["lyapunov-tdot"]["band"] == [0.60, 0.73]
