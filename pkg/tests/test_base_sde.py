"""Tests for the coordinate-chart phase-space integrator."""

import json

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from lorentzdiff import base_sde as B
from lorentzdiff.errors import (DimensionError, DomainError, PathAborted,
                                StateInvalid, StepRejected)
from lorentzdiff.spacetime import SpaceTimeSpec, WarpFunction


def make_state(spec, seed=0, speed=0.8):
    """Random on-shell state with exact fiber tangency."""
    gen = np.random.Generator(np.random.Philox(key=[seed, 5]))
    rw = spec.as_rw() if spec.kind == "minkowski" else spec
    t = 1.0 + gen.uniform(0.0, 2.0)
    nx = rw.nx
    if rw.fiber == "flat":
        x = gen.standard_normal(nx)
        u = gen.standard_normal(nx)
    elif rw.fiber == "sphere":
        x = gen.standard_normal(nx)
        x = x / np.linalg.norm(x)
        u = gen.standard_normal(nx)
        u = u - np.dot(x, u) * x
    else:
        y = 0.5 * gen.standard_normal(nx - 1)
        x = np.concatenate([[np.sqrt(1.0 + np.sum(y * y))], y])
        signs = rw.fiber_form().signs
        u = gen.standard_normal(nx)
        u = u + np.sum(signs * x * u) * x
    signs = rw.fiber_form().signs
    nrm = np.sqrt(np.sum(signs * u * u))
    u = u / nrm * speed
    a = float(rw.warp.alpha(t))
    tdot = np.sqrt(1.0 + a * a * speed * speed)
    return B.PhaseState(spec, t, tdot, x, u)


SPECS = [
    SpaceTimeSpec("minkowski", 3, sigma=1.0),
    SpaceTimeSpec("rw", 3, "flat", WarpFunction.power(0.5), sigma=1.0),
    SpaceTimeSpec("rw", 3, "sphere", WarpFunction.power(2.0), sigma=1.0),
    SpaceTimeSpec("rw", 3, "hyperbolic", WarpFunction.power(0.5),
                  sigma=1.0),
]


class TestPhaseState:

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind + s.fiber
                             if s.kind == "rw" else s.kind)
    def test_default_start_is_on_shell(self, spec):
        st = B.PhaseState.default_start(spec)
        st.validate()
        assert st.pseudo_norm() == pytest.approx(-1.0, abs=1e-12)
        assert st.tdot == pytest.approx(np.sqrt(2.0))

    def test_random_states_validate(self):
        for i, spec in enumerate(SPECS):
            make_state(spec, seed=i).validate()

    def test_wrong_shapes(self):
        spec = SPECS[0]
        with pytest.raises(DimensionError):
            B.PhaseState(spec, 1.0, 1.5, np.zeros(2), np.zeros(2))

    def test_off_shell_rejected(self):
        spec = SPECS[0]
        st = B.PhaseState(spec, 1.0, 5.0, np.zeros(3), np.zeros(3))
        with pytest.raises(StateInvalid):
            st.validate()

    def test_curved_kinds_have_no_chart(self):
        ds = SpaceTimeSpec("desitter", 3)
        with pytest.raises(DomainError):
            B.PhaseState.default_start(ds)


class TestNoiseCovariance:

    def test_rest_frame_minkowski(self):
        spec = SPECS[0]
        st = B.PhaseState(spec, 1.0, 1.0, np.zeros(3), np.zeros(3))
        c = B.noise_covariance(spec, st)
        assert np.allclose(c, np.diag([0.0, 1.0, 1.0, 1.0]), atol=1e-14)

    def test_boosted_kernel_vector(self):
        spec = SPECS[0]
        r = 1.3
        st = B.PhaseState(spec, 1.0, np.cosh(r),
                          np.zeros(3), [np.sinh(r), 0.0, 0.0])
        c = B.noise_covariance(spec, st)
        gxi = np.array([-np.cosh(r), np.sinh(r), 0.0, 0.0])
        assert np.max(np.abs(c @ gxi)) < 1e-12

    @pytest.mark.parametrize("idx", range(4))
    def test_rank_and_positivity(self, idx):
        spec = SPECS[idx]
        st = make_state(spec, seed=10 + idx)
        c = B.noise_covariance(spec, st)
        assert np.max(np.abs(c - c.T)) < 1e-14
        w = np.linalg.eigvalsh(c)
        assert w[0] >= -1e-10
        sv = np.linalg.svd(c, compute_uv=False)
        rank = int(np.sum(sv > 1e-8))
        assert rank == spec.d
        # kernel: the metric dual of the velocity, plus the constraint
        # normal for the ambient-extrinsic curved carriers
        expected_null = c.shape[0] - spec.d
        assert int(np.sum(np.abs(w) < 1e-8)) == expected_null

    def test_off_shell_raises(self):
        spec = SPECS[0]
        st = B.PhaseState(spec, 1.0, 3.0, np.zeros(3), np.zeros(3))
        with pytest.raises(StateInvalid):
            B.noise_covariance(spec, st)

    @pytest.mark.parametrize("idx", range(4))
    def test_noise_is_g_orthogonal_to_velocity(self, idx):
        spec = SPECS[idx]
        st = make_state(spec, seed=20 + idx)
        rw = spec.as_rw() if spec.kind == "minkowski" else spec
        c = B.noise_covariance(spec, st)
        L = B._noise_factor(c)
        a2 = float(rw.warp.alpha(st.t)) ** 2
        gdiag = np.concatenate([[-1.0], a2 * rw.fiber_form().signs])
        gxi = gdiag * np.concatenate([[st.tdot], st.xdot])
        assert np.linalg.norm(L.T @ gxi) < 1e-10


class TestEmStep:

    def test_minkowski_line(self):
        spec = SpaceTimeSpec("minkowski", 3, sigma=0.0)
        st = B.PhaseState.default_start(spec)
        eta = np.zeros(4)
        for _ in range(100):
            st = B.em_step(spec, st, 0.01, eta)
        assert st.t == pytest.approx(1.0 + np.sqrt(2.0), abs=1e-12)
        assert st.x[0] == pytest.approx(1.0, abs=1e-12)
        assert st.tdot == pytest.approx(np.sqrt(2.0), abs=1e-14)

    def test_gaussian_count_checked(self):
        spec = SPECS[0]
        st = B.PhaseState.default_start(spec)
        with pytest.raises(DimensionError):
            B.em_step(spec, st, 0.01, np.zeros(3))
        with pytest.raises(DomainError):
            B.em_step(spec, st, -0.01, np.zeros(4))

    def test_shell_defect_over_many_steps(self):
        # at moderate velocities the absolute on-shell defect sits at
        # machine level; it scales like tdot^2 * eps once paths boost up
        spec = SPECS[0]
        rec = B.simulate_path(spec, B.PhaseState.default_start(spec),
                              5e-4, 5.0, seed=3, record_every=1)
        assert rec.shell_defect_max(spec) < 1e-8

    def test_forced_rejection(self):
        spec = SPECS[0]
        st = B.PhaseState.default_start(spec)
        with pytest.raises(StepRejected):
            B.em_step(spec, st, 1.0, np.array([-30.0, -42.0, 0.0, 0.0]))

    @pytest.mark.parametrize("idx", [2, 3])
    def test_fiber_constraints_per_step(self, idx):
        spec = SPECS[idx]
        st = make_state(spec, seed=30 + idx)
        gen = np.random.Generator(np.random.Philox(key=[8, idx]))
        worst_fiber = 0.0
        worst_tan = 0.0
        for _ in range(200):
            st = B.em_step(spec, st, 1e-3, gen.standard_normal(5))
            _, fiber, tangent = st.constraint_defects()
            worst_fiber = max(worst_fiber, fiber)
            worst_tan = max(worst_tan, tangent)
        assert worst_fiber < 1e-8
        assert worst_tan < 1e-8


def geodesic_oracle(spec, st, s_max):
    """High-order deterministic integration of the sigma=0 system."""
    rw = spec

    def rhs(s, y):
        t, td = y[0], y[1]
        nx = rw.nx
        x = y[2:2 + nx]
        xd = y[2 + nx:]
        a = float(rw.warp.alpha(t))
        da = float(rw.warp.dalpha(t))
        signs = rw.fiber_form().signs
        fib = float(np.sum(signs * xd * xd))
        acc_t = -a * da * fib
        acc_x = -2.0 * (da / a) * td * xd
        if rw.kappa:
            acc_x = acc_x - rw.kappa * fib * x
        return np.concatenate([[td, acc_t], xd, acc_x])

    y0 = np.concatenate([[st.t, st.tdot], st.x, st.xdot])
    return solve_ivp(rhs, [0.0, s_max], y0, rtol=1e-11, atol=1e-12,
                     dense_output=True)


class TestGeodesicOracle:

    def setup_method(self):
        self.spec = SpaceTimeSpec("rw", 3, "flat", WarpFunction.power(0.5),
                                  sigma=0.0)
        self.start = B.PhaseState.default_start(self.spec)
        a0 = float(self.spec.warp.alpha(1.0))
        self.K = (a0 ** 2 * np.linalg.norm(self.start.xdot)) ** 2

    def test_oracle_preserves_first_integral(self):
        sol = geodesic_oracle(self.spec, self.start, 10.0)
        s = np.linspace(0.0, 10.0, 200)
        y = sol.sol(s)
        t, td = y[0], y[1]
        a2 = self.spec.warp.alpha(t) ** 2
        assert np.max(np.abs(td ** 2 - 1.0 - self.K / a2)) < 1e-6

    def test_em_first_integral_drift_is_first_order(self):
        # measured: defect = 0.94 * ds over s in [0, 10]
        defects = []
        for ds in (4e-3, 1e-3):
            rec = B.simulate_path(self.spec, self.start, ds, 10.0, seed=0,
                                  record_every=50)
            a2 = self.spec.warp.alpha(rec.t) ** 2
            defects.append(np.max(np.abs(rec.tdot ** 2 - 1.0
                                         - self.K / a2)))
        assert defects[1] < 2e-3
        ratio = defects[0] / defects[1]
        assert 3.2 < ratio < 4.8

    def test_em_matches_oracle(self):
        sol = geodesic_oracle(self.spec, self.start, 10.0)
        rec = B.simulate_path(self.spec, self.start, 1e-3, 10.0, seed=0,
                              record_every=1000)
        assert abs(rec.t[-1] - sol.y[0, -1]) < 5e-3
        assert abs(rec.tdot[-1] - sol.y[1, -1]) < 5e-3

    @pytest.mark.parametrize("fiber,warp", [
        ("sphere", WarpFunction.power(2.0)),
        ("hyperbolic", WarpFunction.power(0.5)),
    ])
    def test_curved_fiber_geodesics_match_oracle(self, fiber, warp):
        spec = SpaceTimeSpec("rw", 3, fiber, warp, sigma=0.0)
        st = B.PhaseState.default_start(spec)
        sol = geodesic_oracle(spec, st, 3.0)
        rec = B.simulate_path(spec, st, 1e-3, 3.0, seed=0,
                              record_every=500)
        nx = spec.nx
        assert abs(rec.t[-1] - sol.y[0, -1]) < 5e-3
        assert np.max(np.abs(rec.x[-1] - sol.y[2:2 + nx, -1])) < 5e-3


class TestSimulatePath:

    def test_determinism(self):
        spec = SPECS[1]
        st = B.PhaseState.default_start(spec)
        r1 = B.simulate_path(spec, st, 1e-3, 1.0, seed=9, record_every=100)
        r2 = B.simulate_path(spec, st, 1e-3, 1.0, seed=9, record_every=100)
        assert np.array_equal(r1.t, r2.t)
        assert np.array_equal(r1.xdot, r2.xdot)
        r3 = B.simulate_path(spec, st, 1e-3, 1.0, seed=9, record_every=100,
                             path_index=1)
        assert not np.array_equal(r1.t, r3.t)

    def test_clocks_nondecreasing(self):
        spec = SPECS[0]
        st = B.PhaseState.default_start(spec)
        rec = B.simulate_path(spec, st, 1e-3, 2.0, seed=4, record_every=50)
        assert np.all(np.diff(rec.C) >= 0)
        assert np.all(np.diff(rec.D) >= 0)
        assert rec.C[-1] > 0 and rec.D[-1] > 0

    def test_abort_after_persistent_rejection(self, monkeypatch):
        spec = SPECS[0]
        st = B.PhaseState.default_start(spec)

        def always_reject(*args, **kw):
            raise StepRejected("forced")

        monkeypatch.setattr(B, "em_step", always_reject)
        with pytest.raises(PathAborted) as err:
            B.simulate_path(spec, st, 1e-3, 1.0, seed=0)
        rec = err.value.record
        assert rec.aborted
        assert rec.s.size == 1
        assert rec.rejections == B.MAX_HALVINGS + 1

    def test_jsonl_rows(self):
        spec = SPECS[0]
        st = B.PhaseState.default_start(spec)
        rec = B.simulate_path(spec, st, 1e-2, 0.1, seed=1)
        rows = rec.to_rows()
        assert len(rows) == rec.s.size
        line = json.dumps(rows[-1])
        back = json.loads(line)
        assert set(back) == {"s", "t", "tdot", "x", "xdot", "C", "D"}
        assert len(back["x"]) == 3


class TestEnsemble:

    def test_matches_scalar_paths(self):
        spec = SPECS[1]
        st = B.PhaseState.default_start(spec)
        ens = B.simulate_ensemble(spec, st, 1e-3, 0.5, 3, seed=6,
                                  record_every=100)
        for i in range(3):
            solo = B.simulate_path(spec, st, 1e-3, 0.5, seed=6,
                                   record_every=100, path_index=i)
            assert np.array_equal(ens.t[i], solo.t)
            assert np.array_equal(ens.tdot[i], solo.tdot)
            assert np.array_equal(ens.xdot[i], solo.xdot)

    def test_size_independence(self):
        spec = SPECS[0]
        st = B.PhaseState.default_start(spec)
        big = B.simulate_ensemble(spec, st, 1e-3, 0.3, 5, seed=8,
                                  record_every=50)
        small = B.simulate_ensemble(spec, st, 1e-3, 0.3, 2, seed=8,
                                    record_every=50)
        assert np.array_equal(big.t[:2], small.t)
        assert np.array_equal(big.xdot[:2], small.xdot)

    def test_aborted_paths_frozen_as_nan(self):
        spec = SPECS[0]
        st = B.PhaseState.default_start(spec)
        ens = B.simulate_ensemble(spec, st, 0.25, 2.0, 200, seed=11,
                                  record_every=1)
        assert ens.aborted.any()
        assert not ens.aborted.all()
        dead = np.where(ens.aborted)[0][0]
        alivei = np.where(~ens.aborted)[0][0]
        assert np.isnan(ens.t[dead, -1])
        assert np.isfinite(ens.t[alivei]).all()

    def test_mean_tdot_grows(self):
        # the velocity's time component is expanding on average
        spec = SPECS[0]
        st = B.PhaseState.default_start(spec)
        ens = B.simulate_ensemble(spec, st, 1e-3, 5.0, 200, seed=12,
                                  record_every=1000)
        assert np.nanmean(ens.tdot[:, -1]) > st.tdot * 10

    def test_weak_order_one(self):
        # frozen measurement (seed 2024, N=1e5, s_max=0.75):
        # biases 0.04015, 0.02515, 0.01080 against the exact mean,
        # slope 0.947; the band is the contract, the values are pinned
        # by the seed
        spec = SPECS[0]
        st = B.PhaseState.default_start(spec)
        t_exact = 1.0 + np.sqrt(2.0) * (np.exp(1.5 * 0.75) - 1.0) / 1.5
        steps = np.array([0.03, 0.015, 0.0075])
        biases = []
        for ds in steps:
            ens = B.simulate_ensemble(spec, st, ds, 0.75, 100000,
                                      seed=2024, record_every=1000)
            biases.append(abs(np.nanmean(ens.t[:, -1]) - t_exact))
        slope = np.polyfit(np.log(steps), np.log(biases), 1)[0]
        assert 0.5 < slope < 1.5
