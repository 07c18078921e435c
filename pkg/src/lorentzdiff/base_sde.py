"""Coordinate-chart integrator of the relativistic phase-space diffusion.

The state is a point of the unit tangent bundle of a warped product
(-dt^2 + alpha(t)^2 fiber), kept in chart coordinates (t, x, tdot, xdot)
with x ambient-extrinsic for curved fibers.  The velocity obeys an Ito
equation whose martingale part has the correlated bracket

    <dM^mu, dM^nu> = (xidot^mu xidot^nu + g^{mu nu}) ds,

a singular covariance whose kernel contains the metric dual of the
velocity, so the noise never moves the state off the mass shell to first
order.  Steps are plain Euler-Maruyama followed by reprojection onto the
constraints (weak order one; the verification targets are laws, not
paths).

This integrator is the ground truth that the group-lift machinery is
cross-validated against.
"""

import numpy as np

from .errors import (DimensionError, DomainError, PathAborted, StateInvalid,
                     StepRejected)
from .rng import ROLE_BASE, EnsembleBlocks, GaussianBlocks
from .spacetime import SpaceTimeSpec

ONSHELL_TOL = 1e-6
CLOCK_CAP = 1e12
MAX_HALVINGS = 20


def _as_chart(spec):
    if spec.kind == "minkowski":
        return spec.as_rw()
    if spec.kind == "rw":
        return spec
    raise DomainError("kind %r has no coordinate chart; use the frame "
                      "flow" % (spec.kind,))


class PhaseState:
    """Chart point and velocity (t, x, tdot, xdot) at proper time s."""

    def __init__(self, spec, t, tdot, x, xdot, s=0.0):
        self.spec = spec
        self.t = float(t)
        self.tdot = float(tdot)
        self.x = np.asarray(x, float).copy()
        self.xdot = np.asarray(xdot, float).copy()
        self.s = float(s)
        rw = _as_chart(spec)
        if self.x.shape != (rw.nx,) or self.xdot.shape != (rw.nx,):
            raise DimensionError("spatial parts need %d components" % rw.nx)

    @classmethod
    def default_start(cls, spec):
        """Deterministic initial condition: t=1, tdot=sqrt(2), base point
        of the fiber, velocity along the first tangent direction."""
        rw = _as_chart(spec)
        nx = rw.nx
        x = np.zeros(nx)
        e = np.zeros(nx)
        if rw.fiber == "flat":
            e[0] = 1.0
        else:
            x[0] = 1.0
            e[1] = 1.0
        a = rw.warp.alpha(1.0)
        return cls(spec, 1.0, np.sqrt(2.0), x, e / a, 0.0)

    def fiber_speed_sq(self):
        """<xdot, xdot> in the fiber's ambient bilinear form."""
        rw = _as_chart(self.spec)
        signs = rw.fiber_form().signs
        return float(np.sum(signs * self.xdot * self.xdot))

    def pseudo_norm(self):
        """g(xidot, xidot); should sit at -1."""
        rw = _as_chart(self.spec)
        a2 = float(rw.warp.alpha(self.t)) ** 2
        return -self.tdot ** 2 + a2 * self.fiber_speed_sq()

    def constraint_defects(self):
        """(on-shell defect, fiber defect, tangency defect)."""
        rw = _as_chart(self.spec)
        shell = abs(self.pseudo_norm() + 1.0)
        if rw.fiber == "flat":
            return shell, 0.0, 0.0
        signs = rw.fiber_form().signs
        qxx = float(np.sum(signs * self.x * self.x))
        target = 1.0 if rw.fiber == "sphere" else -1.0
        fiber = abs(qxx - target)
        tangent = abs(float(np.sum(signs * self.x * self.xdot)))
        return shell, fiber, tangent

    def validate(self, tol=ONSHELL_TOL):
        shell, fiber, tangent = self.constraint_defects()
        if shell > tol or fiber > tol or tangent > tol:
            raise StateInvalid(
                "state off constraints: shell %.3g fiber %.3g tangent %.3g"
                % (shell, fiber, tangent))
        if self.tdot <= 0:
            raise StateInvalid("tdot must be positive")

    def copy(self):
        return PhaseState(self.spec, self.t, self.tdot, self.x, self.xdot,
                          self.s)

    def __repr__(self):
        return ("PhaseState(s=%.4g, t=%.6g, tdot=%.6g)"
                % (self.s, self.t, self.tdot))


def _covariance_arrays(rw, t, tdot, x, xdot):
    """Bracket matrices (batch, n, n) at the given chart states."""
    a2 = np.asarray(rw.warp.alpha(t), float) ** 2
    xi = np.concatenate([tdot[..., None], xdot], axis=-1)
    c = xi[..., :, None] * xi[..., None, :]
    c[..., 0, 0] -= 1.0
    nx = rw.nx
    if rw.fiber == "flat":
        idx = np.arange(1, nx + 1)
        c[..., idx, idx] += 1.0 / a2[..., None]
    elif rw.fiber == "sphere":
        proj = np.eye(nx) - x[..., :, None] * x[..., None, :]
        c[..., 1:, 1:] += proj / a2[..., None, None]
    else:
        signs = rw.fiber_form().signs
        proj = np.diag(signs) + x[..., :, None] * x[..., None, :]
        c[..., 1:, 1:] += proj / a2[..., None, None]
    return c


def _noise_factor(c):
    """Square-root factor L with L L^T = c, by eigendecomposition.

    The bracket is singular by construction (Cholesky would fail); small
    negative eigenvalues from roundoff are clipped, and eigenvalues below
    a relative floor are zeroed outright so no roundoff dust injects
    noise along the exact null directions.
    """
    w, v = np.linalg.eigh(c)
    w = np.clip(w, 0.0, None)
    wmax = np.max(w, axis=-1, keepdims=True)
    w = np.where(w < 1e-12 * np.maximum(wmax, 1e-300), 0.0, w)
    return v * np.sqrt(w)[..., None, :]


def noise_covariance(spec, state):
    """Bracket matrix of the velocity martingale at one state.

    Symmetric positive semi-definite of rank d.  The kernel contains the
    metric dual g xidot; in the flat chart that is the whole kernel, the
    ambient-extrinsic curved carriers add the constraint normal.
    """
    state.validate()
    rw = _as_chart(spec)
    c = _covariance_arrays(rw, np.array([state.t]),
                           np.array([state.tdot]), state.x[None],
                           state.xdot[None])[0]
    return c


def _renormalize_arrays(rw, t, tdot, x, xdot):
    """Project a batch back onto the constraints.

    Returns updated (tdot, x, xdot, ok); paths failing the positivity
    checks (chart time, causal character, time orientation) get ok=False
    and carry their unprojected values.
    """
    ok = t > 0
    if rw.fiber == "sphere":
        nrm = np.linalg.norm(x, axis=-1)
        ok = ok & (nrm > 1e-8)
        x = x / np.where(ok, nrm, 1.0)[..., None]
        xdot = xdot - np.sum(x * xdot, axis=-1)[..., None] * x
        fib_sq = np.sum(xdot * xdot, axis=-1)
    elif rw.fiber == "hyperbolic":
        signs = rw.fiber_form().signs
        q = np.sum(signs * x * x, axis=-1)
        ok = ok & (q < -1e-12) & (x[..., 0] > 0)
        x = x / np.sqrt(np.where(ok, -q, 1.0))[..., None]
        xdot = xdot + np.sum(signs * x * xdot, axis=-1)[..., None] * x
        fib_sq = np.sum(signs * xdot * xdot, axis=-1)
    else:
        fib_sq = np.sum(xdot * xdot, axis=-1)
    a2 = np.asarray(rw.warp.alpha(np.where(ok, t, 1.0)), float) ** 2
    qn = tdot * tdot - a2 * fib_sq
    ok = ok & (qn > 0) & (tdot > 0)
    scale = 1.0 / np.sqrt(np.where(ok, qn, 1.0))
    tdot = np.maximum(tdot * scale, 1.0)
    xdot = xdot * scale[..., None]
    return tdot, x, xdot, ok


def _step_arrays(rw, sigma, t, tdot, x, xdot, ds, eta):
    """One Euler-Maruyama step on a batch; returns state + ok mask."""
    a = np.asarray(rw.warp.alpha(t), float)
    da = np.asarray(rw.warp.dalpha(t), float)
    hub = da / a
    signs = rw.fiber_form().signs
    fib_sq = np.sum(signs * xdot * xdot, axis=-1)
    L = _noise_factor(_covariance_arrays(rw, t, tdot, x, xdot))
    kick = sigma * np.sqrt(ds) * np.einsum("...ij,...j->...i", L, eta)
    rel = 0.5 * rw.d * sigma * sigma
    drift_t = -a * da * fib_sq + rel * tdot
    drift_x = -2.0 * hub[..., None] * tdot[..., None] * xdot \
        + rel * xdot
    if rw.kappa:
        drift_x = drift_x - rw.kappa * fib_sq[..., None] * x
    t_new = t + tdot * ds
    x_new = x + xdot * ds
    tdot_new = tdot + drift_t * ds + kick[..., 0]
    xdot_new = xdot + drift_x * ds + kick[..., 1:]
    tdot_new, x_new, xdot_new, ok = _renormalize_arrays(
        rw, t_new, tdot_new, x_new, xdot_new)
    return t_new, tdot_new, x_new, xdot_new, ok


def em_step(spec, state, ds, gaussians):
    """Advance one state by ds using the supplied standard normals.

    The gaussian vector must have one entry per chart dimension (1 + nx).
    Raises StepRejected when the projected state fails the positivity
    checks; the caller is expected to halve ds.
    """
    if ds <= 0:
        raise DomainError("ds must be positive")
    rw = _as_chart(spec)
    eta = np.asarray(gaussians, float)
    if eta.shape != (1 + rw.nx,):
        raise DimensionError("need %d gaussians" % (1 + rw.nx))
    t, tdot, x, xdot, ok = _step_arrays(
        rw, spec.sigma, np.array([state.t]), np.array([state.tdot]),
        state.x[None], state.xdot[None], ds, eta[None])
    if not ok[0]:
        raise StepRejected("projection failed at s=%.6g (t=%.3g)"
                           % (state.s, t[0]))
    return PhaseState(spec, t[0], tdot[0], x[0], xdot[0], state.s + ds)


def _clock_rates(rw, t, tdot):
    """Integrands of the two clocks: time-change C and fiber distance D.

    The C integrand 1/(tdot^2 - 1) is capped (it diverges where the path
    is momentarily at rest in the chart); D's is regular.
    """
    gap = np.maximum(tdot * tdot - 1.0, 0.0)
    a = np.asarray(rw.warp.alpha(t), float)
    with np.errstate(divide="ignore"):
        rate_c = np.minimum(1.0 / np.maximum(gap, 1.0 / CLOCK_CAP),
                            CLOCK_CAP)
    return rate_c, np.sqrt(gap) / a


class PathRecord:
    """Sampled states and accumulated clocks of one simulated path."""

    def __init__(self, s, t, tdot, x, xdot, C, D, aborted=False,
                 rejections=0):
        self.s = np.asarray(s)
        self.t = np.asarray(t)
        self.tdot = np.asarray(tdot)
        self.x = np.asarray(x)
        self.xdot = np.asarray(xdot)
        self.C = np.asarray(C)
        self.D = np.asarray(D)
        self.aborted = bool(aborted)
        self.rejections = int(rejections)

    def shell_defect_max(self, spec):
        rw = _as_chart(spec)
        a2 = np.asarray(rw.warp.alpha(self.t), float) ** 2
        signs = rw.fiber_form().signs
        fib = np.sum(signs * self.xdot * self.xdot, axis=-1)
        return float(np.max(np.abs(-self.tdot ** 2 + a2 * fib + 1.0)))

    def to_rows(self):
        rows = []
        for i in range(self.s.size):
            rows.append({"s": float(self.s[i]), "t": float(self.t[i]),
                         "tdot": float(self.tdot[i]),
                         "x": [float(v) for v in self.x[i]],
                         "xdot": [float(v) for v in self.xdot[i]],
                         "C": float(self.C[i]), "D": float(self.D[i])})
        return rows


def simulate_path(spec, initial, ds, s_max, seed, record_every=1,
                  path_index=0):
    """Integrate one path; deterministic in (spec, initial, ds, seed).

    On a rejected step the trial step is halved and retried with fresh
    noise; after 20 consecutive halvings the path is abandoned and
    PathAborted carries the partial record.
    """
    if s_max <= 0 or ds <= 0:
        raise DomainError("need positive ds and s_max")
    if record_every < 1:
        raise DomainError("record_every must be >= 1")
    rw = _as_chart(spec)
    state = initial.copy()
    state.validate()
    blocks = GaussianBlocks(seed, path_index, ROLE_BASE, 1 + rw.nx)
    samples = [state.copy()]
    C = [0.0]
    D = [0.0]
    c_acc = 0.0
    d_acc = 0.0
    rate_c, rate_d = _clock_rates(rw, np.array([state.t]),
                                  np.array([state.tdot]))
    rejections = 0
    s0 = state.s
    # step in macro intervals of exactly ds (halving stays inside an
    # interval) so the unrejected path is bit-identical to the batched
    # integrator, which uses a fixed step
    n_full = int(np.floor(s_max / ds + 1e-9))
    widths = [ds] * n_full
    rem = s_max - n_full * ds
    if rem > 1e-9 * ds:
        widths.append(rem)
    slack = 1e-7 * min(ds, 1.0)
    for step, width in enumerate(widths, start=1):
        acc = 0.0
        halvings = 0
        while acc < width - slack:
            trial = min(ds / 2 ** halvings, width - acc)
            eta = blocks.next_step()
            try:
                new = em_step(spec, state, trial, eta)
            except StepRejected:
                rejections += 1
                halvings += 1
                if halvings > MAX_HALVINGS:
                    rec = _pack_record(samples, C, D, True, rejections)
                    raise PathAborted(
                        "step kept failing after %d halvings at s=%.6g"
                        % (MAX_HALVINGS, state.s), rec)
                continue
            halvings = 0
            acc += trial
            new_c, new_d = _clock_rates(rw, np.array([new.t]),
                                        np.array([new.tdot]))
            c_acc += 0.5 * (rate_c[0] + new_c[0]) * trial
            d_acc += 0.5 * (rate_d[0] + new_d[0]) * trial
            rate_c, rate_d = new_c, new_d
            state = new
        state.s = s0 + (step * ds if step <= n_full else s_max)
        if step % record_every == 0 or step == len(widths):
            samples.append(state.copy())
            C.append(c_acc)
            D.append(d_acc)
    return _pack_record(samples, C, D, False, rejections)


def _pack_record(samples, C, D, aborted, rejections):
    return PathRecord(
        s=[st.s for st in samples], t=[st.t for st in samples],
        tdot=[st.tdot for st in samples],
        x=np.stack([st.x for st in samples]),
        xdot=np.stack([st.xdot for st in samples]),
        C=C, D=D, aborted=aborted, rejections=rejections)


class EnsembleRecord:
    """Record arrays over (path, sample); aborted paths hold NaN past
    their last good sample."""

    def __init__(self, s, t, tdot, x, xdot, C, D, aborted):
        self.s = s
        self.t = t
        self.tdot = tdot
        self.x = x
        self.xdot = xdot
        self.C = C
        self.D = D
        self.aborted = aborted


def simulate_ensemble(spec, initial, ds, s_max, n_paths, seed,
                      record_every=100):
    """Batched integration of n_paths independent paths.

    Noise streams are per path, so path i here is bit-identical to
    simulate_path(..., path_index=i) as long as no step is rejected.
    Rejected paths are frozen (flagged in ``aborted``, NaN afterwards)
    rather than step-halved; at the step sizes used for verification
    rejections do not occur.
    """
    rw = _as_chart(spec)
    initial.validate()
    n_steps = int(round(s_max / ds))
    t = np.full(n_paths, initial.t)
    tdot = np.full(n_paths, initial.tdot)
    x = np.tile(initial.x, (n_paths, 1))
    xdot = np.tile(initial.xdot, (n_paths, 1))
    alive = np.ones(n_paths, bool)
    c_acc = np.zeros(n_paths)
    d_acc = np.zeros(n_paths)
    rate_c, rate_d = _clock_rates(rw, t, tdot)
    width = 1 + rw.nx
    # keep the pre-generated noise cache under ~64 MB
    cache_steps = int(max(1, min(1024, 8e6 // (n_paths * width))))
    blocks = EnsembleBlocks(seed, n_paths, ROLE_BASE, width,
                            block_steps=cache_steps)
    rec_s = [0.0]
    rec = {key: [arr.copy()] for key, arr in
           [("t", t), ("tdot", tdot), ("x", x), ("xdot", xdot),
            ("C", c_acc), ("D", d_acc)]}
    for step in range(1, n_steps + 1):
        eta = blocks.next_step()
        if alive.all():
            t_in, tdot_in, x_in, xdot_in = t, tdot, x, xdot
        else:
            # dead paths hold NaN; feed the factorization a safe
            # placeholder so LAPACK never sees one
            t_in = np.where(alive, t, initial.t)
            tdot_in = np.where(alive, tdot, initial.tdot)
            x_in = np.where(alive[:, None], x, initial.x)
            xdot_in = np.where(alive[:, None], xdot, initial.xdot)
        t_new, tdot_new, x_new, xdot_new, ok = _step_arrays(
            rw, spec.sigma, t_in, tdot_in, x_in, xdot_in, ds, eta)
        good = alive & ok
        t = np.where(good, t_new, np.where(alive, np.nan, t))
        tdot = np.where(good, tdot_new, np.where(alive, np.nan, tdot))
        x = np.where(good[:, None], x_new,
                     np.where(alive[:, None], np.nan, x))
        xdot = np.where(good[:, None], xdot_new,
                        np.where(alive[:, None], np.nan, xdot))
        with np.errstate(invalid="ignore"):
            new_c, new_d = _clock_rates(rw, np.where(good, t, 1.0),
                                        np.where(good, tdot, 2.0))
            c_acc = np.where(good, c_acc + 0.5 * (rate_c + new_c) * ds,
                             np.where(alive, np.nan, c_acc))
            d_acc = np.where(good, d_acc + 0.5 * (rate_d + new_d) * ds,
                             np.where(alive, np.nan, d_acc))
        rate_c, rate_d = new_c, new_d
        alive = good
        if step % record_every == 0 or step == n_steps:
            rec_s.append(step * ds)
            for key, arr in [("t", t), ("tdot", tdot), ("x", x),
                             ("xdot", xdot), ("C", c_acc), ("D", d_acc)]:
                rec[key].append(arr.copy())
    return EnsembleRecord(
        s=np.asarray(rec_s),
        t=np.stack(rec["t"], axis=1), tdot=np.stack(rec["tdot"], axis=1),
        x=np.stack(rec["x"], axis=1), xdot=np.stack(rec["xdot"], axis=1),
        C=np.stack(rec["C"], axis=1), D=np.stack(rec["D"], axis=1),
        aborted=~alive)
