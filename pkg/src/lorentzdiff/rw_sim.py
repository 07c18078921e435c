"""Reduced simulation of the diffusion on expanding warped products.

The unit pseudo-norm relation splits the phase-space motion into a
two-dimensional temporal subdiffusion (t, tdot), two additive clocks

    Cdot = 1 / (tdot^2 - 1),        Ddot = sqrt(tdot^2 - 1) / alpha(t),

and a unit-tangent spatial process (x, Theta) on the fiber that is driven
only through those clocks: x moves with speed Ddot along Theta while
Theta performs a spherical Brownian motion run at speed Cdot.  This
module integrates the reduced system path by path and accumulates the
boundary functional of whichever asymptotic regime the warp profile puts
the space-time in:

* finite horizon: the limit point of x (and of Theta when the direction
  also freezes),
* infinite horizon, flat fiber: the asymptotic line datum (Theta, delta)
  with delta = x - Theta * A(t),
* infinite horizon, spherical fiber: the limit frame bhat whose first
  two columns span the asymptotic great circle,
* infinite horizon, hyperbolic fiber: the light-cone datum read off the
  horospherical coordinates (v, deltatilde, n).

Curved fibers are simulated through the group lift g = car * rot, where
rot collects the compact noise rotations and car the transport; the
hyperbolic infinite-horizon case replaces car by its horospherical
coordinates outright, because the boost coordinate grows like the
divergent clock D and the raw frame leaves float64 range long before the
functionals settle.
"""

import math

import numpy as np

from .boundary_stats import cauchy_tail
from .errors import (DimensionError, DomainError, InternalError,
                     StateInvalid, StepRejected, UnsupportedGroup)
from .iwasawa import decompose_ensemble
from .rng import ROLE_FRAME, ROLE_SPATIAL, ROLE_TEMPORAL, EnsembleBlocks
from .spacetime import (FINITE_HORIZON_POINT, FINITE_HORIZON_TANGENT,
                        INF_FLAT_LINE, INF_HYP_CONE, INF_SPHERE_CIRCLE,
                        classify_regime)

# cap on the C-rate when tdot sits at its floor (only reachable at the
# very first steps of a path started at rest)
CDOT_CAP = 1.0e12


def _chart(spec):
    if spec.kind == "minkowski":
        return spec.as_rw()
    if spec.kind == "rw":
        return spec
    raise DomainError("no warped-product chart for kind %r" % (spec.kind,))


def clock_rates(spec, t, tdot):
    """Instantaneous clock rates (Cdot capped, Ddot) at one state."""
    rw = _chart(spec)
    t = np.asarray(t, float)
    tdot = np.asarray(tdot, float)
    gap = np.maximum(tdot * tdot - 1.0, 0.0)
    cdot = np.minimum(1.0 / np.maximum(gap, 1.0 / CDOT_CAP), CDOT_CAP)
    ddot = np.sqrt(gap) / np.asarray(rw.warp.alpha(t), float)
    return cdot, ddot


def temporal_step(spec, temporal, ds, gaussian):
    """One Euler step of the temporal subdiffusion.

    temporal is the pair (t, tdot) of arrays (or scalars); gaussian must
    broadcast against them.  Returns the advanced pair with the velocity
    floored at 1.
    """
    if ds <= 0:
        raise DomainError("step size must be positive")
    rw = _chart(spec)
    t = np.asarray(temporal[0], float)
    tdot = np.asarray(temporal[1], float)
    gap = np.maximum(tdot * tdot - 1.0, 0.0)
    hub = np.asarray(rw.warp.hubble(t), float)
    drift = -hub * gap + 0.5 * rw.d * spec.sigma ** 2 * tdot
    tdot_new = tdot + drift * ds \
        + spec.sigma * np.sqrt(gap * ds) * np.asarray(gaussian, float)
    tdot_new = np.maximum(tdot_new, 1.0)
    t_new = t + tdot * ds
    if np.any(t_new <= 0):
        raise InternalError("cosmological time left (0, inf) despite "
                            "tdot >= 1")
    return t_new, tdot_new


def clocks_step(spec, clocks, temporal, ds):
    """Advance the additive clocks by one rectangle increment at temporal."""
    C, D = clocks
    cdot, ddot = clock_rates(spec, *temporal)
    return C + cdot * ds, D + ddot * ds


def _plane_exp(w):
    """exp(e1 w^T - w e1^T) for batched spatial vectors w (w[...,0:2]=0).

    The generator rotates the plane spanned by e1 and w; the closed form
    is exact, so products of these stay orthogonal to roundoff.
    """
    w = np.asarray(w, float)
    m = w.shape[-1]
    th = np.sqrt(np.sum(w * w, axis=-1))
    # sin(th)/th and (1-cos th)/th^2, safe at th = 0
    s = np.sinc(th / np.pi)
    c2 = 0.5 * np.sinc(0.5 * th / np.pi) ** 2
    out = np.broadcast_to(np.eye(m), w.shape[:-1] + (m, m)).copy()
    e1w = np.zeros(w.shape[:-1] + (m, m))
    e1w[..., 1, :] = w
    X = e1w - np.swapaxes(e1w, -1, -2)
    XX = -(th[..., None, None] ** 2
           * np.einsum("i,j->ij", np.eye(m)[1], np.eye(m)[1])
           + w[..., :, None] * w[..., None, :])
    return out + s[..., None, None] * X + c2[..., None, None] * XX


def _transport01(fiber, ang, m):
    """exp(ang * H) for the transport generator H = e1 e0^T - kappa e0 e1^T.

    Rotation in the (0,1) plane for the spherical fiber, boost for the
    hyperbolic one; batched over the shape of ang.
    """
    ang = np.asarray(ang, float)
    out = np.broadcast_to(np.eye(m), ang.shape + (m, m)).copy()
    if fiber == "sphere":
        c, s = np.cos(ang), np.sin(ang)
        out[..., 0, 0] = c
        out[..., 1, 1] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
    elif fiber == "hyperbolic":
        c, s = np.cosh(ang), np.sinh(ang)
        out[..., 0, 0] = c
        out[..., 1, 1] = c
        out[..., 0, 1] = s
        out[..., 1, 0] = s
    else:
        raise UnsupportedGroup("no transport generator for fiber %r"
                               % (fiber,))
    return out


class RWPhase:
    """Reduced state of a path bundle.

    Fields are arrays with a common leading shape (empty for one path):
    t, tdot, C, D, A scalars per path; Theta and x fiber vectors; for
    curved fibers the lift pair (rot, car) in the isometry group, with
    rot the compact noise factor; for the hyperbolic infinite-horizon
    system the horospherical coordinates (kfac, beta, eta) instead of
    car.  Unused fields are None.
    """

    __slots__ = ("spec", "t", "tdot", "C", "D", "A", "Theta", "x",
                 "rot", "car", "kfac", "beta", "eta", "s")

    def __init__(self, spec, t, tdot, Theta, x, C=0.0, D=0.0, A=0.0,
                 rot=None, car=None, kfac=None, beta=None, eta=None,
                 s=0.0):
        self.spec = spec
        self.t = np.asarray(t, float)
        self.tdot = np.asarray(tdot, float)
        self.Theta = np.asarray(Theta, float)
        self.x = np.asarray(x, float)
        self.C = np.asarray(C, float)
        self.D = np.asarray(D, float)
        self.A = np.asarray(A, float)
        self.rot = None if rot is None else np.asarray(rot, float)
        self.car = None if car is None else np.asarray(car, float)
        self.kfac = None if kfac is None else np.asarray(kfac, float)
        self.beta = None if beta is None else np.asarray(beta, float)
        self.eta = None if eta is None else np.asarray(eta, float)
        self.s = s
        rw = _chart(spec)
        if self.Theta.shape[-1] != rw.nx or self.x.shape[-1] != rw.nx:
            raise DimensionError("fiber vectors need %d components"
                                 % rw.nx)

    @classmethod
    def start(cls, spec, n_paths=None, cone=False):
        """Future-pointing start: t=1, tdot=sqrt(2), direction e1."""
        rw = _chart(spec)
        nx = rw.nx
        shape = () if n_paths is None else (int(n_paths),)
        t = np.ones(shape)
        tdot = np.full(shape, math.sqrt(2.0))
        x = np.zeros(shape + (nx,))
        Theta = np.zeros(shape + (nx,))
        if rw.fiber == "flat":
            Theta[..., 0] = 1.0
            return cls(spec, t, tdot, Theta, x,
                       C=np.zeros(shape), D=np.zeros(shape),
                       A=np.zeros(shape))
        x[..., 0] = 1.0
        Theta[..., 1] = 1.0
        eye = np.broadcast_to(np.eye(nx), shape + (nx, nx)).copy()
        kw = dict(C=np.zeros(shape), D=np.zeros(shape),
                  A=np.zeros(shape), rot=eye.copy())
        if cone:
            if rw.fiber != "hyperbolic":
                raise DomainError("horospherical coordinates need the "
                                  "hyperbolic fiber")
            kw.update(kfac=eye.copy(), beta=np.zeros(shape),
                      eta=np.zeros(shape + (rw.d - 1,)))
        else:
            kw.update(car=eye.copy())
        return cls(spec, t, tdot, Theta, x, **kw)

    def copy(self):
        return RWPhase(self.spec, self.t.copy(), self.tdot.copy(),
                       self.Theta.copy(), self.x.copy(), self.C.copy(),
                       self.D.copy(), self.A.copy(),
                       None if self.rot is None else self.rot.copy(),
                       None if self.car is None else self.car.copy(),
                       None if self.kfac is None else self.kfac.copy(),
                       None if self.beta is None else self.beta.copy(),
                       None if self.eta is None else self.eta.copy(),
                       self.s)

    def fiber_norm_sq(self, vec):
        rw = _chart(self.spec)
        if rw.fiber == "hyperbolic":
            signs = rw.fiber_form().signs
            return np.sum(signs * vec * vec, axis=-1)
        return np.sum(vec * vec, axis=-1)

    def validate(self, tol=1.0e-8):
        rw = _chart(self.spec)
        if np.any(self.tdot < 1.0 - 1e-12):
            raise StateInvalid("tdot below the causal floor 1")
        if self.kfac is not None:
            # horospherical mode: x holds a scaled light-cone representative
            # and Theta a compact-frame column, so the constraints live on
            # the frames themselves
            for name in ("kfac", "rot"):
                q = getattr(self, name)
                gram = np.swapaxes(q, -1, -2) @ q
                defect = np.max(np.abs(gram - np.eye(q.shape[-1])))
                if defect > tol:
                    raise StateInvalid("%s lost orthogonality: defect %.3g"
                                       % (name, defect))
            return
        defect = np.max(np.abs(self.fiber_norm_sq(self.Theta) - 1.0))
        if defect > tol:
            raise StateInvalid("direction is not unit: defect %.3g"
                               % defect)
        if rw.fiber == "sphere":
            gap = np.max(np.abs(np.sum(self.x * self.x, axis=-1) - 1.0))
            tan = np.max(np.abs(np.sum(self.x * self.Theta, axis=-1)))
        elif rw.fiber == "hyperbolic":
            signs = rw.fiber_form().signs
            gap = np.max(np.abs(np.sum(signs * self.x * self.x, axis=-1)
                                + 1.0))
            tan = np.max(np.abs(np.sum(signs * self.x * self.Theta,
                                       axis=-1)))
        else:
            return
        if gap > tol or tan > tol:
            raise StateInvalid("fiber constraint defect %.3g / %.3g"
                               % (gap, tan))


def _project_direction(rw, x, Theta):
    """Re-tangent Theta at x and normalize it in the fiber metric."""
    if rw.fiber == "sphere":
        Theta = Theta - np.sum(x * Theta, axis=-1, keepdims=True) * x
        nsq = np.sum(Theta * Theta, axis=-1)
    elif rw.fiber == "hyperbolic":
        signs = rw.fiber_form().signs
        Theta = Theta + np.sum(signs * x * Theta, axis=-1,
                               keepdims=True) * x
        nsq = np.sum(signs * Theta * Theta, axis=-1)
    else:
        nsq = np.sum(Theta * Theta, axis=-1)
    ok = nsq > 1.0e-24
    Theta = Theta / np.sqrt(np.where(ok, nsq, 1.0))[..., None]
    return Theta, ok


def spatial_step(spec, phase, ds, gaussians, dd_inc=None):
    """Advance (x, Theta) by one step of the clock-driven fiber motion.

    gaussians needs one entry per ambient fiber coordinate.  dd_inc
    overrides the D-increment (the engine passes a trapezoid value); by
    default the rectangle Ddot * ds at the phase's own state is used.
    Raises StepRejected when the renormalization degenerates.
    """
    if ds <= 0:
        raise DomainError("step size must be positive")
    rw = _chart(spec)
    gaussians = np.asarray(gaussians, float)
    if gaussians.shape[-1] != rw.nx:
        raise DimensionError("needs %d gaussians per path" % rw.nx)
    cdot, ddot = clock_rates(spec, phase.t, phase.tdot)
    dd = ddot * ds if dd_inc is None else np.asarray(dd_inc, float)
    x, Theta = phase.x, phase.Theta
    x_new = x + dd[..., None] * Theta
    if rw.fiber == "sphere":
        nrm = np.sqrt(np.sum(x_new * x_new, axis=-1))
        if np.any(nrm < 1e-12):
            raise StepRejected("base point fell into the origin")
        x_new = x_new / nrm[..., None]
        kick = gaussians \
            - np.sum(x_new * gaussians, axis=-1, keepdims=True) * x_new \
            - np.sum(Theta * gaussians, axis=-1, keepdims=True) * Theta
    elif rw.fiber == "hyperbolic":
        signs = rw.fiber_form().signs
        q = np.sum(signs * x_new * x_new, axis=-1)
        if np.any(q >= -1e-12) or np.any(x_new[..., 0] <= 0):
            raise StepRejected("base point left the upper hyperboloid")
        x_new = x_new / np.sqrt(-q)[..., None]
        kick = signs * gaussians \
            + np.sum(x_new * gaussians, axis=-1, keepdims=True) * x_new \
            - np.sum(Theta * gaussians, axis=-1, keepdims=True) * Theta
    else:
        kick = gaussians \
            - np.sum(Theta * gaussians, axis=-1, keepdims=True) * Theta
    sigma = spec.sigma
    drift = -0.5 * sigma ** 2 * (rw.d - 1) * (cdot * ds)[..., None] * Theta
    if rw.kappa:
        drift = drift - rw.kappa * dd[..., None] * x
    Theta_new = Theta + drift \
        + sigma * np.sqrt(cdot * ds)[..., None] * kick
    Theta_new, ok = _project_direction(rw, x_new, Theta_new)
    if not np.all(ok):
        raise StepRejected("direction lost its length under the kick")
    out = phase.copy()
    out.x, out.Theta = x_new, Theta_new
    out.s = phase.s + ds
    return out

# The compact noise factor uses closed-form plane rotations, exact at any
# angle; the only genuine limit is trig argument reduction, which keeps
# ~8 significant digits of the angle at 1e8 radians.  Near-floor clock
# spikes produce kicks of order sqrt(CDOT_CAP * ds) ~ 3e4, far below the
# guard: such a kick spins the direction to an essentially uniform one,
# which is the correct transition law for an excursion that runs the
# C-clock hot.
MAX_KICK_NORM = 1.0e8

# Most negative rapidity at which the horospheric chart still holds the
# path: increments scale like exp(-beta), so below this the coordinate
# would need more range than a float carries.  The frame matrices stay
# perfectly healthy; only the eta chart gives up.
_BETA_CHART_MIN = -300.0


def _frame_kick(rw, sigma, phase, ds, gaussians):
    """Ambient rotation vector w for the compact noise factor."""
    gaussians = np.asarray(gaussians, float)
    if gaussians.shape[-1] != rw.d - 1:
        raise DimensionError("needs %d frame gaussians per path"
                             % (rw.d - 1))
    cdot, ddot = clock_rates(rw, phase.t, phase.tdot)
    amp = sigma * np.sqrt(cdot * ds)
    w = np.zeros(gaussians.shape[:-1] + (rw.nx,))
    w[..., 2:] = amp[..., None] * gaussians
    nrm = float(np.max(np.sqrt(np.sum(w * w, axis=-1))))
    if nrm > MAX_KICK_NORM:
        raise StepRejected("frame kick norm %.3g > %g"
                           % (nrm, MAX_KICK_NORM))
    return w, ddot


def lift_step(spec, phase, ds, gaussians, dd_inc=None):
    """Advance the curved-fiber group lift g = car * rot by one step.

    rot collects the compact noise rotations about the moving direction
    (it stabilizes e0 exactly); car absorbs the transport by the clock-D
    increment, conjugated into the current noise frame.  Both factors
    use closed-form exponentials, so the product stays in the isometry
    group to roundoff and (x, Theta) are read off as its first two
    columns.  dd_inc overrides the transport increment as in
    spatial_step.
    """
    if ds <= 0:
        raise DomainError("step size must be positive")
    rw = _chart(spec)
    if rw.fiber == "flat":
        raise UnsupportedGroup("the flat fiber carries no compact lift; "
                               "use spatial_step")
    if phase.rot is None or phase.car is None:
        raise StateInvalid("phase carries no (rot, car) lift frames")
    w, ddot = _frame_kick(rw, spec.sigma, phase, ds, gaussians)
    dd = ddot * ds if dd_inc is None else np.asarray(dd_inc, float)
    rot = phase.rot
    trans = _transport01(rw.fiber, dd, rw.nx)
    out = phase.copy()
    out.car = phase.car @ rot @ trans @ np.swapaxes(rot, -1, -2)
    out.rot = rot @ _plane_exp(w)
    g = out.car @ out.rot
    out.x = g[..., :, 0].copy()
    out.Theta = g[..., :, 1].copy()
    out.s = phase.s + ds
    return out


def cone_step(spec, phase, ds, gaussians, dd_inc=None):
    """Advance the horospherical coordinates of the hyperbolic lift.

    For an infinite horizon the boost coordinate of the frame grows like
    the divergent clock D and cosh of it leaves float64 range, so the
    frame is never formed: writing g * rot^-1 = n a k with a the (0,1)
    boost by beta and n the unipotent factor with parameter eta, the
    noise-free part of the flow closes on (kfac, beta, eta) and stays
    bounded.  With M = kfac * rot, v = M[1,1] and c_i = M[i,1], the
    deterministic part moves the angle psi between M e1 and e1 along a
    fixed great circle with d psi / dD = -sin psi, and beta and eta ride
    along it; all three have closed-form time-dd maps (T = tan(psi0/2),
    E = exp(-dd)):

        psi  <- 2 atan(T E)
        beta <- beta + dd + log1p((T E)^2) - log1p(T^2)
        eta  <- eta + exp(-beta) T (1 - E^2) / (1 + (T E)^2) * chat
        rot  <- rot exp(noise)

    The closed maps matter: one Euler increment multiplies a small psi
    by (1 - dd) each step, which is violently unstable once the clock
    increment dd passes 2, and for warps with exponential tdot growth dd
    reaches the hundreds per step late in a run.  The exact map
    contracts psi by E instead, at any dd.

    Theta is refreshed to the bounded column M e1; x is left to the
    caller (the scaled light-cone representative is a record-time
    quantity, see cone_spatial).
    """
    if ds <= 0:
        raise DomainError("step size must be positive")
    rw = _chart(spec)
    if rw.fiber != "hyperbolic":
        raise UnsupportedGroup("horospherical coordinates exist for the "
                               "hyperbolic fiber only")
    if phase.kfac is None or phase.rot is None:
        raise StateInvalid("phase carries no horospherical coordinates")
    w, ddot = _frame_kick(rw, spec.sigma, phase, ds, gaussians)
    dd = ddot * ds if dd_inc is None else np.asarray(dd_inc, float)
    M = phase.kfac @ phase.rot
    v = M[..., 1, 1]
    c = M[..., 2:, 1]
    nc = np.sqrt(np.sum(c * c, axis=-1))
    chat = c / np.maximum(nc, 1e-300)[..., None]
    psi0 = np.arctan2(nc, v)
    T = np.tan(0.5 * psi0)
    E = np.exp(-dd)
    psi1 = 2.0 * np.arctan(T * E)
    wk = np.zeros_like(w)
    wk[..., 2:] = (psi0 - psi1)[..., None] * chat
    out = phase.copy()
    out.kfac = _plane_exp(wk) @ phase.kfac
    TE2 = (T * E) ** 2
    out.beta = phase.beta + dd + np.log1p(TE2) - np.log1p(T * T)
    # the beta dip while escaping the anti-pole is log1p(T^2) <= ~75, so
    # a live path never nears the chart floor; the guard only matters if
    # a path somehow arrives there already poisoned
    grow = (np.exp(np.minimum(-phase.beta, 300.0))
            * T * (1.0 - E * E) / (1.0 + TE2))
    grow = np.where(phase.beta > _BETA_CHART_MIN, grow, np.nan)
    out.eta = phase.eta + grow[..., None] * chat
    out.rot = phase.rot @ _plane_exp(w)
    out.Theta = M[..., :, 1].copy()
    out.s = phase.s + ds
    return out


def cone_spatial(eta, beta):
    """Scaled spatial data of the horospherical state, all bounded.

    The hyperboloid point is x = n(cosh(beta) e0 + sinh(beta) e1) with n
    the unipotent factor of parameter eta; since n fixes e0 - e1,

        2 exp(-beta) x = n(e0 + e1) + exp(-2 beta)(e0 - e1)

    which converges to the light-cone representative n(e0 + e1).
    Returns (scaled, theta_dir, delta_shift) where scaled is that vector,
    theta_dir its normalized spatial part, and delta_shift the bounded
    correction with sinh^-1 |vec x| = beta + delta_shift.
    """
    eta = np.asarray(eta, float)
    beta = np.asarray(beta, float)
    e2 = np.sum(eta * eta, axis=-1)
    # the exponent only saturates once the chart has already given the
    # path up (eta is NaN well before beta reaches -325), so the clamp
    # never distorts a live value; it just keeps the arithmetic quiet
    damp = np.exp(np.minimum(-2.0 * beta, 650.0))
    scaled = np.empty(eta.shape[:-1] + (eta.shape[-1] + 2,))
    scaled[..., 0] = 1.0 + e2 + damp
    scaled[..., 1] = 1.0 - e2 - damp
    scaled[..., 2:] = 2.0 * eta
    spat = scaled[..., 1:]
    # factored norm: entries near 1e282 square past float range, so pull
    # the magnitude out before summing
    mag = np.maximum(np.max(np.abs(spat), axis=-1, keepdims=True), 1e-300)
    nrm = mag[..., 0] * np.sqrt(np.sum((spat / mag) ** 2, axis=-1))
    theta_dir = spat / np.maximum(nrm, 1e-300)[..., None]
    delta_shift = np.log(0.5 * (scaled[..., 0] + nrm))
    return scaled, theta_dir, delta_shift


class BoundaryFunctionals:
    """Regime-tagged snapshot of the boundary data of a path bundle."""

    __slots__ = ("regime", "fields", "gap_count")

    def __init__(self, regime, fields, gap_count=0):
        self.regime = regime
        self.fields = dict(fields)
        self.gap_count = int(gap_count)

    def __repr__(self):
        return ("BoundaryFunctionals(%s, %s)"
                % (self.regime, sorted(self.fields)))


def functional_update(spec, regime, phase, acc):
    """Read off the boundary functionals of the regime at this state.

    acc is a mutable dict the caller keeps across samples; it carries the
    gap counter and the last good functional values so a factorization
    failure on some paths degrades to a stale sample instead of losing
    the run.  Returns a BoundaryFunctionals whose field arrays are fresh
    copies.
    """
    rw = _chart(spec)
    gaps = int(acc.get("gaps", 0))
    if regime == FINITE_HORIZON_POINT:
        fields = {"x": phase.x.copy()}
    elif regime == FINITE_HORIZON_TANGENT:
        fields = {"x": phase.x.copy(), "Theta": phase.Theta.copy()}
    elif regime in (INF_FLAT_LINE, "minkowski"):
        if rw.fiber != "flat":
            raise DomainError("line functionals need the flat fiber")
        delta = phase.x - phase.A[..., None] * phase.Theta
        fields = {"Theta": phase.Theta.copy(), "delta": delta}
    elif regime == INF_SPHERE_CIRCLE:
        if phase.car is None or phase.rot is None:
            raise StateInvalid("circle functionals need the lift frames")
        g = phase.car @ phase.rot
        bhat = g @ _transport01("sphere", -phase.A, rw.nx)
        ca = np.cos(phase.A)[..., None]
        sa = np.sin(phase.A)[..., None]
        x_rec = ca * bhat[..., :, 0] + sa * bhat[..., :, 1]
        recon = np.sqrt(np.sum((x_rec - phase.x) ** 2, axis=-1))
        fields = {"bhat": bhat, "plane0": bhat[..., :, 0].copy(),
                  "plane1": bhat[..., :, 1].copy(), "recon": recon}
    elif regime == INF_HYP_CONE:
        if phase.kfac is not None:
            M = phase.kfac @ phase.rot
            v = np.clip(M[..., 1, 1], -1.0, 1.0)
            beta = phase.beta
            eta = phase.eta
        else:
            if phase.car is None:
                raise StateInvalid("cone functionals need a hyperbolic "
                                   "lift state")
            g = phase.car @ phase.rot
            coords = decompose_ensemble(g, "SO(1,d)", rw.d)
            bad = coords.bad
            gaps += int(np.count_nonzero(bad))
            last = acc.get("last")
            v = np.clip(np.where(bad, np.nan, coords.k[..., 1, 1]),
                        -1.0, 1.0)
            beta = coords.beta
            eta = coords.h
            if last is not None and np.any(bad):
                v = np.where(bad, last.fields["v"], v)
                beta = np.where(bad, last.fields["beta"], beta)
                eta = np.where(bad[..., None], last.fields["eta"], eta)
        scaled, theta_dir, shift = cone_spatial(eta, beta)
        deltatilde = beta - phase.A
        fields = {"v": np.asarray(v), "beta": np.asarray(beta).copy(),
                  "eta": np.asarray(eta).copy(),
                  "deltatilde": deltatilde, "scaled": scaled,
                  "theta_dir": theta_dir,
                  "delta": deltatilde + shift}
    else:
        raise DomainError("no boundary functionals for regime %r"
                          % (regime,))
    out = BoundaryFunctionals(regime, fields, gaps)
    acc["gaps"] = gaps
    acc["last"] = out
    return out


def constraint_defect(spec, phase):
    """Largest violation of the algebraic constraints of the bundle.

    This is the reduced-coordinate surrogate for pseudo-norm
    conservation: the direction keeps unit fiber norm, lift frames keep
    their Gram matrix, horospherical factors stay orthogonal.
    """
    rw = _chart(spec)
    if phase.kfac is not None:
        worst = 0.0
        for q in (phase.kfac, phase.rot):
            gram = np.swapaxes(q, -1, -2) @ q
            worst = max(worst, float(np.max(np.abs(gram
                                                   - np.eye(q.shape[-1])))))
        return worst
    worst = float(np.max(np.abs(phase.fiber_norm_sq(phase.Theta) - 1.0)))
    if phase.car is not None and phase.rot is not None:
        g = phase.car @ phase.rot
        jmat = rw.fiber_form().signs
        gram = np.swapaxes(g, -1, -2) @ (jmat[:, None] * g)
        worst = max(worst, float(np.max(np.abs(gram - np.diag(jmat)))))
    elif rw.fiber == "sphere":
        worst = max(worst, float(np.max(np.abs(
            np.sum(phase.x * phase.x, axis=-1) - 1.0))))
    return worst


class ReducedRecord:
    """Recorded history of a reduced ensemble run.

    s has shape (n_rec,); t, tdot, C, D, A are (n_paths, n_rec); x and
    Theta are (n_paths, n_rec, nx); extras maps functional names to
    stacked arrays with the same leading axes; pseudo is the per-record
    constraint defect (n_rec,).
    """

    __slots__ = ("spec", "regime", "s", "t", "tdot", "C", "D", "A",
                 "x", "Theta", "extras", "pseudo", "gap_count")

    def __init__(self, spec, regime, s, t, tdot, C, D, A, x, Theta,
                 extras, pseudo, gap_count):
        self.spec = spec
        self.regime = regime
        self.s = s
        self.t = t
        self.tdot = tdot
        self.C = C
        self.D = D
        self.A = A
        self.x = x
        self.Theta = Theta
        self.extras = extras
        self.pseudo = pseudo
        self.gap_count = gap_count

    @property
    def n_paths(self):
        return self.t.shape[0]


def simulate_reduced(spec, ds, s_max, n_paths, seed, record_every=100,
                     regime=None, path_offset=0):
    """Integrate the reduced system for a whole ensemble.

    The temporal pair is advanced first each step; the clocks C, D and
    the warp quadrature A(t) are then accumulated by the trapezoid rule
    on the old and new temporal states, and the spatial or lift state is
    advanced with the same trapezoid D-increment.  Matching quadratures
    matters: the convergence statements compare D against A, and a
    rectangle-vs-trapezoid mismatch leaves an O(ds) * rate residual that
    grows right along with the divergent clocks.

    Noise is drawn from role-segregated counter streams, so the
    (t, tdot) path of a given (seed, path) pair is bit-identical with or
    without the spatial machinery.  regime overrides the classifier
    (useful to force a functional view); the hyperbolic infinite-horizon
    regime switches the lift to horospherical coordinates.  path_offset
    shifts the stream keys so that a chunk of a larger ensemble sees the
    same draws as the full run; it does not move the start state.
    """
    rw = _chart(spec)
    if ds <= 0 or s_max <= 0:
        raise DomainError("ds and s_max must be positive")
    n_steps = int(round(s_max / ds))
    if n_steps < 1 or abs(n_steps * ds - s_max) > 1e-9 * max(ds, 1.0):
        raise DomainError("s_max must be an integer multiple of ds")
    n_paths = int(n_paths)
    if n_paths < 1:
        raise DomainError("need at least one path")
    rep = regime if regime is not None else classify_regime(spec).regime
    cone = rw.fiber == "hyperbolic" and rep == INF_HYP_CONE
    phase = RWPhase.start(spec, n_paths, cone=cone)
    t_blocks = EnsembleBlocks(seed, n_paths, ROLE_TEMPORAL, 1,
                              path_offset=path_offset)
    if rw.fiber == "flat":
        noise = EnsembleBlocks(seed, n_paths, ROLE_SPATIAL, rw.nx,
                               path_offset=path_offset)
    else:
        noise = EnsembleBlocks(seed, n_paths, ROLE_FRAME, rw.d - 1,
                               path_offset=path_offset)
    warp = rw.warp
    acc = {"gaps": 0, "last": None}
    base_rows = []
    extra_rows = []
    pseudo_rows = []

    def snap():
        if cone:
            scaled, _, _ = cone_spatial(phase.eta, phase.beta)
            phase.x = scaled
        fn = functional_update(spec, rep, phase, acc)
        base_rows.append((phase.s, phase.t.copy(), phase.tdot.copy(),
                          phase.C.copy(), phase.D.copy(), phase.A.copy(),
                          phase.x.copy(), phase.Theta.copy()))
        extra_rows.append(fn.fields)
        pseudo_rows.append(constraint_defect(spec, phase))

    snap()
    for step in range(1, n_steps + 1):
        cd0, dd0 = clock_rates(spec, phase.t, phase.tdot)
        ad0 = phase.tdot / np.asarray(warp.alpha(phase.t), float)
        t1, td1 = temporal_step(spec, (phase.t, phase.tdot), ds,
                                t_blocks.next_step()[:, 0])
        cd1, dd1 = clock_rates(spec, t1, td1)
        ad1 = td1 / np.asarray(warp.alpha(t1), float)
        dd_trap = 0.5 * (dd0 + dd1) * ds
        eta_s = noise.next_step()
        if rw.fiber == "flat":
            phase = spatial_step(spec, phase, ds, eta_s, dd_inc=dd_trap)
        elif cone:
            phase = cone_step(spec, phase, ds, eta_s, dd_inc=dd_trap)
        else:
            phase = lift_step(spec, phase, ds, eta_s, dd_inc=dd_trap)
        phase.t = t1
        phase.tdot = td1
        phase.C = phase.C + 0.5 * (cd0 + cd1) * ds
        phase.D = phase.D + 0.5 * (dd0 + dd1) * ds
        phase.A = phase.A + 0.5 * (ad0 + ad1) * ds
        phase.s = step * ds
        if step % record_every == 0 or step == n_steps:
            snap()

    s = np.array([row[0] for row in base_rows])
    stacked = [np.stack([row[j] for row in base_rows], axis=1)
               for j in range(1, 8)]
    extras = {}
    for key in extra_rows[0]:
        extras[key] = np.stack([rows[key] for rows in extra_rows], axis=1)
    return ReducedRecord(spec, rep, s, *stacked, extras=extras,
                         pseudo=np.array(pseudo_rows),
                         gap_count=acc["gaps"])


def _median_tail(rec, series, metric):
    return float(np.median(cauchy_tail(rec.s, series, metric=metric)))


def reduced_stats(rec):
    """Ensemble statistics of a recorded run, keyed for verdict_suite.

    Produces exactly the stats the check table of the record's regime
    consumes; feed the result to boundary_stats.verdict_suite.
    """
    rw = _chart(rec.spec)
    st = {"pseudo_norm_max": float(np.max(rec.pseudo))}
    s_end = float(rec.s[-1])
    if rec.regime in (INF_FLAT_LINE, "minkowski"):
        st["tdot_slope_median"] = float(np.median(
            np.log(rec.tdot[:, -1]) / s_end))
        if rec.regime == INF_FLAT_LINE:
            alpha_end = np.asarray(rw.warp.alpha(rec.t[:, -1]), float)
            st["alpha_slope_median"] = float(np.median(
                np.log(alpha_end) / s_end))
            st["theta_tail_median"] = _median_tail(rec, rec.Theta, "angle")
            st["delta_tail_median"] = _median_tail(
                rec, rec.extras["delta"], "euclidean")
    elif rec.regime in (FINITE_HORIZON_TANGENT, FINITE_HORIZON_POINT):
        st["x_tail_median"] = _median_tail(rec, rec.x, "euclidean")
        metric = "angle" if rw.fiber == "flat" else "euclidean"
        st["theta_tail_median"] = _median_tail(rec, rec.Theta, metric)
        half = int(np.argmin(np.abs(rec.s - 0.5 * s_end)))
        c_half = rec.C[:, half]
        growth = (rec.C[:, -1] - c_half) / np.maximum(c_half, 1e-300)
        st["clock_growth_ratio"] = float(np.median(growth))
    elif rec.regime == INF_SPHERE_CIRCLE:
        tails = cauchy_tail(rec.s, rec.extras["bhat"], metric="matrix")
        st["bhat_tail_q90"] = float(np.quantile(tails, 0.9))
        st["reconstruction_max"] = float(np.max(rec.extras["recon"]))
        st["clock_sync_tail_median"] = float(np.median(
            cauchy_tail(rec.s, rec.D - rec.A, metric="abs")))
    elif rec.regime == INF_HYP_CONE:
        st["v_final_median"] = float(np.median(rec.extras["v"][:, -1]))
        st["deltatilde_tail_median"] = float(np.median(
            cauchy_tail(rec.s, rec.extras["deltatilde"], metric="abs")))
        eta_last = rec.extras["eta"][:, -1]
        e2 = np.sum(eta_last * eta_last, axis=-1)
        tmap = np.empty(eta_last.shape[:-1] + (rw.d,))
        tmap[..., 0] = (1.0 - e2) / (1.0 + e2)
        tmap[..., 1:] = 2.0 * eta_last / (1.0 + e2)[..., None]
        tdir = rec.extras["theta_dir"][:, -1]
        ang = np.arccos(np.clip(np.sum(tmap * tdir, axis=-1), -1.0, 1.0))
        # paths the chart dropped (eta saturated near the antipode) carry
        # NaN here and do not vote; they are already in gap_count
        good = np.isfinite(ang)
        if np.any(good):
            st["theta_reconstruction_median"] = float(np.median(ang[good]))
        else:
            st["theta_reconstruction_median"] = float("nan")
    else:
        raise DomainError("no statistics for regime %r" % (rec.regime,))
    return st
