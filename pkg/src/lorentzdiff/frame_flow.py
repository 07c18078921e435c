"""Isometry-group lifts of the phase-space diffusion.

The diffusion on a model spacetime or a warped product lifts to a
left-invariant Stratonovich SDE on the isometry group,

    dG_s = G_s (H0 drift ds + sum_i V_i noise dB^i_s),

where H0 is the transport generator and the V_i span the vertical
(boost/rotation) directions.  Four matrix groups appear:

    "SO(1,d+1)"  positive-curvature model, (d+2) x (d+2)
    "SO(2,d)"    negative-curvature model, (d+2) x (d+2)
    "SO(d+1)"    rotation lift of the spherical-fiber warped product
    "SO(1,d)"    Lorentz lift of the hyperbolic-fiber warped product

Updates are exponential injections G <- G exp(arg), so every step stays in
the group up to roundoff; a J-orthonormalization pass every
``reorth_every`` steps removes the accumulated drift.
"""

import math
from types import SimpleNamespace

import numpy as np

from .errors import (DimensionError, DomainError, StateInvalid, StepRejected,
                     UnsupportedGroup)
from .spacetime import QuadraticForm
from . import rng

GROUP_TAGS = ("SO(1,d+1)", "SO(2,d)", "SO(1,d)", "SO(d+1)")


def group_form(group, d):
    """Matrix size and invariant quadratic form of a group tag."""
    if d < 2:
        raise DimensionError("need d >= 2")
    if group == "SO(1,d+1)":
        return d + 2, QuadraticForm(1, d + 1)
    if group == "SO(2,d)":
        return d + 2, QuadraticForm(2, d)
    if group == "SO(1,d)":
        return d + 1, QuadraticForm(1, d)
    if group == "SO(d+1)":
        return d + 1, QuadraticForm(0, d + 1)
    raise UnsupportedGroup("unknown group tag %r" % (group,))


def _e(m, i, j):
    out = np.zeros((m, m))
    out[i, j] = 1.0
    return out


class GeneratorBasis:
    """Transport and vertical generators of one lifted flow.

    Attributes
    ----------
    H0 : (m, m) array
        Transport generator (the ds direction of the lift).
    V : (nv, m, m) array
        Vertical generators driving the noise, stacked.
    H1, H : arrays or None
        Extra boost generators of the hyperbolic-fiber group, used by the
        light-cone coordinate system (H1 equals H0 there; H stacks the
        remaining boosts whose K/N split drives that system).
    """

    def __init__(self, group, d):
        m, form = group_form(group, d)
        self.group = group
        self.d = int(d)
        self.m = m
        self.form = form
        self.H1 = None
        self.H = None
        if group == "SO(1,d+1)":
            self.H0 = _e(m, 0, 1) + _e(m, 1, 0)
            self.V = np.stack([_e(m, i + 1, 0) + _e(m, 0, i + 1)
                               for i in range(1, d + 1)])
        elif group == "SO(2,d)":
            self.H0 = _e(m, 1, 0) - _e(m, 0, 1)
            self.V = np.stack([_e(m, i + 1, 1) + _e(m, 1, i + 1)
                               for i in range(1, d + 1)])
        elif group == "SO(d+1)":
            # kappa = +1 transport; vertical rotations through e_1
            self.H0 = _e(m, 0, 1) - _e(m, 1, 0)
            self.V = np.stack([_e(m, 1, i) - _e(m, i, 1)
                               for i in range(2, d + 1)])
        else:  # SO(1,d)
            self.H0 = _e(m, 0, 1) + _e(m, 1, 0)
            self.H1 = self.H0.copy()
            self.V = np.stack([_e(m, i, 1) - _e(m, 1, i)
                               for i in range(2, d + 1)])
            self.H = np.stack([_e(m, 0, i) + _e(m, i, 0)
                               for i in range(2, d + 1)])

    @property
    def nv(self):
        return self.V.shape[0]


def generator_basis(group, d):
    """Generators of the lifted flow for one group tag.

    Raises UnsupportedGroup for tags outside the four supported families.
    """
    return GeneratorBasis(group, d)


def check_algebra_element(X, form, tol=1e-12):
    """True when X^T J + J X vanishes within tol."""
    J = form.matrix()
    return float(np.max(np.abs(X.T @ J + J @ X))) <= tol


class FrameElement:
    """A group element with its tag, validated on construction."""

    def __init__(self, group, d, G, tol=1e-8):
        m, form = group_form(group, d)
        G = np.asarray(G, float)
        if G.shape != (m, m):
            raise DimensionError("expected %dx%d matrix" % (m, m))
        self.group = group
        self.d = int(d)
        self.G = G
        self.form = form
        err = frame_defect(G, form)
        if err > tol:
            raise StateInvalid("G^T J G - J defect %.3g exceeds %g"
                               % (err, tol))
        if abs(np.linalg.det(G) - 1.0) > tol * 10:
            raise StateInvalid("determinant is not +1")
        if form.p >= 1 and G[0, 0] <= 0:
            raise StateInvalid("time orientation flipped (G[0,0] <= 0)")

    @classmethod
    def identity(cls, group, d):
        m, _ = group_form(group, d)
        return cls(group, d, np.eye(m))


def frame_defect(G, form):
    """Largest entry of G^T J G - J (batched over leading axes)."""
    G = np.asarray(G, float)
    signs = form.signs
    gram = np.swapaxes(G, -1, -2) @ (signs[:, None] * G)
    return float(np.max(np.abs(gram - form.matrix())))


def frame_defect_rel(G, form):
    """Group-membership defect scaled by the frame magnitude squared.

    A float64 matrix with entries of size M cannot satisfy the Gram
    identity to better than about M^2 * eps in absolute terms, so for the
    noncompact families (whose frames grow exponentially along the flow)
    this scaled measure is the meaningful one: it stays near machine
    precision as long as the flow is healthy.
    """
    G = np.asarray(G, float)
    signs = form.signs
    gram = np.swapaxes(G, -1, -2) @ (signs[:, None] * G)
    mag2 = np.maximum(np.max(np.abs(G), axis=(-1, -2)) ** 2, 1.0)
    err = np.max(np.abs(gram - form.matrix()), axis=(-1, -2))
    return float(np.max(err / mag2))


def expm_taylor(X, order=13):
    """Matrix exponential by scaling-squaring + Taylor, batched.

    The scaling exponent is chosen per matrix, so each batch member gets
    bit-identical treatment no matter which ensemble it sits in.  Accurate
    to near machine precision for argument norms up to O(10); the flow
    guards reject anything above 50 before calling this.
    """
    X = np.asarray(X, float)
    nrm = np.max(np.sum(np.abs(X), axis=-1), axis=-1)
    with np.errstate(divide="ignore"):
        k = np.ceil(np.log2(np.maximum(nrm, 1e-300) / 0.25))
    k = np.maximum(k, 0.0)
    Y = X / (2.0 ** k)[..., None, None]
    m = X.shape[-1]
    out = np.broadcast_to(np.eye(m), X.shape).copy()
    term = out.copy()
    for j in range(1, order + 1):
        term = term @ Y / j
        out = out + term
    kmax = int(k.max()) if k.size else 0
    for j in range(kmax):
        sq = out @ out
        out = np.where((k > j)[..., None, None], sq, out)
    return out


def rotation(m, i, j, angle):
    """Rotation by angle in the (i, j) coordinate plane of R^m."""
    out = np.eye(m)
    c, s = np.cos(angle), np.sin(angle)
    out[i, i] = c
    out[j, j] = c
    out[i, j] = -s
    out[j, i] = s
    return out


def boost(m, i, j, rapidity):
    """Hyperbolic rotation by rapidity in the (i, j) plane of R^m."""
    out = np.eye(m)
    c, s = np.cosh(rapidity), np.sinh(rapidity)
    out[i, i] = c
    out[j, j] = c
    out[i, j] = s
    out[j, i] = s
    return out


MAX_ARG_NORM = 50.0


def strat_step(G, basis, ds, gaussians, drift=1.0, noise=1.0):
    """One exponential-injection step of the lifted flow.

    G <- G exp(drift * H0 * ds + noise * sqrt(ds) * sum_i gaussians_i V_i).

    Batched: G may have leading axes, gaussians then needs matching
    leading axes over (nv,); drift and noise broadcast.

    Raises StepRejected when the exponential argument norm exceeds 50
    (runaway coefficients; the caller should shrink ds).
    """
    G = np.asarray(G, float)
    gaussians = np.asarray(gaussians, float)
    if gaussians.shape[-1] != basis.nv:
        raise DimensionError("needs %d gaussians per path" % basis.nv)
    drift = np.asarray(drift, float)
    noise = np.asarray(noise, float)
    arg = (drift[..., None, None] * ds) * basis.H0 \
        + math.sqrt(ds) * noise[..., None, None] \
        * np.einsum("...i,imn->...mn", gaussians, basis.V)
    nrm = np.max(np.sum(np.abs(arg), axis=-1))
    if nrm > MAX_ARG_NORM:
        raise StepRejected("exponential argument norm %.3g > %g"
                           % (nrm, MAX_ARG_NORM))
    return G @ expm_taylor(arg)


def q_gram_schmidt(G, form):
    """Re-orthonormalize columns in the J-inner product, order e0, e1, ...

    Column signs follow the signature; the first column keeps its time
    orientation.  Batched over leading axes.
    """
    signs = form.signs
    G = np.array(G, float)
    m = G.shape[-1]
    for j in range(m):
        v = G[..., :, j]
        for i in range(j):
            qi = G[..., :, i]
            inner = np.sum(v * (signs * qi), axis=-1, keepdims=True)
            v = v - inner / signs[i] * qi
        nrm2 = np.sum(v * (signs * v), axis=-1, keepdims=True)
        if np.any(signs[j] * nrm2 <= 0):
            raise StateInvalid("column %d lost its signature type" % j)
        G[..., :, j] = v / np.sqrt(np.abs(nrm2))
    return G


# Above this magnitude a float64 frame cannot be meaningfully re-
# orthonormalized (the Gram entries lose to cancellation), and does not
# need to be: exponential injection preserves membership to relative
# precision, and every statistic read off large frames is a scale-free
# ratio of rows.
REORTH_MAX_MAGNITUDE = 1e5


def reorthonormalize(G, form, max_magnitude=REORTH_MAX_MAGNITUDE):
    """Apply q_gram_schmidt to the batch members small enough to benefit."""
    G = np.asarray(G, float)
    mag = np.max(np.abs(G), axis=(-1, -2))
    mask = mag <= max_magnitude
    if not np.any(mask):
        return G
    if np.all(mask):
        return q_gram_schmidt(G, form)
    out = G.copy()
    out[mask] = q_gram_schmidt(G[mask], form)
    return out


def project_T1(G, group):
    """Position and velocity (or base and tangent) read off a frame.

    The two distinguished columns depend on the family: the positive-
    curvature model carries position in column 1 and velocity in column 0;
    every other family uses column 0 for position and column 1 for the
    tangent direction.
    """
    G = np.asarray(G, float)
    if group == "SO(1,d+1)":
        return G[..., :, 1], G[..., :, 0]
    if group in ("SO(2,d)", "SO(1,d)", "SO(d+1)"):
        return G[..., :, 0], G[..., :, 1]
    raise UnsupportedGroup("unknown group tag %r" % (group,))


def theta_direct_step(kind, theta, ds, sigma, d, gaussians):
    """One Euler step of the closed angular subsystem.

    For the negative-curvature model ("antidesitter") theta is the scalar
    winding angle and one gaussian is consumed:

        dtheta = (1 + sigma^2 (d-2)/4 sin 2 theta) ds
                 + sigma cos(theta) dB.

    For the positive-curvature model ("desitter") theta is a unit vector
    in the spatial R^{d+1} (component 0 along the distinguished axis) and
    d+1 gaussians are consumed; the step realizes the projected noise
    (I - theta theta^T) and the drift toward the distinguished axis, then
    renormalizes.  Batched over leading axes.
    """
    theta = np.asarray(theta, float)
    g = np.asarray(gaussians, float)
    if kind == "antidesitter":
        drift = 1.0 + sigma ** 2 * (d - 2) / 4.0 * np.sin(2.0 * theta)
        return theta + drift * ds + sigma * np.cos(theta) * math.sqrt(ds) * g
    if kind == "desitter":
        if theta.shape[-1] != d + 1 or g.shape[-1] != d + 1:
            raise DimensionError("spatial vectors need d+1 components")
        t1 = theta[..., 0:1]
        dm = g - np.sum(theta * g, axis=-1, keepdims=True) * theta
        e1 = np.zeros_like(theta)
        e1[..., 0] = 1.0
        drift = -0.5 * sigma ** 2 * ((d - 2) * t1 * e1 + 2.0 * t1 ** 2 * theta) \
            + (e1 - t1 * theta)
        new = theta + drift * ds - sigma * t1 * math.sqrt(ds) * dm
        return new / np.linalg.norm(new, axis=-1, keepdims=True)
    raise DomainError("no direct angular subsystem for kind %r" % (kind,))


def simulate_frame_ensemble(group, d, sigma, ds, s_max, n_paths, seed,
                            record_every=100, reorth_every=100, g0=None,
                            drift=1.0, path_offset=0):
    """Integrate the lifted flow for an ensemble of paths.

    Returns an object with attributes ``s`` (record times, shape (nrec,))
    and ``G`` (frames, shape (n_paths, nrec, m, m)).  Path i consumes the
    frame-role stream of (seed, path_offset + i) regardless of n_paths or
    scheduling, so chunked runs agree with the full ensemble.
    """
    basis = generator_basis(group, d)
    m = basis.m
    n_steps = int(round(s_max / ds))
    if g0 is None:
        G = np.broadcast_to(np.eye(m), (n_paths, m, m)).copy()
    else:
        g0 = np.asarray(g0, float)
        G = np.broadcast_to(g0, (n_paths, m, m)).copy()
    blocks = rng.EnsembleBlocks(seed, n_paths, rng.ROLE_FRAME, basis.nv,
                                path_offset=path_offset)
    rec_s = [0.0]
    rec_G = [G.copy()]
    for step in range(1, n_steps + 1):
        G = strat_step(G, basis, ds, blocks.next_step(), drift=drift,
                       noise=sigma)
        if reorth_every and step % reorth_every == 0:
            G = reorthonormalize(G, basis.form)
        if step % record_every == 0 or step == n_steps:
            rec_s.append(step * ds)
            rec_G.append(G.copy())
    out = SimpleNamespace(group=group, d=d, s=np.array(rec_s),
                          G=np.stack(rec_G, axis=1))
    return out
