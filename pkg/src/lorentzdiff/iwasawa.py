"""Horospherical (N A K) coordinates on the Lorentz-type groups.

Every element of the identity component of SO(1,m) or SO(2,d) factors as
g = n a k with n unipotent (a horospherical translation), a a commuting
set of boosts, and k in the maximal compact subgroup.  The abelian part a
carries the radial escape of the lifted diffusion (its rates are the
chamber drift), n freezes to the boundary point, and k keeps the angular
information.

Extraction here is closed-form for the scalar coordinates.  The
light-cone row functionals of g determine the boost rapidities directly,
e.g. for SO(1,m) the pairing t = g[0,0] + g[1,0] equals exp(beta) and
must be positive (elements violating that lie outside the factorizable
domain and raise DecompositionOutOfDomain).  The remaining unipotent
parameters come from linear row identities.  The compact part is NOT
computed as a^-1 n^-1 g: that product cancels entries of size exp(beta)
down to order one and destroys k's orthogonality once beta exceeds about
15.  Instead, in the light-cone basis n a is lower triangular with
positive diagonal, so g = L k there is the transposed QR factorization
of g; Householder QR keeps k orthogonal to roundoff at any rapidity the
entries of g can represent.  A damped Gauss-Newton solver on the
compact-part residual serves as an independent oracle for the same
parameters.

Supported group tags: "SO(1,d+1)" (size d+2), "SO(1,d)" (size d+1), and
"SO(2,d)" (size d+2, rank two: rapidities lambda, mu and unipotent
parameters x, y, h, htilde).
"""

from types import SimpleNamespace

import numpy as np

from . import rng
from .errors import (DecompositionOutOfDomain, DimensionError, DomainError,
                     ExtractionDegenerate, InsufficientData, UnsupportedGroup)
from .frame_flow import (expm_taylor, generator_basis, group_form,
                         reorthonormalize, strat_step)
from .boundary_stats import cauchy_tail, lyapunov, median_ci
from .spacetime import eval_q

_DOMAIN_EPS = 1e-300  # pairings this small mean the factorization blew up


def _so1_size(group, d):
    if group == "SO(1,d+1)":
        return d + 2
    if group == "SO(1,d)":
        return d + 1
    raise UnsupportedGroup("not a rank-one Lorentz tag: %r" % (group,))


def nilpotent_generator(group, d, h=None, x=0.0, y=0.0, htilde=None):
    """The unipotent-algebra element with the given parameters.

    For the rank-one family only ``h`` applies (a vector with size - 2
    entries).  For "SO(2,d)" the parameters are (x, y, h, htilde) with h
    and htilde of length d - 2.
    """
    if group in ("SO(1,d+1)", "SO(1,d)"):
        mm = _so1_size(group, d)
        h = np.zeros(mm - 2) if h is None else np.asarray(h, float)
        if h.shape[-1] != mm - 2:
            raise DimensionError("h needs %d entries" % (mm - 2))
        X = np.zeros(h.shape[:-1] + (mm, mm))
        X[..., 0, 2:] = h
        X[..., 1, 2:] = -h
        X[..., 2:, 0] = h
        X[..., 2:, 1] = h
        return X
    if group == "SO(2,d)":
        mm = d + 2
        nh = d - 2
        h = np.zeros(nh) if h is None else np.asarray(h, float)
        htilde = np.zeros(nh) if htilde is None else np.asarray(htilde, float)
        if h.shape[-1] != nh or htilde.shape[-1] != nh:
            raise DimensionError("h, htilde need %d entries" % nh)
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        p = x + y
        q = x - y
        batch = np.broadcast_shapes(h.shape[:-1], htilde.shape[:-1],
                                    x.shape, y.shape)
        X = np.zeros(batch + (mm, mm))
        X[..., 1, 0] = p
        X[..., 1, 2] = p
        X[..., 0, 1] = -p
        X[..., 2, 1] = p
        X[..., 0, 3] = q
        X[..., 2, 3] = -q
        X[..., 3, 0] = q
        X[..., 3, 2] = q
        if nh:
            X[..., 0, 4:] = h
            X[..., 2, 4:] = -h
            X[..., 4:, 0] = h
            X[..., 4:, 2] = h
            X[..., 1, 4:] = htilde
            X[..., 3, 4:] = -htilde
            X[..., 4:, 1] = htilde
            X[..., 4:, 3] = htilde
        return X
    raise UnsupportedGroup("no unipotent family for %r" % (group,))


def expm_nilpotent(X, max_degree=8):
    """Exponential of a nilpotent matrix by its terminating series.

    The series must die (up to fused-multiply rounding dust) within
    max_degree terms, else DomainError.
    """
    X = np.asarray(X, float)
    mm = X.shape[-1]
    out = np.broadcast_to(np.eye(mm), X.shape).copy()
    term = np.broadcast_to(np.eye(mm), X.shape).copy()
    for j in range(1, max_degree + 1):
        term = term @ X / j
        if not np.any(term):
            return out
        out = out + term
    if np.max(np.abs(term)) > 1e-12 * max(np.max(np.abs(out)), 1.0):
        raise DomainError("matrix is not nilpotent within degree %d"
                          % max_degree)
    return out


def _n_so1(h):
    """Unipotent element exp(X_h) of the rank-one family, closed form."""
    h = np.asarray(h, float)
    nh = h.shape[-1]
    mm = nh + 2
    n = np.broadcast_to(np.eye(mm), h.shape[:-1] + (mm, mm)).copy()
    h2 = 0.5 * np.sum(h * h, axis=-1)
    n[..., 0, 0] = 1.0 + h2
    n[..., 0, 1] = h2
    n[..., 1, 0] = -h2
    n[..., 1, 1] = 1.0 - h2
    n[..., 0, 2:] = h
    n[..., 1, 2:] = -h
    n[..., 2:, 0] = h
    n[..., 2:, 1] = h
    return n


def _a_so1(beta, mm):
    """Boost exp(beta H) in the (0,1) plane, batched over beta."""
    beta = np.asarray(beta, float)
    a = np.broadcast_to(np.eye(mm), beta.shape + (mm, mm)).copy()
    c, s = np.cosh(beta), np.sinh(beta)
    a[..., 0, 0] = c
    a[..., 1, 1] = c
    a[..., 0, 1] = s
    a[..., 1, 0] = s
    return a


def _a_so2(lam, mu, mm):
    """Commuting boosts exp(lam A1 + mu A2) in the (0,2) and (1,3) planes."""
    lam = np.asarray(lam, float)
    mu = np.asarray(mu, float)
    batch = np.broadcast_shapes(lam.shape, mu.shape)
    a = np.broadcast_to(np.eye(mm), batch + (mm, mm)).copy()
    a[..., 0, 0] = np.cosh(lam)
    a[..., 2, 2] = np.cosh(lam)
    a[..., 0, 2] = np.sinh(lam)
    a[..., 2, 0] = np.sinh(lam)
    a[..., 1, 1] = np.cosh(mu)
    a[..., 3, 3] = np.cosh(mu)
    a[..., 1, 3] = np.sinh(mu)
    a[..., 3, 1] = np.sinh(mu)
    return a


def _triangular_basis(family, mm):
    """Orthogonal basis change P making the n a factor lower triangular.

    Rows of P are the new basis vectors: null directions paired with the
    boost planes first (descending boost weight), spatial axes in the
    middle, opposite null directions last (ascending weight).  Under row
    conjugation P g P^T, the product n a of either family becomes lower
    triangular with diagonal (e^beta, 1, ..., e^-beta), respectively
    (e^lam, e^mu, 1, ..., e^-mu, e^-lam).
    """
    rt = 1.0 / np.sqrt(2.0)
    P = np.zeros((mm, mm))
    if family == "so2":
        P[0, 0], P[0, 2] = rt, rt
        P[1, 1], P[1, 3] = rt, rt
        for j in range(mm - 4):
            P[2 + j, 4 + j] = 1.0
        P[mm - 2, 1], P[mm - 2, 3] = rt, -rt
        P[mm - 1, 0], P[mm - 1, 2] = rt, -rt
    else:
        P[0, 0], P[0, 1] = rt, rt
        for j in range(mm - 2):
            P[1 + j, 2 + j] = 1.0
        P[mm - 1, 0], P[mm - 1, 1] = rt, -rt
    return P


def _stable_k(g, bad, family):
    """Compact factor of g = n a k via triangular/orthogonal splitting.

    In the basis of _triangular_basis the factorization reads g = L k
    with L lower triangular, i.e. the transpose of a QR factorization.
    Householder QR is backward stable, so k comes out orthogonal to
    machine precision however large the rapidities are; normalizing the
    triangular diagonal to be positive pins the unique Iwasawa choice.
    Slices flagged bad are replaced by the identity before factoring
    (their k is overwritten with NaN by the caller anyway).
    """
    mm = g.shape[-1]
    P = _triangular_basis(family, mm)
    if bad is not None and np.any(bad):
        g = np.where(bad[..., None, None], np.eye(mm), g)
    glc = P @ g @ P.T
    q, r = np.linalg.qr(np.swapaxes(glc, -1, -2))
    dsign = np.sign(np.einsum("...ii->...i", r))
    dsign = np.where(dsign == 0.0, 1.0, dsign)
    klc = dsign[..., :, None] * np.swapaxes(q, -1, -2)
    # The diagonal of the triangular factor pins each row sign of klc,
    # but its contracting entries shrink like exp(-rapidity) and drown in
    # the exp(+rapidity) roundoff floor once the rapidity passes about
    # 18, leaving those signs to noise.  The compact part also preserves
    # the indefinite form, whose light-cone matrix pairs each expanding
    # row with its contracting partner at -1; the expanding rows stay
    # accurate, so that pairing recovers the lost signs.
    if family == "so2":
        pairs = ((0, mm - 1), (1, mm - 2))
    else:
        pairs = ((0, mm - 1),)
    signs = np.ones(mm)
    signs[0] = -1.0
    if family == "so2":
        signs[1] = -1.0
    Jlc = P @ (signs[:, None] * np.eye(mm)) @ P.T
    for iu, iv in pairs:
        pair = -np.einsum("...j,jl,...l->...", klc[..., iu, :], Jlc,
                          klc[..., iv, :])
        flip = np.where(pair < 0.0, -1.0, 1.0)
        klc[..., iv, :] = flip[..., None] * klc[..., iv, :]
    return P.T @ klc @ P


class IwasawaCoords:
    """One factorization g = n a k with its scalar coordinates.

    Attributes common to both families: ``group``, ``d``, ``n`` (unipotent
    matrix), ``k`` (compact part).  Rank one adds ``beta`` and ``h``;
    "SO(2,d)" adds ``lam``, ``mu``, ``theta``, ``x``, ``y``, ``h``,
    ``htilde``.
    """

    def __init__(self, group, d, **kw):
        self.group = group
        self.d = int(d)
        for key, val in kw.items():
            setattr(self, key, val)

    def a_matrix(self):
        mm = group_form(self.group, self.d)[0]
        if self.group == "SO(2,d)":
            return _a_so2(self.lam, self.mu, mm)
        return _a_so1(self.beta, mm)

    def recompose(self):
        return self.n @ self.a_matrix() @ self.k

    def rapidities(self):
        if self.group == "SO(2,d)":
            return np.stack([np.asarray(self.lam), np.asarray(self.mu)],
                            axis=-1)
        return np.asarray(self.beta)[..., None]


def _decompose_so1_arrays(g, mm):
    """Closed-form (beta, h, n, a, k) for the rank-one family, batched.

    Returns (beta, h, n, k, bad) where bad flags elements whose light-cone
    pairing was not positive (those rows carry NaN).
    """
    g = np.asarray(g, float)
    t = g[..., 0, 0] + g[..., 1, 0]
    bad = ~(t > _DOMAIN_EPS) | ~np.isfinite(g).all(axis=(-2, -1))
    t_safe = np.where(bad, 1.0, t)
    beta = np.log(t_safe)
    # rho* k = (row0 + row1 of g) / e^beta;   omega* k = 2 e0* - rho* k
    rowk = (g[..., 0, :] + g[..., 1, :]) / t_safe[..., None]
    wk = -rowk
    wk[..., 0] = wk[..., 0] + 2.0
    # spatial rows: e_r* g = h_r e^beta rho* k + e_r* k  and the J-pairing
    # of rho* k with omega* k is -2, of e_r* k with omega* k is 0
    signs = np.ones(mm)
    signs[0] = -1.0
    h = -np.einsum("...rj,j,...j->...r", g[..., 2:, :], signs, wk) \
        / (2.0 * t_safe[..., None])
    n = _n_so1(h)
    k = _stable_k(g, bad, "so1")
    if np.any(bad):
        beta = np.where(bad, np.nan, beta)
        h = np.where(bad[..., None], np.nan, h)
        n = np.where(bad[..., None, None], np.nan, n)
        k = np.where(bad[..., None, None], np.nan, k)
    return beta, h, n, k, bad


def _decompose_so2_arrays(g, d):
    """Closed-form SO(2,d) coordinates, batched; see _decompose_so1_arrays."""
    g = np.asarray(g, float)
    mm = d + 2
    r1 = g[..., 0, :] + g[..., 2, :]
    r2 = g[..., 1, :] + g[..., 3, :]
    elam = np.hypot(r1[..., 0], r1[..., 1])
    bad = ~(elam > _DOMAIN_EPS) | ~np.isfinite(g).all(axis=(-2, -1))
    elam_safe = np.where(bad, 1.0, elam)
    theta = np.arctan2(-r1[..., 1], np.where(bad, 1.0, r1[..., 0]))
    ct, st = np.cos(theta), np.sin(theta)
    emu = st * r2[..., 0] + ct * r2[..., 1]
    bad = bad | ~(emu > _DOMAIN_EPS)
    emu_safe = np.where(bad, 1.0, emu)
    lam = np.log(elam_safe)
    mu = np.log(emu_safe)
    x = (ct * r2[..., 0] - st * r2[..., 1]) / (2.0 * elam_safe)
    if d > 2:
        rows = g[..., 4:, 0:2]
        u = ct[..., None] * rows[..., 0] - st[..., None] * rows[..., 1]
        w = st[..., None] * rows[..., 0] + ct[..., None] * rows[..., 1]
        htilde = w / emu_safe[..., None]
        h = u / elam_safe[..., None] - x[..., None] * htilde
        hdot = np.sum(h * htilde, axis=-1)
        ht2 = np.sum(htilde * htilde, axis=-1)
    else:
        shape = lam.shape + (0,)
        h = np.zeros(shape)
        htilde = np.zeros(shape)
        hdot = np.zeros(lam.shape)
        ht2 = np.zeros(lam.shape)
    pq = ct * g[..., 3, 0] - st * g[..., 3, 1]
    q = pq / elam_safe + 0.5 * hdot + x * ht2 / 3.0
    y = x - q
    # near a chamber wall the mu pairing can pass arbitrarily close to
    # zero, sending the unipotent parameters to sizes where the float
    # nilpotency of the generator degrades; flag those elements as out
    # of domain rather than poisoning the whole batch
    size = np.abs(np.stack([x, y], axis=-1)).max(axis=-1)
    if d > 2:
        size = np.maximum(size, np.abs(h).max(axis=-1))
        size = np.maximum(size, np.abs(htilde).max(axis=-1))
    bad = bad | ~(size < 1e3)
    if np.any(bad):
        zero = np.where(bad, 0.0, 1.0)
        x = x * zero
        y = y * zero
        h = h * zero[..., None]
        htilde = htilde * zero[..., None]
    X = nilpotent_generator("SO(2,d)", d, h=h, x=x, y=y, htilde=htilde)
    n = expm_nilpotent(X)
    k = _stable_k(g, bad, "so2")
    if np.any(bad):
        for arr in (lam, mu, theta, x, y):
            arr[bad] = np.nan
        h = np.where(bad[..., None], np.nan, h)
        htilde = np.where(bad[..., None], np.nan, htilde)
        n = np.where(bad[..., None, None], np.nan, n)
        k = np.where(bad[..., None, None], np.nan, k)
    return lam, mu, theta, x, y, h, htilde, n, k, bad


def decompose(g, group, d, tol=1e-9):
    """Factor one group element as g = n a k.

    Parameters
    ----------
    g : (m, m) array
        Element of the identity component.
    group : str
        "SO(1,d+1)", "SO(1,d)" or "SO(2,d)".
    d : int
        Spatial dimension parameter of the tag.
    tol : float
        Recomposition residual bound, relative to max(1, |g|_max).

    Returns
    -------
    IwasawaCoords

    Raises
    ------
    DecompositionOutOfDomain
        When a light-cone pairing is not positive (no factorization), or
        the recomposition misses g by more than tol (conditioning loss).
    """
    g = np.asarray(g, float)
    mm = group_form(group, d)[0]
    if g.shape != (mm, mm):
        raise DimensionError("expected %dx%d matrix" % (mm, mm))
    if group == "SO(2,d)":
        lam, mu, theta, x, y, h, htilde, n, k, bad = \
            _decompose_so2_arrays(g[None], d)
        if bad[0]:
            raise DecompositionOutOfDomain(
                "light-cone pairing not positive; element lies outside "
                "the N A K domain")
        coords = IwasawaCoords(group, d, lam=float(lam[0]), mu=float(mu[0]),
                               theta=float(theta[0]), x=float(x[0]),
                               y=float(y[0]), h=h[0], htilde=htilde[0],
                               n=n[0], k=k[0])
    else:
        beta, h, n, k, bad = _decompose_so1_arrays(g[None], mm)
        if bad[0]:
            raise DecompositionOutOfDomain(
                "light-cone pairing g[0,0] + g[1,0] is not positive; "
                "element lies outside the N A K domain")
        coords = IwasawaCoords(group, d, beta=float(beta[0]), h=h[0],
                               n=n[0], k=k[0])
    resid = np.max(np.abs(coords.recompose() - g))
    if resid > tol * max(1.0, float(np.max(np.abs(g)))):
        raise DecompositionOutOfDomain(
            "recomposition residual %.3g exceeds tolerance (severely "
            "ill-conditioned element)" % resid)
    return coords


def decompose_ensemble(g, group, d):
    """Batched factorization of an array of group elements.

    ``g`` has shape (..., m, m).  Returns an IwasawaCoords whose fields
    are batched arrays, plus a boolean ``bad`` mask; elements outside the
    factorizable domain carry NaN in every field instead of raising, so a
    recorded flow with isolated excursions keeps its good samples.
    """
    g = np.asarray(g, float)
    mm = group_form(group, d)[0]
    if g.shape[-2:] != (mm, mm):
        raise DimensionError("expected trailing %dx%d matrices" % (mm, mm))
    if group == "SO(2,d)":
        lam, mu, theta, x, y, h, htilde, n, k, bad = \
            _decompose_so2_arrays(g, d)
        return IwasawaCoords(group, d, lam=lam, mu=mu, theta=theta, x=x,
                             y=y, h=h, htilde=htilde, n=n, k=k, bad=bad)
    beta, h, n, k, bad = _decompose_so1_arrays(g, mm)
    return IwasawaCoords(group, d, beta=beta, h=h, n=n, k=k, bad=bad)


def renormalized_frame_flow(group, d, sigma, ds, s_max, n_paths, seed,
                            record_every=100, reorth_every=100, g0=None,
                            drift=1.0, path_offset=0):
    """Integrate the lifted flow, stripping n a off at every record.

    A terminal frame stores the middle rows of its compact part at
    relative size exp(-rapidity), so once the leading rapidity passes
    about 36 those rows sit below the roundoff floor of the large
    entries and no factorization can recover them.  Left translation by
    n a leaves the compact part unchanged and adds to the rapidities, so
    the cure is to renormalize along the way: at each record the working
    matrix is factored, its rapidities are banked, and integration
    restarts from the compact part alone.  The working matrix then never
    exceeds exp(rapidity growth per record interval) and its compact
    part stays accurate at any horizon.

    Same integration and noise streams as
    frame_flow.simulate_frame_ensemble: equal seed, path offset, group,
    and step produce the same Brownian increments, so the two flows
    follow the same paths.  Returns an object with ``s`` (nrec,), ``K``
    (n_paths, nrec, m, m) compact parts at the records, ``rap``
    (n_paths, nrec, r) accumulated rapidities, and ``bad`` (n_paths,);
    a path whose working matrix ever leaves the factorizable domain
    records NaN from that record on.
    """
    basis = generator_basis(group, d)
    m = basis.m
    n_steps = int(round(s_max / ds))
    if g0 is None:
        W = np.broadcast_to(np.eye(m), (n_paths, m, m)).copy()
    else:
        W = np.broadcast_to(np.asarray(g0, float), (n_paths, m, m)).copy()
    blocks = rng.EnsembleBlocks(seed, n_paths, rng.ROLE_FRAME, basis.nv,
                                path_offset=path_offset)
    r = 2 if group == "SO(2,d)" else 1
    rap_acc = np.zeros((n_paths, r))
    badp = np.zeros(n_paths, bool)
    rec_s, rec_K, rec_rap = [], [], []

    def strip(s_now):
        nonlocal W
        co = decompose_ensemble(W, group, d)
        badp[:] = badp | co.bad
        good = ~badp
        rap_acc[good] += co.rapidities()[good]
        rec_s.append(s_now)
        rec_K.append(np.where(badp[:, None, None], np.nan, co.k))
        rec_rap.append(np.where(badp[:, None], np.nan, rap_acc))
        W = np.where(badp[:, None, None], np.eye(m), co.k)

    strip(0.0)
    for step in range(1, n_steps + 1):
        W = strat_step(W, basis, ds, blocks.next_step(), drift=drift,
                       noise=sigma)
        if reorth_every and step % reorth_every == 0:
            W = reorthonormalize(W, basis.form)
        if step % record_every == 0 or step == n_steps:
            strip(step * ds)
    return SimpleNamespace(group=group, d=d, s=np.array(rec_s),
                           K=np.stack(rec_K, axis=1),
                           rap=np.stack(rec_rap, axis=1), bad=badp)


def unipotency_defect(n):
    """How far n is from having all eigenvalues equal to 1.

    Measured as the largest entry of (n - I)^m, m the matrix size: zero
    exactly when n is unipotent.  (A nonsymmetric eigensolver cannot be
    used here: the unit eigenvalue of a defective matrix is computed with
    error of order eps^(1/k) for a k-chain, about 6e-6 in double
    precision, even when the matrix is unipotent to machine accuracy.)
    """
    n = np.asarray(n, float)
    N = n - np.eye(n.shape[-1])
    P = N
    for _ in range(n.shape[-1] - 1):
        P = P @ N
    return float(np.max(np.abs(P)))


def decompose_newton(g, group, d, tol=1e-12, max_iter=50, seed=0,
                     restarts=5):
    """Independent oracle: solve for the factorization parameters.

    Gauss-Newton with backtracking damping on the residual "k(params) =
    a(params)^-1 n(params)^-1 g lies in the compact subgroup", from a
    small random initialization.  Returns a dict of parameters comparable
    to the closed-form extraction.  Meant for cross-validation, not speed.
    """
    g = np.asarray(g, float)
    mm = group_form(group, d)[0]
    rank_one = group in ("SO(1,d+1)", "SO(1,d)")

    if rank_one:
        nparam = 1 + (mm - 2)

        def residual(p):
            beta, h = p[0], p[1:]
            k = _a_so1(-beta, mm) @ _n_so1(-h) @ g
            return np.concatenate([k[0, :] - np.eye(mm)[0],
                                   k[:, 0] - np.eye(mm)[:, 0]])
    else:
        nh = d - 2
        nparam = 4 + 2 * nh

        def residual(p):
            lam, mu, x, y = p[0], p[1], p[2], p[3]
            h = p[4:4 + nh]
            htilde = p[4 + nh:]
            X = nilpotent_generator("SO(2,d)", d, h=h, x=x, y=y,
                                    htilde=htilde)
            k = _a_so2(-lam, -mu, mm) @ expm_nilpotent(-X) @ g
            return np.concatenate([k[0:2, 2:].ravel(), k[2:, 0:2].ravel()])

    gen = np.random.Generator(np.random.Philox(key=[seed, 77]))
    best = None
    for attempt in range(restarts):
        p = 0.1 * gen.standard_normal(nparam) if attempt else \
            np.zeros(nparam)
        r = residual(p)
        for _ in range(max_iter):
            if np.max(np.abs(r)) < tol:
                break
            jac = np.empty((r.size, nparam))
            eps = 1e-7
            for j in range(nparam):
                pp = p.copy()
                pp[j] += eps
                pm = p.copy()
                pm[j] -= eps
                jac[:, j] = (residual(pp) - residual(pm)) / (2.0 * eps)
            dp, *_ = np.linalg.lstsq(jac, -r, rcond=None)
            lam_damp = 1.0
            base = np.linalg.norm(r)
            for _ in range(20):
                r_new = residual(p + lam_damp * dp)
                if np.linalg.norm(r_new) < base:
                    break
                lam_damp *= 0.5
            p = p + lam_damp * dp
            r = r_new
        if best is None or np.max(np.abs(r)) < best[1]:
            best = (p.copy(), float(np.max(np.abs(r))))
        if best[1] < tol:
            break
    p, final = best
    if final > 1e-8:
        raise DecompositionOutOfDomain(
            "Newton solve stalled at residual %.3g" % final)
    if rank_one:
        return {"beta": float(p[0]), "h": p[1:].copy()}
    nh = d - 2
    return {"lam": float(p[0]), "mu": float(p[1]), "x": float(p[2]),
            "y": float(p[3]), "h": p[4:4 + nh].copy(),
            "htilde": p[4 + nh:].copy()}


def extract_theta(coords):
    """Angular coordinate(s) of the compact factor.

    "SO(2,d)": the rotation angle of the distinguished SO(2) block,
    recovered from the first column of k; raises ExtractionDegenerate when
    that column's (0,1) projection is numerically zero.

    Rank-one tags: the unit vector k(e1), whose time component vanishes
    (k fixes e0); returned with all m components.
    """
    k = np.asarray(coords.k, float)
    if coords.group == "SO(2,d)":
        c, s = k[..., 0, 0], k[..., 1, 0]
        r = np.hypot(c, s)
        if np.any(r < 1e-12):
            raise ExtractionDegenerate("SO(2) block collapsed")
        return np.arctan2(s, c)
    return k[..., :, 1]


def weyl_stats(s, rapidity_series, window=0.5):
    """Chamber statistics of one rapidity series across an ensemble.

    Parameters
    ----------
    s : (nrec,) array
        Record times.
    rapidity_series : (n_paths, nrec) array
        One abelian coordinate (beta, lam or mu) per path.
    window : float
        Trailing fraction used in the per-path slope fits.

    Returns
    -------
    object with ``slopes`` (per path), ``median``, ``ci`` (lo, hi) from
    order statistics, and ``positive_fraction``.

    Raises InsufficientData when the window holds fewer than 10 samples
    or ends before s = 5.
    """
    s = np.asarray(s, float)
    series = np.asarray(rapidity_series, float)
    if s[-1] < 5.0:
        raise InsufficientData("series too short for chamber statistics "
                               "(need s_max >= 5)")
    slopes, _ = lyapunov(s, series, window=window)
    med, lo, hi = median_ci(slopes)

    class Stats:
        pass

    out = Stats()
    out.slopes = slopes
    out.median = med
    out.ci = (lo, hi)
    out.positive_fraction = float(np.mean(slopes > 0))
    return out


def ads_boundary(s, lam, mu, n, q_form, tail_split=0.5, n_tail_max=1e-3):
    """Boundary functionals of the negative-curvature model flow.

    Parameters are ensemble record arrays: ``lam``, ``mu`` of shape
    (n_paths, nrec), ``n`` of shape (n_paths, nrec, m, m); ``q_form`` is
    the invariant form (for the isotropy check).

    Computes the two normalized light-like directions

        u_s = exp(-lam_s) n_s a_s (e0),   v_s = exp(-mu_s) n_s a_s (e1),

    their Cauchy tails, the unipotent tail, and the projective limit
    point p_inf ~ n_last (e0 + e2).  Convergence failures are reported in
    the ``converged`` flag, never raised.
    """
    lam = np.asarray(lam, float)
    mu = np.asarray(mu, float)
    n = np.asarray(n, float)
    mm = n.shape[-1]
    a = _a_so2(lam, mu, mm)
    na = n @ a
    u = np.exp(-lam)[..., None] * na[..., :, 0]
    v = np.exp(-mu)[..., None] * na[..., :, 1]
    u_tail = cauchy_tail(s, u, split=tail_split, metric="euclidean")
    v_tail = cauchy_tail(s, v, split=tail_split, metric="euclidean")
    n_tail = cauchy_tail(s, n, split=tail_split, metric="matrix")
    e02 = np.zeros(mm)
    e02[0] = 1.0
    e02[2] = 1.0
    p_inf = n[..., -1, :, :] @ e02
    p_inf = p_inf / np.linalg.norm(p_inf, axis=-1, keepdims=True)
    e13 = np.zeros(mm)
    e13[1] = 1.0
    e13[3] = 1.0
    frame2 = n[..., -1, :, :] @ e13
    u_last = u[..., -1, :]
    iso = np.abs(eval_q(q_form, u_last)) \
        / np.maximum(np.sum(u_last * u_last, axis=-1), 1e-300)

    class Report:
        pass

    out = Report()
    out.s = s
    out.u = u
    out.v = v
    out.u_tail = u_tail
    out.v_tail = v_tail
    out.n_tail = n_tail
    out.p_inf = p_inf
    out.frame = np.stack([p_inf, frame2], axis=-2)
    out.isotropy_ratio = iso
    out.n_tail_fraction_ok = float(np.mean(n_tail <= n_tail_max))
    out.converged = bool(np.median(n_tail) <= n_tail_max)
    return out
