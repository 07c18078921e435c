"""Model spacetimes: quadratic forms, warp functions, charts, regimes.

The geometries handled here are the flat model (Minkowski), the two curved
models realized as quadric hypersurfaces of a flat pseudo-Euclidean space,
and warped products I x_alpha M over an interval with a flat, spherical or
hyperbolic fiber M.  Warped products carry their expansion profile as a
:class:`WarpFunction`; the long-time behaviour of a diffusion on such a
space is decided by two integrability properties of the profile, computed
by :func:`classify_regime`.

Charts: the warped products use a global chart (t, x) with t > 0 and x in
the fiber.  Curved fibers are carried extrinsically (x lives on the unit
sphere of R^{d+1}, resp. the unit pseudo-sphere of R^{1,d}), so the metric
matrices returned by :func:`metric_at` are ambient carrier matrices that
restrict to the warped-product metric on the constraint tangent space.
"""

import csv
import warnings

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import PchipInterpolator

from .errors import (ClassificationAmbiguous, DimensionError, DomainError)

KINDS = ("minkowski", "desitter", "antidesitter", "rw")
FIBERS = ("flat", "sphere", "hyperbolic")

# Regime labels for the five boundary geometries.
FINITE_HORIZON_POINT = "FiniteHorizonPoint"
FINITE_HORIZON_TANGENT = "FiniteHorizonTangent"
INF_FLAT_LINE = "InfFlatLine"
INF_SPHERE_CIRCLE = "InfSphereCircle"
INF_HYP_CONE = "InfHypCone"


class QuadraticForm:
    """Pseudo-Euclidean form with p minus signs then q plus signs.

    Q(x, y) = -sum_{k<p} x_k y_k + sum_{k>=p} x_k y_k.
    """

    def __init__(self, p, q):
        if p < 0 or q < 0 or p + q < 1:
            raise DimensionError("need p, q >= 0 with p + q >= 1")
        self.p = int(p)
        self.q = int(q)
        self.n = self.p + self.q

    @property
    def signs(self):
        s = np.ones(self.n)
        s[:self.p] = -1.0
        return s

    def matrix(self):
        return np.diag(self.signs)

    def __call__(self, x, y=None):
        return eval_q(self, x, y)

    def __repr__(self):
        return "QuadraticForm(p=%d, q=%d)" % (self.p, self.q)


def eval_q(form, x, y=None):
    """Evaluate Q(x, y), or Q(x, x) if y is omitted.

    Vectorized over leading axes; the last axis must have length p + q,
    otherwise DimensionError is raised.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != form.n:
        raise DimensionError(
            "vector has last axis %d, form needs %d" % (x.shape[-1], form.n))
    if y is None:
        y = x
    else:
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != form.n:
            raise DimensionError(
                "vector has last axis %d, form needs %d"
                % (y.shape[-1], form.n))
    return np.sum(form.signs * x * y, axis=-1)


class WarpFunction:
    """Expansion profile alpha(t) of a warped product, with derivative data.

    Instances expose ``alpha``, ``dalpha`` and the logarithmic rate
    ``hubble`` (= alpha'/alpha), all vectorized over t > 0, plus a growth
    tag used for tail extrapolation when classifying regimes:

    ``growth``
        one of "polynomial", "subexponential", "exponential";
    ``c``
        for polynomial growth, the limit of t * hubble(t) (the exponent);
    ``log_concave``
        whether hubble is non-increasing.  The cosh profile violates this
        (it is the spherical-slicing profile of the constant-curvature
        model) and is still accepted; downstream users may warn.

    Use the classmethod constructors; the generic __init__ is for custom
    profiles.
    """

    def __init__(self, alpha, dalpha, label, growth, c=None,
                 log_concave=True, params=None):
        if growth not in ("polynomial", "subexponential", "exponential"):
            raise DomainError("unknown growth tag %r" % (growth,))
        self._alpha = alpha
        self._dalpha = dalpha
        self.label = label
        self.growth = growth
        self.c = c
        self.log_concave = bool(log_concave)
        self.params = dict(params or {})

    @classmethod
    def power(cls, a):
        """alpha(t) = t**a, a > 0."""
        a = float(a)
        if a <= 0:
            raise DomainError("power exponent must be positive")
        return cls(lambda t: np.asarray(t, float) ** a,
                   lambda t: a * np.asarray(t, float) ** (a - 1.0),
                   "t^%g" % a, "polynomial", c=a, params={"a": a})

    @classmethod
    def exponential(cls):
        """alpha(t) = exp(t)."""
        return cls(lambda t: np.exp(np.asarray(t, float)),
                   lambda t: np.exp(np.asarray(t, float)),
                   "e^t", "exponential", params={"rate": 1.0})

    @classmethod
    def stretched_exponential(cls, beta):
        """alpha(t) = exp(t**beta), 0 < beta < 1."""
        beta = float(beta)
        if not 0.0 < beta < 1.0:
            raise DomainError("stretched exponent must lie in (0, 1)")

        def a(t):
            t = np.asarray(t, float)
            return np.exp(t ** beta)

        def da(t):
            t = np.asarray(t, float)
            return beta * t ** (beta - 1.0) * np.exp(t ** beta)

        return cls(a, da, "e^(t^%g)" % beta, "subexponential",
                   params={"beta": beta})

    @classmethod
    def cosh(cls):
        """alpha(t) = cosh(t).  Not log-concave (hubble = tanh increases)."""
        return cls(lambda t: np.cosh(np.asarray(t, float)),
                   lambda t: np.sinh(np.asarray(t, float)),
                   "cosh t", "exponential", log_concave=False,
                   params={"rate": 1.0})

    @classmethod
    def constant(cls):
        """alpha(t) = 1: no expansion, the flat-model profile."""
        return cls(lambda t: np.ones_like(np.asarray(t, float)),
                   lambda t: np.zeros_like(np.asarray(t, float)),
                   "1", "polynomial", c=0.0, params={})

    @classmethod
    def from_table(cls, t, alpha, growth=None):
        """Monotone-cubic profile through sample points (t_i, alpha_i).

        The growth tag is estimated from the last decade of the table when
        not supplied; estimation failure raises ClassificationAmbiguous.
        """
        t = np.asarray(t, float)
        alpha = np.asarray(alpha, float)
        if t.ndim != 1 or t.shape != alpha.shape or t.size < 4:
            raise DimensionError("need matching 1-d arrays with >= 4 rows")
        if np.any(np.diff(t) <= 0):
            raise DomainError("table abscissae must be strictly increasing")
        if np.any(alpha <= 0):
            raise DomainError("alpha must be positive")
        interp = PchipInterpolator(t, alpha, extrapolate=False)
        dinterp = interp.derivative()
        lo, hi = t[0], t[-1]

        def a(tt):
            tt = np.asarray(tt, float)
            if np.any(tt < lo) or np.any(tt > hi):
                raise DomainError("t outside table range [%g, %g]" % (lo, hi))
            return interp(tt)

        def da(tt):
            tt = np.asarray(tt, float)
            if np.any(tt < lo) or np.any(tt > hi):
                raise DomainError("t outside table range [%g, %g]" % (lo, hi))
            return dinterp(tt)

        if growth is None:
            growth, c = _estimate_growth(t, alpha)
        else:
            c = None
            if growth == "polynomial":
                c = float(t[-1] * dinterp(t[-1]) / alpha[-1])
        hub = dinterp(t) / alpha
        log_concave = bool(np.all(np.diff(hub) <= 1e-12 * np.abs(hub[:-1])
                                  + 1e-12))
        out = cls(a, da, "table[%g,%g]" % (lo, hi), growth, c=c,
                  log_concave=log_concave, params={"t_min": lo, "t_max": hi})
        out.table_range = (lo, hi)
        return out

    @classmethod
    def from_csv(cls, path, growth=None):
        """Load a t,alpha table from a CSV file (optional header row)."""
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.reader(fh):
                if len(rec) < 2:
                    continue
                try:
                    rows.append((float(rec[0]), float(rec[1])))
                except ValueError:
                    continue  # header or comment line
        if len(rows) < 4:
            raise DomainError("CSV needs >= 4 numeric rows of t,alpha")
        arr = np.array(rows)
        return cls.from_table(arr[:, 0], arr[:, 1], growth=growth)

    def alpha(self, t):
        return self._alpha(t)

    def dalpha(self, t):
        return self._dalpha(t)

    def hubble(self, t):
        return self._dalpha(t) / self._alpha(t)

    def validate(self, grid):
        """Check alpha > 0 and hubble non-increasing on a grid.

        Returns True when the log-concavity property holds on the grid;
        positivity failure raises DomainError.
        """
        grid = np.asarray(grid, float)
        a = self.alpha(grid)
        if np.any(~np.isfinite(a) & (grid < 700)) or np.any(a <= 0):
            raise DomainError("alpha must be positive and finite")
        h = self.hubble(grid)
        return bool(np.all(np.diff(h) <= 1e-10 + 1e-10 * np.abs(h[:-1])))

    def __repr__(self):
        return "WarpFunction(%s)" % self.label


def _estimate_growth(t, alpha):
    """Tail growth class of a tabulated profile, from its last decade."""
    hi = t[-1]
    sel = t >= max(t[0], hi / 10.0)
    if np.count_nonzero(sel) < 4:
        sel = np.arange(len(t)) >= len(t) - 4
    tt, aa = t[sel], alpha[sel]
    la, lt = np.log(aa), np.log(tt)
    # local slope of log alpha vs log t (= t * hubble)
    p = np.diff(la) / np.diff(lt)
    # local slope of log alpha vs t (= hubble)
    h = np.diff(la) / np.diff(tt)
    p_spread = np.ptp(p) / max(np.abs(p).max(), 1e-12)
    h_spread = np.ptp(h) / max(np.abs(h).max(), 1e-12)
    if p_spread < 0.1:
        return "polynomial", float(np.median(p))
    if h_spread < 0.1:
        return "exponential", None
    if np.all(np.diff(p) > 0) and np.all(np.diff(h) < 0):
        return "subexponential", None
    raise ClassificationAmbiguous(
        "cannot classify tail growth of tabulated profile "
        "(t*hubble spread %.3g, hubble spread %.3g)" % (p_spread, h_spread))


class SpaceTimeSpec:
    """Which spacetime to simulate on, with its one noise parameter.

    Parameters
    ----------
    kind : str
        "minkowski", "desitter", "antidesitter" or "rw".
    d : int
        Spatial dimension (the manifold has dimension d + 1).  d >= 2.
    fiber : str
        For kind "rw": "flat", "sphere" or "hyperbolic".
    warp : WarpFunction
        For kind "rw".  Minkowski behaves as rw/flat with constant warp.
    sigma : float
        Noise intensity, > 0 (sigma = 0 is accepted for geodesic tests).
    """

    def __init__(self, kind, d, fiber="flat", warp=None, sigma=1.0):
        kind = str(kind).lower()
        if kind not in KINDS:
            raise DomainError("unknown kind %r" % (kind,))
        if int(d) < 2:
            raise DimensionError("need spatial dimension d >= 2")
        self.kind = kind
        self.d = int(d)
        self.sigma = float(sigma)
        if self.sigma < 0:
            raise DomainError("sigma must be nonnegative")
        if kind == "rw":
            fiber = str(fiber).lower()
            if fiber not in FIBERS:
                raise DomainError("unknown fiber %r" % (fiber,))
            if warp is None:
                raise DomainError("rw kind needs a warp function")
            self.fiber = fiber
            self.warp = warp
        elif kind == "minkowski":
            self.fiber = "flat"
            self.warp = WarpFunction.constant()
        else:
            # constant-curvature models: handled through the frame flow,
            # no warped-product chart attached.
            self.fiber = None
            self.warp = None

    @property
    def kappa(self):
        return {"flat": 0, "sphere": 1, "hyperbolic": -1}[self.fiber]

    @property
    def nx(self):
        """Spatial carrier dimension: d for flat, d+1 extrinsic."""
        if self.fiber is None:
            raise DomainError("kind %r has no warped-product chart"
                              % (self.kind,))
        return self.d if self.fiber == "flat" else self.d + 1

    def fiber_form(self):
        """Ambient bilinear form of the fiber carrier (J_fib)."""
        if self.fiber == "hyperbolic":
            return QuadraticForm(1, self.d)
        return QuadraticForm(0, self.nx)

    def as_rw(self):
        """View Minkowski as the constant-warp flat warped product."""
        if self.kind == "rw":
            return self
        if self.kind == "minkowski":
            return SpaceTimeSpec("rw", self.d, "flat",
                                 WarpFunction.constant(), self.sigma)
        raise DomainError("kind %r has no warped-product form" % (self.kind,))

    def __repr__(self):
        if self.kind == "rw":
            return ("SpaceTimeSpec(rw, d=%d, fiber=%s, warp=%s, sigma=%g)"
                    % (self.d, self.fiber, self.warp.label, self.sigma))
        return "SpaceTimeSpec(%s, d=%d, sigma=%g)" % (self.kind, self.d,
                                                      self.sigma)


def _chart_spec(spec):
    if spec.kind == "minkowski":
        return spec.as_rw(), False
    if spec.kind == "rw":
        return spec, True
    raise DomainError(
        "kind %r is simulated through the frame flow and has no "
        "warped-product chart" % (spec.kind,))


def metric_at(spec, point):
    """Metric and inverse metric matrices at a chart point.

    Parameters
    ----------
    spec : SpaceTimeSpec
        Minkowski or rw kind.
    point : array, shape (1 + nx,)
        Chart point (t, x).  For rw, t must be positive.

    Returns
    -------
    g, ginv : arrays, shape (1+nx, 1+nx)
        Ambient carrier matrices diag(-1, alpha^2 J_fib) and its inverse.
        For curved fibers these restrict to the warped metric on vectors
        tangent to the fiber constraint; the ambient matrix itself is not
        positive on the normal direction of the hyperbolic carrier.
    """
    rw, needs_positive_t = _chart_spec(spec)
    point = np.asarray(point, float)
    if point.shape[-1] != 1 + rw.nx:
        raise DimensionError("point needs %d components, got %d"
                             % (1 + rw.nx, point.shape[-1]))
    t = point[..., 0]
    if needs_positive_t and np.any(t <= 0):
        raise DomainError("chart requires t > 0")
    a2 = np.asarray(rw.warp.alpha(t), float) ** 2
    jf = rw.fiber_form().signs
    diag = np.concatenate([[-1.0], a2 * jf]) if np.ndim(a2) == 0 else None
    if diag is None:
        raise DimensionError("metric_at takes a single point")
    g = np.diag(diag)
    ginv = np.diag(1.0 / diag)
    return g, ginv


def christoffel(spec, point):
    """Christoffel symbols Gamma[mu, nu, rho] at a chart point.

    Closed form for the carrier metric diag(-1, alpha(t)^2 J_fib), which
    depends on t only:

        Gamma^0_{ij} = alpha alpha' (J_fib)_{ij}
        Gamma^i_{0j} = Gamma^i_{j0} = (alpha'/alpha) delta_{ij}

    and zero otherwise.  Symmetric in the lower pair by construction.
    """
    rw, needs_positive_t = _chart_spec(spec)
    point = np.asarray(point, float)
    if point.shape[-1] != 1 + rw.nx:
        raise DimensionError("point needs %d components, got %d"
                             % (1 + rw.nx, point.shape[-1]))
    t = float(point[0])
    if needs_positive_t and t <= 0:
        raise DomainError("chart requires t > 0")
    n = 1 + rw.nx
    gam = np.zeros((n, n, n))
    a = float(rw.warp.alpha(t))
    da = float(rw.warp.dalpha(t))
    h = da / a
    jf = rw.fiber_form().signs
    for i in range(1, n):
        gam[0, i, i] = a * da * jf[i - 1]
        gam[i, 0, i] = h
        gam[i, i, 0] = h
    return gam


class RegimeReport:
    """Outcome of :func:`classify_regime`."""

    def __init__(self, horizon_finite, h3_integrable, regime, c=None,
                 i_alpha=None, h3_integral=None, notes=()):
        self.horizon_finite = bool(horizon_finite)
        self.h3_integrable = bool(h3_integrable)
        self.regime = regime
        self.c = c
        self.i_alpha = i_alpha
        self.h3_integral = h3_integral
        self.notes = list(notes)

    def __repr__(self):
        return ("RegimeReport(%s, horizon_finite=%s, h3_integrable=%s)"
                % (self.regime, self.horizon_finite, self.h3_integrable))


def _tail_inv_alpha(warp, big_t):
    """Tail of the integral of 1/alpha past big_t, from the growth tag."""
    if warp.growth == "polynomial":
        c = warp.c
        if c is None or c <= 1.0:
            return np.inf
        a_big = float(warp.alpha(big_t))
        return big_t / (a_big * (c - 1.0))
    if warp.growth == "exponential":
        rate = warp.params.get("rate", 1.0)
        with np.errstate(over="ignore"):
            a_big = float(warp.alpha(min(big_t, 700.0)))
        return 1.0 / (rate * a_big)
    # subexponential: integral of exp(-t^beta) tail, always finite
    beta = warp.params.get("beta")
    if beta is None:
        return 0.0
    return float(big_t ** (1.0 - beta) / beta
                 * np.exp(-big_t ** beta)) if big_t ** beta < 700 else 0.0


def _tail_h3(warp, big_t):
    """Tail of the integral of hubble^3 past big_t, from the growth tag."""
    if warp.growth == "polynomial":
        c = warp.c or 0.0
        return c ** 3 / (2.0 * big_t ** 2)
    if warp.growth == "exponential":
        return np.inf
    beta = warp.params.get("beta")
    if beta is None:
        raise ClassificationAmbiguous(
            "subexponential profile without a beta parameter")
    expo = 3.0 * (beta - 1.0)
    if expo >= -1.0:
        return np.inf
    return beta ** 3 * big_t ** (expo + 1.0) / (-expo - 1.0)


def classify_regime(spec, t0=1.0, t_max=1.0e6):
    """Predict the boundary regime of a warped-product diffusion.

    Two integrals of the warp profile decide everything: whether
    int 1/alpha converges (finite conformal horizon) and whether the cubed
    logarithmic rate hubble^3 is integrable.  Both are computed by adaptive
    quadrature on [t0, t_max] plus a tail term extrapolated from the growth
    tag.

    Returns
    -------
    RegimeReport
        With fields horizon_finite, h3_integrable and the regime label:
        finite horizon gives a limit point (with a limit tangent direction
        too when hubble^3 is integrable); infinite horizon gives the
        fiber-dependent asymptotic shape (line / circle of a great sphere /
        light-cone generator).

    Raises
    ------
    ClassificationAmbiguous
        When the tail behaviour of a tabulated profile cannot be decided.
    DomainError
        For kinds without a warped-product chart.
    """
    rw, _ = _chart_spec(spec)
    warp = rw.warp
    notes = []
    if not warp.log_concave:
        notes.append("warp is not log-concave; asymptotic statements for "
                     "warped products assume a non-increasing rate")

    hi = t_max
    if warp.growth in ("exponential", "subexponential"):
        # integrands underflow far out; cap the quadrature interval where
        # alpha reaches overflow and fold the rest into the tail estimate
        hi = min(t_max, 700.0)
    if hasattr(warp, "table_range"):
        hi = min(hi, warp.table_range[1])

    with np.errstate(over="ignore"), warnings.catch_warnings():
        # slow convergence of the main quadrature is expected exactly when
        # the tail term decides the answer, so the warning carries no news
        warnings.simplefilter("ignore", IntegrationWarning)
        i_main, _ = quad(lambda t: 1.0 / float(warp.alpha(t)), t0, hi,
                         limit=400)
        h3_main, _ = quad(lambda t: float(warp.hubble(t)) ** 3, t0, hi,
                          limit=400)

    if hasattr(warp, "table_range") and warp.growth == "polynomial" \
            and warp.c is not None and abs(warp.c) < 1e-9:
        # constant table: no tail growth at all
        i_tail, h3_tail = np.inf, 0.0
    else:
        i_tail = _tail_inv_alpha(warp, hi)
        h3_tail = _tail_h3(warp, hi)

    i_alpha = i_main + i_tail
    h3 = h3_main + h3_tail
    horizon_finite = np.isfinite(i_alpha)
    h3_integrable = np.isfinite(h3)

    if warp.growth == "polynomial" and warp.c is not None:
        if abs(warp.c - 1.0) < 1e-9:
            notes.append("c = 1 sits on the boundary of the admissible "
                         "polynomial range; treated as infinite horizon")
        if abs(warp.c) < 1e-9:
            notes.append("c = 0 (constant warp): flat-model sector, "
                         "drift direction statements are degenerate")

    if horizon_finite:
        regime = (FINITE_HORIZON_TANGENT if h3_integrable
                  else FINITE_HORIZON_POINT)
    else:
        regime = {"flat": INF_FLAT_LINE,
                  "sphere": INF_SPHERE_CIRCLE,
                  "hyperbolic": INF_HYP_CONE}[rw.fiber]

    return RegimeReport(horizon_finite, h3_integrable, regime,
                        c=warp.c, i_alpha=i_alpha, h3_integral=h3,
                        notes=notes)
