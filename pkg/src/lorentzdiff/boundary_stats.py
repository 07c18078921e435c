"""Ensemble statistics and pass/fail verdicts on asymptotic claims.

Everything here is deliberately boring numerics: least-squares slopes on
trailing windows (Lyapunov exponents), sup-distance Cauchy tails
(almost-sure convergence surrogates), an exact two-sample KS statistic
(start-point forgetting), order-statistic confidence intervals for
ensemble medians, and a table mapping each asymptotic regime to the named
checks that verify it.  Thresholds live in ``thresholds.json`` next to
this module and can be overridden per run.
"""

import json
import math
import os

import numpy as np
from scipy.stats import norm

from .errors import DomainError, InsufficientData

norm_ppf = norm.ppf

_THRESHOLDS_PATH = os.path.join(os.path.dirname(__file__), "thresholds.json")


def load_thresholds(path=None):
    """Threshold table: the packaged defaults or a caller-supplied file."""
    with open(path or _THRESHOLDS_PATH) as fh:
        table = json.load(fh)
    if "version" not in table or "checks" not in table:
        raise DomainError("thresholds file needs 'version' and 'checks'")
    return table


def _trailing(s, window):
    s = np.asarray(s, float)
    if s.ndim != 1:
        raise InsufficientData("need a 1-d sample-time grid")
    cut = s[-1] - window * (s[-1] - s[0])
    mask = s >= cut - 1e-12
    return mask


def lyapunov(s, series, window=0.5):
    """Trailing-window least-squares slope, with a 1.96 SE half-width.

    Parameters
    ----------
    s : (n,) array
        Sample times, shared by all paths.
    series : (..., n) array
        Scalar series per path (e.g. log tdot); leading axes are batch.
    window : float
        Fraction of the time span used, counted from the end.

    Returns
    -------
    slope, half_width : arrays with the leading shape of ``series``
        half_width is 1.96 times the standard error of the fitted slope
        (zero for an exactly linear series).

    Raises
    ------
    InsufficientData
        Fewer than 10 samples in the window.
    """
    s = np.asarray(s, float)
    series = np.asarray(series, float)
    mask = _trailing(s, window)
    if int(mask.sum()) < 10:
        raise InsufficientData("need >= 10 samples in the trailing window, "
                               "have %d" % int(mask.sum()))
    st = s[mask]
    yt = series[..., mask]
    n = st.size
    sc = st - st.mean()
    denom = float(np.sum(sc * sc))
    slope = np.sum(yt * sc, axis=-1) / denom
    intercept = np.mean(yt, axis=-1)
    resid = yt - (intercept[..., None] + slope[..., None] * sc)
    if n > 2:
        var = np.sum(resid * resid, axis=-1) / (n - 2)
    else:
        var = np.zeros_like(slope)
    half = 1.96 * np.sqrt(var / denom)
    return slope, half


def cauchy_tail(s, series, split=0.5, metric="euclidean"):
    """Sup distance from tail samples to the final sample, per path.

    The tail is the last ``split`` fraction of the time span.  A series
    that has converged gives a small value; a wandering one does not.

    metric:
        "euclidean"  last axis is a vector
        "angle"      last axis is a unit vector, great-circle distance
        "matrix"     last two axes are a matrix, max-abs entry distance
        "abs"        scalar series
    """
    s = np.asarray(s, float)
    series = np.asarray(series, float)
    mask = _trailing(s, split)
    if int(mask.sum()) < 4:
        raise InsufficientData("need >= 4 tail samples, have %d"
                               % int(mask.sum()))
    if metric == "abs":
        tail = series[..., mask]
        last = series[..., -1:]
        return np.max(np.abs(tail - last), axis=-1)
    if metric == "euclidean":
        tail = series[..., mask, :]
        last = series[..., -1:, :]
        return np.max(np.linalg.norm(tail - last, axis=-1), axis=-1)
    if metric == "angle":
        tail = series[..., mask, :]
        last = series[..., -1:, :]
        cosang = np.clip(np.sum(tail * last, axis=-1), -1.0, 1.0)
        return np.max(np.arccos(cosang), axis=-1)
    if metric == "matrix":
        tail = series[..., mask, :, :]
        last = series[..., -1:, :, :]
        return np.max(np.abs(tail - last), axis=(-3, -2, -1))
    raise DomainError("unknown metric %r" % (metric,))


def two_start_ks(a, b):
    """Exact two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.

    Needs at least 50 samples on each side; identical samples give 0.0
    and disjoint supports give 1.0 exactly.
    """
    a = np.sort(np.asarray(a, float).ravel())
    b = np.sort(np.asarray(b, float).ravel())
    if a.size < 50 or b.size < 50:
        raise InsufficientData("need >= 50 samples per side, have %d and %d"
                               % (a.size, b.size))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def median_ci(values, level=0.95):
    """Median with a distribution-free order-statistic confidence interval.

    Returns (median, lo, hi).  The interval uses the binomial normal
    approximation for the order ranks; with fewer than 8 values it
    degenerates to the sample range.
    """
    v = np.sort(np.asarray(values, float).ravel())
    n = v.size
    if n == 0:
        raise InsufficientData("no values")
    med = float(np.median(v))
    if n < 8:
        return med, float(v[0]), float(v[-1])
    z = norm_ppf(0.5 + level / 2.0)
    half = z * math.sqrt(n) / 2.0
    lo = int(np.floor((n - 1) / 2.0 - half))
    hi = int(np.ceil((n - 1) / 2.0 + half))
    lo = max(lo, 0)
    hi = min(hi, n - 1)
    return med, float(v[lo]), float(v[hi])


# The named checks that verify each asymptotic regime.  Keys are regime
# labels for warped products, model names for the two curved models, and
# "minkowski" for the flat model.
REGISTRY = {
    "InfFlatLine": ["lyapunov-tdot", "lyapunov-alpha", "theta-converges",
                    "delta-converges", "pseudo-norm"],
    "FiniteHorizonTangent": ["x-converges", "theta-converges",
                             "clock-saturates", "pseudo-norm"],
    "FiniteHorizonPoint": ["x-converges", "theta-fluctuates", "clock-grows",
                           "pseudo-norm"],
    "InfSphereCircle": ["bhat-converges", "reconstruction-identity",
                        "clock-sync", "pseudo-norm"],
    "InfHypCone": ["v-limit", "deltatilde-converges", "theta-reconstruction",
                   "pseudo-norm"],
    "desitter": ["beta-slope-positive", "n-converges", "theta-ergodic"],
    "antidesitter": ["chamber-ordering", "n-converges", "isotropy-cone"],
    "minkowski": ["lyapunov-tdot-free", "pseudo-norm"],
}

# How each named check compares its statistic to its threshold entry:
# "le" passes when stats[key] <= value, "ge" when >=, "band" when inside
# [lo, hi], "pos" when the CI lower bound stats[key] > 0.
_CHECK_MODES = {
    "lyapunov-tdot": ("tdot_slope_median", "band"),
    "lyapunov-tdot-free": ("tdot_slope_median", "band"),
    "lyapunov-alpha": ("alpha_slope_median", "band"),
    "theta-converges": ("theta_tail_median", "le"),
    "theta-fluctuates": ("theta_tail_median", "ge"),
    "delta-converges": ("delta_tail_median", "le"),
    "x-converges": ("x_tail_median", "le"),
    "clock-saturates": ("clock_growth_ratio", "le"),
    "clock-grows": ("clock_growth_ratio", "ge"),
    "bhat-converges": ("bhat_tail_q90", "le"),
    "reconstruction-identity": ("reconstruction_max", "le"),
    "clock-sync": ("clock_sync_tail_median", "le"),
    "v-limit": ("v_final_median", "ge"),
    "deltatilde-converges": ("deltatilde_tail_median", "le"),
    "theta-reconstruction": ("theta_reconstruction_median", "le"),
    "beta-slope-positive": ("beta_slope_ci_lo", "pos"),
    "n-converges": ("n_tail_q90", "le"),
    "theta-ergodic": ("theta_ks", "le"),
    "chamber-ordering": ("chamber_ordering_ok", "flag"),
    "isotropy-cone": ("isotropy_ratio_median", "le"),
    "pseudo-norm": ("pseudo_norm_max", "le"),
}


def verdict_suite(regime, stats, thresholds=None):
    """Evaluate the registered checks of one regime against thresholds.

    Parameters
    ----------
    regime : str
        A key of REGISTRY.
    stats : mapping
        Statistic values keyed as in _CHECK_MODES; a missing key makes the
        corresponding check inconclusive rather than failing.
    thresholds : mapping, optional
        As returned by load_thresholds.

    Returns
    -------
    dict
        check name -> {"verdict": "pass"|"fail"|"inconclusive",
                       "value": float or None, "threshold": entry}.
    """
    if regime not in REGISTRY:
        raise DomainError("unknown regime %r" % (regime,))
    table = thresholds or load_thresholds()
    out = {}
    for name in REGISTRY[regime]:
        key, mode = _CHECK_MODES[name]
        entry = table["checks"].get(name)
        value = stats.get(key)
        if value is None or (np.isscalar(value)
                             and not np.isfinite(value)):
            out[name] = {"verdict": "inconclusive", "value": None,
                         "threshold": entry}
            continue
        if entry is None and mode not in ("pos", "flag"):
            out[name] = {"verdict": "inconclusive", "value": value,
                         "threshold": None}
            continue
        if mode == "le":
            ok = value <= entry["max"]
        elif mode == "ge":
            ok = value >= entry["min"]
        elif mode == "band":
            ok = entry["band"][0] <= value <= entry["band"][1]
        elif mode == "pos":
            ok = value > 0.0
        else:  # flag
            ok = bool(value)
        out[name] = {"verdict": "pass" if ok else "fail", "value": value,
                     "threshold": entry}
    return out


def overall_exit_code(verdicts):
    """0 all pass, 1 any fail, 2 otherwise (some inconclusive)."""
    states = [v["verdict"] for v in verdicts.values()]
    if any(s == "fail" for s in states):
        return 1
    if all(s == "pass" for s in states):
        return 0
    return 2
