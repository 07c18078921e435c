"""Configuration, seeded ensemble execution, and artifact emission.

Three command line tools share this module: ``simulate`` runs one
configured ensemble and writes summary artifacts, ``decompose`` is a
batch factorization utility for matrices stored in CSV, and ``classify``
reports the asymptotic regime of a warp profile without running
anything.

The config file is YAML with four sections (``spacetime``, ``numerics``,
``ensemble``, ``outputs``) plus an optional ``checks`` section.  Unknown
keys are errors: silent misconfiguration is the main reproducibility
hazard in batch experiments, so nothing is ignored quietly.  Exit codes
follow sysexits where sensible: 0 all registered checks pass, 1 some
check failed, 2 some check was inconclusive, 64 bad configuration or
usage, 74 an I/O failure while writing artifacts.

Ensembles are split across a small thread pool (``LD_THREADS`` overrides
the worker count).  Each path's noise streams are keyed by its global
path index, and chunk results are concatenated in path-index order, so
every output byte except the manifest timing is independent of the
worker count.
"""

import argparse
import csv
import datetime
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from types import SimpleNamespace

import numpy as np
import yaml

from .boundary_stats import (REGISTRY, cauchy_tail, load_thresholds,
                             overall_exit_code, two_start_ks,
                             verdict_suite)
from .errors import ConfigError, Error, InsufficientData
from .frame_flow import simulate_frame_ensemble
from .iwasawa import decompose_ensemble, weyl_stats, ads_boundary
from .rw_sim import ReducedRecord, reduced_stats, simulate_reduced
from .spacetime import (FIBERS, KINDS, QuadraticForm, SpaceTimeSpec,
                        WarpFunction, classify_regime)

try:
    from importlib.metadata import version as _pkg_version
    CODE_VERSION = _pkg_version("lorentzdiff")
except Exception:
    CODE_VERSION = "unknown"

_KNOWN_CHECKS = sorted({name for names in REGISTRY.values()
                        for name in names})


# ----------------------------------------------------------------- config

def _require_mapping(obj, where):
    if not isinstance(obj, dict):
        raise ConfigError("section %r must be a mapping" % (where,))
    return obj


def _reject_unknown(raw, allowed, where):
    extra = sorted(set(raw) - set(allowed))
    if extra:
        raise ConfigError("unknown key %r in %s" % (extra[0], where))


_WARP_PARAMS = {
    "power": ("a",),
    "stretched_exponential": ("beta",),
    "exponential": (),
    "cosh": (),
    "constant": (),
    "table": ("path",),
}


def warp_from_mapping(raw):
    """Build a WarpFunction from a config mapping {id: ..., params...}."""
    raw = _require_mapping(raw, "spacetime.warp")
    if "id" not in raw:
        raise ConfigError("spacetime.warp needs an 'id'")
    wid = str(raw["id"])
    if wid not in _WARP_PARAMS:
        raise ConfigError("unknown warp id %r (known: %s)"
                          % (wid, ", ".join(sorted(_WARP_PARAMS))))
    _reject_unknown(raw, ("id",) + _WARP_PARAMS[wid], "spacetime.warp")
    missing = [p for p in _WARP_PARAMS[wid] if p not in raw]
    if missing:
        raise ConfigError("warp %r needs parameter %r" % (wid, missing[0]))
    if wid == "power":
        return WarpFunction.power(float(raw["a"]))
    if wid == "stretched_exponential":
        return WarpFunction.stretched_exponential(float(raw["beta"]))
    if wid == "table":
        return WarpFunction.from_csv(str(raw["path"]))
    return getattr(WarpFunction, wid)()


def warp_from_string(text):
    """Parse a compact warp spec: 'power:2', 'exponential', 'table:f.csv'."""
    head, _, tail = str(text).partition(":")
    if head not in _WARP_PARAMS:
        raise ConfigError("unknown warp id %r" % (head,))
    params = _WARP_PARAMS[head]
    if params and not tail:
        raise ConfigError("warp %r needs a parameter, e.g. %r"
                          % (head, "%s:0.5" % head))
    if not params and tail:
        raise ConfigError("warp %r takes no parameter" % (head,))
    if not params:
        return getattr(WarpFunction, head)()
    if head == "table":
        return WarpFunction.from_csv(tail)
    try:
        value = float(tail)
    except ValueError:
        raise ConfigError("warp parameter %r is not a number" % (tail,))
    return warp_from_mapping({"id": head, params[0]: value})


class SimConfig:
    """Validated simulation configuration.

    Construct with from_dict or load; the attributes are plain nested
    dicts that round-trip through to_dict and YAML without loss.
    """

    __slots__ = ("spacetime", "numerics", "ensemble", "outputs", "checks")

    def __init__(self, spacetime, numerics, ensemble, outputs, checks):
        self.spacetime = spacetime
        self.numerics = numerics
        self.ensemble = ensemble
        self.outputs = outputs
        self.checks = checks

    @classmethod
    def from_dict(cls, raw):
        raw = _require_mapping(raw, "config")
        _reject_unknown(raw, ("spacetime", "numerics", "ensemble",
                              "outputs", "checks"), "config")
        for section in ("spacetime", "numerics", "ensemble"):
            if section not in raw:
                raise ConfigError("config needs a %r section" % (section,))

        st = _require_mapping(raw["spacetime"], "spacetime")
        _reject_unknown(st, ("kind", "d", "fiber", "warp", "sigma"),
                        "spacetime")
        if "kind" not in st:
            raise ConfigError("spacetime needs a 'kind'")
        kind = str(st["kind"]).lower()
        if kind not in KINDS:
            raise ConfigError("unknown kind %r (known: %s)"
                              % (kind, ", ".join(KINDS)))
        d = int(st.get("d", 3))
        if d < 2:
            raise ConfigError("need d >= 2")
        sigma = float(st.get("sigma", 1.0))
        if not sigma > 0:
            raise ConfigError("sigma must be positive")
        spacetime = {"kind": kind, "d": d, "sigma": sigma}
        if kind == "rw":
            if "warp" not in st:
                raise ConfigError("kind 'rw' needs spacetime.warp")
            warp_from_mapping(st["warp"])  # validate now, rebuild later
            fiber = str(st.get("fiber", "flat")).lower()
            if fiber not in FIBERS:
                raise ConfigError("unknown fiber %r" % (fiber,))
            spacetime["fiber"] = fiber
            spacetime["warp"] = dict(st["warp"])
        elif "warp" in st or "fiber" in st:
            raise ConfigError("fiber/warp apply only to kind 'rw'")

        nm = _require_mapping(raw["numerics"], "numerics")
        _reject_unknown(nm, ("ds", "s_max", "record_every", "reorth_every"),
                        "numerics")
        for need in ("ds", "s_max"):
            if need not in nm:
                raise ConfigError("numerics needs %r" % (need,))
        ds = float(nm["ds"])
        s_max = float(nm["s_max"])
        if not ds > 0:
            raise ConfigError("ds must be positive")
        if s_max < 10 * ds:
            raise ConfigError("s_max must be at least 10 * ds")
        record_every = int(nm.get("record_every", 100))
        reorth_every = int(nm.get("reorth_every", 100))
        if record_every < 1 or reorth_every < 0:
            raise ConfigError("bad record_every/reorth_every")
        numerics = {"ds": ds, "s_max": s_max, "record_every": record_every,
                    "reorth_every": reorth_every}

        en = _require_mapping(raw["ensemble"], "ensemble")
        _reject_unknown(en, ("paths", "seed"), "ensemble")
        for need in ("paths", "seed"):
            if need not in en:
                raise ConfigError("ensemble needs %r" % (need,))
        n_paths = int(en["paths"])
        seed = int(en["seed"])
        if n_paths < 1:
            raise ConfigError("need at least one path")
        if seed < 0:
            raise ConfigError("seed must be nonnegative")
        ensemble = {"paths": n_paths, "seed": seed}

        ou = _require_mapping(raw.get("outputs", {}), "outputs")
        _reject_unknown(ou, ("directory", "formats"), "outputs")
        formats = list(ou.get("formats", ["csv", "json"]))
        for fmt in formats:
            if fmt not in ("csv", "json"):
                raise ConfigError("unknown output format %r" % (fmt,))
        outputs = {"directory": str(ou.get("directory", "out")),
                   "formats": formats}

        ck = _require_mapping(raw.get("checks", {}), "checks")
        _reject_unknown(ck, ("registry", "thresholds"), "checks")
        registry = ck.get("registry")
        if registry is not None:
            registry = [str(name) for name in registry]
            for name in registry:
                if name not in _KNOWN_CHECKS:
                    raise ConfigError("unknown check %r (known: %s)"
                                      % (name, ", ".join(_KNOWN_CHECKS)))
        thresholds = ck.get("thresholds")
        checks = {"registry": registry,
                  "thresholds": None if thresholds is None
                  else str(thresholds)}

        return cls(spacetime, numerics, ensemble, outputs, checks)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        if raw is None:
            raise ConfigError("config file %r is empty" % (path,))
        return cls.from_dict(raw)

    def to_dict(self):
        out = {"spacetime": dict(self.spacetime),
               "numerics": dict(self.numerics),
               "ensemble": dict(self.ensemble),
               "outputs": {"directory": self.outputs["directory"],
                           "formats": list(self.outputs["formats"])},
               "checks": dict(self.checks)}
        if "warp" in self.spacetime:
            out["spacetime"]["warp"] = dict(self.spacetime["warp"])
        return out

    def with_overrides(self, paths=None, seed=None, out_dir=None):
        raw = self.to_dict()
        if paths is not None:
            raw["ensemble"]["paths"] = int(paths)
        if seed is not None:
            raw["ensemble"]["seed"] = int(seed)
        if out_dir is not None:
            raw["outputs"]["directory"] = str(out_dir)
        return SimConfig.from_dict(raw)

    def spec(self):
        st = self.spacetime
        if st["kind"] == "rw":
            return SpaceTimeSpec("rw", st["d"], st["fiber"],
                                 warp_from_mapping(st["warp"]), st["sigma"])
        return SpaceTimeSpec(st["kind"], st["d"], sigma=st["sigma"])

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ----------------------------------------------------- chunked execution

def worker_count():
    """Pool size: LD_THREADS when set, else up to four cores."""
    raw = os.environ.get("LD_THREADS")
    if raw is None:
        return max(1, min(4, os.cpu_count() or 1))
    try:
        workers = int(raw)
    except ValueError:
        workers = 0
    if workers < 1:
        raise ConfigError("LD_THREADS must be a positive integer")
    return workers


def _chunk_bounds(n_paths, workers):
    k = max(1, min(workers, n_paths))
    bounds = [(i * n_paths // k, (i + 1) * n_paths // k) for i in range(k)]
    return [(lo, hi) for lo, hi in bounds if hi > lo]


def _merge_reduced(parts):
    if len(parts) == 1:
        return parts[0]
    first = parts[0]

    def cat(name):
        return np.concatenate([getattr(p, name) for p in parts], axis=0)

    extras = {key: np.concatenate([p.extras[key] for p in parts], axis=0)
              for key in first.extras}
    pseudo = np.max(np.stack([p.pseudo for p in parts]), axis=0)
    gaps = sum(p.gap_count for p in parts)
    return ReducedRecord(first.spec, first.regime, first.s, cat("t"),
                         cat("tdot"), cat("C"), cat("D"), cat("A"),
                         cat("x"), cat("Theta"), extras, pseudo, gaps)


def _run_reduced_ensemble(spec, cfg, n_paths, seed, regime, workers):
    nm = cfg.numerics
    bounds = _chunk_bounds(n_paths, workers)

    def job(lo, hi):
        return simulate_reduced(spec, nm["ds"], nm["s_max"], hi - lo, seed,
                                record_every=nm["record_every"],
                                regime=regime, path_offset=lo)

    if len(bounds) == 1:
        return job(*bounds[0])
    with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
        parts = list(pool.map(lambda b: job(*b), bounds))
    return _merge_reduced(parts)


def _run_frame_ensemble(group, cfg, n_paths, seed, workers, g0=None,
                        path_base=0):
    st, nm = cfg.spacetime, cfg.numerics
    bounds = _chunk_bounds(n_paths, workers)

    def job(lo, hi):
        return simulate_frame_ensemble(
            group, st["d"], st["sigma"], nm["ds"], nm["s_max"], hi - lo,
            seed, record_every=nm["record_every"],
            reorth_every=nm["reorth_every"], g0=g0,
            path_offset=path_base + lo)

    if len(bounds) == 1:
        out = job(*bounds[0])
    else:
        with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
            parts = list(pool.map(lambda b: job(*b), bounds))
        out = SimpleNamespace(group=group, d=parts[0].d, s=parts[0].s,
                              G=np.concatenate([p.G for p in parts], axis=0))
    return out


# ------------------------------------------------------------ run lanes

def _reduced_lane(cfg, n_paths, seed, workers):
    spec = cfg.spec()
    if spec.kind == "minkowski":
        regime = "minkowski"
    else:
        regime = classify_regime(spec).regime
    rec = _run_reduced_ensemble(spec, cfg, n_paths, seed, regime, workers)
    notes = []
    try:
        stats = reduced_stats(rec)
    except InsufficientData as exc:
        stats = {}
        notes.append("statistics unavailable: %s" % (exc,))
    payload = {"regime": rec.regime, "gap_count": int(rec.gap_count),
               "notes": notes}
    return rec, stats, payload


def _antipodal_start(m):
    # a rotation of the spatial block sending e1 to -e1 (and e2 to -e2,
    # keeping the determinant at +1), inside the compact subgroup
    g0 = np.eye(m)
    g0[1, 1] = -1.0
    g0[2, 2] = -1.0
    return g0


def _desitter_stats(cfg, n_paths, seed, workers):
    d = cfg.spacetime["d"]
    ens = _run_frame_ensemble("SO(1,d+1)", cfg, n_paths, seed, workers)
    co = decompose_ensemble(ens.G, "SO(1,d+1)", d)
    good = ~co.bad.any(axis=1)
    gaps = int(co.bad.sum())
    stats, notes = {}, []
    if good.any():
        try:
            ws = weyl_stats(ens.s, co.beta[good])
            stats["beta_slope_median"] = float(ws.median)
            stats["beta_slope_ci_lo"] = float(ws.ci[0])
            stats["beta_slope_ci_hi"] = float(ws.ci[1])
        except InsufficientData as exc:
            notes.append("chamber statistics unavailable: %s" % (exc,))
        try:
            tails = cauchy_tail(ens.s, co.n[good], metric="matrix")
            stats["n_tail_q90"] = float(np.quantile(tails, 0.9))
        except InsufficientData as exc:
            notes.append("unipotent tail unavailable: %s" % (exc,))
    # ergodicity of the compact angle: an independent ensemble from the
    # antipodal start (stream keys beyond the primary block, same seed)
    theta_a = co.k[good, -1, 1, 1] if good.any() else np.empty(0)
    ens_b = _run_frame_ensemble("SO(1,d+1)", cfg, n_paths, seed, workers,
                                g0=_antipodal_start(d + 2),
                                path_base=n_paths)
    co_b = decompose_ensemble(ens_b.G[:, -1], "SO(1,d+1)", d)
    good_b = ~co_b.bad
    gaps += int(co_b.bad.sum())
    theta_b = co_b.k[good_b, 1, 1]
    try:
        stats["theta_ks"] = float(two_start_ks(theta_a, theta_b))
    except InsufficientData as exc:
        notes.append("ergodicity check unavailable: %s" % (exc,))
    payload = {"regime": "desitter", "gap_count": gaps, "notes": notes}
    ens.beta = co.beta
    ens.theta_terminal = theta_a
    return ens, stats, payload


def _antidesitter_stats(cfg, n_paths, seed, workers):
    d = cfg.spacetime["d"]
    ens = _run_frame_ensemble("SO(2,d)", cfg, n_paths, seed, workers)
    co = decompose_ensemble(ens.G, "SO(2,d)", d)
    good = ~co.bad.any(axis=1)
    gaps = int(co.bad.sum())
    stats, notes = {}, []
    if good.any():
        try:
            ws_lam = weyl_stats(ens.s, co.lam[good])
            ws_mu = weyl_stats(ens.s, co.mu[good])
            ordered = (ws_lam.slopes > ws_mu.slopes) & (ws_mu.slopes > 0)
            frac = float(np.mean(ordered))
            stats["chamber_ordering_fraction"] = frac
            stats["chamber_ordering_ok"] = bool(frac >= 0.95)
            stats["lam_slope_median"] = float(ws_lam.median)
            stats["lam_slope_ci_lo"] = float(ws_lam.ci[0])
            stats["mu_slope_median"] = float(ws_mu.median)
            stats["mu_slope_ci_lo"] = float(ws_mu.ci[0])
        except InsufficientData as exc:
            notes.append("chamber statistics unavailable: %s" % (exc,))
        try:
            rep = ads_boundary(ens.s, co.lam[good], co.mu[good],
                               co.n[good], QuadraticForm(2, d))
            stats["n_tail_q90"] = float(np.quantile(rep.n_tail, 0.9))
            stats["isotropy_ratio_median"] = float(
                np.median(rep.isotropy_ratio))
            stats["u_tail_median"] = float(np.median(rep.u_tail))
            stats["v_tail_median"] = float(np.median(rep.v_tail))
        except InsufficientData as exc:
            notes.append("boundary functionals unavailable: %s" % (exc,))
    payload = {"regime": "antidesitter", "gap_count": gaps, "notes": notes}
    ens.lam = co.lam
    ens.mu = co.mu
    return ens, stats, payload


# ------------------------------------------------------------- artifacts

def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError("not serializable: %r" % (type(obj),))


def _render_threshold(entry):
    if entry is None:
        return ""
    if "max" in entry:
        return "<= %g" % entry["max"]
    if "min" in entry:
        return ">= %g" % entry["min"]
    if "band" in entry:
        return "in [%g, %g]" % tuple(entry["band"])
    return "qualitative"


def emit_plotdata(records, kind, path):
    """Write tidy plot data for one record set; returns the file path.

    kind 'trace': records is a mapping of column name to equal-length
    1-d arrays (insertion order gives the column order).  kind 'slope':
    records holds 's' and 'y'; a least-squares fit over the trailing
    half is added as a third column.  kind 'histogram': records holds
    'samples'; rows are (bin_left, bin_right, count) and the counts sum
    to the sample count.  Empty input produces just the header row.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if kind == "trace":
            names = list(records)
            writer.writerow(names)
            columns = [np.asarray(records[name], float).ravel()
                       for name in names]
            for row in zip(*columns):
                writer.writerow(["%.17g" % v for v in row])
        elif kind == "slope":
            writer.writerow(["s", "y", "fit"])
            s = np.asarray(records["s"], float).ravel()
            y = np.asarray(records["y"], float).ravel()
            if s.size:
                cut = s[-1] - 0.5 * (s[-1] - s[0])
                sel = s >= cut - 1e-12
                if sel.sum() >= 2:
                    b, a = np.polyfit(s[sel], y[sel], 1)
                else:
                    b, a = 0.0, float(y[-1])
                fit = a + b * s
                for row in zip(s, y, fit):
                    writer.writerow(["%.17g" % v for v in row])
        elif kind == "histogram":
            writer.writerow(["bin_left", "bin_right", "count"])
            samples = np.asarray(records["samples"], float).ravel()
            if samples.size:
                nb = int(min(64, max(8, round(math.sqrt(samples.size)))))
                counts, edges = np.histogram(samples, bins=nb)
                for i, c in enumerate(counts):
                    writer.writerow(["%.17g" % edges[i],
                                     "%.17g" % edges[i + 1], int(c)])
        else:
            raise ConfigError("unknown plot kind %r" % (kind,))
    return path


def _write_summary_csv(path, verdicts):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "statistic", "threshold", "verdict"])
        for name in sorted(verdicts):
            row = verdicts[name]
            value = row["value"]
            writer.writerow([name,
                             "" if value is None else "%.17g" % value,
                             _render_threshold(row["threshold"]),
                             row["verdict"]])


def _write_paths_jsonl(path, record):
    with open(path, "w") as fh:
        if isinstance(record, ReducedRecord):
            for i in range(record.t.shape[0]):
                line = {"path": i, "s": record.s,
                        "t": record.t[i], "tdot": record.tdot[i],
                        "C": record.C[i], "D": record.D[i],
                        "A": record.A[i], "x": record.x[i],
                        "Theta": record.Theta[i]}
                for key, arr in record.extras.items():
                    line[key] = arr[i]
                fh.write(json.dumps(line, default=_json_default) + "\n")
        else:
            for i in range(record.G.shape[0]):
                line = {"path": i, "s": record.s, "frame": record.G[i]}
                fh.write(json.dumps(line, default=_json_default) + "\n")


def _plot_records(lane, record):
    if isinstance(record, ReducedRecord):
        trace = {"s": record.s, "t": record.t[0], "tdot": record.tdot[0]}
        slope = {"s": record.s, "y": np.log(record.tdot[0])}
        if record.spec.kind == "rw" and record.spec.fiber != "flat":
            samples = record.Theta[:, -1, 1]
        else:
            samples = record.Theta[:, -1, 0]
        return trace, slope, {"samples": samples}
    if lane == "desitter":
        series = record.beta
        samples = record.theta_terminal
    else:
        series = record.lam
        samples = record.lam[:, -1]
    keep = np.isfinite(series[:, -1])
    first = int(np.argmax(keep)) if keep.any() else 0
    trace = {"s": record.s, "rapidity": series[first]}
    slope = {"s": record.s, "y": series[first]}
    return trace, slope, {"samples": samples[np.isfinite(samples)]}


def run(config, out_dir=None, emit_paths=False, check_only=False,
        paths=None, seed=None):
    """Execute one configured ensemble and write its artifacts.

    Returns the exit code: 0 when every registered check passes, 1 when
    any fails, 2 when any is inconclusive.  check_only skips all file
    output and prints verdicts to stdout instead.
    """
    cfg = config.with_overrides(paths=paths, seed=seed, out_dir=out_dir)
    n_paths = cfg.ensemble["paths"]
    run_seed = cfg.ensemble["seed"]
    workers = worker_count()
    kind = cfg.spacetime["kind"]

    started = time.perf_counter()
    if kind in ("rw", "minkowski"):
        lane = "reduced"
        record, stats, payload = _reduced_lane(cfg, n_paths, run_seed,
                                               workers)
    elif kind == "desitter":
        lane = "desitter"
        record, stats, payload = _desitter_stats(cfg, n_paths, run_seed,
                                                 workers)
    else:
        lane = "antidesitter"
        record, stats, payload = _antidesitter_stats(cfg, n_paths,
                                                     run_seed, workers)
    wall = time.perf_counter() - started

    table = load_thresholds(cfg.checks["thresholds"])
    verdicts = verdict_suite(payload["regime"], stats, table)
    if cfg.checks["registry"] is not None:
        verdicts = {name: row for name, row in verdicts.items()
                    if name in cfg.checks["registry"]}
    code = overall_exit_code(verdicts)

    summary = {"regime": payload["regime"], "paths": n_paths,
               "seed": run_seed, "gap_count": payload["gap_count"],
               "notes": payload["notes"], "stats": stats,
               "verdicts": verdicts}

    if check_only:
        print(json.dumps(summary, default=_json_default, indent=2,
                         sort_keys=True))
        return code

    directory = cfg.outputs["directory"]
    os.makedirs(directory, exist_ok=True)
    manifest = {"config_hash": cfg.hash(), "code_version": CODE_VERSION,
                "wall_time_s": round(wall, 3),
                "created_utc": datetime.datetime.now(
                    datetime.timezone.utc).isoformat(timespec="seconds"),
                "workers": workers, "exit_code": code}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if "json" in cfg.outputs["formats"]:
        with open(os.path.join(directory, "summary.json"), "w") as fh:
            json.dump(summary, fh, default=_json_default, indent=2,
                      sort_keys=True)
            fh.write("\n")
    if "csv" in cfg.outputs["formats"]:
        _write_summary_csv(os.path.join(directory, "summary.csv"),
                           verdicts)
        trace, slope, hist = _plot_records(lane, record)
        emit_plotdata(trace, "trace",
                      os.path.join(directory, "plot_trace.csv"))
        emit_plotdata(slope, "slope",
                      os.path.join(directory, "plot_slope.csv"))
        emit_plotdata(hist, "histogram",
                      os.path.join(directory, "plot_hist.csv"))
    if emit_paths:
        _write_paths_jsonl(os.path.join(directory, "paths.jsonl"), record)
    return code


# ------------------------------------------------------------- commands

_GROUP_TOKENS = {"so1d+1": "SO(1,d+1)", "so2d": "SO(2,d)",
                 "so1d": "SO(1,d)"}


def _cmd_simulate(args):
    try:
        config = SimConfig.load(args.config)
    except OSError as exc:
        raise ConfigError("cannot read config %r: %s" % (args.config, exc))
    return run(config, out_dir=args.out, emit_paths=args.emit_paths,
               check_only=args.check_only, paths=args.paths,
               seed=args.seed)


def _cmd_decompose(args):
    group = _GROUP_TOKENS[args.group]
    d = args.d
    if d < 2:
        raise ConfigError("need d >= 2")
    m = d + 1 if args.group == "so1d" else d + 2
    try:
        data = np.loadtxt(args.infile, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ConfigError("unreadable matrix CSV: %s" % (exc,))
    if data.shape[1] != m or data.shape[0] % m != 0:
        raise ConfigError("expected rows of %d values in blocks of %d "
                          "(got shape %s)" % (m, m, data.shape))
    mats = data.reshape(-1, m, m)
    co = decompose_ensemble(mats, group, d)
    any_bad = False
    for i in range(mats.shape[0]):
        bad = bool(co.bad[i])
        any_bad = any_bad or bad
        line = {"index": i, "bad": bad}
        if group == "SO(2,d)":
            line.update(lam=co.lam[i], mu=co.mu[i], theta=co.theta[i],
                        x=co.x[i], y=co.y[i], h=co.h[i],
                        htilde=co.htilde[i])
        else:
            line.update(beta=co.beta[i], h=co.h[i])
        print(json.dumps(line, default=_json_default))
    return 1 if any_bad else 0


def _cmd_classify(args):
    warp = warp_from_string(args.warp)
    spec = SpaceTimeSpec("rw", args.d, args.fiber, warp, args.sigma)
    report = classify_regime(spec)
    out = {"warp": warp.label, "growth": warp.growth, "c": warp.c,
           "regime": report.regime,
           "horizon_finite": report.horizon_finite,
           "h3_integrable": report.h3_integrable,
           "notes": report.notes}
    print(json.dumps(out, default=_json_default, indent=2))
    return 0


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit 64)."""

    def error(self, message):
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="lorentzdiff",
                     description="Relativistic diffusion ensembles on "
                                 "warped products and model spacetimes.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run a configured ensemble")
    sim.add_argument("--config", required=True, help="YAML config file")
    sim.add_argument("--paths", type=int, help="override ensemble.paths")
    sim.add_argument("--seed", type=int, help="override ensemble.seed")
    sim.add_argument("--out", help="override outputs.directory")
    sim.add_argument("--emit-paths", action="store_true",
                     help="also write per-path JSONL records")
    sim.add_argument("--check-only", action="store_true",
                     help="print verdicts, write nothing")

    dec = sub.add_parser("decompose",
                         help="batch n·a·k factorization of matrices")
    dec.add_argument("--group", required=True,
                     choices=sorted(_GROUP_TOKENS))
    dec.add_argument("--in", dest="infile", required=True,
                     help="CSV of stacked square matrices")
    dec.add_argument("--d", type=int, default=3)

    cla = sub.add_parser("classify",
                         help="report the asymptotic regime of a warp")
    cla.add_argument("--warp", required=True,
                     help="e.g. power:0.5, exponential, table:file.csv")
    cla.add_argument("--d", type=int, default=3)
    cla.add_argument("--sigma", type=float, default=1.0)
    cla.add_argument("--fiber", default="flat", choices=sorted(FIBERS))

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "decompose":
            return _cmd_decompose(args)
        return _cmd_classify(args)
    except ConfigError as exc:
        print("error: %s" % (exc,), file=sys.stderr)
        return 64
    except OSError as exc:
        print("i/o error: %s" % (exc,), file=sys.stderr)
        return 74
    except Error as exc:
        print("error: %s" % (exc,), file=sys.stderr)
        return 64


if __name__ == "__main__":
    sys.exit(main())
