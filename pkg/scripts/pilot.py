#!/usr/bin/env python3
"""Regenerate the calibration census behind the registered thresholds.

Every numeric band in thresholds.json that is not a direct formula value
comes from this census: the script runs the reference ensembles at their
registered scales with the same pinned seeds the acceptance tests use,
prints each measured statistic beside its registered bound, and flags
entries that sit outside or uncomfortably close.  Re-run it after any
change to the integrators before trusting the registered numbers.

    python3 scripts/pilot.py            full census (roughly 15 minutes)
    python3 scripts/pilot.py --quick    reduced scale smoke (under a minute)
    python3 scripts/pilot.py --only flat_sqrt --only desitter

The report is printed as a table and, with --json FILE, dumped for
archiving.
"""

import argparse
import json
import sys
import time

import numpy as np

from lorentzdiff.boundary_stats import load_thresholds
from lorentzdiff.cli import (SimConfig, _antidesitter_stats,
                             _desitter_stats, _reduced_lane)
from lorentzdiff.rw_sim import ReducedRecord, reduced_stats

# The pinned seeds; tests/test_acceptance.py uses the same ones, so a
# green census here means the registered bands hold for the runs the
# acceptance suite will actually draw.
SEEDS = {"flat_sqrt": 103, "flat_square": 104, "flat_exp": 105,
         "sphere_sqrt": 107, "hyp_sqrt": 108, "desitter": 109,
         "antidesitter": 110, "minkowski": 101}


def _config(kind, warp=None, fiber="flat", s_max=50.0, paths=200, seed=0,
            quick=False):
    if quick:
        s_max, paths = max(6.0, s_max / 5.0), max(20, paths // 8)
    raw = {"spacetime": {"kind": kind, "d": 3, "sigma": 1.0},
           "numerics": {"ds": 1.0e-3, "s_max": float(s_max),
                        "record_every": 100, "reorth_every": 100},
           "ensemble": {"paths": int(paths), "seed": int(seed)},
           "outputs": {"directory": "unused", "formats": []}}
    if kind == "rw":
        raw["spacetime"]["fiber"] = fiber
        raw["spacetime"]["warp"] = warp
    return SimConfig.from_dict(raw)


def truncate_record(rec, s_cut):
    """Drop records after s_cut so late-window stats use [s_cut/2, s_cut]."""
    keep = rec.s <= s_cut + 1e-9
    extras = {k: v[:, keep] for k, v in rec.extras.items()}
    return ReducedRecord(rec.spec, rec.regime, rec.s[keep],
                         rec.t[:, keep], rec.tdot[:, keep],
                         rec.C[:, keep], rec.D[:, keep], rec.A[:, keep],
                         rec.x[:, keep], rec.Theta[:, keep],
                         extras, rec.pseudo[keep], rec.gap_count)


def census(quick=False, only=None):
    from lorentzdiff.cli import worker_count
    workers = worker_count()

    def want(name):
        return only is None or name in only

    rows = []

    def add(job, check, value, entry):
        verdict = "-"
        if entry:
            if "band" in entry:
                lo, hi = entry["band"]
                verdict = "ok" if lo <= value <= hi else "OUT"
            elif "max" in entry:
                verdict = "ok" if value <= entry["max"] else "OUT"
            elif "min" in entry:
                verdict = "ok" if value >= entry["min"] else "OUT"
        rows.append({"job": job, "check": check, "value": value,
                     "registered": entry, "verdict": verdict})

    table = load_thresholds()["checks"]

    if want("minkowski"):
        cfg = _config("minkowski", s_max=50.0,
                      seed=SEEDS["minkowski"], quick=quick)
        rec, stats, _ = _reduced_lane(cfg, cfg.ensemble["paths"],
                                      cfg.ensemble["seed"], workers)
        add("minkowski", "lyapunov-tdot-free",
            stats["tdot_slope_median"], table["lyapunov-tdot-free"])
        add("minkowski", "pseudo-norm", stats["pseudo_norm_max"],
            table["pseudo-norm"])

    if want("flat_sqrt"):
        cfg = _config("rw", {"id": "power", "a": 0.5}, s_max=50.0,
                      seed=SEEDS["flat_sqrt"], quick=quick)
        rec, stats, _ = _reduced_lane(cfg, cfg.ensemble["paths"],
                                      cfg.ensemble["seed"], workers)
        add("flat_sqrt", "lyapunov-tdot", stats["tdot_slope_median"],
            table["lyapunov-tdot"])
        add("flat_sqrt", "lyapunov-alpha", stats["alpha_slope_median"],
            table["lyapunov-alpha"])
        add("flat_sqrt", "theta-converges", stats["theta_tail_median"],
            table["theta-converges"])
        add("flat_sqrt", "delta-converges", stats["delta_tail_median"],
            table["delta-converges"])
        add("flat_sqrt", "pseudo-norm", stats["pseudo_norm_max"],
            table["pseudo-norm"])

    if want("flat_square"):
        cfg = _config("rw", {"id": "power", "a": 2.0}, s_max=50.0,
                      seed=SEEDS["flat_square"], quick=quick)
        rec, stats, _ = _reduced_lane(cfg, cfg.ensemble["paths"],
                                      cfg.ensemble["seed"], workers)
        add("flat_square", "clock-saturates", stats["clock_growth_ratio"],
            table["clock-saturates"])
        cut = reduced_stats(truncate_record(rec, 0.8 * rec.s[-1]))
        add("flat_square", "x-converges", cut["x_tail_median"],
            table["x-converges"])
        add("flat_square", "theta-converges", cut["theta_tail_median"],
            table["theta-converges"])

    if want("flat_exp"):
        cfg = _config("rw", {"id": "exponential"}, s_max=50.0,
                      seed=SEEDS["flat_exp"], quick=quick)
        rec, stats, _ = _reduced_lane(cfg, cfg.ensemble["paths"],
                                      cfg.ensemble["seed"], workers)
        add("flat_exp", "clock-grows", stats["clock_growth_ratio"],
            table["clock-grows"])
        cut = reduced_stats(truncate_record(rec, 0.8 * rec.s[-1]))
        add("flat_exp", "x-converges", cut["x_tail_median"],
            table["x-converges"])
        add("flat_exp", "theta-fluctuates", cut["theta_tail_median"],
            table["theta-fluctuates"])

    if want("sphere_sqrt"):
        cfg = _config("rw", {"id": "power", "a": 0.5}, fiber="sphere",
                      s_max=40.0, seed=SEEDS["sphere_sqrt"], quick=quick)
        rec, stats, _ = _reduced_lane(cfg, cfg.ensemble["paths"],
                                      cfg.ensemble["seed"], workers)
        add("sphere_sqrt", "bhat-converges", stats["bhat_tail_q90"],
            table["bhat-converges"])
        add("sphere_sqrt", "reconstruction-identity",
            stats["reconstruction_max"], table["reconstruction-identity"])
        add("sphere_sqrt", "clock-sync", stats["clock_sync_tail_median"],
            table["clock-sync"])

    if want("hyp_sqrt"):
        cfg = _config("rw", {"id": "power", "a": 0.5}, fiber="hyperbolic",
                      s_max=40.0, seed=SEEDS["hyp_sqrt"], quick=quick)
        rec, stats, _ = _reduced_lane(cfg, cfg.ensemble["paths"],
                                      cfg.ensemble["seed"], workers)
        add("hyp_sqrt", "v-limit", stats["v_final_median"],
            table["v-limit"])
        add("hyp_sqrt", "deltatilde-converges",
            stats["deltatilde_tail_median"],
            table["deltatilde-converges"])
        add("hyp_sqrt", "theta-reconstruction",
            stats["theta_reconstruction_median"],
            table["theta-reconstruction"])

    if want("desitter"):
        cfg = _config("desitter", s_max=30.0, paths=200,
                      seed=SEEDS["desitter"], quick=quick)
        _, stats, payload = _desitter_stats(cfg, cfg.ensemble["paths"],
                                            cfg.ensemble["seed"], workers)
        add("desitter", "beta-slope-positive",
            stats.get("beta_slope_ci_lo", float("nan")), {"min": 0.0})
        add("desitter", "n-converges",
            stats.get("n_tail_q90", float("nan")), table["n-converges"])
        add("desitter", "theta-ergodic",
            stats.get("theta_ks", float("nan")), table["theta-ergodic"])

    if want("antidesitter"):
        cfg = _config("antidesitter", s_max=30.0, paths=200,
                      seed=SEEDS["antidesitter"], quick=quick)
        _, stats, payload = _antidesitter_stats(cfg,
                                                cfg.ensemble["paths"],
                                                cfg.ensemble["seed"],
                                                workers)
        add("antidesitter", "chamber-ordering",
            stats.get("chamber_ordering_fraction", float("nan")),
            {"min": 0.95})
        add("antidesitter", "n-converges",
            stats.get("n_tail_q90", float("nan")), table["n-converges"])
        add("antidesitter", "isotropy-cone",
            stats.get("isotropy_ratio_median", float("nan")),
            table["isotropy-cone"])
        add("antidesitter", "lam-slope-ci-lo",
            stats.get("lam_slope_ci_lo", float("nan")), {"min": 0.0})
        add("antidesitter", "mu-slope-ci-lo",
            stats.get("mu_slope_ci_lo", float("nan")), {"min": 0.0})

    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true",
                    help="reduced scale, for smoke only (bands need the "
                         "registered scale)")
    ap.add_argument("--only", action="append",
                    help="run just the named job(s)")
    ap.add_argument("--json", help="also dump the rows to this file")
    args = ap.parse_args(argv)

    started = time.perf_counter()
    rows = census(quick=args.quick, only=args.only)
    wall = time.perf_counter() - started

    width = max(len(r["job"]) for r in rows)
    cwidth = max(len(r["check"]) for r in rows)
    bad = 0
    for r in rows:
        reg = json.dumps(r["registered"]) if r["registered"] else "-"
        flag = r["verdict"]
        if flag == "OUT":
            bad += 1
        print("%-*s  %-*s  %14.6g  %-24s %s"
              % (width, r["job"], cwidth, r["check"], r["value"], reg,
                 flag))
    print("census wall time %.1f s%s" % (
        wall, "  (quick scale, not for registration)" if args.quick
        else ""))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"rows": rows, "quick": args.quick,
                       "wall_s": wall}, fh, indent=2)
            fh.write("\n")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
