"""Batch pipeline: seeded stages, CSV/JSON artifacts, manifest, report."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from . import analysis as an
from . import dynamics as dyn
from . import lyapunov as lyap
from . import spectral as spec
from .config import RunConfig, config_as_dict, serialize_config
from .geometry import CuspDomain, RectangleDomain, liouville_integral

STAGES = ("classical", "lyapunov", "spectrum", "analysis")

STAGE_FILES = {
    "classical": ["trajectories.csv", "classical_summary.json"],
    "lyapunov": ["lyapunov.csv", "lyapunov_convergence.csv", "lyapunov_summary.json"],
    "spectrum": ["eigenvalues.csv", "marginals.csv", "observables.csv",
                 "heisenberg_elements.csv", "spectrum_summary.json"],
    "analysis": ["report.json", "report.txt", "plots.csv"],
}


class StageError(RuntimeError):
    pass


def _fmt(v):
    return f"{float(v):.17g}"


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _load_json(path: Path):
    return json.loads(path.read_text())


def run_classical(cfg: RunConfig, outdir: Path) -> dict:
    domain = CuspDomain(cfg.alpha)
    caps = list(cfg.classical.truncation_caps)
    obs_specs = [("X", "x")] + [(f"min(X,{_fmt(m)})", ("cap", m)) for m in caps]
    res = dyn.ensemble_time_averages(
        domain, cfg.classical.n_trajectories, cfg.classical.horizons,
        obs_specs, seed=cfg.seed, x_init=cfg.classical.x_init_cutoff)
    dyn.write_trajectory_csv(outdir / "trajectories.csv", res, cfg.seed)

    good = ~res["singular"]
    avgs = res["averages"][good]
    medians = np.median(avgs[:, :, 0], axis=0)
    capped = {}
    for ci, m in enumerate(caps):
        final = avgs[:, -1, ci + 1]
        target = liouville_integral(domain, lambda x: min(x, m), growth="bounded")
        capped[_fmt(m)] = {
            "m": float(m),
            "mean": float(np.mean(final)),
            "se": float(np.std(final, ddof=1) / math.sqrt(len(final))),
            "target": float(target),
        }
    summary = {
        "horizons": [float(h) for h in res["horizons"]],
        "median_X": [float(v) for v in medians],
        "capped": capped,
        "n_trajectories": int(good.sum()),
        "n_singular": int((~good).sum()),
        "seed": cfg.seed,
    }
    _write_json(outdir / "classical_summary.json", summary)
    return summary


def run_lyapunov(cfg: RunConfig, outdir: Path) -> dict:
    domain = CuspDomain(cfg.alpha)
    T = cfg.lyapunov.T
    n = cfg.lyapunov.n_trajectories
    ens = lyap.lyapunov_ensemble(domain, n, T, seed=cfg.seed + 1,
                                 x_deep=dyn.X_DEEP_DEFAULT,
                                 x_init=cfg.classical.x_init_cutoff)

    # independent time average of the expansion observable on a sub-ensemble
    ss = np.random.SeedSequence(cfg.seed + 2)
    gs = []
    n_g = min(4, n)
    for cs in ss.spawn(n_g):
        rng = np.random.default_rng(cs)
        z = dyn._draw_initial(domain, rng, cfg.classical.x_init_cutoff)
        gbar, used, _info = lyap.g_time_average(
            domain, z, min(T, 2e4), 600, seed=int(rng.integers(2 ** 31)),
            x_deep=dyn.X_DEEP_DEFAULT)
        gs.append(gbar)
    g_bar = float(np.mean(gs))

    rect = RectangleDomain(1.0, 1.0)
    rect_est = lyap.lyapunov_estimate(
        rect, dyn.LineElement(0.31, 0.43, 0.87), max(T, 1e5))

    with open(outdir / "lyapunov.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "trajectory", "T", "lambda_hat", "ci99", "n_collisions"])
        for i, e in enumerate(ens.estimates):
            w.writerow([cfg.seed + 1, i, _fmt(e.total_time), _fmt(e.lambda_hat),
                        _fmt(e.ci_halfwidth), e.n_collisions])
    with open(outdir / "lyapunov_convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory", "t", "running_lambda"])
        for i, e in enumerate(ens.estimates):
            for t, lamb in e.convergence_series:
                w.writerow([i, _fmt(t), _fmt(lamb)])

    summary = {
        "mean": ens.mean,
        "ci99": ens.ci99_halfwidth,
        "T": float(T),
        "n_trajectories": n,
        "g_bar": g_bar,
        "rect_control": float(rect_est.lambda_hat),
        "seed": cfg.seed + 1,
    }
    _write_json(outdir / "lyapunov_summary.json", summary)
    return summary


def run_spectrum(cfg: RunConfig, outdir: Path) -> dict:
    domain = CuspDomain(cfg.alpha)
    sc = cfg.spectral
    sol = spec.solve_spectrum(domain, sc.L, sc.Nx, sc.Nu, sc.k,
                              stretch=sc.stretch_factor)
    marginals = [spec.marginal_density(domain, sol.grid, p) for p in sol.pairs]

    with open(outdir / "eigenvalues.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "ell", "residual"])
        for p in sol.pairs:
            w.writerow([p.j, _fmt(p.ell), _fmt(p.residual_norm)])

    with open(outdir / "marginals.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "x", "xi", "gamma_hat"])
        j_dump = range(1, min(len(sol.pairs), 20) + 1)
        for j in j_dump:
            xi = marginals[j - 1]
            gx, gv = spec.decay_profile(xi)
            gmap = dict(zip(gx.tolist(), gv.tolist()))
            for x, v in zip(xi.x_nodes.tolist(), xi.xi_nodes.tolist()):
                w.writerow([j, _fmt(x), _fmt(v), _fmt(gmap.get(x, math.nan))])

    # diagonal observables: position and the cutoff family
    mlist = [float(m) for m in cfg.analysis.m_list]
    diag_by_m = {}
    targets = {}
    for m in mlist:
        cut = an.make_cutoff(m)
        diag_by_m[m] = an.diag_matrix_elements(marginals, cut)
        targets[m] = an.cutoff_phase_average(domain, cut)
    xexp = np.array([spec.position_expectation(xi) for xi in marginals])

    with open(outdir / "observables.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "obs_name", "value"])
        for j in range(1, len(sol.pairs) + 1):
            w.writerow([j, "X", _fmt(xexp[j - 1])])
            for m in mlist:
                w.writerow([j, f"X_cutoff({_fmt(m)})", _fmt(diag_by_m[m][j - 1])])

    # degenerate-pair position elements for Heisenberg averages
    with open(outdir / "heisenberg_elements.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "k", "ell_j", "ell_k", "x_element"])
        ells = sol.ells
        for j in range(1, len(ells) + 1):
            w.writerow([j, j, _fmt(ells[j - 1]), _fmt(ells[j - 1]),
                        _fmt(xexp[j - 1])])
            for k in range(j + 1, len(ells) + 1):
                if abs(ells[k - 1] - ells[j - 1]) <= 1e-6 * max(ells[j - 1], ells[k - 1]):
                    w.writerow([j, k, _fmt(ells[j - 1]), _fmt(ells[k - 1]),
                                _fmt(spec.position_matrix_element(sol, j, k))])

    # localization diagnostics for the low modes
    per_j = []
    for j in range(1, min(len(sol.pairs), 20) + 1):
        xi = marginals[j - 1]
        gx, gv = spec.decay_profile(xi)
        xt = spec.turning_point(domain, xi.ell)
        sel = gx > xt
        mono = bool(np.all(np.diff(gv[sel]) > 0)) if sel.sum() > 1 else False
        rep = spec.verify_diff_inequality(domain, xi)
        per_j.append({
            "j": j,
            "ell": float(xi.ell),
            "position_expectation": float(xexp[j - 1]),
            "gamma_monotone": mono,
            "ineq_violations": rep.n_violations,
            "ineq_checked": rep.n_checked,
            "window": [float(gx[sel][0]) if sel.any() else math.nan,
                       float(gx[sel][-1]) if sel.any() else math.nan],
        })

    m_ces = max(mlist)
    ces = an.cesaro_matrix_elements(diag_by_m[m_ces])
    tail = min(50, max(len(ces) // 4, 2))
    dist = [abs(v - targets[m_ces]) for _, v in ces[-tail:]]
    cesaro = {
        "m": m_ces,
        "target": float(targets[m_ces]),
        "final": float(ces[-1][1]),
        "final_rel_distance": float(dist[-1] / targets[m_ces]),
        "tail_slope": an.trend_slope(dist),
        "tail_window": tail,
        "series": [[int(i), float(v)] for i, v in ces],
    }

    summary = {
        "k": len(sol.pairs),
        "L": float(sc.L),
        "Nx": sc.Nx,
        "Nu": sc.Nu,
        "ells": [float(p.ell) for p in sol.pairs],
        "residuals": [float(p.residual_norm) for p in sol.pairs],
        "position_expectations": xexp.tolist(),
        "diag_by_m": {_fmt(m): diag_by_m[m].tolist() for m in mlist},
        "targets": {_fmt(m): float(targets[m]) for m in mlist},
        "per_j": per_j,
        "cesaro": cesaro,
    }
    _write_json(outdir / "spectrum_summary.json", summary)
    return summary


def run_analysis(cfg: RunConfig, outdir: Path, upstream: dict) -> dict:
    missing = [s for s in ("classical", "lyapunov", "spectrum")
               if upstream.get(s) is None]
    if missing:
        raise an.AnalysisInputError(missing)
    classical = upstream["classical"]
    lyapunov = upstream["lyapunov"]
    spectrum = upstream["spectrum"]

    diag_by_m = {float(m): np.array(v) for m, v in spectrum["diag_by_m"].items()}
    targets = {float(m): v for m, v in spectrum["targets"].items()}
    m_max = int(max(diag_by_m))
    selection = an.density1_select(diag_by_m, targets, m_max,
                                   slack=cfg.analysis.slack)
    report, text = an.comparison_report(classical, lyapunov, spectrum,
                                        selection,
                                        config_echo=config_as_dict(cfg))
    _write_json(outdir / "report.json", report)
    (outdir / "report.txt").write_text(text)

    with open(outdir / "plots.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "x", "y"])
        for T, v in zip(classical["horizons"], classical["median_X"]):
            w.writerow(["median_X_vs_T", _fmt(T), _fmt(v)])
        for i, v in spectrum["cesaro"]["series"]:
            w.writerow(["cesaro_X_cutoff", i, _fmt(v)])
        for j, v in enumerate(spectrum["position_expectations"], start=1):
            w.writerow(["position_expectation", j, _fmt(v)])
        for r in spectrum["per_j"]:
            w.writerow(["ell_vs_j", r["j"], _fmt(r["ell"])])
    return report


def run_pipeline(cfg: RunConfig, stages=None, outdir=None) -> dict:
    """Execute the requested stages in dependency order.

    Returns {"status": exit_code, "artifacts": {...}}; artifacts of stages
    not run in this invocation are loaded from disk when present.
    """
    stages = list(stages) if stages else list(STAGES)
    for s in stages:
        if s not in STAGES:
            raise ValueError(f"unknown stage {s!r}")
    stages = [s for s in STAGES if s in stages]
    outdir = Path(outdir or cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config_resolved.cfg").write_text(serialize_config(cfg))

    artifacts = {}
    manifest = {"complete": False, "stages": {}, "files": {}}
    runners = {
        "classical": run_classical,
        "lyapunov": run_lyapunov,
        "spectrum": run_spectrum,
    }
    status = 0
    try:
        for s in ("classical", "lyapunov", "spectrum"):
            if s in stages:
                artifacts[s] = runners[s](cfg, outdir)
                manifest["stages"][s] = "ok"
            else:
                summary = outdir / f"{s}_summary.json"
                artifacts[s] = _load_json(summary) if summary.exists() else None
        if "analysis" in stages:
            artifacts["analysis"] = run_analysis(cfg, outdir, artifacts)
            manifest["stages"]["analysis"] = "ok"
        manifest["complete"] = True
    except an.AnalysisInputError as exc:
        manifest["stages"]["analysis"] = f"missing inputs: {exc.missing}"
        status = 3
    except Exception as exc:  # stage failure: keep partial artifacts
        manifest["stages"][_current_stage(manifest)] = f"failed: {exc}"
        status = 3

    for s, names in STAGE_FILES.items():
        for name in names:
            p = outdir / name
            if p.exists():
                manifest["files"][name] = _hash_entry(p)
    manifest["files"]["config_resolved.cfg"] = _hash_entry(outdir / "config_resolved.cfg")
    _write_json(outdir / "MANIFEST.json", manifest)
    return {"status": status, "artifacts": artifacts, "outdir": str(outdir)}


def _current_stage(manifest):
    done = set(manifest["stages"])
    for s in STAGES:
        if s not in done:
            return s
    return STAGES[-1]


def _hash_entry(path: Path):
    data = path.read_bytes()
    return {"sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}
