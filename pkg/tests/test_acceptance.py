"""Acceptance suite: each test prints one PASS/FAIL line for its criterion
(visible with `pytest -s` or in the captured-output report).

The heavy spectral artifacts are shared through session fixtures; the
classical ensemble criteria run the compiled flow directly at the sizes
and tolerances stated with each criterion.
"""

import json
import math
import shutil
import time

import numpy as np
import pytest

import cusplab._kernels as K
from cusplab import analysis as an
from cusplab import spectral as spec
from cusplab.config import RunConfig
from cusplab.dynamics import (LineElement, ensemble_time_averages, flow)
from cusplab.geometry import CuspDomain, RectangleDomain, liouville_integral
from cusplab.lyapunov import (g_time_average, lyapunov_ensemble,
                              lyapunov_estimate, transverse_jacobian)
from cusplab.pipeline import run_pipeline


def report_line(number, name, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {number} [{name}] {status} — {detail}")
    assert ok, f"criterion {number} ({name}): {detail}"


def test_criterion_1_rectangle_spectral_oracle():
    t0 = time.time()
    sol = spec.solve_spectrum(RectangleDomain(1.0, 1.0), None, 256, 256, 10)
    wall = time.time() - t0
    exact = sorted(math.pi ** 2 * (m * m + n * n)
                   for m in range(1, 9) for n in range(1, 9))[:10]
    rel = max(abs(p.ell - e) / e for p, e in zip(sol.pairs, exact))
    ok = rel < 0.01 and wall < 120.0
    report_line(1, "rectangle spectral oracle", ok,
                f"max rel err {rel:.2e} (tol 1e-2), wall {wall:.1f} s (< 120)")


def test_criterion_2_speed_conservation():
    d = CuspDomain(2.0)
    z = LineElement(0.5, 0.3, 0.9)
    ncol = 0
    worst = 0.0
    t0 = time.time()
    while ncol < 1_000_000:
        stats, zf = flow(d, z, 2000.0)  # exact dynamics, no surrogate
        assert stats.status == "ok"
        ncol += stats.n_collisions
        worst = max(worst, abs(math.hypot(*zf.velocity) - 1.0))
        z = zf
    ok = worst < 1e-12
    report_line(2, "speed conservation", ok,
                f"|v|-1 drift {worst:.2e} over {ncol} collisions "
                f"(tol 1e-12), wall {time.time() - t0:.1f} s")


def test_criterion_3_classical_divergence():
    d = CuspDomain(2.0)
    horizons = [1e3, 1e4, 1e5, 1e6]
    caps = [2.0, 5.0]
    t0 = time.time()
    res = ensemble_time_averages(
        d, 100, horizons,
        [("X", "x")] + [(f"cap{m}", ("cap", m)) for m in caps],
        seed=42, x_deep=30.0)
    wall = time.time() - t0
    good = ~res["singular"]
    med = np.median(res["averages"][good, :, 0], axis=0)
    increasing = bool(np.all(np.diff(med) > 0))
    details = [f"medians {np.round(med, 3).tolist()}"]
    capped_ok = True
    for ci, m in enumerate(caps):
        vals = res["averages"][good, -1, ci + 1]
        target = liouville_integral(d, lambda x: min(x, m), growth="bounded")
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        dev = abs(vals.mean() - target)
        capped_ok = capped_ok and dev <= 3 * se
        details.append(f"cap {m}: |{vals.mean():.4f}-{target:.4f}|="
                       f"{dev:.1e} vs 3se={3 * se:.1e}")
    ok = increasing and capped_ok and wall < 600.0
    report_line(3, "classical divergence", ok,
                "; ".join(details) + f"; wall {wall:.0f} s (< 600)")


def test_criterion_4_positive_lyapunov():
    d = CuspDomain(2.0)
    t0 = time.time()
    ens = lyapunov_ensemble(d, 100, 1e5, seed=42, x_deep=30.0)
    ci_ok = ens.mean - ens.ci99_halfwidth > 0.0

    # independent time average of the expansion observable
    gs = []
    ss = np.random.SeedSequence(4242)
    from cusplab.dynamics import _draw_initial
    for cs in ss.spawn(24):
        rng = np.random.default_rng(cs)
        z = _draw_initial(d, rng, 50.0)
        gbar, used, _ = g_time_average(d, z, 1e5, 1200,
                                       seed=int(rng.integers(2 ** 31)),
                                       x_deep=30.0)
        gs.append(gbar)
    g_mean = float(np.mean(gs))
    g_rel = abs(g_mean - ens.mean) / ens.mean
    g_ok = g_rel <= 0.02

    rect = lyapunov_estimate(RectangleDomain(1.0, 1.0),
                             LineElement(0.31, 0.43, 0.87), 1e5)
    rect_ok = abs(rect.lambda_hat) < 0.01
    ok = ci_ok and g_ok and rect_ok
    report_line(4, "positive Lyapunov exponent", ok,
                f"lambda {ens.mean:.4f} +- {ens.ci99_halfwidth:.4f} (99% CI), "
                f"g-average {g_mean:.4f} (rel diff {g_rel:.3%}, tol 2%), "
                f"rectangle {rect.lambda_hat:.1e} (tol 1e-2), "
                f"wall {time.time() - t0:.0f} s")


def test_criterion_5_tangent_map_oracle():
    from test_lyapunov import (_fd_transverse_jacobian,
                               _random_three_collision_state)
    d = CuspDomain(2.0)
    rng = np.random.default_rng(1729)
    worst_rel = 0.0
    worst_det = 0.0
    for _ in range(100):
        z0, T = _random_three_collision_state(d, rng)
        M, steps = transverse_jacobian(d, z0, T)
        Mfd = _fd_transverse_jacobian(d, z0, T, eps=1e-7)
        worst_rel = max(worst_rel, np.max(np.abs(M - Mfd)) / np.max(np.abs(M)))
        for F in steps:
            worst_det = max(worst_det, abs(abs(np.linalg.det(F)) - 1.0))
    ok = worst_rel < 1e-4 and worst_det < 1e-8
    report_line(5, "tangent map oracle", ok,
                f"worst FD rel err {worst_rel:.2e} (tol 1e-4) over 100 "
                f"3-collision segments, worst |det|-1 {worst_det:.2e} (tol 1e-8)")


def test_criterion_6_super_exponential_localization(cusp, production_solution,
                                                    production_marginals):
    sol = production_solution
    t0 = time.time()
    problems = []
    for j in range(1, 21):
        xi = production_marginals[j - 1]
        xs, gs = spec.decay_profile(xi)
        xt = spec.turning_point(cusp, xi.ell)
        w = xs > xt
        if w.sum() < 5 or not np.all(np.diff(gs[w]) > 0):
            problems.append(f"gamma not increasing for j={j}")
        rep = spec.verify_diff_inequality(cusp, xi, eps_tol=0.05)
        if rep.n_checked == 0 or rep.n_violations > 0:
            problems.append(f"inequality violated for j={j} "
                            f"({rep.n_violations}/{rep.n_checked})")
        if not math.isfinite(spec.position_expectation(xi)):
            problems.append(f"<X> not finite for j={j}")

    # truncation stability under L -> 1.5 L on the extended grid
    grid30 = spec.MappedGrid(30.0, spec.extend_nodes(sol.grid.x_nodes, 30.0),
                             sol.grid.u_nodes.copy())
    sol30 = spec.solve_spectrum(cusp, None, None, None, 20, grid=grid30)
    worst_rel = 0.0
    for j in range(1, 21):
        e20 = spec.position_expectation(production_marginals[j - 1])
        xi30 = spec.marginal_density(cusp, grid30, sol30.pairs[j - 1])
        e30 = spec.position_expectation(xi30)
        worst_rel = max(worst_rel, abs(e30 - e20) / abs(e20))
    if worst_rel > 1e-4:
        problems.append(f"<X> truncation drift {worst_rel:.2e} > 1e-4")
    ok = not problems
    report_line(6, "super-exponential localization", ok,
                ("; ".join(problems) if problems else
                 f"j=1..20 gamma increasing, 0 inequality violations at 5% "
                 f"tol, <X> stable to {worst_rel:.1e} under L 20->30") +
                f", wall {time.time() - t0:.0f} s")


def test_criterion_7_schnirelman_cesaro_and_selection(cusp, production_solution,
                                                      production_marginals):
    sol = production_solution
    t0 = time.time()
    diag_by_m = {}
    targets = {}
    for m in (2.0, 3.0, 4.0, 5.0):
        cut = an.make_cutoff(m)
        diag_by_m[m] = an.diag_matrix_elements(production_marginals, cut)
        targets[m] = an.cutoff_phase_average(cusp, cut)

    ces = an.cesaro_matrix_elements(diag_by_m[5.0])
    target = targets[5.0]
    dist = np.array([abs(v - target) for _, v in ces])
    tail_slope = an.trend_slope(dist[-50:])
    final_rel = dist[-1] / target
    ces_ok = tail_slope <= 0.0 and final_rel <= 0.15

    sel = an.density1_select(diag_by_m, targets, m_max=4, slack=0.1)
    xexp = np.array([spec.position_expectation(xi)
                     for xi in production_marginals])
    sel_slope = an.trend_slope(xexp[sel.selected - 1])
    sel_ok = sel.achieved_density >= 0.8 and sel_slope >= 0.0

    wall = time.time() - t0 + getattr(sol, "wall_seconds", 0.0)
    ok = ces_ok and sel_ok and wall < 1800.0
    report_line(7, "Schnirelman Cesaro trend and selection", ok,
                f"Cesaro final rel dist {final_rel:.3f} (tol 0.15), tail "
                f"slope {tail_slope:+.2e} (<= 0), selection density "
                f"{sel.achieved_density:.3f} (>= 0.8), <X> trend slope "
                f"{sel_slope:+.2e} (>= 0), wall {wall:.0f} s (< 1800)")


def test_criterion_8_reproducibility(tmp_path):
    cfg = RunConfig()
    cfg.output_dir = str(tmp_path / "run")
    t0 = time.time()
    res1 = run_pipeline(cfg)
    assert res1["status"] == 0
    first = (tmp_path / "run" / "report.json").read_bytes()
    shutil.rmtree(tmp_path / "run")
    res2 = run_pipeline(cfg)
    assert res2["status"] == 0
    second = (tmp_path / "run" / "report.json").read_bytes()
    ok = first == second
    report_line(8, "reproducibility", ok,
                f"default pipeline rerun byte-identical report.json "
                f"({len(first)} bytes), wall {time.time() - t0:.0f} s")
