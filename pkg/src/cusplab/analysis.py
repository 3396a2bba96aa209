"""Finite-scale quantum-ergodicity constructions and the classical-vs-
quantum comparison report.

The cutoff observables X_m grow linearly up to m-1, ramp smoothly to zero
at m, and increase pointwise in m; their eigenstate matrix elements feed
the Cesaro means and the block-recursive density-1 selection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CuspDomain, liouville_integral


class AnalysisInputError(RuntimeError):
    """A required upstream artifact is missing; lists what to run."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing upstream artifacts: " + ", ".join(self.missing))


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


@dataclass(frozen=True)
class CutoffObservable:
    """X_m(x) = x * ramp(m - x): identity below m-1, zero beyond m."""

    m: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        val = x * _smoothstep(self.m - x)
        return float(val) if val.ndim == 0 else val

    def support_end(self) -> float:
        return self.m


def make_cutoff(m: float) -> CutoffObservable:
    if m < 2:
        raise ValueError("cutoff height must be at least 2")
    return CutoffObservable(float(m))


def cutoff_phase_average(domain: CuspDomain, cutoff: CutoffObservable) -> float:
    """Liouville average of the cutoff observable (finite by construction)."""
    return liouville_integral(domain, lambda x: cutoff(x), growth="bounded")


def diag_matrix_elements(marginals, obs) -> np.ndarray:
    """<psi_j, obs(X) psi_j> for each marginal, by quadrature."""
    out = np.empty(len(marginals))
    for i, xi in enumerate(marginals):
        out[i] = float(np.dot(xi.w_quad, np.asarray(obs(xi.x_quad)) * xi.xi_quad))
    return out


def cesaro_matrix_elements(diag: np.ndarray, k: int = None):
    """Running Cesaro means of the diagonal matrix elements; returns a list
    of (k', mean over j <= k')."""
    diag = np.asarray(diag, dtype=float)
    if k is not None:
        diag = diag[:k]
    means = np.cumsum(diag) / np.arange(1, len(diag) + 1)
    return [(i + 1, float(m)) for i, m in enumerate(means)]


def trend_slope(values) -> float:
    """Least-squares slope of a sequence against its index."""
    v = np.asarray(values, dtype=float)
    idx = np.arange(len(v), dtype=float)
    return float(np.polyfit(idx, v, 1)[0])


@dataclass
class SelectionBlock:
    m: float
    start: int        # 0-based inclusive index into the eigenlist
    end: int          # exclusive
    tolerance: float
    density: float
    density_bound: float  # the block-density requirement (nan for the last)


@dataclass
class Density1Selection:
    thresholds: list          # p_m per block (0-based start indices)
    m_list: list
    selected: np.ndarray      # 1-based eigenindices, strictly increasing
    blocks: list              # SelectionBlock records
    achieved_density: float
    slack: float
    infeasible: list          # m values whose block could not be placed


def density1_select(diag_by_m: dict, targets: dict, m_max: int,
                    slack: float = 0.1, k: int = None) -> Density1Selection:
    """Finite-scale block-recursive density-1 selection.

    For each cutoff height m = 2..m_max the qualifying set is
    |<psi_j, X_m psi_j> - phase average| <= 1/m + slack.  Consecutive
    index blocks are assigned to increasing m; each block must carry a
    qualifying fraction of at least 1 - 1/m_next (the recursive density
    condition), with block boundaries searched outward from an equal
    split.  Blocks that cannot be placed are reported as infeasible and
    the last feasible block extends to the end; no exception is raised.
    """
    m_list = list(range(2, int(m_max) + 1))
    for m in m_list:
        if m not in diag_by_m or m not in targets:
            raise AnalysisInputError([f"matrix elements for m={m}"])
    n = len(np.asarray(diag_by_m[m_list[0]]))
    if k is None:
        k = n
    ok = {m: np.abs(np.asarray(diag_by_m[m][:k]) - targets[m]) <= 1.0 / m + slack
          for m in m_list}

    nb = len(m_list)
    bounds = [0]
    infeasible = []
    blocks_m = []
    i = 0
    while i < nb:
        m = m_list[i]
        start = bounds[-1]
        if i == nb - 1:
            bounds.append(k)
            blocks_m.append(m)
            break
        m_next = m_list[i + 1]
        need = 1.0 - 1.0 / m_next
        target_end = start + max((k - start) // (nb - i), 1)
        chosen = None
        # search outward from the equal-share boundary
        lo_lim = start + 1
        hi_lim = k - (nb - i - 1)  # leave room for the remaining blocks
        for off in range(0, max(target_end - lo_lim, hi_lim - target_end) + 1):
            for cand in (target_end - off, target_end + off):
                if lo_lim <= cand <= hi_lim:
                    dens = float(np.mean(ok[m][start:cand]))
                    if dens >= need:
                        chosen = cand
                        break
            if chosen is not None:
                break
        if chosen is None:
            # cannot hand over to m_next: extend this block to the end and
            # mark the deeper cutoffs as infeasible
            bounds.append(k)
            blocks_m.append(m)
            infeasible = m_list[i + 1:]
            break
        bounds.append(chosen)
        blocks_m.append(m)
        i += 1

    blocks = []
    selected = []
    for bi, m in enumerate(blocks_m):
        start, end = bounds[bi], bounds[bi + 1]
        if end <= start:
            continue
        dens = float(np.mean(ok[m][start:end]))
        if bi + 1 < len(blocks_m):
            bound = 1.0 - 1.0 / m_list[m_list.index(m) + 1]
        else:
            bound = math.nan
        blocks.append(SelectionBlock(m, start, end, 1.0 / m + slack, dens, bound))
        idx = np.nonzero(ok[m][start:end])[0] + start
        selected.extend((idx + 1).tolist())  # 1-based eigenindices
    selected = np.array(sorted(selected), dtype=int)
    density = len(selected) / k if k else 0.0
    return Density1Selection(bounds[:-1], [b.m for b in blocks], selected,
                             blocks, density, slack, infeasible)


REPORT_SECTIONS = ("classical", "lyapunov", "spectrum", "selection")


def comparison_report(classical: dict, lyapunov: dict, spectrum: dict,
                      selection: Density1Selection, config_echo: dict = None):
    """Assemble the classical-vs-quantum comparison document.

    Inputs are the artifact dicts produced by the pipeline stages; raises
    AnalysisInputError naming anything missing.  Returns (report_dict,
    report_text).
    """
    missing = []
    if not classical:
        missing.append("classical")
    if not lyapunov:
        missing.append("lyapunov")
    if not spectrum:
        missing.append("spectrum")
    if selection is None:
        missing.append("selection")
    if missing:
        raise AnalysisInputError(missing)

    horizons = list(map(float, classical["horizons"]))
    medians = [float(v) for v in classical["median_X"]]
    growth_ok = all(b > a for a, b in zip(medians, medians[1:]))

    capped = {}
    capped_ok = True
    for m_str, rec in classical["capped"].items():
        dev = abs(rec["mean"] - rec["target"])
        ok = dev <= 3.0 * rec["se"]
        capped_ok = capped_ok and ok
        capped[m_str] = dict(rec, abs_dev=dev, within_3se=bool(ok))

    lam_ok = (lyapunov["mean"] - lyapunov["ci99"]) > 0.0
    g_rel = abs(lyapunov["g_bar"] - lyapunov["mean"]) / abs(lyapunov["mean"])
    g_ok = g_rel <= 0.02
    rect_ok = abs(lyapunov["rect_control"]) < 0.01

    per_j = spectrum["per_j"]
    loc_ok = all(r["gamma_monotone"] and r["ineq_violations"] == 0 for r in per_j)

    cesaro = spectrum["cesaro"]
    ces_ok = cesaro["final_rel_distance"] <= 0.15 and cesaro["tail_slope"] <= 0.0

    sel_trend = trend_slope([spectrum["position_expectations"][j - 1]
                             for j in selection.selected]) if len(selection.selected) > 2 else math.nan
    sel_ok = selection.achieved_density >= 0.8 and sel_trend >= 0.0

    report = {
        "classical": {
            "horizons": horizons,
            "median_time_average_X": medians,
            "strictly_increasing": bool(growth_ok),
            "capped_averages": capped,
        },
        "lyapunov": {
            "mean": lyapunov["mean"],
            "ci99_halfwidth": lyapunov["ci99"],
            "positive_at_99": bool(lam_ok),
            "g_time_average": lyapunov["g_bar"],
            "g_rel_difference": g_rel,
            "rectangle_control": lyapunov["rect_control"],
        },
        "localization": {
            "per_eigenstate": per_j,
            "all_monotone_and_clean": bool(loc_ok),
        },
        "schnirelman": {
            "cesaro": cesaro,
            "selection": {
                "achieved_density": selection.achieved_density,
                "blocks": [{"m": b.m, "start": b.start, "end": b.end,
                            "tolerance": b.tolerance, "density": b.density}
                           for b in selection.blocks],
                "infeasible_m": selection.infeasible,
                "selected_count": int(len(selection.selected)),
                "position_trend_slope": sel_trend,
            },
        },
        "flags": {
            "classical_divergence": "PASS" if growth_ok else "FAIL",
            "capped_matches_phase_average": "PASS" if capped_ok else "FAIL",
            "positive_lyapunov": "PASS" if (lam_ok and g_ok and rect_ok) else "FAIL",
            "super_exponential_localization": "PASS" if loc_ok else "FAIL",
            "cesaro_trend": "PASS" if ces_ok else "FAIL",
            "density1_selection": "PASS" if sel_ok else "FAIL",
        },
    }
    if config_echo is not None:
        report["config"] = config_echo
    return report, render_report_text(report)


def render_report_text(report: dict) -> str:
    lines = []
    add = lines.append
    add("classical vs quantum averages in the cusp billiard")
    add("=" * 52)
    cl = report["classical"]
    add("")
    add("(a) classical time averages of X (ensemble medians)")
    for T, v in zip(cl["horizons"], cl["median_time_average_X"]):
        add(f"    T = {T:>12.0f}:  median X_T = {v:.6f}")
    add(f"    strictly increasing: {cl['strictly_increasing']}")
    for m, rec in cl["capped_averages"].items():
        add(f"    cap m={m}: mean {rec['mean']:.6f} vs phase avg "
            f"{rec['target']:.6f} (|dev| {rec['abs_dev']:.2e}, 3se "
            f"{3 * rec['se']:.2e}, ok={rec['within_3se']})")
    ly = report["lyapunov"]
    add("")
    add("(a') positive Lyapunov exponent")
    add(f"    lambda = {ly['mean']:.6f} +- {ly['ci99_halfwidth']:.6f} (99% CI)")
    add(f"    time average of g: {ly['g_time_average']:.6f} "
        f"(rel diff {ly['g_rel_difference']:.3%})")
    add(f"    rectangle control: {ly['rectangle_control']:.2e}")
    loc = report["localization"]
    add("")
    add("(b) eigenstate localization")
    add("      j        ell        <X>     window        gamma rising  violations")
    for r in loc["per_eigenstate"]:
        add(f"    {r['j']:>3d} {r['ell']:>10.3f} {r['position_expectation']:>10.6f}"
            f"  [{r['window'][0]:.2f},{r['window'][1]:.2f}]"
            f"   {str(r['gamma_monotone']):>5}         {r['ineq_violations']}")
    sc = report["schnirelman"]
    add("")
    add("(c) quantum ergodicity at finite scale")
    ces = sc["cesaro"]
    add(f"    Cesaro mean of <X_m> (m={ces['m']}): final {ces['final']:.6f} vs "
        f"target {ces['target']:.6f} (rel {ces['final_rel_distance']:.3%}, "
        f"tail slope {ces['tail_slope']:+.2e})")
    sel = sc["selection"]
    add(f"    selection density {sel['achieved_density']:.3f} over "
        f"{sel['selected_count']} states; <X> trend slope "
        f"{sel['position_trend_slope']:+.3e}")
    for b in sel["blocks"]:
        add(f"      block m={b['m']}: [{b['start'] + 1}, {b['end']}] density "
            f"{b['density']:.3f} (tol {b['tolerance']:.3f})")
    if sel["infeasible_m"]:
        add(f"      infeasible deeper blocks: {sel['infeasible_m']}")
    add("")
    add("flags")
    for name, value in report["flags"].items():
        add(f"    {name:<36} {value}")
    add("")
    return "\n".join(lines)
