import json
import math

import numpy as np
import pytest

from cusplab import analysis as an
from cusplab import spectral as spec
from cusplab.geometry import CuspDomain


class TestCutoff:
    def test_identity_region(self):
        X5 = an.make_cutoff(5.0)
        assert X5(3.0) == 3.0
        assert X5(0.0) == 0.0

    def test_beyond_support(self):
        assert an.make_cutoff(5.0)(5.5) == 0.0

    def test_ramp_value(self):
        # x * smoothstep(m - x) at x = 4.5: 4.5 * s(0.5) = 2.25
        assert an.make_cutoff(5.0)(4.5) == pytest.approx(2.25, abs=1e-14)

    def test_minimum_height(self):
        with pytest.raises(ValueError):
            an.make_cutoff(1.5)

    def test_monotone_in_m_and_below_identity(self, rng):
        xs = rng.uniform(0, 12, size=400)
        f3, f5, f9 = an.make_cutoff(3.0), an.make_cutoff(5.0), an.make_cutoff(9.0)
        v3, v5, v9 = f3(xs), f5(xs), f9(xs)
        assert np.all(v3 <= v5 + 1e-14) and np.all(v5 <= v9 + 1e-14)
        assert np.all(v9 <= xs + 1e-14)
        assert np.all(v3 >= 0)

    def test_c1_at_the_seams(self):
        X5 = an.make_cutoff(5.0)
        for x0 in (4.0, 5.0):
            h = 1e-6
            left = (X5(x0) - X5(x0 - h)) / h
            right = (X5(x0 + h) - X5(x0)) / h
            assert abs(left - right) < 1e-4


class TestCesaro:
    def test_zero_observable(self):
        out = an.cesaro_matrix_elements(np.zeros(10))
        assert all(v == 0.0 for _, v in out)

    def test_constant_one(self):
        out = an.cesaro_matrix_elements(np.ones(17))
        assert all(v == 1.0 for _, v in out)
        assert [i for i, _ in out] == list(range(1, 18))

    def test_running_mean_values(self):
        out = an.cesaro_matrix_elements(np.array([1.0, 3.0, 5.0]))
        assert [v for _, v in out] == [1.0, 2.0, 3.0]


class TestDensitySelection:
    def test_ideal_data_selects_everything(self):
        k = 60
        targets = {m: float(m) for m in (2, 3, 4)}
        diag = {m: np.full(k, targets[m]) for m in (2, 3, 4)}
        sel = an.density1_select(diag, targets, m_max=4, slack=0.0)
        assert sel.achieved_density == 1.0
        assert len(sel.selected) == k
        assert not sel.infeasible
        assert np.all(np.diff(sel.selected) > 0)

    def test_outliers_are_excluded(self, rng):
        k = 100
        targets = {2: 1.0, 3: 1.5}
        bad = np.array([7, 23, 55, 81])
        diag = {}
        for m in (2, 3):
            v = np.full(k, targets[m])
            v[bad] = targets[m] + 5.0
            diag[m] = v
        sel = an.density1_select(diag, targets, m_max=3, slack=0.1)
        assert set(bad + 1).isdisjoint(set(sel.selected.tolist()))
        eps = len(bad) / k
        assert sel.achieved_density >= 1.0 - eps - 1.0 / k

    def test_infeasible_block_reported(self):
        k = 40
        targets = {2: 1.0, 3: 1.0, 4: 1.0}
        diag = {2: np.full(k, 1.0), 3: np.full(k, 9.0), 4: np.full(k, 9.0)}
        sel = an.density1_select(diag, targets, m_max=4, slack=0.0)
        assert 3 in sel.infeasible or 4 in sel.infeasible
        assert sel.achieved_density > 0  # partial selection, not an exception

    def test_block_tolerances_respected(self):
        k = 90
        rng = np.random.default_rng(3)
        targets = {2: 1.0, 3: 1.2, 4: 1.4}
        diag = {m: targets[m] + rng.normal(0, 0.12, size=k) for m in (2, 3, 4)}
        sel = an.density1_select(diag, targets, m_max=4, slack=0.1)
        for b in sel.blocks:
            members = [j for j in sel.selected if b.start < j <= b.end]
            for j in members:
                dev = abs(diag[b.m][j - 1] - targets[b.m])
                assert dev <= b.tolerance + 1e-12

    def test_selected_position_dominates_cutoff(self, cusp,
                                                cusp_marginals_small):
        # pointwise X >= X_m transfers to the diagonal matrix elements
        X4 = an.make_cutoff(4.0)
        d4 = an.diag_matrix_elements(cusp_marginals_small, X4)
        xexp = np.array([spec.position_expectation(xi)
                         for xi in cusp_marginals_small])
        assert np.all(xexp >= d4 - 1e-12)


class TestComparisonReport:
    def _minimal_inputs(self):
        classical = {
            "horizons": [1e3, 1e4],
            "median_X": [1.0, 2.0],
            "capped": {"2": {"m": 2.0, "mean": 1.1, "se": 0.05,
                             "target": 1.0986}},
        }
        lyapunov = {"mean": 0.8, "ci99": 0.05, "g_bar": 0.81,
                    "rect_control": 1e-4}
        spectrum = {
            "per_j": [{"j": 1, "ell": 55.0, "position_expectation": 0.33,
                       "gamma_monotone": True, "ineq_violations": 0,
                       "ineq_checked": 40, "window": [0.6, 1.5]}],
            "cesaro": {"m": 5.0, "target": 0.886, "final": 0.83,
                       "final_rel_distance": 0.063, "tail_slope": -1e-4,
                       "tail_window": 50, "series": [[1, 0.5], [2, 0.6]]},
            "position_expectations": [0.33, 0.5, 0.6],
        }
        selection = an.Density1Selection(
            [0], [2.0], np.array([1, 2, 3]),
            [an.SelectionBlock(2.0, 0, 3, 0.6, 1.0, math.nan)],
            1.0, 0.1, [])
        return classical, lyapunov, spectrum, selection

    def test_missing_spectrum_listed(self):
        classical, lyapunov, spectrum, selection = self._minimal_inputs()
        with pytest.raises(an.AnalysisInputError) as err:
            an.comparison_report(classical, lyapunov, None, selection)
        assert "spectrum" in err.value.missing

    def test_full_report_sections_and_flags(self):
        report, text = an.comparison_report(*self._minimal_inputs())
        assert set(report["flags"]) == {
            "classical_divergence", "capped_matches_phase_average",
            "positive_lyapunov", "super_exponential_localization",
            "cesaro_trend", "density1_selection"}
        assert all(v == "PASS" for v in report["flags"].values())
        assert "classical vs quantum" in text

    def test_deterministic_serialization(self):
        r1, t1 = an.comparison_report(*self._minimal_inputs())
        r2, t2 = an.comparison_report(*self._minimal_inputs())
        assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)
        assert t1 == t2
