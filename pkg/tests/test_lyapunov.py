import math

import numpy as np
import pytest

from cusplab.dynamics import LineElement, flow, next_collision, reflect
from cusplab.geometry import CuspDomain, RectangleDomain, boundary_eval
from cusplab.lyapunov import (JacobiField, free_matrix, g_observable,
                              g_time_average, lyapunov_ensemble,
                              lyapunov_estimate, propagate_free,
                              propagate_reflection, reflection_matrix,
                              transverse_jacobian, two_frame_exponent_sum)


@pytest.fixture(scope="module")
def d2():
    return CuspDomain(2.0)


class TestJacobiMaps:
    def test_free_identity(self):
        J = JacobiField(0.3, -0.7)
        assert propagate_free(J, 0.0) == J

    def test_free_drift(self):
        J = propagate_free(JacobiField(0.0, 1.0), 2.0)
        assert (J.delta, J.delta_prime) == (2.0, 1.0)

    def test_flat_reflection_is_isometry(self):
        J = JacobiField(0.6, -0.8)
        out = propagate_reflection(J, 0.0, 0.5)
        assert (out.delta, out.delta_prime) == (-0.6, 0.8)
        assert out.norm() == pytest.approx(J.norm(), abs=0.0)

    def test_curvature_kick_at_normal_incidence(self):
        # curve point x = 1, alpha = 2
        _, _, _, kappa = boundary_eval(CuspDomain(2.0), 1.0)
        assert kappa == pytest.approx(0.375 * 1.0625 ** -1.5, rel=1e-13)
        out = propagate_reflection(JacobiField(1.0, 0.0), kappa, 1.0)
        assert out.delta == -1.0
        assert out.delta_prime == pytest.approx(-2.0 * kappa, rel=1e-13)

    def test_grazing_blowup_monotone(self):
        J = JacobiField(1.0, 0.0)
        norms = [propagate_reflection(J, 0.5, s).norm()
                 for s in (0.5, 0.1, 0.01, 1e-3)]
        assert all(b > a for a, b in zip(norms, norms[1:]))
        with pytest.raises(Exception):
            propagate_reflection(J, 0.5, 1e-12)


def _fd_transverse_jacobian(domain, z0, T, eps=1e-7):
    c, s = math.cos(z0.theta), math.sin(z0.theta)
    eperp = (-s, c)
    _, zb = flow(domain, z0, T)
    cb, sb = math.cos(zb.theta), math.sin(zb.theta)
    ep_f = (-sb, cb)
    cols = []
    for mode in ("pos", "ang"):
        finals = []
        for sign in (1.0, -1.0):
            if mode == "pos":
                z = LineElement(z0.x + sign * eps * eperp[0],
                                z0.y + sign * eps * eperp[1], z0.theta)
            else:
                z = LineElement(z0.x, z0.y, z0.theta + sign * eps)
            _, zf = flow(domain, z, T)
            finals.append(zf)
        dx = finals[0].x - finals[1].x
        dy = finals[0].y - finals[1].y
        dth = (finals[0].theta - finals[1].theta + math.pi) % (2 * math.pi) - math.pi
        cols.append(((dx * ep_f[0] + dy * ep_f[1]) / (2 * eps), dth / (2 * eps)))
    return np.array(cols).T


def _random_three_collision_state(domain, rng):
    while True:
        x = float(rng.uniform(0.1, 2.5))
        y = float(rng.uniform(0.05, 0.9)) * float(domain.f(x)) * 0.9
        th = float(rng.uniform(0, 2 * math.pi))
        z0 = LineElement(x, y, th)
        try:
            taus = []
            z = z0
            for _ in range(4):
                ev = next_collision(domain, z)
                taus.append(ev.free_path_tau)
                z = reflect(domain, ev)
        except Exception:
            continue
        return z0, sum(taus[:3]) + 0.5 * taus[3]


class TestJacobianOracle:
    def test_composed_matches_finite_differences(self, d2, rng):
        for _ in range(25):
            z0, T = _random_three_collision_state(d2, rng)
            M, steps = transverse_jacobian(d2, z0, T)
            Mfd = _fd_transverse_jacobian(d2, z0, T)
            rel = np.max(np.abs(M - Mfd)) / np.max(np.abs(M))
            assert rel < 1e-4
            for F in steps:
                assert abs(abs(np.linalg.det(F)) - 1.0) < 1e-8


class TestGObservable:
    def test_piecewise_constant_along_segment(self, d2):
        _, z1 = flow(d2, LineElement(0.5, 0.3, 0.9), 7.3)
        ev = next_collision(d2, z1)
        zr = reflect(d2, ev)
        c, s = math.cos(zr.theta), math.sin(zr.theta)
        za = LineElement(zr.x + 0.2 * ev.free_path_tau * c,
                         zr.y + 0.2 * ev.free_path_tau * s, zr.theta)
        zb = LineElement(zr.x + 0.7 * ev.free_path_tau * c,
                         zr.y + 0.7 * ev.free_path_tau * s, zr.theta)
        # free path of zr bounds nothing here: points differ along one segment
        ga, gb = g_observable(d2, za), g_observable(d2, zb)
        assert abs(ga - gb) < 1e-10

    def test_positive_along_ensemble(self, d2, rng):
        count = 0
        for _ in range(40):
            x = float(rng.uniform(0.1, 2.0))
            y = float(rng.uniform(0.1, 0.9)) * float(d2.f(x)) * 0.9
            th = float(rng.uniform(0, 2 * math.pi))
            try:
                g = g_observable(d2, LineElement(x, y, th))
            except Exception:
                continue
            assert g > 0
            count += 1
        assert count > 30

    def test_time_average_tracks_benettin(self, d2):
        # smoke-level consistency; the 2% spec tolerance is exercised at
        # ensemble scale in the acceptance suite
        z0 = LineElement(0.5, 0.3, 0.9)
        est = lyapunov_estimate(d2, z0, 2e4, x_deep=30.0)
        gbar, used, info = g_time_average(d2, z0, 2e4, 1500, seed=4,
                                          x_deep=30.0)
        assert used > 1200
        assert abs(gbar - est.lambda_hat) / est.lambda_hat < 0.08


class TestLyapunovEstimates:
    def test_rectangle_control_is_zero(self):
        rect = RectangleDomain(1.0, 1.0)
        est = lyapunov_estimate(rect, LineElement(0.31, 0.4, 0.7), 1e5)
        assert abs(est.lambda_hat) < 0.01

    def test_cusp_exponent_positive(self, d2):
        ens = lyapunov_ensemble(d2, 12, 5e3, seed=9, x_deep=30.0)
        assert ens.mean - ens.ci99_halfwidth > 0
        for e in ens.estimates:
            assert e.lambda_hat == pytest.approx(
                e.convergence_series[-1][1], rel=1e-9)

    def test_ci_shrinks_with_horizon(self, d2):
        a = lyapunov_ensemble(d2, 16, 2e3, seed=21, x_deep=30.0)
        b = lyapunov_ensemble(d2, 16, 8e3, seed=21, x_deep=30.0)
        # quadrupling T should halve the ensemble CI, approximately
        ratio = b.ci99_halfwidth / a.ci99_halfwidth
        assert 0.2 < ratio < 0.95

    def test_convergence_series_monotone_times(self, d2):
        est = lyapunov_estimate(d2, LineElement(0.4, 0.2, 1.0), 4e3,
                                x_deep=30.0)
        times = [t for t, _ in est.convergence_series]
        assert all(b >= a for a, b in zip(times, times[1:]))
        assert est.lambda_hat == pytest.approx(
            est.convergence_series[-1][1], rel=1e-12)

    def test_two_frame_sum_vanishes(self, d2):
        l1, l2 = two_frame_exponent_sum(d2, LineElement(0.5, 0.3, 0.9), 2e4,
                                        x_deep=30.0)
        assert l1 > 0 > l2
        assert abs(l1 + l2) < 5e-3
