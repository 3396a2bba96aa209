"""Billiard flow on the cusp domain: collisions, reflections, time averages.

The hot loops live in the compiled kernels of :mod:`cusplab._kernels`;
this module is the user-facing surface (single collisions, flows with
callbacks, ensemble drivers, CSV output).  Deep rightward excursions past
``x_deep`` are integrated in the adiabatic channel approximation (see the
kernel module); single-orbit operations default to ``x_deep = inf``
(exact event-by-event dynamics).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .geometry import (BoundaryPoint, CuspDomain, RectangleDomain, Wall,
                       wall_point)

X_DEEP_DEFAULT = 30.0
X_INIT_DEFAULT = 50.0

OBS_CODES = {"x": 0, "cap": 1, "cutoff": 2, "one": 3}


class TangentialError(RuntimeError):
    """Collision discarded: incidence below the tangency tolerance."""


class CornerError(RuntimeError):
    """Reflection undefined: hit within tolerance of a domain corner."""


class EscapeGuardError(RuntimeError):
    """No boundary hit before the guard time (should be unreachable)."""


class SingularOrbitError(RuntimeError):
    """Orbit reconstruction hit a tangency or corner."""


@dataclass(frozen=True)
class LineElement:
    x: float
    y: float
    theta: float

    @property
    def velocity(self):
        return math.cos(self.theta), math.sin(self.theta)


@dataclass(frozen=True)
class CollisionEvent:
    point: BoundaryPoint
    incoming_theta: float
    outgoing_theta: float
    free_path_tau: float
    incidence_sin: float


@dataclass
class TrajectoryStats:
    total_time: float
    n_collisions: int
    running_time_integral_of_obs: float
    renormalization_log_sum: float
    rng_seed: int = -1
    singular: bool = False
    status: str = "ok"


STATUS_NAMES = {0: "ok", 1: "tangential", 2: "corner", 3: "escape_guard"}


def _domain_params(domain):
    if isinstance(domain, RectangleDomain):
        return 2.0, 1, domain.height, domain.width
    return domain.alpha, 0, 1.0, math.inf


def classify_wall(domain, p, tol: float = 1e-10) -> int:
    """Wall code of a boundary point, or -1 for interior points."""
    x, y = p
    if abs(y) <= tol:
        return int(Wall.X_AXIS)
    if abs(x) <= tol:
        return int(Wall.Y_AXIS)
    if math.isfinite(domain.x_max) and abs(x - domain.x_max) <= tol:
        return int(Wall.RIGHT)
    if abs(y - domain.f(x)) <= tol:
        return int(Wall.CURVE)
    return -1


def next_collision(domain, z: LineElement, from_wall: int | None = None) -> CollisionEvent:
    """First boundary hit of the forward ray from z.

    Raises TangentialError / EscapeGuardError; a corner hit is returned as
    an event with ``outgoing_theta = nan`` (reflect() raises on it).
    """
    alpha, ptype, hb, xmax = _domain_params(domain)
    if from_wall is None:
        from_wall = classify_wall(domain, (z.x, z.y))
    c, s = math.cos(z.theta), math.sin(z.theta)
    st, wall, tau, xh, yh, sin_inc, kappa, co, so = K.step(
        z.x, z.y, c, s, alpha, ptype, hb, xmax, from_wall)
    if st == 3:
        raise EscapeGuardError("no boundary hit before the guard time")
    if st == 1:
        raise TangentialError(
            f"tangential hit on wall {Wall(wall).name} (|sin| = {sin_inc:.2e})")
    point = _boundary_point(domain, wall, xh, yh)
    out_theta = math.nan if st == 2 else math.atan2(so, co) % (2.0 * math.pi)
    return CollisionEvent(point, z.theta % (2.0 * math.pi), out_theta, tau, sin_inc)


def _boundary_point(domain, wall, xh, yh):
    wall = Wall(wall)
    if wall == Wall.CURVE:
        return wall_point(domain, wall, xh)
    if wall == Wall.X_AXIS:
        return wall_point(domain, wall, xh)
    return wall_point(domain, wall, yh)


def reflect(domain, event: CollisionEvent) -> LineElement:
    """Specular reflection at a collision event."""
    xh, yh = event.point.position
    for cx, cy in domain.corners:
        if math.hypot(xh - cx, yh - cy) < K.CORNER_TOL:
            raise CornerError(f"hit within tolerance of corner ({cx}, {cy})")
    if math.isnan(event.outgoing_theta):
        raise CornerError("collision flagged as a corner hit")
    return LineElement(xh, yh, event.outgoing_theta)


def poincare_step(domain, z: LineElement) -> LineElement:
    """One step of the boundary-to-boundary map: next collision followed by
    reflection; input and output are inward boundary line elements."""
    ev = next_collision(domain, z)
    return reflect(domain, ev)


def _obs_code(obs):
    """(code, m) for the compiled observable menu, or None for callables."""
    if obs == "x" or obs == "X":
        return 0, 0.0
    if obs == 1 or obs == "one" or obs == "1":
        return 3, 0.0
    if isinstance(obs, tuple) and len(obs) == 2:
        kind, m = obs
        if kind == "cap":
            return 1, float(m)
        if kind == "cutoff":
            return 2, float(m)
    return None


def flow(domain, z0: LineElement, T: float, segment_callback=None,
         obs=None, x_deep: float = math.inf, from_wall: int | None = None):
    """Run the flow for time T.

    Returns (TrajectoryStats, final LineElement).  With a callback the loop
    runs event by event in Python and calls
    ``segment_callback(start_element, theta, tau_segment)`` per straight
    segment (surrogate disabled on this path).
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    alpha, ptype, hb, xmax = _domain_params(domain)
    if from_wall is None:
        from_wall = classify_wall(domain, (z0.x, z0.y))
    c, s = math.cos(z0.theta), math.sin(z0.theta)

    if segment_callback is None and (obs is None or _obs_code(obs) is not None):
        code, m = _obs_code(obs) if obs is not None else (3, 0.0)
        codes = np.array([code], dtype=np.int64)
        ms = np.array([m])
        cks = np.empty(0)
        ck_obs = np.empty((0, 1))
        ck_ncol = np.empty(0, dtype=np.int64)
        st, ncol, t_end, x, y, cf, sf, obs_tot = K.flow_kernel(
            z0.x, z0.y, c, s, T, alpha, ptype, hb, xmax, x_deep,
            codes, ms, from_wall, cks, ck_obs, ck_ncol)
        stats = TrajectoryStats(t_end, int(ncol), float(obs_tot[0]), 0.0,
                                singular=st in (1, 2), status=STATUS_NAMES[st])
        return stats, LineElement(x, y, math.atan2(sf, cf) % (2 * math.pi))

    # event-by-event path with callbacks / general observables
    x, y = z0.x, z0.y
    t_acc = 0.0
    ncol = 0
    obs_int = 0.0
    status = "ok"
    while t_acc < T:
        st, wall, tau, xh, yh, sin_inc, kappa, co, so = K.step(
            x, y, c, s, alpha, ptype, hb, xmax, from_wall)
        if st == 3:
            status = "escape_guard"
            break
        d = min(tau, T - t_acc)
        theta = math.atan2(s, c) % (2 * math.pi)
        if segment_callback is not None:
            segment_callback(LineElement(x, y, theta), theta, d)
        if obs is not None:
            obs_int += _segment_obs_integral(obs, x, c, d)
        t_acc += d
        if d < tau or t_acc >= T:
            x, y = x + d * c, y + d * s
            break
        x, y = xh, yh
        if st == 1:
            status = "tangential"
            break
        if st == 2:
            status = "corner"
            break
        ncol += 1
        c, s = co, so
        from_wall = wall
    stats = TrajectoryStats(t_acc, ncol, obs_int, 0.0,
                            singular=status in ("tangential", "corner"),
                            status=status)
    return stats, LineElement(x, y, math.atan2(s, c) % (2 * math.pi))


_GAUSS5_X = np.array([0.046910077030668, 0.230765344947158, 0.5,
                      0.769234655052841, 0.953089922969332])
_GAUSS5_W = np.array([0.118463442528095, 0.239314335249683, 0.284444444444444,
                      0.239314335249683, 0.118463442528095])


def _segment_obs_integral(obs, x, c, d):
    """Integral of an x-dependent observable over one straight segment;
    closed forms for the compiled menu, Gauss-5 per segment otherwise."""
    spec = _obs_code(obs)
    if spec is not None:
        return K.seg_obs(x, c, d, spec[0], spec[1])
    xs = x + c * d * _GAUSS5_X
    return d * float(np.dot(_GAUSS5_W, [obs(v) for v in xs]))


@dataclass
class TimeAverageResult:
    value: float
    time: float
    singular: bool


def time_average(domain, z0: LineElement, T: float, obs,
                 x_deep: float = math.inf) -> TimeAverageResult:
    """(1/T) * integral of obs along the orbit of z0; on singular
    termination the average over the achieved horizon is returned with the
    flag set."""
    stats, _ = flow(domain, z0, T, obs=obs, x_deep=x_deep)
    t = stats.total_time
    val = stats.running_time_integral_of_obs / t if t > 0 else math.nan
    return TimeAverageResult(val, t, stats.singular)


def truncated_time_average(domain, z0: LineElement, T: float, obs, cap_m: float,
                           x_deep: float = math.inf) -> TimeAverageResult:
    """Time average of min(obs, cap_m) along the orbit."""
    if obs in ("x", "X"):
        return time_average(domain, z0, T, ("cap", cap_m), x_deep=x_deep)
    if callable(obs):
        capped = lambda v: min(obs(v), cap_m)
        return time_average(domain, z0, T, capped, x_deep=x_deep)
    raise ValueError(f"unsupported observable {obs!r} for truncation")


def sample_initial_conditions(domain, n: int, seed, x_init: float = X_INIT_DEFAULT):
    """n line elements drawn from the normalized Liouville measure
    restricted to x < x_init (exact inverse-CDF in x, uniform in y under
    the profile, uniform angle).  Returns (elements, child_seeds)."""
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(n)
    out = []
    for cs in children:
        rng = np.random.default_rng(cs)
        out.append(_draw_initial(domain, rng, x_init))
    return out, children


def _draw_initial(domain, rng, x_init):
    if isinstance(domain, RectangleDomain):
        x = rng.uniform(0.0, domain.width)
        y = rng.uniform(0.0, domain.height)
    else:
        a = domain.alpha
        u = rng.uniform()
        top = 1.0 - (x_init + 1.0) ** (1.0 - a)
        x = (1.0 - u * top) ** (1.0 / (1.0 - a)) - 1.0
        y = rng.uniform() * domain.f(x)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    return LineElement(x, y, theta)


def ensemble_time_averages(domain, n_traj: int, horizons, obs_specs, seed,
                           x_deep: float = X_DEEP_DEFAULT,
                           x_init: float = X_INIT_DEFAULT,
                           max_reseeds: int = 8):
    """Run n_traj seeded trajectories to max(horizons), recording the
    running averages of each observable at every horizon.

    obs_specs: list of ("name", code_spec) with code_spec as accepted by
    time_average's fast path.  Returns a dict with arrays of shape
    (n_traj, n_horizons) per observable plus bookkeeping columns.
    """
    alpha, ptype, hb, xmax = _domain_params(domain)
    horizons = np.asarray(sorted(horizons), dtype=float)
    T = float(horizons[-1])
    codes = np.array([_obs_code(sp)[0] for _, sp in obs_specs], dtype=np.int64)
    ms = np.array([_obs_code(sp)[1] for _, sp in obs_specs])
    nobs = len(obs_specs)
    nck = len(horizons)

    avgs = np.full((n_traj, nck, nobs), math.nan)
    ncols = np.zeros((n_traj, nck), dtype=np.int64)
    singular = np.zeros(n_traj, dtype=bool)

    ss = np.random.SeedSequence(seed)
    children = ss.spawn(n_traj)
    for i, cs in enumerate(children):
        rng = np.random.default_rng(cs)
        ok = False
        for _attempt in range(max_reseeds):
            z = _draw_initial(domain, rng, x_init)
            ck_obs = np.zeros((nck, nobs))
            ck_ncol = np.zeros(nck, dtype=np.int64)
            st, ncol, t_end, *_rest = K.flow_kernel(
                z.x, z.y, math.cos(z.theta), math.sin(z.theta), T,
                alpha, ptype, hb, xmax, x_deep, codes, ms, -1,
                horizons, ck_obs, ck_ncol)
            if st == 0:
                avgs[i] = ck_obs / horizons[:, None]
                ncols[i] = ck_ncol
                ok = True
                break
        if not ok:
            singular[i] = True
    return {
        "horizons": horizons,
        "obs_names": [name for name, _ in obs_specs],
        "obs_ms": ms,
        "averages": avgs,
        "n_collisions": ncols,
        "singular": singular,
        "seed": seed,
    }


def write_trajectory_csv(path, result, seed):
    """Long-format CSV: seed, T, n_collisions, obs_name, average,
    truncation_m, singular_flag."""
    names = result["obs_names"]
    ms = result["obs_ms"]
    avgs = result["averages"]
    ncols = result["n_collisions"]
    singular = result["singular"]
    horizons = result["horizons"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "trajectory", "T", "n_collisions", "obs_name",
                    "average", "truncation_m", "singular_flag"])
        for i in range(avgs.shape[0]):
            for h, Tval in enumerate(horizons):
                for j, name in enumerate(names):
                    w.writerow([seed, i, _fmt(Tval), ncols[i, h], name,
                                _fmt(avgs[i, h, j]), _fmt(ms[j]),
                                int(singular[i])])


def _fmt(v):
    return f"{float(v):.17g}"
