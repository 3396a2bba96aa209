"""Compiled stepping kernels for the billiard flow.

Domain encoding shared by all kernels:
    ptype 0 -> cusp profile f(x) = (x+1)**(-alpha), infinite width
    ptype 1 -> constant profile (rectangle of width xmax, height hb)

Wall codes: 0 X_AXIS, 1 Y_AXIS, 2 CURVE (top), 3 RIGHT, -1 none.
Status codes: 0 ok, 1 tangential, 2 corner, 3 escape guard / no hit.

Deep-cusp excursions (rightward crossings of x = xdeep) are integrated in
the adiabatic channel approximation instead of being resolved collision by
collision: the transverse action J = f(x)*|sin theta| is conserved, the
longitudinal motion obeys dx/dt = +-sqrt(1 - (J/f(x))**2), and the
excursion turns at f(x_t) = J.  Observable integrals along the excursion
are computed by quadrature of the same closed-form time element.
"""

import math

import numpy as np
from numba import njit

INF = math.inf
TANG_TOL = 1e-9
CORNER_TOL = 1e-12
TMAX_GUARD = 1e9
_ROOT_TOL = 1e-13

# two-point Gauss-Legendre on [0, 1]
_G2A = 0.5 - 0.5 / math.sqrt(3.0)
_G2B = 0.5 + 0.5 / math.sqrt(3.0)

# five-point Gauss-Legendre nodes/weights on [0, 1]
_G5X = np.array([0.046910077030668, 0.230765344947158, 0.5,
                 0.769234655052841, 0.953089922969332])
_G5W = np.array([0.118463442528095, 0.239314335249683, 0.284444444444444,
                 0.239314335249683, 0.118463442528095])

N_SURR = 97  # nodes of the cumulative excursion tables


@njit(cache=True, inline="always")
def _f_fp(xp1, alpha):
    """(f, f') from a single power evaluation; xp1 = x + 1."""
    q = xp1 ** (-alpha - 1.0)
    return q * xp1, -alpha * q


@njit(cache=True)
def _curve_refine(x, y, c, s, alpha, lo, hi):
    """First root of g(t) = y + t*s - f(x+t*c) inside a bracket with
    g(lo) < 0 <= g(hi) and g increasing; safeguarded Newton."""
    t = 0.5 * (lo + hi)
    for _ in range(200):
        xt1 = x + t * c + 1.0
        fx, fp = _f_fp(xt1, alpha)
        g = y + t * s - fx
        if g < 0.0:
            lo = t
        else:
            hi = t
        scale = abs(y) + abs(t * s) + fx
        if scale < 1.0:
            scale = 1.0
        if abs(g) <= _ROOT_TOL * scale or (hi - lo) <= 1e-16 * (1.0 + t):
            break
        gp = s - fp * c
        if gp > 0.0:
            tn = t - g / gp
        else:
            tn = 0.5 * (lo + hi)
        if tn <= lo or tn >= hi:
            tn = 0.5 * (lo + hi)
        t = tn
    return t


@njit(cache=True)
def _curve_peak(x, y, c, s, alpha, lo, hi):
    """Argmax of the concave gap function: root of g'(t), g' decreasing,
    with g'(lo) > 0 > g'(hi)."""
    t = 0.5 * (lo + hi)
    for _ in range(120):
        xt1 = x + t * c + 1.0
        q = xt1 ** (-alpha - 2.0)
        gp = s + alpha * q * xt1 * c
        gpp = -alpha * (alpha + 1.0) * q * c * c
        if gp > 0.0:
            lo = t
        else:
            hi = t
        if (hi - lo) <= 1e-13 * (1.0 + hi):
            break
        if gpp != 0.0:
            tn = t - gp / gpp
        else:
            tn = 0.5 * (lo + hi)
        if tn <= lo or tn >= hi:
            tn = 0.5 * (lo + hi)
        t = tn
    return 0.5 * (lo + hi)


@njit(cache=True)
def _first_curve_hit(x, y, c, s, alpha, t_up):
    """Time of the first intersection of the ray with the cusp curve, or
    INF when the curve is not reached before t_up.  The gap function
    g(t) = y + t*s - f(x+t*c) is concave (f convex), so the ray meets the
    curve at most twice and bracketing is exact."""
    xp1 = x + 1.0
    f0, fp0 = _f_fp(xp1, alpha)
    gap = f0 - y
    if gap <= 0.0:
        return INF
    if c == 0.0:
        if s > 0.0:
            return gap / s
        return INF
    d0 = s - fp0 * c
    if d0 <= 0.0:
        # gap initially widening and concave: never closes
        return INF
    if s > 0.0 and c >= 0.0:
        # rising rightward ray: f decreasing along it, so the constant-f
        # crossing time brackets the true root from above
        hi = gap / s
        xt1 = x + hi * c + 1.0
        ghi = y + hi * s - xt1 ** (-alpha)
        n = 0
        while ghi < 0.0 and n < 64:
            hi *= 2.0
            xt1 = x + hi * c + 1.0
            ghi = y + hi * s - xt1 ** (-alpha)
            n += 1
        if ghi < 0.0:
            return INF
        return _curve_refine(x, y, c, s, alpha, 0.0, hi)
    if s == 0.0 and c > 0.0:
        # horizontal: exact inverse of the profile
        xr = y ** (-1.0 / alpha) - 1.0
        t = (xr - x) / c
        if t > 0.0:
            return t
        return INF
    if s > 0.0 and c < 0.0:
        hi = t_up
        if hi == INF:
            return INF  # unreachable: c < 0 bounds t_up via the y-axis
    else:
        # s < 0: bounded by the x-axis crossing
        hi = t_up
        if hi == INF:
            return INF
    xt1 = x + hi * c + 1.0
    if xt1 <= 0.0:
        return INF
    ghi = y + hi * s - xt1 ** (-alpha)
    if ghi < 0.0:
        q = xt1 ** (-alpha - 1.0)
        gp_hi = s + alpha * q * c
        if gp_hi >= 0.0:
            return INF  # still rising at t_up yet below zero: no root before t_up
        tstar = _curve_peak(x, y, c, s, alpha, 0.0, hi)
        xs1 = x + tstar * c + 1.0
        gstar = y + tstar * s - xs1 ** (-alpha)
        if gstar < 0.0:
            return INF
        hi = tstar
    return _curve_refine(x, y, c, s, alpha, 0.0, hi)


@njit(cache=True)
def step(x, y, c, s, alpha, ptype, hb, xmax, from_wall):
    """One collision of the ray (x,y)+t(c,s): first wall hit plus specular
    reflection data.

    Returns (status, wall, tau, xh, yh, sin_inc, kappa, co, so).
    """
    tau_x = INF
    tau_y = INF
    tau_r = INF
    tau_c = INF
    if s < 0.0 and from_wall != 0:
        tau_x = -y / s
    if c < 0.0 and from_wall != 1:
        tau_y = -x / c
    if ptype == 1:
        if c > 0.0 and from_wall != 3:
            tau_r = (xmax - x) / c
        if s > 0.0 and from_wall != 2:
            tau_c = (hb - y) / s
    else:
        if from_wall != 2:
            t_up = tau_x if tau_x < tau_y else tau_y
            tau_c = _first_curve_hit(x, y, c, s, alpha, t_up)

    wall = -1
    tau = INF
    if tau_x < tau:
        tau = tau_x
        wall = 0
    if tau_y < tau:
        tau = tau_y
        wall = 1
    if tau_r < tau:
        tau = tau_r
        wall = 3
    if tau_c < tau:
        tau = tau_c
        wall = 2
    if wall < 0 or tau > TMAX_GUARD or not math.isfinite(tau):
        return 3, -1, 0.0, x, y, 0.0, 0.0, c, s

    # hit point, projected exactly onto the wall
    if wall == 0:
        xh = x + tau * c
        yh = 0.0
    elif wall == 1:
        xh = 0.0
        yh = y + tau * s
    elif wall == 3:
        xh = xmax
        yh = y + tau * s
    else:
        xh = x + tau * c
        yh = hb if ptype == 1 else (xh + 1.0) ** (-alpha)

    # corner proximity
    if ptype == 0:
        if (xh * xh + yh * yh) < CORNER_TOL * CORNER_TOL or \
           (xh * xh + (yh - 1.0) * (yh - 1.0)) < CORNER_TOL * CORNER_TOL:
            return 2, wall, tau, xh, yh, 0.0, 0.0, c, s
    else:
        dx0 = xh
        dx1 = xh - xmax
        dy0 = yh
        dy1 = yh - hb
        if (dx0 * dx0 + dy0 * dy0) < CORNER_TOL * CORNER_TOL or \
           (dx0 * dx0 + dy1 * dy1) < CORNER_TOL * CORNER_TOL or \
           (dx1 * dx1 + dy0 * dy0) < CORNER_TOL * CORNER_TOL or \
           (dx1 * dx1 + dy1 * dy1) < CORNER_TOL * CORNER_TOL:
            return 2, wall, tau, xh, yh, 0.0, 0.0, c, s

    # inward normal
    kappa = 0.0
    if wall == 0:
        nx = 0.0
        ny = 1.0
    elif wall == 1:
        nx = 1.0
        ny = 0.0
    elif wall == 3:
        nx = -1.0
        ny = 0.0
    else:
        if ptype == 1:
            nx = 0.0
            ny = -1.0
        else:
            xh1 = xh + 1.0
            q = xh1 ** (-alpha - 2.0)
            fp = -alpha * q * xh1
            fpp = alpha * (alpha + 1.0) * q
            nn = math.sqrt(fp * fp + 1.0)
            nx = fp / nn
            ny = -1.0 / nn
            kappa = fpp / (nn * nn * nn)

    dot = c * nx + s * ny
    sin_inc = -dot if dot < 0.0 else dot
    if sin_inc < TANG_TOL:
        return 1, wall, tau, xh, yh, sin_inc, kappa, c, s

    co = c - 2.0 * dot * nx
    so = s - 2.0 * dot * ny
    h = math.sqrt(co * co + so * so)
    co /= h
    so /= h
    return 0, wall, tau, xh, yh, sin_inc, kappa, co, so


@njit(cache=True, inline="always")
def _smoothstep(u):
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    return u * u * (3.0 - 2.0 * u)


@njit(cache=True, inline="always")
def obs_value(xv, code, m):
    """Pointwise observable: 0 -> x, 1 -> min(x, m), 2 -> x*smoothstep(m-x),
    3 -> 1."""
    if code == 0:
        return xv
    if code == 1:
        return xv if xv < m else m
    if code == 2:
        return xv * _smoothstep(m - xv)
    return 1.0


@njit(cache=True)
def seg_obs(x, c, d, code, m):
    """Integral of the observable along a straight segment of duration d
    starting at abscissa x with horizontal speed c (closed forms; the
    smooth-cutoff case splits at its kinks and uses Gauss-5, exact for the
    quartic integrand)."""
    if d <= 0.0:
        return 0.0
    if code == 3:
        return d
    if code == 0:
        return d * (x + 0.5 * d * c)
    if c == 0.0:
        return d * obs_value(x, code, m)
    if code == 1:
        tm = (m - x) / c
        if c > 0.0:
            if x >= m:
                return d * m
            if tm >= d:
                return d * (x + 0.5 * d * c)
            return tm * (x + 0.5 * tm * c) + (d - tm) * m
        else:
            if x <= m:
                return d * (x + 0.5 * d * c)
            if tm >= d:
                return d * m
            rem = d - tm
            return tm * m + rem * (m + 0.5 * rem * c)
    # code 2: kinks where x(t) crosses m-1 and m
    t1 = (m - 1.0 - x) / c
    t2 = (m - x) / c
    if t1 > t2:
        t1, t2 = t2, t1
    a = 0.0
    total = 0.0
    for k in range(3):
        if k == 0:
            b = t1
        elif k == 1:
            b = t2
        else:
            b = d
        if b > d:
            b = d
        if b > a:
            seg = b - a
            acc = 0.0
            for i in range(5):
                t = a + seg * _G5X[i]
                xv = x + t * c
                acc += _G5W[i] * xv * _smoothstep(m - xv)
            total += acc * seg
        a = b if b > a else a
        if a >= d:
            break
    return total


@njit(cache=True)
def surrogate_tables(x_e, absJ, alpha, codes, ms, sig, ts, ns, obs_tab):
    """Cumulative in-leg tables of a deep-cusp excursion entering at x_e
    with transverse action absJ: time, collision estimate, and one
    observable-integral column per entry of `codes`.

    Nodes run from the entry (index 0) to the turning point (last index)
    in the regularized coordinate x = x_t - sigma**2.  Returns x_t.
    """
    x_t = absJ ** (-1.0 / alpha) - 1.0
    nn = sig.shape[0]
    nobs = codes.shape[0]
    if x_t <= x_e:
        for i in range(nn):
            sig[i] = 0.0
            ts[i] = 0.0
            ns[i] = 0.0
            for j in range(nobs):
                obs_tab[j, i] = 0.0
        return x_t
    smax = math.sqrt(x_t - x_e)
    xt1 = x_t + 1.0
    for i in range(nn):
        sig[i] = smax * (1.0 - i / (nn - 1.0))
    ts[0] = 0.0
    ns[0] = 0.0
    for j in range(nobs):
        obs_tab[j, 0] = 0.0
    for i in range(nn - 1):
        a = sig[i]
        b = sig[i + 1]
        h = a - b  # positive
        dt = 0.0
        dn = 0.0
        for j in range(nobs):
            obs_tab[j, i + 1] = 0.0
        for k in range(2):
            sg = a - h * (_G2A if k == 0 else _G2B)
            # 1 - (J/f)^2 = -expm1(2*alpha*log1p(-sigma^2/(x_t+1))), exact
            arg = -math.expm1(2.0 * alpha * math.log1p(-(sg * sg) / xt1))
            if arg <= 0.0:
                arg = 1e-300
            w = sg / math.sqrt(arg)  # * 2 (dx = 2 sigma dsigma), * h/2 (Gauss)
            xv = x_t - sg * sg
            dt += w
            dn += w * absJ * (xv + 1.0) ** (2.0 * alpha)
            for j in range(nobs):
                obs_tab[j, i + 1] += w * obs_value(xv, codes[j], ms[j])
        ts[i + 1] = ts[i] + dt * h
        ns[i + 1] = ns[i] + dn * h
        for j in range(nobs):
            obs_tab[j, i + 1] = obs_tab[j, i] + obs_tab[j, i + 1] * h
    return x_t


@njit(cache=True)
def _table_query(ts, col, t):
    """Linear interpolation of a cumulative in-leg table at in-leg time t."""
    nn = ts.shape[0]
    if t <= 0.0:
        return 0.0
    if t >= ts[nn - 1]:
        return col[nn - 1]
    lo = 0
    hi = nn - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ts[mid] <= t:
            lo = mid
        else:
            hi = mid
    span = ts[hi] - ts[lo]
    w = (t - ts[lo]) / span if span > 0.0 else 0.0
    return col[lo] + w * (col[hi] - col[lo])


@njit(cache=True)
def _surr_partial(ts, col, t, t_half):
    """Cumulative excursion value at excursion time t (mirror out-leg)."""
    if t <= t_half:
        return _table_query(ts, col, t)
    total = col[ts.shape[0] - 1]
    return 2.0 * total - _table_query(ts, col, 2.0 * t_half - t)


@njit(cache=True)
def _surr_x_at(ts, sig, t, t_half, x_t):
    tt = t if t <= t_half else 2.0 * t_half - t
    sg = _table_query(ts, sig, tt)
    return x_t - sg * sg


@njit(cache=True)
def flow_kernel(x0, y0, c0, s0, T, alpha, ptype, hb, xmax, xdeep,
                codes, ms, from_wall0, checkpoints, ck_obs, ck_ncol):
    """Billiard flow for time T accumulating observable integrals.

    ck_obs has shape (n_checkpoints, n_obs) and receives the running
    integrals at the checkpoint times; ck_ncol the collision counts.

    Returns (status, ncol, t_end, x, y, c, s, obs_totals) where obs_totals
    is the vector of full-horizon integrals.
    """
    nobs = codes.shape[0]
    nck = checkpoints.shape[0]
    obs_tot = np.zeros(nobs)
    obs_cmp = np.zeros(nobs)  # Kahan compensation
    t_acc = 0.0
    t_cmp = 0.0
    ncol = 0
    ck_i = 0
    x = x0
    y = y0
    c = c0
    s = s0
    from_wall = from_wall0
    status = 0

    sig = np.empty(N_SURR)
    ts = np.empty(N_SURR)
    nss = np.empty(N_SURR)
    otab = np.empty((nobs, N_SURR))

    while t_acc < T:
        st, wall, tau, xh, yh, sin_inc, kappa, co, so = step(
            x, y, c, s, alpha, ptype, hb, xmax, from_wall)
        if st == 3:
            status = 3
            break

        # deep-cusp interception: rightward crossing of x = xdeep
        crossing = False
        t_cross = 0.0
        if ptype == 0 and xdeep < INF and c > 0.0:
            if x >= xdeep:
                crossing = True
            elif x + tau * c > xdeep:
                crossing = True
                t_cross = (xdeep - x) / c
        if crossing:
            # advance the straight part up to the crossing
            d = t_cross
            if t_acc + d >= T:
                d = T - t_acc
                while ck_i < nck and checkpoints[ck_i] <= t_acc + d:
                    part = checkpoints[ck_i] - t_acc
                    for j in range(nobs):
                        ck_obs[ck_i, j] = obs_tot[j] + seg_obs(x, c, part, codes[j], ms[j])
                    ck_ncol[ck_i] = ncol
                    ck_i += 1
                for j in range(nobs):
                    obs_tot[j] += seg_obs(x, c, d, codes[j], ms[j])
                t_acc += d
                x += d * c
                y += d * s
                break
            while ck_i < nck and checkpoints[ck_i] <= t_acc + d:
                part = checkpoints[ck_i] - t_acc
                for j in range(nobs):
                    ck_obs[ck_i, j] = obs_tot[j] + seg_obs(x, c, part, codes[j], ms[j])
                ck_ncol[ck_i] = ncol
                ck_i += 1
            for j in range(nobs):
                yv = seg_obs(x, c, d, codes[j], ms[j]) - obs_cmp[j]
                tv = obs_tot[j] + yv
                obs_cmp[j] = (tv - obs_tot[j]) - yv
                obs_tot[j] = tv
            yv = d - t_cmp
            tv = t_acc + yv
            t_cmp = (tv - t_acc) - yv
            t_acc = tv
            x_e = x + d * c
            y_e = y + d * s
            if abs(s) < 1e-12:
                status = 1
                x = x_e
                y = y_e
                break
            absJ = (x_e + 1.0) ** (-alpha) * abs(s)
            x_t = surrogate_tables(x_e, absJ, alpha, codes, ms, sig, ts, nss, otab)
            t_half = ts[N_SURR - 1]
            D = 2.0 * t_half
            n_exc = 2.0 * nss[N_SURR - 1]
            if t_acc + D >= T:
                # horizon ends inside the excursion
                d_in = T - t_acc
                while ck_i < nck and checkpoints[ck_i] <= T:
                    part = checkpoints[ck_i] - t_acc
                    for j in range(nobs):
                        ck_obs[ck_i, j] = obs_tot[j] + _surr_partial(ts, otab[j], part, t_half)
                    ck_ncol[ck_i] = ncol + int(_surr_partial(ts, nss, part, t_half))
                    ck_i += 1
                for j in range(nobs):
                    obs_tot[j] += _surr_partial(ts, otab[j], d_in, t_half)
                ncol += int(_surr_partial(ts, nss, d_in, t_half))
                t_acc += d_in
                x = _surr_x_at(ts, sig, d_in, t_half, x_t)
                u = y_e / ((x_e + 1.0) ** (-alpha))
                y = u * (x + 1.0) ** (-alpha)
                c = math.sqrt(max(1.0 - (absJ * (x + 1.0) ** alpha) ** 2, 0.0))
                if d_in > t_half:
                    c = -c
                s = math.copysign(absJ * (x + 1.0) ** alpha, s)
                break
            while ck_i < nck and checkpoints[ck_i] <= t_acc + D:
                part = checkpoints[ck_i] - t_acc
                for j in range(nobs):
                    ck_obs[ck_i, j] = obs_tot[j] + _surr_partial(ts, otab[j], part, t_half)
                ck_ncol[ck_i] = ncol + int(_surr_partial(ts, nss, part, t_half))
                ck_i += 1
            for j in range(nobs):
                yv = 2.0 * otab[j, N_SURR - 1] - obs_cmp[j]
                tv = obs_tot[j] + yv
                obs_cmp[j] = (tv - obs_tot[j]) - yv
                obs_tot[j] = tv
            yv = D - t_cmp
            tv = t_acc + yv
            t_cmp = (tv - t_acc) - yv
            t_acc = tv
            ncol += int(n_exc)
            x = x_e
            y = y_e
            c = -c
            from_wall = -1
            continue

        # ordinary straight segment
        d = tau
        clipped = False
        if t_acc + d >= T:
            d = T - t_acc
            clipped = True
        while ck_i < nck and checkpoints[ck_i] <= t_acc + d:
            part = checkpoints[ck_i] - t_acc
            for j in range(nobs):
                ck_obs[ck_i, j] = obs_tot[j] + seg_obs(x, c, part, codes[j], ms[j])
            ck_ncol[ck_i] = ncol
            ck_i += 1
        for j in range(nobs):
            yv = seg_obs(x, c, d, codes[j], ms[j]) - obs_cmp[j]
            tv = obs_tot[j] + yv
            obs_cmp[j] = (tv - obs_tot[j]) - yv
            obs_tot[j] = tv
        yv = d - t_cmp
        tv = t_acc + yv
        t_cmp = (tv - t_acc) - yv
        t_acc = tv
        if clipped:
            x += d * c
            y += d * s
            break
        x = xh
        y = yh
        if st == 1:
            status = 1
            break
        if st == 2:
            status = 2
            break
        ncol += 1
        c = co
        s = so
        from_wall = wall

    # flush any remaining checkpoints (fp guard for the ones at t == T)
    while ck_i < nck:
        for j in range(nobs):
            ck_obs[ck_i, j] = obs_tot[j]
        ck_ncol[ck_i] = ncol
        ck_i += 1
    return status, ncol, t_acc, x, y, c, s, obs_tot


@njit(cache=True)
def lyap_kernel(x0, y0, c0, s0, T, alpha, ptype, hb, xmax, xdeep,
                d0, dp0, from_wall0, ck_times, ck_t, ck_logsum):
    """Benettin run: carry one transverse Jacobi vector, renormalize at
    every collision, accumulate log norms.

    ck_times are monotone times (dyadic ladder); ck_t/ck_logsum receive the
    actual event time and running log-sum at the first collision past each.

    Returns (status, ncol, t_end, log_sum, d, dp, x, y, c, s).
    """
    t_acc = 0.0
    t_cmp = 0.0
    log_sum = 0.0
    ncol = 0
    ck_i = 0
    nck = ck_times.shape[0]
    x = x0
    y = y0
    c = c0
    s = s0
    d = d0
    dp = dp0
    from_wall = from_wall0
    status = 0

    sig = np.empty(N_SURR)
    ts = np.empty(N_SURR)
    nss = np.empty(N_SURR)
    otab = np.empty((1, N_SURR))
    codes1 = np.zeros(1, dtype=np.int64)
    ms1 = np.zeros(1)

    while t_acc < T:
        st, wall, tau, xh, yh, sin_inc, kappa, co, so = step(
            x, y, c, s, alpha, ptype, hb, xmax, from_wall)
        if st == 3:
            status = 3
            break

        crossing = False
        t_cross = 0.0
        if ptype == 0 and xdeep < INF and c > 0.0:
            if x >= xdeep:
                crossing = True
            elif x + tau * c > xdeep:
                crossing = True
                t_cross = (xdeep - x) / c
        if crossing:
            dd = t_cross
            if t_acc + dd >= T:
                dd = T - t_acc
                d += dd * dp
                t_acc += dd
                x += dd * c
                y += dd * s
                break
            x_e = x + dd * c
            y_e = y + dd * s
            t_acc += dd
            d += dd * dp
            if abs(s) < 1e-12:
                status = 1
                x = x_e
                y = y_e
                break
            absJ = (x_e + 1.0) ** (-alpha) * abs(s)
            x_t = surrogate_tables(x_e, absJ, alpha, codes1, ms1, sig, ts, nss, otab)
            t_half = ts[N_SURR - 1]
            D = 2.0 * t_half
            if t_acc + D >= T:
                dd = T - t_acc
                d += dd * dp
                t_acc += dd
                x = _surr_x_at(ts, sig, dd, t_half, x_t)
                break
            # excursion acts as a pure shear of duration D on the
            # transverse field (flat-mirror flips compose to identity,
            # curvature kicks are negligible at this depth)
            d += D * dp
            t_acc += D
            ncol += int(2.0 * nss[N_SURR - 1])
            nrm = math.sqrt(d * d + dp * dp)
            log_sum += math.log(nrm)
            d /= nrm
            dp /= nrm
            if ck_i < nck and t_acc >= ck_times[ck_i]:
                while ck_i < nck and t_acc >= ck_times[ck_i]:
                    ck_t[ck_i] = t_acc
                    ck_logsum[ck_i] = log_sum
                    ck_i += 1
            x = x_e
            y = y_e
            c = -c
            from_wall = -1
            continue

        dd = tau
        clipped = False
        if t_acc + dd >= T:
            dd = T - t_acc
            clipped = True
        yv = dd - t_cmp
        tv = t_acc + yv
        t_cmp = (tv - t_acc) - yv
        t_acc = tv
        d += dd * dp
        if clipped:
            x += dd * c
            y += dd * s
            break
        x = xh
        y = yh
        if st == 1:
            status = 1
            break
        if st == 2:
            status = 2
            break
        ncol += 1
        # reflection tangent map: frame flip plus curvature kick
        kick = 2.0 * kappa / sin_inc
        dnew = -d
        dpnew = -(dp + kick * d)
        d = dnew
        dp = dpnew
        nrm = math.sqrt(d * d + dp * dp)
        log_sum += math.log(nrm)
        d /= nrm
        dp /= nrm
        c = co
        s = so
        from_wall = wall
        if ck_i < nck and t_acc >= ck_times[ck_i]:
            while ck_i < nck and t_acc >= ck_times[ck_i]:
                ck_t[ck_i] = t_acc
                ck_logsum[ck_i] = log_sum
                ck_i += 1

    # final partial-norm contribution
    nrm = math.sqrt(d * d + dp * dp)
    if nrm > 0.0:
        log_sum += math.log(nrm)
        d /= nrm
        dp /= nrm
    while ck_i < nck:
        ck_t[ck_i] = t_acc
        ck_logsum[ck_i] = log_sum
        ck_i += 1
    return status, ncol, t_acc, log_sum, d, dp, x, y, c, s


@njit(cache=True)
def frame2_kernel(x0, y0, c0, s0, T, alpha, ptype, hb, xmax, xdeep):
    """Two-vector Benettin run with QR renormalization at every collision.
    Returns (status, t_end, log1_sum, log2_sum)."""
    t_acc = 0.0
    log1 = 0.0
    log2 = 0.0
    x = x0
    y = y0
    c = c0
    s = s0
    # columns of the transverse frame
    a11 = 1.0
    a21 = 0.0
    a12 = 0.0
    a22 = 1.0
    from_wall = -1
    status = 0

    sig = np.empty(N_SURR)
    ts = np.empty(N_SURR)
    nss = np.empty(N_SURR)
    otab = np.empty((1, N_SURR))
    codes1 = np.zeros(1, dtype=np.int64)
    ms1 = np.zeros(1)

    while t_acc < T:
        st, wall, tau, xh, yh, sin_inc, kappa, co, so = step(
            x, y, c, s, alpha, ptype, hb, xmax, from_wall)
        if st == 3:
            status = 3
            break
        crossing = False
        t_cross = 0.0
        if ptype == 0 and xdeep < INF and c > 0.0:
            if x >= xdeep:
                crossing = True
            elif x + tau * c > xdeep:
                crossing = True
                t_cross = (xdeep - x) / c
        if crossing:
            dd = t_cross
            if t_acc + dd >= T:
                break
            x_e = x + dd * c
            y_e = y + dd * s
            t_acc += dd
            a11 += dd * a21
            a12 += dd * a22
            if abs(s) < 1e-12:
                status = 1
                break
            absJ = (x_e + 1.0) ** (-alpha) * abs(s)
            surrogate_tables(x_e, absJ, alpha, codes1, ms1, sig, ts, nss, otab)
            D = 2.0 * ts[N_SURR - 1]
            if t_acc + D >= T:
                t_acc = T
                break
            a11 += D * a21
            a12 += D * a22
            t_acc += D
            x = x_e
            y = y_e
            c = -c
            from_wall = -1
            continue
        dd = tau
        clipped = False
        if t_acc + dd >= T:
            dd = T - t_acc
            clipped = True
        t_acc += dd
        a11 += dd * a21
        a12 += dd * a22
        if clipped:
            break
        x = xh
        y = yh
        if st == 1 or st == 2:
            status = st
            break
        kick = 2.0 * kappa / sin_inc
        b11 = -a11
        b21 = -(a21 + kick * a11)
        b12 = -a12
        b22 = -(a22 + kick * a12)
        # QR renormalization (Gram-Schmidt)
        r11 = math.sqrt(b11 * b11 + b21 * b21)
        log1 += math.log(r11)
        q11 = b11 / r11
        q21 = b21 / r11
        r12 = q11 * b12 + q21 * b22
        w1 = b12 - r12 * q11
        w2 = b22 - r12 * q21
        r22 = math.sqrt(w1 * w1 + w2 * w2)
        log2 += math.log(r22)
        a11 = q11
        a21 = q21
        a12 = w1 / r22
        a22 = w2 / r22
        c = co
        s = so
        from_wall = wall
    return status, t_acc, log1, log2


@njit(cache=True)
def sample_states_kernel(x0, y0, c0, s0, T, alpha, ptype, hb, xmax, xdeep,
                         times, out):
    """Record the flow state at the given sorted times.

    out has shape (len(times), 5): x, y, c, s, in_surrogate flag.
    Returns (status, t_end).
    """
    t_acc = 0.0
    i = 0
    n = times.shape[0]
    x = x0
    y = y0
    c = c0
    s = s0
    from_wall = -1
    status = 0

    sig = np.empty(N_SURR)
    ts = np.empty(N_SURR)
    nss = np.empty(N_SURR)
    otab = np.empty((1, N_SURR))
    codes1 = np.zeros(1, dtype=np.int64)
    ms1 = np.zeros(1)

    while t_acc < T and i < n:
        st, wall, tau, xh, yh, sin_inc, kappa, co, so = step(
            x, y, c, s, alpha, ptype, hb, xmax, from_wall)
        if st == 3:
            status = 3
            break
        crossing = False
        t_cross = 0.0
        if ptype == 0 and xdeep < INF and c > 0.0:
            if x >= xdeep:
                crossing = True
            elif x + tau * c > xdeep:
                crossing = True
                t_cross = (xdeep - x) / c
        if crossing:
            while i < n and times[i] <= t_acc + t_cross:
                part = times[i] - t_acc
                out[i, 0] = x + part * c
                out[i, 1] = y + part * s
                out[i, 2] = c
                out[i, 3] = s
                out[i, 4] = 0.0
                i += 1
            x_e = x + t_cross * c
            y_e = y + t_cross * s
            t_acc += t_cross
            if t_acc >= T:
                break
            if abs(s) < 1e-12:
                status = 1
                break
            absJ = (x_e + 1.0) ** (-alpha) * abs(s)
            x_t = surrogate_tables(x_e, absJ, alpha, codes1, ms1, sig, ts, nss, otab)
            t_half = ts[N_SURR - 1]
            D = 2.0 * t_half
            while i < n and times[i] <= t_acc + D:
                part = times[i] - t_acc
                xv = _surr_x_at(ts, sig, part, t_half, x_t)
                out[i, 0] = xv
                out[i, 1] = 0.5 * (xv + 1.0) ** (-alpha)
                out[i, 2] = 0.0
                out[i, 3] = 0.0
                out[i, 4] = D  # positive marks an in-excursion sample
                i += 1
            t_acc += D
            if t_acc >= T:
                break
            x = x_e
            y = y_e
            c = -c
            from_wall = -1
            continue
        while i < n and times[i] <= t_acc + tau:
            part = times[i] - t_acc
            out[i, 0] = x + part * c
            out[i, 1] = y + part * s
            out[i, 2] = c
            out[i, 3] = s
            out[i, 4] = 0.0
            i += 1
        t_acc += tau
        x = xh
        y = yh
        if st == 1 or st == 2:
            status = st
            break
        c = co
        s = so
        from_wall = wall
    return status, t_acc
