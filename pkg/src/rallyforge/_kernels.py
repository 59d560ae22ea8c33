"""Compiled integration kernels for ball flight.

The flight is planar: state is (s, z, v_h, v_z) where s is horizontal
distance along the vertical plane of the shot and z is height.  The spin
surface speed is held constant during a flight segment and only changes
at the bounce.  All kernels are deterministic for fixed inputs; the grid
scans parallelize over independent candidates and the caller reduces by
lowest index.
"""

from __future__ import annotations

import numba
import numpy as np

numba.config.THREADING_LAYER = "workqueue"

from numba import njit, prange  # noqa: E402


@njit(cache=True, inline="always")
def _accel(vh, vz, vspin, lift_sign, k, cd, g):
    v = (vh * vh + vz * vz) ** 0.5
    cl = lift_sign / (2.0 + v / vspin) if vspin > 0.0 else 0.0
    ah = -k * v * (cd * vh + cl * vz)
    az = k * v * (cl * vh - cd * vz) - g
    return ah, az


@njit(cache=True, inline="always")
def _rk4(s, z, vh, vz, vspin, ls, k, cd, g, dt):
    a1h, a1z = _accel(vh, vz, vspin, ls, k, cd, g)
    vh2 = vh + 0.5 * dt * a1h
    vz2 = vz + 0.5 * dt * a1z
    a2h, a2z = _accel(vh2, vz2, vspin, ls, k, cd, g)
    vh3 = vh + 0.5 * dt * a2h
    vz3 = vz + 0.5 * dt * a2z
    a3h, a3z = _accel(vh3, vz3, vspin, ls, k, cd, g)
    vh4 = vh + dt * a3h
    vz4 = vz + dt * a3z
    a4h, a4z = _accel(vh4, vz4, vspin, ls, k, cd, g)
    s_n = s + dt * (vh + 2.0 * vh2 + 2.0 * vh3 + vh4) / 6.0
    z_n = z + dt * (vz + 2.0 * vz2 + 2.0 * vz3 + vz4) / 6.0
    vh_n = vh + dt * (a1h + 2.0 * a2h + 2.0 * a3h + a4h) / 6.0
    vz_n = vz + dt * (a1z + 2.0 * a2z + 2.0 * a3z + a4z) / 6.0
    return s_n, z_n, vh_n, vz_n


@njit(cache=True, inline="always")
def _rk2(s, z, vh, vz, vspin, ls, k, cd, g, dt):
    a1h, a1z = _accel(vh, vz, vspin, ls, k, cd, g)
    vh2 = vh + 0.5 * dt * a1h
    vz2 = vz + 0.5 * dt * a1z
    a2h, a2z = _accel(vh2, vz2, vspin, ls, k, cd, g)
    return s + dt * vh2, z + dt * vz2, vh + dt * a2h, vz + dt * a2z


@njit(cache=True)
def _refine_ground_crossing(s, z, vh, vz, vspin, ls, k, cd, g, dt, z_next):
    """Fraction of a step at which z crosses 0: linear guess + secant passes."""
    alpha = z / (z - z_next) if z != z_next else 1.0
    a_lo, f_lo = 0.0, z
    a_hi, f_hi = 1.0, z_next
    for _ in range(3):
        _, za, _, _ = _rk4(s, z, vh, vz, vspin, ls, k, cd, g, alpha * dt)
        if abs(za) < 1e-12:
            break
        if (za > 0.0) == (f_lo > 0.0):
            a_lo, f_lo = alpha, za
        else:
            a_hi, f_hi = alpha, za
        if f_lo != f_hi:
            alpha = a_lo + (a_hi - a_lo) * f_lo / (f_lo - f_hi)
        else:
            alpha = 0.5 * (a_lo + a_hi)
        if alpha <= 0.0 or alpha >= 1.0:
            alpha = 0.5 * (a_lo + a_hi)
    return alpha


@njit(cache=True)
def _refine_s_crossing(s, z, vh, vz, vspin, ls, k, cd, g, dt, s_target, s_next):
    """Fraction of a step at which s crosses s_target (secant refined)."""
    alpha = (s_target - s) / (s_next - s) if s_next != s else 1.0
    a_lo, f_lo = 0.0, s - s_target
    a_hi, f_hi = 1.0, s_next - s_target
    for _ in range(3):
        sa, _, _, _ = _rk4(s, z, vh, vz, vspin, ls, k, cd, g, alpha * dt)
        fa = sa - s_target
        if abs(fa) < 1e-12:
            break
        if (fa > 0.0) == (f_lo > 0.0):
            a_lo, f_lo = alpha, fa
        else:
            a_hi, f_hi = alpha, fa
        if f_lo != f_hi:
            alpha = a_lo + (a_hi - a_lo) * f_lo / (f_lo - f_hi)
        else:
            alpha = 0.5 * (a_lo + a_hi)
        if alpha <= 0.0 or alpha >= 1.0:
            alpha = 0.5 * (a_lo + a_hi)
    return alpha


# Simulation end statuses.
END_PLANE = 0
END_SECOND_GROUND = 1
END_MAX_TIME = 2


@njit(cache=True)
def simulate_flight(z0, vh0, vz0, vspin0, ls0, k, cd, g,
                    restitution, h_retention, spin_retention, spin_kick,
                    dt, max_time, s_net, net_h, s_plane, has_plane):
    """Integrate one flight with fixed-step RK4 and sub-step event handling.

    Returns (n, ts, ss, zs, status, bounced, bounce_t, bounce_s,
    bounce_in, bounce_out, clearance, end_state) where bounce_in/out are
    (vh, vz, vspin) triples and end_state is (t, s, z, vh, vz, vspin, ls).
    Samples land on the dt grid except event samples (bounce, end).
    clearance is the height margin over the net, NaN until crossed.
    """
    nmax = int(max_time / dt) + 8
    ts = np.empty(nmax)
    ss = np.empty(nmax)
    zs = np.empty(nmax)
    t = 0.0
    s = 0.0
    z = z0
    vh = vh0
    vz = vz0
    vspin = vspin0
    ls = ls0
    ts[0] = 0.0
    ss[0] = 0.0
    zs[0] = z0
    n = 1
    bounced = False
    bounce_t = np.nan
    bounce_s = np.nan
    b_in = (np.nan, np.nan, np.nan)
    b_out = (np.nan, np.nan, np.nan)
    clearance = np.nan
    status = END_MAX_TIME

    while t < max_time and n < nmax - 1:
        step = dt if t + dt <= max_time else max_time - t
        if step <= 0.0:
            break
        ps, pz = s, z
        s1, z1, vh1, vz1 = _rk4(s, z, vh, vz, vspin, ls, k, cd, g, step)

        # Event fractions within this step (2.0 = does not occur).
        frac_g = 2.0
        if z1 <= 0.0 < pz:
            frac_g = _refine_ground_crossing(s, z, vh, vz, vspin, ls, k, cd, g, step, z1)
        frac_p = 2.0
        if has_plane and ((ps < s_plane <= s1) or (ps > s_plane >= s1)):
            frac_p = _refine_s_crossing(s, z, vh, vz, vspin, ls, k, cd, g,
                                        step, s_plane, s1)
        frac_n = 2.0
        if np.isnan(clearance) and ps < s_net <= s1:
            frac_n = (s_net - ps) / (s1 - ps) if s1 != ps else 0.0

        first_terminal = frac_p if frac_p <= frac_g else frac_g
        if frac_n <= 1.0 and frac_n <= first_terminal:
            clearance = (pz + frac_n * (z1 - pz)) - net_h

        if frac_p <= frac_g and frac_p <= 1.0:
            se, ze, vhe, vze = _rk4(s, z, vh, vz, vspin, ls, k, cd, g, frac_p * step)
            te = t + frac_p * step
            ts[n] = te
            ss[n] = se
            zs[n] = ze if ze > 0.0 else 0.0
            n += 1
            status = END_PLANE
            return (n, ts, ss, zs, status, bounced, bounce_t, bounce_s,
                    b_in, b_out, clearance, (te, se, ze, vhe, vze, vspin, ls))

        if frac_g <= 1.0:
            sb, _, vhb, vzb = _rk4(s, z, vh, vz, vspin, ls, k, cd, g, frac_g * step)
            tb = t + frac_g * step
            if bounced:
                ts[n] = tb
                ss[n] = sb
                zs[n] = 0.0
                n += 1
                status = END_SECOND_GROUND
                return (n, ts, ss, zs, status, bounced, bounce_t, bounce_s,
                        b_in, b_out, clearance, (tb, sb, 0.0, vhb, vzb, vspin, ls))
            bounced = True
            bounce_t = tb
            bounce_s = sb
            b_in = (vhb, vzb, vspin)
            vspin = spin_retention * vspin + spin_kick * abs(vhb)
            vh = h_retention * vhb
            vz = -restitution * vzb
            b_out = (vh, vz, vspin)
            ls = -1.0  # spin after the bounce is always topspin
            t = tb
            s = sb
            z = 0.0
            ts[n] = tb
            ss[n] = sb
            zs[n] = 0.0
            n += 1
            continue

        s, z, vh, vz = s1, z1, vh1, vz1
        t += step
        ts[n] = t
        ss[n] = s
        zs[n] = z if z > 0.0 else 0.0
        n += 1

    return (n, ts, ss, zs, status, bounced, bounce_t, bounce_s,
            b_in, b_out, clearance, (t, s, z, vh, vz, vspin, ls))


@njit(cache=True, fastmath=True)
def _scan_to_plane(vh, vz, z, vspin, ls, k, cd, g,
                   restitution, h_retention, spin_retention, spin_kick,
                   dt, s_net, net_h, s_plane, s_lo, s_hi, z_target,
                   t_target, t_cap, w_pos, w_time, volley):
    """Cheap RK2 scan of one fit candidate; returns its residual or inf.

    Validity: clears the net, and (unless volley) bounces inside the
    [s_lo, s_hi] window before reaching the stop plane.  The residual is
    evaluated at the plane crossing with linear sub-step interpolation.
    """
    s = 0.0
    t = 0.0
    bounced = False
    cleared = False
    while t < t_cap:
        ps, pz = s, z
        s, z, vh, vz = _rk2(s, z, vh, vz, vspin, ls, k, cd, g, dt)
        t += dt
        if not cleared and ps < s_net <= s:
            frac = (s_net - ps) / (s - ps) if s != ps else 0.0
            if pz + frac * (z - pz) <= net_h:
                return np.inf
            cleared = True
        if (ps < s_plane <= s) or (ps > s_plane >= s):
            if cleared and (bounced or volley):
                frac = (s_plane - ps) / (s - ps) if s != ps else 0.0
                tc = t - dt + frac * dt
                zc = pz + frac * (z - pz)
                return w_pos * abs(zc - z_target) + w_time * abs(tc - t_target)
            return np.inf
        if z <= 0.0 < pz:
            if bounced or volley:
                return np.inf
            frac = pz / (pz - z)
            sb = ps + frac * (s - ps)
            if not cleared or sb < s_lo or sb > s_hi:
                return np.inf
            bounced = True
            # Roll back to the crossing (linear) and bounce there.
            t += (frac - 1.0) * dt
            s = sb
            z = 1e-12
            vspin = spin_retention * vspin + spin_kick * abs(vh)
            vh = h_retention * vh
            vz = -restitution * vz
            ls = -1.0
    return np.inf


@njit(cache=True, parallel=True, fastmath=True)
def scan_fit_grid(vhs, vzs, vspins, lss, z0, k, cd, g,
                  restitution, h_retention, spin_retention, spin_kick,
                  dt, s_net, net_h, s_plane, s_lo, s_hi, z_target,
                  t_target, t_cap, w_pos, w_time, volley):
    n = vhs.size
    residuals = np.empty(n)
    for i in prange(n):
        residuals[i] = _scan_to_plane(
            vhs[i], vzs[i], z0, vspins[i], lss[i], k, cd, g,
            restitution, h_retention, spin_retention, spin_kick,
            dt, s_net, net_h, s_plane, s_lo, s_hi, z_target,
            t_target, t_cap, w_pos, w_time, volley)
    return residuals


@njit(cache=True, fastmath=True)
def _scan_to_bounce(vh, vz, z, vspin, ls, k, cd, g, dt,
                    s_net, net_h, s_target, t_target, t_cap, w_pos, w_time):
    """RK2 scan ending at the first ground contact; residual against a
    target bounce distance and time.  The net check applies only when the
    path actually spans the net (pass s_net <= 0 or inf to disable)."""
    s = 0.0
    t = 0.0
    cleared = s_net <= 0.0 or not np.isfinite(s_net)
    while t < t_cap:
        ps, pz = s, z
        s, z, vh, vz = _rk2(s, z, vh, vz, vspin, ls, k, cd, g, dt)
        t += dt
        if not cleared and ps < s_net <= s:
            frac = (s_net - ps) / (s - ps) if s != ps else 0.0
            if pz + frac * (z - pz) <= net_h:
                return np.inf
            cleared = True
        if z <= 0.0 < pz:
            if not cleared:
                return np.inf
            frac = pz / (pz - z)
            sb = ps + frac * (s - ps)
            tb = t - dt + frac * dt
            return w_pos * abs(sb - s_target) + w_time * abs(tb - t_target)
    return np.inf


@njit(cache=True, parallel=True, fastmath=True)
def scan_bounce_grid(vhs, vzs, z0, vspin, ls, k, cd, g, dt,
                     s_net, net_h, s_target, t_target, t_cap, w_pos, w_time):
    n = vhs.size
    residuals = np.empty(n)
    for i in prange(n):
        residuals[i] = _scan_to_bounce(vhs[i], vzs[i], z0, vspin, ls, k, cd, g, dt,
                                       s_net, net_h, s_target, t_target, t_cap,
                                       w_pos, w_time)
    return residuals
