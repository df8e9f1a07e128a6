"""Compiled inner loops for gain tabulation and both spiking solvers.

Everything here mirrors the pure-python reference implementations
(`neurons.step`, `penalties.threshold`, `engine.estimate_rates`) expression
for expression, so the two routes can be cross-checked tightly in tests.
Keep the formulas in sync when editing either side.

Integer tags (shared with `neurons.MODEL_TAGS` / `Penalty.tag`):
  models    : 0=pif 1=lif 2=gif 3=ml 4=wb
  penalties : 0=l1 1=elastic_net 2=log_barrier 3=exp 4=log 5=atan
  estimators: 0=cumulative 1=window 2=ema
  injection : 0=explicit_threshold 1=implicit_grad
  gain      : 0=pif-analytic 1=lif-analytic 2=table
"""

import math

import numpy as np
from numba import njit

# lockout after an upward v_th crossing for ML/WB (ms); mirrors neurons.py
AP_LOCKOUT = 1.0

# floor used for the log_barrier slope in implicit-injection mode, where the
# current rate estimate can be exactly 0 but C~'(0) is unbounded
BARRIER_RATE_FLOOR = 1e-8


# ----------------------------------------------------------- model packing

def pack_model_params(kind, p):
    """Flatten a *Params dataclass into the vector layout the kernels use."""
    if kind == "pif":
        return np.array([p.c, p.v_th, p.v_reset], dtype=np.float64)
    if kind == "lif":
        return np.array([p.c, p.g_l, p.v_th, p.v_reset, p.t_ref], dtype=np.float64)
    if kind == "gif":
        k = tuple(p.k) + (0.0, 0.0)
        r = tuple(p.r) + (0.0, 0.0)
        amp = tuple(p.amp) + (0.0, 0.0)
        if p.n_currents > 2:
            raise ValueError("compiled GIF path supports at most 2 internal currents")
        return np.array(
            [p.c, p.g_l, p.v_l, p.v_reset, p.theta_inf, p.theta_reset,
             p.a, p.b, float(p.n_currents), k[0], k[1], r[0], r[1], amp[0], amp[1]],
            dtype=np.float64,
        )
    if kind == "ml":
        return np.array(
            [p.c, p.g_ca, p.v_ca, p.g_k, p.v_k, p.g_l, p.v_l,
             p.v1, p.v2, p.v3, p.v4, p.phi, p.v_th],
            dtype=np.float64,
        )
    if kind == "wb":
        return np.array(
            [p.c, p.g_na, p.v_na, p.g_k, p.v_k, p.g_l, p.v_l, p.phi, p.v_th],
            dtype=np.float64,
        )
    raise ValueError(f"unknown neuron kind {kind!r}")


# ---------------------------------------------------------- penalty device

@njit(cache=True)
def _pen_grad(tag, q, lam, a):
    # dC~/da for a >= 0 (log_barrier: a > 0)
    if tag == 0:
        return 1.0
    if tag == 1:
        return q + (1.0 - q) * a
    if tag == 2:
        return 1.0 - 1.0 / (q * lam * a)
    if tag == 3:
        return q * math.exp(-q * a)
    if tag == 4:
        return 1.0 / (a + q)
    return q / (q * q + a * a)  # atan


@njit(cache=True)
def _pen_threshold(tag, q, lam, u):
    # T_lam(u) for nonneg coefficients; mirrors penalties.threshold
    if tag == 0:
        return max(u - lam, 0.0)
    if tag == 1:
        if u <= lam * q:
            return 0.0
        return (u - lam * q) / (lam * (1.0 - q) + 1.0)
    if tag == 2:
        d = u - lam
        return (q * d + math.sqrt(q * q * d * d + 4.0 * q)) / (2.0 * q)
    # implicitly defined kinds: bisect a + lam*C~'(a) = u on [0, u]
    g0 = _pen_grad(tag, q, lam, 0.0)
    if u <= lam * g0:
        return 0.0
    lo = 0.0
    hi = u
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = mid + lam * _pen_grad(tag, q, lam, mid) - u
        if abs(r) <= 1e-12:
            return mid
        if r < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, u):
            break
    return 0.5 * (lo + hi)


# ------------------------------------------------------------- gain device

@njit(cache=True)
def _gain_inverse(mode, g0, g1, g2, g3, r_knots, i_knots, a):
    """Current that makes the neuron fire at rate a; returns (I, saturated)."""
    if a <= 0.0:
        return 0.0, False
    if mode == 0:
        # perfect integrator: rate = I/(c*(v_th - v_reset)); g0, g1 = c, gap
        return a * g0 * g1, False
    if mode == 1:
        # lif analytic inverse; g0..g3 = c, g_l, v_th - v_reset, t_ref
        sat = False
        if g3 > 0.0:
            a_cap = 0.99 / g3
            if a >= a_cap:
                a = a_cap
                sat = True
        return g1 * g2 / (-math.expm1(g1 * (g3 - 1.0 / a) / g0)), sat
    # tabulated inverse on the strictly increasing (rate -> current) knots
    n = r_knots.shape[0]
    if a > r_knots[n - 1]:
        return i_knots[n - 1], True
    return np.interp(a, r_knots, i_knots), False


# ----------------------------------------------------------- neuron device

@njit(cache=True)
def _wb_rates(v):
    x = -0.1 * (v + 35.0)
    if x == 0.0:
        am = 1.0
    else:
        am = x / math.expm1(x)
    bm = 4.0 * math.exp(-(v + 60.0) / 18.0)
    ah = 0.07 * math.exp(-(v + 58.0) / 20.0)
    bh = 1.0 / (math.exp(-0.1 * (v + 28.0)) + 1.0)
    x = -0.1 * (v + 34.0)
    if x == 0.0:
        an = 0.1
    else:
        an = 0.1 * x / math.expm1(x)
    bn = 0.125 * math.exp(-(v + 44.0) / 80.0)
    return am, bm, ah, bh, an, bn


@njit(cache=True)
def _ml_deriv(mp, v, w, i_in):
    # mp: c g_ca v_ca g_k v_k g_l v_l v1 v2 v3 v4 phi v_th
    minf = 0.5 * (1.0 + math.tanh((v - mp[7]) / mp[8]))
    winf = 0.5 * (1.0 + math.tanh((v - mp[9]) / mp[10]))
    dv = (
        -mp[1] * minf * (v - mp[2])
        - mp[3] * w * (v - mp[4])
        - mp[5] * (v - mp[6])
        + i_in
    ) / mp[0]
    dw = mp[11] * math.cosh((v - mp[9]) / (2.0 * mp[10])) * (winf - w)
    return dv, dw


@njit(cache=True)
def _wb_deriv(mp, v, h, n, i_in):
    # mp: c g_na v_na g_k v_k g_l v_l phi v_th
    am, bm, ah, bh, an, bn = _wb_rates(v)
    m = am / (am + bm)
    i_na = mp[1] * m * m * m * h * (v - mp[2])
    i_k = mp[3] * n**4 * (v - mp[4])
    i_l = mp[5] * (v - mp[6])
    dv = (-(i_na + i_k + i_l) + i_in) / mp[0]
    dh = mp[7] * (ah * (1.0 - h) - bh * h)
    dn = mp[7] * (an * (1.0 - n) - bn * n)
    return dv, dh, dn


@njit(cache=True)
def _init_state(tag, mp):
    """Rest state (v, theta, c0, c1, w, h, n); mirrors neurons.make_model."""
    if tag == 0:
        return mp[2], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    if tag == 1:
        return mp[3], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    if tag == 2:
        return mp[3], mp[4], 0.0, 0.0, 0.0, 0.0, 0.0
    if tag == 3:
        w = 0.5 * (1.0 + math.tanh((mp[6] - mp[9]) / mp[10]))
        return mp[6], 0.0, 0.0, 0.0, w, 0.0, 0.0
    v = mp[6]
    am, bm, ah, bh, an, bn = _wb_rates(v)
    return v, 0.0, 0.0, 0.0, 0.0, ah / (ah + bh), an / (an + bn)


@njit(cache=True)
def _neuron_step(tag, mp, v, th, c0, c1, w, h, n, lock, t0s, dt, i_in):
    """One step of any model; returns the full updated slot tuple + spiked.

    t0s is the time at the start of the step; the spike timestamp is t0s+dt.
    """
    t1 = t0s + dt
    spiked = False
    if tag == 0:
        # perfect integrator: mp = c, v_th, v_reset.  The trajectory is
        # linear, so the threshold crossing inside the step is exact and the
        # post-reset remainder keeps integrating; otherwise the realized
        # inter-spike interval would round up to whole steps and bias the
        # rate by O(rate^2 * dt).
        v1 = v + (i_in / mp[0]) * dt
        if v1 >= mp[1]:
            s = (mp[1] - v) * mp[0] / i_in
            v = mp[2] + (i_in / mp[0]) * (dt - s)
            spiked = True
        else:
            v = v1
    elif tag == 1:
        # lif: mp = c, g_l, v_th, v_reset, t_ref.  Same exact-crossing
        # treatment on the closed-form exponential trajectory, with the
        # refractory lockout honored to sub-step resolution.
        tau = mp[0] / mp[1]
        v_inf = mp[3] + i_in / mp[1]
        start = t0s
        if lock > start:
            v = mp[3]
            start = lock
        if start >= t1:
            pass  # clamped for the whole step
        else:
            span = t1 - start
            crossed = False
            if v_inf > mp[2] and v < mp[2]:
                s = tau * math.log((v_inf - v) / (v_inf - mp[2]))
                if s <= span:
                    lock = start + s + mp[4]
                    spiked = True
                    crossed = True
                    if lock < t1:
                        v = v_inf + (mp[3] - v_inf) * math.exp(-(t1 - lock) / tau)
                    else:
                        v = mp[3]
            if not crossed:
                v = v_inf + (v - v_inf) * math.exp(-span / tau)
    elif tag == 2:
        # gif: mp = c,g_l,v_l,v_reset,th_inf,th_reset,a,b,n,k1,k2,r1,r2,A1,A2
        ncur = int(mp[8])
        total = i_in
        if ncur >= 1:
            total = total + c0
        if ncur >= 2:
            total = total + c1
        v1 = v + dt * (-mp[1] * (v - mp[2]) + total) / mp[0]
        th1 = th + dt * (mp[6] * (v - mp[2]) - mp[7] * (th - mp[4]))
        if ncur >= 1:
            c0 = c0 - dt * mp[9] * c0
        if ncur >= 2:
            c1 = c1 - dt * mp[10] * c1
        if v1 > th1:
            if ncur >= 1:
                c0 = mp[11] * c0 + mp[13]
            if ncur >= 2:
                c1 = mp[12] * c1 + mp[14]
            v = mp[3]
            th = max(mp[5], th1)
            spiked = True
        else:
            v = v1
            th = th1
    elif tag == 3:
        # ml RK4; spike = upward v_th crossing outside the lockout
        k1v, k1w = _ml_deriv(mp, v, w, i_in)
        k2v, k2w = _ml_deriv(mp, v + 0.5 * dt * k1v, w + 0.5 * dt * k1w, i_in)
        k3v, k3w = _ml_deriv(mp, v + 0.5 * dt * k2v, w + 0.5 * dt * k2w, i_in)
        k4v, k4w = _ml_deriv(mp, v + dt * k3v, w + dt * k3w, i_in)
        v1 = v + dt * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
        w1 = w + dt * (k1w + 2.0 * k2w + 2.0 * k3w + k4w) / 6.0
        if v < mp[12] and mp[12] <= v1 and t1 >= lock:
            lock = t1 + AP_LOCKOUT
            spiked = True
        v = v1
        w = w1
    else:
        # wb RK4
        k1v, k1h, k1n = _wb_deriv(mp, v, h, n, i_in)
        k2v, k2h, k2n = _wb_deriv(
            mp, v + 0.5 * dt * k1v, h + 0.5 * dt * k1h, n + 0.5 * dt * k1n, i_in)
        k3v, k3h, k3n = _wb_deriv(
            mp, v + 0.5 * dt * k2v, h + 0.5 * dt * k2h, n + 0.5 * dt * k2n, i_in)
        k4v, k4h, k4n = _wb_deriv(
            mp, v + dt * k3v, h + dt * k3h, n + dt * k3n, i_in)
        v1 = v + dt * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
        h1 = h + dt * (k1h + 2.0 * k2h + 2.0 * k3h + k4h) / 6.0
        n1 = n + dt * (k1n + 2.0 * k2n + 2.0 * k3n + k4n) / 6.0
        if v < mp[8] and mp[8] <= v1 and t1 >= lock:
            lock = t1 + AP_LOCKOUT
            spiked = True
        v = v1
        h = h1
        n = n1
    return v, th, c0, c1, w, h, n, lock, spiked


# ------------------------------------------------------------- tabulation

@njit(cache=True)
def tabulate_counts(tag, mp, grid, dt, t_sim, t_discard):
    """Spike counts in (t_discard, t_sim] per constant grid current.

    Returns (counts, err_idx); err_idx >= 0 flags a diverged grid point.
    """
    n_grid = grid.shape[0]
    counts = np.zeros(n_grid, dtype=np.int64)
    n_steps = int(round(t_sim / dt))
    for j in range(n_grid):
        i_in = grid[j]
        v, th, c0, c1, w, h, n = _init_state(tag, mp)
        lock = -math.inf
        t = 0.0
        for _ in range(n_steps):
            v, th, c0, c1, w, h, n, lock, spiked = _neuron_step(
                tag, mp, v, th, c0, c1, w, h, n, lock, t, dt, i_in)
            t = t + dt
            if not math.isfinite(v):
                return counts, j
            if spiked and t > t_discard:
                counts[j] += 1
    return counts, -1


# ------------------------------------------------------- rate estimation

@njit(cache=True)
def _rates_into(out, est_tag, t, t0, est_p, kappa,
                counts, ring_t, ring_head, ring_tail, ema_s):
    """Decoded coefficient estimates (spike rates / kappa) at time t."""
    n = out.shape[0]
    cap = ring_t.shape[1]
    for i in range(n):
        if est_tag == 0:
            span = t - t0
            out[i] = counts[i] / (span * kappa) if span > 0.0 else 0.0
        elif est_tag == 1:
            cutoff = t - est_p
            while ring_head[i] > ring_tail[i] and \
                    ring_t[i, ring_tail[i] % cap] <= cutoff:
                ring_tail[i] += 1
            span = t if t < est_p else est_p
            if span > 0.0:
                out[i] = (ring_head[i] - ring_tail[i]) / (span * kappa)
            else:
                out[i] = 0.0
        else:
            if t > 0.0:
                norm = est_p * (1.0 - math.exp(-t / est_p)) * kappa
                out[i] = ema_s[i] / norm
            else:
                out[i] = 0.0


# ------------------------------------------------------- coupling matvec

@njit(cache=True)
def _sym_matvec(W, a, idx_buf, out):
    """out = W @ a for symmetric W, skipping inactive coordinates.

    Accumulates rows of W (contiguous) for the active columns; falls back to
    a BLAS product once more than a quarter of the coordinates are active.
    """
    n = W.shape[0]
    na = 0
    for j in range(n):
        if a[j] != 0.0:
            idx_buf[na] = j
            na += 1
    if 4 * na > n:
        out[:] = np.dot(W, a)
        return
    for i in range(n):
        out[i] = 0.0
    for kk in range(na):
        j = idx_buf[kk]
        aj = a[j]
        for i in range(n):
            out[i] += W[j, i] * aj


# ------------------------------------------------------------ engine chunk

@njit(cache=True)
def engine_chunk(n_steps, dt, t_io, u, b, W, lam,
                 pen_tag, pen_q, est_tag, est_t0, est_p, kappa,
                 anchor_on, inj_tag,
                 gain_mode, gp, r_knots, i_knots,
                 model_tag, mp,
                 v, th, cur, wg, hg, ng, lock,
                 counts, ring_t, ring_head, ring_tail, ema_s,
                 spike_i, spike_t, warn_io, umax_io,
                 a_hat_out, astar_out, idx_buf, wa_buf):
    """Advance the rate-coupled spiking network n_steps; returns (nsp, status).

    status 0 = ok, 1 = non-finite u (divergence).  Spikes are appended to
    spike_i/spike_t (capacity must be >= N*n_steps).  warn_io accumulates
    [gain saturation clamps, window ring overflows].
    """
    n = u.shape[0]
    t = t_io[0]
    nsp = 0
    cap = ring_t.shape[1]
    decay = math.exp(-dt / est_p) if est_tag == 2 else 0.0
    for _ in range(n_steps):
        # (1) decode rates from the spike history at time t
        _rates_into(a_hat_out, est_tag, t, est_t0, est_p, kappa,
                    counts, ring_t, ring_head, ring_tail, ema_s)
        # (2) explicit Euler on the average-current dynamics
        _sym_matvec(W, a_hat_out, idx_buf, wa_buf)
        for i in range(n):
            du = b[i] - u[i] - wa_buf[i]
            if anchor_on == 1 and t > 0.0:
                du -= (u[i] - b[i]) / t
            ui = u[i] + dt * du
            if not math.isfinite(ui):
                t_io[0] = t
                return nsp, 1
            u[i] = ui
            au = abs(ui)
            if au > umax_io[0]:
                umax_io[0] = au
        # (3) target activation
        for i in range(n):
            if inj_tag == 0:
                a_star = _pen_threshold(pen_tag, pen_q, lam, u[i])
            else:
                ah = a_hat_out[i]
                if pen_tag == 2 and ah < BARRIER_RATE_FLOOR:
                    ah = BARRIER_RATE_FLOOR
                a_star = u[i] - lam * _pen_grad(pen_tag, pen_q, lam, ah)
                if a_star < 0.0:
                    a_star = 0.0
            astar_out[i] = a_star
        # (4)+(5) inject currents and advance the population
        t1 = t + dt
        for i in range(n):
            i_in, sat = _gain_inverse(
                gain_mode, gp[0], gp[1], gp[2], gp[3], r_knots, i_knots,
                kappa * astar_out[i])
            if sat:
                warn_io[0] += 1
            v[i], th[i], cur[i, 0], cur[i, 1], wg[i], hg[i], ng[i], lock[i], spiked = \
                _neuron_step(model_tag, mp, v[i], th[i], cur[i, 0], cur[i, 1],
                             wg[i], hg[i], ng[i], lock[i], t, dt, i_in)
            if est_tag == 2:
                ema_s[i] *= decay
            if spiked:
                spike_i[nsp] = i
                spike_t[nsp] = t1
                nsp += 1
                if t1 > est_t0:
                    counts[i] += 1
                if est_tag == 1:
                    if ring_head[i] - ring_tail[i] == cap:
                        ring_tail[i] += 1
                        warn_io[1] += 1
                    ring_t[i, ring_head[i] % cap] = t1
                    ring_head[i] += 1
                elif est_tag == 2:
                    ema_s[i] += 1.0
        t = t1
    # final decode at the chunk boundary, plus T_lam(u) for diagnostics
    _rates_into(a_hat_out, est_tag, t, est_t0, est_p, kappa,
                counts, ring_t, ring_head, ring_tail, ema_s)
    for i in range(n):
        astar_out[i] = _pen_threshold(pen_tag, pen_q, lam, u[i])
    t_io[0] = t
    return nsp, 0


# --------------------------------------------------------- classic (event)

@njit(cache=True)
def _classic_f(v, mu, b, lam, vth, d):
    # membrane position after coasting d: v + int_0^d (mu(s) - lam) ds - vth
    return v + (b - lam) * d + (mu - b) * (1.0 - math.exp(-d)) - vth


@njit(cache=True)
def _next_spike_dt(v, mu, b, lam, vth):
    """Time until the perfect integrator crosses vth, or inf, given that mu
    coasts exponentially toward b."""
    if _classic_f(v, mu, b, lam, vth, 0.0) >= 0.0:
        return 0.0
    if b > lam:
        # drift is eventually upward: a root always exists
        hi = 1.0
        it = 0
        while _classic_f(v, mu, b, lam, vth, hi) <= 0.0:
            hi *= 2.0
            it += 1
            if it > 120:
                return math.inf
    else:
        # only the decaying transient can push v up
        if mu <= lam:
            return math.inf
        if lam > b:
            dstar = math.log((mu - b) / (lam - b))
        else:
            dstar = 745.0  # b == lam: f plateaus at v + (mu - b) - vth
        if dstar <= 0.0 or _classic_f(v, mu, b, lam, vth, dstar) <= 0.0:
            return math.inf
        hi = dstar
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _classic_f(v, mu, b, lam, vth, mid) <= 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * (1.0 + hi):
            break
    return hi


@njit(cache=True)
def classic_chunk(t_target, t_io, v, mu, b, W, lam, vth,
                  counts, spike_i, spike_t, mumax_io):
    """Event-driven classic network from t_io[0] to t_target.

    Returns (nsp, status); status 2 means the spike buffer filled and the
    caller must grow it and call again (state is consistent at t_io[0]).
    """
    n = v.shape[0]
    cap = spike_i.shape[0]
    t = t_io[0]
    nsp = 0
    while t < t_target:
        dmin = math.inf
        k = -1
        for i in range(n):
            d = _next_spike_dt(v[i], mu[i], b[i], lam, vth)
            if d < dmin:
                dmin = d
                k = i
        is_spike = k >= 0 and t + dmin < t_target
        if is_spike and nsp >= cap:
            # caller must grow the buffer; state is untouched since the
            # last processed event
            t_io[0] = t
            return nsp, 2
        adv = dmin if is_spike else t_target - t
        # coast every neuron forward by adv
        e = math.exp(-adv)
        for i in range(n):
            v[i] = v[i] + (b[i] - lam) * adv + (mu[i] - b[i]) * (1.0 - e)
            mu[i] = b[i] + (mu[i] - b[i]) * e
        if not is_spike:
            t = t_target
            break
        t = t + dmin
        v[k] = 0.0
        counts[k] += 1
        spike_i[nsp] = k
        spike_t[nsp] = t
        nsp += 1
        for i in range(n):
            mu[i] -= W[k, i]
            am = abs(mu[i])
            if am > mumax_io[0]:
                mumax_io[0] = am
    t_io[0] = t
    return nsp, 0
