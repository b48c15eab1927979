"""Compiled inner loops for the event-driven forward/backward passes.

Everything in here is numba-compiled and operates on plain float64/int64
arrays.  Callers (layers, objectives, training) prepare sorted spike orders
with numpy's stable argsort and pass views in.

Weights are laid out input-major: ``Wt[j, i]`` is the weight from input j to
neuron i, so the inner loops run contiguously over the output neurons of one
layer.  The per-sample sweep ``_sweep_vec`` is shared by the dense and the
convolution kernels (and, with a single output column, by the scalar
solver), so every path produces bitwise-identical firing times for
identical weight/input sequences.

Neuron variants are encoded as integers: 0 = non-leaky, 1 = current-synapse,
2 = alpha-synapse.
"""

import math

import numpy as np
from numba import njit

INF = math.inf

NON_LEAKY = 0
CURRENT_SYNAPSE = 1
ALPHA_SYNAPSE = 2


# ---------------------------------------------------------------------------
# event-driven forward sweep
# ---------------------------------------------------------------------------

@njit(cache=True)
def _sweep_vec(variant, Wt, od, ts, n, vth, tau, horizon,
               fired, tout, cnt, sumw, aux1, aux2, S, A1, A2):
    """Sweep one sample's sorted arrivals across all neurons of a layer.

    ts[:n] are the present arrival times sorted ascending (<= horizon) and
    od the matching original input indices.  Equal-time arrivals form one
    group and are inserted atomically; after each group the first upward
    threshold crossing inside [group time, next arrival] is accepted.  A
    crossing exactly at the next arrival extends the causal set with that
    group.  Candidates beyond the horizon are rejected.

    Outputs are 1-D views over the layer's neurons.  For unfired neurons
    cnt/sums cover every present input.  S/A1/A2 are scratch of size n_out.
    """
    n_out = Wt.shape[1]
    for i in range(n_out):
        S[i] = 0.0
        A1[i] = 0.0
        A2[i] = 0.0
        fired[i] = False
        tout[i] = INF
    n_fired = 0
    k = 0
    while k < n:
        tg = ts[k]
        g_end = k
        while g_end + 1 < n and ts[g_end + 1] == tg:
            g_end += 1
        if variant == NON_LEAKY:
            for m in range(k, g_end + 1):
                row = od[m]
                for i in range(n_out):
                    w = Wt[row, i]
                    S[i] += w
                    A1[i] += w * tg
        elif variant == CURRENT_SYNAPSE:
            eg = math.exp(tg / tau)
            for m in range(k, g_end + 1):
                row = od[m]
                for i in range(n_out):
                    w = Wt[row, i]
                    S[i] += w
                    A1[i] += w * eg
        else:
            eg = math.exp(tg / tau)
            eh = math.exp(tg / (2.0 * tau))
            for m in range(k, g_end + 1):
                row = od[m]
                for i in range(n_out):
                    w = Wt[row, i]
                    S[i] += w
                    A1[i] += w * eg
                    A2[i] += w * eh
        t_next = ts[g_end + 1] if g_end + 1 < n else INF
        w_end = t_next if t_next < horizon else horizon
        if variant == NON_LEAKY:
            for i in range(n_out):
                if fired[i]:
                    continue
                s = S[i]
                # crossing inside the window iff v(w_end) reaches threshold
                if s > 0.0 and s * w_end - A1[i] >= vth:
                    cand = (vth + A1[i]) / s
                    if cand < tg:
                        cand = tg
                    elif cand > w_end:
                        cand = w_end
                    c = g_end + 1
                    x1 = A1[i]
                    if cand == t_next:
                        k2 = g_end + 1
                        while k2 < n and ts[k2] == t_next:
                            w = Wt[od[k2], i]
                            s += w
                            x1 += w * t_next
                            k2 += 1
                        c = k2
                    fired[i] = True
                    tout[i] = cand
                    cnt[i] = c
                    sumw[i] = s
                    aux1[i] = x1
                    aux2[i] = 0.0
                    n_fired += 1
        elif variant == CURRENT_SYNAPSE:
            ew = math.exp(-w_end / tau)
            for i in range(n_out):
                if fired[i]:
                    continue
                d = S[i] - vth / tau
                if d <= 0.0:
                    continue
                a = A1[i]
                if a > 0.0:
                    if a * ew > d:
                        continue
                    cand = tau * math.log(a / d)
                    if cand < tg:
                        cand = tg
                    elif cand > w_end:
                        cand = w_end
                else:
                    # potential already above threshold on the whole segment
                    cand = tg
                s = S[i]
                c = g_end + 1
                x1 = a
                if cand == t_next:
                    eg2 = math.exp(t_next / tau)
                    k2 = g_end + 1
                    while k2 < n and ts[k2] == t_next:
                        w = Wt[od[k2], i]
                        s += w
                        x1 += w * eg2
                        k2 += 1
                    c = k2
                fired[i] = True
                tout[i] = cand
                cnt[i] = c
                sumw[i] = s
                aux1[i] = x1
                aux2[i] = 0.0
                n_fired += 1
        else:
            uw = math.exp(-w_end / (2.0 * tau))
            ug = math.exp(-tg / (2.0 * tau))
            ug2 = ug * ug
            for i in range(n_out):
                if fired[i]:
                    continue
                a = A1[i]
                bb = A2[i]
                # v(t) = 2*tau*(u*b - u^2*a) with u = exp(-t/(2 tau)), which
                # decreases over the window.  An upward crossing needs a > 0
                # (the u^2 coefficient bends v back down, so v rises toward
                # the +sqrt root from above it in u); for a <= 0, v only
                # falls once past its peak, so no first crossing can start
                # inside the window.
                vg = 2.0 * tau * (ug * bb - ug2 * a)
                if vg >= vth:
                    # threshold already met as the group arrives (boundary
                    # tie of the previous window, up to rounding)
                    cand = tg
                elif a > 0.0:
                    disc = bb * bb - 2.0 * a * vth / tau
                    if disc < 0.0:
                        continue
                    u = (bb + math.sqrt(disc)) / (2.0 * a)
                    # root must lie inside [tg, w_end]: u is time-reversed,
                    # and a root behind the window start (u > ug) while
                    # v(tg) < vth means the membrane moves away from the
                    # threshold band, not into it
                    if u <= 0.0 or u < uw or u > ug:
                        continue
                    cand = -2.0 * tau * math.log(u)
                else:
                    continue
                if cand < tg:
                    cand = tg
                elif cand > w_end:
                    cand = w_end
                s = S[i]
                c = g_end + 1
                x1 = a
                x2 = bb
                if cand == t_next:
                    eg2 = math.exp(t_next / tau)
                    eh2 = math.exp(t_next / (2.0 * tau))
                    k2 = g_end + 1
                    while k2 < n and ts[k2] == t_next:
                        w = Wt[od[k2], i]
                        s += w
                        x1 += w * eg2
                        x2 += w * eh2
                        k2 += 1
                    c = k2
                fired[i] = True
                tout[i] = cand
                cnt[i] = c
                sumw[i] = s
                aux1[i] = x1
                aux2[i] = x2
                n_fired += 1
        if n_fired == n_out:
            return
        k = g_end + 1
    for i in range(n_out):
        if not fired[i]:
            cnt[i] = n
            sumw[i] = S[i]
            aux1[i] = A1[i]
            aux2[i] = A2[i]


@njit(cache=True)
def dense_forward(variant, Wt, ts, order, npres, vth, tau, horizon,
                  fired, tout, cnt, sumw, aux1, aux2):
    """Batched forward pass of a fully connected spiking layer.

    Wt: (n_in, n_out) input-major weights.  ts/order: (B, n_in) sorted times
    and matching original indices; npres: (B,) present-input counts.
    Outputs are written into the preallocated (B, n_out) arrays.
    """
    n_batch = ts.shape[0]
    n_out = Wt.shape[1]
    S = np.empty(n_out, np.float64)
    A1 = np.empty(n_out, np.float64)
    A2 = np.empty(n_out, np.float64)
    for b in range(n_batch):
        _sweep_vec(variant, Wt, order[b], ts[b], npres[b], vth, tau, horizon,
                   fired[b], tout[b], cnt[b], sumw[b], aux1[b], aux2[b],
                   S, A1, A2)


@njit(cache=True)
def conv_forward(variant, Wft, ts, order, npres, vth, tau, horizon,
                 fired, tout, cnt, sumw, aux1, aux2):
    """Batched forward pass of a convolution layer over gathered patches.

    Wft: (patch_len, out_channels) flattened kernels, input-major.
    ts/order: (B, n_pos, patch_len); npres: (B, n_pos).
    Outputs: (B, n_pos, out_channels).
    """
    n_batch = ts.shape[0]
    n_pos = ts.shape[1]
    n_oc = Wft.shape[1]
    S = np.empty(n_oc, np.float64)
    A1 = np.empty(n_oc, np.float64)
    A2 = np.empty(n_oc, np.float64)
    for b in range(n_batch):
        for p in range(n_pos):
            _sweep_vec(variant, Wft, order[b, p], ts[b, p], npres[b, p],
                       vth, tau, horizon, fired[b, p], tout[b, p],
                       cnt[b, p], sumw[b, p], aux1[b, p], aux2[b, p],
                       S, A1, A2)


# ---------------------------------------------------------------------------
# backward (timing chain rule)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _nl_backward_sample(Wt, od, ts, n, tgt, inv, dWt, dtrow):
    """Non-leaky backward for one sample, vectorized over neurons.

    tgt[i] is the firing time of neuron i if it has nonzero upstream and a
    positive crossing slope, else -1 (masks every arrival).  inv[i] is
    upstream / slope.  kappa(d) = d, kappa'(d) = 1.
    """
    n_out = Wt.shape[1]
    t_max = -1.0
    for i in range(n_out):
        if tgt[i] > t_max:
            t_max = tgt[i]
    for m in range(n):
        tsm = ts[m]
        if tsm > t_max:
            break
        row = od[m]
        acc = 0.0
        for i in range(n_out):
            if tsm <= tgt[i]:
                iv = inv[i]
                dWt[row, i] += iv * (tsm - tgt[i])
                acc += iv * Wt[row, i]
        dtrow[row] += acc


@njit(cache=True)
def _leaky_backward_sample(variant, Wt, od, ts, tgt, inv, n_out, tau,
                           dWt, dtrow):
    """Leaky-variant backward for one sample (neuron-major loops)."""
    n = ts.shape[0]
    for i in range(n_out):
        t_i = tgt[i]
        if t_i < 0.0:
            continue
        iv = inv[i]
        for m in range(n):
            tsm = ts[m]
            if tsm > t_i:
                break
            delta = t_i - tsm
            row = od[m]
            if variant == CURRENT_SYNAPSE:
                e = math.exp(-delta / tau)
                kappa = tau * (1.0 - e)
                kprime = e
            else:
                eh = math.exp(-delta / (2.0 * tau))
                e = eh * eh
                kappa = 2.0 * tau * (eh - e)
                kprime = 2.0 * e - eh
            dWt[row, i] += iv * (-kappa)
            dtrow[row] += iv * Wt[row, i] * kprime


@njit(cache=True, inline="always")
def _crossing_slope(variant, t_i, s_w, a1, a2, vth, tau):
    """dv/dt at the firing time, from the cached causal sums."""
    if variant == NON_LEAKY:
        return s_w
    elif variant == CURRENT_SYNAPSE:
        return s_w - vth / tau
    else:
        u = math.exp(-t_i / (2.0 * tau))
        sqrt_disc = 2.0 * a1 * u - a2
        return u * sqrt_disc


@njit(cache=True)
def dense_backward(variant, Wt, ts, order, npres, fired, tout, sumw, aux1,
                   aux2, upstream, vth, tau, dWt, dTin):
    """Backward pass of a dense layer: scatter dC/dt_out into weight and
    presynaptic-time gradients.

    dWt is (n_in, n_out) accumulated over the batch; dTin is (B, n_in).
    Arrivals at or before a neuron's firing time are its causal set.  A
    vanishing crossing slope (threshold tangency) contributes nothing.
    """
    n_batch = ts.shape[0]
    n_out = Wt.shape[1]
    tgt = np.empty(n_out, np.float64)
    inv = np.empty(n_out, np.float64)
    for b in range(n_batch):
        any_up = False
        for i in range(n_out):
            tgt[i] = -1.0
            inv[i] = 0.0
            if fired[b, i] and upstream[b, i] != 0.0:
                vd = _crossing_slope(variant, tout[b, i], sumw[b, i],
                                     aux1[b, i], aux2[b, i], vth, tau)
                if vd > 0.0:
                    tgt[i] = tout[b, i]
                    inv[i] = upstream[b, i] / vd
                    any_up = True
        if not any_up:
            continue
        if variant == NON_LEAKY:
            _nl_backward_sample(Wt, order[b], ts[b], npres[b], tgt, inv,
                                dWt, dTin[b])
        else:
            _leaky_backward_sample(variant, Wt, order[b], ts[b], tgt, inv,
                                   n_out, tau, dWt, dTin[b])


@njit(cache=True)
def conv_backward(variant, Wft, ts, order, npres, patch_map, fired, tout,
                  sumw, aux1, aux2, upstream, vth, tau, dWft, dTflat, dtp):
    """Backward pass of a convolution layer.

    patch_map: (n_pos, patch_len) flat input index per patch slot (-1 marks
    zero padding; padded slots are absent so they are never causal).
    dTflat: (B, n_in_flat).  dtp: scratch (patch_len,).
    """
    n_batch = ts.shape[0]
    n_pos = ts.shape[1]
    plen = ts.shape[2]
    n_oc = Wft.shape[1]
    tgt = np.empty(n_oc, np.float64)
    inv = np.empty(n_oc, np.float64)
    for b in range(n_batch):
        for p in range(n_pos):
            any_up = False
            for i in range(n_oc):
                tgt[i] = -1.0
                inv[i] = 0.0
                if fired[b, p, i] and upstream[b, p, i] != 0.0:
                    vd = _crossing_slope(variant, tout[b, p, i],
                                         sumw[b, p, i], aux1[b, p, i],
                                         aux2[b, p, i], vth, tau)
                    if vd > 0.0:
                        tgt[i] = tout[b, p, i]
                        inv[i] = upstream[b, p, i] / vd
                        any_up = True
            if not any_up:
                continue
            for q in range(plen):
                dtp[q] = 0.0
            if variant == NON_LEAKY:
                _nl_backward_sample(Wft, order[b, p], ts[b, p], npres[b, p],
                                    tgt, inv, dWft, dtp)
            else:
                _leaky_backward_sample(variant, Wft, order[b, p], ts[b, p],
                                       tgt, inv, n_oc, tau, dWft, dtp)
            for q in range(plen):
                g = dtp[q]
                if g != 0.0:
                    dTflat[b, patch_map[p, q]] += g


# ---------------------------------------------------------------------------
# direct weight-sum regularizer accumulators
# ---------------------------------------------------------------------------

@njit(cache=True)
def fssr_accumulate(Wt, ts, order, npres, fired, tout, window_t, coef, dWt):
    """Weight-sum regularizer on fired neurons: dQ/dw_j = 1 over the causal
    set of every neuron firing strictly before window_t.  Returns the summed
    causal weight sums (the raw Q value) over the batch."""
    n_batch = ts.shape[0]
    n_out = Wt.shape[1]
    tgt = np.empty(n_out, np.float64)
    total = 0.0
    for b in range(n_batch):
        t_max = -1.0
        for i in range(n_out):
            if fired[b, i] and tout[b, i] < window_t:
                tgt[i] = tout[b, i]
                if tgt[i] > t_max:
                    t_max = tgt[i]
            else:
                tgt[i] = -1.0
        if t_max < 0.0:
            continue
        n = npres[b]
        for m in range(n):
            tsm = ts[b, m]
            if tsm > t_max:
                break
            row = order[b, m]
            for i in range(n_out):
                if tsm <= tgt[i]:
                    total += Wt[row, i]
                    dWt[row, i] += coef
    return total


@njit(cache=True)
def promotion_accumulate(Wt, fired, coef, dWt):
    """Firing promotion: the full weight-row sum of every unfired neuron
    enters the cost, so each of its weights receives a unit gradient.
    Returns the summed row sums of unfired neurons over the batch."""
    n_batch = fired.shape[0]
    n_in = Wt.shape[0]
    n_out = Wt.shape[1]
    total = 0.0
    for b in range(n_batch):
        n_unfired = 0
        for i in range(n_out):
            if not fired[b, i]:
                n_unfired += 1
        if n_unfired == 0:
            continue
        for j in range(n_in):
            for i in range(n_out):
                if not fired[b, i]:
                    total += Wt[j, i]
                    dWt[j, i] += coef
    return total


# ---------------------------------------------------------------------------
# forward-Euler reference simulator
# ---------------------------------------------------------------------------

@njit(cache=True)
def ode_simulate(inv_tau_v, inv_tau_i, w_sorted, t_sorted, n_in, vth,
                 dt, n_steps, values, record):
    """Forward-Euler integration of dv/dt = -v/tau_v + I,
    dI/dt = -I/tau_I + sum_j w_j delta(t - t_j).

    Dirac inputs are realized as instantaneous increments of I at the first
    grid point at or after the arrival.  Returns (crossed, t_cross) with the
    first upward threshold crossing located by linear interpolation between
    steps.  When ``record`` is true, v is written to ``values`` (length
    n_steps + 1) and integration continues to the horizon; otherwise it
    stops at the crossing.
    """
    v = 0.0
    v_prev = 0.0
    cur = 0.0
    nxt = 0
    crossed = False
    t_cross = INF
    for s in range(n_steps + 1):
        t = s * dt
        while nxt < n_in and t_sorted[nxt] <= t:
            cur += w_sorted[nxt]
            nxt += 1
        if record:
            values[s] = v
        if not crossed and v >= vth:
            if s == 0:
                t_cross = 0.0
            elif v > v_prev:
                t_cross = (s - 1) * dt + dt * (vth - v_prev) / (v - v_prev)
            else:
                t_cross = t
            crossed = True
            if not record:
                return True, t_cross
        v_prev = v
        v = v + dt * (-v * inv_tau_v + cur)
        cur = cur + dt * (-cur * inv_tau_i)
    return crossed, t_cross


# ---------------------------------------------------------------------------
# discretized integral membrane loss (closed-form partial sums)
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _v_at(variant, t, s_w, a1, a2, tau):
    if variant == NON_LEAKY:
        return s_w * t - a1
    elif variant == CURRENT_SYNAPSE:
        return tau * (s_w - a1 * math.exp(-t / tau))
    else:
        eh = math.exp(-t / (2.0 * tau))
        return 2.0 * tau * (a2 * eh - a1 * eh * eh)


@njit(cache=True, inline="always")
def _geo_sum(k0, k1, dt, tau):
    """sum_{k=k0..k1} exp(-k dt / tau), stable for tiny dt."""
    n = k1 - k0 + 1
    r1 = math.expm1(-dt / tau)
    rn = math.expm1(-n * dt / tau)
    return math.exp(-k0 * dt / tau) * (rn / r1)


@njit(cache=True)
def _integral_neuron(variant, Wt, col, od, ts, n, t_end, vhat, vth, tau,
                     dt, pf, dWt, dtrow, seg_n, seg_t, seg_e1, seg_eh,
                     seg_gs):
    """Discretized supra-v_hat membrane area of one neuron, with gradients.

    The Riemann sum over grid points k*dt in [0, t_end] is evaluated in
    closed form per inter-arrival segment (arithmetic/geometric series), so
    the cost is O(#arrivals) regardless of the grid resolution.  Gradients
    scaled by ``pf`` accumulate into dWt[:, col] / dtrow; the sampling grid,
    the supra-v_hat indicator, and the integration range are held fixed.

    Returns dt/(vth - vhat) * sum_k (v(k dt) - vhat) over grid points with
    v strictly above vhat.
    """
    value = 0.0
    s_w = 0.0
    a1 = 0.0
    a2 = 0.0
    nseg = 0
    k = 0
    while k < n and ts[k] < t_end:
        tg = ts[k]
        g_end = k
        while g_end + 1 < n and ts[g_end + 1] == tg:
            g_end += 1
        for m in range(k, g_end + 1):
            w = Wt[od[m], col]
            s_w += w
            if variant == NON_LEAKY:
                a1 += w * tg
            elif variant == CURRENT_SYNAPSE:
                a1 += w * math.exp(tg / tau)
            else:
                a1 += w * math.exp(tg / tau)
                a2 += w * math.exp(tg / (2.0 * tau))
        has_next = g_end + 1 < n and ts[g_end + 1] < t_end
        seg_lo = tg
        seg_hi = ts[g_end + 1] if has_next else t_end
        # grid indices covered by this segment: [k0, k1]
        k0 = int(math.ceil(seg_lo / dt))
        if (k0 - 1) * dt >= seg_lo:
            k0 -= 1
        elif k0 * dt < seg_lo:
            k0 += 1
        if has_next:
            k1 = int(math.ceil(seg_hi / dt))
            if (k1 - 1) * dt >= seg_hi:
                k1 -= 1
            elif k1 * dt < seg_hi:
                k1 += 1
            k1 -= 1  # a point exactly at seg_hi belongs to the next segment
        else:
            k1 = int(math.floor(t_end / dt))
            if (k1 + 1) * dt <= t_end:
                k1 += 1
            elif k1 * dt > t_end:
                k1 -= 1
        # real interval where v > vhat inside the segment
        lo_on = seg_lo
        hi_on = seg_hi
        empty = False
        if variant == NON_LEAKY:
            if s_w > 0.0:
                lo_on = (vhat + a1) / s_w
            elif s_w < 0.0:
                hi_on = (vhat + a1) / s_w
            else:
                empty = -a1 <= vhat
        elif variant == CURRENT_SYNAPSE:
            lim = tau * s_w - vhat
            if a1 > 0.0:
                if lim <= 0.0:
                    empty = True
                else:
                    lo_on = tau * math.log(tau * a1 / lim)
            elif a1 == 0.0:
                empty = lim <= 0.0
            else:
                if lim < 0.0:
                    hi_on = tau * math.log(tau * (-a1) / (-lim))
        else:
            c = vhat / (2.0 * tau)
            if a1 > 0.0:
                disc = a2 * a2 - 4.0 * a1 * c
                if disc <= 0.0:
                    empty = True
                else:
                    sq = math.sqrt(disc)
                    u_hi = (a2 + sq) / (2.0 * a1)
                    u_lo = (a2 - sq) / (2.0 * a1)
                    if u_hi <= 0.0:
                        empty = True
                    else:
                        lo_on = -2.0 * tau * math.log(u_hi)
                        if u_lo > 0.0:
                            hi_on = -2.0 * tau * math.log(u_lo)
            elif a1 == 0.0:
                if a2 <= 0.0:
                    empty = True
                else:
                    u_star = c / a2
                    hi_on = -2.0 * tau * math.log(u_star)
            else:
                sq = math.sqrt(a2 * a2 + 4.0 * (-a1) * c)
                u_star = (-a2 + sq) / (2.0 * (-a1))
                hi_on = -2.0 * tau * math.log(u_star)
        sn = 0
        st = 0.0
        se1 = 0.0
        seh = 0.0
        if not empty and k1 >= k0:
            if lo_on < seg_lo:
                lo_on = seg_lo
            if hi_on > seg_hi:
                hi_on = seg_hi
            ka = int(math.ceil(lo_on / dt)) - 1
            if ka < k0:
                ka = k0
            kb = int(math.floor(hi_on / dt)) + 1
            if kb > k1:
                kb = k1
            while ka <= kb and not (_v_at(variant, ka * dt, s_w, a1, a2, tau) > vhat):
                ka += 1
            while kb >= ka and not (_v_at(variant, kb * dt, s_w, a1, a2, tau) > vhat):
                kb -= 1
            if ka <= kb:
                sn = kb - ka + 1
                st = dt * 0.5 * (ka + kb) * sn
                if variant == NON_LEAKY:
                    value += s_w * st - (a1 + vhat) * sn
                elif variant == CURRENT_SYNAPSE:
                    se1 = _geo_sum(ka, kb, dt, tau)
                    value += (tau * s_w - vhat) * sn - tau * a1 * se1
                else:
                    se1 = _geo_sum(ka, kb, dt, tau)
                    seh = _geo_sum(ka, kb, dt, 2.0 * tau)
                    value += 2.0 * tau * a2 * seh - 2.0 * tau * a1 * se1 - vhat * sn
        seg_n[nseg] = sn
        seg_t[nseg] = st
        seg_e1[nseg] = se1
        seg_eh[nseg] = seh
        seg_gs[nseg] = k
        nseg += 1
        k = g_end + 1
    seg_gs[nseg] = k
    # suffix pass: each arrival is seen by every grid point at or after it
    if pf != 0.0:
        scale = pf * dt / (vth - vhat)
        suf_n = 0.0
        suf_t = 0.0
        suf_e1 = 0.0
        suf_eh = 0.0
        for s in range(nseg - 1, -1, -1):
            suf_n += seg_n[s]
            suf_t += seg_t[s]
            suf_e1 += seg_e1[s]
            suf_eh += seg_eh[s]
            for m in range(seg_gs[s], seg_gs[s + 1]):
                j = od[m]
                tj = ts[m]
                w = Wt[j, col]
                if variant == NON_LEAKY:
                    gw = suf_t - suf_n * tj
                    gt = -w * suf_n
                elif variant == CURRENT_SYNAPSE:
                    e = math.exp(tj / tau)
                    gw = tau * (suf_n - e * suf_e1)
                    gt = -w * e * suf_e1
                else:
                    eh = math.exp(tj / (2.0 * tau))
                    e = eh * eh
                    gw = 2.0 * tau * (eh * suf_eh - e * suf_e1)
                    gt = w * (eh * suf_eh - 2.0 * e * suf_e1)
                dWt[j, col] += scale * gw
                dtrow[j] += scale * gt
    return value * dt / (vth - vhat)


@njit(cache=True)
def integral_layer(variant, Wt, ts, order, npres, fired, tout, window_t,
                   vhat, vth, tau, dt, pf, dWt, dTin, values):
    """Integral membrane loss over a dense layer batch.

    pf scales gradients (pass 0.0 to skip gradient work); ``values`` gets
    the per-neuron loss.  Unfired neurons integrate up to window_t.
    """
    n_batch = ts.shape[0]
    n_out = Wt.shape[1]
    n_in = Wt.shape[0]
    seg_n = np.empty(n_in + 1, np.int64)
    seg_t = np.empty(n_in + 1, np.float64)
    seg_e1 = np.empty(n_in + 1, np.float64)
    seg_eh = np.empty(n_in + 1, np.float64)
    seg_gs = np.empty(n_in + 2, np.int64)
    for b in range(n_batch):
        for i in range(n_out):
            t_end = tout[b, i] if fired[b, i] else INF
            if t_end > window_t:
                t_end = window_t
            values[b, i] = _integral_neuron(
                variant, Wt, i, order[b], ts[b], npres[b], t_end, vhat, vth,
                tau, dt, pf, dWt, dTin[b], seg_n, seg_t, seg_e1, seg_eh,
                seg_gs)
