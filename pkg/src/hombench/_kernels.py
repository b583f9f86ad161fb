"""Compiled inner loops for the simulator and the tag analysis.

``run_point`` walks candidate slots in order and applies, per detector, the
same rules as ``detector.tag_event``: gate check, gate-level dead time,
floor quantization onto the TDC grid, and one optional afterpulse per
click.  Coincidences, per-channel dead gates and the union of both
channels' dead gates are tallied on the fly, so nothing needs to be
materialized unless the caller asks for the tags.

Random numbers come from a xoshiro256** stream whose 256-bit state is
passed in; every draw happens in slot order, so a given state always yields
the same output.
"""
import math

import numpy as np
from numba import njit

AP_SPREAD = 10

# counters layout
N1, N2, NC, DEAD1, DEAD2, DEAD12, DGATE1, DGATE2, DDEAD1, DDEAD2, AP1, AP2, NTAG = range(13)
N_COUNTERS = 13

# parameter vector layout (float64)
(P_N, P_PMAX, P_MU1, P_MU2, P_XI, P_ETA1, P_ETA2, P_DARK1, P_DARK2, P_ARR1, P_ARR2,
 P_SIG1, P_SIG2, P_T0, P_RSIG, P_T1, P_TAU, P_WG, P_PHIZ1, P_GW, P_DEAD, P_TDC, P_REP,
 P_AP, P_WIN) = range(25)
N_PARAMS = 25


# -- random numbers ----------------------------------------------------------

@njit(cache=True, nogil=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True, nogil=True, inline="always")
def next_u64(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, nogil=True, inline="always")
def uniform(s):
    """Uniform double in (0, 1)."""
    return ((next_u64(s) >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True, inline="always")
def ndtri(p):
    """Inverse standard normal CDF (Wichura's AS241, about 1e-16 relative)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    val = num / den
    return -val if q < 0.0 else val


@njit(cache=True, nogil=True, inline="always")
def _jitter(s, prm):
    u = uniform(s)
    wg = prm[P_WG]
    if u < wg:
        return prm[P_T0] + prm[P_RSIG] * ndtri(u / wg * prm[P_PHIZ1])
    return prm[P_T1] - prm[P_TAU] * math.log1p(-(u - wg) / (1.0 - wg))


# -- per-event bookkeeping ----------------------------------------------------

@njit(cache=True, nogil=True, inline="always")
def _accept(c, slot, x, is_ap, prm, s, st, fst, cnt, keep, out_t, out_c):
    """Apply gate, dead time and TDC to one click on channel ``c``.

    ``st`` (int64): next_live[2], ap_slot[2], last_slot[2], last_t[2],
    union_start, union_end.  ``fst`` (float64): ap_x[2].
    """
    if x < 0.0 or x >= prm[P_GW]:
        cnt[DGATE1 + c] += 1
        return 0
    if slot < st[c]:
        cnt[DDEAD1 + c] += 1
        return 0
    tdc = np.int64(prm[P_TDC])
    rep = np.int64(prm[P_REP])
    base = slot * rep
    q = base // tdc
    ts = (q + np.int64(math.floor(((base - q * tdc) + x) / tdc))) * tdc
    ready = -((-(ts + np.int64(prm[P_DEAD]))) // tdc) * tdc
    nl = -((-ready) // rep)
    if nl < slot + 1:
        nl = slot + 1
    st[c] = nl
    cnt[N1 + c] += 1
    if is_ap:
        cnt[AP1 + c] += 1
    other = 1 - c
    if st[4 + other] == slot and abs(ts - st[6 + other]) <= np.int64(prm[P_WIN]):
        cnt[NC] += 1
    st[4 + c] = slot
    st[6 + c] = ts
    n = np.int64(prm[P_N])
    end = nl if nl < n else n
    if end > slot + 1:
        cnt[DEAD1 + c] += end - slot - 1
        start = slot + 1
        if start > st[9]:
            if st[9] > st[8]:
                cnt[DEAD12] += st[9] - st[8]
            st[8] = start
            st[9] = end
        elif end > st[9]:
            st[9] = end
    if keep:
        k = cnt[NTAG]
        if k >= out_t.size:
            return -1
        out_t[k] = ts
        out_c[k] = c
        cnt[NTAG] = k + 1
    if prm[P_AP] > 0.0 and uniform(s) < prm[P_AP]:
        st[2 + c] = nl + np.int64(uniform(s) * AP_SPREAD)
        fst[c] = uniform(s) * prm[P_GW]
    return 1


@njit(cache=True, nogil=True)
def _flush_afterpulses(limit, prm, s, st, fst, cnt, keep, out_t, out_c):
    """Fire pending afterpulses in slots before ``limit``, oldest first."""
    while True:
        a0 = st[2]
        a1 = st[3]
        c = -1
        if a0 >= 0 and a0 < limit:
            c = 0
        if a1 >= 0 and a1 < limit and (c < 0 or a1 < a0 or (a1 == a0 and fst[1] < fst[0])):
            c = 1
        if c < 0:
            return 0
        slot = st[2 + c]
        st[2 + c] = -1
        if _accept(c, slot, fst[c], True, prm, s, st, fst, cnt, keep, out_t, out_c) < 0:
            return -1


@njit(cache=True, nogil=True)
def run_point(prm, s, keep, out_t, out_c, cnt):
    """Simulate ``prm[P_N]`` gates.  Returns 0, or -1 if ``out_*`` overflowed."""
    n = np.int64(prm[P_N])
    p_max = prm[P_PMAX]
    st = np.zeros(10, np.int64)
    st[2] = -1
    st[3] = -1
    st[4] = -1
    st[5] = -1
    fst = np.zeros(2)
    cnt[:] = 0
    log_miss = math.log1p(-p_max) if p_max < 1.0 else -np.inf
    mean = 0.5 * (prm[P_MU1] + prm[P_MU2])
    amp = math.sqrt(prm[P_MU1] * prm[P_MU2] * prm[P_XI])
    slot = np.int64(-1)
    while p_max > 0.0:
        if p_max < 1.0:
            gap = 1.0 + math.floor(math.log(uniform(s)) / log_miss)
            if gap > 9.0e18:
                break
            slot += np.int64(gap)
        else:
            slot += 1
        if slot >= n:
            break
        if (0 <= st[2] < slot or 0 <= st[3] < slot) and \
                _flush_afterpulses(slot, prm, s, st, fst, cnt, keep, out_t, out_c) < 0:
            return -1
        cphi = math.cos(2.0 * math.pi * uniform(s))
        n1 = mean + amp * cphi
        n2 = (prm[P_MU1] + prm[P_MU2]) - n1
        if n2 < 0.0:
            n2 = 0.0
        q1 = -math.expm1(-prm[P_ETA1] * n1)
        q2 = -math.expm1(-prm[P_ETA2] * n2)
        p1 = 1.0 - (1.0 - prm[P_DARK1]) * (1.0 - q1)
        p2 = 1.0 - (1.0 - prm[P_DARK2]) * (1.0 - q2)
        p_any = 1.0 - (1.0 - p1) * (1.0 - p2)
        if uniform(s) * p_max >= p_any:
            continue
        u = uniform(s) * p_any
        click1 = u < p1
        click2 = u < p1 * p2 or u >= p1
        for c in range(2):
            if not (click1 if c == 0 else click2):
                continue
            if slot < st[c]:
                # Dead gate: nothing about this click can be observed.
                cnt[DDEAD1 + c] += 1
                continue
            p_c = p1 if c == 0 else p2
            q_c = q1 if c == 0 else q2
            d_c = prm[P_DARK1 + c]
            v = uniform(s) * p_c
            photon = v < q_c
            dark = v >= q_c * (1.0 - d_c)
            x = 0.0
            if photon:
                x = prm[P_ARR1 + c] + prm[P_SIG1 + c] * ndtri(uniform(s)) + _jitter(s, prm)
            if dark:
                xd = uniform(s) * prm[P_GW]
                if not photon or not (0.0 <= x < prm[P_GW]) or xd < x:
                    x = xd
            # A pending afterpulse in this same gate fires first if earlier.
            if st[2 + c] == slot and fst[c] <= x:
                st[2 + c] = -1
                if _accept(c, slot, fst[c], True, prm, s, st, fst, cnt, keep, out_t, out_c) < 0:
                    return -1
            if _accept(c, slot, x, False, prm, s, st, fst, cnt, keep, out_t, out_c) < 0:
                return -1
    if _flush_afterpulses(n, prm, s, st, fst, cnt, keep, out_t, out_c) < 0:
        return -1
    if st[9] > st[8]:
        cnt[DEAD12] += st[9] - st[8]
    return 0


# -- analysis helpers --------------------------------------------------------

@njit(cache=True, nogil=True)
def live_gate_count(slots, next_live, n_slots):
    """Gates not blanked by dead time, from accepted (slot, next_live) pairs."""
    dead = np.int64(0)
    for j in range(slots.size):
        end = next_live[j] if next_live[j] < n_slots else n_slots
        if end > slots[j] + 1:
            dead += end - slots[j] - 1
    return n_slots - dead


@njit(cache=True, nogil=True)
def both_live_count(slots_a, next_a, slots_b, next_b, n_slots):
    """Gates where neither channel is blanked: merge the dead intervals."""
    ia = 0
    ib = 0
    na = slots_a.size
    nb = slots_b.size
    cur_start = np.int64(-1)
    cur_end = np.int64(-1)
    dead = np.int64(0)
    while ia < na or ib < nb:
        if ib >= nb or (ia < na and slots_a[ia] <= slots_b[ib]):
            start = slots_a[ia] + 1
            end = next_a[ia]
            ia += 1
        else:
            start = slots_b[ib] + 1
            end = next_b[ib]
            ib += 1
        if end > n_slots:
            end = n_slots
        if end <= start:
            continue
        if start > cur_end:
            if cur_end > cur_start:
                dead += cur_end - cur_start
            cur_start = start
            cur_end = end
        elif end > cur_end:
            cur_end = end
    if cur_end > cur_start:
        dead += cur_end - cur_start
    return n_slots - dead
