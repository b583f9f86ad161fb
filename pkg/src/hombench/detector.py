"""Gated InGaAs/InP SPAD with a time-to-digital converter.

Times are in picoseconds.  Timestamps are integers and always a multiple of
the TDC bin.  Dead time is applied in whole gates: after a click the
detector re-arms at the first gate whose quantized opening time lies at
least ``dead_time`` after the recorded timestamp, and a gate never produces
more than one click.  That keeps the set of live gates a function of the
recorded tags alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .levmar import FitError, levmar

AFTERPULSE_SPREAD_GATES = 10
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class DetectorResponseParams:
    """Gaussian rise joined to an exponential tail at ``t1``.

    Defaults, together with a 100 ps optical pulse and 81 ps TDC bins, give a
    folded detection histogram of about 145 ps FWHM.
    """

    amplitude: float = 1.0
    t0: float = 0.0
    sigma: float = 22.0
    t1: float = 25.0
    tau_decay: float = 75.0

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError(f"amplitude must be > 0, got {self.amplitude}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.tau_decay > 0:
            raise ValueError(f"tau_decay must be > 0, got {self.tau_decay}")
        if not self.t1 >= self.t0:
            raise ValueError(f"t1 ({self.t1}) must not precede t0 ({self.t0})")

    def as_array(self):
        return np.array([self.amplitude, self.t0, self.sigma, self.t1, self.tau_decay])

    @classmethod
    def from_array(cls, values):
        a, t0, s, t1, tau = (float(v) for v in values)
        return cls(amplitude=a, t0=t0, sigma=s, t1=t1, tau_decay=tau)


@dataclass(frozen=True)
class GateParams:
    gate_width: int = 3500
    dead_time: int = 3_000_000
    tdc_bin: int = 81
    afterpulse_prob: float = 0.01

    def __post_init__(self):
        if not self.gate_width > 0:
            raise ValueError(f"gate_width must be > 0, got {self.gate_width}")
        if not self.dead_time >= 0:
            raise ValueError(f"dead_time must be >= 0, got {self.dead_time}")
        if not self.tdc_bin > 0:
            raise ValueError(f"tdc_bin must be > 0, got {self.tdc_bin}")
        if not 0.0 <= self.afterpulse_prob < 1.0:
            raise ValueError(f"afterpulse_prob must lie in [0, 1), got {self.afterpulse_prob}")


@dataclass(frozen=True, order=True)
class TimeTag:
    timestamp: int
    channel: int


# -- temporal response -----------------------------------------------------

def response_density(t, p: DetectorResponseParams):
    """Detector temporal response (not normalized); vectorized over ``t``."""
    t = np.asarray(t, dtype=float)
    z1 = (p.t1 - p.t0) / p.sigma
    gauss = p.amplitude * np.exp(-0.5 * ((t - p.t0) / p.sigma) ** 2)
    tail = p.amplitude * np.exp(-0.5 * z1 * z1 - np.maximum(t - p.t1, 0.0) / p.tau_decay)
    out = np.where(t < p.t1, gauss, tail)
    return float(out) if out.ndim == 0 else out


def _piece_masses(p: DetectorResponseParams):
    z1 = (p.t1 - p.t0) / p.sigma
    gauss_mass = p.amplitude * p.sigma * _SQRT_2PI * ndtr(z1)
    tail_mass = p.amplitude * math.exp(-0.5 * z1 * z1) * p.tau_decay
    return gauss_mass, tail_mass


def response_area(p: DetectorResponseParams):
    g, e = _piece_masses(p)
    return g + e


def response_tail_fraction(p: DetectorResponseParams):
    """Probability mass of the normalized response beyond ``t1``."""
    g, e = _piece_masses(p)
    return e / (g + e)


def response_cdf(t, p: DetectorResponseParams):
    t = np.asarray(t, dtype=float)
    g, e = _piece_masses(p)
    z = g + e
    left = p.amplitude * p.sigma * _SQRT_2PI * ndtr((t - p.t0) / p.sigma) / z
    right = (g + e * -np.expm1(-np.maximum(t - p.t1, 0.0) / p.tau_decay)) / z
    out = np.where(t < p.t1, left, right)
    return float(out) if out.ndim == 0 else out


def response_mean(p: DetectorResponseParams):
    g, e = _piece_masses(p)
    z1 = (p.t1 - p.t0) / p.sigma
    pdf_z1 = math.exp(-0.5 * z1 * z1) / _SQRT_2PI
    first_moment_gauss = p.amplitude * p.sigma * _SQRT_2PI * (p.t0 * ndtr(z1) - p.sigma * pdf_z1)
    return (first_moment_gauss + e * (p.t1 + p.tau_decay)) / (g + e)


def response_fwhm(p: DetectorResponseParams):
    """Full width at half maximum, located by bisection on each flank."""
    half = 0.5 * p.amplitude
    span = 40.0 * (p.sigma + p.tau_decay) + (p.t1 - p.t0)
    f = lambda t: response_density(t, p) - half  # noqa: E731
    left = brentq(f, p.t0 - span, p.t0, xtol=1e-10, rtol=1e-14)
    right = brentq(f, p.t0, p.t0 + span, xtol=1e-10, rtol=1e-14)
    return right - left


def sample_jitter(p: DetectorResponseParams, rng, size=None):
    """Draw detection delays from the normalized response by inverse CDF.

    One uniform per draw selects the piece by its mass and is then mapped
    through that piece's analytic inverse.
    """
    u = rng.random(size)
    g, e = _piece_masses(p)
    w_gauss = g / (g + e)
    z1 = (p.t1 - p.t0) / p.sigma
    u = np.asarray(u, dtype=float)
    in_gauss = u < w_gauss
    with np.errstate(divide="ignore", invalid="ignore"):
        t_gauss = p.t0 + p.sigma * ndtri(u / w_gauss * ndtr(z1))
        frac = (u - w_gauss) / (1.0 - w_gauss) if w_gauss < 1.0 else np.zeros_like(u)
        t_tail = p.t1 - p.tau_decay * np.log1p(-frac)
    out = np.where(in_gauss, t_gauss, t_tail)
    return float(out) if out.ndim == 0 else out


# -- gating, dead time, TDC ------------------------------------------------

def quantize(slot, x, rep_period, tdc_bin):
    """Floor ``slot*rep_period + x`` onto the TDC grid without float overflow."""
    base = slot * rep_period
    q, r = divmod(base, tdc_bin)
    return int((q + math.floor((r + x) / tdc_bin)) * tdc_bin)


def next_live_slot(slot, timestamp, rep_period, tdc_bin, dead_time):
    """First gate that is armed again after a click recorded at ``timestamp``."""
    ready = timestamp + dead_time
    ready_q = -(-ready // tdc_bin) * tdc_bin
    return max(slot + 1, -(-ready_q // rep_period))


@dataclass
class ChannelState:
    channel: int = 0
    next_live: int = 0
    pending_afterpulse: tuple | None = None
    dropped_gate: int = 0
    dropped_dead: int = 0
    afterpulses: int = 0
    tags: int = 0


def _accept(slot, x, gate, state, rng, rep_period):
    if x < 0.0 or x >= gate.gate_width:
        state.dropped_gate += 1
        return None, state
    if slot < state.next_live:
        state.dropped_dead += 1
        return None, state
    ts = quantize(slot, x, rep_period, gate.tdc_bin)
    state.next_live = next_live_slot(slot, ts, rep_period, gate.tdc_bin, gate.dead_time)
    state.tags += 1
    if gate.afterpulse_prob > 0.0 and rng.random() < gate.afterpulse_prob:
        # A newer afterpulse replaces an older pending one; the older one
        # would be inside the new dead time unless dead_time is tiny.
        ap_slot = state.next_live + int(rng.random() * AFTERPULSE_SPREAD_GATES)
        state.pending_afterpulse = (ap_slot, rng.random() * gate.gate_width)
    return TimeTag(ts, state.channel), state


def tag_event(slot_index, photon_time_in_slot, gate: GateParams,
              response: DetectorResponseParams, channel_state: ChannelState, rng,
              *, rep_period=10_000, add_jitter=True):
    """Pass one raw detection through jitter, gate, dead time and the TDC.

    Returns ``(tag or None, channel_state)``.  The state is updated in
    place and also returned.  Pending afterpulses are emitted separately with
    :func:`emit_afterpulse` by whoever drives the stream.
    """
    x = float(photon_time_in_slot)
    if add_jitter:
        x += sample_jitter(response, rng)
    return _accept(slot_index, x, gate, channel_state, rng, rep_period)


def emit_afterpulse(channel_state: ChannelState, gate: GateParams, rng, *, rep_period=10_000):
    """Fire the pending afterpulse, if any.  Returns ``(tag or None, state)``."""
    pending = channel_state.pending_afterpulse
    if pending is None:
        return None, channel_state
    channel_state.pending_afterpulse = None
    slot, x = pending
    tag, channel_state = _accept(slot, x, gate, channel_state, rng, rep_period)
    if tag is not None:
        channel_state.afterpulses += 1
    return tag, channel_state


# -- fitting the response to a histogram -------------------------------------

@dataclass
class DetectorFit:
    params: DetectorResponseParams
    covariance: np.ndarray
    chi2_red: float
    fwhm: float
    n_iter: int
    converged: bool = True
    errors: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.errors is None:
            self.errors = np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def _response_jacobian(t, v):
    a, t0, s, t1, tau = v
    gauss_side = t < t1
    z1 = (t1 - t0) / s
    f = np.where(gauss_side,
                 a * np.exp(-0.5 * ((t - t0) / s) ** 2),
                 a * np.exp(-0.5 * z1 * z1 - np.maximum(t - t1, 0.0) / tau))
    jac = np.empty((t.size, 5))
    jac[:, 0] = f / a
    jac[:, 1] = np.where(gauss_side, f * (t - t0) / s**2, f * (t1 - t0) / s**2)
    jac[:, 2] = np.where(gauss_side, f * (t - t0) ** 2 / s**3, f * (t1 - t0) ** 2 / s**3)
    jac[:, 3] = np.where(gauss_side, 0.0, f * (1.0 / tau - (t1 - t0) / s**2))
    jac[:, 4] = np.where(gauss_side, 0.0, f * (t - t1) / tau**2)
    return f, jac


def _half_max_crossings(t, y):
    i = int(np.argmax(y))
    half = 0.5 * y[i]
    left = np.nonzero(y[:i] < half)[0]
    right = np.nonzero(y[i + 1:] < half)[0]
    if left.size == 0 or right.size == 0:
        return None
    li = left[-1]
    ri = i + 1 + right[0]
    tl = t[li] + (half - y[li]) * (t[li + 1] - t[li]) / (y[li + 1] - y[li])
    tr = t[ri - 1] + (half - y[ri - 1]) * (t[ri] - t[ri - 1]) / (y[ri] - y[ri - 1])
    return i, tl, tr


def _cumulative(t, v):
    """Integral of the unnormalized response from -inf to ``t``."""
    a, t0, s, t1, tau = v
    z1 = (t1 - t0) / s
    gauss = a * s * _SQRT_2PI * ndtr((np.minimum(t, t1) - t0) / s)
    tail = a * math.exp(-0.5 * z1 * z1) * tau * -np.expm1(-np.maximum(t - t1, 0.0) / tau)
    return gauss + tail


def fit_detector_response(histogram, *, max_iter=500):
    """Weighted least-squares fit of the temporal response to a histogram.

    ``histogram`` is an analysis ``Histogram`` or a ``(times, counts)``
    pair.  For a Histogram, or when ``times`` holds one more entry than
    ``counts`` (bin edges), the model is integrated over each bin, which
    matters when bins are not small against the peak width.  Otherwise
    ``times`` are bin centers and the density is sampled there.  Each bin is
    weighted by ``1 / max(count, 1)``.
    """
    if isinstance(histogram, tuple):
        t, y = histogram
    else:
        t, y = histogram.edges(), histogram.counts
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    edges = None
    if t.size == y.size + 1:
        edges = t
        t = 0.5 * (edges[1:] + edges[:-1])
    elif t.size != y.size:
        raise ValueError("times and counts have incompatible lengths")
    if np.count_nonzero(y) < 10:
        raise ValueError("need at least 10 non-empty bins to fit the detector response")
    found = _half_max_crossings(t, y)
    if found is None:
        raise FitError("histogram has no resolvable peak (no half-maximum crossing on both sides)")
    ipk, tl, tr = found
    hw_left = t[ipk] - tl
    hw_right = tr - t[ipk]
    span = t[-1] - t[0]
    sigma0 = max(hw_left / math.sqrt(2 * math.log(2)), 1e-3 * span)
    sw = 1.0 / np.sqrt(np.maximum(y, 1.0))

    if edges is None:
        peak_scale = 1.0

        def resid(v):
            f, _ = _response_jacobian(t, v)
            return (f - y) * sw

        def jac(v):
            _, j = _response_jacobian(t, v)
            return j * sw[:, None]
    else:
        # counts per bin are the amplitude (per ps) times the bin integral
        peak_scale = 1.0 / (edges[ipk + 1] - edges[ipk])
        jac = None

        def resid(v):
            return (_cumulative(edges[1:], v) - _cumulative(edges[:-1], v) - y) * sw

    tiny = 1e-9 * span

    def project(v):
        v = v.copy()
        v[0] = max(v[0], tiny)
        v[2] = max(v[2], tiny)
        v[4] = max(v[4], tiny)
        v[3] = max(v[3], v[1])
        return v

    # The join point makes the cost surface piecewise; a few starts along
    # it avoid the local minimum where t1 sticks to t0.
    res = None
    last_error = None
    for k in (0.5, 1.5, 0.1, 3.0):
        x0 = np.array([y[ipk] * peak_scale, t[ipk], sigma0, t[ipk] + k * sigma0,
                       max(hw_right - k * sigma0, sigma0) / math.log(2)])
        try:
            trial = levmar(resid, x0, jac, max_iter=max_iter, project=project)
        except FitError as exc:
            last_error = exc
            continue
        if res is None or trial.cost < res.cost:
            res = trial
    if res is None:
        raise last_error
    dof = max(t.size - 5, 1)
    chi2_red = res.cost / dof
    cov = res.covariance(chi2_red)
    params = DetectorResponseParams.from_array(res.x)
    errs = np.sqrt(np.abs(np.diag(cov)))
    if (not np.all(np.isfinite(cov)) or params.sigma > span or params.tau_decay > span
            or not t[0] <= params.t0 <= t[-1] or errs[2] > params.sigma):
        raise FitError("degenerate detector-response fit", res.x, res.residual_norm)
    return DetectorFit(params=params, covariance=cov, chi2_red=chi2_red,
                       fwhm=response_fwhm(params), n_iter=res.n_iter, converged=res.converged)


def with_amplitude(p: DetectorResponseParams, amplitude):
    return replace(p, amplitude=amplitude)
