"""From time tags to g2(tau), the HOM dip fit and the two-decoy bound."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ._kernels import both_live_count, live_gate_count
from .levmar import FitError, LMResult, levmar


class DipQualityWarning(UserWarning):
    """The scan shows no usable dip (visibility clamped at zero)."""


# -- slots and dead time from tags -------------------------------------------

def slot_of(timestamps, rep_period, tdc_bin):
    """Gate index of each timestamp.

    Flooring onto the TDC grid can move a click that happened just after a
    gate opened up to ``tdc_bin - 1`` ps into the previous period, hence the
    offset.  Valid as long as ``gate_width + tdc_bin <= rep_period``.
    """
    ts = np.asarray(timestamps, dtype=np.int64)
    return (ts + (tdc_bin - 1)) // rep_period


def next_live_slots(timestamps, rep_period, tdc_bin, dead_time):
    ts = np.asarray(timestamps, dtype=np.int64)
    slots = slot_of(ts, rep_period, tdc_bin)
    ready = -(-(ts + dead_time) // tdc_bin) * tdc_bin
    return slots, np.maximum(slots + 1, -(-ready // rep_period))


def live_gates(timestamps, rep_period, tdc_bin, dead_time, n_slots):
    """Number of gates in ``[0, n_slots)`` in which the detector was armed."""
    slots, nxt = next_live_slots(timestamps, rep_period, tdc_bin, dead_time)
    return int(live_gate_count(slots, nxt, np.int64(n_slots)))


def both_live_gates(tags1, tags2, rep_period, tdc_bin, dead_time, n_slots):
    s1, n1 = next_live_slots(tags1, rep_period, tdc_bin, dead_time)
    s2, n2 = next_live_slots(tags2, rep_period, tdc_bin, dead_time)
    return int(both_live_count(s1, n1, s2, n2, np.int64(n_slots)))


# -- histograms --------------------------------------------------------------

@dataclass
class Histogram:
    bin_width: float
    origin: float
    counts: np.ndarray

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ValueError(f"bin_width must be > 0, got {self.bin_width}")
        self.counts = np.asarray(self.counts, dtype=np.int64)

    def edges(self):
        return self.origin + self.bin_width * np.arange(self.counts.size + 1)

    def centers(self):
        return self.origin + self.bin_width * (np.arange(self.counts.size) + 0.5)

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        if (other.bin_width, other.origin, other.counts.size) != (
                self.bin_width, self.origin, self.counts.size):
            raise ValueError("histograms have different binning")
        return Histogram(self.bin_width, self.origin, self.counts + other.counts)


def build_histogram(tags, bin_width, *, channel=None, fold_period=None, tdc_bin=None,
                    origin=0, n_bins=None):
    """Count tags into fixed-width bins, optionally folded modulo ``fold_period``.

    ``tags`` is an int64 timestamp array or a :class:`~hombench.formats.TagFile`
    (then ``channel`` selects the detector and ``tdc_bin`` defaults to the
    file's value).
    """
    if hasattr(tags, "timestamps_for"):
        if channel is None:
            raise ValueError("channel is required when histogramming a tag file")
        tdc_bin = tags.tdc_bin if tdc_bin is None else tdc_bin
        tags = tags.timestamps_for(channel)
    if tdc_bin is not None and bin_width < tdc_bin:
        raise ValueError(f"bin_width ({bin_width}) must be >= tdc_bin ({tdc_bin})")
    ts = np.asarray(tags, dtype=np.int64)
    if fold_period is not None:
        ts = ts % int(fold_period)
        if n_bins is None:
            n_bins = int(math.ceil((fold_period - origin) / bin_width))
    elif n_bins is None:
        n_bins = int((ts.max() - origin) // bin_width) + 1 if ts.size else 1
    idx = np.floor((ts - origin) / bin_width).astype(np.int64)
    inside = (idx >= 0) & (idx < n_bins)
    counts = np.bincount(idx[inside], minlength=n_bins)
    return Histogram(float(bin_width), float(origin), counts)


# -- coincidences ------------------------------------------------------------

@njit(cache=True)
def _coinc_merge(s1, t1, s2, t2, window):
    i = 0
    j = 0
    n1 = s1.size
    n2 = s2.size
    found = 0
    while i < n1 and j < n2:
        if s1[i] < s2[j]:
            i += 1
        elif s2[j] < s1[i]:
            j += 1
        else:
            slot = s1[i]
            i_end = i
            while i_end < n1 and s1[i_end] == slot:
                i_end += 1
            j_end = j
            while j_end < n2 and s2[j_end] == slot:
                j_end += 1
            hit = False
            for a in range(i, i_end):
                for b in range(j, j_end):
                    if abs(t1[a] - t2[b]) <= window:
                        hit = True
                        break
                if hit:
                    break
            if hit:
                found += 1
            i = i_end
            j = j_end
    return found


def _require_sorted(ts, name):
    if ts.size > 1 and np.any(np.diff(ts) < 0):
        raise ValueError(f"{name} is not sorted by timestamp")


def count_coincidences(tags1, tags2, slot_period, window, *, tdc_bin=1, n_slots=None):
    """Single pass over two sorted streams.

    Returns ``(n1, n2, n_coinc, n_slots)``.  A gate counts once as a
    coincidence if it holds a tag from each stream no more than ``window``
    apart.  ``n_slots`` defaults to one past the last occupied gate.
    """
    t1 = np.asarray(tags1, dtype=np.int64)
    t2 = np.asarray(tags2, dtype=np.int64)
    _require_sorted(t1, "tags1")
    _require_sorted(t2, "tags2")
    if window > slot_period:
        raise ValueError("coincidence window cannot exceed the slot period")
    s1 = slot_of(t1, slot_period, tdc_bin)
    s2 = slot_of(t2, slot_period, tdc_bin)
    nc = int(_coinc_merge(s1, t1, s2, t2, np.int64(window)))
    if n_slots is None:
        last = max(s1[-1] if s1.size else -1, s2[-1] if s2.size else -1)
        n_slots = int(last) + 1
    return t1.size, t2.size, nc, int(n_slots)


def estimate_g2(counts):
    """Normalized coincidence rate and its Poissonian error.

    ``counts`` is ``(n1, n2, n_coinc, n_slots)``.  Returns ``(None, None)``
    when either detector saw nothing.  With no coincidences the error is
    that of a single event.
    """
    n1, n2, nc, n = counts
    if n1 <= 0 or n2 <= 0:
        return None, None
    scale = n / (n1 * n2)
    g2 = nc * scale
    nc_eff = nc if nc > 0 else 1
    err = nc_eff * scale * math.sqrt(1.0 / nc_eff + 1.0 / n1 + 1.0 / n2)
    return g2, err


# -- dip fit -----------------------------------------------------------------

def lorentzian_dip(tau, visibility, gamma, baseline=1.0, center=0.0):
    h2 = (0.5 * gamma) ** 2
    u = np.asarray(tau, dtype=float) - center
    return baseline - visibility * h2 / (u * u + h2)


@dataclass
class DipFit:
    visibility: float
    gamma: float
    baseline: float
    center: float
    visibility_err: float
    gamma_err: float
    baseline_err: float
    center_err: float
    chi2_red: float
    n_points: int
    converged: bool
    mode: str
    n_iter: int = 0
    warnings: list = field(default_factory=list)
    costs: list = field(default_factory=list, repr=False)

    @property
    def uncertainties(self):
        return {"visibility": self.visibility_err, "gamma": self.gamma_err,
                "baseline": self.baseline_err, "center": self.center_err}

    def record(self):
        """Flat key/value record as written to disk."""
        return {
            "visibility": self.visibility,
            "visibility_err": self.visibility_err,
            "gamma_ps": self.gamma,
            "gamma_err_ps": self.gamma_err,
            "baseline": self.baseline,
            "center_ps": self.center,
            "chi2_red": self.chi2_red,
            "n_points": self.n_points,
            "converged": self.converged,
        }


def _half_depth_width(tau, g2, baseline, depth, i_min):
    level = baseline - 0.5 * depth
    left = right = None
    for k in range(i_min, 0, -1):
        if g2[k - 1] >= level:
            left = tau[k] - (level - g2[k]) * (tau[k] - tau[k - 1]) / (g2[k - 1] - g2[k] or 1.0)
            break
    for k in range(i_min, tau.size - 1):
        if g2[k + 1] >= level:
            right = tau[k] + (level - g2[k]) * (tau[k + 1] - tau[k]) / (g2[k + 1] - g2[k] or 1.0)
            break
    if left is None and right is None:
        return 0.5 * (tau[-1] - tau[0])
    if left is None:
        return 2.0 * (right - tau[i_min])
    if right is None:
        return 2.0 * (tau[i_min] - left)
    return right - left


def fit_dip(points, mode="constrained", *, max_iter=500):
    """Weighted Lorentzian fit of a delay scan.

    ``points`` are ScanPoints (or anything with ``tau``, ``g2`` and
    ``g2_err``); points with undefined g2 are skipped.  ``mode`` is
    ``"constrained"`` (baseline fixed at 1, center free) or ``"free"``.
    """
    if mode not in ("constrained", "free"):
        raise ValueError(f"unknown fit mode {mode!r}")
    usable = sorted((p for p in points if p.g2 is not None), key=lambda p: p.tau)
    if len(usable) < 5:
        raise ValueError(f"need at least 5 points with defined g2, got {len(usable)}")
    tau = np.array([p.tau for p in usable], dtype=float)
    y = np.array([p.g2 for p in usable], dtype=float)
    err = np.array([p.g2_err for p in usable], dtype=float)
    if np.any(~(err > 0)):
        raise ValueError("all g2 errors must be positive")
    w = 1.0 / err

    free = mode == "free"
    baseline0 = float(y.max()) if free else 1.0
    i_min = int(np.argmin(y))
    depth0 = baseline0 - float(y[i_min])
    gamma0 = _half_depth_width(tau, y, baseline0, depth0, i_min) if depth0 > 0 else 0.5 * (tau[-1] - tau[0])
    gamma0 = max(gamma0, 1e-6 * (tau[-1] - tau[0]) + 1e-12)
    # parameter vector: V, gamma, center[, baseline]
    x0 = [depth0, gamma0, tau[i_min]] + ([baseline0] if free else [])

    def model_and_jac(v):
        vis, gamma, c = v[0], v[1], v[2]
        b = v[3] if free else 1.0
        h = 0.5 * gamma
        u = tau - c
        den = u * u + h * h
        lor = h * h / den
        m = b - vis * lor
        jac = np.empty((tau.size, v.size))
        jac[:, 0] = -lor
        jac[:, 1] = -vis * h * u * u / den**2
        jac[:, 2] = -vis * 2.0 * h * h * u / den**2
        if free:
            jac[:, 3] = 1.0
        return m, jac

    def resid(v):
        return (y - model_and_jac(v)[0]) * w

    def jac(v):
        return -model_and_jac(v)[1] * w[:, None]

    span = tau[-1] - tau[0]

    def project(v):
        v = v.copy()
        v[1] = max(abs(v[1]), 1e-9 * span)
        return v

    try:
        res = levmar(resid, np.array(x0), jac, max_iter=max_iter, project=project)
    except FitError as exc:
        # A bump instead of a dip has no finite-width optimum; report no dip.
        if exc.params is None or exc.params[0] > 0.0:
            raise
        x = exc.params
        res = LMResult(x, float(resid(x) @ resid(x)), jac(x), max_iter, False, str(exc))
    n_par = res.x.size
    dof = max(tau.size - n_par, 1)
    chi2_red = res.cost / dof
    cov = res.covariance(chi2_red)
    errs = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    vis, gamma, center = (float(v) for v in res.x[:3])
    baseline = float(res.x[3]) if free else 1.0
    notes = []
    if vis <= 0.0:
        notes.append("no dip in the data: visibility clamped at 0")
        warnings.warn(notes[-1], DipQualityWarning, stacklevel=2)
        vis = 0.0
    return DipFit(
        visibility=vis, gamma=gamma, baseline=baseline, center=center,
        visibility_err=float(errs[0]), gamma_err=float(errs[1]),
        baseline_err=float(errs[3]) if free else 0.0, center_err=float(errs[2]),
        chi2_red=float(chi2_red), n_points=int(tau.size), converged=res.converged,
        mode=mode, n_iter=res.n_iter, warnings=notes, costs=res.costs,
    )


# -- two-decoy bound ---------------------------------------------------------

@dataclass(frozen=True)
class DecoyRecord:
    """Per-gate probabilities for the three port settings.

    ``p_cc_0mu`` has the first input blocked, ``p_cc_mu0`` the second.
    ``p_d1``/``p_d2`` come from the both-open data.  The ``n_*`` counts back
    the Poissonian error of each probability.
    """

    p_cc_mumu: float
    p_cc_0mu: float
    p_cc_mu0: float
    p_d1: float
    p_d2: float
    n_cc_mumu: int
    n_cc_0mu: int
    n_cc_mu0: int
    n_d1: int
    n_d2: int

    def __post_init__(self):
        for name in ("p_cc_mumu", "p_cc_0mu", "p_cc_mu0", "p_d1", "p_d2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @classmethod
    def from_points(cls, both_open, first_blocked, second_blocked):
        """Build from ScanPoints at one delay.

        Probabilities are normalized per armed gate (``n_live*``), which keeps
        settings with different count rates, and therefore different dead
        time losses, comparable.
        """
        def per_gate(n, gates):
            return n / gates if gates > 0 else 0.0

        return cls(
            p_cc_mumu=per_gate(both_open.n_coinc, both_open.n_live12),
            p_cc_0mu=per_gate(first_blocked.n_coinc, first_blocked.n_live12),
            p_cc_mu0=per_gate(second_blocked.n_coinc, second_blocked.n_live12),
            p_d1=per_gate(both_open.n1, both_open.n_live1),
            p_d2=per_gate(both_open.n2, both_open.n_live2),
            n_cc_mumu=both_open.n_coinc, n_cc_0mu=first_blocked.n_coinc,
            n_cc_mu0=second_blocked.n_coinc, n_d1=both_open.n1, n_d2=both_open.n2,
        )


def decoy_upper_bound(rec: DecoyRecord):
    """Upper bound on the single-photon-pair coincidence probability.

    Returns ``(p_ub, err)``.  A negative value is a statistical fluctuation
    and is returned unclamped.
    """
    den = rec.p_d1 * rec.p_d2
    if den <= 0.0:
        raise ZeroDivisionError("singles probabilities must be positive")
    num = rec.p_cc_mumu - rec.p_cc_0mu - rec.p_cc_mu0
    p_ub = num / den

    def rel_var(n):
        return 1.0 / n if n > 0 else 1.0

    var_num = sum(p * p * rel_var(n) for p, n in (
        (rec.p_cc_mumu, rec.n_cc_mumu), (rec.p_cc_0mu, rec.n_cc_0mu), (rec.p_cc_mu0, rec.n_cc_mu0)))
    var = var_num / den**2 + p_ub**2 * (rel_var(rec.n_d1) + rel_var(rec.n_d2))
    return p_ub, math.sqrt(var)


__all__ = [
    "DecoyRecord", "DipFit", "DipQualityWarning", "FitError", "Histogram",
    "both_live_gates", "build_histogram", "count_coincidences", "decoy_upper_bound",
    "estimate_g2", "fit_dip", "live_gates", "lorentzian_dip", "slot_of",
]
