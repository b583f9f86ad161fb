"""Monte Carlo runs of the full HOM measurement chain.

Random numbers
--------------
Every scan point gets its own xoshiro256** stream whose state comes from
``SeedSequence(seed, spawn_key=(block_code, point_index))``.  Inside a
point all draws happen in slot order, so results never depend on thread
count or execution order.

Sampling
--------
Slots without any click leave no trace, so only slots that might click are
visited: candidate slots are spaced by geometric gaps with the phase-maximal
click probability ``p_max``, each candidate draws its own relative phase,
and it is kept with probability ``p_any(phase) / p_max``.  This is exact
thinning of the per-slot Bernoulli process.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from . import _kernels
from .analysis import estimate_g2
from .detector import DetectorResponseParams, GateParams, _piece_masses
from .physics import (ChannelParams, OverlapModel, SourceParams, max_slot_click_prob,
                      mean_photons_out, overlap_sq)

BLOCK_MODES = ("none", "block1", "block2")
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class ExperimentConfig:
    source1: SourceParams = field(default_factory=SourceParams)
    source2: SourceParams = field(default_factory=SourceParams)
    overlap: OverlapModel = field(default_factory=OverlapModel)
    ch1: ChannelParams = field(default_factory=ChannelParams)
    ch2: ChannelParams = field(default_factory=ChannelParams)
    gate: GateParams = field(default_factory=GateParams)
    response: DetectorResponseParams = field(default_factory=DetectorResponseParams)
    n_pulses: int = 100_000_000
    seed: int = 0
    block: str = "none"
    # None means the whole gate is the coincidence window.
    window: int | None = None
    # Pulse arrival within the gate; None centers it.
    pulse_offset: float | None = None

    def __post_init__(self):
        if self.n_pulses < 1:
            raise ValueError(f"n_pulses must be >= 1, got {self.n_pulses}")
        if self.source1.rep_period != self.source2.rep_period:
            raise ValueError("both sources must share the repetition period")
        if self.block not in BLOCK_MODES:
            raise ValueError(f"block must be one of {BLOCK_MODES}, got {self.block!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if float(self.rep_period) != self.source1.rep_period:
            raise ValueError("rep_period must be a whole number of ps")
        if self.gate.gate_width + self.gate.tdc_bin > self.rep_period:
            raise ValueError("gate_width + tdc_bin must not exceed the repetition period")
        if self.window is not None and not self.gate.tdc_bin <= self.window <= self.gate.gate_width:
            raise ValueError("coincidence window must lie between one TDC bin and the gate width")

    @property
    def rep_period(self):
        return int(self.source1.rep_period)

    @property
    def coincidence_window(self):
        return self.gate.gate_width if self.window is None else self.window

    @property
    def arrival(self):
        return 0.5 * self.gate.gate_width if self.pulse_offset is None else self.pulse_offset

    @property
    def effective_mu(self):
        mu1 = 0.0 if self.block == "block1" else self.source1.mu
        mu2 = 0.0 if self.block == "block2" else self.source2.mu
        return mu1, mu2

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class ScanPoint:
    """Counts at one delay.

    ``n_live1``/``n_live2`` are gates where each detector was armed and
    ``n_live12`` gates where both were; with no dead time they equal
    ``n_pulses``.
    """

    tau: float
    n_pulses: int
    n1: int
    n2: int
    n_coinc: int
    g2: float | None
    g2_err: float | None
    n_live1: int | None = None
    n_live2: int | None = None
    n_live12: int | None = None

    def __post_init__(self):
        for name in ("n_live1", "n_live2", "n_live12"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, self.n_pulses)
        if min(self.n1, self.n2, self.n_coinc) < 0:
            raise ValueError("counts must be non-negative")
        if self.n_coinc > min(self.n1, self.n2):
            raise ValueError("more coincidences than singles")

    @classmethod
    def from_counts(cls, tau, n_pulses, n1, n2, n_coinc, **live):
        g2, err = estimate_g2((n1, n2, n_coinc, n_pulses))
        return cls(tau, n_pulses, n1, n2, n_coinc, g2, err, **live)


@dataclass
class PointResult:
    point: ScanPoint
    tags: tuple
    diagnostics: dict


def pulse_emission_time(source: SourceParams, rng, size=None, center=0.0):
    """Gaussian emission time with the source's FWHM around ``center``."""
    return center + source.pulse_fwhm * FWHM_TO_SIGMA * rng.standard_normal(size)


def point_seed(cfg: ExperimentConfig, point_index):
    """256-bit state for the compiled generator of one scan point."""
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(BLOCK_MODES.index(cfg.block), point_index))
    state = ss.generate_state(4, np.uint64)
    if not state.any():
        state[0] = 1
    return state


def phase_resolved_n(mu1, mu2, xi_sq, phi):
    n1, n2 = mean_photons_out(mu1, mu2, xi_sq, phi)
    return np.maximum(n1, 0.0), np.maximum(n2, 0.0)


def _kernel_params(cfg: ExperimentConfig, tau):
    mu1, mu2 = cfg.effective_mu
    xi_sq = float(overlap_sq(tau, cfg.overlap))
    r, g = cfg.response, cfg.gate
    gauss, tail = _piece_masses(r)
    prm = np.zeros(_kernels.N_PARAMS)
    k = _kernels
    prm[k.P_N] = cfg.n_pulses
    prm[k.P_PMAX] = max_slot_click_prob(mu1, mu2, xi_sq, cfg.ch1, cfg.ch2)
    prm[k.P_MU1], prm[k.P_MU2], prm[k.P_XI] = mu1, mu2, xi_sq
    prm[k.P_ETA1], prm[k.P_ETA2] = cfg.ch1.efficiency, cfg.ch2.efficiency
    prm[k.P_DARK1], prm[k.P_DARK2] = cfg.ch1.dark_prob, cfg.ch2.dark_prob
    # The delay line sits in front of the second detector.
    prm[k.P_ARR1], prm[k.P_ARR2] = cfg.arrival, cfg.arrival + tau
    prm[k.P_SIG1] = cfg.source1.pulse_fwhm * FWHM_TO_SIGMA
    prm[k.P_SIG2] = cfg.source2.pulse_fwhm * FWHM_TO_SIGMA
    prm[k.P_T0], prm[k.P_RSIG], prm[k.P_T1], prm[k.P_TAU] = r.t0, r.sigma, r.t1, r.tau_decay
    prm[k.P_WG] = gauss / (gauss + tail)
    prm[k.P_PHIZ1] = ndtr((r.t1 - r.t0) / r.sigma)
    prm[k.P_GW], prm[k.P_DEAD], prm[k.P_TDC] = g.gate_width, g.dead_time, g.tdc_bin
    prm[k.P_REP] = cfg.rep_period
    prm[k.P_AP] = g.afterpulse_prob
    prm[k.P_WIN] = cfg.coincidence_window
    return prm


def simulate_point(cfg: ExperimentConfig, tau, point_index=0, *, keep_tags=True):
    """Simulate ``cfg.n_pulses`` gates at delay ``tau``.

    Returns a :class:`PointResult` holding the ScanPoint, the two sorted
    timestamp arrays (empty when ``keep_tags`` is false) and drop counters.
    """
    prm = _kernel_params(cfg, float(tau))
    seed = point_seed(cfg, point_index)
    cnt = np.zeros(_kernels.N_COUNTERS, np.int64)
    cap = 0
    if keep_tags:
        cap = int(2.5 * prm[_kernels.P_PMAX] * cfg.n_pulses) + 1024
    while True:
        out_t = np.empty(cap, np.int64)
        out_c = np.empty(cap, np.uint8)
        if _kernels.run_point(prm, seed.copy(), keep_tags, out_t, out_c, cnt) == 0:
            break
        cap *= 2
    k = _kernels
    point = ScanPoint.from_counts(
        float(tau), cfg.n_pulses, int(cnt[k.N1]), int(cnt[k.N2]), int(cnt[k.NC]),
        n_live1=cfg.n_pulses - int(cnt[k.DEAD1]),
        n_live2=cfg.n_pulses - int(cnt[k.DEAD2]),
        n_live12=cfg.n_pulses - int(cnt[k.DEAD12]),
    )
    diagnostics = {}
    for c in range(2):
        diagnostics[f"ch{c}"] = {"dropped_gate": int(cnt[k.DGATE1 + c]),
                                 "dropped_dead": int(cnt[k.DDEAD1 + c]),
                                 "afterpulses": int(cnt[k.AP1 + c])}
    n_tags = int(cnt[k.NTAG])
    t, c = out_t[:n_tags], out_c[:n_tags]
    tags = (t[c == 0].copy(), t[c == 1].copy())
    return PointResult(point, tags, diagnostics)


def _resolve_threads(threads):
    if threads is None or threads == 0:
        return os.cpu_count() or 1
    return max(1, int(threads))


def simulate_scan_detailed(cfg: ExperimentConfig, delays, *, threads=1, keep_tags=False):
    delays = list(delays)
    if not delays:
        raise ValueError("delays must be non-empty")
    work = [(i, float(d)) for i, d in enumerate(delays)]
    n_workers = min(_resolve_threads(threads), len(work))
    if n_workers == 1:
        return [simulate_point(cfg, d, i, keep_tags=keep_tags) for i, d in work]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(lambda w: simulate_point(cfg, w[1], w[0], keep_tags=keep_tags), work))


def simulate_scan(cfg: ExperimentConfig, delays, *, threads=1):
    """One ScanPoint per delay, in the order given."""
    return [r.point for r in simulate_scan_detailed(cfg, delays, threads=threads)]
