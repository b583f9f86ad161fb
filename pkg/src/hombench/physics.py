"""Two phase-randomized coherent pulses on a 50/50 beam splitter.

Everything here is a pure function of its arguments.  Mean photon numbers
are per pulse, delays are in picoseconds and phases in radians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Trapezoid nodes over one period of the relative phase.
N_PHASE_NODES = 256
_PHASE_NODES = 2.0 * np.pi * np.arange(N_PHASE_NODES) / N_PHASE_NODES


@dataclass(frozen=True)
class SourceParams:
    """Weak coherent pulse train.

    ``mu`` is the mean photon number per pulse at the beam splitter, i.e.
    with all channel losses already applied.
    """

    mu: float = 0.01
    pulse_fwhm: float = 100.0
    rep_period: float = 10_000.0

    def __post_init__(self):
        if not self.mu >= 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if not self.pulse_fwhm > 0:
            raise ValueError(f"pulse_fwhm must be > 0, got {self.pulse_fwhm}")
        if not self.rep_period > self.pulse_fwhm:
            raise ValueError(
                f"rep_period ({self.rep_period}) must exceed pulse_fwhm ({self.pulse_fwhm})"
            )


@dataclass(frozen=True)
class OverlapModel:
    """Delay dependence of the squared mode overlap.

    ``gamma`` is the FWHM of the resulting dip in ps and ``max_overlap`` the
    squared overlap at zero delay; everything that makes the pulses
    distinguishable at zero delay is lumped into it.
    """

    gamma: float = 80.0
    max_overlap: float = 0.92

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not 0.0 <= self.max_overlap <= 1.0:
            raise ValueError(f"max_overlap must lie in [0, 1], got {self.max_overlap}")


@dataclass(frozen=True)
class ChannelParams:
    efficiency: float = 0.2
    dark_prob: float = 1e-5

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if not 0.0 <= self.dark_prob < 1.0:
            raise ValueError(f"dark_prob must lie in [0, 1), got {self.dark_prob}")


def overlap_sq(tau, model: OverlapModel):
    """Squared mode overlap at delay ``tau`` (scalar or array)."""
    half = 0.5 * model.gamma
    tau = np.asarray(tau, dtype=float)
    # dividing by a factor >= 1 keeps the result <= max_overlap after rounding
    out = model.max_overlap / (1.0 + (tau / half) ** 2)
    return float(out) if out.ndim == 0 else out


def _check_means(mu1, mu2, xi_sq):
    if not (mu1 >= 0 and mu2 >= 0):
        raise ValueError(f"mean photon numbers must be >= 0, got {mu1}, {mu2}")
    if not 0.0 <= xi_sq <= 1.0:
        raise ValueError(f"squared overlap must lie in [0, 1], got {xi_sq}")


def mean_photons_out(mu1, mu2, xi_sq, phi):
    """Mean photon numbers at the two output ports for relative phase ``phi``.

    The interfering part of the two inputs adds with ``+cos(phi)`` in port 1
    and ``-cos(phi)`` in port 2, so ``n1 + n2 == mu1 + mu2`` for any phase.
    ``phi`` may be an array.
    """
    _check_means(mu1, mu2, xi_sq)
    mean = 0.5 * (mu1 + mu2)
    cross = math.sqrt(mu1 * mu2 * xi_sq) * np.cos(phi)
    n1 = mean + cross
    # n2 taken as the complement so the sum is exact in floating point.
    n2 = (mu1 + mu2) - n1
    if np.ndim(n1) == 0:
        return float(n1), float(n2)
    return n1, n2


def click_probs(n1, n2, ch1: ChannelParams, ch2: ChannelParams):
    """Threshold-detector click probabilities for Poissonian light."""
    if np.any(np.asarray(n1) < 0) or np.any(np.asarray(n2) < 0):
        raise ValueError("mean photon numbers must be non-negative")
    p1 = -np.expm1(np.log1p(-ch1.dark_prob) - ch1.efficiency * np.asarray(n1, dtype=float))
    p2 = -np.expm1(np.log1p(-ch2.dark_prob) - ch2.efficiency * np.asarray(n2, dtype=float))
    if np.ndim(p1) == 0 and np.ndim(p2) == 0:
        return float(p1), float(p2)
    return p1, p2


def phase_resolved_probs(mu1, mu2, xi_sq, phi, ch1: ChannelParams, ch2: ChannelParams):
    """Per-phase ``(p1, p2)`` for both detectors; vectorized over ``phi``."""
    n1, n2 = mean_photons_out(mu1, mu2, xi_sq, phi)
    # Guard against -1e-18 style round-off in the complement.
    return click_probs(np.maximum(n1, 0.0), np.maximum(n2, 0.0), ch1, ch2)


def coincidence_prob(mu1, mu2, xi_sq, ch1: ChannelParams, ch2: ChannelParams):
    """Phase-averaged ``(P_coinc, P_D1, P_D2)`` per pulse slot.

    The relative phase of independent gain-switched pulses is uniform, so each
    quantity is averaged over [0, 2pi) with the periodic trapezoid rule.
    """
    p1, p2 = phase_resolved_probs(mu1, mu2, xi_sq, _PHASE_NODES, ch1, ch2)
    return float(np.mean(p1 * p2)), float(np.mean(p1)), float(np.mean(p2))


def g2_from_probs(p_coinc, p_d1, p_d2):
    return p_coinc / (p_d1 * p_d2)


def g2_theory(tau, mu1, mu2, overlap: OverlapModel, ch1: ChannelParams, ch2: ChannelParams):
    """Expected normalized coincidence rate at delay ``tau``.

    In the weak-pulse, noiseless limit this is the Lorentzian
    ``1 - V (G/2)^2 / (tau^2 + (G/2)^2)`` with ``V = max_overlap / 2``.
    """
    if np.ndim(tau):
        return np.array([g2_theory(t, mu1, mu2, overlap, ch1, ch2) for t in np.ravel(tau)])
    pc, p1, p2 = coincidence_prob(mu1, mu2, overlap_sq(tau, overlap), ch1, ch2)
    return g2_from_probs(pc, p1, p2)


def max_slot_click_prob(mu1, mu2, xi_sq, ch1: ChannelParams, ch2: ChannelParams):
    """Upper bound over phase of P(at least one detector clicks)."""
    _check_means(mu1, mu2, xi_sq)
    # 1 - P(no click) is maximal where the lower-efficiency port gets the
    # fewest photons; the extremes sit at phi = 0 and phi = pi.
    best = 0.0
    for phi in (0.0, np.pi):
        n1, n2 = mean_photons_out(mu1, mu2, xi_sq, phi)
        p1, p2 = click_probs(max(n1, 0.0), max(n2, 0.0), ch1, ch2)
        best = max(best, 1.0 - (1.0 - p1) * (1.0 - p2))
    return best
