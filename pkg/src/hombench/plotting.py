"""Static SVG figures.  Output is byte-stable: fixed canvas, fixed hash salt,
no creation date."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import lorentzian_dip  # noqa: E402
from .detector import response_density  # noqa: E402

_RC = {"svg.hashsalt": "hombench", "svg.fonttype": "none", "figure.figsize": (6.0, 4.0),
       "font.size": 10}


def _to_svg(fig):
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def dip_svg(points, fit=None):
    usable = [p for p in points if p.g2 is not None]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        tau = np.array([p.tau for p in usable])
        ax.errorbar(tau, [p.g2 for p in usable], yerr=[p.g2_err for p in usable],
                    fmt="o", ms=4, capsize=2, color="k", label="data")
        if fit is not None and tau.size:
            grid = np.linspace(tau.min(), tau.max(), 400)
            ax.plot(grid, lorentzian_dip(grid, fit.visibility, fit.gamma, fit.baseline, fit.center),
                    color="C3", label=f"V = {fit.visibility:.3f} ± {fit.visibility_err:.3f}")
        ax.set_xlabel("delay τ (ps)")
        ax.set_ylabel("g²(τ)")
        ax.legend(loc="lower right")
        fig.tight_layout()
        return _to_svg(fig)


def histogram_svg(hist, fit=None, window=None):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        c = hist.centers()
        lo, hi = (c[0], c[-1]) if window is None else window
        m = (c >= lo) & (c <= hi)
        ax.step(c[m], hist.counts[m], where="mid", color="k", lw=1, label="detections")
        if fit is not None:
            grid = np.linspace(lo, hi, 800)
            # fitted amplitude is per ps, counts are per bin
            ax.plot(grid, hist.bin_width * response_density(grid, fit.params), color="C0",
                    label=f"fit, FWHM = {fit.fwhm:.1f} ps")
        ax.set_xlabel("time in period (ps)")
        ax.set_ylabel("counts / bin")
        ax.legend(loc="upper right")
        fig.tight_layout()
        return _to_svg(fig)
