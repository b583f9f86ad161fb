"""Monte Carlo and analysis toolkit for Hong-Ou-Mandel interference between
weak coherent pulses from independent gain-switched lasers."""

__version__ = "0.1.0"

from .analysis import (DecoyRecord, DipFit, Histogram, build_histogram, count_coincidences,
                       decoy_upper_bound, estimate_g2, fit_dip)
from .detector import (DetectorResponseParams, GateParams, TimeTag, fit_detector_response,
                       response_density, sample_jitter, tag_event)
from .levmar import FitError
from .physics import (ChannelParams, OverlapModel, SourceParams, click_probs, coincidence_prob,
                      g2_theory, mean_photons_out, overlap_sq)
from .simulator import ExperimentConfig, ScanPoint, simulate_point, simulate_scan

__all__ = [
    "ChannelParams", "DecoyRecord", "DetectorResponseParams", "DipFit", "ExperimentConfig",
    "FitError", "GateParams", "Histogram", "OverlapModel", "ScanPoint", "SourceParams", "TimeTag",
    "build_histogram", "click_probs", "coincidence_prob", "count_coincidences",
    "decoy_upper_bound", "estimate_g2", "fit_detector_response", "fit_dip", "g2_theory",
    "mean_photons_out", "overlap_sq", "response_density", "sample_jitter", "simulate_point",
    "simulate_scan", "tag_event",
]
