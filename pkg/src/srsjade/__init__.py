"""Joint DOA/TOA estimation from multichannel OFDM channel frequency responses.

Library layout:

* :mod:`srsjade.model` -- signal-model types and CFR synthesis
* :mod:`srsjade.calibration` -- RF-channel and antenna-error correction
* :mod:`srsjade.preprocessing` -- CIR-domain denoising and dimension reduction
* :mod:`srsjade.toa` -- iterative-adaptive TOA spectral estimators
* :mod:`srsjade.pipeline` -- detection, LOS selection, beamformed DOA, end-to-end runs
* :mod:`srsjade.baselines` -- 2-D periodogram and smoothed-MUSIC references
* :mod:`srsjade.positioning` -- fixes, triangulation, error statistics
* :mod:`srsjade.harness` -- config-driven Monte Carlo and benchmarks
"""

from .calibration import (
    AntennaErrorMeasurements,
    PhaseErrorPolynomial,
    RfChannelResponse,
    calibrate_channel,
    calibrated_steering,
    fit_phase_error,
    synth_error_profile,
)
from .pipeline import AngleGrid, JadeConfig, JadeEstimate, cbf_doa, jade
from .model import (
    ArrayGeometry,
    CfrMatrix,
    NoiseSpec,
    PathParam,
    ScenarioTruth,
    SrsConfig,
    SteeringModel,
    delay_signature,
    ideal_steering,
    snr_scale,
    synthesize_cfr,
)
from .positioning import TrpPose, error_stats, single_site_fix, tdoa, triangulate
from .preprocessing import CirVector, PreprocessConfig, preprocess, remove_phase_slope
from .toa import (
    DelayGrid,
    IaaSettings,
    ToaSpectrum,
    fft_iaa,
    iaa_dense,
    masked_fft_iaa,
    multichannel_toa,
    periodogram_toa,
)

__version__ = "0.1.0"

__all__ = [
    "AngleGrid",
    "AntennaErrorMeasurements",
    "ArrayGeometry",
    "CfrMatrix",
    "CirVector",
    "DelayGrid",
    "IaaSettings",
    "JadeConfig",
    "JadeEstimate",
    "NoiseSpec",
    "PathParam",
    "PhaseErrorPolynomial",
    "PreprocessConfig",
    "RfChannelResponse",
    "ScenarioTruth",
    "SrsConfig",
    "SteeringModel",
    "ToaSpectrum",
    "TrpPose",
    "calibrate_channel",
    "calibrated_steering",
    "cbf_doa",
    "delay_signature",
    "error_stats",
    "fft_iaa",
    "fit_phase_error",
    "iaa_dense",
    "ideal_steering",
    "jade",
    "masked_fft_iaa",
    "multichannel_toa",
    "periodogram_toa",
    "preprocess",
    "remove_phase_slope",
    "single_site_fix",
    "snr_scale",
    "synth_error_profile",
    "synthesize_cfr",
    "tdoa",
    "triangulate",
]
