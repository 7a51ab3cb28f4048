"""Signal-model types and synthetic multichannel CFR generation.

The measurement object is the channel frequency response (CFR) matrix: one
complex sample per occupied subcarrier and receive channel, estimated from a
single uplink sounding symbol.  Everything downstream (calibration,
preprocessing, TOA/DOA estimation) consumes this matrix; no time-domain
waveform processing happens here.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .calibration import PhaseErrorPolynomial, RfChannelResponse

SPEED_OF_LIGHT = 299792458.0


@dataclass(frozen=True)
class SrsConfig:
    """Waveform parameters of the occupied sounding tones.

    ``subcarrier_spacing_hz`` is the spacing of the tones that actually carry
    energy (comb-two sounding at 30 kHz numerology gives 60 kHz effective
    spacing), so empty comb positions are never represented.  The maximum
    delay observable without aliasing is ``1 / subcarrier_spacing_hz``.
    """

    carrier_frequency_hz: float
    subcarrier_spacing_hz: float
    num_subcarriers: int
    symbol_period_s: float | None = None

    def __post_init__(self) -> None:
        if self.carrier_frequency_hz <= 0:
            raise ValueError("carrier frequency must be positive")
        if self.subcarrier_spacing_hz <= 0:
            raise ValueError("subcarrier spacing must be positive")
        if self.num_subcarriers < 2:
            raise ValueError("need at least 2 subcarriers")

    @property
    def unambiguous_delay_s(self) -> float:
        return 1.0 / self.subcarrier_spacing_hz

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency_hz

    def to_dict(self) -> dict:
        return {
            "carrier_frequency_hz": self.carrier_frequency_hz,
            "subcarrier_spacing_hz": self.subcarrier_spacing_hz,
            "num_subcarriers": self.num_subcarriers,
            "symbol_period_s": self.symbol_period_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SrsConfig":
        return cls(
            carrier_frequency_hz=d["carrier_frequency_hz"],
            subcarrier_spacing_hz=d["subcarrier_spacing_hz"],
            num_subcarriers=int(d["num_subcarriers"]),
            symbol_period_s=d.get("symbol_period_s"),
        )


@dataclass(frozen=True)
class ArrayGeometry:
    """Receive array layout along one axis.

    Positions are in meters along the array axis; the element at position 0
    is the phase reference.  A uniform linear array is the special case of
    equally spaced positions, but nothing below requires uniformity.
    """

    element_positions_m: tuple[float, ...]
    wavelength_m: float

    def __post_init__(self) -> None:
        pos = np.asarray(self.element_positions_m, dtype=float)
        if pos.size < 2:
            raise ValueError("need at least 2 elements")
        if np.any(np.diff(pos) <= 0):
            raise ValueError("element positions must be strictly increasing")
        if self.wavelength_m <= 0:
            raise ValueError("wavelength must be positive")

    @property
    def num_elements(self) -> int:
        return len(self.element_positions_m)

    @property
    def positions(self) -> np.ndarray:
        return np.asarray(self.element_positions_m, dtype=float)

    @classmethod
    def ula(cls, num_elements: int, spacing_m: float, wavelength_m: float) -> "ArrayGeometry":
        """Uniform linear array with the first element at the origin."""
        return cls(
            element_positions_m=tuple(np.arange(num_elements) * spacing_m),
            wavelength_m=wavelength_m,
        )

    @classmethod
    def half_wavelength_ula(cls, num_elements: int, carrier_frequency_hz: float) -> "ArrayGeometry":
        lam = SPEED_OF_LIGHT / carrier_frequency_hz
        return cls.ula(num_elements, lam / 2.0, lam)

    def to_dict(self) -> dict:
        return {
            "element_positions_m": list(self.element_positions_m),
            "wavelength_m": self.wavelength_m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayGeometry":
        return cls(tuple(d["element_positions_m"]), d["wavelength_m"])


@dataclass(frozen=True)
class PathParam:
    """One propagation path: direction, delay, complex gain, LOS marker."""

    doa_deg: float
    toa_s: float
    gain: complex
    is_los: bool = False

    def __post_init__(self) -> None:
        if not -90.0 <= self.doa_deg <= 90.0:
            raise ValueError(f"DOA {self.doa_deg} outside [-90, 90] deg")
        if self.toa_s < 0:
            raise ValueError("TOA must be nonnegative")


def validate_path_set(paths: Sequence[PathParam]) -> int:
    """Check the one-LOS-and-earliest invariant, return the LOS index."""
    if not paths:
        raise ValueError("path set is empty")
    los = [i for i, p in enumerate(paths) if p.is_los]
    if len(los) != 1:
        raise ValueError(f"exactly one LOS path required, got {len(los)}")
    k = los[0]
    if any(paths[k].toa_s > p.toa_s for p in paths):
        raise ValueError("LOS path must have the smallest TOA")
    return k


@dataclass(frozen=True)
class NoiseSpec:
    """Circular complex Gaussian noise, total variance split between re/im."""

    variance: float = 2.0

    def __post_init__(self) -> None:
        if self.variance < 0:
            raise ValueError("noise variance must be nonnegative")


@dataclass(frozen=True)
class ScenarioTruth:
    """Ground truth for one reproducible trial."""

    paths: tuple[PathParam, ...]
    snr_db: float
    seed: int

    def __post_init__(self) -> None:
        validate_path_set(self.paths)

    @property
    def los_index(self) -> int:
        return next(i for i, p in enumerate(self.paths) if p.is_los)

    @property
    def los(self) -> PathParam:
        return self.paths[self.los_index]


@dataclass(frozen=True)
class CfrMatrix:
    """M x N channel frequency response (subcarrier x receive channel).

    ``delay_offset_s`` records any constant delay removed by upstream
    processing (phase-slope removal, delay-window re-centering); physical
    TOAs are in-frame estimates plus this offset.
    """

    data: np.ndarray
    srs: SrsConfig
    geometry: ArrayGeometry | None = None
    delay_offset_s: float = 0.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=complex)
        if arr.ndim != 2:
            raise ValueError("CFR data must be 2-D (subcarriers x channels)")
        if arr.shape[0] != self.srs.num_subcarriers:
            raise ValueError(
                f"CFR has {arr.shape[0]} rows but SrsConfig says "
                f"{self.srs.num_subcarriers} subcarriers"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("CFR entries must be finite")
        if self.geometry is not None and self.geometry.num_elements != arr.shape[1]:
            raise ValueError("channel count does not match array geometry")
        object.__setattr__(self, "data", arr)

    @property
    def num_subcarriers(self) -> int:
        return self.data.shape[0]

    @property
    def channel_count(self) -> int:
        return self.data.shape[1]


def delay_signature(srs: SrsConfig, toa_s: float) -> np.ndarray:
    """Frequency-domain signature of a path delay.

    Element m (0-based) is exp(-j 2 pi m df tau): subcarrier 0 is the phase
    reference and later subcarriers rotate backwards with delay.
    """
    if not np.isfinite(toa_s):
        raise ValueError("TOA must be finite")
    m = np.arange(srs.num_subcarriers)
    return np.exp(-2j * np.pi * m * srs.subcarrier_spacing_hz * toa_s)


def ideal_steering(geom: ArrayGeometry, doa_deg: float) -> np.ndarray:
    """Plane-wave array response for an error-free array.

    Element n is exp(+j 2 pi p_n sin(theta) / lambda); positive angles point
    toward increasing element positions, measured from array broadside.
    """
    if not -90.0 <= doa_deg <= 90.0:
        raise ValueError(f"DOA {doa_deg} outside [-90, 90] deg")
    return np.exp(
        2j * np.pi * geom.positions * np.sin(np.deg2rad(doa_deg)) / geom.wavelength_m
    )


def ideal_steering_matrix(geom: ArrayGeometry, angles_deg: np.ndarray) -> np.ndarray:
    """Ideal steering vectors for many angles, stacked as columns (N x Q)."""
    angles_deg = np.asarray(angles_deg, dtype=float)
    sin_t = np.sin(np.deg2rad(angles_deg))
    return np.exp(2j * np.pi * geom.positions[:, None] * sin_t[None, :] / geom.wavelength_m)


@dataclass(frozen=True)
class SteeringModel:
    """Steering-vector function in ideal, impaired, or calibrated form.

    ``phase_errors`` holds per-element phase-error polynomials; for the
    impaired kind they are the true array errors used to synthesize data,
    for the calibrated kind they are the fitted estimate used by estimators.
    The ideal kind ignores them.
    """

    kind: str
    geometry: ArrayGeometry
    phase_errors: "PhaseErrorPolynomial | None" = None

    def __post_init__(self) -> None:
        if self.kind not in ("ideal", "impaired", "calibrated"):
            raise ValueError(f"unknown steering kind {self.kind!r}")
        if self.kind != "ideal" and self.phase_errors is None:
            raise ValueError(f"{self.kind} steering needs phase-error polynomials")

    def vector(self, doa_deg: float) -> np.ndarray:
        return self.matrix(np.array([doa_deg]))[:, 0]

    def matrix(self, angles_deg: np.ndarray) -> np.ndarray:
        """Steering vectors for a batch of angles, shape (N, Q)."""
        a = ideal_steering_matrix(self.geometry, angles_deg)
        if self.kind == "ideal" or self.phase_errors is None:
            return a
        return a * np.exp(1j * self.phase_errors.evaluate(angles_deg))

    def __call__(self, doa_deg: float) -> np.ndarray:
        return self.vector(doa_deg)


def snr_scale(
    paths: Sequence[PathParam], snr_db: float, noise_variance: float = 2.0
) -> tuple[PathParam, ...]:
    """Rescale path gains to a common magnitude hitting the target SNR.

    SNR is defined per path, per subcarrier, per channel as |gain|^2 over the
    total complex noise variance.  Gain phases are preserved.
    """
    if not np.isfinite(snr_db):
        raise ValueError("SNR must be finite")
    mag = np.sqrt(noise_variance * 10.0 ** (snr_db / 10.0))
    out = []
    for p in paths:
        phase = np.angle(p.gain) if p.gain != 0 else 0.0
        out.append(
            PathParam(p.doa_deg, p.toa_s, mag * np.exp(1j * phase), p.is_los)
        )
    return tuple(out)


def synthesize_cfr(
    srs: SrsConfig,
    geom: ArrayGeometry,
    paths: Sequence[PathParam],
    steering: SteeringModel | None = None,
    rf_errors: "RfChannelResponse | None" = None,
    noise: NoiseSpec | None = None,
    seed: int | np.random.Generator | None = None,
) -> CfrMatrix:
    """Build a noisy multipath CFR matrix.

    The clean part is the sum over paths of gain * delay_signature(tau)
    outer steering(theta)^T, optionally multiplied elementwise by an RF
    channel response and perturbed by circular Gaussian noise.  Output is
    deterministic for a fixed seed.
    """
    if not paths:
        raise ValueError("path set is empty")
    if steering is None:
        steering = SteeringModel("ideal", geom)
    if steering.geometry.num_elements != geom.num_elements:
        raise ValueError("steering model geometry does not match array")

    m, n = srs.num_subcarriers, geom.num_elements
    data = np.zeros((m, n), dtype=complex)
    for p in paths:
        data += p.gain * np.outer(delay_signature(srs, p.toa_s), steering.vector(p.doa_deg))

    if rf_errors is not None:
        if rf_errors.gamma.shape != (m, n):
            raise ValueError("RF channel response shape does not match CFR")
        data = data * rf_errors.gamma

    if noise is not None and noise.variance > 0:
        rng = np.random.default_rng(seed)
        scale = np.sqrt(noise.variance / 2.0)
        data = data + scale * (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))

    return CfrMatrix(data=data, srs=srs, geometry=geom)


def save_cfr_csv(cfr: CfrMatrix, path: str | Path) -> None:
    """Write a CFR as CSV rows ``m,n,re,im`` plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "n", "re", "im"])
        for m in range(cfr.num_subcarriers):
            for n in range(cfr.channel_count):
                v = cfr.data[m, n]
                writer.writerow([m, n, repr(float(v.real)), repr(float(v.imag))])
    sidecar = {
        "srs": cfr.srs.to_dict(),
        "array": cfr.geometry.to_dict() if cfr.geometry is not None else None,
        "delay_offset_s": cfr.delay_offset_s,
        "channel_count": cfr.channel_count,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))


def load_cfr_csv(path: str | Path) -> CfrMatrix:
    """Round-trip counterpart of :func:`save_cfr_csv`."""
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    srs = SrsConfig.from_dict(sidecar["srs"])
    geom = ArrayGeometry.from_dict(sidecar["array"]) if sidecar["array"] else None
    n_ch = int(sidecar["channel_count"])
    data = np.zeros((srs.num_subcarriers, n_ch), dtype=complex)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["m", "n", "re", "im"]:
            raise ValueError(f"unexpected CFR CSV header: {header}")
        for row in reader:
            data[int(row[0]), int(row[1])] = float(row[2]) + 1j * float(row[3])
    return CfrMatrix(
        data=data, srs=srs, geometry=geom, delay_offset_s=sidecar.get("delay_offset_s", 0.0)
    )
