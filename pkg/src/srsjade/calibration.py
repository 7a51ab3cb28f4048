"""Array-error models and their correction.

Two error families are handled separately:

* RF channel errors: frequency-selective, direction-independent responses of
  the receive chains, measured as a full matrix and divided out per entry.
* Antenna errors: direction-dependent, frequency-flat phase offsets per
  element, fitted offline as one polynomial of angle per element and folded
  into the steering-vector function used by the DOA estimator.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as npoly

from .model import ArrayGeometry, CfrMatrix, SteeringModel, ideal_steering_matrix

GAMMA_ZERO_THRESHOLD = 1e-12


class CalibrationError(Exception):
    """Raised when a calibration input is unusable."""


@dataclass(frozen=True)
class RfChannelResponse:
    """Measured (or synthetic) amplitude/phase response of the RF chains."""

    gamma: np.ndarray
    provenance: str = "synthetic"

    def __post_init__(self) -> None:
        g = np.asarray(self.gamma, dtype=complex)
        if g.ndim != 2:
            raise ValueError("RF channel response must be 2-D")
        if not np.all(np.isfinite(g)):
            raise ValueError("RF channel response must be finite")
        if np.any(np.abs(g) < GAMMA_ZERO_THRESHOLD):
            raise ValueError("RF channel response contains (near-)zero entries")
        object.__setattr__(self, "gamma", g)


@dataclass(frozen=True)
class AntennaErrorMeasurements:
    """Per-element phase errors sampled on a grid of incident angles."""

    angles_deg: np.ndarray
    phase_errors_rad: np.ndarray  # (N, R)

    def __post_init__(self) -> None:
        ang = np.asarray(self.angles_deg, dtype=float)
        phi = np.asarray(self.phase_errors_rad, dtype=float)
        if ang.ndim != 1 or np.any(np.diff(ang) <= 0):
            raise ValueError("angles must be 1-D and strictly increasing")
        if phi.ndim != 2 or phi.shape[1] != ang.size:
            raise ValueError("phase errors must be (N, R) matching the angle set")
        object.__setattr__(self, "angles_deg", ang)
        object.__setattr__(self, "phase_errors_rad", phi)

    @property
    def num_elements(self) -> int:
        return self.phase_errors_rad.shape[0]

    def save_csv(self, path: str | Path) -> None:
        n = self.num_elements
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["angle_deg"] + [f"phi_{i + 1}_rad" for i in range(n)])
            for r, ang in enumerate(self.angles_deg):
                writer.writerow([repr(float(ang))] + [repr(float(v)) for v in self.phase_errors_rad[:, r]])

    @classmethod
    def load_csv(cls, path: str | Path) -> "AntennaErrorMeasurements":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[0] != "angle_deg":
                raise ValueError(f"unexpected measurements header: {header}")
            rows = [[float(x) for x in row] for row in reader if row]
        arr = np.asarray(rows, dtype=float)
        return cls(angles_deg=arr[:, 0], phase_errors_rad=arr[:, 1:].T)


@dataclass(frozen=True)
class PhaseErrorPolynomial:
    """Per-element phase-error polynomials over a covered angle span.

    Coefficients live in the rescaled variable x in [-1, 1] mapped from
    ``span_deg`` (power-basis conditioning); use :meth:`raw_coefficients` to
    express them back in degrees.
    """

    coefficients: np.ndarray  # (N, order + 1), in the rescaled basis
    span_deg: tuple[float, float]

    def __post_init__(self) -> None:
        c = np.asarray(self.coefficients, dtype=float)
        if c.ndim != 2 or c.shape[1] < 1:
            raise ValueError("coefficients must be (N, order + 1)")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        lo, hi = self.span_deg
        if not lo < hi:
            raise ValueError("span must be an increasing (lo, hi) pair")
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "span_deg", (float(lo), float(hi)))

    @property
    def num_elements(self) -> int:
        return self.coefficients.shape[0]

    @property
    def order(self) -> int:
        return self.coefficients.shape[1] - 1

    def _rescale(self, angles_deg: np.ndarray) -> np.ndarray:
        lo, hi = self.span_deg
        return (2.0 * np.asarray(angles_deg, dtype=float) - lo - hi) / (hi - lo)

    def evaluate(self, angles_deg: np.ndarray, check_span: bool = True) -> np.ndarray:
        """Phase errors in radians, shape (N,) for a scalar or (N, Q) for a batch."""
        angles_deg = np.asarray(angles_deg, dtype=float)
        lo, hi = self.span_deg
        if check_span and np.any((angles_deg < lo - 1e-9) | (angles_deg > hi + 1e-9)):
            warnings.warn(
                f"evaluating phase-error polynomial outside covered span [{lo}, {hi}] deg",
                stacklevel=2,
            )
        return npoly.polyval(self._rescale(angles_deg), self.coefficients.T)

    def raw_coefficients(self) -> np.ndarray:
        """Coefficients in the plain degree basis (N, order + 1)."""
        lo, hi = self.span_deg
        out = []
        for c in self.coefficients:
            p = npoly.Polynomial(c, domain=[lo, hi], window=[-1, 1])
            out.append(p.convert(kind=npoly.Polynomial).coef)
        width = max(len(c) for c in out)
        return np.array([np.pad(c, (0, width - len(c))) for c in out])

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(
                {
                    "order": self.order,
                    "span_deg": list(self.span_deg),
                    "coefficients": self.coefficients.tolist(),
                },
                indent=2,
            )
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "PhaseErrorPolynomial":
        d = json.loads(Path(path).read_text())
        return cls(np.asarray(d["coefficients"], dtype=float), tuple(d["span_deg"]))

    @classmethod
    def zero(cls, num_elements: int, order: int = 4,
             span_deg: tuple[float, float] = (-60.0, 60.0)) -> "PhaseErrorPolynomial":
        return cls(np.zeros((num_elements, order + 1)), span_deg)


def calibrate_channel(cfr: CfrMatrix, gamma: RfChannelResponse) -> CfrMatrix:
    """Divide out the measured RF channel response entry by entry."""
    if gamma.gamma.shape != cfr.data.shape:
        raise CalibrationError(
            f"RF response shape {gamma.gamma.shape} does not match CFR {cfr.data.shape}"
        )
    if np.any(np.abs(gamma.gamma) < GAMMA_ZERO_THRESHOLD):
        raise CalibrationError("RF channel response has (near-)zero entries")
    return CfrMatrix(
        data=cfr.data / gamma.gamma,
        srs=cfr.srs,
        geometry=cfr.geometry,
        delay_offset_s=cfr.delay_offset_s,
    )


def fit_phase_error(meas: AntennaErrorMeasurements, order: int = 4) -> PhaseErrorPolynomial:
    """Least-squares polynomial fit of each element's phase-error curve.

    Angles are rescaled to [-1, 1] before fitting so the power-basis normal
    equations stay well conditioned; measured phases are unwrapped along the
    angle axis first so branch cuts near +-pi cannot corrupt the fit.
    """
    r = meas.angles_deg.size
    if order < 0:
        raise ValueError("polynomial order must be nonnegative")
    if r < order + 1:
        raise CalibrationError(f"{r} samples cannot determine an order-{order} polynomial")
    lo, hi = float(meas.angles_deg[0]), float(meas.angles_deg[-1])
    x = (2.0 * meas.angles_deg - lo - hi) / (hi - lo)
    phases = np.unwrap(meas.phase_errors_rad, axis=1)
    vand = npoly.polyvander(x, order)
    if np.linalg.matrix_rank(vand) < order + 1:
        raise CalibrationError("rank-deficient fit: angle set does not support this order")
    coefs, *_ = np.linalg.lstsq(vand, phases.T, rcond=None)
    return PhaseErrorPolynomial(coefficients=coefs.T, span_deg=(lo, hi))


def antenna_error_fn(poly: PhaseErrorPolynomial, doa_deg: float) -> np.ndarray:
    """Unit-modulus antenna error vector exp(j phi_n(theta))."""
    return np.exp(1j * poly.evaluate(doa_deg))


def calibrated_steering(geom: ArrayGeometry, poly: PhaseErrorPolynomial, doa_deg: float) -> np.ndarray:
    """Ideal steering vector corrected by the fitted antenna error function."""
    a = ideal_steering_matrix(geom, np.array([doa_deg]))[:, 0]
    return a * antenna_error_fn(poly, doa_deg)


def calibrated_steering_model(geom: ArrayGeometry, poly: PhaseErrorPolynomial) -> SteeringModel:
    return SteeringModel(kind="calibrated", geometry=geom, phase_errors=poly)


def impaired_steering_model(geom: ArrayGeometry, poly: PhaseErrorPolynomial) -> SteeringModel:
    return SteeringModel(kind="impaired", geometry=geom, phase_errors=poly)


def synth_error_profile(
    seed: int | np.random.Generator,
    max_phase_deg: float = 40.0,
    num_elements: int = 4,
    span_deg: tuple[float, float] = (-60.0, 60.0),
    order: int = 4,
) -> PhaseErrorPolynomial:
    """Draw a smooth synthetic antenna-error profile.

    Stand-in for a measured dataset: per-element random polynomials whose
    coefficient weights grow with order, so the curves stay small near
    broadside and diverge toward the span edges.  The peak magnitude over
    the span is bounded by ``max_phase_deg`` (scaled per element to a random
    fraction of it), and the draw is deterministic per seed.
    """
    if max_phase_deg < 0:
        raise ValueError("max_phase_deg must be nonnegative")
    rng = np.random.default_rng(seed)
    order_weights = np.array([0.15, 0.35, 0.6, 0.9, 1.2])[: order + 1]
    target = np.deg2rad(max_phase_deg)
    x_dense = np.linspace(-1.0, 1.0, 241)
    coefs = np.zeros((num_elements, order + 1))
    for n in range(num_elements):
        c = rng.standard_normal(order + 1) * order_weights
        fraction = rng.uniform(0.75, 1.0)
        peak = np.max(np.abs(npoly.polyval(x_dense, c)))
        if peak > 0 and target > 0:
            coefs[n] = c * (target * fraction / peak)
    return PhaseErrorPolynomial(coefficients=coefs, span_deg=span_deg)


def measure_profile(
    poly: PhaseErrorPolynomial, step_deg: float = 5.0
) -> AntennaErrorMeasurements:
    """Sample a profile on a regular angle grid, mimicking chamber sweeps."""
    lo, hi = poly.span_deg
    angles = np.arange(lo, hi + step_deg / 2, step_deg)
    return AntennaErrorMeasurements(
        angles_deg=angles, phase_errors_rad=poly.evaluate(angles)
    )
