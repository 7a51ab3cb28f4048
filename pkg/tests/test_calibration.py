import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from srsjade import (
    AntennaErrorMeasurements,
    CfrMatrix,
    PhaseErrorPolynomial,
    RfChannelResponse,
    calibrate_channel,
    calibrated_steering,
    fit_phase_error,
    ideal_steering,
    synth_error_profile,
)
from srsjade.calibration import (
    CalibrationError,
    antenna_error_fn,
    impaired_steering_model,
    calibrated_steering_model,
    measure_profile,
)


def make_cfr(data, srs64):
    return CfrMatrix(data=np.asarray(data, dtype=complex), srs=srs64)


class TestCalibrateChannel:
    def test_all_ones_gamma_is_identity(self, srs64, rng):
        data = rng.standard_normal((64, 4)) + 1j * rng.standard_normal((64, 4))
        cfr = make_cfr(data, srs64)
        out = calibrate_channel(cfr, RfChannelResponse(np.ones((64, 4))))
        assert np.array_equal(out.data, cfr.data)

    def test_h_equals_gamma_gives_ones(self, srs64, rng):
        g = rng.standard_normal((64, 4)) + 1j * rng.standard_normal((64, 4))
        g += 4.0  # keep entries away from zero
        out = calibrate_channel(make_cfr(g, srs64), RfChannelResponse(g))
        assert_allclose(out.data, np.ones((64, 4)), rtol=1e-14)

    def test_elementwise_quotient_oracle(self, srs64, rng):
        h = rng.standard_normal((64, 4)) + 1j * rng.standard_normal((64, 4))
        g = rng.standard_normal((64, 4)) + 1j * rng.standard_normal((64, 4)) + 3.0
        out = calibrate_channel(make_cfr(h, srs64), RfChannelResponse(g))
        expected = np.array([[h[m, n] / g[m, n] for n in range(4)] for m in range(64)])
        assert_allclose(out.data, expected, rtol=1e-15)

    def test_round_trip_identity(self, srs64, rng):
        # applying gamma then calibrating it away recovers the input
        a = rng.standard_normal((64, 4)) + 1j * rng.standard_normal((64, 4))
        g = np.exp(1j * rng.uniform(-np.pi, np.pi, (64, 4))) * rng.uniform(0.5, 2.0, (64, 4))
        out = calibrate_channel(make_cfr(a * g, srs64), RfChannelResponse(g))
        assert_allclose(out.data, a, rtol=1e-12)

    def test_zero_gamma_rejected(self):
        bad = np.ones((4, 2), dtype=complex)
        bad[1, 1] = 1e-15
        with pytest.raises(ValueError):
            RfChannelResponse(bad)

    def test_shape_mismatch(self, srs64):
        cfr = make_cfr(np.ones((64, 4)), srs64)
        with pytest.raises(CalibrationError):
            calibrate_channel(cfr, RfChannelResponse(np.ones((64, 2))))


class TestFitPhaseError:
    def test_quartic_recovery(self):
        # a known quartic in raw degrees, coefficients recovered after rescaling back
        raw = np.array([[0.05, 2e-3, -1.5e-4, 3e-6, -4e-8]])
        angles = np.arange(-60.0, 61.0, 5.0)
        phases = np.polynomial.polynomial.polyval(angles, raw[0])[None, :]
        poly = fit_phase_error(AntennaErrorMeasurements(angles, phases), order=4)
        assert_allclose(poly.raw_coefficients(), raw, rtol=0, atol=1e-9)

    def test_constant_phase(self):
        angles = np.arange(-60.0, 61.0, 10.0)
        poly = fit_phase_error(
            AntennaErrorMeasurements(angles, np.full((3, angles.size), 0.42)), order=4
        )
        raw = poly.raw_coefficients()
        assert_allclose(raw[:, 0], 0.42, atol=1e-12)
        assert_allclose(raw[:, 1:], 0.0, atol=1e-12)

    def test_default_order_is_four(self):
        angles = np.arange(-60.0, 61.0, 5.0)
        poly = fit_phase_error(
            AntennaErrorMeasurements(angles, np.zeros((2, angles.size)))
        )
        assert poly.order == 4

    def test_too_few_samples(self):
        meas = AntennaErrorMeasurements(np.array([0.0, 10.0, 20.0]), np.zeros((1, 3)))
        with pytest.raises(CalibrationError):
            fit_phase_error(meas, order=4)

    def test_residual_monotone_in_order(self, rng):
        # smooth data (increments below pi) so the input unwrap is a no-op
        angles = np.arange(-60.0, 61.0, 5.0)
        phases = 0.8 * np.sin(angles / 20.0)[None, :] + 0.15 * rng.normal(
            size=(1, angles.size)
        )
        meas = AntennaErrorMeasurements(angles, phases)
        residuals = []
        for order in range(6):
            poly = fit_phase_error(meas, order=order)
            fit = poly.evaluate(angles)
            residuals.append(np.sum((fit - phases) ** 2))
        assert all(residuals[i + 1] <= residuals[i] + 1e-12 for i in range(5))

    def test_unwrap_applied(self):
        # measurements that cross the +-pi branch cut still fit a smooth line
        angles = np.arange(-60.0, 61.0, 5.0)
        true_phase = np.deg2rad(3.5) * angles  # spans beyond +-pi
        wrapped = np.angle(np.exp(1j * true_phase))[None, :]
        poly = fit_phase_error(AntennaErrorMeasurements(angles, wrapped), order=1)
        fit = poly.evaluate(angles)[0]
        # recovered curve matches the unwrapped truth up to a 2*pi multiple
        diff = fit - true_phase
        assert np.ptp(diff) < 1e-9


class TestAntennaErrorFn:
    def test_zero_polynomials(self):
        poly = PhaseErrorPolynomial.zero(4)
        assert_allclose(antenna_error_fn(poly, 12.0), np.ones(4))

    def test_pi_gives_minus_one(self):
        coefs = np.zeros((3, 5))
        coefs[:, 0] = np.pi
        poly = PhaseErrorPolynomial(coefs, (-60.0, 60.0))
        assert_allclose(antenna_error_fn(poly, -30.0), -np.ones(3), rtol=1e-14)

    def test_quartic_matches_direct_evaluation(self, rng):
        coefs = rng.normal(scale=0.2, size=(4, 5))
        poly = PhaseErrorPolynomial(coefs, (-60.0, 60.0))
        x = 10.0 / 60.0
        expected = np.exp(1j * np.polynomial.polynomial.polyval(x, coefs.T))
        assert_allclose(antenna_error_fn(poly, 10.0), expected, rtol=1e-13)

    def test_unit_modulus(self, rng):
        poly = synth_error_profile(3, 40.0)
        assert_allclose(np.abs(antenna_error_fn(poly, 47.0)), 1.0, rtol=1e-14)

    def test_extrapolation_warns(self):
        poly = PhaseErrorPolynomial.zero(2)
        with pytest.warns(UserWarning):
            antenna_error_fn(poly, 75.0)


class TestCalibratedSteering:
    def test_zero_errors_equal_ideal(self, ula4):
        poly = PhaseErrorPolynomial.zero(4)
        assert_allclose(calibrated_steering(ula4, poly, 23.0), ideal_steering(ula4, 23.0))

    def test_broadside_equals_error_fn(self, ula4):
        poly = synth_error_profile(5, 30.0)
        assert_allclose(
            calibrated_steering(ula4, poly, 0.0), antenna_error_fn(poly, 0.0), rtol=1e-14
        )

    def test_unit_modulus_everywhere(self, ula4):
        poly = synth_error_profile(5, 40.0)
        for theta in (-60.0, -17.3, 0.0, 41.0, 60.0):
            assert_allclose(np.abs(calibrated_steering(ula4, poly, theta)), 1.0, rtol=1e-14)

    def test_perfect_calibration_inner_product(self, ula4):
        # same polynomial on both sides: a_hat^H a' equals N
        poly = synth_error_profile(9, 40.0)
        impaired = impaired_steering_model(ula4, poly)
        calibrated = calibrated_steering_model(ula4, poly)
        for theta in (-60.0, -12.4, 33.3, 60.0):
            ip = calibrated.vector(theta).conj() @ impaired.vector(theta)
            assert ip == pytest.approx(4.0, rel=1e-12)


class TestSynthErrorProfile:
    def test_zero_max_phase(self):
        poly = synth_error_profile(1, 0.0)
        assert_allclose(poly.coefficients, 0.0)

    def test_bound_respected(self):
        for seed in range(10):
            poly = synth_error_profile(seed, max_phase_deg=40.0)
            dense = poly.evaluate(np.linspace(-60, 60, 481))
            assert np.max(np.abs(dense)) <= np.deg2rad(40.0) + 1e-12

    def test_deterministic(self):
        a = synth_error_profile(21, 40.0)
        b = synth_error_profile(21, 40.0)
        assert np.array_equal(a.coefficients, b.coefficients)

    def test_edge_divergence(self):
        # profiles should generally peak toward the span edges
        edge_peaked = 0
        for seed in range(20):
            poly = synth_error_profile(seed, 40.0)
            grid = np.linspace(-60, 60, 241)
            vals = np.abs(poly.evaluate(grid))
            edge = vals[:, (grid <= -45) | (grid >= 45)].max()
            inner = vals[:, (grid > -45) & (grid < 45)].max()
            edge_peaked += edge >= inner
        assert edge_peaked >= 14


class TestSerialization:
    def test_measurements_csv_round_trip(self, tmp_path, rng):
        meas = AntennaErrorMeasurements(
            angles_deg=np.arange(-60.0, 61.0, 5.0),
            phase_errors_rad=rng.normal(size=(4, 25)),
        )
        path = tmp_path / "meas.csv"
        meas.save_csv(path)
        back = AntennaErrorMeasurements.load_csv(path)
        assert np.array_equal(back.angles_deg, meas.angles_deg)
        assert np.array_equal(back.phase_errors_rad, meas.phase_errors_rad)
        header = path.read_text().splitlines()[0]
        assert header == "angle_deg,phi_1_rad,phi_2_rad,phi_3_rad,phi_4_rad"

    def test_polynomial_json_round_trip(self, tmp_path):
        poly = synth_error_profile(4, 35.0)
        path = tmp_path / "poly.json"
        poly.to_json(path)
        back = PhaseErrorPolynomial.from_json(path)
        assert np.array_equal(back.coefficients, poly.coefficients)
        assert back.span_deg == poly.span_deg
        blob = json.loads(path.read_text())
        assert set(blob) == {"order", "span_deg", "coefficients"}

    def test_measure_profile_round_trip_through_fit(self):
        profile = synth_error_profile(13, 40.0)
        meas = measure_profile(profile, 5.0)
        fitted = fit_phase_error(meas, order=4)
        grid = np.linspace(-60, 60, 121)
        assert_allclose(fitted.evaluate(grid), profile.evaluate(grid), atol=1e-9)
