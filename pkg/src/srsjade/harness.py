"""Configuration-driven experiment harness.

One declarative JSON config describes waveform, array, scenario sweep,
calibration, preprocessing, grids, and estimator list; the harness runs
seeded Monte Carlo sweeps, wall-time benchmarks, and emits CSV/JSON results
plus per-figure plot tables.  Every byte of output except wall times is a
pure function of (config, master seed): per-trial generators are derived
from the master seed with counter-based seed sequences, so trials can be
sharded across workers without coordination.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import baselines, calibration, model, pipeline, positioning, preprocessing, toa

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None


class ConfigError(Exception):
    """Invalid experiment configuration; message carries the field path."""


ESTIMATOR_NAMES = ("fft_iaa", "dense_iaa", "periodogram", "music")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "waveform"],
    "properties": {
        "schema_version": {"const": 1},
        "waveform": {
            "type": "object",
            "additionalProperties": False,
            "required": ["carrier_frequency_hz", "subcarrier_spacing_hz", "num_subcarriers"],
            "properties": {
                "carrier_frequency_hz": _POS,
                "subcarrier_spacing_hz": _POS,
                "num_subcarriers": {"type": "integer", "minimum": 2},
            },
        },
        "array": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_elements": {"type": "integer", "minimum": 2},
                "spacing_m": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path_counts": {"type": "array", "items": _INT, "minItems": 1},
                "snr_db": {"type": "array", "items": _NUM, "minItems": 1},
                "trials": _INT,
                "doa_span_deg": _PAIR,
                "toa_span_ns": _PAIR,
                "noise_variance": _POS,
            },
        },
        "calibration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "profile_seed": {"type": "integer", "minimum": 0},
                "max_phase_deg": {"type": "number", "minimum": 0},
                "measurement_step_deg": _POS,
                "fit_order": {"type": "integer", "minimum": 0},
            },
        },
        "preprocess": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "ifft_points": {"type": "integer", "minimum": 2},
                "window_lo_ns": _NUM,
                "window_hi_ns": _NUM,
                "fft_points_out": {"type": "integer", "minimum": 2},
            },
        },
        "estimators": {
            "type": "array",
            "items": {"enum": list(ESTIMATOR_NAMES)},
            "minItems": 1,
        },
        "grids": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delay_points": {"type": ["integer", "null"], "minimum": 2},
                "angle_lo_deg": _NUM,
                "angle_hi_deg": _NUM,
                "angle_step_deg": _POS,
                "search_range_m": _PAIR,
            },
        },
        "iaa": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iterations": _INT,
                "convergence_tol": _POS,
                "diagonal_loading": {"type": "number", "minimum": 0},
            },
        },
        "detection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"threshold_db": _POS},
        },
        "smoothing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"freq_order": _INT, "space_order": _INT},
        },
        "positioning": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"trp_position_m": _PAIR, "boresight_deg": _NUM},
        },
    },
}

DEFAULTS = {
    "array": {"num_elements": 4, "spacing_m": None},
    "scenario": {
        "path_counts": [5],
        "snr_db": [-10.0],
        "trials": 100,
        "doa_span_deg": [-60.0, 60.0],
        "toa_span_ns": [0.0, 166.67],
        "noise_variance": 2.0,
    },
    "calibration": {
        "enabled": True,
        "profile_seed": 7,
        "max_phase_deg": 40.0,
        "measurement_step_deg": 5.0,
        "fit_order": 4,
    },
    "preprocess": {
        "enabled": False,
        "ifft_points": 2048,
        "window_lo_ns": -256.0,
        "window_hi_ns": 256.0,
        "fft_points_out": 64,
    },
    "estimators": ["fft_iaa"],
    "grids": {
        "delay_points": None,
        "angle_lo_deg": -60.0,
        "angle_hi_deg": 60.0,
        "angle_step_deg": 0.2,
        "search_range_m": [0.0, 50.0],
    },
    "iaa": {"max_iterations": 15, "convergence_tol": 1e-4, "diagonal_loading": 1e-8},
    "detection": {"threshold_db": 10.0},
    "smoothing": {"freq_order": 6, "space_order": 2},
    "positioning": {"trp_position_m": [0.0, 0.0], "boresight_deg": 0.0},
}


def validate_config(raw: dict) -> dict:
    """Schema-check a raw config dict and fill defaults for absent blocks."""
    if jsonschema is not None:
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "$" + "".join(f".{p}" if isinstance(p, str) else f"[{p}]" for p in exc.absolute_path)
            raise ConfigError(f"{path}: {exc.message}") from exc
    elif "waveform" not in raw:  # pragma: no cover
        raise ConfigError("$.waveform: required")
    cfg = {}
    for key, block in DEFAULTS.items():
        if isinstance(block, dict):
            cfg[key] = {**block, **raw.get(key, {})}
        else:
            cfg[key] = raw.get(key, block)
    cfg["waveform"] = dict(raw["waveform"])
    return cfg


def load_config(path: str | Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate_config(raw)


@dataclass(frozen=True)
class Environment:
    """Everything a trial needs, derived once from the config."""

    srs: model.SrsConfig
    geometry: model.ArrayGeometry
    true_steering: model.SteeringModel
    jade_configs: dict[str, pipeline.JadeConfig]
    smoothing: baselines.SmoothingConfig
    pose: positioning.TrpPose
    scenario: dict
    estimators: tuple[str, ...]


def build_environment(cfg: dict) -> Environment:
    wf = cfg["waveform"]
    srs = model.SrsConfig(
        carrier_frequency_hz=wf["carrier_frequency_hz"],
        subcarrier_spacing_hz=wf["subcarrier_spacing_hz"],
        num_subcarriers=int(wf["num_subcarriers"]),
    )
    arr = cfg["array"]
    spacing = arr["spacing_m"] if arr["spacing_m"] is not None else srs.wavelength_m / 2.0
    geometry = model.ArrayGeometry.ula(int(arr["num_elements"]), spacing, srs.wavelength_m)

    cal = cfg["calibration"]
    ideal = model.SteeringModel("ideal", geometry)
    if cal["enabled"]:
        profile = calibration.synth_error_profile(
            seed=int(cal["profile_seed"]),
            max_phase_deg=float(cal["max_phase_deg"]),
            num_elements=geometry.num_elements,
        )
        measurements = calibration.measure_profile(profile, float(cal["measurement_step_deg"]))
        fitted = calibration.fit_phase_error(measurements, int(cal["fit_order"]))
        true_steering = calibration.impaired_steering_model(geometry, profile)
        calibrated = calibration.calibrated_steering_model(geometry, fitted)
    else:
        true_steering = ideal
        calibrated = ideal

    g = cfg["grids"]
    angle_grid = pipeline.AngleGrid.regular(g["angle_lo_deg"], g["angle_hi_deg"], g["angle_step_deg"])
    search_span = (
        g["search_range_m"][0] / model.SPEED_OF_LIGHT,
        g["search_range_m"][1] / model.SPEED_OF_LIGHT,
    )
    pp = cfg["preprocess"]
    pre = (
        preprocessing.PreprocessConfig.from_ns(
            int(pp["ifft_points"]), pp["window_lo_ns"], pp["window_hi_ns"], int(pp["fft_points_out"])
        )
        if pp["enabled"]
        else None
    )
    iaa = toa.IaaSettings(
        max_iterations=int(cfg["iaa"]["max_iterations"]),
        convergence_tol=float(cfg["iaa"]["convergence_tol"]),
        diagonal_loading=float(cfg["iaa"]["diagonal_loading"]),
    )
    delay_points = cfg["grids"]["delay_points"]
    delay_points = int(delay_points) if delay_points is not None else None

    def make(steering: model.SteeringModel, impl: str) -> pipeline.JadeConfig:
        return pipeline.JadeConfig(
            steering=steering,
            angle_grid=angle_grid,
            iaa=iaa,
            impl=impl,
            delay_points=delay_points,
            search_span_s=search_span,
            detection_threshold_db=float(cfg["detection"]["threshold_db"]),
            preprocess=pre,
        )

    # proposed estimators use the calibrated model; 2-D baselines need the
    # ideal Vandermonde manifold and cannot absorb direction-dependent errors
    jade_configs = {
        "fft_iaa": make(calibrated, "fft"),
        "dense_iaa": make(calibrated, "dense"),
        "periodogram": make(ideal, "fft"),
        "music": make(ideal, "fft"),
    }
    pos = cfg["positioning"]
    return Environment(
        srs=srs,
        geometry=geometry,
        true_steering=true_steering,
        jade_configs=jade_configs,
        smoothing=baselines.SmoothingConfig(
            int(cfg["smoothing"]["freq_order"]), int(cfg["smoothing"]["space_order"])
        ),
        pose=positioning.TrpPose(tuple(pos["trp_position_m"]), pos["boresight_deg"]),
        scenario=cfg["scenario"],
        estimators=tuple(cfg["estimators"]),
    )


def generate_scenario(
    env: Environment, path_count: int, snr_db: float, master_seed: int, cell: int, trial: int
) -> model.ScenarioTruth:
    """Counter-seeded random scenario: uniform DOAs/TOAs, equal-gain paths."""
    ss = np.random.SeedSequence([int(master_seed), int(cell), int(trial)])
    rng = np.random.default_rng(ss)
    sc = env.scenario
    doa_lo, doa_hi = sc["doa_span_deg"]
    toa_lo, toa_hi = (v * 1e-9 for v in sc["toa_span_ns"])
    doas = rng.uniform(doa_lo, doa_hi, path_count)
    toas = rng.uniform(toa_lo, toa_hi, path_count)
    phases = rng.uniform(0.0, 2.0 * np.pi, path_count)
    los = int(np.argmin(toas))
    paths = tuple(
        model.PathParam(doas[k], toas[k], np.exp(1j * phases[k]), is_los=(k == los))
        for k in range(path_count)
    )
    paths = model.snr_scale(paths, snr_db, sc["noise_variance"])
    return model.ScenarioTruth(paths=paths, snr_db=snr_db, seed=int(ss.generate_state(1)[0]))


def synthesize_trial(
    env: Environment, truth: model.ScenarioTruth, master_seed: int, cell: int, trial: int
) -> model.CfrMatrix:
    noise_ss = np.random.SeedSequence([int(master_seed), int(cell), int(trial), 1])
    return model.synthesize_cfr(
        env.srs,
        env.geometry,
        truth.paths,
        steering=env.true_steering,
        noise=model.NoiseSpec(env.scenario["noise_variance"]),
        seed=np.random.default_rng(noise_ss),
    )


def run_estimator(env: Environment, name: str, cfr: model.CfrMatrix,
                  model_order: int | None = None) -> pipeline.JadeEstimate:
    cfg = env.jade_configs[name]
    if name in ("fft_iaa", "dense_iaa"):
        return pipeline.jade(cfr, cfg)
    if name == "periodogram":
        return baselines.periodogram_jade(cfr, cfg)
    if name == "music":
        return baselines.music_jade(cfr, cfg, env.smoothing, model_order)
    raise ConfigError(f"$.estimators: unknown estimator {name!r}")


@dataclass(frozen=True)
class TrialRecord:
    """One trial: ground truth plus every estimator's result and errors.

    Replayable: the stored (path_count, snr_db, trial) plus the sweep's
    master seed regenerate the scenario, the CFR, and hence the estimates
    bit-for-bit.  ``errors`` holds (doa_err_deg, toa_err_ns, pos_err_m).
    """

    path_count: int
    snr_db: float
    trial: int
    seed: int
    truth: model.ScenarioTruth
    estimates: dict[str, "pipeline.JadeEstimate"]
    errors: dict[str, tuple[float, float, float]]
    wall_ns: dict[str, int]

    def rows(self):
        """Flat per-estimator tuples in estimator-name order."""
        for name in sorted(self.estimates):
            doa, toa, pos = self.errors[name]
            yield name, doa, toa, pos, self.wall_ns[name]


def _run_trial(env: Environment, master_seed: int, cell: int, path_count: int,
               snr_db: float, trial: int) -> TrialRecord:
    truth = generate_scenario(env, path_count, snr_db, master_seed, cell, trial)
    cfr = synthesize_trial(env, truth, master_seed, cell, trial)
    los = truth.los
    truth_pos = positioning.single_site_fix(
        env.pose, los.doa_deg, los.toa_s * model.SPEED_OF_LIGHT
    ).position_m
    estimates, errors, walls = {}, {}, {}
    for name in env.estimators:
        t0 = time.perf_counter_ns()
        est = run_estimator(env, name, cfr, model_order=path_count if name == "music" else None)
        walls[name] = int(time.perf_counter_ns() - t0)
        fix = positioning.single_site_fix(env.pose, est.doa_deg, est.toa_s * model.SPEED_OF_LIGHT)
        estimates[name] = est
        errors[name] = (
            float(est.doa_deg - los.doa_deg),
            float((est.toa_s - los.toa_s) * 1e9),
            float(np.hypot(fix.position_m[0] - truth_pos[0], fix.position_m[1] - truth_pos[1])),
        )
    return TrialRecord(
        path_count=path_count,
        snr_db=snr_db,
        trial=trial,
        seed=truth.seed,
        truth=truth,
        estimates=estimates,
        errors=errors,
        wall_ns=walls,
    )


_WORKER_ENV: Environment | None = None
_WORKER_SEED: int = 0


def _init_worker(cfg: dict, master_seed: int) -> None:
    global _WORKER_ENV, _WORKER_SEED
    _WORKER_ENV = build_environment(cfg)
    _WORKER_SEED = master_seed


def _worker_trial(args: tuple[int, int, float, int]) -> TrialRecord:
    cell, path_count, snr_db, trial = args
    return _run_trial(_WORKER_ENV, _WORKER_SEED, cell, path_count, snr_db, trial)


def run_monte_carlo(
    cfg: dict, master_seed: int = 0, workers: int = 1, out_dir: str | Path | None = None
) -> list[TrialRecord]:
    """Run the configured sweep; optionally write results and summaries.

    Outputs (results.csv, summary.json, plot tables) are deterministic for a
    fixed (config, master seed); wall times go to a separate timing.json.
    """
    env = build_environment(cfg)
    sc = env.scenario
    cells = [
        (idx, int(pc), float(snr))
        for idx, (pc, snr) in enumerate(
            (pc, snr) for pc in sc["path_counts"] for snr in sc["snr_db"]
        )
    ]
    tasks = [
        (cell, pc, snr, trial)
        for cell, pc, snr in cells
        for trial in range(int(sc["trials"]))
    ]
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(cfg, master_seed)
        ) as pool:
            records = list(pool.map(_worker_trial, tasks, chunksize=4))
    else:
        records = [_run_trial(env, master_seed, *t) for t in tasks]
    records.sort(key=lambda r: (r.path_count, r.snr_db, r.trial))
    if out_dir is not None:
        write_results(records, cfg, master_seed, Path(out_dir))
    return records


def write_results(records: list[TrialRecord], cfg: dict, master_seed: int, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "results.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["path_count", "snr_db", "trial", "estimator", "doa_err_deg", "toa_err_ns", "pos_err_m"]
        )
        for r in records:
            for name, doa, toa, pos, _ in r.rows():
                writer.writerow(
                    [r.path_count, repr(r.snr_db), r.trial, name,
                     repr(doa), repr(toa), repr(pos)]
                )
    (out_dir / "summary.json").write_text(json.dumps(summarize(records, master_seed), indent=2))
    timing = {}
    for r in records:
        for name, wall in r.wall_ns.items():
            timing.setdefault(name, []).append(wall)
    (out_dir / "timing.json").write_text(
        json.dumps(
            {
                name: {"mean_ms": float(np.mean(v) / 1e6), "median_ms": float(np.median(v) / 1e6)}
                for name, v in timing.items()
            },
            indent=2,
        )
    )
    emit_plot_data(records, out_dir / "plots")


def summarize(records: list[TrialRecord], master_seed: int) -> dict:
    cells: dict[tuple, list] = {}
    for r in records:
        for name, doa, toa, pos, _ in r.rows():
            cells.setdefault((r.path_count, r.snr_db, name), []).append((doa, toa, pos))
    out = []
    for (pc, snr, name), rows in sorted(cells.items()):
        zero = [0.0] * len(rows)
        doa = positioning.error_stats([x[0] for x in rows], zero)
        toa = positioning.error_stats([x[1] for x in rows], zero)
        pos = positioning.error_stats([x[2] for x in rows], zero)
        out.append(
            {
                "path_count": pc,
                "snr_db": snr,
                "estimator": name,
                "trials": len(rows),
                "doa_deg": {"rmse": doa["rmse"], "percentiles": doa["percentiles"]},
                "toa_ns": {"rmse": toa["rmse"], "percentiles": toa["percentiles"]},
                "pos_m": {"rmse": pos["rmse"], "percentiles": pos["percentiles"]},
            }
        )
    return {"master_seed": master_seed, "cells": out}


def emit_plot_data(records: list[TrialRecord], out_dir: Path) -> None:
    """Per-figure CSVs: error CDFs per cell and percentile-vs-SNR tables."""
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = {"doa_deg": 0, "toa_ns": 1, "pos_m": 2}
    cells: dict[tuple, list] = {}
    for r in records:
        for name, doa, toa, pos, _ in r.rows():
            cells.setdefault((r.path_count, r.snr_db, name), []).append((abs(doa), abs(toa), pos))

    for metric, col in metrics.items():
        for (pc, snr, name), rows in sorted(cells.items()):
            path = out_dir / f"cdf_{metric}_paths{pc}_snr{snr:+g}_{name}.csv"
            errors = np.sort([row[col] for row in rows])
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["error", "cum_fraction"])
                for i, e in enumerate(errors):
                    writer.writerow([repr(float(e)), repr((i + 1) / errors.size)])
        # 80th percentile vs SNR, one file per path count
        by_pc: dict[int, dict] = {}
        for (pc, snr, name), rows in cells.items():
            by_pc.setdefault(pc, {}).setdefault(name, {})[snr] = float(
                np.percentile([row[col] for row in rows], 80.0)
            )
        for pc, by_name in sorted(by_pc.items()):
            path = out_dir / f"p80_{metric}_vs_snr_paths{pc}.csv"
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["snr_db", "estimator", "p80"])
                for name, by_snr in sorted(by_name.items()):
                    for snr, val in sorted(by_snr.items()):
                        writer.writerow([repr(snr), name, repr(val)])
    if not records:
        for metric in metrics:
            (out_dir / f"cdf_{metric}_empty.csv").write_text("error,cum_fraction\n")


def run_benchmark(
    cfg: dict, runs: int = 50, master_seed: int = 0, out_dir: str | Path | None = None
) -> dict:
    """Median/mean wall time per estimator on one fixed scenario.

    Timing wraps the estimator call only; any configured preprocessing is
    applied once up front so all estimators see the same already-reduced
    matrix (the estimator configs are stripped of their preprocess stage).
    """
    env = build_environment(cfg)
    sc = env.scenario
    truth = generate_scenario(env, int(sc["path_counts"][0]), float(sc["snr_db"][0]), master_seed, 0, 0)
    cfr = synthesize_trial(env, truth, master_seed, 0, 0)
    pre = env.jade_configs["fft_iaa"].preprocess
    if pre is not None:
        cfr = preprocessing.preprocess(cfr, pre)
        stripped = {
            name: replace(jc, preprocess=None) for name, jc in env.jade_configs.items()
        }
        env = replace(env, jade_configs=stripped)
    order = int(sc["path_counts"][0])
    table = {}
    for name in env.estimators:
        for _ in range(3):  # warm-up
            run_estimator(env, name, cfr, model_order=order if name == "music" else None)
        samples = []
        for _ in range(runs):
            t0 = time.perf_counter_ns()
            run_estimator(env, name, cfr, model_order=order if name == "music" else None)
            samples.append(time.perf_counter_ns() - t0)
        table[name] = {
            "runs": runs,
            "median_ms": float(np.median(samples) / 1e6),
            "mean_ms": float(np.mean(samples) / 1e6),
        }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "benchmark.json").write_text(json.dumps(table, indent=2))
    return table
