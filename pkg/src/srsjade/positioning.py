"""Position fixes and error statistics from joint angle/delay estimates.

World-frame convention (documented once, used everywhere)::

        y ^    boresight (heading 0)
          |   /
          |  /          DOA > 0 leans toward +x (increasing element index)
          | / +doa
          |/
          +--------> x

    A pose's ``boresight_deg`` is the world heading of the array broadside,
    counterclockwise positive, with heading 0 pointing along +y.  A target at
    direction-of-arrival ``doa`` and range ``r`` sits at
    ``pose + r * R(boresight) @ [sin(doa), cos(doa)]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(Exception):
    """Raised for degenerate positioning geometry."""


@dataclass(frozen=True)
class TrpPose:
    """Receive-point location and array orientation in the world frame."""

    position_m: tuple[float, float]
    boresight_deg: float = 0.0

    def __post_init__(self) -> None:
        if not all(np.isfinite(self.position_m)) or not np.isfinite(self.boresight_deg):
            raise ValueError("pose must be finite")


@dataclass(frozen=True)
class PositionFix:
    """2-D fix with its provenance and geometric residual."""

    position_m: tuple[float, float]
    method: str
    residual: float = 0.0

    def __post_init__(self) -> None:
        if not all(np.isfinite(self.position_m)):
            raise ValueError("position must be finite")
        if self.residual < 0:
            raise ValueError("residual must be nonnegative")


def bearing_unit(pose: TrpPose, doa_deg: float) -> np.ndarray:
    """World-frame unit vector toward a DOA seen from ``pose``."""
    b = np.deg2rad(pose.boresight_deg)
    d = np.deg2rad(doa_deg)
    local = np.array([np.sin(d), np.cos(d)])
    rot = np.array([[np.cos(b), -np.sin(b)], [np.sin(b), np.cos(b)]])
    return rot @ local


def bearing_range_to(pose: TrpPose, point_m: tuple[float, float]) -> tuple[float, float]:
    """Inverse geometry: (doa_deg, range_m) under which ``pose`` sees a point."""
    delta = np.asarray(point_m, dtype=float) - np.asarray(pose.position_m, dtype=float)
    b = np.deg2rad(pose.boresight_deg)
    rot = np.array([[np.cos(b), np.sin(b)], [-np.sin(b), np.cos(b)]])
    x_loc, y_loc = rot @ delta
    return float(np.rad2deg(np.arctan2(x_loc, y_loc))), float(np.hypot(x_loc, y_loc))


def single_site_fix(pose: TrpPose, doa_deg: float, range_m: float) -> PositionFix:
    """Fix from one receive point's angle and range."""
    if range_m < 0:
        raise ValueError("range must be nonnegative")
    pos = np.asarray(pose.position_m, dtype=float) + range_m * bearing_unit(pose, doa_deg)
    return PositionFix(position_m=(float(pos[0]), float(pos[1])), method="single_site")


def triangulate(
    pose1: TrpPose, doa1_deg: float, pose2: TrpPose, doa2_deg: float,
    min_angle_deg: float = 0.1,
) -> PositionFix:
    """Least-squares intersection of two bearing rays.

    Solves p1 + t1 u1 = p2 + t2 u2; the residual is the distance between the
    per-ray closest points (zero up to rounding for non-parallel 2-D lines).
    """
    u1 = bearing_unit(pose1, doa1_deg)
    u2 = bearing_unit(pose2, doa2_deg)
    cross = u1[0] * u2[1] - u1[1] * u2[0]
    if abs(cross) < np.sin(np.deg2rad(min_angle_deg)):
        raise GeometryError(
            f"bearing rays are within {min_angle_deg} deg of parallel"
        )
    p1 = np.asarray(pose1.position_m, dtype=float)
    p2 = np.asarray(pose2.position_m, dtype=float)
    t = np.linalg.solve(np.column_stack([u1, -u2]), p2 - p1)
    q1 = p1 + t[0] * u1
    q2 = p2 + t[1] * u2
    mid = 0.5 * (q1 + q2)
    return PositionFix(
        position_m=(float(mid[0]), float(mid[1])),
        method="triangulation",
        residual=float(np.linalg.norm(q1 - q2)),
    )


def tdoa(toa1_s: float, toa2_s: float) -> float:
    """Difference of arrival times; a shared clock offset cancels."""
    return toa1_s - toa2_s


def error_stats(
    estimates: np.ndarray, truths: np.ndarray, percentiles: tuple[float, ...] = (50.0, 80.0, 90.0)
) -> dict:
    """RMSE, absolute-error percentiles, and the empirical CDF table.

    RMSE uses signed errors; percentiles and the CDF use absolute errors.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if est.shape != tru.shape or est.ndim != 1 or est.size == 0:
        raise ValueError("estimates and truths must be equal-length 1-D arrays")
    err = est - tru
    abs_err = np.sort(np.abs(err))
    cdf = np.arange(1, abs_err.size + 1) / abs_err.size
    return {
        "rmse": float(np.sqrt(np.mean(err**2))),
        "percentiles": {
            str(float(p)): float(np.percentile(np.abs(err), p)) for p in percentiles
        },
        "cdf": [[float(v), float(c)] for v, c in zip(abs_err, cdf)],
    }
