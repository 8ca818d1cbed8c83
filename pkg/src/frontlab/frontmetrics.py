"""Front diagnostics: positions, speeds, best-fit shifts, decay fits.

The front position is the unique level crossing (level 0.5 by default);
speeds are centered differences of positions; the shift beta against a
reference profile minimizes the L2 distance while the reported distance is
the uniform norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .pde import Snapshot, Trajectory
from .waves import WaveProfile

__all__ = [
    "FrontSeries",
    "ExtractionError",
    "front_position",
    "fit_shift",
    "speed_series",
    "decay_check",
    "transition_zone",
]


class ExtractionError(RuntimeError):
    """No usable front in a snapshot (no crossing, multiple crossings, ...)."""


@dataclass
class FrontSeries:
    times: np.ndarray
    positions: np.ndarray
    speeds: np.ndarray = field(default=None)       # two shorter than times
    shifts: np.ndarray = field(default=None)
    distances: np.ndarray = field(default=None)

    def terminal_speed(self) -> float:
        """Mean speed over the last quarter of the series."""
        k = max(1, len(self.speeds) // 4)
        return float(np.mean(self.speeds[-k:]))

    def to_rows(self):
        rows = []
        for i, t in enumerate(self.times):
            rows.append({
                "t": float(t),
                "position": float(self.positions[i]),
                "speed": float(self.speeds[i - 1]) if (
                    self.speeds is not None and 1 <= i <= len(self.speeds)) else None,
                "beta": float(self.shifts[i]) if self.shifts is not None else None,
                "dist_inf": float(self.distances[i]) if self.distances is not None else None,
            })
        return rows


def front_position(x: np.ndarray, u: np.ndarray, level: float = 0.5,
                   t: float = None) -> float:
    """Linear interpolation of the unique crossing of `level`."""
    s = u - level
    crossings = np.where(s[:-1] * s[1:] < 0.0)[0]
    exact = np.where(s == 0.0)[0]
    count = len(crossings) + len(exact)
    when = f" at t={t}" if t is not None else ""
    if count == 0:
        raise ExtractionError(f"no crossing of level {level}{when}")
    if count > 1:
        raise ExtractionError(f"{count} crossings of level {level}{when}")
    if len(exact):
        return float(x[exact[0]])
    i = crossings[0]
    return float(x[i] + (level - u[i]) / (u[i + 1] - u[i]) * (x[i + 1] - x[i]))


def fit_shift(x: np.ndarray, u: np.ndarray, profile: WaveProfile,
              base_offset: float = 0.0, bracket: float = 10.0,
              basin_guard: float = 0.4):
    """Best shift of the profile family against a field.

    Minimizes sum_i (u_i - phi(x_i + base_offset + beta))^2 over beta in a
    bracket centered at the level-crossing alignment; returns
    (beta, dist_inf at the optimum).
    """
    try:
        p = front_position(x, u, 0.5)
    except ExtractionError as exc:
        raise ExtractionError(f"fit_shift needs a level crossing: {exc}") from exc
    beta0 = profile.level_crossing(0.5) - p - base_offset

    def l2(beta):
        return float(np.sum((u - profile.eval(x + base_offset + beta)) ** 2))

    res = minimize_scalar(l2, bounds=(beta0 - bracket, beta0 + bracket),
                          method="bounded", options={"xatol": 1e-10})
    beta = float(res.x)
    dist = float(np.max(np.abs(u - profile.eval(x + base_offset + beta))))
    if dist > basin_guard:
        raise ExtractionError(
            f"field is {dist:.3g} from the profile family (guard {basin_guard})")
    return beta, dist


def speed_series(traj: Trajectory, level: float = 0.5,
                 profile: WaveProfile = None) -> FrontSeries:
    """Per-snapshot front positions and centered-difference speeds.

    With a reference profile, also fits the per-snapshot shift beta of
    phi(x + c t + beta) and the uniform distance at the optimum.
    """
    if traj.frame.kind != "lab":
        raise ExtractionError("speed_series expects a lab-frame trajectory")
    x = traj.grid.nodes()
    times = traj.times()
    positions = np.array([front_position(x, s.u, level, t=s.t)
                          for s in traj.snapshots])
    speeds = (positions[2:] - positions[:-2]) / (times[2:] - times[:-2])

    shifts = distances = None
    if profile is not None:
        shifts = np.empty(len(times))
        distances = np.empty(len(times))
        for i, snap in enumerate(traj.snapshots):
            shifts[i], distances[i] = fit_shift(x, snap.u, profile,
                                                base_offset=profile.speed * snap.t)
    return FrontSeries(times=times, positions=positions, speeds=speeds,
                       shifts=shifts, distances=distances)


def _loglinear_rate(z, q, floor=1e-12):
    mask = q > floor
    if mask.sum() < 8:
        return None
    slope = np.polyfit(z[mask], np.log(q[mask]), 1)[0]
    return float(slope)


def decay_check(traj: Trajectory, c2: float, window, fit_margin: float = 4.0,
                edge_fraction: float = 0.1) -> dict:
    """Fit exponential decay rates of |1-u|, |u|, |u_z|, |u_zz|, |u_t| in z.

    For each late time in the window the four quantities are fitted
    log-linearly on each side of the front, excluding the outermost
    `edge_fraction` of the grid; the run passes when every fitted rate is at
    least c2/2.  Quantities without dynamic range are skipped and noted.
    """
    if traj.frame.kind != "moving":
        raise ExtractionError("decay_check expects a moving-frame trajectory")
    z = traj.grid.nodes()
    times = traj.times()
    t_lo, t_hi = window
    picks = [k for k, t in enumerate(times) if t_lo <= t <= t_hi]
    if len(picks) < 3:
        raise ExtractionError("window must contain at least three snapshots")
    picks = picks[1:-1]  # keep temporal neighbors for u_t
    h = traj.grid.h
    edge = int(edge_fraction * len(z))
    results = {}
    skipped = []

    for k in picks[:: max(1, len(picks) // 4)]:
        u = traj.snapshots[k].u
        uz = np.gradient(u, h)
        uzz = np.empty_like(u)
        uzz[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (h * h)
        uzz[0], uzz[-1] = uzz[1], uzz[-2]
        ut = (traj.snapshots[k + 1].u - traj.snapshots[k - 1].u) / (
            times[k + 1] - times[k - 1])
        p = front_position(z, u, 0.5)
        right = (z > p + fit_margin) & (z < z[-edge])
        left = (z < p - fit_margin) & (z > z[edge])
        quantities = {
            "one_minus_u": (np.abs(1.0 - u), "right"),
            "u": (np.abs(u), "left"),
            "u_z": (np.abs(uz), "both"),
            "u_zz": (np.abs(uzz), "both"),
            "u_t": (np.abs(ut), "both"),
        }
        for name, (q, sides) in quantities.items():
            for side, mask, sign in (("right", right, -1.0), ("left", left, 1.0)):
                if sides != "both" and sides != side:
                    continue
                slope = _loglinear_rate(z[mask], q[mask])
                key = f"{name}_{side}"
                if slope is None:
                    skipped.append(f"{key}@t={times[k]:.3g}")
                    continue
                rate = sign * slope
                prev = results.get(key)
                if prev is None or rate < prev:
                    results[key] = rate

    threshold = 0.5 * abs(c2)
    passed = all(rate >= threshold for rate in results.values()) and bool(results)
    return {"rates": results, "sigma_threshold": threshold,
            "passed": passed, "skipped": skipped}


def transition_zone(traj: Trajectory, index: int, eta: float):
    """Interval containing eta <= u <= 1-eta plus min discrete u_t on it.

    Needs both temporal neighbors of the indexed snapshot; an empty zone
    yields (None, None).
    """
    if not 0.0 < eta <= 0.5:
        raise ExtractionError(f"eta must lie in (0, 1/2], got {eta}")
    if not 0 < index < len(traj.snapshots) - 1:
        raise ExtractionError("snapshot needs temporal neighbors for u_t")
    snap = traj.snapshots[index]
    x = traj.grid.nodes()
    mask = (snap.u >= eta) & (snap.u <= 1.0 - eta)
    if not mask.any():
        return None, None
    lo, hi = np.where(mask)[0][[0, -1]]
    t_prev = traj.snapshots[index - 1]
    t_next = traj.snapshots[index + 1]
    dudt = (t_next.u[lo:hi + 1] - t_prev.u[lo:hi + 1]) / (t_next.t - t_prev.t)
    return (float(x[lo]), float(x[hi])), float(dudt.min())
