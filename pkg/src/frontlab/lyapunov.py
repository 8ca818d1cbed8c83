"""Weighted energy functional and its dissipation in the moving frame.

L[w](t) = int e^{-c2 z} (|w_z|^2 / 2 - F(w) + H(z) F(1)) dz with
F(s) = int_0^s f2, and Q[w] = int e^{-c2 z} (w_zz - c2 w_z + f2(w))^2 dz.
The solution is clamped to 0/1 outside |z| <= m t (quintic blend on the unit
strips) so both integrals converge; along a trajectory L stays bounded,
dL/dt + Q tends to zero once the transition zone has been left behind, and Q
dips toward zero on late windows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pde import ConfigError, Trajectory
from .reaction import BistableNonlinearity, smoothstep

__all__ = [
    "LyapunovSeries",
    "cutoff",
    "eval_L",
    "eval_Q",
    "lyapunov_series",
    "export_series",
]

TAIL_TOL = 1e-10


def cutoff(z: np.ndarray, u: np.ndarray, t: float, m: float) -> np.ndarray:
    """Clamp u to 0/1 outside |z| <= m t with C^2 blends on the unit strips."""
    if t <= 0.0:
        raise ConfigError("cutoff needs t > 0")
    a = m * t
    w = u.copy()
    left_strip = (z > -a - 1.0) & (z < -a)
    right_strip = (z > a) & (z < a + 1.0)
    w[z <= -a - 1.0] = 0.0
    w[z >= a + 1.0] = 1.0
    s = smoothstep(z[left_strip] + a + 1.0)
    w[left_strip] = s * u[left_strip]
    s = smoothstep(z[right_strip] - a)
    w[right_strip] = (1.0 - s) * u[right_strip] + s
    return w


def _weight(z, c2):
    return np.exp(-c2 * z)


def eval_L(z: np.ndarray, w: np.ndarray, c2: float, f2: BistableNonlinearity):
    """(value, tail_warning) of the weighted energy by trapezoid quadrature.

    The Heaviside counterterm H(z) F(1) is integrated analytically so the
    step at z = 0 does not leave an O(h) quadrature wiggle that would pollute
    dL/dt; the rest of the integrand uses the trapezoid rule on the grid.
    """
    h = z[1] - z[0]
    dw = np.gradient(w, h)
    f_pot = f2.potential(w)
    smooth = _weight(z, c2) * (0.5 * dw * dw - f_pot)
    value = float(np.trapz(smooth, dx=h))
    a = max(0.0, z[0])
    if z[-1] > a:
        value += f2.potential_at_1 * (np.exp(-c2 * a) - np.exp(-c2 * z[-1])) / c2

    heaviside_ends = (0.0 if z[0] < 0.0 else 1.0, 1.0)
    full0 = smooth[0] + _weight(z[0], c2) * heaviside_ends[0] * f2.potential_at_1
    full1 = smooth[-1] + _weight(z[-1], c2) * heaviside_ends[1] * f2.potential_at_1
    warning = max(abs(full0), abs(full1)) > TAIL_TOL
    return value, warning


def _elliptic_residual(z, w, c2, f2):
    h = z[1] - z[0]
    res = np.zeros_like(w)
    res[1:-1] = ((w[2:] - 2.0 * w[1:-1] + w[:-2]) / (h * h)
                 - c2 * (w[2:] - w[:-2]) / (2.0 * h)
                 + f2.value(w[1:-1]))
    return res


def eval_Q(z: np.ndarray, w: np.ndarray, c2: float, f2: BistableNonlinearity):
    """(value, tail_warning) of the weighted squared elliptic residual."""
    h = z[1] - z[0]
    res = _elliptic_residual(z, w, c2, f2)
    integrand = _weight(z, c2) * res * res
    warning = max(abs(integrand[1]), abs(integrand[-2])) > TAIL_TOL
    return float(np.trapz(integrand, dx=h)), warning


@dataclass
class LyapunovSeries:
    m: float
    times: np.ndarray
    l_values: np.ndarray
    q_values: np.ndarray
    dl_dt: np.ndarray              # nan at both ends
    identity_residual: np.ndarray  # |dL/dt + Q - cross-term|, nan at ends
    threshold_time: float          # (1 + x0)/(c2 - m)
    tail_warnings: int = 0

    def sup_l(self) -> float:
        return float(np.max(np.abs(self.l_values)))

    def identity_gap(self) -> np.ndarray:
        """|dL/dt + Q| where the centered derivative exists."""
        return np.abs(self.dl_dt + self.q_values)

    def settle_time(self, tol: float) -> float:
        """First time after which |dL/dt + Q| stays below tol."""
        gap = self.identity_gap()
        ok = ~np.isnan(gap)
        bad = ok & (gap > tol)
        if not bad.any():
            first = np.where(ok)[0][0]
            return float(self.times[first])
        last_bad = np.where(bad)[0][-1]
        later = np.where(ok & (np.arange(len(gap)) > last_bad))[0]
        return float(self.times[later[0]]) if later.size else np.inf

    def min_q_late(self, fraction: float = 0.25) -> float:
        k = max(1, int(fraction * len(self.q_values)))
        return float(np.min(self.q_values[-k:]))

    def summary(self, identity_tol: float = 1e-3) -> dict:
        gap = self.identity_gap()
        tail = gap[self.times >= self.threshold_time]
        tail = tail[~np.isnan(tail)]
        return {
            "m": self.m,
            "sup_L": self.sup_l(),
            "threshold_time": self.threshold_time,
            "settle_time": self.settle_time(identity_tol),
            "tail_max_identity_gap": float(tail.max()) if tail.size else None,
            "min_Q_last_quarter": self.min_q_late(),
            "tail_warnings": self.tail_warnings,
        }


def lyapunov_series(traj: Trajectory, m: float, f2: BistableNonlinearity,
                    c2: float, eta: float, x0: float) -> LyapunovSeries:
    """Evaluate L, Q, dL/dt and the cross-term identity along a trajectory.

    The trajectory must be in the moving frame; only snapshots with t > 0
    enter (the cutoff width m t must be positive).  The admissibility bound
    m < min(2 eta / c2, c2) / 2 keeps L uniformly bounded.
    """
    if traj.frame.kind != "moving":
        raise ConfigError("lyapunov_series expects a moving-frame trajectory")
    m_max = 0.5 * min(2.0 * eta / c2, c2)
    if not 0.0 < m < m_max:
        raise ConfigError(f"cutoff slope m={m} outside (0, {m_max:.6g})")

    z = traj.grid.nodes()
    snaps = [s for s in traj.snapshots if s.t > 0.0]
    if len(snaps) < 3:
        raise ConfigError("need at least three snapshots with t > 0")
    times = np.array([s.t for s in snaps])

    fields = [cutoff(z, s.u, s.t, m) for s in snaps]
    l_vals = np.empty(len(snaps))
    q_vals = np.empty(len(snaps))
    warnings = 0
    for k, w in enumerate(fields):
        l_vals[k], warn_l = eval_L(z, w, c2, f2)
        q_vals[k], warn_q = eval_Q(z, w, c2, f2)
        warnings += int(warn_l) + int(warn_q)

    dl = np.full(len(snaps), np.nan)
    identity = np.full(len(snaps), np.nan)
    h = traj.grid.h
    for k in range(1, len(snaps) - 1):
        dt2 = times[k + 1] - times[k - 1]
        dl[k] = (l_vals[k + 1] - l_vals[k - 1]) / dt2
        # cross-term on the blend strips, where w does not solve the equation
        w = fields[k]
        res = _elliptic_residual(z, w, c2, f2)
        wt = (fields[k + 1] - fields[k - 1]) / dt2
        defect = wt - res
        a = m * times[k]
        strips = ((np.abs(z) > a) & (np.abs(z) < a + 1.0))
        integrand = np.where(strips, _weight(z, c2) * res * defect, 0.0)
        cross = -float(np.trapz(integrand, dx=h))
        identity[k] = abs(dl[k] + q_vals[k] - cross)

    return LyapunovSeries(
        m=m, times=times, l_values=l_vals, q_values=q_vals, dl_dt=dl,
        identity_residual=identity,
        threshold_time=(1.0 + x0) / (c2 - m), tail_warnings=warnings)


def export_series(series: LyapunovSeries, csv_path, json_path=None) -> None:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "L", "Q", "dLdt", "identity_residual"])
        for k, t in enumerate(series.times):
            writer.writerow([
                f"{t:.17g}", f"{series.l_values[k]:.17g}",
                f"{series.q_values[k]:.17g}",
                f"{series.dl_dt[k]:.17g}" if np.isfinite(series.dl_dt[k]) else "",
                f"{series.identity_residual[k]:.17g}"
                if np.isfinite(series.identity_residual[k]) else "",
            ])
    if json_path is None:
        json_path = csv_path.with_suffix(".json")
    Path(json_path).write_text(json.dumps(series.summary(), indent=2,
                                          sort_keys=True))
