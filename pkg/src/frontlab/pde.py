"""Semilinear parabolic integrator on a truncated 1-D domain.

Time stepping is IMEX: Crank-Nicolson for diffusion (one banded solve per
step), Heun for the reaction, and a second-order upwind-biased stencil for
the advection term of the moving frame.  Truncation ends carry homogeneous
Neumann conditions; a boundary monitor records how far the end values drift
from their initial asymptotes.

All constructed solutions depend only on the axial coordinate, so the
lateral cross-section of the cylinder is dropped and fields are 1-D.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import cho_solve_banded, cholesky_banded
from scipy.optimize import minimize_scalar

from .reaction import SpatialReaction

__all__ = [
    "SimGrid",
    "Frame",
    "Snapshot",
    "Trajectory",
    "ConfigError",
    "simulate",
    "construct_entire",
    "to_moving_frame",
    "uniqueness_probe",
    "orbit_distance",
    "save_trajectory",
    "load_trajectory",
]

BOUNDARY_THRESHOLD = 1e-6


class ConfigError(ValueError):
    """Invalid run parameters (CFL violation, bad cadence, ...)."""


@dataclass(frozen=True)
class SimGrid:
    """Uniform axial grid."""

    x_min: float
    x_max: float
    h: float

    def __post_init__(self):
        n = (self.x_max - self.x_min) / self.h
        if abs(n - round(n)) > 1e-9:
            raise ConfigError(
                f"(x_max - x_min)/h = {n} must be an integer node count")

    @property
    def n(self) -> int:
        return int(round((self.x_max - self.x_min) / self.h)) + 1

    def nodes(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.n)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "h": self.h, "n": self.n}


@dataclass(frozen=True)
class Frame:
    """Lab frame or a frame co-moving at a fixed speed."""

    kind: str = "lab"         # "lab" | "moving"
    speed: float = 0.0

    def __post_init__(self):
        if self.kind not in ("lab", "moving"):
            raise ConfigError(f"unknown frame kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "speed": self.speed}


@dataclass
class Snapshot:
    t: float
    u: np.ndarray
    frame: Frame = Frame()


@dataclass
class Trajectory:
    """Time-ordered snapshots plus run metadata."""

    grid: SimGrid
    snapshots: list
    dt: float
    reaction: SpatialReaction
    frame: Frame = Frame()
    boundary_value: float = 0.0
    boundary_flagged: bool = False
    clamp_events: int = 0

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def fields(self) -> np.ndarray:
        return np.stack([s.u for s in self.snapshots])

    def snapshot_at(self, t: float, atol: float = 1e-9) -> Snapshot:
        for s in self.snapshots:
            if abs(s.t - t) <= atol:
                return s
        raise KeyError(f"no snapshot at t={t}")

    def values_at(self, t: float, order: str = "cubic") -> np.ndarray:
        """Field at an arbitrary time by interpolating stored snapshots."""
        times = self.times()
        if t < times[0] - 1e-9 or t > times[-1] + 1e-9:
            raise ConfigError(f"t={t} outside stored range [{times[0]}, {times[-1]}]")
        t = min(max(t, times[0]), times[-1])
        if order == "linear" or len(times) < 4:
            k = int(np.searchsorted(times, t))
            k = min(max(k, 1), len(times) - 1)
            w = (t - times[k - 1]) / (times[k] - times[k - 1])
            return (1.0 - w) * self.snapshots[k - 1].u + w * self.snapshots[k].u
        k = int(np.searchsorted(times, t))
        lo = max(0, k - 3)
        hi = min(len(times), k + 3)
        window = np.stack([s.u for s in self.snapshots[lo:hi]])
        return PchipInterpolator(times[lo:hi], window, axis=0)(t)


class _CrankNicolson:
    """Prefactorized CN diffusion solve with Neumann ends."""

    def __init__(self, n: int, h: float, dt: float):
        self.r = dt / (h * h)
        r = self.r
        # symmetrize with half-weights at the Neumann ends, then Cholesky
        diag = np.full(n, 1.0 + r)
        diag[0] = diag[-1] = 0.5 * (1.0 + r)
        upper = np.full(n, -0.5 * r)
        ab = np.zeros((2, n))
        ab[0, 1:] = upper[1:]
        ab[1, :] = diag
        self._cb = cholesky_banded(ab, lower=False, check_finite=False)
        self._dscale = np.ones(n)
        self._dscale[0] = self._dscale[-1] = 0.5

    def step(self, u: np.ndarray) -> np.ndarray:
        r = self.r
        rhs = np.empty_like(u)
        rhs[1:-1] = (1.0 - r) * u[1:-1] + 0.5 * r * (u[:-2] + u[2:])
        rhs[0] = (1.0 - r) * u[0] + r * u[1]
        rhs[-1] = (1.0 - r) * u[-1] + r * u[-2]
        return cho_solve_banded((self._cb, False), self._dscale * rhs,
                                check_finite=False)


def _upwind_dz(u: np.ndarray, h: float) -> np.ndarray:
    """Second-order upwind d/dz for rightward transport (speed > 0)."""
    out = np.empty_like(u)
    out[2:] = (3.0 * u[2:] - 4.0 * u[1:-1] + u[:-2]) / (2.0 * h)
    out[1] = (u[1] - u[0]) / h
    out[0] = 0.0
    return out


def simulate(r: SpatialReaction, grid: SimGrid, u0: np.ndarray, t0: float,
             t_end: float, dt: float, frame: Frame = Frame(),
             snapshot_every: float = 1.0,
             boundary_threshold: float = BOUNDARY_THRESHOLD) -> Trajectory:
    """Integrate the reaction-diffusion equation and record snapshots.

    In the moving frame the reaction is evaluated at the retreating lab
    coordinate x1 = z - c t and the advection term c u_z is added to the
    explicit stage.
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (grid.n,):
        raise ConfigError(f"u0 has shape {u0.shape}, expected ({grid.n},)")
    if np.any(u0 < 0.0) or np.any(u0 > 1.0):
        raise ConfigError("initial data must lie in [0,1]")
    if dt <= 0.0 or t_end <= t0:
        raise ConfigError("need dt > 0 and t_end > t0")
    if dt > 0.5 / r.lipschitz_bound():
        raise ConfigError(
            f"dt={dt} violates reaction stability dt <= {0.5 / r.lipschitz_bound():.3g}")
    c = frame.speed if frame.kind == "moving" else 0.0
    if frame.kind == "moving" and c * dt / grid.h > 1.0 + 1e-12:
        raise ConfigError(f"advection CFL c*dt/h = {c * dt / grid.h:.3g} > 1")

    n_steps = int(round((t_end - t0) / dt))
    if abs(n_steps * dt - (t_end - t0)) > 1e-6 * dt * max(1, n_steps):
        raise ConfigError("(t_end - t0) must be an integer number of steps")
    stride = max(1, int(round(snapshot_every / dt)))

    x = grid.nodes()
    h = grid.h
    cn = _CrankNicolson(grid.n, h, dt)
    if frame.kind == "lab":
        field = r.field_fn(r.chi(x))

        def rate(u, t):
            return field(u)
    else:
        def rate(u, t):
            return r.field_fn(r.chi(x - c * t))(u) - c * _upwind_dz(u, h)

    asym_lo, asym_hi = float(u0[0]), float(u0[-1])
    boundary_value = 0.0
    clamp_events = 0
    u = u0.copy()
    snapshots = [Snapshot(t=t0, u=u.copy(), frame=frame)]

    for step in range(n_steps):
        t = t0 + step * dt
        k1 = rate(u, t)
        k2 = rate(u + dt * k1, t + dt)
        u = u + 0.5 * dt * (k1 + k2)
        u = cn.step(u)
        low = u < 0.0
        high = u > 1.0
        if low.any() or high.any():
            clamp_events += int(low.sum() + high.sum())
            np.clip(u, 0.0, 1.0, out=u)
        boundary_value = max(boundary_value, abs(u[0] - asym_lo),
                             abs(u[-1] - asym_hi))
        if (step + 1) % stride == 0 or step == n_steps - 1:
            snapshots.append(Snapshot(t=t0 + (step + 1) * dt, u=u.copy(),
                                      frame=frame))

    return Trajectory(grid=grid, snapshots=snapshots, dt=dt, reaction=r,
                      frame=frame, boundary_value=boundary_value,
                      boundary_flagged=boundary_value > boundary_threshold,
                      clamp_events=clamp_events)


def to_moving_frame(traj: Trajectory, c: float) -> Trajectory:
    """Resample a lab-frame trajectory onto z = x1 + c t.

    The z-grid reuses the lab nodes; points advected past the stored domain
    continue with the boundary values (flat tails).
    """
    if traj.frame.kind != "lab":
        raise ConfigError("to_moving_frame expects a lab-frame trajectory")
    if c < 0.0:
        raise ConfigError("frame speed must be nonnegative")
    if c == 0.0:
        return traj
    x = traj.grid.nodes()
    frame = Frame("moving", c)
    snapshots = []
    for snap in traj.snapshots:
        interp = PchipInterpolator(x, snap.u)
        xq = np.clip(x - c * snap.t, x[0], x[-1])
        snapshots.append(Snapshot(t=snap.t, u=np.asarray(interp(xq)), frame=frame))
    return Trajectory(grid=traj.grid, snapshots=snapshots, dt=traj.dt,
                      reaction=traj.reaction, frame=frame,
                      boundary_value=traj.boundary_value,
                      boundary_flagged=traj.boundary_flagged,
                      clamp_events=traj.clamp_events)


def construct_entire(r: SpatialReaction, grid: SimGrid, dt: float,
                     n_list, w_minus: Callable[[float, np.ndarray], np.ndarray],
                     t_end: float = 0.0, snapshot_every: float = 1.0,
                     transient: float = 1.0, threads: int = 1):
    """Backward construction of the entire solution at increasing depths.

    Runs one simulation per n starting at t = -n from the subsolution
    w_minus(-n, .), then reports the pairwise ordering gap on shared
    snapshots and the minimum discrete time derivative of the deepest run.
    Returns (trajectories, report dict).
    """
    n_list = list(n_list)
    if len(n_list) < 2:
        raise ConfigError("n_list needs at least two depths")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError("n_list must be strictly increasing")
    x = grid.nodes()

    def run(n):
        u0 = np.clip(w_minus(-float(n), x), 0.0, 1.0)
        return simulate(r, grid, u0, -float(n), t_end, dt,
                        snapshot_every=snapshot_every)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trajectories = list(pool.map(run, n_list))
    else:
        trajectories = [run(n) for n in n_list]

    pair_gaps = {}
    for (n_a, traj_a), (n_b, traj_b) in zip(zip(n_list, trajectories),
                                            zip(n_list[1:], trajectories[1:])):
        gap = np.inf
        for snap in traj_a.snapshots:
            other = traj_b.snapshot_at(snap.t)
            gap = min(gap, float(np.min(other.u - snap.u)))
        pair_gaps[f"{n_b}-vs-{n_a}"] = gap

    deep = trajectories[-1]
    times = deep.times()
    fields = deep.fields()
    usable = times >= times[0] + transient
    min_dt_u = np.inf
    for k in range(1, len(times) - 1):
        if not usable[k]:
            continue
        dudt = (fields[k + 1] - fields[k - 1]) / (times[k + 1] - times[k - 1])
        min_dt_u = min(min_dt_u, float(dudt.min()))

    report = {
        "n_list": n_list,
        "pairwise_min_gap": pair_gaps,
        "min_ordering_gap": min(pair_gaps.values()),
        "min_dt_u_past_transient": min_dt_u,
    }
    return trajectories, report


def _bump(x, center, width=2.0):
    return np.exp(-0.5 * ((x - center) / width) ** 2)


def uniqueness_probe(r: SpatialReaction, grid: SimGrid, dt: float, base_n: int,
                     w_minus: Callable, amplitudes, seed: int = 0,
                     t_end: float = 40.0, late_fraction: float = 0.25,
                     snapshot_every: float = 1.0, eta_level: float = 0.04,
                     threads: int = 1) -> dict:
    """Perturb the backward start and measure late-time orbit separation.

    Each perturbation is a seeded Gaussian bump scaled by 4 u (1-u), which
    confines the perturbed data to (0,1).  Amplitudes above eta_level / 2 are
    rejected (the contraction argument needs the reaction to be damping on
    the perturbed range).
    """
    amplitudes = list(amplitudes)
    if any(abs(a) > 0.5 * eta_level for a in amplitudes):
        raise ConfigError(
            f"perturbation amplitudes must satisfy |eps| <= eta/2 = {0.5 * eta_level}")
    x = grid.nodes()
    u0 = np.clip(w_minus(-float(base_n), x), 0.0, 1.0)
    rng = np.random.default_rng(seed)

    crossings = np.where(np.diff(np.signbit(u0 - 0.5)))[0]
    front = x[crossings[0]] if crossings.size else 0.5 * (x[0] + x[-1])

    runs = [u0]
    for amp in amplitudes:
        center = front + rng.uniform(-5.0, 5.0)
        pert = u0 + amp * _bump(x, center) * 4.0 * u0 * (1.0 - u0)
        if np.any(pert <= 0.0) or np.any(pert >= 1.0):
            raise ConfigError("perturbed initial data leaves (0,1)")
        runs.append(pert)

    def run(u_init):
        return simulate(r, grid, u_init, -float(base_n), t_end, dt,
                        snapshot_every=snapshot_every)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trajectories = list(pool.map(run, runs))
    else:
        trajectories = [run(u) for u in runs]

    base = trajectories[0]
    times = base.times()
    t_late = times[-1] - late_fraction * (times[-1] - times[0])
    late = times >= t_late
    distances = {}
    for amp, traj in zip(amplitudes, trajectories[1:]):
        d = 0.0
        for k in np.where(late)[0]:
            d = max(d, float(np.max(np.abs(traj.snapshots[k].u
                                           - base.snapshots[k].u))))
        distances[amp] = d
    return {
        "base_n": base_n,
        "distances": distances,
        "max_distance": max(distances.values()) if distances else 0.0,
        "trajectories": trajectories,
    }


def orbit_distance(traj_a: Trajectory, traj_b: Trajectory, t_window,
                   shift_bracket: float = 5.0) -> dict:
    """Late-time L-inf distance between two runs after optimal time shift.

    Minimizes max_t ||a(t) - b(t + s)||_inf over the shift s by bounded
    scalar search; sample times come from traj_a's snapshots inside the
    window, pulled in so t + s stays within traj_b's range.
    """
    t_lo, t_hi = t_window
    times = [t for t in traj_a.times() if t_lo <= t <= t_hi]
    if not times:
        raise ConfigError("empty comparison window")
    b_times = traj_b.times()

    def objective(s):
        worst = 0.0
        for t in times:
            ts = min(max(t + s, b_times[0]), b_times[-1])
            worst = max(worst, float(np.max(np.abs(
                traj_a.snapshot_at(t).u - traj_b.values_at(ts)))))
        return worst

    res = minimize_scalar(objective, bounds=(-shift_bracket, shift_bracket),
                          method="bounded", options={"xatol": 1e-4})
    return {"shift": float(res.x), "distance": float(res.fun),
            "unshifted_distance": float(objective(0.0))}


def _reaction_hash(r: SpatialReaction) -> str:
    return hashlib.sha256(
        json.dumps(r.spec(), sort_keys=True).encode()).hexdigest()[:16]


def save_trajectory(traj: Trajectory, directory) -> Path:
    """Write the trajectory store: manifest plus one CSV per snapshot."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    coord = "x" if traj.frame.kind == "lab" else "z"
    coords = traj.grid.nodes()
    index = []
    for snap in traj.snapshots:
        fname = f"snapshot_{snap.t:.6f}.csv"
        with open(directory / fname, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([coord, "u"])
            for xi, ui in zip(coords, snap.u):
                writer.writerow([f"{xi:.17g}", f"{ui:.17g}"])
        index.append({"t": snap.t, "file": fname})
    manifest = {
        "grid": traj.grid.to_dict(),
        "dt": traj.dt,
        "frame": traj.frame.to_dict(),
        "reaction_hash": _reaction_hash(traj.reaction),
        "reaction": traj.reaction.spec(),
        "boundary_value": traj.boundary_value,
        "boundary_flagged": traj.boundary_flagged,
        "clamp_events": traj.clamp_events,
        "snapshots": index,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                        sort_keys=True))
    return directory


def load_trajectory(directory, reaction: Optional[SpatialReaction] = None) -> Trajectory:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    g = manifest["grid"]
    grid = SimGrid(g["x_min"], g["x_max"], g["h"])
    frame = Frame(manifest["frame"]["kind"], manifest["frame"]["speed"])
    snapshots = []
    for entry in manifest["snapshots"]:
        data = np.loadtxt(directory / entry["file"], delimiter=",", skiprows=1)
        snapshots.append(Snapshot(t=entry["t"], u=data[:, 1], frame=frame))
    return Trajectory(grid=grid, snapshots=snapshots, dt=manifest["dt"],
                      reaction=reaction, frame=frame,
                      boundary_value=manifest["boundary_value"],
                      boundary_flagged=manifest["boundary_flagged"],
                      clamp_events=manifest["clamp_events"])
