"""Traveling-wave profiles: boundary-value solver and asymptotic constants.

Solves phi'' - c phi' + f(phi) = 0 with phi(-inf)=0, phi(+inf)=1 on a
truncated grid.  The speed c is an extra unknown closed by the phase
condition phi(0) = theta; the truncation ends carry Robin conditions built
from the linearized decay rates, which keeps the domain error higher order
than a Dirichlet clamp.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sparse
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import spsolve

from .reaction import BistableNonlinearity, ReactionError

__all__ = [
    "WaveProfile",
    "EnvelopeConstants",
    "WaveSolveError",
    "decay_rates",
    "solve_wave",
    "fit_envelope_constants",
    "export_profile",
    "load_profile_meta",
]


class WaveSolveError(RuntimeError):
    """Newton failed to converge; carries the last iterate for diagnosis."""

    def __init__(self, message, phi=None, c=None, residual=None):
        super().__init__(message)
        self.phi = phi
        self.c = c
        self.residual = residual


def decay_rates(f: BistableNonlinearity, c: float):
    """(lambda, mu): positive roots of the linearizations at 0 and 1.

    lambda solves x^2 - c x + f'(0) = 0, mu solves x^2 + c x + f'(1) = 0.
    """
    d0, d1 = f.derivative_at_0, f.derivative_at_1
    if d0 >= 0.0 or d1 >= 0.0:
        raise ReactionError(
            f"decay rates need negative endpoint slopes (got {d0}, {d1})")
    lam = 0.5 * (c + np.sqrt(c * c - 4.0 * d0))
    mu = 0.5 * (-c + np.sqrt(c * c - 4.0 * d1))
    return float(lam), float(mu)


def _dlambda_dc(f, c):
    return 0.5 * (1.0 + c / np.sqrt(c * c - 4.0 * f.derivative_at_0))


def _dmu_dc(f, c):
    return 0.5 * (-1.0 + c / np.sqrt(c * c - 4.0 * f.derivative_at_1))


@dataclass
class EnvelopeConstants:
    """Two-sided exponential sandwich constants for phi and phi'.

    alpha0 e^{lam z} <= phi <= beta0 e^{lam z} on z <= 0, and
    alpha1 e^{-mu z} <= 1-phi <= beta1 e^{-mu z} on z > 0; gamma/delta pairs
    bound phi' the same way.  Fitted over the profile grid only.
    """

    alpha0: float
    beta0: float
    alpha1: float
    beta1: float
    gamma0: float
    delta0: float
    gamma1: float
    delta1: float
    fitted_range: tuple = (0.0, 0.0)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("alpha0", "beta0", "alpha1", "beta1",
                 "gamma0", "delta0", "gamma1", "delta1")} | {
                "fitted_range": list(self.fitted_range)}


@dataclass
class WaveProfile:
    """A converged traveling wave (c, phi) on a uniform grid.

    Normalized so phi(0) = theta.  Off-grid evaluation uses a clamped C^2
    cubic spline inside the grid and the matched exponential tails outside;
    values are always strictly inside (0, 1).
    """

    speed: float
    z: np.ndarray
    values: np.ndarray
    theta: float
    lam: float
    mu: float
    residual_norm: float
    c_phi: float = 0.0
    envelope: EnvelopeConstants = None
    _spline: CubicSpline = field(default=None, repr=False)
    _alpha_left: float = field(default=0.0, repr=False)
    _alpha_right: float = field(default=0.0, repr=False)

    def __post_init__(self):
        z, phi = self.z, self.values
        # clamped ends: slopes from the Robin closure keep the spline C^2
        # and consistent with the tails
        left_slope = self.lam * phi[0]
        right_slope = self.mu * (1.0 - phi[-1])
        self._spline = CubicSpline(z, phi, bc_type=((1, left_slope), (1, right_slope)))
        self._alpha_left = phi[0] * np.exp(-self.lam * z[0])
        self._alpha_right = (1.0 - phi[-1]) * np.exp(self.mu * z[-1])

    @property
    def h(self) -> float:
        return float(self.z[1] - self.z[0])

    def __call__(self, zq):
        return self.eval(zq)

    def eval(self, zq):
        """phi at arbitrary points, tails continued analytically."""
        zq = np.asarray(zq, dtype=float)
        out = self._spline(np.clip(zq, self.z[0], self.z[-1]))
        left = zq < self.z[0]
        right = zq > self.z[-1]
        if left.any():
            out = np.where(left, self._alpha_left * np.exp(self.lam * zq), out)
        if right.any():
            out = np.where(right, 1.0 - self._alpha_right * np.exp(-self.mu * zq), out)
        tiny = np.finfo(float).tiny
        out = np.clip(out, tiny, 1.0 - np.finfo(float).epsneg)
        return out if out.ndim else float(out)

    def eval_derivative(self, zq):
        zq = np.asarray(zq, dtype=float)
        out = self._spline(np.clip(zq, self.z[0], self.z[-1]), nu=1)
        left = zq < self.z[0]
        right = zq > self.z[-1]
        if left.any():
            out = np.where(left, self.lam * self._alpha_left * np.exp(self.lam * zq), out)
        if right.any():
            out = np.where(right, self.mu * self._alpha_right * np.exp(-self.mu * zq), out)
        return out if out.ndim else float(out)

    def level_crossing(self, level: float = 0.5) -> float:
        """z with phi(z) = level (monotone profile, unique)."""
        idx = int(np.searchsorted(self.values, level))
        idx = min(max(idx, 1), len(self.z) - 1)
        z0, z1 = self.z[idx - 1], self.z[idx]
        p0, p1 = self.values[idx - 1], self.values[idx]
        return float(z0 + (level - p0) * (z1 - z0) / (p1 - p0))

    def derivative_values(self) -> np.ndarray:
        """phi' at the grid nodes (centered stencils, one-sided ends)."""
        phi, h = self.values, self.h
        d = np.empty_like(phi)
        d[1:-1] = (phi[2:] - phi[:-2]) / (2.0 * h)
        d[0] = (-3.0 * phi[0] + 4.0 * phi[1] - phi[2]) / (2.0 * h)
        d[-1] = (3.0 * phi[-1] - 4.0 * phi[-2] + phi[-3]) / (2.0 * h)
        return d


def _ode_terms(phi, c, h):
    """(phi'' - c phi') by 4th-order interior stencils.

    The rows next to the boundary fall back to 3-point stencils; they sit in
    the flat exponential tails where the extra truncation error is far below
    the profile values, so the overall 4th-order speed accuracy survives.
    """
    n = len(phi)
    out = np.empty(n - 2)
    d2 = (-phi[:-4] + 16.0 * (phi[1:-3] + phi[3:-1]) - 30.0 * phi[2:-2]
          - phi[4:]) / (12.0 * h * h)
    d1 = (phi[:-4] - 8.0 * phi[1:-3] + 8.0 * phi[3:-1] - phi[4:]) / (12.0 * h)
    out[1:-1] = d2 - c * d1
    for k in (0, n - 3):
        i = k + 1
        out[k] = ((phi[i - 1] - 2.0 * phi[i] + phi[i + 1]) / (h * h)
                  - c * (phi[i + 1] - phi[i - 1]) / (2.0 * h))
    return out


def _collocation_residual(phi, c, f, h, i0, theta):
    n = len(phi)
    res = np.empty(n + 1)
    lam, mu = decay_rates(f, c)
    res[0] = (-3.0 * phi[0] + 4.0 * phi[1] - phi[2]) / (2.0 * h) - lam * phi[0]
    res[1:n - 1] = _ode_terms(phi, c, h) + f.value(phi[1:-1])
    res[n - 1] = ((3.0 * phi[-1] - 4.0 * phi[-2] + phi[-3]) / (2.0 * h)
                  - mu * (1.0 - phi[-1]))
    res[n] = phi[i0] - theta
    return res


def _collocation_jacobian(phi, c, f, h, i0):
    n = len(phi)
    lam, mu = decay_rates(f, c)
    rows, cols, vals = [], [], []

    def put(r, c_, v):
        rows.extend(np.atleast_1d(r).tolist())
        cols.extend(np.atleast_1d(c_).tolist())
        vals.extend(np.atleast_1d(v).tolist())

    put(0, 0, -3.0 / (2.0 * h) - lam)
    put(0, 1, 4.0 / (2.0 * h))
    put(0, 2, -1.0 / (2.0 * h))
    put(0, n, -_dlambda_dc(f, c) * phi[0])

    inv_h2 = 1.0 / (h * h)
    inv_h = 1.0 / h
    fprime = f.derivative(phi)

    # 4th-order interior rows i = 2 .. n-3
    i = np.arange(2, n - 2)
    put(i, i - 2, np.full(len(i), -inv_h2 / 12.0 - c * inv_h / 12.0))
    put(i, i - 1, np.full(len(i), 16.0 * inv_h2 / 12.0 + 8.0 * c * inv_h / 12.0))
    put(i, i, -30.0 * inv_h2 / 12.0 + fprime[i])
    put(i, i + 1, np.full(len(i), 16.0 * inv_h2 / 12.0 - 8.0 * c * inv_h / 12.0))
    put(i, i + 2, np.full(len(i), -inv_h2 / 12.0 + c * inv_h / 12.0))
    d1 = (phi[i - 2] - 8.0 * phi[i - 1] + 8.0 * phi[i + 1] - phi[i + 2]) / (12.0 * h)
    put(i, np.full(len(i), n), -d1)

    # 2nd-order rows next to the boundary
    for k in (1, n - 2):
        put(k, k - 1, inv_h2 + 0.5 * c * inv_h)
        put(k, k, -2.0 * inv_h2 + fprime[k])
        put(k, k + 1, inv_h2 - 0.5 * c * inv_h)
        put(k, n, -(phi[k + 1] - phi[k - 1]) / (2.0 * h))

    put(n - 1, n - 1, 3.0 / (2.0 * h) + mu)
    put(n - 1, n - 2, -4.0 / (2.0 * h))
    put(n - 1, n - 3, 1.0 / (2.0 * h))
    put(n - 1, n, -_dmu_dc(f, c) * (1.0 - phi[-1]))

    put(n, i0, 1.0)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))


def _second_order_residual_norm(phi, c, f, h):
    """Max 3-point-stencil ODE residual over interior nodes (the reported
    residual measure; O(h^2) on a well-converged profile)."""
    res = ((phi[:-2] - 2.0 * phi[1:-1] + phi[2:]) / (h * h)
           - c * (phi[2:] - phi[:-2]) / (2.0 * h)
           + f.value(phi[1:-1]))
    return float(np.max(np.abs(res)))


def _logistic_guess(z, theta):
    # unit-rate sigmoid shifted so the initial iterate satisfies phi(0)=theta
    z0 = np.log((1.0 - theta) / theta)
    return 1.0 / (1.0 + np.exp(-np.clip(z - z0, -500, 500)))


def _shooting_sign(f, c, z_span=400.0):
    """+1 if the c-trajectory overshoots phi=1, -1 if it stalls first."""
    lam, _ = decay_rates(f, c)
    eps = 1e-8

    def rhs(_, y):
        return [y[1], c * y[1] - f.value(y[0])]

    def overshoot(_, y):
        return y[0] - 1.0

    def stall(_, y):
        return y[1]

    overshoot.terminal = True
    stall.terminal = True
    sol = solve_ivp(rhs, (0.0, z_span), [eps, lam * eps], events=(overshoot, stall),
                    rtol=1e-10, atol=1e-12, max_step=1.0)
    if sol.t_events[0].size:
        return 1
    return -1


def _bisect_speed(f, c_max=5.0, iters=60):
    """Bracket and bisect the shooting speed; used when Newton stagnates."""
    lo, hi = 0.0, c_max
    if _shooting_sign(f, hi) < 0:
        raise WaveSolveError(f"no overshoot up to c={c_max}; cannot bracket speed")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _shooting_sign(f, mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _newton(f, z, h, i0, theta, phi, c, tol, accept_tol=None, max_iter=60):
    """Damped Newton; drives the residual to tol, accepts at accept_tol if
    the line search bottoms out near roundoff."""
    accept_tol = tol if accept_tol is None else accept_tol
    x = np.concatenate([phi, [c]])
    for _ in range(max_iter):
        res = _collocation_residual(x[:-1], x[-1], f, h, i0, theta)
        norm = np.max(np.abs(res))
        if norm <= tol:
            return x[:-1], x[-1], norm, True
        jac = _collocation_jacobian(x[:-1], x[-1], f, h, i0)
        step = spsolve(jac, -res)
        # Armijo backtracking on the squared residual
        base = res @ res
        alpha = 1.0
        while alpha > 1e-8:
            trial = x + alpha * step
            if trial[-1] * trial[-1] < 4.0 * max(abs(f.derivative_at_0),
                                                 abs(f.derivative_at_1)) + 25.0:
                tres = _collocation_residual(trial[:-1], trial[-1], f, h, i0, theta)
                if tres @ tres <= (1.0 - 1e-4 * alpha) * base:
                    x = trial
                    break
            alpha *= 0.5
        else:
            return x[:-1], x[-1], norm, norm <= accept_tol
    res = _collocation_residual(x[:-1], x[-1], f, h, i0, theta)
    norm = np.max(np.abs(res))
    return x[:-1], x[-1], norm, norm <= accept_tol


def _rebuild_tails(z, phi, lam, mu, lo=1e-9, hi=1e-6):
    """Blend matched exponentials into the sub-`hi` tails.

    Below ~hi the Newton iterate is residual-tolerance noise rather than
    profile (the true values decay past machine noise), so the decay mode is
    faded in over [lo, hi] with a smooth weight; a hard splice would leave a
    derivative kink that the second-difference residual amplifies by 1/h^2.
    """

    def weight(s):
        s = np.clip(s, 0.0, 1.0)
        return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))

    phi = phi.copy()
    above = np.where(phi > hi)[0]
    if above.size and above[0] > 0:
        i = above[0]
        tail = np.maximum(phi[i] * np.exp(lam * (z[:i] - z[i])), 1e-300)
        z_start = z[i] + np.log(lo / hi) / lam
        w = weight((z[:i] - z_start) / (z[i] - z_start))
        phi[:i] = w * phi[:i] + (1.0 - w) * tail

    below = np.where(1.0 - phi > hi)[0]
    if below.size and below[-1] < len(phi) - 1:
        j = below[-1]
        # the deficit is floored at 2 ulp: float64 cannot place a value
        # strictly between 1 - eps and 1, and the profile must stay < 1
        deficit = np.maximum((1.0 - phi[j]) * np.exp(-mu * (z[j + 1:] - z[j])),
                             2.0 * np.finfo(float).epsneg)
        tail = 1.0 - deficit
        z_stop = z[j] - np.log(lo / hi) / mu
        w = weight((z_stop - z[j + 1:]) / (z_stop - z[j]))
        phi[j + 1:] = np.minimum(w * phi[j + 1:] + (1.0 - w) * tail, tail)
    return phi


def solve_wave(f: BistableNonlinearity, z_min: float = -60.0, z_max: float = 60.0,
               h: float = 0.05, tol: float = 1e-10) -> WaveProfile:
    """Solve the traveling-wave problem for a validated bistable f.

    Damped Newton on the collocation system with c unknown; falls back to
    bisection on the shooting speed if the Newton iteration stagnates.
    """
    if f.potential_at_1 <= 0.0:
        raise ReactionError(
            f"int_0^1 f = {f.potential_at_1:.3g} <= 0: speed would not be positive")
    if h > 0.1:
        raise ReactionError(f"grid spacing h={h} too coarse (need h <= 0.1)")
    n = int(round((z_max - z_min) / h)) + 1
    z = z_min + h * np.arange(n)
    i0 = int(round(-z_min / h))
    if not (0 < i0 < n - 1) or abs(z[i0]) > 1e-12 * max(1.0, abs(z_max)):
        raise ReactionError("z=0 must be an interior grid node for the phase condition")

    tol_inner = min(tol, 1e-13)
    phi0 = _logistic_guess(z, f.theta)
    phi, c, norm, ok = _newton(f, z, h, i0, f.theta, phi0, 0.0, tol_inner,
                               accept_tol=tol)
    if not ok:
        c_bis = _bisect_speed(f)
        phi, c, norm, ok = _newton(f, z, h, i0, f.theta, phi0, c_bis, tol_inner,
                                   accept_tol=tol)
        if not ok:
            raise WaveSolveError(
                f"Newton stagnated after speed bisection (residual {norm:.3g})",
                phi=phi, c=c, residual=norm)

    lam, mu = decay_rates(f, c)
    phi = _rebuild_tails(z, phi, lam, mu)
    res = _collocation_residual(phi, c, f, h, i0, f.theta)
    solver_norm = float(np.max(np.abs(res[1:-2])))
    if solver_norm > max(tol, 1e-8):
        raise WaveSolveError(
            f"post-splice solver residual {solver_norm:.3g} too large",
            phi=phi, c=c, residual=solver_norm)
    # reported measure: 3-point stencils, O(h^2) on the converged profile
    norm = _second_order_residual_norm(phi, c, f, h)

    if np.any(phi[1:-1] <= 0.0) or np.any(phi[1:-1] >= 1.0):
        raise WaveSolveError("converged iterate leaves (0,1)", phi=phi, c=c,
                             residual=norm)
    # strict increase is only representable while increments clear roundoff
    d = np.diff(phi)
    representable = np.minimum(1.0 - phi[:-1], 1.0 - phi[1:]) > 1e-13
    if np.any(d < 0.0) or np.any((d <= 0.0) & representable):
        raise WaveSolveError("converged iterate is not strictly increasing",
                             phi=phi, c=c, residual=norm)

    profile = WaveProfile(speed=float(c), z=z, values=phi, theta=f.theta,
                          lam=lam, mu=mu, residual_norm=float(norm))
    fit_envelope_constants(profile)
    return profile


def discrete_residual_norm(profile: WaveProfile, f: BistableNonlinearity) -> float:
    """Reported residual measure of a (possibly translated) profile."""
    return _second_order_residual_norm(profile.values, profile.speed, f,
                                       profile.h)


def fit_envelope_constants(p: WaveProfile) -> EnvelopeConstants:
    """Extremize the tail ratios over the grid and store them on the profile.

    Also sets p.c_phi = max over z > 0 of (1 - phi(z)) e^{mu z}.  Nodes whose
    deficit 1 - phi sits at the float-representation floor carry no tail
    information and are excluded from the fitted range.
    """
    z, phi = p.z, p.values
    dphi = p.derivative_values()
    left = (z <= 0.0) & (phi > 1e-290)
    right = (z > 0.0) & (1.0 - phi > 1e-13)

    ratio_l = phi[left] * np.exp(-p.lam * z[left])
    ratio_r = (1.0 - phi[right]) * np.exp(p.mu * z[right])
    dratio_l = dphi[left] * np.exp(-p.lam * z[left])
    dratio_r = dphi[right] * np.exp(p.mu * z[right])

    env = EnvelopeConstants(
        alpha0=float(ratio_l.min()), beta0=float(ratio_l.max()),
        alpha1=float(ratio_r.min()), beta1=float(ratio_r.max()),
        gamma0=float(dratio_l.min()), delta0=float(dratio_l.max()),
        gamma1=float(dratio_r.min()), delta1=float(dratio_r.max()),
        fitted_range=(float(z[left | right][0]), float(z[left | right][-1])),
    )
    p.envelope = env
    p.c_phi = env.beta1
    return env


def export_profile(p: WaveProfile, csv_path, json_path=None) -> None:
    """Write z, phi, dphi columns plus a JSON sidecar with the constants."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    dphi = p.derivative_values()
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z", "phi", "dphi"])
        for zi, pi, di in zip(p.z, p.values, dphi):
            writer.writerow([f"{zi:.17g}", f"{pi:.17g}", f"{di:.17g}"])
    meta = {
        "c": p.speed, "lambda": p.lam, "mu": p.mu, "theta": p.theta,
        "residual_norm": p.residual_norm, "C_phi": p.c_phi,
        "envelope": p.envelope.to_dict() if p.envelope else None,
    }
    if json_path is None:
        json_path = csv_path.with_suffix(".json")
    Path(json_path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_profile_meta(json_path) -> dict:
    return json.loads(Path(json_path).read_text())
