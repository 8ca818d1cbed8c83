"""Comparison-principle envelopes and their constant ledgers.

Reconstructs the explicit sub/supersolutions that squeeze the solution onto
the outgoing front: the lower envelope built from the slower wave, the upper
envelope built from the faster wave, the tighter upper envelope that carries
the transition-zone correction, and the backward-time pair w-/w+ used to
start the entire solution.  Every derived constant records which inequality
produced it, so the exported ledger can be audited.

Times: the lower/upper-1 envelopes use proof time measured from their
anchoring snapshot t_origin; the upper-2 envelope and the backward pair use
the trajectory's absolute time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pde import ConfigError, Trajectory
from .reaction import BistableNonlinearity, SpatialReaction
from .waves import WaveProfile

__all__ = [
    "LowerEnvelopeParams",
    "Upper1EnvelopeParams",
    "Upper2EnvelopeParams",
    "AppendixParams",
    "DerivationError",
    "derive_omega",
    "derive_rho",
    "derive_lower",
    "derive_upper1",
    "derive_upper2",
    "derive_appendix",
    "eval_lower",
    "eval_upper1",
    "eval_upper2",
    "eval_appendix",
    "LowerEnvelope",
    "Upper1Envelope",
    "Upper2Envelope",
    "AppendixSubsolution",
    "AppendixSupersolution",
    "ViolationReport",
    "check_ordering",
    "residual_sign_check",
    "sliding_check",
    "stability_delta",
]


class DerivationError(RuntimeError):
    """The trajectory does not support the requested constant derivation."""


# ---------------------------------------------------------------------------
# shared scalar constants


def derive_omega(f1: BistableNonlinearity, f2: BistableNonlinearity):
    """omega = min over the four endpoint slopes of |f'|/4, capped at 1."""
    candidates = {
        "f1'(0)/4": abs(f1.derivative_at_0) / 4.0,
        "f1'(1)/4": abs(f1.derivative_at_1) / 4.0,
        "f2'(0)/4": abs(f2.derivative_at_0) / 4.0,
        "f2'(1)/4": abs(f2.derivative_at_1) / 4.0,
        "cap": 1.0,
    }
    binding = min(candidates, key=candidates.get)
    return candidates[binding], binding


def _modulus_ok(f, rho, omega, n=512):
    s = np.linspace(0.0, rho, n)
    if np.max(np.abs(f.derivative(s) - f.derivative_at_0)) > omega:
        return False
    s = np.linspace(1.0 - rho, 1.0, n)
    return np.max(np.abs(f.derivative(s) - f.derivative_at_1)) <= omega


def derive_rho(f1, f2, omega, iters: int = 80):
    """Largest rho with |f_i' - f_i'(endpoint)| <= omega near both endpoints.

    Bisection on each of the four corner conditions; the minimum wins and its
    corner is recorded as binding.
    """
    per_corner = {}
    for name, f, end in (("f1-at-0", f1, 0), ("f1-at-1", f1, 1),
                         ("f2-at-0", f2, 0), ("f2-at-1", f2, 1)):
        def ok(rho, f=f, end=end):
            s = np.linspace(0.0, rho, 512) if end == 0 else np.linspace(1.0 - rho, 1.0, 512)
            ref = f.derivative_at_0 if end == 0 else f.derivative_at_1
            return np.max(np.abs(f.derivative(s) - ref)) <= omega

        lo, hi = 0.0, 0.5
        if ok(hi):
            per_corner[name] = hi
            continue
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if ok(mid):
                lo = mid
            else:
                hi = mid
        per_corner[name] = lo
    binding = min(per_corner, key=per_corner.get)
    return per_corner[binding], binding


def _bisect_smallest_admissible(check, lo, hi, iters=60):
    """Smallest x in [lo, hi] with check(x) True; check monotone in x."""
    if check(lo):
        return lo
    if not check(hi):
        raise DerivationError("no admissible value in the bracket")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if check(mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# lower envelope (subsolution from the slower wave)


@dataclass(frozen=True)
class LowerEnvelopeParams:
    omega: float
    rho: float
    a_minus: float
    delta2_minus: float
    mu2_minus: float
    t_lambda: float
    beta_minus: float          # post-replacement: absorbs V2_minus(0)
    zeta_minus: float
    zeta_plus: float
    v2_at_0: float             # V2_minus(0) = 4 ||f2'|| mu / (delta omega)
    sup_f2_prime: float
    c2: float
    binding: dict = field(default_factory=dict, compare=False)

    @property
    def c_minus(self) -> float:
        """Coefficient of e^{-omega t} in the stated lower bound."""
        return self.mu2_minus

    def v_minus(self, tau):
        return self.mu2_minus * np.exp(-self.omega * tau)

    def v2_minus(self, tau):
        return self.v2_at_0 * np.exp(-self.omega * tau)

    def to_dict(self) -> dict:
        return {
            "omega": self.omega, "rho": self.rho, "A_minus": self.a_minus,
            "delta2_minus": self.delta2_minus, "mu2_minus": self.mu2_minus,
            "t_lambda": self.t_lambda, "beta_minus": self.beta_minus,
            "zeta_minus": self.zeta_minus, "zeta_plus": self.zeta_plus,
            "V2_minus_at_0": self.v2_at_0, "C_minus": self.c_minus,
            "sup_f2_prime": self.sup_f2_prime, "binding": self.binding,
        }


def _closeness_time(traj: Trajectory, wave: WaveProfile, tol: float):
    """Earliest snapshot time with sup |u - phi(x + c t)| <= tol."""
    x = traj.grid.nodes()
    for snap in traj.snapshots:
        ref = wave.eval(x + wave.speed * snap.t)
        if np.max(np.abs(snap.u - ref)) <= tol:
            return snap.t, snap.u
    return None, None


def _tail_interval(wave: WaveProfile, level: float):
    """(z_low, z_high): phi <= level left of z_low, phi >= 1-level right of z_high."""
    return wave.level_crossing(level), wave.level_crossing(1.0 - level)


def derive_lower(r: SpatialReaction, wave1: WaveProfile, wave2: WaveProfile,
                 traj: Trajectory) -> LowerEnvelopeParams:
    """Derive the subsolution ledger from the pair and an early trajectory."""
    if traj.frame.kind != "lab":
        raise DerivationError("derive_lower expects a lab-frame trajectory")
    omega, omega_binding = derive_omega(r.f1, r.f2)
    rho, rho_binding = derive_rho(r.f1, r.f2, omega)

    z_lo, z_hi = _tail_interval(wave2, 0.5 * rho)
    a_minus = max(z_hi, -z_lo)
    a_binding = "phi2 >= 1-rho/2" if z_hi >= -z_lo else "phi2 <= rho/2"
    zz = np.linspace(-a_minus, a_minus, 4001)
    delta2_minus = float(np.min(wave2.eval_derivative(zz)))
    if delta2_minus <= 0.0:
        raise DerivationError("phi2' is not positive on [-A-, A-]")
    mu2 = min(0.5 * rho, 0.5)

    # earliest snapshot uniformly mu2/2-close to the incoming phi1 front
    t_lambda, u_tl = _closeness_time(traj, wave1, 0.5 * mu2)
    if t_lambda is None:
        raise DerivationError(
            "no snapshot is uniformly close to the incoming front; "
            "the trajectory starts too late")

    c1 = wave1.speed
    c2 = wave2.speed
    lam_half = 0.5 * mu2
    z1_lo, z1_hi = _tail_interval(wave1, lam_half)
    z2_lo, z2_hi = _tail_interval(wave2, lam_half)
    zeta_plus = max(z1_hi - c1 * t_lambda, z2_hi - c2 * t_lambda)
    zeta_minus = min(z1_lo - c1 * t_lambda, z2_lo - c2 * t_lambda)
    x = traj.grid.nodes()
    if zeta_plus > x[-1] or zeta_minus < x[0]:
        raise DerivationError(
            f"compact set [{zeta_minus:.3g}, {zeta_plus:.3g}] leaves the grid")

    sel = (x >= zeta_minus) & (x <= zeta_plus)
    xs, us = x[sel], u_tl[sel]

    def dominated(beta):
        return np.max(wave2.eval(xs + c2 * t_lambda - beta) - us) <= 0.0

    hi = 1.0
    while not dominated(hi):
        hi *= 2.0
        if hi > 1e6:
            raise DerivationError("no admissible beta- shift found")
    beta_raw = _bisect_smallest_admissible(dominated, 0.0, hi)

    sup_f2p = r.f2.lipschitz_bound
    v2_at_0 = 4.0 * sup_f2p * mu2 / (delta2_minus * omega)
    return LowerEnvelopeParams(
        omega=omega, rho=rho, a_minus=a_minus, delta2_minus=delta2_minus,
        mu2_minus=mu2, t_lambda=t_lambda, beta_minus=beta_raw + v2_at_0,
        zeta_minus=zeta_minus, zeta_plus=zeta_plus, v2_at_0=v2_at_0,
        sup_f2_prime=sup_f2p, c2=c2,
        binding={"omega": omega_binding, "rho": rho_binding, "A_minus": a_binding,
                 "beta_minus": "smallest shift dominated by u(t_lambda) on "
                               "[zeta-, zeta+], plus V2_minus(0)"})


def eval_lower(p: LowerEnvelopeParams, wave2: WaveProfile, tau, x1):
    """Subsolution value at proof time tau >= 0 (absolute t = t_lambda + tau)."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0.0):
        raise ConfigError("eval_lower needs tau >= 0 (time measured from t_lambda)")
    xi = x1 + p.c2 * (tau + p.t_lambda) - p.beta_minus + p.v2_minus(tau)
    return np.maximum(wave2.eval(xi) - p.v_minus(tau), 0.0)


# ---------------------------------------------------------------------------
# upper envelope from the incoming (faster) wave


@dataclass(frozen=True)
class Upper1EnvelopeParams:
    omega: float
    mu1_plus: float
    a_plus: float
    delta1_plus: float
    t_origin: float
    beta1_raw: float
    beta1_plus: float          # post-replacement: absorbs V1_plus(0)
    v1_at_0: float
    sup_f1_prime: float
    c1: float
    binding: dict = field(default_factory=dict, compare=False)

    @property
    def c1_plus(self) -> float:
        return self.mu1_plus

    def v_plus(self, tau):
        return self.mu1_plus * np.exp(-self.omega * tau)

    def v1_plus(self, tau):
        return self.v1_at_0 * np.exp(-self.omega * tau)

    def to_dict(self) -> dict:
        return {
            "omega": self.omega, "mu1_plus": self.mu1_plus, "A_plus": self.a_plus,
            "delta1_plus": self.delta1_plus, "t_origin": self.t_origin,
            "beta1_plus": self.beta1_plus, "C1_plus": self.c1_plus,
            "V1_plus_at_0": self.v1_at_0, "binding": self.binding,
        }


def derive_upper1(r: SpatialReaction, wave1: WaveProfile,
                  traj: Trajectory) -> Upper1EnvelopeParams:
    """Mirror of derive_lower with f(.,u) <= f1(u) doing the work."""
    if traj.frame.kind != "lab":
        raise DerivationError("derive_upper1 expects a lab-frame trajectory")
    omega, omega_binding = derive_omega(r.f1, r.f2)
    rho, _ = derive_rho(r.f1, r.f2, omega)
    mu1 = min(0.5 * rho, 0.5)

    z_lo, z_hi = _tail_interval(wave1, 0.5 * rho)
    a_plus = max(z_hi, -z_lo)
    zz = np.linspace(-a_plus, a_plus, 4001)
    delta1_plus = float(np.min(wave1.eval_derivative(zz)))

    t_origin, u_t0 = _closeness_time(traj, wave1, 0.5 * mu1)
    if t_origin is None:
        raise DerivationError("no snapshot is uniformly close to phi1")
    c1 = wave1.speed
    x = traj.grid.nodes()

    def dominates(beta):
        return np.min(wave1.eval(x + c1 * t_origin + beta) + mu1 - u_t0) >= 0.0

    hi = 1.0
    while not dominates(hi):
        hi *= 2.0
        if hi > 1e6:
            raise DerivationError("no admissible beta1+ shift found")
    beta_raw = _bisect_smallest_admissible(dominates, 0.0, hi)

    sup_f1p = r.f1.lipschitz_bound
    v1_at_0 = 4.0 * sup_f1p * mu1 / (delta1_plus * omega)
    return Upper1EnvelopeParams(
        omega=omega, mu1_plus=mu1, a_plus=a_plus, delta1_plus=delta1_plus,
        t_origin=t_origin, beta1_raw=beta_raw, beta1_plus=beta_raw + v1_at_0,
        v1_at_0=v1_at_0, sup_f1_prime=sup_f1p, c1=c1,
        binding={"omega": omega_binding,
                 "beta1_plus": "smallest shift dominating u(t_origin) within mu1,"
                               " plus V1_plus(0)"})


def eval_upper1(wave1: WaveProfile, beta1_plus: float, c1_plus: float,
                omega: float, tau, x1):
    """Stated-form upper bound min(phi1(x + c1 t + beta1+) + C1+ e^{-omega tau}, 1).

    tau is time since the envelope's anchoring snapshot; the x-argument uses
    the absolute time of the underlying trajectory, supplied via x1 already
    containing c1 * t_abs, or by the Upper1Envelope wrapper.
    """
    tau = np.asarray(tau, dtype=float)
    return np.minimum(wave1.eval(x1 + beta1_plus)
                      + c1_plus * np.exp(-omega * tau), 1.0)


# ---------------------------------------------------------------------------
# upper envelope from the outgoing wave (the involved direction)


@dataclass(frozen=True)
class Upper2EnvelopeParams:
    t_big: float               # T: absolute anchoring time
    gamma: float
    c_f: float
    c_phi2: float
    lam: float                 # decay rate of 1 - phi2
    delta2_plus: float
    beta: float
    eta: float                 # effective decay: min(omega, lam * c2)
    omega: float
    rho: float
    zeta_tilde_minus: float
    zeta_tilde_plus: float
    sup_f2_prime: float
    c2: float
    x0: float
    binding: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0.0 < self.gamma < 0.25 * self.rho:
            raise DerivationError(f"need 0 < gamma < rho/4, got gamma={self.gamma}")
        if not self.omega < self.lam * self.c2:
            raise DerivationError("need omega < lam * c2 (reduce omega)")

    @property
    def forcing(self) -> float:
        """C_f C_phi2 e^{lam (x0 - c2 T)}: tail forcing seen by v2+."""
        return self.c_f * self.c_phi2 * np.exp(self.lam * (self.x0 - self.c2 * self.t_big))

    def v2_plus(self, t):
        """Correction amplitude for absolute t >= T (closed form)."""
        t = np.asarray(t, dtype=float)
        a = self.forcing / (self.omega - self.lam * self.c2)
        dt = t - self.t_big
        return (self.gamma - a) * np.exp(-self.omega * dt) \
            + a * np.exp(-self.lam * self.c2 * dt)

    def v2_plus_rate(self, t):
        """dv2+/dt from its defining ODE."""
        dt = np.asarray(t, dtype=float) - self.t_big
        return -self.omega * self.v2_plus(t) \
            + self.forcing * np.exp(-self.lam * self.c2 * dt)

    def big_v2_plus(self, t):
        """V2+(t) = ((||f2'|| + omega)/delta2+) * int_T^t v2+ (closed form)."""
        t = np.asarray(t, dtype=float)
        a = self.forcing / (self.omega - self.lam * self.c2)
        dt = t - self.t_big
        integral = (self.gamma - a) / self.omega * (1.0 - np.exp(-self.omega * dt)) \
            + a / (self.lam * self.c2) * (1.0 - np.exp(-self.lam * self.c2 * dt))
        return (self.sup_f2_prime + self.omega) / self.delta2_plus * integral

    def to_dict(self) -> dict:
        return {
            "T": self.t_big, "gamma": self.gamma, "C_f": self.c_f,
            "C_phi2": self.c_phi2, "lambda": self.lam,
            "delta2_plus": self.delta2_plus, "beta": self.beta, "eta": self.eta,
            "omega": self.omega, "zeta_tilde_minus": self.zeta_tilde_minus,
            "zeta_tilde_plus": self.zeta_tilde_plus, "binding": self.binding,
        }


def derive_upper2(r: SpatialReaction, wave1: WaveProfile, wave2: WaveProfile,
                  traj: Trajectory, lower: LowerEnvelopeParams,
                  upper1: Upper1EnvelopeParams) -> Upper2EnvelopeParams:
    """Anchor the phi2-upper envelope once only the tail sees the zone."""
    if traj.frame.kind != "lab":
        raise DerivationError("derive_upper2 expects a lab-frame trajectory")
    rho = lower.rho
    gamma = rho / 8.0
    c2 = wave2.speed
    lam = wave2.mu
    c_f = r.c_f
    c_phi2 = wave2.c_phi
    omega = lower.omega
    omega_binding = "inherited from lower envelope"
    if omega >= lam * c2:
        omega = 0.5 * lam * c2
        omega_binding = "reduced to lam*c2/2 (needed omega < lam*c2)"

    def cond_a(t):
        return max(lower.c_minus * np.exp(-omega * (t - lower.t_lambda)),
                   upper1.c1_plus * np.exp(-omega * (t - upper1.t_origin))) \
            <= 0.5 * gamma

    def cond_b(t):
        return lower.a_minus - c2 * t <= -r.x0

    def cond_c(t):
        return (c_f * c_phi2 / (lam * c2)) * np.exp(lam * (r.x0 - c2 * t)) \
            <= 0.25 * rho

    t_big = None
    binding_t = None
    for snap in traj.snapshots:
        t = snap.t
        if t < max(lower.t_lambda, upper1.t_origin):
            continue
        checks = {"decayed corrections <= gamma/2": cond_a(t),
                  "A- - c2 T <= -x0": cond_b(t),
                  "tail forcing <= rho/4": cond_c(t)}
        if all(checks.values()):
            t_big = t
            break
        binding_t = [k for k, v in checks.items() if not v]
    if t_big is None:
        raise DerivationError("trajectory ends before any admissible T")

    u_t = traj.snapshot_at(t_big).u
    x = traj.grid.nodes()
    zeta_tilde_plus = wave2.level_crossing(1.0 - gamma) - c2 * t_big + lower.beta_minus
    zeta_tilde_minus = float(x[0])  # paper's value lies outside any finite grid

    sel = x <= zeta_tilde_plus
    xs, us = x[sel], u_t[sel]
    if not sel.any():
        raise DerivationError("compact comparison set is empty at T")

    def dominates(beta):
        return np.min(wave2.eval(xs + c2 * t_big + beta) - us) >= 0.0

    hi = 1.0
    while not dominates(hi):
        hi *= 2.0
        if hi > 1e6:
            raise DerivationError("no admissible beta shift found at T")
    beta = _bisect_smallest_admissible(dominates, 0.0, hi)

    zz = np.linspace(-lower.a_minus, lower.a_minus, 4001)
    delta2_plus = float(np.min(wave2.eval_derivative(zz)))

    return Upper2EnvelopeParams(
        t_big=t_big, gamma=gamma, c_f=c_f, c_phi2=c_phi2, lam=lam,
        delta2_plus=delta2_plus, beta=beta, eta=min(omega, lam * c2),
        omega=omega, rho=rho, zeta_tilde_minus=zeta_tilde_minus,
        zeta_tilde_plus=zeta_tilde_plus, sup_f2_prime=lower.sup_f2_prime,
        c2=c2, x0=r.x0,
        binding={"omega": omega_binding, "gamma": "rho/8",
                 "T": "first snapshot past " + (", ".join(binding_t)
                                                if binding_t else "all conditions"),
                 "beta": "smallest shift dominating u(T) left of zeta~+"})


def eval_upper2(p: Upper2EnvelopeParams, wave2: WaveProfile, t, x1):
    """Supersolution value at absolute time t >= T."""
    t = np.asarray(t, dtype=float)
    if np.any(t < p.t_big - 1e-12):
        raise ConfigError(f"eval_upper2 needs t >= T = {p.t_big}")
    xi = x1 + p.c2 * t + p.beta + p.big_v2_plus(t)
    return np.minimum(wave2.eval(xi) + p.v2_plus(t), 1.0)


# ---------------------------------------------------------------------------
# backward-time pair w-/w+ (appendix construction)


@dataclass(frozen=True)
class AppendixParams:
    m_big: float               # M
    t_cap: float               # T = (1/(lam c1)) log(c1/(c1+M))
    t1: float                  # T1 <= T: joint validity of both residual signs
    l_c11: float               # L: |f1(u+v) - f1(u) - f1(v)| <= L u v
    l1: float                  # case-split threshold (lam < mu only)
    l2: float
    lam: float
    mu: float
    c1: float
    theta1: float
    binding: dict = field(default_factory=dict, compare=False)

    def xi(self, t):
        """Accumulated backward shift; defined while (M/c1) e^{lam c1 t} < 1."""
        t = np.asarray(t, dtype=float)
        q = (self.m_big / self.c1) * np.exp(self.lam * self.c1 * t)
        if np.any(q >= 1.0):
            raise ConfigError("t beyond the validity of xi (1 - M e^{lam c1 t}/c1 <= 0)")
        return -np.log1p(-q) / self.lam

    def xi_rate(self, t):
        t = np.asarray(t, dtype=float)
        return self.m_big * np.exp(self.lam * (self.c1 * t + self.xi(t)))

    def to_dict(self) -> dict:
        return {
            "M": self.m_big, "T": self.t_cap, "T1": self.t1, "L": self.l_c11,
            "L1": self.l1, "L2": self.l2, "lambda": self.lam, "mu": self.mu,
            "binding": self.binding,
        }


def _superposition_constant(f: BistableNonlinearity, n: int = 400) -> float:
    """Smallest grid constant with |f(u+v) - f(u) - f(v)| <= L u v.

    Uses the curvature bound sup |f''| on [0,1] (second differences of f'),
    which dominates the two-variable ratio wherever the sum stays in [0,1].
    """
    u = np.linspace(0.0, 1.0, 4001)
    d = f.derivative(u)
    fpp = np.abs(np.diff(d) / np.diff(u))
    curvature = float(fpp.max())
    g = np.linspace(1.0 / n, 1.0, n)
    uu, vv = np.meshgrid(g, g)
    mask = uu + vv <= 1.0
    ratio = np.abs(f.value(uu + vv) - f.value(uu) - f.value(vv)) / (uu * vv)
    grid_l = float(ratio[mask].max())
    return max(curvature, grid_l)


def derive_appendix(wave1: WaveProfile, f1: BistableNonlinearity) -> AppendixParams:
    """Choose M, T, T1 so that w+ is a supersolution and w- a subsolution."""
    if wave1.envelope is None:
        raise DerivationError("wave1 needs fitted envelope constants")
    env = wave1.envelope
    c1, lam, mu = wave1.speed, wave1.lam, wave1.mu
    L = _superposition_constant(f1)

    candidates = {
        "M gamma0 > L beta0^2": L * env.beta0 ** 2 / env.gamma0,
        "M gamma1 > L beta0": L * env.beta0 / env.gamma1,
        "c1 M > L beta0": L * env.beta0 / c1,
    }
    l1 = l2 = 0.0
    if lam < mu - 1e-6 * max(1.0, mu):
        l1 = _case_split_threshold(f1, wave1, mode="super")
        l2 = _case_split_threshold(f1, wave1, mode="sub")
        candidates["M gamma1 e^{-mu L1} > L beta0"] = (
            L * env.beta0 * np.exp(mu * l1) / env.gamma1)
    binding_m = max(candidates, key=candidates.get)
    m_big = 2.0 * candidates[binding_m]
    t_cap = np.log(c1 / (c1 + m_big)) / (lam * c1)

    def xi(t):
        t = np.asarray(t, dtype=float)
        q = (m_big / c1) * np.exp(lam * c1 * t)
        return -np.log1p(-q) / lam

    binding = {"M": binding_m, "L": "sup |f1''| on [0,1]"}
    conds = _t1_conditions(wave1, env, f1, xi, m_big, L, l2)
    t1 = t_cap
    for name, holds_for_all_up_to in conds.items():
        if holds_for_all_up_to(t1):
            continue
        lo = t_cap - 200.0
        if not holds_for_all_up_to(lo):
            raise DerivationError(f"appendix condition {name!r} never holds")
        hi = t1
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if holds_for_all_up_to(mid):
                lo = mid
            else:
                hi = mid
        t1 = lo
        binding["T1"] = name
    binding.setdefault("T1", "T (no earlier condition binds)")

    return AppendixParams(m_big=m_big, t_cap=t_cap, t1=t1, l_c11=L,
                          l1=l1, l2=l2, lam=lam, mu=mu, c1=c1,
                          theta1=wave1.theta, binding=binding)


def _case_split_threshold(f1, wave1, mode):
    """Smallest offset ell making the correction term one-signed.

    mode 'super': G = f1(u) + f1(v) - f1(u+v) >= 0 with u = phi1(a >= ell),
    v = phi1(b <= -ell).  mode 'sub': H/v <= -(m1 - m0)/2 with
    u = phi1(a >= ell), v = phi1(b <= -ell), H = f1(u) - f1(v) - f1(u - v).
    """
    z = np.linspace(0.0, 40.0, 801)
    ctilde = 0.5 * (f1.derivative_at_0 - f1.derivative_at_1)  # (m1 - m0)/2

    def ok(ell):
        a = wave1.eval(z + ell)
        b = wave1.eval(-(z + ell))
        u, v = np.meshgrid(a, b)
        if mode == "super":
            g = f1.value(u) + f1.value(v) - f1.value(u + v)
            return g.min() >= 0.0
        h = f1.value(u) - f1.value(v) - f1.value(u - v)
        return (h / v).max() <= -ctilde

    for ell in np.arange(0.0, 60.0, 0.5):
        if ok(ell):
            return float(ell)
    raise DerivationError(f"no case-split threshold found (mode={mode})")


def _t1_conditions(wave1, env, f1, xi, m_big, L, l2):
    """Sign conditions bounding T1; each maps t1 -> holds for all t <= t1."""
    c1, lam, mu = wave1.speed, wave1.lam, wave1.mu
    theta1 = wave1.theta

    def w_plus_small_front(t1):
        # c1 t + xi(t) is increasing, so checking at t1 suffices
        return wave1.eval(c1 * t1 + float(xi(t1))) <= 0.5 * theta1

    def s_max_up_to(t1):
        # s(t) = c1 t - xi(t) rises to a single peak, then falls; the window
        # is wide enough that s is still rising at its left end
        ts = np.linspace(t1 - 400.0, t1, 4001)
        return float(np.max(c1 * ts - np.asarray(xi(ts))))

    def w_minus_far_field(t1):
        s = s_max_up_to(t1)
        return (env.gamma1 * np.exp(-mu * s) - env.delta0 * np.exp(lam * s)
                - L * env.beta0 / m_big) > 0.0

    conds = {"phi1(c1 t + xi) <= theta1/2": w_plus_small_front,
             "gamma1 e^{-mu s} - delta0 e^{lam s} - L beta0/M > 0": w_minus_far_field}

    if lam < mu - 1e-6 * max(1.0, mu):
        ctilde = 0.5 * (f1.derivative_at_0 - f1.derivative_at_1)

        def w_minus_case3(t1):
            arg = c1 * t1 + float(xi(t1))
            return m_big * env.delta0 * np.exp(lam * arg) < ctilde * env.beta0

        def w_minus_case4(t1):
            s = s_max_up_to(t1)
            return (env.gamma1 * np.exp(-lam * s - (mu - lam) * l2)
                    - env.delta0 * np.exp(lam * s) - L * env.beta0 / m_big) > 0.0

        conds["M delta0 e^{lam(c1 t + xi)} < C~ beta0"] = w_minus_case3
        conds["gamma1 e^{-lam s -(mu-lam)L2} - delta0 e^{lam s} - L beta0/M > 0"] = \
            w_minus_case4
    return conds


def eval_appendix(p: AppendixParams, wave1: WaveProfile, t: float, x1):
    """(w_minus, w_plus) at absolute time t (valid while xi is defined)."""
    x1 = np.asarray(x1, dtype=float)
    xi = float(p.xi(t))
    c1t = p.c1 * t
    pos = x1 >= 0.0

    w_plus = np.where(
        pos,
        np.minimum(wave1.eval(x1 + c1t + xi) + wave1.eval(-x1 + c1t + xi), 1.0),
        np.minimum(2.0 * wave1.eval(c1t + xi), 1.0),
    )
    w_minus = np.where(
        pos,
        np.maximum(wave1.eval(x1 + c1t - xi) - wave1.eval(-x1 + c1t - xi), 0.0),
        0.0,
    )
    if w_minus.ndim == 0:
        return float(w_minus), float(w_plus)
    return w_minus, w_plus


def appendix_initial_data(p: AppendixParams, wave1: WaveProfile):
    """w_minus as a (t, x array) callable for the backward construction."""

    def w_minus(t, x):
        return eval_appendix(p, wave1, t, x)[0]

    return w_minus


# ---------------------------------------------------------------------------
# envelope evaluator objects (shared interface for the checks)


class LowerEnvelope:
    side = "lower"

    def __init__(self, params: LowerEnvelopeParams, wave2: WaveProfile):
        self.p = params
        self.wave = wave2

    def window(self, t):
        return np.asarray(t) >= self.p.t_lambda - 1e-9

    def value(self, t, x):
        return eval_lower(self.p, self.wave, max(t - self.p.t_lambda, 0.0), x)

    def branch(self, t, x):
        tau = max(t - self.p.t_lambda, 0.0)
        xi = x + self.p.c2 * (tau + self.p.t_lambda) - self.p.beta_minus \
            + self.p.v2_minus(tau)
        return self.wave.eval(xi) - self.p.v_minus(tau)

    def headroom(self, t, x):
        return self.branch(t, x)  # distance to the max{., 0} clamp


class Upper1Envelope:
    side = "upper"

    def __init__(self, params: Upper1EnvelopeParams, wave1: WaveProfile):
        self.p = params
        self.wave = wave1

    def window(self, t):
        return np.asarray(t) >= self.p.t_origin - 1e-9

    def value(self, t, x):
        tau = max(t - self.p.t_origin, 0.0)
        return eval_upper1(self.wave, self.p.beta1_plus, self.p.c1_plus,
                           self.p.omega, tau, x + self.p.c1 * t)


class Upper2Envelope:
    side = "upper"

    def __init__(self, params: Upper2EnvelopeParams, wave2: WaveProfile):
        self.p = params
        self.wave = wave2

    def window(self, t):
        return np.asarray(t) >= self.p.t_big - 1e-9

    def value(self, t, x):
        return eval_upper2(self.p, self.wave, t, x)

    def branch(self, t, x):
        xi = x + self.p.c2 * t + self.p.beta + self.p.big_v2_plus(t)
        return self.wave.eval(xi) + self.p.v2_plus(t)

    def headroom(self, t, x):
        return 1.0 - self.branch(t, x)  # distance to the min{., 1} clamp


class AppendixSubsolution:
    side = "lower"

    def __init__(self, params: AppendixParams, wave1: WaveProfile):
        self.p = params
        self.wave = wave1

    def window(self, t):
        return np.asarray(t) <= self.p.t1 + 1e-9

    def value(self, t, x):
        return eval_appendix(self.p, self.wave, t, x)[0]

    def branch(self, t, x):
        xi = float(self.p.xi(t))
        c1t = self.p.c1 * t
        return self.wave.eval(x + c1t - xi) - self.wave.eval(-x + c1t - xi)

    def headroom(self, t, x):
        # the smooth branch is x > 0; the kink sits exactly at x = 0
        return np.where(np.asarray(x) > 0.0, self.branch(t, x), -1.0)


class AppendixSupersolution:
    side = "upper"

    def __init__(self, params: AppendixParams, wave1: WaveProfile):
        self.p = params
        self.wave = wave1

    def window(self, t):
        return np.asarray(t) <= self.p.t1 + 1e-9

    def value(self, t, x):
        return eval_appendix(self.p, self.wave, t, x)[1]

    def branch(self, t, x):
        xi = float(self.p.xi(t))
        c1t = self.p.c1 * t
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0.0,
                        self.wave.eval(x + c1t + xi) + self.wave.eval(-x + c1t + xi),
                        2.0 * self.wave.eval(c1t + xi))

    def headroom(self, t, x):
        # C^1 kink at x = 0: treat a neighborhood of it as clamped
        room = 1.0 - self.branch(t, x)
        return np.where(np.abs(np.asarray(x)) > 1e-9, room, -1.0)


# ---------------------------------------------------------------------------
# checks


@dataclass
class ViolationReport:
    side: str
    worst: float
    t_worst: float
    x_worst: float
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def to_dict(self) -> dict:
        return {"side": self.side, "worst": self.worst, "t_worst": self.t_worst,
                "x_worst": self.x_worst, "n_checked": self.n_checked,
                "tol": self.tol, "passed": self.passed}


def check_ordering(traj: Trajectory, envelope, side: str,
                   tol: float = 1e-3) -> ViolationReport:
    """Worst signed ordering violation of an envelope against a trajectory.

    side 'lower': envelope - u should be <= 0; side 'upper': u - envelope.
    """
    x = traj.grid.nodes()
    worst = -np.inf
    t_worst = x_worst = np.nan
    n = 0
    for snap in traj.snapshots:
        if not envelope.window(snap.t):
            continue
        env = envelope.value(snap.t, x)
        diff = env - snap.u if side == "lower" else snap.u - env
        n += len(x)
        k = int(np.argmax(diff))
        if diff[k] > worst:
            worst, t_worst, x_worst = float(diff[k]), snap.t, float(x[k])
    if n == 0:
        raise ConfigError("envelope validity window does not overlap the trajectory")
    return ViolationReport(side=side, worst=worst, t_worst=t_worst,
                           x_worst=x_worst, n_checked=n, tol=tol)


def residual_sign_check(envelope, r: SpatialReaction, times, x: np.ndarray,
                        dz: float, dt_probe: float, headroom_pad: float = 1e-9):
    """Max wrong-sign parabolic residual of a closed-form envelope.

    L = d/dt E - d2/dx2 E - f(x, E), evaluated by centered differences on the
    probe spacings, restricted to points where the clamp is inactive at the
    whole stencil.  Returns max L for a subsolution and -min L for a
    supersolution (both should be <= tol for the sign to be certified).
    """
    worst = -np.inf
    n = 0
    sign = 1.0 if envelope.side == "lower" else -1.0
    for t in np.atleast_1d(times):
        if not envelope.window(t):
            continue
        stencil_ok = np.ones(len(x), bool)
        for (tt, xx) in ((t, x), (t, x + dz), (t, x - dz),
                         (t + dt_probe, x), (t - dt_probe, x)):
            if not envelope.window(tt):
                stencil_ok[:] = False
                break
            stencil_ok &= np.asarray(envelope.headroom(tt, xx)) > headroom_pad
        if not stencil_ok.any():
            continue
        e0 = np.asarray(envelope.value(t, x))
        lap = (np.asarray(envelope.value(t, x + dz)) - 2.0 * e0
               + np.asarray(envelope.value(t, x - dz))) / (dz * dz)
        dt_ = (np.asarray(envelope.value(t + dt_probe, x))
               - np.asarray(envelope.value(t - dt_probe, x))) / (2.0 * dt_probe)
        residual = dt_ - lap - r.value(x, e0)
        vals = sign * residual[stencil_ok]
        n += int(stencil_ok.sum())
        worst = max(worst, float(vals.max()))
    if n == 0:
        raise ConfigError("no smooth-branch probe points inside the window")
    return {"worst": worst, "n_checked": n, "side": envelope.side}


def sliding_check(traj: Trajectory, epsilon: float, sigma: float,
                  beta_rate: float, eta_level: float, t0: float,
                  horizon: float, tol: float = 1e-4, n_times: int = 33) -> dict:
    """Squeeze u between its own time-slid translates (uniqueness device).

    W+(t,x) = min(1, u(t0 + t + sigma eps (1-e^{-beta t}), x) + eps e^{-beta t})
    and the mirrored W-; checks W- <= u(t0+t) <= W+ on [0, horizon].
    """
    if epsilon >= eta_level:
        raise ConfigError(f"epsilon={epsilon} must be below eta={eta_level}")
    r = traj.reaction
    s = np.linspace(0.0, 2.0 * eta_level, 257)
    near0 = float(np.maximum(r.f1.derivative(s), r.f2.derivative(s)).max())
    s = np.linspace(1.0 - 2.0 * eta_level, 1.0, 257)
    near1 = float(np.maximum(r.f1.derivative(s), r.f2.derivative(s)).max())
    beta_admissible = -max(near0, near1)
    flags = []
    if beta_admissible <= 0.0:
        flags.append("no admissible damping rate at this eta level")
    elif beta_rate > beta_admissible:
        flags.append(f"beta_rate {beta_rate} exceeds admissible {beta_admissible:.4g}")

    times = traj.times()
    worst_upper = worst_lower = -np.inf
    for t in np.linspace(0.0, horizon, n_times):
        decay = np.exp(-beta_rate * t)
        slide = sigma * epsilon * (1.0 - decay)
        tu = t0 + t
        if tu + slide > times[-1] or tu - slide < times[0]:
            break
        u_now = traj.values_at(tu)
        w_plus = np.minimum(traj.values_at(tu + slide) + epsilon * decay, 1.0)
        w_minus = np.maximum(traj.values_at(tu - slide) - epsilon * decay, 0.0)
        worst_upper = max(worst_upper, float(np.max(u_now - w_plus)))
        worst_lower = max(worst_lower, float(np.max(w_minus - u_now)))
    passed = (worst_upper <= tol and worst_lower <= tol and not flags)
    return {"worst_upper": worst_upper, "worst_lower": worst_lower,
            "beta_admissible": beta_admissible, "flags": flags,
            "tol": tol, "passed": passed}


def stability_delta(traj: Trajectory, wave2: WaveProfile, beta: float,
                    t0: float, epsilon: float, rho: float = None) -> float:
    """sup over t >= t0 of ||u - phi2(. + c2 t + beta)||_inf.

    Requires the distance at t0 to be at most epsilon (and epsilon < rho/4
    when rho is supplied).
    """
    if rho is not None and not epsilon < 0.25 * rho:
        raise ConfigError(f"need epsilon < rho/4 = {0.25 * rho}")
    x = traj.grid.nodes()
    c2 = wave2.speed

    def dist(snap):
        return float(np.max(np.abs(snap.u - wave2.eval(x + c2 * snap.t + beta))))

    start = None
    for k, snap in enumerate(traj.snapshots):
        if snap.t >= t0 - 1e-9:
            start = k
            break
    if start is None:
        raise ConfigError(f"t0={t0} beyond the stored trajectory")
    d0 = dist(traj.snapshots[start])
    if d0 > epsilon:
        raise ConfigError(
            f"closeness precondition fails at t0: dist={d0:.3g} > eps={epsilon}")
    return max(dist(s) for s in traj.snapshots[start:])
