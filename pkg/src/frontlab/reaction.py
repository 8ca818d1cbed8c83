"""Bistable reaction terms and their spatial blending.

A bistable nonlinearity f has stable zeros at 0 and 1, a single unstable
interior zero theta, and positive net potential F(1) = int_0^1 f.  Two such
terms f1 (governing x1 >= 0) and f2 (governing x1 <= -x0) are joined across
the transition slab [-x0, 0] by a monotone blend, giving the space-dependent
reaction f(x1, u) = chi(x1) f1(u) + (1 - chi(x1)) f2(u).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .reporting import CheckResult, VerificationReport

__all__ = [
    "BistableNonlinearity",
    "SpatialReaction",
    "ReactionError",
    "cubic",
    "tabulated",
    "validate_bistable",
    "derive_cf",
    "smoothstep",
    "blend_function",
]

_VALIDATION_GRID = 1000


class ReactionError(ValueError):
    """Raised for ill-posed nonlinearities or blends."""


def smoothstep(s, order: int = 5):
    """Monotone polynomial step on [0,1]; order 5 is C^2, 3 is C^1, 1 is C^0."""
    s = np.clip(s, 0.0, 1.0)
    if order == 5:
        return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    if order == 3:
        return s * s * (3.0 - 2.0 * s)
    if order == 1:
        return s
    raise ReactionError(f"unsupported smoothstep order {order}")


def blend_function(kind: str) -> Callable:
    """Transition profile chi-builder by name ('quintic', 'cubic', 'linear')."""
    orders = {"quintic": 5, "cubic": 3, "linear": 1}
    if kind not in orders:
        raise ReactionError(f"unknown blend kind {kind!r}")
    order = orders[kind]
    return lambda s: smoothstep(s, order)


@dataclass(frozen=True)
class BistableNonlinearity:
    """A validated scalar reaction term with closed-form or tabulated data.

    Evaluation outside [0,1] continues linearly with slope f'(0) below 0 and
    f'(1) above 1, so numerical overshoots are pushed back toward the stable
    states.
    """

    kind: str                      # "cubic" | "tabulated"
    theta: float                   # interior zero in (0,1)
    derivative_at_0: float
    derivative_at_1: float
    potential_at_1: float          # F(1) = int_0^1 f
    lipschitz_bound: float         # max |f'| on [0,1]
    parameters: dict = field(default_factory=dict)
    _value: Callable = field(default=None, repr=False, compare=False)
    _deriv: Callable = field(default=None, repr=False, compare=False)
    _pot: Callable = field(default=None, repr=False, compare=False)

    def value(self, u):
        """f(u), vectorized; linear extension outside [0,1]."""
        u = np.asarray(u, dtype=float)
        uc = np.clip(u, 0.0, 1.0)
        out = self._value(uc)
        out = np.where(u < 0.0, self.derivative_at_0 * u, out)
        out = np.where(u > 1.0, self.derivative_at_1 * (u - 1.0), out)
        return out if out.ndim else float(out)

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        uc = np.clip(u, 0.0, 1.0)
        out = self._deriv(uc)
        out = np.where(u < 0.0, self.derivative_at_0, out)
        out = np.where(u > 1.0, self.derivative_at_1, out)
        return out if out.ndim else float(out)

    def potential(self, u):
        """F(u) = int_0^u f, extended consistently with the linear tails."""
        u = np.asarray(u, dtype=float)
        uc = np.clip(u, 0.0, 1.0)
        out = self._pot(uc)
        out = np.where(u < 0.0, 0.5 * self.derivative_at_0 * u * u, out)
        out = np.where(
            u > 1.0,
            self.potential_at_1 + 0.5 * self.derivative_at_1 * (u - 1.0) ** 2,
            out,
        )
        return out if out.ndim else float(out)

    def evaluate(self, u):
        """(f(u), f'(u), F(u)) in one call."""
        return self.value(u), self.derivative(u), self.potential(u)

    def sup_derivative(self) -> float:
        return self.lipschitz_bound

    def spec(self) -> dict:
        """Canonical JSON-ready description (used for hashing and configs)."""
        return {"kind": self.kind, "theta": self.theta, **self.parameters}


def cubic(theta: float, scale: float = 1.0) -> BistableNonlinearity:
    """f(u) = scale * u (1-u) (u-theta); the workhorse bistable family."""
    if not 0.0 < theta < 1.0:
        raise ReactionError(f"theta must lie in (0,1), got {theta}")
    if scale <= 0.0:
        raise ReactionError(f"scale must be positive, got {scale}")
    s, th = float(scale), float(theta)

    def val(u):
        return s * u * (1.0 - u) * (u - th)

    def der(u):
        return s * (-3.0 * u * u + 2.0 * (1.0 + th) * u - th)

    def pot(u):
        return s * u * u * (-3.0 * u * u + 4.0 * (1.0 + th) * u - 6.0 * th) / 12.0

    grid = np.linspace(0.0, 1.0, _VALIDATION_GRID)
    return BistableNonlinearity(
        kind="cubic",
        theta=th,
        derivative_at_0=-s * th,
        derivative_at_1=-s * (1.0 - th),
        potential_at_1=s * (1.0 - 2.0 * th) / 12.0,
        lipschitz_bound=float(np.max(np.abs(der(grid)))),
        parameters={"theta": th, "scale": s},
        _value=val,
        _deriv=der,
        _pot=pot,
    )


def tabulated(u_samples, f_samples, df_samples) -> BistableNonlinearity:
    """Build a nonlinearity from (u, f, f') samples covering [0,1].

    Uses cubic Hermite interpolation of the given values and derivatives;
    at least 256 samples are required.
    """
    u = np.asarray(u_samples, dtype=float)
    f = np.asarray(f_samples, dtype=float)
    df = np.asarray(df_samples, dtype=float)
    if u.ndim != 1 or u.shape != f.shape or u.shape != df.shape:
        raise ReactionError("u, f, df samples must be 1-D arrays of equal length")
    if len(u) < 256:
        raise ReactionError(f"tabulated kind needs >= 256 samples, got {len(u)}")
    if np.any(np.diff(u) <= 0):
        raise ReactionError("u samples must be strictly increasing")
    if u[0] > 0.0 or u[-1] < 1.0:
        raise ReactionError("table support must cover [0,1]")

    spline = CubicHermiteSpline(u, f, df)
    pot_spline = spline.antiderivative()
    pot0 = float(pot_spline(0.0))
    f0, f1 = float(spline(0.0)), float(spline(1.0))
    if abs(f0) > 1e-8 or abs(f1) > 1e-8:
        raise ReactionError(f"tabulated f must vanish at 0 and 1 (got {f0}, {f1})")

    d0 = float(spline(0.0, nu=1))
    d1 = float(spline(1.0, nu=1))
    fine = np.linspace(0.0, 1.0, 4 * len(u))
    vals = spline(fine)
    sign_change = np.where(np.diff(np.signbit(vals[1:-1])))[0]
    if len(sign_change) != 1:
        raise ReactionError("tabulated f must change sign exactly once in (0,1)")
    i = sign_change[0] + 1
    theta = brentq(spline, fine[i], fine[i + 1])

    return BistableNonlinearity(
        kind="tabulated",
        theta=float(theta),
        derivative_at_0=d0,
        derivative_at_1=d1,
        potential_at_1=float(pot_spline(1.0) - pot0),
        lipschitz_bound=float(np.max(np.abs(spline(fine, nu=1)))),
        parameters={"n_samples": len(u)},
        _value=lambda x: spline(x),
        _deriv=lambda x: spline(x, nu=1),
        _pot=lambda x: pot_spline(x) - pot0,
    )


def validate_bistable(f: BistableNonlinearity, grid_size: int = 1000,
                      tol: float = 1e-9) -> VerificationReport:
    """Check the bistability conditions on a sampling grid.

    Conditions: roots at 0 and 1 (F_2), negative endpoint slopes (F_3),
    single sign change at theta (F_4), positive net potential (F_8).
    A sign-structure failure short-circuits the potential check.
    """
    if grid_size < 100:
        raise ReactionError("grid_size must be at least 100")
    grid = np.unique(np.concatenate([
        np.linspace(0.0, 1.0, grid_size), [0.0, f.theta, 1.0]]))
    vals = f.value(grid)
    report = VerificationReport(name="bistable-validation")

    r0, r1 = abs(f.value(0.0)), abs(f.value(1.0))
    report.add(CheckResult("F2_root_at_0", r0 <= tol, value=r0, threshold=tol))
    report.add(CheckResult("F2_root_at_1", r1 <= tol, value=r1, threshold=tol))

    report.add(CheckResult("F3_slope_at_0", f.derivative_at_0 < 0.0,
                           value=f.derivative_at_0, threshold=0.0))
    report.add(CheckResult("F3_slope_at_1", f.derivative_at_1 < 0.0,
                           value=f.derivative_at_1, threshold=0.0))

    interior = (grid > tol) & (grid < 1.0 - tol)
    lower = interior & (grid < f.theta - tol)
    upper = interior & (grid > f.theta + tol)
    bad_low = lower & (vals >= 0.0)
    bad_up = upper & (vals <= 0.0)
    sign_ok = not (bad_low.any() or bad_up.any())
    witness = None
    if not sign_ok:
        idx = np.where(bad_low | bad_up)[0][0]
        witness = (float(grid[idx]), float(vals[idx]))
    report.add(CheckResult("F4_sign_structure", sign_ok, value=witness,
                           detail=f"theta={f.theta:.6g}"))

    if sign_ok:
        report.add(CheckResult("F8_positive_potential", f.potential_at_1 > 0.0,
                               value=f.potential_at_1, threshold=0.0))
    else:
        report.add(CheckResult("F8_positive_potential", False,
                               value=f.potential_at_1,
                               detail="skipped: sign structure failed"))
    return report


@dataclass(frozen=True)
class SpatialReaction:
    """Space-dependent reaction sandwiched between two bistable terms.

    f(x1, u) equals f1(u) for x1 >= 0, f2(u) for x1 <= -x0, and the
    chi-weighted convex combination inside the transition slab.
    """

    f1: BistableNonlinearity
    f2: BistableNonlinearity
    x0: float
    blend: str = "quintic"
    c_f: float = field(default=None)

    def __post_init__(self):
        if self.x0 <= 0.0:
            raise ReactionError(f"transition width x0 must be positive, got {self.x0}")
        blend_function(self.blend)  # validates the name
        u = np.linspace(0.0, 1.0, 2049)
        gap = self.f1.value(u) - self.f2.value(u)
        homogeneous = np.max(np.abs(gap)) <= 1e-12
        # equal interior zeros are admitted only for the degenerate
        # homogeneous configuration f1 == f2 (no transition at all)
        if not self.f1.theta < self.f2.theta and not homogeneous:
            raise ReactionError(
                f"interior zeros must be ordered theta1 < theta2 "
                f"(got {self.f1.theta}, {self.f2.theta})")
        if gap.min() < -1e-12:
            i = int(np.argmin(gap))
            raise ReactionError(
                f"sandwich f2 <= f1 fails at u={u[i]:.6g} (gap {gap[i]:.3g})")
        if self.c_f is None:
            object.__setattr__(self, "c_f", derive_cf(self.f1, self.f2))

    def chi(self, x1):
        """Blend weight: 1 on x1 >= 0, 0 on x1 <= -x0, monotone between."""
        x1 = np.asarray(x1, dtype=float)
        step = blend_function(self.blend)((x1 + self.x0) / self.x0)
        out = np.where(x1 >= 0.0, 1.0, np.where(x1 <= -self.x0, 0.0, step))
        return out if out.ndim else float(out)

    def value(self, x1, u):
        """f(x1, u); broadcasts over arrays."""
        w = self.chi(x1)
        return w * self.f1.value(u) + (1.0 - w) * self.f2.value(u)

    def value_weighted(self, chi, u):
        """f at precomputed blend weights (hot path for time stepping)."""
        return chi * self.f1.value(u) + (1.0 - chi) * self.f2.value(u)

    def field_fn(self, chi):
        """Fused f(., u) for a fixed blend-weight array (time-stepping loop).

        Precomputes the blended extension slopes so each evaluation does one
        clip and one pair of branch merges instead of two full evaluations.
        """
        d0 = chi * self.f1.derivative_at_0 + (1.0 - chi) * self.f2.derivative_at_0
        d1 = chi * self.f1.derivative_at_1 + (1.0 - chi) * self.f2.derivative_at_1
        f1v, f2v = self.f1._value, self.f2._value
        one_minus = 1.0 - chi

        def f(u):
            uc = np.clip(u, 0.0, 1.0)
            out = chi * f1v(uc) + one_minus * f2v(uc)
            out = np.where(u < 0.0, d0 * u, out)
            return np.where(u > 1.0, d1 * (u - 1.0), out)

        return f

    def derivative_u(self, x1, u):
        w = self.chi(x1)
        return w * self.f1.derivative(u) + (1.0 - w) * self.f2.derivative(u)

    def lipschitz_bound(self) -> float:
        return max(self.f1.lipschitz_bound, self.f2.lipschitz_bound)

    def spec(self) -> dict:
        return {"f1": self.f1.spec(), "f2": self.f2.spec(),
                "x0": self.x0, "blend": self.blend}


def eval_spatial(r: SpatialReaction, x1, u):
    """Module-level alias for r.value(x1, u)."""
    return r.value(x1, u)


def derive_cf(f1: BistableNonlinearity, f2: BistableNonlinearity,
              n_samples: int = 4096) -> float:
    """Smallest C with |f1(u) - f2(u)| <= C (1-u) on [0,1].

    Dense sampling on [0,1) plus the u->1 limit |f2'(1) - f1'(1)|.
    """
    u = np.linspace(0.0, 1.0, n_samples, endpoint=False)
    ratio = np.abs(f1.value(u) - f2.value(u)) / (1.0 - u)
    endpoint = abs(f1.derivative_at_1 - f2.derivative_at_1)
    return float(max(ratio.max(), endpoint))
