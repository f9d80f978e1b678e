"""Spectral densities and bath correlation functions by frequency quadrature.

The two-point correlation functions of the bath coupling operator are

    eta(t) = - int_0^inf J(w) sin(t w) dw          (temperature independent)
    nu(t)  = + int_0^inf f(w) cos(t w) dw,         f(w) = J(w) coth(beta w / 2)

Every spectral density variant is extended to negative frequency as an odd
function, which makes f even.  ``eta``/``nu`` are the point API: adaptive
oscillatory quadrature tuned for accuracy.  Batch consumers (the nested
generator quadratures) should build a :class:`CorrelationTable`, which
evaluates both functions on a graded grid with a vectorised panel rule and
interpolates.

The Drude variant decays only algebraically in frequency, so its quadrature
is split at a finite cut: the thermal part of the integrand is exponentially
small beyond the cut, while the zero-temperature remainder is integrated in
closed form through the exponential integral.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import exp1

__all__ = [
    "Drude",
    "DqdPhonon",
    "Tabulated",
    "BathContext",
    "QuadratureConfig",
    "CorrelationTable",
    "QuadratureError",
    "eval_J",
    "eval_f",
    "eta",
    "nu",
    "correlation_table",
]


class QuadratureError(RuntimeError):
    """Frequency quadrature failed to meet the requested tolerance."""


@dataclass(frozen=True)
class Drude:
    """J(w) = gamma lambda_c^2 w / (lambda_c^2 + w^2)."""

    gamma: float
    lambda_c: float

    def __post_init__(self):
        if self.lambda_c <= 0:
            raise ValueError("lambda_c must be > 0")


@dataclass(frozen=True)
class DqdPhonon:
    """J(w) = gamma w (1 - sinc(w / omega_c)) exp(-w^2 / (2 omega_max^2))."""

    gamma: float
    omega_c: float
    omega_max: float

    def __post_init__(self):
        if self.omega_c <= 0 or self.omega_max <= 0:
            raise ValueError("omega_c and omega_max must be > 0")


@dataclass(frozen=True)
class Tabulated:
    """Piecewise-linear J on an ascending positive grid; zero outside.

    Quadrature against the tabulated variant uses the trapezoid rule on the
    stored grid, so its accuracy is set by the grid density; documented as
    the low-accuracy option.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or len(g) < 2:
            raise ValueError("grid and values must be matching 1-d arrays")
        if np.any(np.diff(g) <= 0):
            raise ValueError("tabulated grid must be strictly ascending")
        if g[0] <= 0:
            raise ValueError("tabulated grid must be positive")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)


SpectralDensity = Drude | DqdPhonon | Tabulated


@dataclass(frozen=True)
class QuadratureConfig:
    epsabs: float = 1e-13
    epsrel: float = 1e-11
    limit: int = 400
    # frequency cut, in units of the variant scale, past which the thermal
    # part of the integrand is negligible
    cut_factor: float = 45.0


@dataclass(frozen=True)
class BathContext:
    """Immutable bath description shared by all generator builders."""

    sd: SpectralDensity
    beta: float
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")


def _one_minus_sinc(x):
    """1 - sin(x)/x without cancellation near zero."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-2
    xs = x[small]
    out[small] = xs**2 / 6.0 - xs**4 / 120.0 + xs**6 / 5040.0
    xl = x[~small]
    out[~small] = 1.0 - np.sin(xl) / xl
    return out


def _J_over_omega(sd: SpectralDensity, omega):
    """J(w)/w, evaluated safely through w = 0 (even, finite)."""
    w = np.abs(np.asarray(omega, dtype=float))
    if isinstance(sd, Drude):
        return sd.gamma * sd.lambda_c**2 / (sd.lambda_c**2 + w**2)
    if isinstance(sd, DqdPhonon):
        return sd.gamma * _one_minus_sinc(w / sd.omega_c) * np.exp(-(w**2) / (2.0 * sd.omega_max**2))
    vals = np.interp(w, sd.grid, sd.values, left=0.0, right=0.0)
    # inside the first grid cell fall back to the linear J through the origin
    first = sd.values[0] / sd.grid[0]
    vals = np.where(w < sd.grid[0], first * w, vals)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(w > 0, vals / np.where(w > 0, w, 1.0), first)
    return ratio


def eval_J(sd: SpectralDensity, omega):
    """Spectral density, extended to negative frequency as an odd function."""
    w = np.asarray(omega, dtype=float)
    out = np.sign(w) * _J_over_omega(sd, w) * np.abs(w)
    return out if out.shape else float(out)


def eval_f(ctx: BathContext, omega):
    """f(w) = J(w) coth(beta w / 2): even, finite at w = 0.

    Below a small frequency the removable singularity is evaluated through
    the series limit f -> (2/beta) J'(0), using the safe J(w)/w kernel.
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    eps = 1e-6 * _variant_scale(ctx.sd)
    jw = _J_over_omega(ctx.sd, w)
    out = np.empty_like(jw)
    small = np.abs(w) < eps
    out[small] = (2.0 / ctx.beta) * jw[small]
    wl = np.abs(w[~small])
    out[~small] = jw[~small] * wl / np.tanh(0.5 * ctx.beta * wl)
    if np.ndim(omega) == 0:
        return float(out[0])
    return out


def _variant_scale(sd: SpectralDensity) -> float:
    if isinstance(sd, Drude):
        return sd.lambda_c
    if isinstance(sd, DqdPhonon):
        return min(sd.omega_c, sd.omega_max)
    return float(sd.grid[-1])


def _panel_cut(ctx: BathContext) -> float:
    """Upper quadrature cut for the numerically integrated part."""
    sd = ctx.sd
    thermal = ctx.quad.cut_factor / ctx.beta
    if isinstance(sd, Drude):
        return max(12.0 * sd.lambda_c, thermal)
    if isinstance(sd, DqdPhonon):
        # Gaussian factor below 1e-16 past 8.6 omega_max
        return 8.6 * sd.omega_max
    return float(sd.grid[-1])


def _drude_rational_tail(sd: Drude, w_cut: float, t):
    """int_{w_cut}^inf J(w) e^{i w t} dw in closed form (t > 0).

    Uses w/(L^2+w^2) = (1/(w - iL) + 1/(w + iL))/2 and
    int_W^inf e^{iwt}/(w-a) dw = e^{iat} E1(-i (W-a) t).
    """
    t = np.asarray(t, dtype=float)
    lam = sd.lambda_c
    za = -1j * (w_cut - 1j * lam) * t
    zb = -1j * (w_cut + 1j * lam) * t
    val = 0.5 * (np.exp(-lam * t) * exp1(za) + np.exp(lam * t) * exp1(zb))
    return sd.gamma * lam**2 * val


def _tabulated_transform(sd: Tabulated, kernel, t: float) -> float:
    w = sd.grid
    return float(np.trapezoid(sd.values * kernel(w * t), w))


def _point_quad(ctx: BathContext, t: float, kind: str) -> float:
    """Adaptive oscillatory quadrature of eta (kind='sin') or nu (kind='cos')."""
    sd = ctx.sd
    qc = ctx.quad
    w_cut = _panel_cut(ctx)
    if isinstance(sd, Tabulated):
        if kind == "sin":
            return -_tabulated_transform(sd, np.sin, t)
        return float(np.trapezoid(eval_f(ctx, sd.grid) * np.cos(sd.grid * t), sd.grid))

    if kind == "sin":
        integrand = lambda w: eval_J(sd, w)
        sign = -1.0
    else:
        integrand = lambda w: eval_f(ctx, w)
        sign = 1.0

    if t == 0.0:
        if kind == "sin":
            return 0.0
        weight_args = {}
    else:
        weight_args = {"weight": kind, "wvar": t}

    val, err = quad(integrand, 0.0, w_cut, epsabs=qc.epsabs, epsrel=qc.epsrel,
                    limit=qc.limit, maxp1=100, **weight_args)
    scale = max(abs(val), qc.epsabs)
    if err > 1e-6 * scale + 10 * qc.epsabs:
        raise QuadratureError(
            f"oscillatory quadrature error {err:.2e} too large for {kind} transform at t={t}"
        )
    if isinstance(sd, Drude) and t != 0.0 and sd.gamma != 0.0:
        tail = _drude_rational_tail(sd, w_cut, t)
        val += tail.imag if kind == "sin" else tail.real
    return sign * val


def eta(ctx: BathContext, t: float) -> float:
    """eta(t) = -int_0^inf J(w) sin(t w) dw; odd in t, eta(0) = 0."""
    t = float(t)
    if t == 0.0:
        return 0.0
    return float(np.sign(t)) * _point_quad(ctx, abs(t), "sin")


def nu(ctx: BathContext, t: float) -> float:
    """nu(t) = int_0^inf f(w) cos(t w) dw; even in t.

    For the Drude variant nu diverges logarithmically at t = 0.
    """
    t = abs(float(t))
    if t == 0.0 and isinstance(ctx.sd, Drude) and ctx.sd.gamma != 0.0:
        raise QuadratureError("Drude nu(t) diverges logarithmically at t = 0")
    return _point_quad(ctx, t, "cos")


@dataclass(frozen=True)
class CorrelationTable:
    """Cubic-spline tables of eta and nu on a graded time grid.

    ``tau_decay`` is the slowest decay scale of the correlation functions.
    Values below the first grid point are clamped (relevant only for the
    Drude log behaviour of nu at the origin); values past the end of the
    grid are zero when the tabulated envelope has decayed there, otherwise
    the table is too short and evaluation fails.
    """

    tau: np.ndarray
    eta_values: np.ndarray
    nu_values: np.ndarray
    tau_decay: float
    _eta_spline: object = field(repr=False, default=None)
    _nu_spline: object = field(repr=False, default=None)

    @property
    def decayed(self) -> bool:
        peak = max(np.abs(self.eta_values).max(), np.abs(self.nu_values).max(), 1e-300)
        tail = max(abs(self.eta_values[-1]), abs(self.nu_values[-1]))
        return tail < 1e-9 * peak

    def _eval(self, spline, t):
        t = np.asarray(t, dtype=float)
        beyond = t > self.tau[-1]
        if np.any(beyond) and not self.decayed:
            raise QuadratureError(
                f"correlation table ends at tau = {self.tau[-1]:.3g} before decay")
        clipped = np.clip(t, self.tau[0], self.tau[-1])
        return np.where(beyond, 0.0, spline(clipped))

    def eta(self, t):
        return self._eval(self._eta_spline, t)

    def nu(self, t):
        return self._eval(self._nu_spline, t)


def _correlation_rates(ctx: BathContext) -> tuple[float, float]:
    """(fast, slow) decay rates of the correlation functions in time."""
    thermal = 2.0 * np.pi / ctx.beta
    sd = ctx.sd
    if isinstance(sd, Drude):
        return max(sd.lambda_c, thermal), min(sd.lambda_c, thermal)
    if isinstance(sd, DqdPhonon):
        fast = max(sd.omega_max, sd.omega_c, thermal)
        return fast, min(sd.omega_max, thermal)
    scale = _variant_scale(sd)
    return max(scale, thermal), min(0.25 * scale, thermal)


def correlation_table(ctx: BathContext, tau_max: float,
                      n_log: int = 700, step_fraction: float = 0.04) -> CorrelationTable:
    """Tabulate eta and nu on [~0, tau_max] with a vectorised panel rule.

    The grid is logarithmic through the fast initial structure (thermal
    transients, the Drude log region) and uniform across the slow decay.
    The frequency integral uses fixed Gauss-Legendre panels sized to resolve
    the fastest oscillation present, plus the closed-form Drude remainder.
    """
    from scipy.interpolate import CubicSpline

    sd = ctx.sd
    rate_fast, rate_slow = _correlation_rates(ctx)
    tau_max = float(tau_max)
    knee = min(8.0 / rate_fast, tau_max)
    tau_lo = np.geomspace(1e-7 / rate_fast, knee, n_log)
    step = step_fraction / rate_slow
    n_lin = max(int(np.ceil((tau_max - knee) / step)), 8)
    tau_hi = np.linspace(knee, tau_max, n_lin + 1)[1:]
    tau = np.concatenate(([0.0], tau_lo, tau_hi)) if not isinstance(sd, Drude) \
        else np.concatenate((tau_lo, tau_hi))

    w_cut = _panel_cut(ctx)
    # panel width: resolve both the spectral structure and the largest tau
    struct = _variant_scale(sd)
    width = min(0.5 * struct, 2.5 * 2.0 * np.pi / (tau_max * 1.05))
    n_panels = max(int(np.ceil(w_cut / width)), 4)
    edges = np.linspace(0.0, w_cut, n_panels + 1)
    xg, wg = np.polynomial.legendre.leggauss(16)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()

    jw = eval_J(sd, nodes) * weights
    fw = eval_f(ctx, nodes) * weights

    eta_vals = np.empty(len(tau))
    nu_vals = np.empty(len(tau))
    chunk = 256
    for i in range(0, len(tau), chunk):
        tt = tau[i:i + chunk, None]
        phase = nodes[None, :] * tt
        eta_vals[i:i + chunk] = -np.sin(phase) @ jw
        nu_vals[i:i + chunk] = np.cos(phase) @ fw

    if isinstance(sd, Drude):
        tail = _drude_rational_tail(sd, w_cut, tau)
        eta_vals -= tail.imag
        nu_vals += tail.real

    return CorrelationTable(
        tau=tau,
        eta_values=eta_vals,
        nu_values=nu_vals,
        tau_decay=1.0 / rate_slow,
        _eta_spline=CubicSpline(tau, eta_vals),
        _nu_spline=CubicSpline(tau, nu_vals),
    )
