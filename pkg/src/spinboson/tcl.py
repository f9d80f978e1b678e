"""Time-convolutionless generators at second and fourth order.

Both orders are built from ordered bath cumulants of the coupling
superoperators, expressed directly in the Bloch representation.  With
``A(s)`` the interaction-picture coupling operator, write ``Am(s)`` /
``Ap(s)`` for the Bloch matrices of ``[A(s), .]`` and ``{A(s), .}`` and

    W(x, s) = nu(x) Am(s) + i eta(x) Ap(s).

After shifting all times so the latest one sits at zero (which converts the
interaction-picture generator into the one that drives the Bloch equations
directly and makes the long-time limit exist), the second-order integrand
over the delay ``tau`` is ``-Am(0) W(tau, -tau)`` and the fourth-order
ordered-cumulant integrand over ``0 <= tau1 <= tau2 <= tau3`` is

    Am(0) ( [Am(-tau1), W(tau2, -tau2)] W(tau3 - tau1, -tau3)
            + Am(-tau1) W(tau2 - tau1, -tau2) W(tau3, -tau3)
            - W(tau3, -tau3) Am(-tau1) W(tau2 - tau1, -tau2) )

where the three products are the two crossing Wick pairings minus their
factorised counterparts (the non-crossing pairing cancels exactly against
the remaining factorised term).  Row 0 of every integrand sample vanishes
and rows 1 and 3 are proportional through a3 row3 = a1 row1, because both
rows of the leftmost factor ``Am(0)`` are multiples of the same unit row;
the full generators inherit both constraints to machine precision.

The fourth-order generator integrates the ordered wedge with tensorised
Gauss-Legendre quadrature after mapping it to the unit cube, and takes the
long-time limit by evaluating on a geometric time ladder until saturation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bath import BathContext, CorrelationTable, correlation_table
from .system import ANTI, COMM, GeneratorMatrix, SpinBosonParams

__all__ = [
    "Tcl4Config",
    "NonConvergenceError",
    "tcl2_generator",
    "tcl4_integrand",
    "tcl4_generator",
    "total_generator",
]


class NonConvergenceError(RuntimeError):
    """The long-time saturation ladder did not converge."""


@dataclass(frozen=True)
class Tcl4Config:
    """Controls for the wedge quadrature and the saturation ladder.

    ``asymptotic_method`` selects how the long-time limit is taken:
    "saturation" evaluates the wedge on a geometric time ladder until the
    value stops changing; "support-box" rewrites the infinite wedge in gap
    variables, where the integrand support is a box bounded by the
    correlation decay horizon, and integrates it once with per-axis
    geometrically graded panels.  The box route costs one large quadrature
    but reaches far smaller errors, which the mode-sum convergence
    measurements need.
    """

    points: int = 32
    t_start_factor: float = 6.0
    growth: float = 1.4
    sat_tol: float = 1e-4
    max_steps: int = 24
    chunk: int = 16384
    asymptotic_method: str = "saturation"
    panel_points: int = 8
    panel_ratio: float = 2.0
    panel_min_factor: float = 1e-7

    def __post_init__(self):
        if self.points < 2 or self.t_start_factor <= 0 or self.growth <= 1.0:
            raise ValueError("invalid quadrature configuration")
        if self.sat_tol <= 0:
            raise ValueError("saturation tolerance must be > 0")
        if self.asymptotic_method not in ("saturation", "support-box"):
            raise ValueError(f"unknown asymptotic method {self.asymptotic_method!r}")


def _bloch_rot_factors(a1, a3, omega, tau):
    c = np.cos(omega * tau)[..., None, None]
    s = np.sin(omega * tau)[..., None, None]
    g1, g2, g3 = COMM
    h1, h2, h3 = ANTI
    # A(-tau) = a3 s3 - a1 (cos(omega tau) s1 + sin(omega tau) s2)
    am = a3 * g3 - a1 * (c * g1 + s * g2)
    ap = a3 * h3 - a1 * (c * h1 + s * h2)
    return am, ap


def _cum4_batch(params: SpinBosonParams, tau1, tau2, tau3, eta_fn, nu_fn):
    """Fourth-order cumulant integrand for batches of ordered delays.

    Returns a real (K, 4, 4) array for ``0 <= tau1 <= tau2 <= tau3``.
    """
    a1, a3, omega = params.a1, params.a3, params.omega
    a0 = a3 * COMM[2] - a1 * COMM[0]
    am1, _ = _bloch_rot_factors(a1, a3, omega, tau1)
    am2, ap2 = _bloch_rot_factors(a1, a3, omega, tau2)
    am3, ap3 = _bloch_rot_factors(a1, a3, omega, tau3)

    def weight(x, am, ap):
        nu_v = np.asarray(nu_fn(x))[..., None, None]
        eta_v = np.asarray(eta_fn(x))[..., None, None]
        return nu_v * am + 1j * eta_v * ap

    b2 = weight(tau2, am2, ap2)
    b3 = weight(tau3 - tau1, am3, ap3)
    c2 = weight(tau2 - tau1, am2, ap2)
    d3 = weight(tau3, am3, ap3)

    term = (am1 @ b2 - b2 @ am1) @ b3
    term += am1 @ c2 @ d3
    term -= d3 @ am1 @ c2
    return np.real(a0 @ term)


def _tcl2_integrand(params: SpinBosonParams, tau, eta_fn, nu_fn):
    a1, a3, omega = params.a1, params.a3, params.omega
    a0 = a3 * COMM[2] - a1 * COMM[0]
    am, ap = _bloch_rot_factors(a1, a3, omega, tau)
    nu_v = np.asarray(nu_fn(tau))[..., None, None]
    eta_v = np.asarray(eta_fn(tau))[..., None, None]
    return np.real(-(a0 @ (nu_v * am + 1j * eta_v * ap)))


def _panel_nodes(edges: np.ndarray, order: int = 16):
    xg, wg = np.polynomial.legendre.leggauss(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights


def _delay_edges(t_end: float, params: SpinBosonParams, table: CorrelationTable):
    """Graded panel edges on [0, t_end]: geometric through the initial
    transient, uniform across the slow decay and the precession period."""
    knee = min(0.25 * table.tau_decay, 0.2 * t_end)
    period = 2.0 * np.pi / params.omega if params.omega > 0 else np.inf
    step = min(0.35 * table.tau_decay, period / 3.0, t_end / 8.0)
    lo = np.geomspace(1e-9 * t_end, knee, 40)
    hi = np.arange(knee, t_end, step)[1:]
    return np.concatenate(([0.0], lo, hi, [t_end]))


def _ensure_table(ctx: BathContext, table: CorrelationTable | None) -> CorrelationTable:
    """Table out to the correlation decay horizon (env < 1e-12 of peak).

    The generator integrands have no support past that horizon, so one
    table serves every evaluation time; beyond its end both functions are
    identically zero.
    """
    if table is not None:
        return table
    tau_max = 30.0 * _slow_scale(ctx)
    table = correlation_table(ctx, tau_max=tau_max)
    for _ in range(4):
        if table.decayed:
            return table
        tau_max *= 2.0
        table = correlation_table(ctx, tau_max=tau_max)
    raise NonConvergenceError(
        f"correlation functions not decayed by tau = {tau_max:.3g}")


def _decay_horizon(table: CorrelationTable, rel: float = 1e-12) -> float:
    env = np.maximum(np.abs(table.eta_values), np.abs(table.nu_values))
    peak = env.max()
    below = np.nonzero(env < rel * peak)[0]
    if len(below) == 0:
        return float(table.tau[-1])
    return float(table.tau[below[0]])


def tcl2_generator(params: SpinBosonParams, ctx: BathContext,
                   t: float | None = None,
                   table: CorrelationTable | None = None) -> GeneratorMatrix:
    """Second-order generator at time ``t``, or asymptotic for ``t = None``.

    Single ordered delay integral of the second-order cumulant; the
    asymptotic variant integrates until the correlation envelope has decayed
    below 1e-12 of its peak.  The coupling ``lam`` never enters: order
    prefactors belong to :func:`total_generator`.
    """
    table = _ensure_table(ctx, table)
    horizon = _decay_horizon(table)
    if t is None:
        t_end = horizon
    else:
        if t < 0:
            raise ValueError("t must be >= 0")
        t_end = min(float(t), horizon)
    if t_end == 0.0:
        return GeneratorMatrix(np.zeros((4, 4)), order=2, t=t)
    edges = _delay_edges(t_end, params, table)
    nodes, weights = _panel_nodes(edges)
    vals = _tcl2_integrand(params, nodes, table.eta, table.nu)
    m = np.tensordot(weights, vals, axes=1)
    return GeneratorMatrix(m, order=2, t=t, meta={"backend": "quadrature"})


def _slow_scale(ctx: BathContext) -> float:
    from .bath import _correlation_rates

    return 1.0 / _correlation_rates(ctx)[1]


def tcl4_integrand(params: SpinBosonParams, ctx: BathContext,
                   element: tuple[int, int],
                   t: float, t1: float, t2: float, t3: float) -> float:
    """Pointwise fourth-order cumulant integrand for ordered times.

    Times are the ordered integration variables ``t >= t1 >= t2 >= t3 >= 0``
    of the wedge; the evaluation shifts them so the latest sits at zero.
    Bath values come from the adaptive point quadrature, so single calls are
    accurate but slow; batch work goes through the tabulated route inside
    :func:`tcl4_generator`.
    """
    from .bath import eta as eta_point, nu as nu_point

    if not (t >= t1 >= t2 >= t3 >= 0.0):
        raise ValueError("times must satisfy t >= t1 >= t2 >= t3 >= 0")
    i, j = element
    if not (0 <= i < 4 and 0 <= j < 4):
        raise ValueError("element must index a 4x4 matrix")
    eta_fn = lambda x: np.array([eta_point(ctx, float(v)) for v in np.atleast_1d(x)])
    nu_fn = lambda x: np.array([nu_point(ctx, float(v)) for v in np.atleast_1d(x)])
    tau = np.array([[t - t1, t - t2, t - t3]])
    out = _cum4_batch(params, tau[:, 0], tau[:, 1], tau[:, 2], eta_fn, nu_fn)
    return float(out[0, i, j])


def _wedge_quadrature(params: SpinBosonParams, table: CorrelationTable,
                      t: float, cfg: Tcl4Config) -> np.ndarray:
    """Integrate the cumulant over the ordered wedge at horizon ``t``.

    Maps the wedge {t >= t1 >= t2 >= t3 >= 0} to the unit cube through
    (t1, t2, t3) = t (u1, u1 u2, u1 u2 u3), Jacobian t^3 u1^2 u2, with
    tensorised Gauss-Legendre nodes.
    """
    n = cfg.points
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1.0)
    uw = 0.5 * w
    u1, u2, u3 = np.meshgrid(u, u, u, indexing="ij")
    w3 = (uw[:, None, None] * uw[None, :, None] * uw[None, None, :]).ravel()
    u1 = u1.ravel()
    u2 = u2.ravel()
    u3 = u3.ravel()
    t1 = t * u1
    t2 = t1 * u2
    t3 = t2 * u3
    jac = t**3 * u1**2 * u2
    tau1 = t - t1
    tau2 = t - t2
    tau3 = t - t3
    total = np.zeros((4, 4))
    for i in range(0, len(w3), cfg.chunk):
        sl = slice(i, i + cfg.chunk)
        vals = _cum4_batch(params, tau1[sl], tau2[sl], tau3[sl], table.eta, table.nu)
        total += np.tensordot(w3[sl] * jac[sl], vals, axes=1)
    return total


def _axis_panels(horizon: float, cfg: Tcl4Config):
    """Per-axis nodes and weights, geometrically graded toward zero."""
    s_min = cfg.panel_min_factor * horizon
    n_panels = int(np.ceil(np.log(horizon / s_min) / np.log(cfg.panel_ratio)))
    edges = np.concatenate(([0.0], s_min * cfg.panel_ratio ** np.arange(n_panels + 1)))
    edges = np.minimum(edges, horizon)
    edges = np.unique(edges)
    return _panel_nodes(edges, order=cfg.panel_points)


def _support_box_quadrature(params: SpinBosonParams, table: CorrelationTable,
                            cfg: Tcl4Config) -> np.ndarray:
    """Asymptotic wedge integral as a box integral over gap variables.

    With s1 = tau1, s2 = tau2 - tau1, s3 = tau3 - tau2 the infinite wedge is
    the positive octant, and every cumulant term carries a correlation
    factor that kills the integrand once any gap variable passes the decay
    horizon, so the octant truncates to a box with error at the level of
    the tabulation floor.
    """
    horizon = _decay_horizon(table)
    x, w = _axis_panels(horizon, cfg)
    n = len(x)
    total = np.zeros((4, 4))
    idx2, idx3 = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    s2 = x[idx2.ravel()]
    s3 = x[idx3.ravel()]
    w23 = (w[idx2.ravel()] * w[idx3.ravel()])
    for i1 in range(n):
        s1 = x[i1]
        tau1 = np.full_like(s2, s1)
        tau2 = s1 + s2
        tau3 = s1 + s2 + s3
        for lo in range(0, len(s2), cfg.chunk):
            sl = slice(lo, lo + cfg.chunk)
            vals = _cum4_batch(params, tau1[sl], tau2[sl], tau3[sl], table.eta, table.nu)
            total += w[i1] * np.tensordot(w23[sl], vals, axes=1)
    return total


def tcl4_generator(params: SpinBosonParams, ctx: BathContext,
                   cfg: Tcl4Config | None = None,
                   t: float | None = None,
                   table: CorrelationTable | None = None) -> GeneratorMatrix:
    """Fourth-order generator at time ``t``, or asymptotic for ``t = None``.

    The asymptotic variant evaluates the wedge integral on the geometric
    ladder ``t_k = t_0 growth^k`` until two successive values agree to the
    saturation tolerance (relative, matrix max-norm), then returns the last
    value.  Failure to saturate raises :class:`NonConvergenceError` with the
    bath correlation time and the ladder diagnostics.
    """
    cfg = cfg or Tcl4Config()
    table = _ensure_table(ctx, table)
    if t is not None:
        if t < 0:
            raise ValueError("t must be >= 0")
        m = _wedge_quadrature(params, table, float(t), cfg) if t > 0 else np.zeros((4, 4))
        return GeneratorMatrix(m, order=4, t=float(t), meta={"backend": "quadrature"})

    if cfg.asymptotic_method == "support-box":
        m = _support_box_quadrature(params, table, cfg)
        return GeneratorMatrix(m, order=4, t=None,
                               meta={"backend": "quadrature", "method": "support-box"})

    tau_corr = _slow_scale(ctx)
    # the integrand has no support once every delay difference passes the
    # decay horizon, so the wedge value is constant past ~2 horizons
    t_cap = 2.5 * _decay_horizon(table)
    t_k = min(cfg.t_start_factor * tau_corr, t_cap / cfg.growth**2)
    prev = _wedge_quadrature(params, table, t_k, cfg)
    ladder = [t_k]
    diffs = []
    for _ in range(cfg.max_steps):
        t_k = min(t_k * cfg.growth, t_cap)
        cur = _wedge_quadrature(params, table, t_k, cfg)
        scale = max(np.abs(cur).max(), 1e-300)
        diff = float(np.abs(cur - prev).max() / scale)
        ladder.append(t_k)
        diffs.append(diff)
        if diff < cfg.sat_tol:
            return GeneratorMatrix(cur, order=4, t=None,
                                   meta={"backend": "quadrature",
                                         "saturation_ladder": ladder,
                                         "saturation_diffs": diffs})
        prev = cur
        if t_k >= t_cap:
            break
    raise NonConvergenceError(
        f"no saturation by t = {t_k:.3g} (cap {t_cap:.3g}): bath correlation "
        f"time ~ {tau_corr:.3g}, residuals {diffs[-3:]}"
    )


def total_generator(params: SpinBosonParams, f0: GeneratorMatrix,
                    f2: GeneratorMatrix,
                    f4: GeneratorMatrix | None = None) -> GeneratorMatrix:
    """F0 + lam^2 F2 (+ lam^4 F4); the only place the coupling enters."""
    if f0.order != 0 or f2.order != 2 or (f4 is not None and f4.order != 4):
        raise ValueError("expected generators of orders 0, 2 and optionally 4")
    lam2 = params.lam**2
    m = f0.m + lam2 * f2.m
    if f4 is not None:
        m = m + lam2**2 * f4.m
    return GeneratorMatrix(m, order="total", t=f2.t,
                           meta={"orders": (0, 2, 4) if f4 is not None else (0, 2)})
