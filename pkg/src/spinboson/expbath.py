"""Exponential-mode representation of the bath correlation functions.

For an Ohmic spectral density with Drude cutoff the correlation functions
have closed forms: ``eta(t) = -(pi/2) gamma lambda_c^2 exp(-lambda_c t)``
and ``nu(t)`` is a sum over thermal modes with rates ``mu_n = 2 pi n / beta``.
Truncating the thermal sum at N terms turns ``nu + i eta`` into a finite sum
of decaying exponentials.  Ordered time integrals of products of such sums
stay inside the same algebra, which lets the asymptotic second- and
fourth-order generators be evaluated exactly (up to the truncation order N)
with no numerical quadrature at all.  That route is the consistency backend
for the generic quadrature-based generators, and it also feeds the hierarchy
solver, which needs the bath in exponential form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .system import COMM, ANTI, GeneratorMatrix, SpinBosonParams

__all__ = [
    "ExpSum",
    "ExpTerm",
    "ExponentialBath",
    "DegenerateModeError",
    "SecularResidualError",
    "expsum_mul",
    "expsum_ordered_integral",
    "drude_modes",
    "tcl2_drude_matsubara",
    "tcl4_drude_matsubara",
    "ordered_triple_constant",
]


class DegenerateModeError(ValueError):
    """Drude rate collides with a thermal mode rate."""


class SecularResidualError(RuntimeError):
    """A docked long-time limit kept a non-decaying term above tolerance."""


@dataclass(frozen=True)
class ExpTerm:
    """One term ``coeff * t**power * exp(exponent * t)``."""

    coeff: complex
    exponent: complex
    power: int = 0


class ExpSum:
    """Finite sum of terms ``c * t**p * exp(z t)`` on ``t >= 0``.

    Closed under pointwise products and under the ordered integral
    ``g -> int_0^t g(s) ds``.  Polynomial powers appear when an exponent is
    zero (secular terms) or when exponents collide during integration.
    """

    __slots__ = ("terms",)

    def __init__(self, terms=()):
        self.terms = [ExpTerm(complex(c), complex(z), int(p)) for (c, z, p) in
                      ((t.coeff, t.exponent, t.power) if isinstance(t, ExpTerm) else t
                       for t in terms)]

    @classmethod
    def exponential(cls, coeff, exponent) -> "ExpSum":
        return cls([(coeff, exponent, 0)])

    @classmethod
    def constant(cls, value) -> "ExpSum":
        return cls([(value, 0.0, 0)])

    def __len__(self):
        return len(self.terms)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for term in self.terms:
            out += term.coeff * t**term.power * np.exp(term.exponent * t)
        return out if out.shape else complex(out)

    def scaled(self, factor) -> "ExpSum":
        return ExpSum([(term.coeff * factor, term.exponent, term.power) for term in self.terms])

    def __add__(self, other: "ExpSum") -> "ExpSum":
        return ExpSum(self.terms + other.terms)

    def compact(self, tol: float = 1e-12) -> "ExpSum":
        """Merge terms whose exponents differ by less than ``tol`` (same power).

        Keeps term counts polynomial when ordered integrals are nested.
        """
        merged: list[ExpTerm] = []
        for term in sorted(self.terms, key=lambda u: (u.power, u.exponent.real, u.exponent.imag)):
            for i, seen in enumerate(merged):
                if seen.power == term.power and abs(seen.exponent - term.exponent) < tol:
                    merged[i] = ExpTerm(seen.coeff + term.coeff, seen.exponent, seen.power)
                    break
            else:
                merged.append(term)
        return ExpSum([u for u in merged if abs(u.coeff) > 1e-300])

    def secular_terms(self, zero_tol: float = 1e-12) -> list[ExpTerm]:
        """Terms growing polynomially in t (exponent ~ 0 with power >= 1)."""
        return [u for u in self.terms if u.power >= 1 and abs(u.exponent) < zero_tol]

    def constant_part(self, zero_tol: float = 1e-12) -> complex:
        return sum((u.coeff for u in self.terms if u.power == 0 and abs(u.exponent) < zero_tol),
                   start=0.0 + 0.0j)

    def asymptotic_constant(self, rel_tol: float = 1e-10) -> complex:
        """Long-time limit, asserting that no growing term survives.

        Decaying terms are dropped; a secular (t-linear or faster) or growing
        exponential term whose coefficient exceeds ``rel_tol`` relative to the
        constant part raises :class:`SecularResidualError`.
        """
        const = self.constant_part()
        scale = max(abs(const), max((abs(u.coeff) for u in self.terms), default=0.0), 1e-300)
        for u in self.terms:
            if u.exponent.real > 1e-12 and abs(u.coeff) > rel_tol * scale:
                raise SecularResidualError(f"growing exponential term {u}")
        for u in self.secular_terms():
            if abs(u.coeff) > rel_tol * scale:
                raise SecularResidualError(f"residual secular term {u}")
        return const


def expsum_mul(a: ExpSum, b: ExpSum) -> ExpSum:
    """Pointwise product; term count is len(a) * len(b) before compaction."""
    terms = [
        (ta.coeff * tb.coeff, ta.exponent + tb.exponent, ta.power + tb.power)
        for ta in a.terms
        for tb in b.terms
    ]
    return ExpSum(terms).compact()


def _integral_single(term: ExpTerm, zero_tol: float = 1e-12) -> list[ExpTerm]:
    c, z, p = term.coeff, term.exponent, term.power
    if abs(z) < zero_tol:
        # int_0^t s^p ds; secular when it lands on power >= 1 at zero exponent
        return [ExpTerm(c / (p + 1), 0.0, p + 1)]
    # int_0^t s^p e^{z s} ds by parts:  sum_k (-1)^k p!/(p-k)! t^{p-k} e^{zt}/z^{k+1}
    # plus the boundary constant -(-1)^p p! / z^{p+1}
    out = []
    fact = 1.0
    for k in range(p + 1):
        out.append(ExpTerm(c * ((-1) ** k) * fact / z ** (k + 1), z, p - k))
        fact *= p - k
    out.append(ExpTerm(-c * ((-1) ** p) * float(math.factorial(p)) / z ** (p + 1), 0.0, 0))
    return out


def expsum_ordered_integral(g: ExpSum) -> ExpSum:
    """Ordered integral ``h(t) = int_0^t g(s) ds`` as an ExpSum.

    Zero-exponent terms integrate to explicit polynomial (secular) terms,
    which downstream asymptotic limits must see cancel.
    """
    terms: list[ExpTerm] = []
    for term in g.terms:
        terms.extend(_integral_single(term))
    return ExpSum(terms).compact()


def ordered_triple_constant(a: complex, b: complex, c: complex) -> complex:
    """Long-time constant of the ordered triple integral of ``e^{a t1 + b t2 + c t3}``
    over ``0 <= t1 <= t2 <= t3 <= t``.

    Equals ``-1 / (c (b+c) (a+b+c))``; all three denominators must have
    negative real part for the limit to exist.
    """
    for z in (c, b + c, a + b + c):
        if z.real >= -1e-14:
            raise SecularResidualError(f"non-decaying exponent {z} in triple integral")
    return -1.0 / (c * (b + c) * (a + b + c))


@dataclass(frozen=True)
class ExponentialBath:
    """``nu(t) + i eta(t) ~= sum_k weight_k exp(-rate_k t)`` for t >= 0."""

    weights: np.ndarray
    rates: np.ndarray
    n_matsubara: int
    beta: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=complex)
        r = np.asarray(self.rates, dtype=complex)
        if w.shape != r.shape or w.ndim != 1:
            raise ValueError("weights and rates must be matching 1-d arrays")
        if np.any(r.real <= 0):
            raise ValueError("all mode rates must have positive real part")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "rates", r)

    def correlation(self, t):
        """Reconstructed ``nu(t) + i eta(t)`` for t >= 0."""
        t = np.asarray(t, dtype=float)
        out = np.exp(-np.multiply.outer(t, self.rates)) @ self.weights
        return out if out.shape else complex(out)

    def nu(self, t):
        t = np.asarray(t, dtype=float)
        return np.real(self.correlation(np.abs(t)))

    def eta(self, t):
        t = np.asarray(t, dtype=float)
        return np.sign(t) * np.imag(self.correlation(np.abs(t)))


def drude_modes(gamma: float, lambda_c: float, beta: float, n: int) -> ExponentialBath:
    """Exponential modes of the Drude bath with ``n`` retained thermal terms.

    Mode 0 carries the cutoff rate ``lambda_c``: its imaginary weight is the
    full closed-form eta amplitude; its real weight accumulates the
    cutoff-rate pieces of thermal terms 0..n.  Modes 1..n carry the thermal
    rates ``mu_k = 2 pi k / beta``.  Degeneracy ``lambda_c == mu_k`` is
    reported; callers may perturb lambda_c by a relative 1e-9 and retry.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if lambda_c <= 0:
        raise ValueError("lambda_c must be > 0")
    k = np.arange(1, n + 1, dtype=float)
    mu = 2.0 * np.pi * k / beta
    if n > 0 and np.any(np.abs(mu - lambda_c) < 1e-9 * lambda_c):
        j = int(np.argmin(np.abs(mu - lambda_c))) + 1
        raise DegenerateModeError(
            f"lambda_c collides with thermal rate mu_{j} = {mu[j - 1]:.12g}; "
            "perturb lambda_c by a relative 1e-9 and retry"
        )
    w0_nu = np.pi * gamma * lambda_c / beta
    if n > 0:
        w0_nu += np.sum(2.0 * np.pi * gamma * lambda_c**3 / (beta * (lambda_c**2 - mu**2)))
    w0 = w0_nu - 0.5j * np.pi * gamma * lambda_c**2
    w_therm = 2.0 * np.pi * gamma * lambda_c**2 * mu / (beta * (mu**2 - lambda_c**2))
    weights = np.concatenate(([w0], w_therm.astype(complex)))
    rates = np.concatenate(([lambda_c], mu)).astype(complex)
    return ExponentialBath(weights=weights, rates=rates, n_matsubara=n, beta=beta,
                           meta={"kind": "drude", "gamma": gamma, "lambda_c": lambda_c})


def _trig_components(params: SpinBosonParams):
    """Coupling superoperators at shifted time -tau in the exponential basis.

    ``[A(-tau), .]  = sum_alpha exp(u_alpha tau) P_alpha`` and likewise
    ``{A(-tau), .} = sum_alpha exp(u_alpha tau) Q_alpha`` with
    ``u = (0, +i omega, -i omega)``.
    """
    a1, a3, omega = params.a1, params.a3, params.omega
    g1, g2, g3 = COMM
    h1, h2, h3 = ANTI
    u = np.array([0.0, 1j * omega, -1j * omega])
    p = [a3 * g3, -0.5 * a1 * (g1 - 1j * g2), -0.5 * a1 * (g1 + 1j * g2)]
    q = [a3 * h3, -0.5 * a1 * (h1 - 1j * h2), -0.5 * a1 * (h1 + 1j * h2)]
    return u, p, q


def _mode_factors(bath: ExponentialBath):
    """Modes of the weight factor ``nu A^- + i eta A^+`` with family tags.

    Returns (coeffs, rates, family) where family 0 selects the commutator
    table and family 1 the anticommutator table.
    """
    w = bath.weights
    r = bath.rates
    if np.abs(r.imag).max(initial=0.0) > 1e-12 * np.abs(r.real).max(initial=1.0):
        raise ValueError("mode-sum generators assume real decay rates")
    # nu part: Re of each mode weight, commutator family
    coeffs = [w.real.astype(complex)]
    rates = [r]
    families = [np.zeros(len(w), dtype=int)]
    # i*eta part: i * Im-part reconstruction, anticommutator family
    coeffs.append(1j * w.imag.astype(complex))
    rates.append(r)
    families.append(np.ones(len(w), dtype=int))
    c = np.concatenate(coeffs)
    rr = np.concatenate(rates)
    f = np.concatenate(families)
    keep = np.abs(c) > 0.0
    return c[keep], rr[keep], f[keep]


def tcl2_drude_matsubara(params: SpinBosonParams, bath: ExponentialBath) -> GeneratorMatrix:
    """Asymptotic second-order generator by exact mode integration."""
    u, p, q = _trig_components(params)
    a0 = params.a3 * COMM[2] - params.a1 * COMM[0]
    coeff, rate, fam = _mode_factors(bath)
    acc = np.zeros((4, 4), dtype=complex)
    for alpha in range(3):
        mats = p[alpha], q[alpha]
        for f in (0, 1):
            sel = fam == f
            if not np.any(sel):
                continue
            s = np.sum(coeff[sel] / (rate[sel] - u[alpha]))
            acc += s * mats[f]
    m = -(a0 @ acc)
    resid = np.abs(m.imag).max() / max(np.abs(m.real).max(), 1e-300)
    if resid > 1e-8:
        raise SecularResidualError(f"imaginary residue {resid:.2e} in TCL2 generator")
    return GeneratorMatrix(m.real.copy(), order=2, t=None,
                           meta={"backend": "matsubara", "n_matsubara": bath.n_matsubara})


def tcl4_drude_matsubara(params: SpinBosonParams, bath: ExponentialBath) -> GeneratorMatrix:
    """Asymptotic fourth-order generator by exact exponential-sum algebra.

    The fourth-order ordered-cumulant integrand is a finite sum of terms
    ``M * exp(a tau1 + b tau2 + c tau3)`` with constant 4x4 matrices ``M``.
    Each term's ordered triple integral has the long-time constant
    ``-1/(c (b+c) (a+b+c))`` (see :func:`ordered_triple_constant`); every
    final exponent decays by construction, which is asserted, so no secular
    term can survive the limit.  The double sum over thermal-mode pairs is
    evaluated vectorised, grouped by the 3 x 3 x 3 oscillation components and
    2 x 2 weight families whose matrix coefficients are shared.
    """
    u, p, q = _trig_components(params)
    a0 = params.a3 * COMM[2] - params.a1 * COMM[0]
    coeff, rate, fam = _mode_factors(bath)
    mats = (p, q)
    if np.any(rate.real <= 1e-14):
        raise SecularResidualError("bath mode with non-decaying rate")

    rho2 = rate[:, None]
    rho3 = rate[None, :]
    ww = coeff[:, None] * coeff[None, :]
    acc = np.zeros((4, 4), dtype=complex)
    for i1 in range(3):
        p1 = p[i1]
        for i2 in range(3):
            for i3 in range(3):
                usum = u[i1] + u[i2] + u[i3]
                # pairing (0,2)(1,3): exponents a = u1 + rho3, b = u2 - rho2,
                # c = u3 - rho3
                c_a = u[i3] - rho3
                bc_a = u[i2] + u[i3] - rho2 - rho3
                abc_a = usum - rho2
                s_grid_a = -ww / (c_a * bc_a * abc_a)
                # pairing (0,3)(1,2): a = u1 + rho2, b = u2 - rho2, c = u3 - rho3
                abc_b = usum - rho3
                s_grid_b = -ww / (c_a * bc_a * abc_b)
                for f2 in (0, 1):
                    m2 = mats[f2][i2]
                    for f3 in (0, 1):
                        m3 = mats[f3][i3]
                        sel = np.ix_(fam == f2, fam == f3)
                        sa = np.sum(s_grid_a[sel])
                        sb = np.sum(s_grid_b[sel])
                        acc += sa * ((p1 @ m2 - m2 @ p1) @ m3)
                        acc += sb * (p1 @ m2 @ m3 - m3 @ p1 @ m2)
    m = a0 @ acc
    resid = np.abs(m.imag).max() / max(np.abs(m.real).max(), 1e-300)
    if resid > 1e-8:
        raise SecularResidualError(f"imaginary residue {resid:.2e} in TCL4 generator")
    return GeneratorMatrix(m.real.copy(), order=4, t=None,
                           meta={"backend": "matsubara", "n_matsubara": bath.n_matsubara})


def _tcl4_drude_expsum(params: SpinBosonParams, bath: ExponentialBath,
                       t_eval: float | None = None):
    """Reference fourth-order route through the generic ExpSum operators.

    Chains ``expsum_mul`` / ``expsum_ordered_integral`` per scalar term and
    takes the asymptotic constant with an explicit secular-cancellation
    check.  Cubic cost in mode count; used to validate the vectorised path
    at small truncation orders.  When ``t_eval`` is given, returns the
    time-dependent wedge integral evaluated at that time instead.
    """
    u, p, q = _trig_components(params)
    a0 = params.a3 * COMM[2] - params.a1 * COMM[0]
    coeff, rate, fam = _mode_factors(bath)
    mats = (p, q)
    acc = np.zeros((4, 4), dtype=complex)
    for i1 in range(3):
        p1 = p[i1]
        for i2 in range(3):
            for i3 in range(3):
                for j2 in range(len(coeff)):
                    m2 = mats[fam[j2]][i2]
                    for j3 in range(len(coeff)):
                        m3 = mats[fam[j3]][i3]
                        w = coeff[j2] * coeff[j3]
                        mat_a = (p1 @ m2 - m2 @ p1) @ m3
                        mat_b = p1 @ m2 @ m3 - m3 @ p1 @ m2
                        for (aa, bb, cc, mm) in (
                            (u[i1] + rate[j3], u[i2] - rate[j2], u[i3] - rate[j3], mat_a),
                            (u[i1] + rate[j2], u[i2] - rate[j2], u[i3] - rate[j3], mat_b),
                        ):
                            g = expsum_ordered_integral(ExpSum.exponential(w, aa))
                            g = expsum_mul(g, ExpSum.exponential(1.0, bb))
                            g = expsum_ordered_integral(g)
                            g = expsum_mul(g, ExpSum.exponential(1.0, cc))
                            g = expsum_ordered_integral(g)
                            if t_eval is None:
                                acc += g.asymptotic_constant() * mm
                            else:
                                acc += g(t_eval) * mm
    m = a0 @ acc
    order_tag = 4
    return GeneratorMatrix(m.real.copy(), order=order_tag, t=t_eval,
                           meta={"backend": "expsum-reference", "n_matsubara": bath.n_matsubara})
