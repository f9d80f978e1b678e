"""Qubit parameterisation, Pauli/Bloch algebra and the free-evolution generator.

Conventions used throughout the package:

* A qubit state ``rho`` is represented by the Bloch 4-vector
  ``v[i] = Tr[sigma_i rho]`` with ``sigma_0`` the identity, so ``v[0] == 1``
  and ``rho = 0.5 * sum_i v[i] sigma_i``.
* A superoperator ``S`` acting on 2x2 matrices maps to the 4x4 real matrix
  ``S[i, j] = 0.5 * Tr[sigma_i S(sigma_j)]``.
* Signs are fixed by ``[sigma_3, sigma_1] = 2i sigma_2`` together with the
  system Hamiltonian ``H_S = (omega / 2) sigma_3``, which yields the free
  Bloch equations ``v1' = -omega v2``, ``v2' = +omega v1``, ``v3' = 0``.
* The system side of the coupling is ``A = a3 sigma_3 - a1 sigma_1`` with
  ``a1 = sin(theta)``, ``a3 = cos(theta)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PAULI",
    "SpinBosonParams",
    "DqdParams",
    "GeneratorMatrix",
    "dqd_to_sbm",
    "bloch_from_density",
    "density_from_bloch",
    "validate_bloch",
    "free_generator",
    "coupling_matrix",
    "hamiltonian_matrix",
    "left_mult_bloch",
    "right_mult_bloch",
    "commutator_bloch",
    "anticommutator_bloch",
    "COMM",
    "ANTI",
]

PAULI = (
    np.eye(2, dtype=complex),
    np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
)

# Tolerance for physicality of Bloch vectors; TCL truncations may leave the
# Bloch ball transiently, anything past this is treated as a numerics bug.
PHYSICALITY_SLACK = 0.05


def left_mult_bloch(x: np.ndarray) -> np.ndarray:
    """Bloch matrix of ``rho -> x @ rho``."""
    m = np.empty((4, 4), dtype=complex)
    for i in range(4):
        for j in range(4):
            m[i, j] = 0.5 * np.trace(PAULI[i] @ x @ PAULI[j])
    return m


def right_mult_bloch(x: np.ndarray) -> np.ndarray:
    """Bloch matrix of ``rho -> rho @ x``."""
    m = np.empty((4, 4), dtype=complex)
    for i in range(4):
        for j in range(4):
            m[i, j] = 0.5 * np.trace(PAULI[i] @ PAULI[j] @ x)
    return m


def commutator_bloch(x: np.ndarray) -> np.ndarray:
    """Bloch matrix of ``rho -> [x, rho]``."""
    return left_mult_bloch(x) - right_mult_bloch(x)


def anticommutator_bloch(x: np.ndarray) -> np.ndarray:
    """Bloch matrix of ``rho -> {x, rho}``."""
    return left_mult_bloch(x) + right_mult_bloch(x)


# Fixed tables for the three Pauli operators, used all over the TCL modules.
COMM = tuple(commutator_bloch(PAULI[k]) for k in (1, 2, 3))
ANTI = tuple(anticommutator_bloch(PAULI[k]) for k in (1, 2, 3))


@dataclass(frozen=True)
class SpinBosonParams:
    """Qubit and coupling parameters.

    ``lam`` is the dimensionless coupling; generator matrices never contain
    it, the ``lam**2`` / ``lam**4`` prefactors are applied only when orders
    are combined into a total generator.
    """

    omega: float
    theta: float
    lam: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be >= 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")

    @property
    def a1(self) -> float:
        return float(np.sin(self.theta))

    @property
    def a3(self) -> float:
        return float(np.cos(self.theta))


@dataclass(frozen=True)
class DqdParams:
    """Double-quantum-dot detuning and inter-dot tunneling."""

    epsilon: float
    t_c: float

    def __post_init__(self):
        if self.epsilon == 0.0 and self.t_c == 0.0:
            raise ValueError("(epsilon, t_c) = (0, 0) has no qubit splitting")


def dqd_to_sbm(p: DqdParams) -> tuple[float, float, float]:
    """Map DQD parameters to (omega, a1, a3) with omega^2 = eps^2 + 4 t_c^2."""
    omega = float(np.hypot(p.epsilon, 2.0 * p.t_c))
    if omega == 0.0:
        raise ValueError("zero level splitting")
    return omega, 2.0 * p.t_c / omega, p.epsilon / omega


def coupling_matrix(params: SpinBosonParams) -> np.ndarray:
    """System coupling operator A = a3 sigma_3 - a1 sigma_1 as a 2x2 matrix."""
    return params.a3 * PAULI[3] - params.a1 * PAULI[1]


def hamiltonian_matrix(params: SpinBosonParams) -> np.ndarray:
    return 0.5 * params.omega * PAULI[3]


def bloch_from_density(rho: np.ndarray) -> np.ndarray:
    """Bloch 4-vector of a density matrix; rejects non-Hermitian input."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError("expected a 2x2 matrix")
    if np.abs(rho - rho.conj().T).max() > 1e-12:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > 1e-12 or abs(np.trace(rho).imag) > 1e-12:
        raise ValueError("density matrix does not have unit trace")
    return np.array([np.trace(PAULI[i] @ rho).real for i in range(4)])


def density_from_bloch(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (4,):
        raise ValueError("expected a Bloch 4-vector")
    return 0.5 * sum(v[i] * PAULI[i] for i in range(4))


def validate_bloch(v: np.ndarray, slack: float = PHYSICALITY_SLACK) -> bool:
    """True when v0 == 1 and |v| does not exceed the Bloch ball beyond slack."""
    v = np.asarray(v, dtype=float)
    if abs(v[0] - 1.0) > 1e-10:
        return False
    return float(np.dot(v[1:], v[1:])) <= (1.0 + slack) ** 2


@dataclass(frozen=True)
class GeneratorMatrix:
    """A 4x4 real generator acting on Bloch 4-vectors.

    ``order`` is the perturbative order (0, 2 or 4) or the string "total";
    ``t`` is the evaluation time, or None for the asymptotic (long-time)
    generator.
    """

    m: np.ndarray
    order: int | str
    t: float | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("generator must be 4x4")
        object.__setattr__(self, "m", m)

    @property
    def is_asymptotic(self) -> bool:
        return self.t is None

    def symmetry_residual(self, a1: float, a3: float) -> float:
        """Max |a3 * row3 - a1 * row1|, relative to the matrix scale."""
        scale = max(np.abs(self.m).max(), 1e-300)
        return float(np.abs(a3 * self.m[3] - a1 * self.m[1]).max() / scale)

    def to_json(self) -> str:
        return json.dumps(
            {
                "order": self.order,
                "t": "asymptotic" if self.t is None else self.t,
                "matrix": self.m.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GeneratorMatrix":
        d = json.loads(text)
        t = None if d["t"] == "asymptotic" else float(d["t"])
        return cls(np.array(d["matrix"], dtype=float), d["order"], t)


def free_generator(params: SpinBosonParams) -> GeneratorMatrix:
    """Bloch generator of the free evolution under H_S = (omega/2) sigma_3."""
    m = np.real(-0.5j * params.omega * COMM[2]).copy()
    return GeneratorMatrix(m, order=0, t=None)
