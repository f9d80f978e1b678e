"""Propagation of Bloch dynamics under constant generators and steady states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .system import GeneratorMatrix

__all__ = ["Trajectory", "propagate", "propagate_rk", "steady_state"]


@dataclass(frozen=True)
class Trajectory:
    """Bloch states sampled on an ascending time grid; states has shape (n, 4)."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.states, dtype=float)
        if t.ndim != 1 or s.shape != (len(t), 4):
            raise ValueError("times must be (n,), states (n, 4)")
        if np.any(np.diff(t) < 0):
            raise ValueError("times must be ascending")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    def to_csv(self, path) -> None:
        """Columns t, v1, v2, v3 (v0 is identically 1 and omitted)."""
        with open(path, "w") as fh:
            fh.write("t,v1,v2,v3\n")
            for t, v in zip(self.times, self.states):
                fh.write(f"{t!r},{v[1]!r},{v[2]!r},{v[3]!r}\n")


def propagate(v0: np.ndarray, g: GeneratorMatrix, times) -> Trajectory:
    """Exact propagation v(t) = expm(g t) v(0) on each sample time.

    The generator must be constant in time (asymptotic).  The matrix
    exponential of the 4x4 generator is evaluated once per distinct time
    gap, so uniform grids cost one exponential plus matrix-vector products.
    """
    if not g.is_asymptotic:
        raise ValueError("propagate requires a constant (asymptotic) generator")
    times = np.asarray(times, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if abs(v0[0] - 1.0) > 1e-10:
        raise ValueError("Bloch vector must have v0 == 1")
    gaps = np.diff(times, prepend=times[0])
    out = np.empty((len(times), 4))
    v = expm(g.m * times[0]) @ v0 if times[0] != 0.0 else v0.copy()
    out[0] = v
    uniq: dict[float, np.ndarray] = {}
    for i, dt in enumerate(gaps[1:], start=1):
        key = round(float(dt), 15)
        if key not in uniq:
            uniq[key] = expm(g.m * dt)
        v = uniq[key] @ v
        out[i] = v
    return Trajectory(times=times, states=out)


def propagate_rk(v0: np.ndarray, g: GeneratorMatrix, times,
                 rtol: float = 1e-11, atol: float = 1e-13) -> Trajectory:
    """Adaptive Runge-Kutta fallback; agrees with the exponential path to 1e-9."""
    from scipy.integrate import solve_ivp

    times = np.asarray(times, dtype=float)
    sol = solve_ivp(lambda t, y: g.m @ y, (times[0], times[-1]), np.asarray(v0, float),
                    t_eval=times, rtol=rtol, atol=atol, method="DOP853")
    if not sol.success:
        raise RuntimeError(f"RK integration failed: {sol.message}")
    return Trajectory(times=times, states=sol.y.T.copy())


def steady_state(g: GeneratorMatrix) -> np.ndarray:
    """Solve g v = 0 with v0 = 1 through the lower-right 3x3 block.

    Raises when the block is effectively singular, reporting its smallest
    singular value.
    """
    block = g.m[1:, 1:]
    rhs = -g.m[1:, 0]
    svals = np.linalg.svd(block, compute_uv=False)
    if svals[-1] < 1e-13 * max(svals[0], 1.0):
        raise np.linalg.LinAlgError(
            f"steady state undetermined: smallest singular value {svals[-1]:.3e}"
        )
    v = np.linalg.solve(block, rhs)
    return np.concatenate(([1.0], v))
