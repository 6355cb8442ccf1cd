"""Constant-velocity Kalman filter used identically by every association engine.

State order is (x, vx, y, vy). The observation model selects positions.
Covariances are symmetrized after every step and updates use the Joseph
form for PSD safety.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .domain import ContractViolation, NumericalError, Scan, Track

#: Observation matrix: measurements are positions.
H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])

#: Default initial covariance for tracks started from known truth. Kept at
#: the measurement-noise scale so first-scan gates are already converged;
#: larger values inflate early gates enough to blow up joint-event
#: enumeration in heavy clutter.
DEFAULT_INITIAL_COVARIANCE = np.diag([0.1, 0.1, 0.1, 0.1])


@dataclass(frozen=True)
class FilterParams:
    """Filter tuning: step length, process-noise intensity, measurement noise.

    Defaults: R = diag(0.1, 0.1) m^2 (sigma ~ 0.3162 m) and q = 0.05 m^2/s^3,
    kept small because the simulated motion is exactly constant-velocity.
    Both are toolkit choices, overridable and echoed in emitted reports.
    """

    dt: float = 1.0
    q: float = 0.05
    r_diag: Tuple[float, float] = (0.1, 0.1)

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractViolation(f"dt must be > 0, got {self.dt}")
        if self.q < 0:
            raise ContractViolation(f"q must be >= 0, got {self.q}")
        if not all(r > 0 for r in self.r_diag):
            raise ContractViolation(f"r_diag entries must be > 0, got {self.r_diag}")

    @property
    def r_matrix(self) -> np.ndarray:
        return np.diag(self.r_diag)


def transition_matrix(dt: float) -> np.ndarray:
    """Constant-velocity transition for one step of length dt."""
    f = np.eye(4)
    f[0, 1] = dt
    f[2, 3] = dt
    return f


def process_noise(dt: float, q: float) -> np.ndarray:
    """Discrete white-noise-acceleration covariance with intensity q."""
    block = q * np.array([[dt**4 / 4.0, dt**3 / 2.0], [dt**3 / 2.0, dt**2]])
    out = np.zeros((4, 4))
    out[:2, :2] = block
    out[2:, 2:] = block
    return out


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return (p + p.T) / 2.0


def predict(track: Track, params: FilterParams) -> Track:
    """One-step state and covariance propagation."""
    f = transition_matrix(params.dt)
    x = f @ track.state
    p = f @ track.covariance @ f.T + process_noise(params.dt, params.q)
    return Track(track.id, x, _symmetrize(p))


def predicted_measurement(track: Track) -> np.ndarray:
    """The measurement this track would produce: its (x, y) position."""
    return H @ track.state


def innovation_covariance(track: Track, params: FilterParams) -> np.ndarray:
    return H @ track.covariance @ H.T + params.r_matrix


def _solve_innovation(s: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
    if not np.isfinite(det) or abs(det) < 1e-12:
        raise NumericalError(f"innovation covariance is singular (det={det!r})")
    return np.linalg.solve(s, rhs)


def update_hard(track: Track, z: np.ndarray, params: FilterParams) -> Track:
    """Standard Kalman update of a predicted track with one measurement."""
    z = np.asarray(z, dtype=float).reshape(2)
    p = track.covariance
    s = innovation_covariance(track, params)
    # K = P H^T S^-1, via solving S^T K^T = H P^T
    k = _solve_innovation(s.T, H @ p.T).T
    nu = z - predicted_measurement(track)
    x = track.state + k @ nu
    ikh = np.eye(4) - k @ H
    p_new = ikh @ p @ ikh.T + k @ params.r_matrix @ k.T
    return Track(track.id, x, _symmetrize(p_new))


def update_weighted(track: Track, scan: Scan, beta_row: np.ndarray, params: FilterParams) -> Track:
    """Probability-weighted update of a predicted track over a whole scan.

    ``beta_row`` holds one probability per measurement plus a trailing miss
    probability. The state moves by the combined innovation and the
    covariance mixes the no-detection and updated covariances plus the
    spread-of-innovations term.
    """
    beta = np.asarray(beta_row, dtype=float).reshape(-1)
    m = scan.num_measurements
    if beta.shape[0] != m + 1:
        raise ContractViolation(
            f"beta_row has {beta.shape[0]} entries for {m} measurements (need M+1)"
        )
    if np.any(beta < -1e-12) or np.any(beta > 1 + 1e-12):
        raise ContractViolation("beta_row entries must lie in [0, 1]")
    if abs(beta.sum() - 1.0) > 1e-9:
        raise ContractViolation(f"beta_row sums to {beta.sum()!r}, expected 1 within 1e-9")

    beta_miss = beta[-1]
    if m == 0 or beta_miss >= 1.0:
        return track

    p = track.covariance
    s = innovation_covariance(track, params)
    k = _solve_innovation(s.T, H @ p.T).T
    nus = scan.measurements - predicted_measurement(track)  # (M, 2)
    w = beta[:m]
    nu_bar = w @ nus
    x = track.state + k @ nu_bar

    ikh = np.eye(4) - k @ H
    p_updated = ikh @ p @ ikh.T + k @ params.r_matrix @ k.T
    spread_inner = (nus.T * w) @ nus - np.outer(nu_bar, nu_bar)
    p_new = beta_miss * p + (1.0 - beta_miss) * p_updated + k @ spread_inner @ k.T
    return Track(track.id, x, _symmetrize(p_new))
