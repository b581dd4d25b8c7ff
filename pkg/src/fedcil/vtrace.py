"""Off-policy actor-critic loss kernels.

Standalone, oracle-tested implementations of the truncated importance
sampling target and its companion losses. The IDS trainer itself is
supervised (see replay.clear_train_step); these kernels are the verified
reference for the replay method's original actor-critic formulation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError
from .nn import EPS, kl_divergence, l2_distance_sq


@dataclass
class Trajectory:
    """One off-policy segment of length n.

    Per step t: reward r_t, behavior probability mu(a_t|h_t), current
    probability pi(a_t|h_t), and value estimate V(h_t). bootstrap_value is
    V(h_n). c_bar / rho_bar truncate the importance weights.
    """

    rewards: np.ndarray
    behavior_probs: np.ndarray
    current_probs: np.ndarray
    values: np.ndarray
    bootstrap_value: float
    gamma: float
    c_bar: float = 1.0
    rho_bar: float = 1.0

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.behavior_probs = np.asarray(self.behavior_probs, dtype=np.float64)
        self.current_probs = np.asarray(self.current_probs, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.rewards)
        if n < 1:
            raise DimensionError("trajectory must have at least one step")
        for name in ("behavior_probs", "current_probs", "values"):
            if getattr(self, name).shape != (n,):
                raise DimensionError(f"{name} length must equal rewards length {n}")
        if np.any(self.behavior_probs <= 0.0):
            raise NumericError("behavior probabilities must be > 0")
        if np.any(self.current_probs <= 0.0) or np.any(self.current_probs > 1.0):
            raise NumericError("current probabilities must lie in (0, 1]")
        if np.any(self.behavior_probs > 1.0):
            raise NumericError("behavior probabilities must lie in (0, 1]")
        if not (0.0 <= self.gamma <= 1.0):
            raise NumericError("gamma must lie in [0, 1]")
        if not np.isfinite(self.c_bar) or not np.isfinite(self.rho_bar):
            raise NumericError("clip constants must be finite")
        if self.c_bar < 0 or self.rho_bar < 0:
            raise NumericError("clip constants must be >= 0")

    def __len__(self) -> int:
        return len(self.rewards)


def importance_weights(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Truncated weights (c_t, rho_t) = (min(c_bar, pi/mu), min(rho_bar, pi/mu))."""
    ratio = traj.current_probs / traj.behavior_probs
    return np.minimum(traj.c_bar, ratio), np.minimum(traj.rho_bar, ratio)


def compute_vtrace(traj: Trajectory) -> np.ndarray:
    """Targets v_s for s = 0..n-1 over the full remaining horizon.

    v_s = V(h_s) + sum_{t=s}^{n-1} gamma^{t-s} (prod_{i=s}^{t-1} c_i) delta_t
    with delta_t = rho_t (r_t + gamma V(h_{t+1}) - V(h_t)) and V(h_n) the
    bootstrap value. Computed by the equivalent backward recursion
    a_s = delta_s + gamma c_s a_{s+1}.
    """
    n = len(traj)
    cs, rhos = importance_weights(traj)
    v_next = np.append(traj.values[1:], traj.bootstrap_value)
    deltas = rhos * (traj.rewards + traj.gamma * v_next - traj.values)
    acc = 0.0
    corrections = np.empty(n)
    for t in range(n - 1, -1, -1):
        acc = deltas[t] + traj.gamma * cs[t] * acc
        corrections[t] = acc
    return traj.values + corrections


def policy_gradient_loss(traj: Trajectory, vtrace: np.ndarray) -> float:
    """sum_s -rho_s log pi(a_s|h_s) (r_s + gamma v_{s+1} - V(h_s)), v_n = bootstrap."""
    vtrace = np.asarray(vtrace, dtype=np.float64)
    if vtrace.shape != (len(traj),):
        raise DimensionError("vtrace length must equal trajectory length")
    _, rhos = importance_weights(traj)
    v_next = np.append(vtrace[1:], traj.bootstrap_value)
    advantage = traj.rewards + traj.gamma * v_next - traj.values
    return float(np.sum(-rhos * np.log(traj.current_probs) * advantage))


def value_loss(vtrace: np.ndarray, values: np.ndarray) -> float:
    """0.5 * sum_s (v_s - V(h_s))^2."""
    vtrace = np.asarray(vtrace, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if vtrace.shape != values.shape:
        raise DimensionError("vtrace and values lengths differ")
    d = vtrace - values
    return float(0.5 * (d @ d))


def entropy_loss(probs: np.ndarray) -> float:
    """Mean Shannon entropy per row, >= 0; callers subtract it to regularize."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise NumericError("entropy_loss rows must be normalized")
    terms = np.where(p > 0.0, p * np.log(np.maximum(p, EPS)), 0.0)
    return float(np.mean(-terms.sum(axis=1)))


def policy_cloning_loss(stored: np.ndarray, current: np.ndarray) -> float:
    """KL(mu || pi) between the stored and the current action distribution."""
    return kl_divergence(stored, current)


def value_cloning_loss(current_value, stored_value) -> float:
    """Squared L2 gap between current and stored value estimates."""
    return l2_distance_sq(np.atleast_1d(current_value), np.atleast_1d(stored_value))
