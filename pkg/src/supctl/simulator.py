"""Trajectory generation for the true closed-loop process.

Noise
-----
Each Monte Carlo run ``k`` gets the 64-bit seed ``splitmix64(master_seed, k)``.
Every stream (process noise, measurement noise, exploratory input) is a
``numpy`` Philox-4x64 generator keyed by ``(run_seed, stream_id)``; the
episode that starts at global step ``g`` reads from counter ``[0, 0, g, 0]``.
Noise is therefore a pure function of ``(master_seed, run, stream, g)``.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .system_bank import CandidateBank

GENERATOR_NAME = "numpy.Philox(4x64-10), key=(splitmix64(master_seed, run), stream), counter=(0,0,global_step,0)"
DIVERGENCE_LIMIT = 1e150

STREAM_W, STREAM_ETA, STREAM_U = 0, 1, 2
_MASK64 = (1 << 64) - 1


def splitmix64(master_seed: int, index: int) -> int:
    """One splitmix64 output for state ``master_seed + (index + 1) * golden_gamma``."""
    z = (int(master_seed) + (int(index) + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class NoiseStreams:
    master_seed: int
    sigma_w: float
    sigma_eta: float
    sigma_u: float
    run: int = 0

    @property
    def run_seed(self) -> int:
        return splitmix64(self.master_seed, self.run)

    def for_run(self, run: int) -> "NoiseStreams":
        return NoiseStreams(self.master_seed, self.sigma_w, self.sigma_eta, self.sigma_u, run)

    def _gen(self, stream: int, global_step: int) -> np.random.Generator:
        bitgen = np.random.Philox(key=[self.run_seed, stream], counter=[0, 0, int(global_step), 0])
        return np.random.Generator(bitgen)

    def draw(self, global_step: int, length: int, d_x: int, d_y: int, d_u: int):
        """Return ``(w, eta, u)`` for an episode starting at ``global_step``."""
        w = self.sigma_w * self._gen(STREAM_W, global_step).standard_normal((length, d_x))
        eta = self.sigma_eta * self._gen(STREAM_ETA, global_step).standard_normal((length, d_y))
        u = self.sigma_u * self._gen(STREAM_U, global_step).standard_normal((length, d_u))
        return w, eta, u


@dataclass
class Trajectory:
    """One episode. Row ``t`` holds ``x_{t+1}``, ``y_{t+1}``, ... in episode-local time.

    After a divergence step ``states`` and ``outputs`` are NaN.
    """

    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    process_noise: np.ndarray
    start_time: int
    divergence_step: int | None = None

    @property
    def diverged(self) -> bool:
        return self.divergence_step is not None

    def __len__(self):
        return self.outputs.shape[0]

BLOCK = 32


@lru_cache(maxsize=64)
def _block_operators_cached(key: bytes, n: int, b: int):
    A = np.frombuffer(key, dtype=float).reshape(n, n)
    powers = np.empty((b + 1, n, n))
    powers[0] = np.eye(n)
    for s in range(1, b + 1):
        powers[s] = powers[s - 1] @ A
    s_idx, r_idx = np.tril_indices(b)
    T = np.zeros((b, b, n, n))
    T[s_idx, r_idx] = powers[s_idx - r_idx]
    T = T.transpose(0, 2, 1, 3).reshape(b * n, b * n)
    return powers[1:].reshape(b * n, n), T


def _block_operators(A: np.ndarray, b: int):
    """Stacked ``A^{s+1}`` and the block Toeplitz map from a block of drives to states."""
    A = np.ascontiguousarray(A, dtype=float)
    return _block_operators_cached(A.tobytes(), A.shape[0], b)


def _propagate(A: np.ndarray, x: np.ndarray, drive: np.ndarray) -> np.ndarray:
    """States ``x_1..x_{T+1}`` of ``x+ = A x + d`` in blocks of ``BLOCK`` steps.

    Inside a block the state is ``A^{s+1} x0 + sum_r A^{s-r} d_r``; only the
    block boundaries are chained sequentially.
    """
    length, n = drive.shape
    states = np.empty((length + 1, n))
    states[0] = x
    b = min(BLOCK, length)
    Fm, T = _block_operators(A, b)
    full = length // b
    if full:
        # all in-block drive responses at once, then chain boundaries
        forced = (drive[: full * b].reshape(full, b * n) @ T.T).reshape(full, b, n)
        x0 = x
        for k in range(full):
            blk = (Fm @ x0).reshape(b, n) + forced[k]
            states[k * b + 1: (k + 1) * b + 1] = blk
            x0 = blk[-1]
    for t in range(full * b, length):
        states[t + 1] = A @ states[t] + drive[t]
    return states


def rollout_episode(bank: CandidateBank, active_controller: int, initial_state, length: int,
                    noise: NoiseStreams, global_step: int = 0):
    """Simulate ``length`` steps of loop ``[i_star, j]``.

    ``x_{t+1} = A x_t + B u_t + w_t`` and ``y_t = C x_t + eta_t``. Returns the
    trajectory and the next episode's initial state ``x_{length+1}``. If any
    state component exceeds ``DIVERGENCE_LIMIT`` the rest of the episode is
    dropped and the last finite state is returned.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    cl = bank.loop(bank.true_index, active_controller)
    A, B, C = cl.A, cl.B, cl.C
    n = A.shape[0]
    x = np.asarray(initial_state, dtype=float).reshape(-1)
    if x.shape[0] != n:
        raise DimensionError(f"initial state has {x.shape[0]} entries, loop has {n} states")
    w, eta, u = noise.draw(global_step, length, n, C.shape[0], B.shape[1])
    drive = u @ B.T + w
    with np.errstate(over="ignore", invalid="ignore"):
        states = _propagate(A, x, drive)
        bad = ~(np.abs(states) <= DIVERGENCE_LIMIT).all(axis=1)
    divergence_step = None
    if bad.any():
        first = int(np.argmax(bad))
        divergence_step = first
        final = states[first - 1].copy() if first > 0 else x.copy()
        states[first:] = np.nan
    else:
        final = states[length].copy()
    with np.errstate(invalid="ignore"):
        outputs = states[:length] @ C.T + eta
    traj = Trajectory(states[:length], outputs, u, w, int(global_step), divergence_step)
    return traj, final


def carry_over_state(prev_final, prev_ctrl: int, next_ctrl: int, bank: CandidateBank) -> np.ndarray:
    """Keep the plant substate; reset controller memory when the controller changes."""
    x = np.asarray(prev_final, dtype=float).reshape(-1)
    if prev_ctrl == next_ctrl:
        return x.copy()
    d_x = bank.models[bank.true_index].n_states
    k_next = bank.controllers[next_ctrl].order
    return np.concatenate([x[:d_x], np.zeros(k_next)])


@dataclass
class EnergyMetrics:
    state_energy: float
    input_energy_pre: float
    input_energy_post: float

    def as_tuple(self):
        return (self.state_energy, self.input_energy_pre, self.input_energy_post)


@dataclass
class EnergyLedger:
    """Per-step energies accumulated over a run.

    Steps up to ``split_time`` are kept as totals; later steps are kept
    individually so the gain inequality can be checked at every horizon.
    """

    split_time: int
    state_pre: float = 0.0
    input_pre: float = 0.0
    state_post: list = field(default_factory=list)
    input_post: list = field(default_factory=list)
    steps: int = 0

    def add(self, traj: Trajectory):
        xs = np.nan_to_num(np.sum(traj.states**2, axis=1), nan=0.0)
        ds = np.sum(traj.inputs**2, axis=1) + np.sum(traj.process_noise**2, axis=1)
        t0 = traj.start_time
        n = len(traj)
        cut = max(0, min(n, self.split_time - t0))
        self.state_pre += float(xs[:cut].sum())
        self.input_pre += float(ds[:cut].sum())
        self.state_post.extend(xs[cut:].tolist())
        self.input_post.extend(ds[cut:].tolist())
        self.steps += n


def energy_metrics(ledger: EnergyLedger) -> EnergyMetrics:
    """``(sum ||x_t||^2, pre-split disturbance energy, post-split disturbance energy)``."""
    return EnergyMetrics(
        ledger.state_pre + math.fsum(ledger.state_post),
        ledger.input_pre,
        math.fsum(ledger.input_post),
    )
