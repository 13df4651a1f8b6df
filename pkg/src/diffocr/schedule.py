"""Absorbing-state noise schedule and its Markov transition kernels.

The forward chain keeps a token with probability alpha_t and replaces it
with MASK otherwise; MASK never leaves. The cumulative keep-probability
alpha_bar_t therefore determines the closed-form corruption marginal.
Transition matrices are materialized only for demos and oracle tests;
runtime noising uses the closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import Vocab


@dataclass(frozen=True)
class NoiseSchedule:
    timesteps: int
    beta: np.ndarray       # (T,), beta[t-1] = mask probability of step t
    alpha: np.ndarray      # (T,), 1 - beta
    alpha_bar: np.ndarray  # (T+1,), cumulative keep probability, alpha_bar[0] = 1

    def __post_init__(self):
        T = self.timesteps
        if self.beta.shape != (T,) or self.alpha.shape != (T,) or self.alpha_bar.shape != (T + 1,):
            raise ValueError("schedule array lengths inconsistent with timesteps")


def linear_mask_schedule(timesteps: int) -> NoiseSchedule:
    """Schedule with uniform expected mask-count increments: alpha_bar_t = 1 - t/T."""
    T = int(timesteps)
    if T < 1:
        raise ValueError("timesteps must be >= 1")
    t = np.arange(1, T + 1, dtype=np.float64)
    beta = 1.0 / (T - t + 1.0)
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    return NoiseSchedule(timesteps=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _check_t(schedule: NoiseSchedule, t: int):
    if not 1 <= t <= schedule.timesteps:
        raise ValueError(f"timestep {t} outside [1, {schedule.timesteps}]")


def transition_matrix(schedule: NoiseSchedule, t: int, vocab: Vocab) -> np.ndarray:
    """One-step kernel Q_t, column-stochastic over the N+2 input tokens.

    [Q_t]_{ij} = q(y_t = i | y_{t-1} = j): diagonal 1-beta_t for non-MASK
    tokens, bottom (MASK) row beta_t, and MASK -> MASK with probability 1.
    """
    _check_t(schedule, t)
    n = vocab.total_internal
    beta = schedule.beta[t - 1]
    q = np.zeros((n, n), dtype=np.float64)
    np.fill_diagonal(q, 1.0 - beta)
    q[vocab.mask_id, :] = beta
    q[vocab.mask_id, vocab.mask_id] = 1.0
    return q


def cumulative_matrix(schedule: NoiseSchedule, t: int, vocab: Vocab) -> np.ndarray:
    """Q_bar_t = Q_t Q_{t-1} ... Q_1 by explicit matrix product."""
    _check_t(schedule, t)
    q = transition_matrix(schedule, 1, vocab)
    for s in range(2, t + 1):
        q = transition_matrix(schedule, s, vocab) @ q
    return q


def marginal(token_id: int, schedule: NoiseSchedule, t: int, vocab: Vocab) -> np.ndarray:
    """Closed-form q(y_t | y_0 = token): keep with alpha_bar_t, else MASK."""
    _check_t(schedule, t)
    if not 0 <= token_id < vocab.total_internal:
        raise ValueError(f"token id {token_id} outside vocabulary")
    dist = np.zeros(vocab.total_internal, dtype=np.float64)
    if token_id == vocab.mask_id:
        dist[vocab.mask_id] = 1.0
        return dist
    ab = schedule.alpha_bar[t]
    dist[token_id] = ab
    dist[vocab.mask_id] = 1.0 - ab
    return dist
