"""Forward corruption: sample y_t from a clean sequence y_0.

`noise_sequence` uses the closed-form marginal (keep each token with
probability alpha_bar_t, else MASK). `chain_sample` simulates the t
one-step kernels instead and exists as the independent oracle the tests
compare against; both corrupt positions i.i.d.
"""
from __future__ import annotations

import numpy as np

from .rng import RngStream
from .schedule import NoiseSchedule, _check_t
from .vocab import Vocab

MASK_GLYPH = "▁"  # rendering of MASK in demos and traces


def _check_clean(y0: np.ndarray, vocab: Vocab):
    if np.any(y0 == vocab.mask_id):
        raise ValueError("clean sequence must not contain MASK tokens")


def noise_sequence(y0: np.ndarray, schedule: NoiseSchedule, t: int, vocab: Vocab,
                   rng: RngStream) -> np.ndarray:
    """Corrupt y_0 to y_t in one shot via the closed-form marginal."""
    y0 = np.asarray(y0)
    _check_t(schedule, t)
    _check_clean(y0, vocab)
    u = rng.uniforms(y0.shape)
    return np.where(u < 1.0 - schedule.alpha_bar[t], vocab.mask_id, y0)


def noise_batch(y0: np.ndarray, schedule: NoiseSchedule, t: np.ndarray, vocab: Vocab,
                rng: RngStream) -> np.ndarray:
    """Vectorized corruption of a (B, L) batch with per-row timesteps."""
    y0 = np.asarray(y0)
    t = np.asarray(t)
    _check_clean(y0, vocab)
    mask_prob = 1.0 - schedule.alpha_bar[t]
    u = rng.uniforms(y0.shape)
    return np.where(u < mask_prob[:, None], vocab.mask_id, y0)


def chain_trajectory(y0: np.ndarray, schedule: NoiseSchedule, t: int, vocab: Vocab,
                     rng: RngStream) -> list[np.ndarray]:
    """States y_1 .. y_t from t successive applications of the one-step kernel."""
    y0 = np.asarray(y0)
    _check_t(schedule, t)
    _check_clean(y0, vocab)
    states = []
    y = y0.copy()
    for s in range(1, t + 1):
        u = rng.uniforms(y.shape)
        hit = (u < schedule.beta[s - 1]) & (y != vocab.mask_id)
        y = np.where(hit, vocab.mask_id, y)
        states.append(y.copy())
    return states


def chain_sample(y0: np.ndarray, schedule: NoiseSchedule, t: int, vocab: Vocab,
                 rng: RngStream) -> np.ndarray:
    """y_t by explicit step-by-step chain simulation (test oracle)."""
    return chain_trajectory(y0, schedule, t, vocab, rng)[-1]


def masked_repr(seq: np.ndarray, vocab: Vocab) -> str:
    """Human-readable sequence: characters, '$' for EOS, '▁' for MASK."""
    out = []
    for tok in np.asarray(seq):
        tok = int(tok)
        if tok == vocab.mask_id:
            out.append(MASK_GLYPH)
        elif tok == vocab.eos_id:
            out.append("$")
        else:
            out.append(vocab.chars[tok])
    return "".join(out)
