"""Counter-based random numbers keyed by ``(master_seed, trial, step, stream)``.

Every uniform is a pure function of its key, so results do not depend on
how trials are split across workers or in which order they run.
"""
from __future__ import annotations

import numpy as np

__all__ = ["GOLDEN", "mix64", "trial_keys", "uniforms", "N_STREAMS"]

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
# streams per step; step s, stream j uses counter s * N_STREAMS + j
N_STREAMS = 64


def mix64(x):
    """SplitMix64 finalizer (bijective on 64-bit words)."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> _S30)) * _M1
        x = (x ^ (x >> _S27)) * _M2
        return x ^ (x >> _S31)


def trial_keys(master_seed: int, trials) -> np.ndarray:
    """Per-trial stream keys ``mix(master_seed, i)``."""
    seed = np.uint64(int(master_seed) & 0xFFFFFFFFFFFFFFFF)
    t = np.asarray(trials, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(mix64(seed + GOLDEN) ^ (t * GOLDEN + np.uint64(1)))


def uniforms(keys: np.ndarray, steps, stream: int = 0) -> np.ndarray:
    """Uniforms in ``(0, 1)`` with shape ``keys.shape + steps.shape``."""
    if not 0 <= stream < N_STREAMS:
        raise ValueError(f"stream must lie in [0, {N_STREAMS})")
    keys = np.asarray(keys, dtype=np.uint64)
    steps = np.asarray(steps, dtype=np.uint64)
    ctr = steps * np.uint64(N_STREAMS) + np.uint64(stream + 1)
    with np.errstate(over="ignore"):
        x = mix64(keys.reshape(keys.shape + (1,) * steps.ndim) + ctr * GOLDEN)
    return ((x >> _S11).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
