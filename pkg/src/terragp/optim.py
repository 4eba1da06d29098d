"""Adam optimizer and a finite-difference gradient checker.

Both GP trainers (exact and variational) drive their packed parameter
vectors through `adam_step`.  The update follows the standard
bias-corrected form; with everything seeded, two runs over identical
inputs produce bitwise-identical trajectories.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergedError


@dataclass
class AdamConfig:
    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 40
    batch_size: int | None = None  # None means full batch


@dataclass
class AdamState:
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))


def adam_init(dim: int) -> AdamState:
    return AdamState(step=0, m=np.zeros(dim), v=np.zeros(dim))


def adam_step(
    state: AdamState,
    params: np.ndarray,
    grad: np.ndarray,
    cfg: AdamConfig,
    name_of=None,
) -> tuple[np.ndarray, AdamState]:
    """One minimization step; returns updated params and state.

    `name_of` optionally maps a parameter index to a human-readable name
    used when a non-finite gradient aborts training.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and state dimensions must agree")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        i = int(bad[0])
        label = name_of(i) if name_of is not None else f"index {i}"
        raise TrainingDivergedError(f"non-finite gradient for parameter {label}")

    t = state.step + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad**2
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    new_params = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return new_params, AdamState(step=t, m=m, v=v)


def adam_state_to_bytes(state: AdamState) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<qq", state.step, state.m.size))
    buf.write(np.ascontiguousarray(state.m, dtype=np.float64).tobytes())
    buf.write(np.ascontiguousarray(state.v, dtype=np.float64).tobytes())
    return buf.getvalue()


def adam_state_from_bytes(raw: bytes) -> AdamState:
    step, dim = struct.unpack_from("<qq", raw, 0)
    off = 16
    m = np.frombuffer(raw, dtype=np.float64, count=dim, offset=off).copy()
    off += 8 * dim
    v = np.frombuffer(raw, dtype=np.float64, count=dim, offset=off).copy()
    return AdamState(step=step, m=m, v=v)


def check_gradient(f, x, analytic_grad, step: float = 1e-5) -> float:
    """Max relative error between `analytic_grad` and central differences.

    Per coordinate the error is |analytic - numeric| / max(1, |numeric|);
    the maximum over coordinates is returned.
    """
    x = np.asarray(x, dtype=float)
    analytic_grad = np.asarray(analytic_grad, dtype=float)
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        numeric = (f(xp) - f(xm)) / (2.0 * step)
        err = abs(analytic_grad[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst


def epoch_batches(n: int, batch_size: int | None, rng: np.random.Generator):
    """Yield index arrays for one epoch: a fresh uniform shuffle, cut into
    batches, keeping the final short batch."""
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]
