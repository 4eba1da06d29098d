"""Sparse stochastic variational GP regression.

The variational posterior over inducing values u = f(Z) is an
unwhitened Gaussian q(u) = N(m(Z) + mvec, S) with S = L L^T; `mvec` is
stored as the offset from the prior mean so a zero vector means "start
at the prior".  The likelihood is Gaussian with either a learned
constant variance or fixed per-point variances, which keeps the
expected log-likelihood in closed form; no sampling anywhere.

All ELBO gradients are analytic.  The heavy lifting is a single
reverse-mode pass: adjoints for the kernel matrices Kzz and Kxz are
accumulated from the data-fit and KL terms, then pushed into the kernel
hyperparameters and the inducing locations through dK/d(r^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .datasets import Dataset
from .errors import InvalidConfigError, InvalidInputError, TrainingDivergedError
from .linalg import chol_solve, chol_with_jitter
from .means import ConstantMean, ZeroMean
from .methods import MethodConfig, init_kernel
from .optim import AdamConfig, adam_init, adam_step, epoch_batches
from .seeding import BATCH_SHUFFLE, INDUCING_INIT, INIT, stream_rng

INIT_CHOL_SCALE = 0.1
NOISE_FLOOR = 1e-6
LOG_NOISE_VARIANCE = "log_noise_variance"


@dataclass
class SvgpState:
    Z: np.ndarray  # (m, 2) inducing locations
    mvec: np.ndarray  # (m,) offset of q(u) mean from the prior mean m(Z)
    L: np.ndarray  # (m, m) lower-triangular factor of S, positive diagonal
    kernel: kernels.KernelConfig
    mean_fn: object
    log_noise_var: float | None  # None when the noise is an external field
    loss_history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def num_inducing(self) -> int:
        return self.Z.shape[0]

    def cov(self) -> np.ndarray:
        return self.L @ self.L.T


def init_inducing(X: np.ndarray, m: int, seed: int) -> np.ndarray:
    """m distinct training inputs drawn without replacement."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if m < 1 or m > n:
        raise InvalidConfigError(f"inducing count {m} must satisfy 1 <= m <= n ({n})")
    rng = stream_rng(seed, INDUCING_INIT)
    idx = rng.choice(n, size=m, replace=False)
    return X[idx].copy()


def init_state(
    X: np.ndarray,
    m: int,
    kernel: kernels.KernelConfig,
    mean_fn,
    seed: int,
    log_noise_var: float | None,
) -> SvgpState:
    """Inducing points from a random training subset; q(u) starts small
    but shaped like the prior, S = 0.01 Kzz.

    A spherical start (0.1 I) looks equivalent but is not: smooth
    kernels make Kzz nearly singular, A = Kxz Kzz^-1 then has huge rows,
    and any S component outside the prior's small-eigenvalue directions
    inflates the marginal variances A S A^T by orders of magnitude,
    which a fixed epoch budget cannot undo.
    """
    Z = init_inducing(X, m, seed)
    Kzz = kernels.gram(kernel, Z, Z)
    Lz, _ = chol_with_jitter(Kzz)
    return SvgpState(
        Z=Z,
        mvec=np.zeros(m),
        L=INIT_CHOL_SCALE * Lz,
        kernel=kernel,
        mean_fn=mean_fn,
        log_noise_var=log_noise_var,
    )


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------


def expected_loglik(qf_mean, qf_var, y, noise_var):
    """E_{f ~ N(mu, s2)}[log N(y | f, v)] in closed form:
    -0.5 log(2 pi v) - ((y - mu)^2 + s2) / (2 v)."""
    noise_var = np.asarray(noise_var, dtype=float)
    if np.any(noise_var <= 0):
        raise InvalidInputError("noise variance must be positive")
    qf_mean = np.asarray(qf_mean, dtype=float)
    qf_var = np.asarray(qf_var, dtype=float)
    y = np.asarray(y, dtype=float)
    return -0.5 * np.log(2.0 * np.pi * noise_var) - (
        (y - qf_mean) ** 2 + qf_var
    ) / (2.0 * noise_var)


def kl_term(state: SvgpState) -> float:
    """KL[q(u) || p(u)] between N(m(Z) + mvec, S) and the prior N(m(Z), Kzz)."""
    m = state.num_inducing
    Kzz = kernels.gram(state.kernel, state.Z, state.Z)
    Lz, _ = chol_with_jitter(Kzz)
    S = state.cov()
    trace = float(np.trace(chol_solve(Lz, S)))
    c = chol_solve(Lz, state.mvec)
    quad = float(state.mvec @ c)
    logdet_kzz = 2.0 * float(np.log(np.diag(Lz)).sum())
    logdet_s = 2.0 * float(np.log(np.diag(state.L)).sum())
    return 0.5 * (trace + quad - m + logdet_kzz - logdet_s)


_PREDICT_CHUNK = 4096


def predictive_qf(state: SvgpState, Xstar) -> tuple[np.ndarray, np.ndarray]:
    """Marginal q(f*) at query points: the sparse-GP mean and variance
    k** - A (Kzz - S) A^T with A = K*z Kzz^-1, clamped at zero."""
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    Kzz = kernels.gram(state.kernel, state.Z, state.Z)
    Lz, _ = chol_with_jitter(Kzz)
    S = state.cov()
    q = Xstar.shape[0]
    mean = np.empty(q)
    var = np.empty(q)
    for start in range(0, q, _PREDICT_CHUNK):
        sl = slice(start, min(start + _PREDICT_CHUNK, q))
        Ksz = kernels.gram(state.kernel, Xstar[sl], state.Z)
        A = chol_solve(Lz, Ksz.T).T
        mean[sl] = state.mean_fn(Xstar[sl]) + A @ state.mvec
        AS = A @ S
        var[sl] = (
            kernels.gram_diag(state.kernel, Xstar[sl])
            - np.einsum("ij,ij->i", A, Ksz)
            + np.einsum("ij,ij->i", AS, A)
        )
    return mean, np.maximum(var, 0.0)


# ---------------------------------------------------------------------------
# ELBO and analytic gradients
# ---------------------------------------------------------------------------


@dataclass
class ElboGradients:
    Z: np.ndarray  # (m, 2)
    mvec: np.ndarray  # (m,)
    L: np.ndarray  # (m, m); diagonal entries already in log-diagonal space
    kernel: dict[str, float]
    log_noise_var: float | None


def elbo_minibatch(
    state: SvgpState,
    Xb: np.ndarray,
    yb: np.ndarray,
    n_total: int,
    noise_var,
) -> tuple[float, ElboGradients]:
    """Minibatch ELBO (n/b) sum_i E[log p(y_i | f_i)] - KL and its
    gradients with respect to every free parameter.

    `noise_var` is a scalar (constant noise) or an array aligned with
    the batch (fixed spatial noise).
    """
    Xb = np.atleast_2d(np.asarray(Xb, dtype=float))
    yb = np.asarray(yb, dtype=float)
    b = Xb.shape[0]
    if b == 0:
        raise InvalidInputError("batch must be nonempty")
    v = np.asarray(noise_var, dtype=float)
    if v.ndim == 0:
        v = np.full(b, float(v))
    if np.any(v <= 0):
        raise InvalidInputError("noise variance must be positive")
    w = n_total / b

    Z, mvec, L, kernel = state.Z, state.mvec, state.L, state.kernel
    m = state.num_inducing
    S = L @ L.T

    Kzz = kernels.gram(kernel, Z, Z)
    Lz, _ = chol_with_jitter(Kzz)
    Kxz = kernels.gram(kernel, Xb, Z)
    kxx = kernels.gram_diag(kernel, Xb)
    A = chol_solve(Lz, Kxz.T).T  # b x m

    mX = state.mean_fn(Xb)
    mu = mX + A @ mvec
    AS = A @ S
    t1 = np.einsum("ij,ij->i", A, Kxz)
    t2 = np.einsum("ij,ij->i", AS, A)
    s2 = kxx - t1 + t2

    resid = yb - mu
    data_term = w * float(
        np.sum(-0.5 * np.log(2.0 * np.pi * v) - (resid**2 + s2) / (2.0 * v))
    )

    Kzz_inv = chol_solve(Lz, np.eye(m))
    Kzz_inv_S = Kzz_inv @ S
    cvec = Kzz_inv @ mvec
    logdet_kzz = 2.0 * float(np.log(np.diag(Lz)).sum())
    logdet_s = 2.0 * float(np.log(np.diag(L)).sum())
    kl = 0.5 * (
        float(np.trace(Kzz_inv_S)) + float(mvec @ cvec) - m + logdet_kzz - logdet_s
    )
    elbo = data_term - kl

    # --- reverse pass -----------------------------------------------------
    ebar = w * resid / v  # d elbo / d mu
    ubar = -w / (2.0 * v)  # d elbo / d s2

    # data-fit adjoints
    mvec_bar = A.T @ ebar
    S_bar = A.T @ (A * ubar[:, None])
    A_bar = np.outer(ebar, mvec) - ubar[:, None] * Kxz + 2.0 * ubar[:, None] * AS
    Kxz_bar = -ubar[:, None] * A
    kxx_bar = ubar

    # A = Kxz Kzz^-1
    At = A_bar @ Kzz_inv
    Kxz_bar += At
    Kzz_bar = -A.T @ At

    # KL adjoints (elbo = data - KL)
    Kzz_inv_S_Kzz_inv = Kzz_inv_S @ Kzz_inv
    Kzz_bar += 0.5 * (Kzz_inv_S_Kzz_inv + np.outer(cvec, cvec) - Kzz_inv)
    mvec_bar -= cvec
    S_bar -= 0.5 * Kzz_inv

    # S = L L^T; S_bar is symmetric by construction
    L_bar = 2.0 * (S_bar @ L)
    L_bar = np.tril(L_bar)
    # diagonal is parameterized as log values
    diag = np.diag(L).copy()
    L_bar[np.diag_indices(m)] = np.diag(L_bar) * diag
    # the +0.5 log|S| piece of -KL differentiates directly in L-space:
    # exactly +1 per log-diagonal entry, zero elsewhere (going through
    # S^-1 instead is the same after the tril mask but explodes when S
    # is badly conditioned mid-optimization)
    L_bar[np.diag_indices(m)] += 1.0

    # kernel hyperparameters
    kern_grads: dict[str, float] = {}
    dKzz = kernels.gram_gradients(kernel, Z, Z)
    dKxz = kernels.gram_gradients(kernel, Xb, Z)
    for name in kernels.param_names(kernel):
        g = float(np.sum(Kzz_bar * dKzz[name])) + float(np.sum(Kxz_bar * dKxz[name]))
        if name == kernels.LOG_OUTPUTSCALE:
            g += float(np.sum(kxx_bar * kxx))
        kern_grads[name] = g

    # inducing locations
    Gz = kernels.gram_dr2(kernel, Z, Z)
    Wz = (Kzz_bar + Kzz_bar.T) * Gz
    np.fill_diagonal(Wz, 0.0)
    Z_bar = 2.0 * (Wz.sum(axis=1)[:, None] * Z - Wz @ Z)
    Gx = kernels.gram_dr2(kernel, Xb, Z)
    Wx = Kxz_bar * Gx
    Z_bar += 2.0 * (Wx.sum(axis=0)[:, None] * Z - Wx.T @ Xb)

    noise_grad = None
    if state.log_noise_var is not None:
        noise_grad = float(w * np.sum(-0.5 + (resid**2 + s2) / (2.0 * v)))

    return elbo, ElboGradients(
        Z=Z_bar, mvec=mvec_bar, L=L_bar, kernel=kern_grads, log_noise_var=noise_grad
    )


# ---------------------------------------------------------------------------
# Whitened training parameterization
# ---------------------------------------------------------------------------
#
# The public state stores q(u) = N(m(Z) + mvec, L L^T) directly, but the
# loss surface in those coordinates is catastrophically ill-conditioned
# for smooth kernels: A = Kxz Kzz^-1 has huge rows whenever Kzz is close
# to singular, so a fixed-size Adam step on L can inflate the marginal
# variances A S A^T by orders of magnitude.  The trainer therefore
# optimizes the change of variables
#
#     mvec = Lz mw,    L = Lz Lw,    Lz = chol(Kzz),
#
# under which the data fit sees B = Kxz Lz^-T (rows bounded by sqrt(kxx))
# and the KL collapses to 0.5 (||Lw||_F^2 + ||mw||^2 - m - 2 sum log Lw_kk)
# with no Kzz dependence.  Both lower-triangular factors have positive
# diagonals, so the unwhitened state is recovered exactly as a product
# of triangles; the two parameterizations describe the same q(u).


def _phi_half_diag(mat: np.ndarray) -> np.ndarray:
    out = np.tril(mat)
    out[np.diag_indices(mat.shape[0])] *= 0.5
    return out


def _chol_backward(Lz: np.ndarray, Lz_bar: np.ndarray) -> np.ndarray:
    """Adjoint of Kzz with respect to Lz = chol(Kzz)."""
    P = _phi_half_diag(Lz.T @ np.tril(Lz_bar))
    # T = Lz^-T P Lz^-1 via two triangular solves
    U_t = solve_triangular(Lz, P.T, lower=True, trans="T")  # U^T, U = P Lz^-1
    T = solve_triangular(Lz, U_t.T, lower=True, trans="T")
    return 0.5 * (T + T.T)


def _elbo_whitened(
    state: SvgpState,
    Xb: np.ndarray,
    yb: np.ndarray,
    n_total: int,
    noise_var,
) -> tuple[float, ElboGradients]:
    """Minibatch ELBO and gradients in the whitened coordinates.

    `state` fields are reinterpreted: mvec holds mw and L holds Lw.  The
    gradient container layout matches `pack_gradients`.
    """
    Xb = np.atleast_2d(np.asarray(Xb, dtype=float))
    yb = np.asarray(yb, dtype=float)
    b = Xb.shape[0]
    v = np.asarray(noise_var, dtype=float)
    if v.ndim == 0:
        v = np.full(b, float(v))
    w = n_total / b

    Z, mw, Lw, kernel = state.Z, state.mvec, state.L, state.kernel
    m = state.num_inducing

    Kzz = kernels.gram(kernel, Z, Z)
    Lz, _ = chol_with_jitter(Kzz)
    Kxz = kernels.gram(kernel, Xb, Z)
    kxx = kernels.gram_diag(kernel, Xb)
    B = solve_triangular(Lz, Kxz.T, lower=True).T  # Kxz Lz^-T

    mu = state.mean_fn(Xb) + B @ mw
    BL = B @ Lw
    q1 = np.einsum("ij,ij->i", B, B)
    q2 = np.einsum("ij,ij->i", BL, BL)
    s2 = kxx - q1 + q2

    resid = yb - mu
    data_term = w * float(
        np.sum(-0.5 * np.log(2.0 * np.pi * v) - (resid**2 + s2) / (2.0 * v))
    )
    diag_lw = np.diag(Lw)
    kl = 0.5 * (
        float(np.sum(Lw**2)) + float(mw @ mw) - m - 2.0 * float(np.log(diag_lw).sum())
    )
    elbo = data_term - kl

    # reverse pass
    ebar = w * resid / v
    ubar = -w / (2.0 * v)

    mw_bar = B.T @ ebar - mw
    Lw_bar = 2.0 * (B.T @ (ubar[:, None] * BL)) - Lw
    Lw_bar = np.tril(Lw_bar)
    Lw_bar[np.diag_indices(m)] = np.diag(Lw_bar) * diag_lw + 1.0

    B_bar = (
        np.outer(ebar, mw)
        - 2.0 * ubar[:, None] * B
        + 2.0 * ubar[:, None] * (BL @ Lw.T)
    )
    kxx_bar = ubar

    # B = Kxz Lz^-T:  Kxz_bar = B_bar Lz^-1,  Lz_bar = -Kxz_bar^T B
    X_t = solve_triangular(Lz, B_bar.T, lower=True, trans="T")  # (B_bar Lz^-1)^T
    Kxz_bar = X_t.T
    Lz_bar = -(Kxz_bar.T @ B)
    Kzz_bar = _chol_backward(Lz, Lz_bar)

    kern_grads: dict[str, float] = {}
    dKzz = kernels.gram_gradients(kernel, Z, Z)
    dKxz = kernels.gram_gradients(kernel, Xb, Z)
    for name in kernels.param_names(kernel):
        g = float(np.sum(Kzz_bar * dKzz[name])) + float(np.sum(Kxz_bar * dKxz[name]))
        if name == kernels.LOG_OUTPUTSCALE:
            g += float(np.sum(kxx_bar * kxx))
        kern_grads[name] = g

    Gz = kernels.gram_dr2(kernel, Z, Z)
    Wz = (Kzz_bar + Kzz_bar.T) * Gz
    np.fill_diagonal(Wz, 0.0)
    Z_bar = 2.0 * (Wz.sum(axis=1)[:, None] * Z - Wz @ Z)
    Gx = kernels.gram_dr2(kernel, Xb, Z)
    Wx = Kxz_bar * Gx
    Z_bar += 2.0 * (Wx.sum(axis=0)[:, None] * Z - Wx.T @ Xb)

    noise_grad = None
    if state.log_noise_var is not None:
        noise_grad = float(w * np.sum(-0.5 + (resid**2 + s2) / (2.0 * v)))

    return elbo, ElboGradients(
        Z=Z_bar, mvec=mw_bar, L=Lw_bar, kernel=kern_grads, log_noise_var=noise_grad
    )


def whitened_to_state(wstate: SvgpState) -> SvgpState:
    """Materialize the unwhitened q(u) from whitened training parameters."""
    Kzz = kernels.gram(wstate.kernel, wstate.Z, wstate.Z)
    Lz, _ = chol_with_jitter(Kzz)
    return replace(wstate, mvec=Lz @ wstate.mvec, L=Lz @ wstate.L)


def _optimal_whitened_q(
    Z: np.ndarray,
    kernel: kernels.KernelConfig,
    mean_fn,
    X: np.ndarray,
    Y: np.ndarray,
    noise_var: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form optimum of q(u) for fixed kernel and noise, whitened.

    For a Gaussian likelihood the ELBO is maximized over q(u) at
    S_w = (I + B^T V^-1 B)^-1 and m_w = S_w B^T V^-1 (y - m(X)) with
    B = Kxz Lz^-T.  Starting the optimizer here matters: when the noise
    field is small, the optimal whitened mean is far from zero along the
    prior's small eigendirections and bounded per-coordinate steps take
    thousands of iterations to reach it.
    """
    Kzz = kernels.gram(kernel, Z, Z)
    Lz, _ = chol_with_jitter(Kzz)
    Kxz = kernels.gram(kernel, X, Z)
    B = solve_triangular(Lz, Kxz.T, lower=True).T
    v = np.asarray(noise_var, dtype=float)
    if v.ndim == 0:
        v = np.full(X.shape[0], float(v))
    M = np.eye(Z.shape[0]) + B.T @ (B / v[:, None])
    Lm, _ = chol_with_jitter(M)
    resid = np.asarray(Y, dtype=float) - mean_fn(X)
    mw = chol_solve(Lm, B.T @ (resid / v))
    S_w = chol_solve(Lm, np.eye(Z.shape[0]))
    Lw, _ = chol_with_jitter(S_w)
    return mw, Lw


# ---------------------------------------------------------------------------
# Parameter packing (shared by the trainer and the gradient checker)
# ---------------------------------------------------------------------------


def pack_state(state: SvgpState) -> np.ndarray:
    m = state.num_inducing
    li, lj = np.tril_indices(m, -1)
    parts = [
        state.Z.ravel(),
        state.mvec,
        state.L[li, lj],
        np.log(np.diag(state.L)),
        kernels.get_params(state.kernel),
    ]
    if state.log_noise_var is not None:
        parts.append(np.array([state.log_noise_var]))
    return np.concatenate(parts)


def unpack_state(state: SvgpState, vec: np.ndarray) -> SvgpState:
    m = state.num_inducing
    li, lj = np.tril_indices(m, -1)
    i = 0
    Z = vec[i : i + 2 * m].reshape(m, 2).copy()
    i += 2 * m
    mvec = vec[i : i + m].copy()
    i += m
    L = np.zeros((m, m))
    L[li, lj] = vec[i : i + li.size]
    i += li.size
    L[np.diag_indices(m)] = np.exp(vec[i : i + m])
    i += m
    nk = len(kernels.param_names(state.kernel))
    kernel = kernels.with_params(state.kernel, vec[i : i + nk])
    i += nk
    log_noise = float(vec[i]) if state.log_noise_var is not None else None
    return replace(
        state, Z=Z, mvec=mvec, L=L, kernel=kernel, log_noise_var=log_noise
    )


def pack_gradients(state: SvgpState, grads: ElboGradients) -> np.ndarray:
    m = state.num_inducing
    li, lj = np.tril_indices(m, -1)
    parts = [
        grads.Z.ravel(),
        grads.mvec,
        grads.L[li, lj],
        np.diag(grads.L),
        np.array([grads.kernel[n] for n in kernels.param_names(state.kernel)]),
    ]
    if state.log_noise_var is not None:
        parts.append(np.array([grads.log_noise_var]))
    return np.concatenate(parts)


def param_label(state: SvgpState, index: int) -> str:
    """Human-readable name of a packed parameter, for error messages."""
    m = state.num_inducing
    n_strict = m * (m - 1) // 2
    bounds = [
        (2 * m, lambda k: f"inducing[{k // 2},{k % 2}]"),
        (m, lambda k: f"variational_mean[{k}]"),
        (n_strict, lambda k: f"variational_chol[{k}]"),
        (m, lambda k: f"variational_chol_logdiag[{k}]"),
        (
            len(kernels.param_names(state.kernel)),
            lambda k: kernels.param_names(state.kernel)[k],
        ),
        (1, lambda k: LOG_NOISE_VARIANCE),
    ]
    for size, fmt in bounds:
        if index < size:
            return fmt(index)
        index -= size
    return f"index {index}"


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def fit_svgp(
    data: Dataset,
    method: MethodConfig,
    seed: int,
    mean_fn=None,
    noise_vector=None,
) -> SvgpState:
    """Adam ascent on the minibatched ELBO over all parameters: inducing
    locations, variational mean and covariance factor, kernel
    hyperparameters, and the constant noise when it is learned.

    Heteroscedastic training requires `noise_vector`, per-point
    variances aligned with `data`; the vector is fixed throughout.
    """
    if method.num_inducing is None or method.batch_size is None:
        raise InvalidConfigError(
            f"method {method.method_id!r} lacks inducing/batch configuration"
        )
    if mean_fn is None:
        mean_fn = (
            ZeroMean() if method.mean_kind == "zero" else ConstantMean(0.0, learnable=False)
        )

    n = data.n
    if method.heteroscedastic:
        if noise_vector is None:
            raise InvalidConfigError(
                f"method {method.method_id!r} requires a per-point noise vector"
            )
        noise_all = np.asarray(noise_vector, dtype=float)
        if noise_all.shape != (n,):
            raise InvalidInputError("noise vector length must match the dataset")
        log_noise = None
    else:
        noise_all = None
        pinned = method.fixed_noise_var
        log_noise = float(np.log(pinned if pinned is not None else method.init_noise_var))

    kernel = init_kernel(method, stream_rng(seed, INIT))
    m_ind = method.num_inducing
    Z0 = init_inducing(data.X, m_ind, seed)
    v_init = noise_all if noise_all is not None else float(np.exp(log_noise))
    mw0, lw0 = _optimal_whitened_q(Z0, kernel, mean_fn, data.X, data.Y, v_init)
    wstate = SvgpState(
        Z=Z0,
        mvec=mw0,
        L=lw0,
        kernel=kernel,
        mean_fn=mean_fn,
        log_noise_var=log_noise,
    )
    learn_noise = (not method.heteroscedastic) and method.fixed_noise_var is None

    adam_cfg = AdamConfig(
        learning_rate=method.learning_rate,
        max_epochs=method.epochs,
        batch_size=method.batch_size,
    )
    params = pack_state(wstate)
    opt = adam_init(params.size)
    rng_batches = stream_rng(seed, BATCH_SHUFFLE)
    history: list[float] = []

    noise_index = params.size - 1  # only meaningful when log_noise is tracked
    for _ in range(method.epochs):
        epoch_losses = []
        for idx in epoch_batches(n, method.batch_size, rng_batches):
            Xb, yb = data.X[idx], data.Y[idx]
            if wstate.log_noise_var is not None:
                batch_noise = np.exp(wstate.log_noise_var)
            else:
                batch_noise = noise_all[idx]
            elbo, grads = _elbo_whitened(wstate, Xb, yb, n, batch_noise)
            if not np.isfinite(elbo):
                raise TrainingDivergedError("ELBO became non-finite")
            epoch_losses.append(-elbo)
            gvec = pack_gradients(wstate, grads)
            if not learn_noise and wstate.log_noise_var is not None:
                gvec[noise_index] = 0.0
            params, opt = adam_step(
                opt, params, -gvec, adam_cfg, name_of=lambda i: param_label(wstate, i)
            )
            if learn_noise:
                params[noise_index] = max(params[noise_index], np.log(NOISE_FLOOR))
            wstate = unpack_state(wstate, params)
        history.append(float(np.mean(epoch_losses)))

    state = whitened_to_state(wstate)
    state.loss_history = history
    return state
