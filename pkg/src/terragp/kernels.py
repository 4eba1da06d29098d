"""Stationary covariance functions and their analytic derivatives.

Four families are supported: squared-exponential (RBF), rational
quadratic, absolute exponential, and Matern with half-integer
smoothness 1/2, 3/2 or 5/2 (closed forms only; the Bessel-function
general case is deliberately avoided because the closed forms are cheap
and differentiable).

Every family is wrapped by an output scale, k(x, x') = s2 * k_base, and
all positive hyperparameters are stored as logarithms so unconstrained
gradient steps can never produce an invalid kernel.  Distances are
taken in whatever units the inputs carry; models feed z-scored
coordinates, so the lengthscale is dimensionless there.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InvalidConfigError, InvalidInputError

RBF = "rbf"
RATIONAL_QUADRATIC = "rq"
ABS_EXP = "abs_exp"
MATERN = "matern"

FAMILIES = (RBF, RATIONAL_QUADRATIC, ABS_EXP, MATERN)
MATERN_NUS = (0.5, 1.5, 2.5)

LOG_LENGTHSCALE = "log_lengthscale"
LOG_OUTPUTSCALE = "log_outputscale"
LOG_ALPHA = "log_alpha"


@dataclass(frozen=True)
class KernelConfig:
    """A kernel family plus its log-space hyperparameters.

    `log_alpha` is meaningful only for the rational quadratic family and
    `nu` only for Matern; both are carried (and ignored) elsewhere.
    """

    family: str
    log_lengthscale: float = 0.0
    log_outputscale: float = 0.0
    log_alpha: float = 0.0
    nu: float = 2.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidConfigError(
                f"unknown kernel family {self.family!r}; expected one of {FAMILIES}"
            )
        if self.family == MATERN and self.nu not in MATERN_NUS:
            raise InvalidConfigError(
                f"matern nu must be one of {MATERN_NUS}, got {self.nu}"
            )
        for name in (LOG_LENGTHSCALE, LOG_OUTPUTSCALE, LOG_ALPHA):
            if not np.isfinite(getattr(self, name)):
                raise InvalidConfigError(f"{name} must be finite")

    @property
    def lengthscale(self) -> float:
        return float(np.exp(self.log_lengthscale))

    @property
    def outputscale(self) -> float:
        return float(np.exp(self.log_outputscale))

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))


def param_names(cfg: KernelConfig) -> list[str]:
    """Names of the optimizable log-space hyperparameters, in pack order."""
    names = [LOG_LENGTHSCALE, LOG_OUTPUTSCALE]
    if cfg.family == RATIONAL_QUADRATIC:
        names.append(LOG_ALPHA)
    return names


def get_params(cfg: KernelConfig) -> np.ndarray:
    return np.array([getattr(cfg, n) for n in param_names(cfg)], dtype=float)


def with_params(cfg: KernelConfig, values) -> KernelConfig:
    return replace(cfg, **dict(zip(param_names(cfg), map(float, values))))


def _as_points(pts) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(pts, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("kernel inputs must be finite")
    return arr


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    return np.maximum(cdist(a, b, metric="sqeuclidean"), 0.0)


def _base(cfg: KernelConfig, r2: np.ndarray) -> np.ndarray:
    ell = cfg.lengthscale
    if cfg.family == RBF:
        return np.exp(-0.5 * r2 / ell**2)
    if cfg.family == RATIONAL_QUADRATIC:
        u = r2 / (2.0 * cfg.alpha * ell**2)
        return np.power(1.0 + u, -cfg.alpha)
    r = np.sqrt(r2)
    if cfg.family == ABS_EXP:
        return np.exp(-r / ell)
    # matern
    if cfg.nu == 0.5:
        return np.exp(-r / ell)
    if cfg.nu == 1.5:
        s = np.sqrt(3.0) * r / ell
        return (1.0 + s) * np.exp(-s)
    s = np.sqrt(5.0) * r / ell
    return (1.0 + s + s**2 / 3.0) * np.exp(-s)


def gram(cfg: KernelConfig, a, b) -> np.ndarray:
    """Covariance matrix with entries s2 * k_base(a_i, b_j)."""
    a = _as_points(a)
    b = _as_points(b)
    return cfg.outputscale * _base(cfg, _sq_dists(a, b))


def eval_kernel(cfg: KernelConfig, x, xp) -> float:
    """Covariance between two single points."""
    return float(gram(cfg, np.reshape(x, (1, -1)), np.reshape(xp, (1, -1)))[0, 0])


def gram_diag(cfg: KernelConfig, a) -> np.ndarray:
    """diag k(a, a); constant s2 for these stationary families."""
    a = _as_points(a)
    return np.full(a.shape[0], cfg.outputscale)


def gram_gradients(cfg: KernelConfig, a, b) -> dict[str, np.ndarray]:
    """dK/dtheta for each log-space hyperparameter in `param_names` order."""
    a = _as_points(a)
    b = _as_points(b)
    r2 = _sq_dists(a, b)
    s2 = cfg.outputscale
    ell = cfg.lengthscale
    K = s2 * _base(cfg, r2)
    grads: dict[str, np.ndarray] = {}

    if cfg.family == RBF:
        grads[LOG_LENGTHSCALE] = K * (r2 / ell**2)
    elif cfg.family == RATIONAL_QUADRATIC:
        al = cfg.alpha
        u = r2 / (2.0 * al * ell**2)
        grads[LOG_LENGTHSCALE] = s2 * np.power(1.0 + u, -al - 1.0) * (r2 / ell**2)
        grads[LOG_ALPHA] = K * al * (u / (1.0 + u) - np.log1p(u))
    elif cfg.family == ABS_EXP or (cfg.family == MATERN and cfg.nu == 0.5):
        r = np.sqrt(r2)
        grads[LOG_LENGTHSCALE] = K * (r / ell)
    elif cfg.family == MATERN and cfg.nu == 1.5:
        s = np.sqrt(3.0) * np.sqrt(r2) / ell
        grads[LOG_LENGTHSCALE] = s2 * s**2 * np.exp(-s)
    else:  # matern 5/2
        s = np.sqrt(5.0) * np.sqrt(r2) / ell
        grads[LOG_LENGTHSCALE] = s2 * (s**2 * (1.0 + s) / 3.0) * np.exp(-s)

    grads[LOG_OUTPUTSCALE] = K
    return {name: grads[name] for name in param_names(cfg)}


def gram_dr2(cfg: KernelConfig, a, b) -> np.ndarray:
    """dk/d(r2) entrywise, used for gradients with respect to locations.

    The absolute-exponential and Matern-1/2 families are not
    differentiable at coincident points; the subgradient 0 is returned
    there.
    """
    a = _as_points(a)
    b = _as_points(b)
    r2 = _sq_dists(a, b)
    s2 = cfg.outputscale
    ell = cfg.lengthscale

    if cfg.family == RBF:
        return -s2 * np.exp(-0.5 * r2 / ell**2) / (2.0 * ell**2)
    if cfg.family == RATIONAL_QUADRATIC:
        al = cfg.alpha
        u = r2 / (2.0 * al * ell**2)
        return -s2 * np.power(1.0 + u, -al - 1.0) / (2.0 * ell**2)
    r = np.sqrt(r2)
    if cfg.family == ABS_EXP or (cfg.family == MATERN and cfg.nu == 0.5):
        out = np.zeros_like(r)
        nz = r > 0.0
        out[nz] = -s2 * np.exp(-r[nz] / ell) / (2.0 * r[nz] * ell)
        return out
    if cfg.nu == 1.5:
        s = np.sqrt(3.0) * r / ell
        return -s2 * (3.0 / (2.0 * ell**2)) * np.exp(-s)
    s = np.sqrt(5.0) * r / ell
    return -s2 * (5.0 / (6.0 * ell**2)) * (1.0 + s) * np.exp(-s)
