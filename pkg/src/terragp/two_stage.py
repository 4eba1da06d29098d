"""Two-stage heteroscedastic terrain model.

Stage 1 fits a smoothing GP to the log of the per-sample noise
variances and freezes it.  Stage 2 fits the terrain GP (exact or sparse
variational) whose likelihood uses the frozen stage-1 posterior mean as
a fixed log-variance field.  The noise is therefore never re-estimated
from the elevations; it comes entirely from the confidence data.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import exact_gp, svgp
from .datasets import Dataset, NormStats
from .errors import InvalidInputError
from .means import ConstantMean
from .methods import NOISE_GP, MethodConfig

# queries far outside the data can extrapolate wildly in log space;
# clamp before exponentiation
LOG_VAR_CLAMP = 20.0

# above this size stage 1 switches from the exact GP to a sparse one
STAGE1_EXACT_MAX_N = 10_000

_STAGE1_SVGP = replace(
    NOISE_GP,
    variational=True,
    batch_size=256,
    num_inducing=1024,
)


@dataclass
class NoiseModel:
    """Frozen GP over log noise variance (normalized target units)."""

    gp: exact_gp.ExactGpModel | svgp.SvgpState
    frozen: bool = True

    def log_var_mean(self, Xn: np.ndarray) -> np.ndarray:
        """Posterior mean of the log variance, clamped to +-20."""
        if isinstance(self.gp, svgp.SvgpState):
            mu, _ = svgp.predictive_qf(self.gp, Xn)
        else:
            mu, _ = exact_gp.predict_exact(self.gp, Xn)
        return np.clip(mu, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)

    def noise_variances(self, Xn: np.ndarray) -> np.ndarray:
        return np.exp(self.log_var_mean(Xn))


@dataclass
class TwoStageModel:
    noise: NoiseModel
    terrain: exact_gp.ExactGpModel | svgp.SvgpState
    variational: bool
    stats: NormStats
    loss_history: list = field(default_factory=list, repr=False, compare=False)


def fit_noise_gp(
    Xn: np.ndarray, R: np.ndarray, config: MethodConfig | None = None, seed: int = 0
) -> NoiseModel:
    """Stage 1: fit the log-variance GP and freeze it.

    `R` holds per-sample noise variances in normalized target units
    (already divided by std(Y)^2); all entries must be positive.
    """
    R = np.asarray(R, dtype=float)
    bad = np.flatnonzero(~(R > 0))
    if bad.size:
        raise InvalidInputError(
            f"noise variance must be positive; r[{int(bad[0])}] = {R[bad[0]]}"
        )
    if config is None:
        config = NOISE_GP
    targets = np.log(R)
    n = targets.size

    # the noise-GP fit is itself a small regression problem; reuse the
    # generic trainers with log-variance targets and no re-normalization
    stats = NormStats(
        x_mean=np.zeros(2), x_std=np.ones(2), y_mean=0.0, y_std=1.0
    )
    data = Dataset(X=np.atleast_2d(Xn), Y=targets, R=None, stats=stats)
    if n <= STAGE1_EXACT_MAX_N:
        mean_fn = ConstantMean(float(targets.mean()), learnable=True)
        gp = exact_gp.fit_exact(
            data, replace(config, variational=False), seed, mean_fn=mean_fn
        )
    else:
        cfg = replace(
            _STAGE1_SVGP,
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            num_inducing=min(1024, n),
        )
        mean_fn = ConstantMean(float(targets.mean()), learnable=False)
        gp = svgp.fit_svgp(data, cfg, seed, mean_fn=mean_fn)
    return NoiseModel(gp=gp, frozen=True)


def terrain_noise_vector(noise_model: NoiseModel, Xn: np.ndarray) -> np.ndarray:
    """Per-point likelihood variances for stage 2: exp of the frozen
    stage-1 posterior mean at the training inputs."""
    return noise_model.noise_variances(Xn)


def fit_terrain(
    data: Dataset,
    noise_model: NoiseModel,
    method: MethodConfig,
    seed: int,
    mean_fn=None,
) -> TwoStageModel:
    """Stage 2: fit the terrain GP with the frozen noise field."""
    v = terrain_noise_vector(noise_model, data.X)
    if method.variational:
        terrain = svgp.fit_svgp(data, method, seed, mean_fn=mean_fn, noise_vector=v)
    else:
        terrain = exact_gp.fit_exact(data, method, seed, mean_fn=mean_fn, noise_vector=v)
    model = TwoStageModel(
        noise=noise_model,
        terrain=terrain,
        variational=method.variational,
        stats=data.stats,
    )
    model.loss_history = terrain.loss_history
    return model


def fit_two_stage(
    data: Dataset, method: MethodConfig, seed: int, mean_fn=None
) -> TwoStageModel:
    """Both stages end to end; `data.R` supplies the variance samples."""
    if data.R is None:
        raise InvalidInputError("two-stage fitting requires per-sample variances R")
    noise_model = fit_noise_gp(data.X, data.R, seed=seed)
    return fit_terrain(data, noise_model, method, seed, mean_fn=mean_fn)


def predict_terrain(
    model: TwoStageModel, Xstar_m: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, latent variance, and noise-inclusive predictive variance at
    meter-unit query points, denormalized to meters / m^2."""
    Xn = model.stats.normalize_points(np.atleast_2d(Xstar_m))
    if model.variational:
        mean_n, latent_n = svgp.predictive_qf(model.terrain, Xn)
    else:
        mean_n, latent_n = exact_gp.predict_exact(model.terrain, Xn)
    pred_n = latent_n + model.noise.noise_variances(Xn)
    return (
        model.stats.denormalize_y(mean_n),
        model.stats.denormalize_var(latent_n),
        model.stats.denormalize_var(pred_n),
    )
