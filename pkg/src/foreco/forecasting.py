"""Multivariate forecasters for joint-command streams.

Two model families: a vector autoregression (bias + one coefficient matrix per
lag) trained either by ordinary least squares or by Adam gradient descent, and
a moving-average baseline. Lag-order selection uses an information criterion
computed from the Gaussian likelihood of one-step residuals.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Command, Provenance, Trace, ms_to_us
from .errors import (
    ConfigError,
    DegenerateCovariance,
    Diverged,
    InsufficientData,
    InsufficientHistory,
    RankDeficient,
)

# Relative pivot threshold below which a design-matrix column is declared
# collinear with the preceding ones.
RANK_TOL = 1e-10


@dataclass(frozen=True)
class VarModel:
    """Fitted vector autoregression.

    coeffs[i] is the (d, d) matrix applied to the command i+1 steps back;
    bias is the per-coordinate intercept. n_params counts d^2 per lag and
    excludes the bias, which is tracked separately.
    """

    dim: int
    lag: int
    bias: np.ndarray
    coeffs: np.ndarray
    residual_cov: np.ndarray
    n_params: int = field(default=-1)
    trainer: str = "ols"
    trained_at: str | None = None
    # (d, lag*d) horizontal stack of coeffs, precomputed for fast prediction
    stacked: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        bias = np.ascontiguousarray(self.bias, dtype=float)
        coeffs = np.ascontiguousarray(self.coeffs, dtype=float).reshape(self.lag, self.dim, self.dim)
        cov = np.ascontiguousarray(self.residual_cov, dtype=float)
        if not np.all(np.isfinite(coeffs)) or not np.all(np.isfinite(bias)):
            raise ConfigError("model weights must be finite")
        if cov.shape != (self.dim, self.dim) or not np.allclose(cov, cov.T, atol=1e-8):
            raise ConfigError("residual covariance must be a symmetric (d, d) matrix")
        stacked = coeffs.transpose(1, 0, 2).reshape(self.dim, self.lag * self.dim)
        for arr in (bias, coeffs, cov, stacked):
            arr.setflags(write=False)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "residual_cov", cov)
        object.__setattr__(self, "stacked", stacked)
        if self.n_params < 0:
            object.__setattr__(self, "n_params", self.dim * self.dim * self.lag)


@dataclass(frozen=True)
class MaModel:
    """Moving-average baseline: the mean of the last `window` commands."""

    dim: int
    window: int

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")


@dataclass(frozen=True)
class AdamConfig:
    """Adam hyperparameters; defaults mirror the common 1e-3 / 0.9 / 0.999 setup."""

    step_size: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-07
    batch_size: int = 32
    epochs: int = 100
    # "fixed" keeps the bias-correction exponent at the training-set size for
    # every step; "per-step" uses the conventional step-count exponent.
    bias_correction: str = "fixed"

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.step_size < 0:
            raise ConfigError("step size must be >= 0")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.bias_correction not in ("fixed", "per-step"):
            raise ConfigError(f"unknown bias correction mode {self.bias_correction!r}")


def lagged_design(values: np.ndarray, lag: int, start: int | None = None):
    """Regression matrices for one-step prediction.

    Row t of X is [1, y_{t-1}, ..., y_{t-lag}] and the matching row of Y is
    y_t, for targets t = start .. H-1 (start defaults to lag).
    """
    n_total, dim = values.shape
    if start is None:
        start = lag
    if start < lag:
        raise ConfigError(f"start={start} must be >= lag={lag}")
    n = n_total - start
    if n < 1:
        raise InsufficientData(f"no targets left: {n_total} samples, start={start}")
    x = np.empty((n, 1 + dim * lag))
    x[:, 0] = 1.0
    for i in range(1, lag + 1):
        x[:, 1 + (i - 1) * dim : 1 + i * dim] = values[start - i : n_total - i]
    return x, values[start:]


def _solve_ols(x: np.ndarray, y: np.ndarray, ridge: float) -> np.ndarray:
    """Least-squares weights via QR with a relative pivot check."""
    if ridge > 0.0:
        # Tikhonov rows for every non-intercept column.
        k = x.shape[1]
        penalty = math.sqrt(ridge) * np.eye(k)[1:]
        x = np.vstack([x, penalty])
        y = np.vstack([y, np.zeros((k - 1, y.shape[1]))])
    q, r = np.linalg.qr(x)
    diag = np.abs(np.diag(r))
    threshold = RANK_TOL * diag.max() if diag.size else 0.0
    bad = np.nonzero(diag <= threshold)[0]
    if bad.size:
        raise RankDeficient(int(bad[0]), _describe_column(int(bad[0]), y.shape[1]))
    return np.linalg.solve(r, q.T @ y)


def _describe_column(col: int, dim: int) -> str:
    if col == 0:
        return "design matrix is rank deficient at column 0 (intercept)"
    lag = (col - 1) // dim + 1
    coord = (col - 1) % dim + 1
    return f"design matrix is rank deficient at column {col} (lag {lag}, joint {coord})"


def _weights_to_model(weights: np.ndarray, residuals: np.ndarray, dim: int, lag: int, trainer: str) -> VarModel:
    bias = weights[0].copy()
    if lag:
        coeffs = np.stack([weights[1 + i * dim : 1 + (i + 1) * dim].T for i in range(lag)])
    else:
        coeffs = np.zeros((0, dim, dim))
    cov = residuals.T @ residuals / len(residuals)
    return VarModel(dim=dim, lag=lag, bias=bias, coeffs=coeffs, residual_cov=cov, trainer=trainer)


def _check_fit_inputs(train: Trace, lag: int) -> np.ndarray:
    if lag < 0:
        raise ConfigError(f"lag must be >= 0, got {lag}")
    needed = lag + train.dim * lag + 1
    if len(train) < needed:
        raise InsufficientData(
            f"{len(train)} samples cannot determine a lag-{lag} fit in dim {train.dim}; "
            f"need at least {needed}"
        )
    return train.joints_matrix()


def fit_var_ols(train: Trace, lag: int, ridge: float = 0.0) -> VarModel:
    """Exact least-squares fit of a lag-order VAR with intercept.

    Raises RankDeficient when a design column is collinear (e.g. a constant
    joint channel duplicating the intercept); pass ridge > 0 to regularize
    such problems instead.
    """
    values = _check_fit_inputs(train, lag)
    x, y = lagged_design(values, lag)
    weights = _solve_ols(x, y, ridge)
    residuals = y - x @ weights
    return _weights_to_model(weights, residuals, train.dim, lag, "ols")


def fit_var_adam(
    train: Trace,
    lag: int,
    cfg: AdamConfig,
    loss_history: list | None = None,
) -> VarModel:
    """Fit the same regression as fit_var_ols by mini-batch Adam.

    Weights start at zero and batches sweep the training rows in order, so
    runs are deterministic. When loss_history is given, the mean per-batch
    loss of each epoch is appended to it.
    """
    values = _check_fit_inputs(train, lag)
    x, y = lagged_design(values, lag)
    n_train = len(x)
    dim = train.dim

    weights = np.zeros((x.shape[1], dim))
    m = np.zeros_like(weights)
    v = np.zeros_like(weights)
    c1_fixed = 1.0 - cfg.beta1 ** n_train
    c2_fixed = 1.0 - cfg.beta2 ** n_train

    step = 0
    for _ in range(cfg.epochs):
        epoch_losses = []
        for lo in range(0, n_train, cfg.batch_size):
            xb = x[lo : lo + cfg.batch_size]
            yb = y[lo : lo + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                resid = xb @ weights - yb
                loss = float(np.sum(resid * resid)) / len(xb)
            step += 1
            if not math.isfinite(loss):
                raise Diverged(step)
            grad = (2.0 / len(xb)) * (xb.T @ resid)
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
            if cfg.bias_correction == "fixed":
                c1, c2 = c1_fixed, c2_fixed
            else:
                c1 = 1.0 - cfg.beta1 ** step
                c2 = 1.0 - cfg.beta2 ** step
            weights = weights - cfg.step_size * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
            epoch_losses.append(loss)
        if loss_history is not None and epoch_losses:
            loss_history.append(float(np.mean(epoch_losses)))

    residuals = y - x @ weights
    return _weights_to_model(weights, residuals, dim, lag, "adam")


def predict(model, history: Sequence[Command], period_ms: float | None = None) -> Command:
    """One-step forecast from the most recent commands.

    history is ordered oldest-to-newest and may mix original and forecast
    commands (closed-loop use). The result carries forecast provenance and a
    generation time one period after the last history entry. Besides VarModel
    and MaModel, any object exposing predict_next(history, period_ms) works,
    which is how plug-in forecasters and test oracles are wired in.
    """
    if not history:
        raise InsufficientHistory("history is empty")
    if period_ms is None:
        if len(history) < 2:
            raise ConfigError("period_ms is required when history has a single entry")
        period_us = history[-1].gen_time_us - history[-2].gen_time_us
    else:
        period_us = ms_to_us(period_ms)

    if hasattr(model, "predict_next"):
        return model.predict_next(history, period_us / 1000.0)

    if isinstance(model, VarModel):
        need = model.lag
    elif isinstance(model, MaModel):
        need = model.window
    else:
        raise ConfigError(f"unsupported model type {type(model).__name__}")
    if len(history) < need:
        raise InsufficientHistory(f"need {need} past commands, have {len(history)}")
    last = history[-1]
    if last.dim != model.dim:
        raise ConfigError(f"model dim {model.dim} does not match command dim {last.dim}")

    if isinstance(model, VarModel):
        if model.lag:
            recent = np.concatenate([history[-i].joints for i in range(1, model.lag + 1)])
            joints = model.bias + model.stacked @ recent
        else:
            joints = model.bias
    else:
        block = np.array([c.joints for c in history[-model.window:]])
        joints = block.mean(axis=0)

    return Command(
        seq=last.seq + 1,
        joints=tuple(float(x) for x in joints),
        gen_time_us=last.gen_time_us + period_us,
        provenance=Provenance.FORECAST,
    )


def one_step_residuals(model: VarModel, data: Trace, start: int | None = None) -> np.ndarray:
    """Open-loop one-step prediction errors of the model over a trace."""
    if model.dim != data.dim:
        raise ConfigError(f"model dim {model.dim} != trace dim {data.dim}")
    if len(data) <= model.lag:
        raise InsufficientData(f"trace length {len(data)} must exceed lag {model.lag}")
    x, y = lagged_design(data.joints_matrix(), model.lag, start)
    pred = model.bias + x[:, 1:] @ model.stacked.T
    return y - pred


def aic(model: VarModel, data: Trace, start: int | None = None) -> float:
    """Information criterion 2*p - logL over one-step residuals.

    p counts d^2 per lag; logL is the Gaussian log-likelihood of the residuals
    under the model's training residual covariance. start pins the first
    target index so that models of different orders can share an evaluation
    window.
    """
    resid = one_step_residuals(model, data, start)
    n, d = resid.shape
    # A numerically perfect fit leaves a covariance at float-noise scale; the
    # likelihood then blows up instead of meaning anything.
    data_scale = float(np.max(np.var(data.joints_matrix(), axis=0))) or 1.0
    if float(np.max(np.diag(model.residual_cov))) < 1e-24 * data_scale:
        raise DegenerateCovariance(
            "residual covariance is at floating-point noise level; the Gaussian "
            "likelihood is unbounded (perfect fit on noiseless data)"
        )
    try:
        chol = np.linalg.cholesky(model.residual_cov)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovariance(
            "residual covariance is singular; the Gaussian likelihood is undefined"
        ) from exc
    # Solve L z = e^T once for the whole block; quad form = sum z^2.
    z = np.linalg.solve(chol, resid.T)
    quad = float(np.sum(z * z))
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    loglik = -0.5 * n * d * math.log(2.0 * math.pi) - 0.5 * n * logdet - 0.5 * quad
    return 2.0 * model.n_params - loglik


def likelihood_ratio(aic_l: float, aic_l_plus_1: float, dim: int) -> float:
    """Likelihood improvement implied by two criterion values one lag apart.

    Computes exp((aic_l - aic_l_plus_1)/2 + dim^2). A zero criterion
    difference therefore maps to exp(dim^2), the pure parameter penalty.
    Ratios overflow float range easily; those return +inf with a warning.
    """
    exponent = (aic_l - aic_l_plus_1) / 2.0 + dim * dim
    try:
        return math.exp(exponent)
    except OverflowError:
        warnings.warn(
            f"likelihood ratio exponent {exponent:.1f} overflows float range; returning inf",
            RuntimeWarning,
            stacklevel=2,
        )
        return math.inf


def select_lag(train: Trace, max_lag: int) -> tuple[int, list[float]]:
    """Fit lags 1..max_lag and pick the criterion minimizer (ties: smaller lag).

    All candidates are scored on the shared target window starting at max_lag
    so their likelihoods are computed over identical rows.
    """
    if max_lag < 1:
        raise ConfigError(f"max_lag must be >= 1, got {max_lag}")
    curve = []
    for lag in range(1, max_lag + 1):
        model = fit_var_ols(train, lag)
        curve.append(aic(model, train, start=max_lag))
    best = 1 + int(np.argmin(curve))
    return best, curve


# ---------------------------------------------------------------------------
# Model persistence: a flat JSON document that round-trips exactly (floats are
# serialized with Python repr, which is shortest-round-trip).

def model_to_dict(model: VarModel) -> dict:
    return {
        "dim": model.dim,
        "lag": model.lag,
        "bias": [float(b) for b in model.bias],
        "coeffs": [float(c) for c in model.coeffs.ravel()],
        "residual_cov": [float(c) for c in model.residual_cov.ravel()],
        "trainer": model.trainer,
        "trained_at": model.trained_at,
    }


def model_from_dict(doc: dict) -> VarModel:
    dim = int(doc["dim"])
    lag = int(doc["lag"])
    return VarModel(
        dim=dim,
        lag=lag,
        bias=np.array(doc["bias"], dtype=float),
        coeffs=np.array(doc["coeffs"], dtype=float).reshape(lag, dim, dim),
        residual_cov=np.array(doc["residual_cov"], dtype=float).reshape(dim, dim),
        trainer=doc.get("trainer", "ols"),
        trained_at=doc.get("trained_at"),
    )


def save_model(model: VarModel, path: str | Path, trained_at: str | None = None) -> None:
    if trained_at is not None:
        model = replace(model, trained_at=trained_at)
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path: str | Path) -> VarModel:
    return model_from_dict(json.loads(Path(path).read_text()))
