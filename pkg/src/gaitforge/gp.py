"""Gaussian-process regression with an ARD squared-exponential kernel.

This is the surrogate model behind every optimizer in the package.  Inputs
are normalized to the unit cube, outputs standardized to zero mean / unit
variance; hyperparameters are tuned by maximizing the log marginal
likelihood with a derivative-free coordinate ascent in log space, restarted
from several random initializations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

LOG_2PI = math.log(2.0 * math.pi)

#: hyperparameter bounds (inputs on the unit cube, outputs standardized)
LENGTHSCALE_BOUNDS = (1e-2, 10.0)
SIGNAL_VARIANCE_BOUNDS = (1e-3, 10.0)
NOISE_VARIANCE_BOUNDS = (1e-8, 1.0)
NOISE_FLOOR = 1e-8

DEFAULT_RESTARTS = 5
#: largest diagonal jitter tried before a fit is declared failed
MAX_JITTER = 1e-4
#: duplicate inputs closer than this (unit cube) are merged before fitting
DUPLICATE_TOL = 1e-12


class GpFitError(RuntimeError):
    """Gram matrix stayed non-positive-definite after jitter escalation."""


@dataclass(frozen=True)
class KernelHyperparams:
    lengthscales: np.ndarray  # (d,)
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(ls <= 0.0):
            raise ValueError("lengthscales must be positive")
        if self.signal_variance <= 0.0:
            raise ValueError("signal variance must be positive")
        if self.noise_variance < NOISE_FLOOR:
            raise ValueError(f"noise variance must be >= {NOISE_FLOOR}")
        object.__setattr__(self, "lengthscales", ls)

    def to_vector(self) -> np.ndarray:
        """Log-space vector [log ls_1..d, log sf2, log sn2]."""
        return np.log(
            np.concatenate(
                [self.lengthscales, [self.signal_variance, self.noise_variance]]
            )
        )

    @staticmethod
    def from_vector(v: np.ndarray) -> "KernelHyperparams":
        v = np.exp(np.asarray(v, dtype=float))
        # exp(log(floor)) can round a hair below the floor
        return KernelHyperparams(v[:-2], float(v[-2]), max(float(v[-1]), NOISE_FLOOR))


class Dataset:
    """Training data with retained, invertible normalization transforms.

    Inputs are mapped to the unit cube using explicit per-dimension bounds
    (by default the data's min/max); outputs are standardized using their
    sample mean and standard deviation.
    """

    def __init__(self, inputs, outputs, bounds=None):
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(outputs, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError("inputs and outputs must have the same length")
        if bounds is None:
            lo, hi = X.min(axis=0), X.max(axis=0)
        else:
            lo = np.asarray([b[0] for b in bounds], dtype=float)
            hi = np.asarray([b[1] for b in bounds], dtype=float)
        span = hi - lo
        span = np.where(span > 0.0, span, 1.0)
        self.lo, self.hi, self.span = lo, hi, span
        self.X = X
        self.y = y
        self.y_mean = float(np.mean(y)) if y.size else 0.0
        std = float(np.std(y)) if y.size else 1.0
        self.y_std = std if std > 0.0 else 1.0
        self._merge_duplicates()

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def normalize_inputs(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d:
            raise ValueError(f"expected {self.d}-dimensional inputs, got {X.shape[1]}")
        return (X - self.lo) / self.span

    def standardize(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def destandardize(self, y_std) -> np.ndarray:
        return np.asarray(y_std, dtype=float) * self.y_std + self.y_mean

    @property
    def X_unit(self) -> np.ndarray:
        return self.normalize_inputs(self.X)

    @property
    def y_standardized(self) -> np.ndarray:
        return self.standardize(self.y)

    def _merge_duplicates(self) -> None:
        # inputs closer than DUPLICATE_TOL in the unit cube are noise-merged
        # (replaced by one point with the mean output)
        Xu = self.normalize_inputs(self.X)
        n = Xu.shape[0]
        if n < 2:
            return
        keep: list[int] = []
        groups: dict[int, list[int]] = {}
        for i in range(n):
            assigned = False
            for k in keep:
                if np.max(np.abs(Xu[i] - Xu[k])) < DUPLICATE_TOL:
                    groups[k].append(i)
                    assigned = True
                    break
            if not assigned:
                keep.append(i)
                groups[i] = [i]
        if len(keep) == n:
            return
        self.X = np.stack([self.X[k] for k in keep])
        self.y = np.array([np.mean(self.y[groups[k]]) for k in keep])


def kernel_matrix(hp: KernelHyperparams, A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """ARD squared-exponential kernel between unit-cube input sets."""
    if B is None:
        B = A
    diff = A[:, None, :] - B[None, :, :]
    sq = np.sum((diff / hp.lengthscales) ** 2, axis=-1)
    return hp.signal_variance * np.exp(-0.5 * sq)


def _cholesky_with_jitter(K: np.ndarray):
    """cho_factor with escalating diagonal jitter up to MAX_JITTER."""
    jitter = 0.0
    n = K.shape[0]
    while True:
        try:
            return cho_factor(K + jitter * np.eye(n), lower=True), jitter
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > MAX_JITTER:
                raise GpFitError(
                    f"Gram matrix not positive definite (jitter > {MAX_JITTER})"
                ) from None


def log_marginal_likelihood(dataset: Dataset, hp: KernelHyperparams) -> float:
    """Exact log marginal likelihood of the standardized data."""
    Xu = dataset.X_unit
    ys = dataset.y_standardized
    K = kernel_matrix(hp, Xu)
    K[np.diag_indices_from(K)] += hp.noise_variance
    (L, lower), _ = _cholesky_with_jitter(K)
    alpha = cho_solve((L, lower), ys)
    return float(
        -0.5 * ys @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * dataset.n * LOG_2PI
    )


class GpModel:
    """Fitted GP: dataset, hyperparameters, cached Cholesky factorization.

    Immutable once built; predict() is safe to call concurrently.
    """

    def __init__(self, dataset: Dataset, hp: KernelHyperparams):
        if hp.lengthscales.shape[0] != dataset.d:
            raise ValueError("hyperparameter dimension mismatch")
        self.dataset = dataset
        self.hp = hp
        Xu = dataset.X_unit
        K = kernel_matrix(hp, Xu)
        K[np.diag_indices_from(K)] += hp.noise_variance
        (self._L, self._lower), self.jitter = _cholesky_with_jitter(K)
        self._alpha = cho_solve((self._L, self._lower), dataset.y_standardized)
        self.log_likelihood = float(
            -0.5 * dataset.y_standardized @ self._alpha
            - np.sum(np.log(np.diag(self._L)))
            - 0.5 * dataset.n * LOG_2PI
        )

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and (latent) variance in original output units.

        Accepts a single point (d,) or a batch (m, d); returns arrays of
        shape (m,).  Variance is clipped at zero.
        """
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        Xq = self.dataset.normalize_inputs(X)
        Ks = kernel_matrix(self.hp, Xq, self.dataset.X_unit)
        mean_std = Ks @ self._alpha
        v = cho_solve((self._L, self._lower), Ks.T)
        var_std = self.hp.signal_variance - np.einsum("ij,ji->i", Ks, v)
        var_std = np.maximum(var_std, 0.0)
        mean = self.dataset.destandardize(mean_std)
        var = var_std * self.dataset.y_std**2
        if single:
            return mean[0], var[0]
        return mean, var

    def to_json(self) -> str:
        doc = {
            "lengthscales": self.hp.lengthscales.tolist(),
            "signal_variance": self.hp.signal_variance,
            "noise_variance": self.hp.noise_variance,
            "input_lo": self.dataset.lo.tolist(),
            "input_hi": self.dataset.hi.tolist(),
            "y_mean": self.dataset.y_mean,
            "y_std": self.dataset.y_std,
            "inputs": self.dataset.X.tolist(),
            "outputs": self.dataset.y.tolist(),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "GpModel":
        doc = json.loads(text)
        bounds = list(zip(doc["input_lo"], doc["input_hi"]))
        ds = Dataset(doc["inputs"], doc["outputs"], bounds=bounds)
        hp = KernelHyperparams(
            np.asarray(doc["lengthscales"]),
            doc["signal_variance"],
            doc["noise_variance"],
        )
        return GpModel(ds, hp)


def _hp_bounds_log(d: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.log(
        np.concatenate(
            [
                np.full(d, LENGTHSCALE_BOUNDS[0]),
                [SIGNAL_VARIANCE_BOUNDS[0], NOISE_VARIANCE_BOUNDS[0]],
            ]
        )
    )
    hi = np.log(
        np.concatenate(
            [
                np.full(d, LENGTHSCALE_BOUNDS[1]),
                [SIGNAL_VARIANCE_BOUNDS[1], NOISE_VARIANCE_BOUNDS[1]],
            ]
        )
    )
    return lo, hi


def _coordinate_ascent(objective, v0, lo, hi, max_passes=25):
    """Greedy per-coordinate ascent with a halving step."""
    v = np.clip(v0, lo, hi)
    best = objective(v)
    step = 0.5
    passes = 0
    while step >= 2e-3 and passes < max_passes:
        improved = False
        for k in range(v.size):
            for sign in (1.0, -1.0):
                cand = v.copy()
                cand[k] = np.clip(cand[k] + sign * step, lo[k], hi[k])
                if cand[k] == v[k]:
                    continue
                val = objective(cand)
                if val > best + 1e-12:
                    v, best = cand, val
                    improved = True
        passes += 1
        if not improved:
            step *= 0.5
    return v, best


def _polish_one_percent(objective, v, best, lo, hi, max_rounds=40):
    """Hill-climb with exactly +/-1% steps until none improves, making the
    result a local maximum under 1% perturbation of each hyperparameter."""
    one_pct = math.log(1.01)
    for _ in range(max_rounds):
        improved = False
        for k in range(v.size):
            for sign in (1.0, -1.0):
                cand = v.copy()
                cand[k] = np.clip(cand[k] + sign * one_pct, lo[k], hi[k])
                if cand[k] == v[k]:
                    continue
                val = objective(cand)
                if val > best + 1e-12:
                    v, best = cand, val
                    improved = True
        if not improved:
            break
    return v, best


#: weak log-normal MAP prior on the log hyperparameters.  Without it the
#: likelihood has a degenerate ridge (lengthscale -> 0 with zero noise
#: mimics any i.i.d.-noise explanation); the prior breaks the tie toward
#: moderate lengthscales so noise is attributed to the noise term.
PRIOR_LOG_LENGTHSCALE = (math.log(0.3), 1.0)  # (mean, std)
PRIOR_LOG_SIGNAL_VARIANCE = (0.0, 2.0)


def _log_prior(v: np.ndarray) -> float:
    mu_l, sd_l = PRIOR_LOG_LENGTHSCALE
    mu_f, sd_f = PRIOR_LOG_SIGNAL_VARIANCE
    p = -0.5 * float(np.sum(((v[:-2] - mu_l) / sd_l) ** 2))
    p += -0.5 * ((v[-2] - mu_f) / sd_f) ** 2
    return p  # noise variance: flat within bounds


class _FastFitObjective:
    """Regularized fit objective with the pairwise geometry precomputed.

    Coordinate ascent evaluates the likelihood thousands of times per fit;
    caching the per-dimension squared differences keeps each evaluation at
    one small Cholesky.
    """

    def __init__(self, dataset: Dataset):
        Xu = dataset.X_unit
        self.D2 = (Xu[:, None, :] - Xu[None, :, :]) ** 2  # (n, n, d)
        self.ys = dataset.y_standardized
        self.n = dataset.n
        self.eye = np.eye(self.n)

    def __call__(self, v: np.ndarray) -> float:
        d = v.size - 2
        inv_ls2 = np.exp(-2.0 * v[:d])
        sf2 = math.exp(v[d])
        sn2 = max(math.exp(v[d + 1]), NOISE_FLOOR)
        K = sf2 * np.exp(-0.5 * (self.D2 @ inv_ls2))
        K[np.diag_indices_from(K)] += sn2
        try:
            (L, lower), _ = _cholesky_with_jitter(K)
        except GpFitError:
            return -np.inf
        alpha = cho_solve((L, lower), self.ys)
        lml = float(
            -0.5 * self.ys @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * self.n * LOG_2PI
        )
        return lml + _log_prior(v)


def fit_objective(dataset: Dataset, v: np.ndarray) -> float:
    """Regularized fit objective: log marginal likelihood + log prior."""
    try:
        lml = log_marginal_likelihood(dataset, KernelHyperparams.from_vector(v))
    except GpFitError:
        return -np.inf
    return lml + _log_prior(v)


def fit(
    dataset: Dataset,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    warm_start: KernelHyperparams | None = None,
) -> GpModel:
    """Fit hyperparameters by multistart log-space coordinate ascent.

    Requires at least 2 (distinct) points.  A warm start, when given, is
    used as the first initialization alongside `restarts` random ones; the
    model maximizing the (weakly regularized) likelihood wins.
    """
    if dataset.n < 2:
        raise ValueError("need at least 2 training points to fit a GP")
    d = dataset.d
    lo, hi = _hp_bounds_log(d)
    rng = np.random.default_rng(seed)
    objective = _FastFitObjective(dataset)

    inits = []
    if warm_start is not None:
        inits.append(np.clip(warm_start.to_vector(), lo, hi))
    default = np.log(np.concatenate([np.full(d, 0.3), [1.0, 1e-2]]))
    inits.append(np.clip(default, lo, hi))
    for _ in range(restarts):
        inits.append(lo + rng.random(d + 2) * (hi - lo))

    # rank the starts by their initial objective and run the ascent from
    # the most promising few; the rest rarely win and cost as much
    scored = sorted(
        ((objective(v0), i) for i, v0 in enumerate(inits)),
        key=lambda t: -t[0],
    )
    keep = [inits[i] for _, i in scored[: max(3, 1 + (warm_start is not None))]]

    best_v, best_val = None, -np.inf
    for v0 in keep:
        v, val = _coordinate_ascent(objective, v0, lo, hi)
        if val > best_val:
            best_v, best_val = v, val
    if best_v is None or not np.isfinite(best_val):
        raise GpFitError("no hyperparameter setting produced a valid fit")
    best_v, best_val = _polish_one_percent(objective, best_v, best_val, lo, hi)
    return GpModel(dataset, KernelHyperparams.from_vector(best_v))


def loo_predictions(model: GpModel) -> np.ndarray:
    """Leave-one-out posterior means at the training inputs (original units).

    Uses the closed form mu_i = y_i - [K^-1 y]_i / [K^-1]_ii with the
    model's fitted hyperparameters.
    """
    n = model.dataset.n
    Kinv = cho_solve((model._L, model._lower), np.eye(n))
    mu_std = model.dataset.y_standardized - model._alpha / np.diag(Kinv)
    return model.dataset.destandardize(mu_std)


def constants() -> dict:
    return {
        "lengthscale_bounds": list(LENGTHSCALE_BOUNDS),
        "signal_variance_bounds": list(SIGNAL_VARIANCE_BOUNDS),
        "noise_variance_bounds": list(NOISE_VARIANCE_BOUNDS),
        "noise_floor": NOISE_FLOOR,
        "default_restarts": DEFAULT_RESTARTS,
        "max_jitter": MAX_JITTER,
        "duplicate_tol": DUPLICATE_TOL,
    }
