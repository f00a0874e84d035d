"""Mixture-model meta-aggregation of feature vectors.

A bank of aggregation strategies turns each uncertainty map into a feature
vector in [0, 1]^d. This module fits a full-covariance Gaussian mixture to the
feature vectors of a reference (in-distribution) population and scores new
samples by negative log-likelihood: the farther a feature vector falls from
the reference density, the larger the score.

Preprocessing is part of the model: features are first pulled away from the
interval edges by an affine epsilon-rescale, then standardized with the
population mean and standard deviation recorded at fit time. The number of
components is selected by BIC over K = 1..K_max. Fitting is deterministic
given (data, seed, K_max, EM parameters).
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import FeatureMatrix, FeatureVector
from .errors import (
    EmptyFeatureSet,
    FeatureMismatch,
    InvalidEpsilon,
    InvalidParam,
    NonFinite,
    OutOfRange,
    ParseError,
    SingularCovariance,
    TooFewSamples,
)
from .rng import stream
from .strategies import FULL_SET, INTENSITY_SET, SPATIAL_SET, parse_strategy

DEFAULT_EPSILON = 1e-3
DEFAULT_K_MAX = 10
DEFAULT_RESTARTS = 5
DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-6
DEFAULT_RIDGE = 1e-6

# Slack for the per-iteration monotonicity check of the EM log-likelihood.
_MONOTONE_SLACK = 1e-8

_MODEL_VERSION = "1"
_LANE_RESTART = 11


@dataclass(frozen=True)
class FeatureSetSpec:
    """Named selection of strategy identifiers, in canonical order."""

    variant: str
    strategies: tuple[str, ...]

    def __post_init__(self):
        strategies = tuple(self.strategies)
        if not strategies:
            raise EmptyFeatureSet("feature set needs at least one strategy")
        for s in strategies:
            if s.startswith("gmm:"):
                raise InvalidParam("mixture scores cannot feed another mixture")
            parse_strategy(s)
        object.__setattr__(self, "strategies", strategies)

    @classmethod
    def all(cls) -> "FeatureSetSpec":
        return cls("all", FULL_SET)

    @classmethod
    def intensity_only(cls) -> "FeatureSetSpec":
        return cls("int", INTENSITY_SET)

    @classmethod
    def spatial_only(cls) -> "FeatureSetSpec":
        return cls("spa", SPATIAL_SET)

    @classmethod
    def custom(cls, strategies: Sequence[str]) -> "FeatureSetSpec":
        return cls("custom", tuple(strategies))


def epsilon_rescale(values, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Shrink [0, 1] features into [epsilon, 1 - epsilon].

    Applies f -> (1 - 2*epsilon) * (f - 0.5) + 0.5 so boundary values cannot
    pin a mixture component onto a degenerate edge.
    """
    if not (0.0 < epsilon < 0.5):
        raise InvalidEpsilon(f"epsilon must lie in (0, 0.5), got {epsilon!r}")
    arr = np.asarray(values, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NonFinite("features contain NaN or infinity")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise OutOfRange("features must lie in [0, 1] before rescaling")
    return (1.0 - 2.0 * epsilon) * (arr - 0.5) + 0.5


def standardize_fit(values) -> tuple[np.ndarray, np.ndarray]:
    """Column means and population standard deviations (divisor n).

    Zero-variance columns get standard deviation 1 so they pass through
    unscaled; a degenerate-feature warning is emitted for them.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise FeatureMismatch(f"expected a 2-D matrix, got ndim={arr.ndim}")
    if arr.shape[0] < 2:
        raise TooFewSamples(f"standardization needs n >= 2, got {arr.shape[0]}")
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    degenerate = std == 0.0
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} feature column(s) are constant; "
            "leaving them unscaled",
            RuntimeWarning,
            stacklevel=2,
        )
        std = np.where(degenerate, 1.0, std)
    return mean, std


def standardize_apply(values, mean, std) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - mean) / std


@dataclass(frozen=True, eq=False)
class EmResult:
    """Parameters and diagnostics of one EM fit at fixed K."""

    weights: np.ndarray        # (K,)
    means: np.ndarray          # (K, d)
    covariances: np.ndarray    # (K, d, d)
    loglik: float              # total log-likelihood of the training data
    history: tuple[float, ...] # per-iteration log-likelihood, non-decreasing
    n_iter: int
    converged: bool


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise SingularCovariance(
            "covariance not positive definite; use a positive ridge"
        ) from None
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    solved = np.linalg.solve(chol, (x - mean).T)
    maha = (solved * solved).sum(axis=0)
    return -0.5 * (d * math.log(2.0 * math.pi) + logdet + maha)


def _log_components(x, weights, means, covs) -> np.ndarray:
    cols = []
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    for j in range(len(weights)):
        if weights[j] <= 0.0:
            cols.append(np.full(x.shape[0], -np.inf))
        else:
            cols.append(logw[j] + _log_gauss(x, means[j], covs[j]))
    return np.stack(cols, axis=1)


def _logsumexp_rows(logp: np.ndarray) -> np.ndarray:
    m = logp.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(logp - m).sum(axis=1, keepdims=True)))[:, 0]


def _kmeanspp_means(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(1, k):
        d2 = np.min(
            ((x[:, None, :] - x[chosen][None, :, :]) ** 2).sum(axis=2), axis=1
        )
        total = d2.sum()
        if total <= 0.0:
            chosen.append(int(rng.integers(n)))
            continue
        r = rng.random() * total
        chosen.append(int(np.searchsorted(np.cumsum(d2), r)))
    return x[chosen].copy()


def _em_once(x, k, rng, max_iter, tol, ridge) -> EmResult:
    n, d = x.shape
    eye = np.eye(d)
    base_cov = np.cov(x, rowvar=False, ddof=0).reshape(d, d) + ridge * eye
    means = _kmeanspp_means(x, k, rng)
    covs = np.repeat(base_cov[None, :, :], k, axis=0)
    weights = np.full(k, 1.0 / k)

    history: list[float] = []
    prev = None
    converged = False
    snapshot = (weights.copy(), means.copy(), covs.copy())

    def decreased(ll):
        return history and ll < history[-1] - _MONOTONE_SLACK * max(
            1.0, abs(history[-1])
        )

    for _ in range(max_iter):
        logp = _log_components(x, weights, means, covs)
        lse = _logsumexp_rows(logp)
        ll = float(lse.sum())
        if decreased(ll):
            # The diagonal loading makes the M-step inexact, so a collapsed
            # component can push the log-likelihood down. Keep the peak.
            weights, means, covs = snapshot
            ll = history[-1]
            break
        history.append(ll)
        if prev is not None and abs(ll - prev) < tol * max(1.0, abs(ll)):
            converged = True
            break
        prev = ll

        snapshot = (weights.copy(), means.copy(), covs.copy())
        resp = np.exp(logp - lse[:, None])
        nk = resp.sum(axis=0)
        weights = nk / n
        # Components that captured no mass keep their previous parameters;
        # with zero weight they no longer influence the likelihood.
        for j in range(k):
            if nk[j] <= 1e-12:
                continue
            mu = resp[:, j] @ x / nk[j]
            diff = x - mu
            cov = (resp[:, j, None] * diff).T @ diff / nk[j] + ridge * eye
            means[j] = mu
            covs[j] = cov
    else:
        logp = _log_components(x, weights, means, covs)
        ll = float(_logsumexp_rows(logp).sum())
        if decreased(ll):
            weights, means, covs = snapshot
            ll = history[-1]
        else:
            history.append(ll)

    return EmResult(weights, means, covs, ll, tuple(history), len(history), converged)


def em_fit(values, k: int, *, seed: int = 0, restarts: int = DEFAULT_RESTARTS,
           max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
           ridge: float = DEFAULT_RIDGE) -> EmResult:
    """Fit a K-component full-covariance Gaussian mixture by EM.

    Runs ``restarts`` independent fits seeded from (seed, restart index) with
    k-means++-style initial means and returns the one with the highest final
    log-likelihood (earliest restart wins ties). The per-iteration
    log-likelihood is checked to be non-decreasing up to a small slack.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise FeatureMismatch(f"expected an (n, d) matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise NonFinite("training data contains NaN or infinity")
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidParam(f"component count must be a positive integer, got {k!r}")
    if x.shape[0] < k:
        raise TooFewSamples(f"{x.shape[0]} samples cannot support K={k}")
    if restarts < 1 or max_iter < 1 or tol <= 0.0 or ridge < 0.0:
        raise InvalidParam("restarts >= 1, max_iter >= 1, tol > 0, ridge >= 0")

    best = None
    for r in range(restarts):
        result = _em_once(x, k, stream(seed, _LANE_RESTART, r), max_iter, tol, ridge)
        if best is None or result.loglik > best.loglik:
            best = result
    return best


def bic(loglik: float, k: int, d: int, n: int) -> float:
    """Bayesian information criterion: p*ln(n) - 2*loglik.

    p counts free parameters of a K-component full-covariance mixture over d
    dimensions: (K - 1) mixing weights, K*d means, K*d*(d+1)/2 covariances.
    """
    if k < 1 or d < 1 or n < 1:
        raise InvalidParam("bic needs k >= 1, d >= 1, n >= 1")
    p = (k - 1) + k * d + k * (d * (d + 1)) // 2
    return p * math.log(n) - 2.0 * loglik


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Fitted mixture plus the preprocessing recorded at fit time."""

    feature_spec: FeatureSetSpec
    epsilon: float
    feat_mean: np.ndarray      # (d,)
    feat_std: np.ndarray       # (d,)
    weights: np.ndarray        # (K,)
    means: np.ndarray          # (K, d)
    covariances: np.ndarray    # (K, d, d)
    seed: int
    n_train: int
    bic: float
    loglik: float

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return len(self.feat_mean)


def fit_meta(features, spec: FeatureSetSpec, *, k_max: int = DEFAULT_K_MAX,
             seed: int = 0, epsilon: float = DEFAULT_EPSILON,
             restarts: int = DEFAULT_RESTARTS, max_iter: int = DEFAULT_MAX_ITER,
             tol: float = DEFAULT_TOL, ridge: float = DEFAULT_RIDGE) -> GmmModel:
    """Fit the meta-aggregator on reference feature vectors.

    ``features`` is a FeatureMatrix (columns matched to ``spec`` by name) or a
    plain (n, d) array already in spec order, with values in [0, 1]. Candidate
    mixtures with K = 1..K_max components are fitted and the lowest BIC wins
    (smallest K on ties).
    """
    x = _match_matrix(features, spec)
    if x.shape[0] < 2:
        raise TooFewSamples(f"need at least 2 training samples, got {x.shape[0]}")
    if k_max < 1:
        raise InvalidParam(f"k_max must be >= 1, got {k_max}")

    rescaled = epsilon_rescale(x, epsilon)
    mean, std = standardize_fit(rescaled)
    z = standardize_apply(rescaled, mean, std)

    n, d = z.shape
    best = None
    for k in range(1, min(k_max, n) + 1):
        result = em_fit(z, k, seed=seed, restarts=restarts, max_iter=max_iter,
                        tol=tol, ridge=ridge)
        score = bic(result.loglik, k, d, n)
        if best is None or score < best[0]:
            best = (score, result)
    score, result = best
    return GmmModel(
        feature_spec=spec,
        epsilon=float(epsilon),
        feat_mean=mean,
        feat_std=std,
        weights=result.weights,
        means=result.means,
        covariances=result.covariances,
        seed=int(seed),
        n_train=int(n),
        bic=float(score),
        loglik=float(result.loglik),
    )


def _match_matrix(features, spec: FeatureSetSpec) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        missing = [s for s in spec.strategies if s not in features.names]
        if missing:
            raise FeatureMismatch(f"feature matrix lacks columns {missing}")
        return features.select(spec.strategies).values
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != len(spec.strategies):
        raise FeatureMismatch(
            f"expected shape (n, {len(spec.strategies)}), got {arr.shape}"
        )
    return arr


def _match_vector(model: GmmModel, features) -> np.ndarray:
    spec = model.feature_spec.strategies
    if isinstance(features, FeatureVector):
        if sorted(features.names) != sorted(spec):
            raise FeatureMismatch(
                f"feature names {features.names} do not match model "
                f"features {spec}"
            )
        return np.array([features.get(name) for name in spec])
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != len(spec):
        raise FeatureMismatch(f"expected {len(spec)} features, got shape {arr.shape}")
    return arr


def meta_score(model: GmmModel, features) -> float:
    """Negative log-likelihood of one feature vector under the model.

    Accepts a FeatureVector (columns matched by name, any order) or a plain
    vector already in the model's feature order. Higher scores mean farther
    from the reference population.
    """
    raw = _match_vector(model, features)
    if not np.isfinite(raw).all():
        raise NonFinite("feature vector contains NaN or infinity")
    z = _apply_preproc(model, raw[None, :])
    logp = _log_components(z, model.weights, model.means, model.covariances)
    return float(-_logsumexp_rows(logp)[0])


def meta_score_matrix(model: GmmModel, features) -> np.ndarray:
    """Vectorized :func:`meta_score` over the rows of a feature matrix."""
    x = _match_matrix(features, model.feature_spec)
    if not np.isfinite(x).all():
        raise NonFinite("feature matrix contains NaN or infinity")
    z = _apply_preproc(model, x)
    logp = _log_components(z, model.weights, model.means, model.covariances)
    return -_logsumexp_rows(logp)


def _apply_preproc(model: GmmModel, x: np.ndarray) -> np.ndarray:
    rescaled = (1.0 - 2.0 * model.epsilon) * (x - 0.5) + 0.5
    return standardize_apply(rescaled, model.feat_mean, model.feat_std)


def ablate(features, spec: FeatureSetSpec, *, drop: Sequence[str] = (),
           keep_only: Sequence[str] | None = None, **fit_kwargs) -> GmmModel:
    """Refit the meta-aggregator on a reduced feature set.

    ``drop`` removes identifiers from ``spec``; ``keep_only`` keeps exactly
    the named ones. Identifiers must come from ``spec``; an empty result
    raises EmptyFeatureSet.
    """
    known = set(spec.strategies)
    requested = set(drop) | set(keep_only or ())
    unknown = requested - known
    if unknown:
        raise FeatureMismatch(f"identifiers not in the feature set: {sorted(unknown)}")
    if keep_only is not None:
        kept = [s for s in spec.strategies if s in set(keep_only)]
    else:
        kept = [s for s in spec.strategies if s not in set(drop)]
    if not kept:
        raise EmptyFeatureSet("ablation removed every feature")
    sub = FeatureSetSpec("custom", tuple(kept))
    if isinstance(features, FeatureMatrix):
        return fit_meta(features, sub, **fit_kwargs)
    x = _match_matrix(features, spec)
    idx = [spec.strategies.index(s) for s in kept]
    return fit_meta(x[:, idx], sub, **fit_kwargs)


# ---------------------------------------------------------------------------
# serialization: JSON with floats at 17 significant digits, so byte-for-byte
# round trips hold for save -> load -> save


def _emit(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            raise NonFinite("model fields must be finite for serialization")
        return format(v, ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_emit(v) for v in value) + "]"
    if isinstance(value, np.ndarray):
        return _emit(value.tolist())
    if isinstance(value, dict):
        return (
            "{"
            + ", ".join(f"{json.dumps(str(k))}: {_emit(v)}" for k, v in value.items())
            + "}"
        )
    raise TypeError(f"cannot serialize {type(value).__name__}")


def model_to_json(model: GmmModel) -> str:
    doc = {
        "version": _MODEL_VERSION,
        "feature_spec": {
            "variant": model.feature_spec.variant,
            "strategies": list(model.feature_spec.strategies),
        },
        "epsilon": model.epsilon,
        "feat_mean": model.feat_mean,
        "feat_std": model.feat_std,
        "K": model.k,
        "pi": model.weights,
        "mu": model.means,
        "sigma": model.covariances,
        "seed": model.seed,
        "n_train": model.n_train,
        "bic": model.bic,
        "loglik": model.loglik,
    }
    return _emit(doc) + "\n"


def save_model(model: GmmModel, path) -> None:
    text = model_to_json(model)
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(text)


def model_from_json(text: str) -> GmmModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model JSON is malformed: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("model JSON must be an object")
    if doc.get("version") != _MODEL_VERSION:
        raise ParseError(f"unsupported model version {doc.get('version')!r}")
    try:
        spec = FeatureSetSpec(
            doc["feature_spec"]["variant"],
            tuple(doc["feature_spec"]["strategies"]),
        )
        k = int(doc["K"])
        model = GmmModel(
            feature_spec=spec,
            epsilon=float(doc["epsilon"]),
            feat_mean=np.asarray(doc["feat_mean"], dtype=np.float64),
            feat_std=np.asarray(doc["feat_std"], dtype=np.float64),
            weights=np.asarray(doc["pi"], dtype=np.float64),
            means=np.asarray(doc["mu"], dtype=np.float64),
            covariances=np.asarray(doc["sigma"], dtype=np.float64),
            seed=int(doc["seed"]),
            n_train=int(doc["n_train"]),
            bic=float(doc["bic"]),
            loglik=float(doc["loglik"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"model JSON is missing or mistypes a field: {exc}") from None
    d = model.d
    if model.means.shape != (k, d) or model.covariances.shape != (k, d, d) or (
        model.weights.shape != (k,) or model.feat_std.shape != (d,)
    ):
        raise ParseError("model JSON has inconsistent array shapes")
    return model


def load_model(path) -> GmmModel:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "r", encoding="ascii") as fh:
        return model_from_json(fh.read())
