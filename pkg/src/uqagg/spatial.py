"""Spatial structure measures and the spatial-mass-ratio reductions.

Each measure scans a 3x3 window over the map (edge-replicated by one pixel so
border windows are full) and produces a per-pixel weight in [0, 1]:

* ``moran``    windowed Moran's I under queen (8-neighbour) adjacency,
               clamped to [0, 1]; constant windows score 1
* ``eds``      fraction of the nine window pixels whose Sobel gradient
               magnitude exceeds a threshold (unit step -> magnitude 1)
* ``entropy``  Shannon entropy of the window values over equal-width bins
               on [0, 1], normalized by ln(bins)

The weight map splits the uncertainty mass into a structured part U * W and an
unstructured part U * (1 - W); the scalar reduction is the mass fraction
sum(U * W) / sum(U).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import UncertaintyMap, validate_map
from .errors import InvalidParam, ShapeMismatch

DEFAULT_EDGE_TAU = 0.2
DEFAULT_ENTROPY_BINS = 4

_MEASURES = ("moran", "eds", "entropy")

# Queen adjacency inside a flattened 3x3 window: all index pairs at Chebyshev
# distance 1. 20 unordered pairs, so the total adjacency weight S0 is 40.
_PAIRS = np.array(
    [
        (a, b)
        for a in range(9)
        for b in range(a + 1, 9)
        if max(abs(a // 3 - b // 3), abs(a % 3 - b % 3)) == 1
    ]
)
_S0 = 2 * len(_PAIRS)


@dataclass(frozen=True, eq=False)
class WeightMap:
    """Per-pixel spatial weights in [0, 1] plus the measure that made them."""

    weights: np.ndarray
    measure: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.weights, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeMismatch(f"weight map must be 2-D, got ndim={arr.ndim}")
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise InvalidParam("spatial weights must be finite values in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "weights", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


def _windows9(padded: np.ndarray) -> np.ndarray:
    m, n = padded.shape
    return sliding_window_view(padded, (3, 3)).reshape(m - 2, n - 2, 9)


def _moran_weights(vals: np.ndarray) -> np.ndarray:
    w = _windows9(np.pad(vals, 1, mode="edge"))
    z = w - w.mean(axis=-1, keepdims=True)
    denom = (z * z).sum(axis=-1)
    num = 2.0 * (z[..., _PAIRS[:, 0]] * z[..., _PAIRS[:, 1]]).sum(axis=-1)
    # Exactly constant windows get weight 1 by convention; the equality test
    # avoids trusting a float variance near zero.
    constant = (w == w[..., :1]).all(axis=-1)
    safe = np.where(denom > 0.0, denom, 1.0)
    moran = (9.0 / _S0) * num / safe
    moran = np.where(constant | (denom <= 0.0), 1.0, moran)
    return np.clip(moran, 0.0, 1.0)


def _sobel_magnitude(padded: np.ndarray) -> np.ndarray:
    # 3x3 Sobel scaled by 1/4 so a unit step yields gradient magnitude 1.
    p = padded
    gx = (
        (p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2])
    ) / 4.0
    gy = (
        (p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:])
    ) / 4.0
    return np.hypot(gx, gy)


def _eds_weights(vals: np.ndarray, tau: float) -> np.ndarray:
    if not (0.0 < tau < 1.0):
        raise InvalidParam(f"edge threshold must lie in (0, 1), got {tau!r}")
    # Two replicate rings: the outer one feeds the Sobel pass so gradients
    # exist on the ring the window sweep sees.
    grad = _sobel_magnitude(np.pad(vals, 2, mode="edge"))
    edges = (grad > tau).astype(np.float64)
    return _windows9(edges).mean(axis=-1)


def _entropy_weights(vals: np.ndarray, bins: int) -> np.ndarray:
    if not isinstance(bins, (int, np.integer)) or bins < 2:
        raise InvalidParam(f"bin count must be an integer >= 2, got {bins!r}")
    w = _windows9(np.pad(vals, 1, mode="edge"))
    # Equal-width bins on [0, 1], half-open except the last one.
    idx = np.minimum((w * bins).astype(np.int64), bins - 1)
    probs = np.stack([(idx == b).mean(axis=-1) for b in range(bins)], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    ent = -terms.sum(axis=-1) / np.log(bins)
    return np.clip(ent, 0.0, 1.0)


def spatial_weight_map(u, measure: str, *, tau: float = DEFAULT_EDGE_TAU,
                       bins: int = DEFAULT_ENTROPY_BINS) -> WeightMap:
    """Compute the per-pixel weight map for one spatial measure."""
    vals = validate_map(u).values
    if measure == "moran":
        return WeightMap(_moran_weights(vals), measure)
    if measure == "eds":
        return WeightMap(_eds_weights(vals, tau), measure, {"tau": tau})
    if measure == "entropy":
        return WeightMap(_entropy_weights(vals, bins), measure, {"bins": bins})
    raise InvalidParam(f"unknown spatial measure {measure!r}; pick from {_MEASURES}")


def spatial_decompose(u, w: WeightMap) -> tuple[UncertaintyMap, UncertaintyMap]:
    """Split the map into structured (U * W) and residual (U * (1 - W)) parts."""
    u = validate_map(u)
    if u.shape != w.shape:
        raise ShapeMismatch(f"map {u.shape} vs weight map {w.shape}")
    high = UncertaintyMap(u.values * w.weights)
    low = UncertaintyMap(u.values * (1.0 - w.weights))
    return high, low


def smr(u, w: WeightMap) -> float:
    """Fraction of the uncertainty mass that falls on high-weight pixels.

    Defined as sum(U * W) / sum(U) in [0, 1]. An all-zero map has no mass to
    apportion; the ratio is defined as 0.0 and a RuntimeWarning is emitted.
    """
    u = validate_map(u)
    if u.shape != w.shape:
        raise ShapeMismatch(f"map {u.shape} vs weight map {w.shape}")
    total = float(u.values.sum())
    if total == 0.0:
        warnings.warn(
            "spatial mass ratio of an all-zero map is defined as 0.0",
            RuntimeWarning,
            stacklevel=2,
        )
        return 0.0
    return float((u.values * w.weights).sum() / total)


def mor(u) -> float:
    """Mass fraction on positively autocorrelated pixels (windowed Moran's I)."""
    return smr(u, spatial_weight_map(u, "moran"))


def eds(u, tau: float = DEFAULT_EDGE_TAU) -> float:
    """Mass fraction on edge-dense pixels (Sobel magnitude above ``tau``)."""
    return smr(u, spatial_weight_map(u, "eds", tau=tau))


def ent(u, bins: int = DEFAULT_ENTROPY_BINS) -> float:
    """Mass fraction on locally heterogeneous pixels (windowed entropy)."""
    return smr(u, spatial_weight_map(u, "entropy", bins=bins))
