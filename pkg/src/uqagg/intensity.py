"""Intensity and prediction-based reductions of an uncertainty map.

Prediction-free reductions use only the map values: global mean, best patch
mean, above-threshold average, above-quantile average. Prediction-based
reductions additionally use a segmentation mask: per-class averages combined
with equal or area-proportional weights, and the foreground-sized top fraction
of the whole map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import as_mask, validate_map
from .errors import (
    InvalidParam,
    InvalidQuantile,
    InvalidThreshold,
    NoForeground,
    PatchTooLarge,
    ShapeMismatch,
)

# Counts k = ceil(x) snap down when x sits within this slack of an integer, so
# float artifacts like (1 - 0.6) * 10 = 4.000000000000001 keep the intended k.
_CEIL_SLACK = 1e-9


def _top_k_count(fraction_times_pixels: float, total: int) -> int:
    k = math.ceil(fraction_times_pixels - _CEIL_SLACK)
    return min(max(k, 1), total)


def avg(u) -> float:
    """Global mean of the map."""
    return float(validate_map(u).values.mean())


def plm(u, patch: int) -> float:
    """Largest mean over all patch x patch windows fully inside the map."""
    vals = validate_map(u).values
    if not isinstance(patch, (int, np.integer)) or patch < 1:
        raise InvalidParam(f"patch must be a positive integer, got {patch!r}")
    m, n = vals.shape
    if patch > min(m, n):
        raise PatchTooLarge(f"patch {patch} exceeds map extent {m}x{n}")
    windows = sliding_window_view(vals, (patch, patch))
    return float(windows.mean(axis=(-2, -1)).max())


def ata(u, threshold: float) -> float:
    """Mean of the values strictly above ``threshold``; 0.0 if none qualify."""
    vals = validate_map(u).values
    if not (0.0 <= threshold <= 1.0):
        raise InvalidThreshold(f"threshold must lie in [0, 1], got {threshold!r}")
    above = vals[vals > threshold]
    if above.size == 0:
        return 0.0
    return float(above.mean())


def aqa(u, q: float) -> float:
    """Mean of the top ceil((1 - q) * m * n) values of the map."""
    vals = validate_map(u).values
    if not (0.0 <= q <= 1.0):
        raise InvalidQuantile(f"quantile must lie in [0, 1], got {q!r}")
    total = vals.size
    k = _top_k_count((1.0 - q) * total, total)
    flat = np.sort(vals, axis=None)
    return float(flat[total - k :].mean())


class ClassAverage(NamedTuple):
    alpha: float
    area: int


@dataclass(frozen=True)
class ClassAverages:
    """Mean uncertainty and pixel count per non-background class."""

    per_class: dict[int, ClassAverage]
    background_label: int


def class_averages(u, mask) -> ClassAverages:
    """Per-class mean uncertainty over the mask's non-background classes.

    Raises ShapeMismatch when map and mask shapes differ and NoForeground
    when every pixel carries the background label.
    """
    u = validate_map(u)
    mask = as_mask(mask)
    if u.shape != mask.shape:
        raise ShapeMismatch(f"map {u.shape} vs mask {mask.shape}")
    labels = mask.labels.ravel()
    sums = np.bincount(labels, weights=u.values.ravel())
    counts = np.bincount(labels)
    per_class: dict[int, ClassAverage] = {}
    for c in np.nonzero(counts)[0]:
        if c == mask.background_label:
            continue
        per_class[int(c)] = ClassAverage(float(sums[c] / counts[c]), int(counts[c]))
    if not per_class:
        raise NoForeground("mask contains only background pixels")
    return ClassAverages(per_class, mask.background_label)


def wca(u, mask, weights: Mapping[int, float]) -> float:
    """Weighted combination of per-class averages.

    ``weights`` must cover every non-background class present in the mask and
    sum to 1 within float tolerance.
    """
    stats = class_averages(u, mask)
    missing = set(stats.per_class) - set(weights)
    if missing:
        raise InvalidParam(f"weights missing for classes {sorted(missing)}")
    total = math.fsum(weights[c] for c in stats.per_class)
    if abs(total - 1.0) > 1e-9:
        raise InvalidParam(f"class weights must sum to 1, got {total!r}")
    return float(
        math.fsum(weights[c] * stat.alpha for c, stat in stats.per_class.items())
    )


def bca(u, mask) -> float:
    """Mean of the per-class averages with equal class weights."""
    stats = class_averages(u, mask)
    k = len(stats.per_class)
    return wca(u, mask, {c: 1.0 / k for c in stats.per_class})


def ica(u, mask) -> float:
    """Area-proportional combination of the per-class averages."""
    stats = class_averages(u, mask)
    total_area = sum(stat.area for stat in stats.per_class.values())
    return wca(
        u, mask, {c: stat.area / total_area for c, stat in stats.per_class.items()}
    )


def qfr(u, mask) -> float:
    """Mean of the top k map values where k matches the foreground area.

    The mask fixes only the count: with f foreground pixels out of m*n, the
    reduction averages the top ceil((f / (m*n)) * m*n) values of the whole
    map, foreground or not.
    """
    u = validate_map(u)
    mask = as_mask(mask)
    if u.shape != mask.shape:
        raise ShapeMismatch(f"map {u.shape} vs mask {mask.shape}")
    fg = int(mask.foreground().sum())
    if fg == 0:
        raise NoForeground("mask contains only background pixels")
    total = u.values.size
    k = _top_k_count((fg / total) * total, total)
    flat = np.sort(u.values, axis=None)
    return float(flat[total - k :].mean())
