"""Synthetic uncertainty-map benchmarks with known structure.

Patterns (all values clipped to [0, 1]):

    constant       level
    noise          uniform in [mean - amp, mean + amp]
    blob           disk of ``inside`` on an ``outside`` background
    ring           annulus of ``inside`` between two radii
    checkerboard   alternating ``high``/``low`` tiles of edge ``period``

``gen_benchmark`` builds labeled in-distribution / out-of-distribution
populations with per-sample parameter jitter, optional analytic mean matching,
optional masks, and synthetic risks. A perturbation ladder yields one
population per intensity step; out-of-distribution maps follow per-sample
trajectories interpolating from an in-distribution base toward their pattern,
so scores can be tracked sample-by-sample across steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .core import SegmentationMask, UncertaintyMap
from .errors import InvalidSpec
from .rng import stream

_PATTERN_PARAMS = {
    "constant": {"level"},
    "noise": {"mean", "amp"},
    "blob": {"inside", "outside", "radius", "row", "col"},
    "ring": {"inside", "outside", "radius_inner", "radius_outer", "row", "col"},
    "checkerboard": {"high", "low", "period"},
}

# The parameter that sets a pattern's background level, used by mean matching.
_BACKGROUND_PARAM = {
    "constant": "level",
    "noise": "mean",
    "blob": "outside",
    "ring": "outside",
    "checkerboard": "low",
}

_LANE_IID = 1
_LANE_OOD_BASE = 2
_LANE_OOD_PATTERN = 3
_LANE_RISK = 4


@dataclass(frozen=True)
class SynthSpec:
    """Pattern name, grid size, parameters, and a seed."""

    pattern: str
    size: tuple[int, int]
    params: Mapping[str, float]
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in _PATTERN_PARAMS:
            raise InvalidSpec(
                f"unknown pattern {self.pattern!r}; pick from "
                f"{sorted(_PATTERN_PARAMS)}"
            )
        size = tuple(int(s) for s in self.size)
        if len(size) != 2 or size[0] < 1 or size[1] < 1:
            raise InvalidSpec(f"size must be two positive integers, got {self.size!r}")
        params = dict(self.params)
        allowed = _PATTERN_PARAMS[self.pattern]
        for key, value in params.items():
            base = key[: -len("_jitter")] if key.endswith("_jitter") else key
            if base not in allowed:
                raise InvalidSpec(
                    f"pattern {self.pattern!r} does not take parameter {key!r}"
                )
            if not math.isfinite(float(value)):
                raise InvalidSpec(f"parameter {key!r} must be finite")
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "params", params)

    def param(self, name: str, default=None) -> float:
        if name in self.params:
            return float(self.params[name])
        if default is None:
            raise InvalidSpec(f"pattern {self.pattern!r} needs parameter {name!r}")
        return float(default)


def _disk(size, row, col, radius) -> np.ndarray:
    rr, cc = np.ogrid[: size[0], : size[1]]
    return (rr - row) ** 2 + (cc - col) ** 2 <= radius**2


def _render(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    m, n = spec.size
    if spec.pattern == "constant":
        vals = np.full((m, n), spec.param("level"))
    elif spec.pattern == "noise":
        mean = spec.param("mean")
        amp = spec.param("amp")
        vals = rng.uniform(mean - amp, mean + amp, size=(m, n))
    elif spec.pattern == "blob":
        inside = _disk(spec.size, spec.param("row", (m - 1) / 2.0),
                       spec.param("col", (n - 1) / 2.0), spec.param("radius"))
        vals = np.where(inside, spec.param("inside"), spec.param("outside"))
    elif spec.pattern == "ring":
        row = spec.param("row", (m - 1) / 2.0)
        col = spec.param("col", (n - 1) / 2.0)
        outer = _disk(spec.size, row, col, spec.param("radius_outer"))
        inner = _disk(spec.size, row, col, spec.param("radius_inner"))
        vals = np.where(outer & ~inner, spec.param("inside"), spec.param("outside"))
    elif spec.pattern == "checkerboard":
        period = int(spec.param("period"))
        if period < 1:
            raise InvalidSpec(f"checkerboard period must be >= 1, got {period}")
        rr, cc = np.indices((m, n))
        parity = (rr // period + cc // period) % 2
        vals = np.where(parity == 0, spec.param("high"), spec.param("low"))
    else:  # pragma: no cover - guarded in __post_init__
        raise InvalidSpec(spec.pattern)
    return np.clip(vals.astype(np.float64), 0.0, 1.0)


def generate(spec: SynthSpec) -> UncertaintyMap:
    """Render the spec deterministically (same spec, same map)."""
    return UncertaintyMap(_render(spec, stream(spec.seed)))


def pattern_mask(spec: SynthSpec) -> SegmentationMask:
    """Foreground geometry of the pattern as a two-class mask.

    blob/ring use their own geometry; checkerboard marks the high tiles;
    constant/noise have no geometry, so a centered disk of radius
    min(m, n) / 4 stands in as a plausible foreground.
    """
    m, n = spec.size
    if spec.pattern == "blob":
        fg = _disk(spec.size, spec.param("row", (m - 1) / 2.0),
                   spec.param("col", (n - 1) / 2.0), spec.param("radius"))
    elif spec.pattern == "ring":
        row = spec.param("row", (m - 1) / 2.0)
        col = spec.param("col", (n - 1) / 2.0)
        fg = _disk(spec.size, row, col, spec.param("radius_outer")) & ~_disk(
            spec.size, row, col, spec.param("radius_inner")
        )
    elif spec.pattern == "checkerboard":
        period = int(spec.param("period"))
        rr, cc = np.indices((m, n))
        fg = (rr // period + cc // period) % 2 == 0
    else:
        fg = _disk(spec.size, (m - 1) / 2.0, (n - 1) / 2.0, min(m, n) / 4.0)
    return SegmentationMask(fg.astype(np.int64))


def expected_mean(spec: SynthSpec) -> float:
    """Expected map mean under the base parameters (jitter excluded)."""
    m, n = spec.size
    if spec.pattern == "constant":
        return spec.param("level")
    if spec.pattern == "noise":
        return spec.param("mean")
    if spec.pattern in ("blob", "ring"):
        fg = pattern_mask(spec).labels == 1
        f = float(fg.mean())
        return f * spec.param("inside") + (1.0 - f) * spec.param("outside")
    period = int(spec.param("period"))
    rr, cc = np.indices((m, n))
    f = float(((rr // period + cc // period) % 2 == 0).mean())
    return f * spec.param("high") + (1.0 - f) * spec.param("low")


def _jittered(spec: SynthSpec, rng: np.random.Generator) -> SynthSpec:
    """Apply the spec's ``<name>_jitter`` entries with one uniform draw each.

    Jitter draws happen in sorted parameter order before any rendering draw,
    so the stream layout is stable.
    """
    params = dict(spec.params)
    jitters = sorted(k for k in params if k.endswith("_jitter"))
    for key in jitters:
        base = key[: -len("_jitter")]
        width = float(params.pop(key))
        params[base] = spec.param(base) + rng.uniform(-width, width)
    return replace(spec, params=params)


def match_background(ood_spec: SynthSpec, target_mean: float) -> SynthSpec:
    """Adjust the pattern's background parameter to hit ``target_mean``.

    Solves the linear expected-mean identity for the background level; raises
    InvalidSpec when no value in [0, 1] can reach the target.
    """
    name = _BACKGROUND_PARAM[ood_spec.pattern]
    params = dict(ood_spec.params)
    params[name] = 0.0
    at_zero = expected_mean(replace(ood_spec, params=params))
    params[name] = 1.0
    at_one = expected_mean(replace(ood_spec, params=params))
    span = at_one - at_zero
    if span <= 0.0:
        raise InvalidSpec(
            f"pattern {ood_spec.pattern!r} gives the background no area to adjust"
        )
    level = (target_mean - at_zero) / span
    if not (0.0 <= level <= 1.0):
        raise InvalidSpec(
            f"cannot match mean {target_mean:.4f}: background level "
            f"{level:.4f} escapes [0, 1]"
        )
    params[name] = level
    return replace(ood_spec, params=params)


@dataclass(frozen=True, eq=False)
class BenchmarkSample:
    sample_id: str
    map: UncertaintyMap
    mask: SegmentationMask | None
    ood_label: int
    risk: float


@dataclass(frozen=True, eq=False)
class Benchmark:
    """One labeled population at a fixed perturbation intensity."""

    samples: tuple[BenchmarkSample, ...]
    intensity: float

    def maps(self) -> list[UncertaintyMap]:
        return [s.map for s in self.samples]

    def masks(self) -> list[SegmentationMask | None]:
        return [s.mask for s in self.samples]

    def labels(self) -> np.ndarray:
        return np.array([s.ood_label for s in self.samples])

    def risks(self) -> np.ndarray:
        return np.array([s.risk for s in self.samples])


def gen_benchmark(n_iid: int, n_ood: int, iid_spec: SynthSpec, ood_spec: SynthSpec,
                  *, perturb_ladder: Sequence[float] | None = None, seed: int = 0,
                  match_means: bool = False, with_masks: bool = False,
                  risk_slope: float = 0.6, risk_noise: float = 0.05
                  ) -> list[Benchmark]:
    """Generate labeled populations of synthetic uncertainty maps.

    Returns one Benchmark per ladder step (a single step of intensity 1.0
    when no ladder is given). In-distribution samples come from ``iid_spec``
    with per-sample jitter. Out-of-distribution sample j at intensity i is
    clip((1 - i) * base_j + i * pattern_j) where base_j follows ``iid_spec``
    and pattern_j follows ``ood_spec``; both stay fixed across steps so each
    sample traces a trajectory. Risk is clip(slope * intensity + jitter) for
    perturbed samples and clip(jitter) otherwise.

    ``match_means`` adjusts the out-of-distribution background level so both
    populations share the expected map mean. ``with_masks`` attaches each
    sample's pattern geometry as a mask.
    """
    if n_iid < 1:
        raise InvalidSpec(f"need at least one in-distribution sample, got {n_iid}")
    if n_ood < 1:
        raise InvalidSpec(f"need at least one perturbed sample, got {n_ood}")
    if iid_spec.size != ood_spec.size:
        raise InvalidSpec(f"sizes differ: {iid_spec.size} vs {ood_spec.size}")
    steps = [1.0] if perturb_ladder is None else [float(s) for s in perturb_ladder]
    if not steps or any(not (0.0 <= s <= 1.0) for s in steps):
        raise InvalidSpec(f"ladder intensities must lie in [0, 1], got {steps!r}")
    if match_means:
        ood_spec = match_background(ood_spec, expected_mean(iid_spec))

    width = max(4, len(str(max(n_iid, n_ood))))

    iid_samples = []
    for j in range(n_iid):
        rng = stream(seed, _LANE_IID, j)
        spec_j = _jittered(iid_spec, rng)
        map_j = UncertaintyMap(_render(spec_j, rng))
        mask_j = pattern_mask(spec_j) if with_masks else None
        risk_rng = stream(seed, _LANE_RISK, j)
        risk = float(np.clip(risk_rng.uniform(-risk_noise, risk_noise), 0.0, 1.0))
        iid_samples.append(
            BenchmarkSample(f"iid-{j:0{width}d}", map_j, mask_j, 0, risk)
        )

    ood_bases = []
    for j in range(n_ood):
        base_rng = stream(seed, _LANE_OOD_BASE, j)
        base_spec = _jittered(iid_spec, base_rng)
        base = _render(base_spec, base_rng)
        pat_rng = stream(seed, _LANE_OOD_PATTERN, j)
        pat_spec = _jittered(ood_spec, pat_rng)
        pattern = _render(pat_spec, pat_rng)
        if with_masks:
            # The mask follows the dominant component of the blend.
            masks_j = (pattern_mask(base_spec), pattern_mask(pat_spec))
        else:
            masks_j = (None, None)
        ood_bases.append((base, pattern, masks_j))

    benches = []
    for t, intensity in enumerate(steps):
        samples = list(iid_samples)
        for j, (base, pattern, masks_j) in enumerate(ood_bases):
            mask_j = masks_j[1] if intensity > 0.5 else masks_j[0]
            vals = np.clip((1.0 - intensity) * base + intensity * pattern, 0.0, 1.0)
            risk_rng = stream(seed, _LANE_RISK, ((t + 1) << 24) | j)
            risk = float(
                np.clip(
                    risk_slope * intensity + risk_rng.uniform(-risk_noise, risk_noise),
                    0.0,
                    1.0,
                )
            )
            samples.append(
                BenchmarkSample(
                    f"ood-{j:0{width}d}", UncertaintyMap(vals), mask_j, 1, risk
                )
            )
        benches.append(Benchmark(tuple(samples), intensity))
    return benches
