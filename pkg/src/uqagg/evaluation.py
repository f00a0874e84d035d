"""Downstream evaluation of aggregated scores.

Two tasks are covered. Separation: how well a score ranks out-of-distribution
samples above in-distribution ones (AUROC with 0.5 credit for ties). Failure
detection: how well the negated score, used as confidence, defers the riskiest
predictions (risk-coverage curves, AURC, and its excess over the oracle
ordering). Uncertainty-band statistics come from bootstrap resampling; paired
strategy comparisons use a one-sided Wilcoxon signed-rank test (exact
distribution up to n = 25, tie-corrected normal approximation with continuity
correction beyond).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import FeatureVector, as_mask
from .errors import (
    AllZeroDifferences,
    EmptyInput,
    FeatureMismatch,
    InvalidParam,
    LengthMismatch,
    ShapeMismatch,
    SingleClass,
    StrategySetMismatch,
)
from .rng import stream

DEFAULT_BOOTSTRAP = 500
_WILCOXON_EXACT_MAX = 25
_REDRAW_LIMIT = 100
_LANE_BOOTSTRAP = 21


def _rankdata(x: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties averaged."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    ranks[order] = np.arange(1, len(x) + 1)
    sx = x[order]
    i = 0
    while i < len(sx):
        j = i
        while j + 1 < len(sx) and sx[j + 1] == sx[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Probability that a positive outscores a negative, ties worth 0.5.

    ``labels`` are 0/1 with 1 the positive class; both classes must appear.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.ndim != 1:
        raise InvalidParam("scores and labels must be 1-D")
    if len(scores) != len(labels):
        raise LengthMismatch(f"{len(scores)} scores vs {len(labels)} labels")
    if not np.isin(labels, (0, 1)).all():
        raise InvalidParam("labels must be 0 or 1")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"need both classes, got {n_pos} positives of {len(labels)}")
    ranks = _rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def dice(pred, gt, mode: str = "micro") -> float:
    """Dice agreement between predicted and reference masks, background excluded.

    micro pools pixels over all foreground classes; macro averages per-class
    Dice over the classes present in either mask. Two all-background masks
    agree perfectly (1.0).
    """
    pred = as_mask(pred)
    gt = as_mask(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    if pred.background_label != gt.background_label:
        raise InvalidParam("masks disagree on the background label")
    p = pred.labels
    g = gt.labels
    bg = pred.background_label
    if mode == "micro":
        inter = int(((p == g) & (g != bg)).sum())
        total = int((p != bg).sum() + (g != bg).sum())
        if total == 0:
            return 1.0
        return 2.0 * inter / total
    if mode == "macro":
        classes = (set(np.unique(p)) | set(np.unique(g))) - {bg}
        if not classes:
            return 1.0
        per_class = []
        for c in sorted(classes):
            inter = int(((p == c) & (g == c)).sum())
            size = int((p == c).sum() + (g == c).sum())
            per_class.append(2.0 * inter / size)
        return float(np.mean(per_class))
    raise InvalidParam(f"mode must be 'micro' or 'macro', got {mode!r}")


@dataclass(frozen=True, eq=False)
class RiskCoverageCurve:
    """Working points of a selective predictor, coverage strictly decreasing."""

    coverages: np.ndarray   # fraction of samples retained
    risks: np.ndarray       # mean risk over the retained samples
    thresholds: np.ndarray  # ascending distinct confidence values


def risk_coverage(risks, confidences) -> RiskCoverageCurve:
    """Selective risk at every distinct confidence threshold.

    At threshold t the samples with confidence >= t are retained; tied
    confidences are retained or dropped together. The first point always has
    coverage 1.
    """
    risks = np.asarray(risks, dtype=np.float64)
    confidences = np.asarray(confidences, dtype=np.float64)
    if risks.ndim != 1 or confidences.ndim != 1:
        raise InvalidParam("risks and confidences must be 1-D")
    if len(risks) != len(confidences):
        raise LengthMismatch(f"{len(risks)} risks vs {len(confidences)} confidences")
    if len(risks) == 0:
        raise EmptyInput("risk-coverage needs at least one sample")
    n = len(risks)
    order = np.argsort(confidences, kind="stable")
    sorted_conf = confidences[order]
    sorted_risk = risks[order]
    # suffix_sum[i] = total risk of samples with the i-th smallest confidence
    # or larger; distinct thresholds are the first positions of each run.
    suffix_sum = np.cumsum(sorted_risk[::-1])[::-1]
    first = np.ones(n, dtype=bool)
    first[1:] = sorted_conf[1:] != sorted_conf[:-1]
    starts = np.nonzero(first)[0]
    coverages = (n - starts) / n
    sel_risks = suffix_sum[starts] / (n - starts)
    return RiskCoverageCurve(coverages, sel_risks, sorted_conf[starts])


def aurc(curve: RiskCoverageCurve) -> float:
    """Trapezoidal area under the risk-coverage curve.

    Integrates over positive coverage decrements between consecutive working
    points; a single-point curve has zero area.
    """
    cov = curve.coverages
    risk = curve.risks
    if len(cov) < 2:
        return 0.0
    widths = cov[:-1] - cov[1:]
    heights = 0.5 * (risk[:-1] + risk[1:])
    return float((widths * heights).sum())


def eaurc(risks, confidences) -> float:
    """AURC in excess of the oracle that ranks by ascending true risk.

    The oracle uses confidence = -risk under the same curve convention.
    Non-negative for tie-free confidences; degenerate inputs whose tied
    confidences collapse the curve to fewer points can undercount area and
    go negative. Float noise above -1e-12 is clamped to zero.
    """
    value = aurc(risk_coverage(risks, confidences)) - aurc(
        risk_coverage(risks, -np.asarray(risks, dtype=np.float64))
    )
    if -1e-12 < value < 0.0:
        return 0.0
    return float(value)


@dataclass(frozen=True, eq=False)
class EvalRecord:
    """One evaluated sample: aggregated scores plus task labels."""

    sample_id: str
    scores: FeatureVector
    ood_label: int | None = None
    risk: float | None = None


def _metric_fn(metric: str):
    if metric == "auroc":
        return _bootstrap_auroc
    if metric == "eaurc":
        return _bootstrap_eaurc
    raise InvalidParam(f"metric must be 'auroc' or 'eaurc', got {metric!r}")


def _bootstrap_auroc(scores, labels, risks, idx):
    lab = labels[idx]
    if lab.min() == lab.max():
        return None
    return [float(auroc(col[idx], lab)) for col in scores]


def _bootstrap_eaurc(scores, labels, risks, idx):
    r = risks[idx]
    return [float(eaurc(r, -col[idx])) for col in scores]


def _records_to_arrays(records: Sequence[EvalRecord], strategies, metric):
    if not records:
        raise EmptyInput("no records to evaluate")
    cols = []
    for name in strategies:
        try:
            cols.append(np.array([r.scores.get(name) for r in records]))
        except KeyError:
            raise FeatureMismatch(f"records lack scores for strategy {name!r}")
    labels = None
    risks = None
    if metric == "auroc":
        if any(r.ood_label is None for r in records):
            raise InvalidParam("auroc needs an ood_label on every record")
        labels = np.array([int(r.ood_label) for r in records])
    else:
        if any(r.risk is None for r in records):
            raise InvalidParam("eaurc needs a risk on every record")
        risks = np.array([float(r.risk) for r in records])
    return cols, labels, risks


def bootstrap_table(records: Sequence[EvalRecord], strategies: Sequence[str],
                    metric: str, b: int = DEFAULT_BOOTSTRAP,
                    seed: int = 0) -> dict[str, np.ndarray]:
    """Paired bootstrap vectors of a metric for several strategies.

    Every iteration draws one resample (with replacement) shared by all
    strategies, so the returned vectors are aligned for paired tests.
    Resamples that break a metric precondition (single class for AUROC) are
    redrawn from the same iteration stream, at most 100 times.
    """
    strategies = list(strategies)
    fn = _metric_fn(metric)
    if b < 1:
        raise InvalidParam(f"bootstrap count must be >= 1, got {b}")
    cols, labels, risks = _records_to_arrays(records, strategies, metric)
    n = len(records)
    out = np.empty((b, len(strategies)), dtype=np.float64)
    for i in range(b):
        rng = stream(seed, _LANE_BOOTSTRAP, i)
        for attempt in range(_REDRAW_LIMIT + 1):
            idx = rng.integers(0, n, size=n)
            values = fn(cols, labels, risks, idx)
            if values is not None:
                break
        else:
            raise SingleClass(
                f"bootstrap iteration {i}: no valid resample in "
                f"{_REDRAW_LIMIT} redraws"
            )
        out[i] = values
    return {name: out[:, j].copy() for j, name in enumerate(strategies)}


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    mean: float
    std: float
    samples: np.ndarray


def bootstrap_metric(records: Sequence[EvalRecord], strategy: str, metric: str,
                     b: int = DEFAULT_BOOTSTRAP, seed: int = 0) -> BootstrapResult:
    """Bootstrap mean/std of one metric for one strategy."""
    samples = bootstrap_table(records, [strategy], metric, b=b, seed=seed)[strategy]
    return BootstrapResult(float(samples.mean()), float(samples.std()), samples)


def wilcoxon_one_sided(a, b=None) -> float:
    """One-sided Wilcoxon signed-rank p-value for "a exceeds b".

    Accepts paired samples (a, b) or precomputed differences (b omitted).
    Zero differences are discarded; if all are zero the test is undefined and
    AllZeroDifferences is raised. Up to n = 25 the p-value is exact over all
    2^n sign assignments; beyond that a tie-corrected normal approximation
    with a 0.5 continuity correction is used.
    """
    a = np.asarray(a, dtype=np.float64)
    if b is not None:
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise LengthMismatch(f"{a.shape} vs {b.shape}")
        d = a - b
    else:
        d = a
    if d.ndim != 1:
        raise InvalidParam("differences must be 1-D")
    if d.size == 0:
        raise EmptyInput("no differences to test")
    d = d[d != 0.0]
    if d.size == 0:
        raise AllZeroDifferences("every paired difference is zero")
    n = d.size
    ranks = _rankdata(np.abs(d))
    w_pos = float(ranks[d > 0].sum())

    if n <= _WILCOXON_EXACT_MAX:
        return _wilcoxon_exact(ranks, w_pos)

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= (tie_counts.astype(np.float64) ** 3 - tie_counts).sum() / 48.0
    z = (w_pos - mean - 0.5) / math.sqrt(var)
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _wilcoxon_exact(ranks: np.ndarray, w_pos: float) -> float:
    # Doubled ranks are integers even with averaged ties; the subset-sum DP
    # enumerates the null distribution of 2*W+ over all sign assignments.
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts += shifted
    threshold = int(np.rint(2.0 * w_pos))
    return float(counts[threshold:].sum() / 2.0 ** len(ranks))


def mean_rank(tables: Mapping[str, Mapping[str, float]],
              direction: str = "higher") -> dict[str, float]:
    """Average per-dataset rank of each strategy (rank 1 is best).

    ``tables`` maps dataset name -> (strategy -> metric value). Every dataset
    must cover the same strategies. ``direction`` says whether higher or
    lower metric values are better; ties share an averaged rank.
    """
    if direction not in ("higher", "lower"):
        raise InvalidParam(f"direction must be 'higher' or 'lower', got {direction!r}")
    if not tables:
        raise EmptyInput("no datasets to rank over")
    datasets = list(tables)
    strategies = sorted(tables[datasets[0]])
    for name in datasets[1:]:
        if sorted(tables[name]) != strategies:
            raise StrategySetMismatch(
                f"dataset {name!r} covers a different strategy set"
            )
    if not strategies:
        raise EmptyInput("no strategies to rank")
    totals = np.zeros(len(strategies))
    for name in datasets:
        values = np.array([float(tables[name][s]) for s in strategies])
        keyed = -values if direction == "higher" else values
        totals += _rankdata(keyed)
    return {s: float(t / len(datasets)) for s, t in zip(strategies, totals)}


def significance_matrix(samples: Mapping[str, np.ndarray],
                        direction: str = "higher") -> tuple[list[str], np.ndarray]:
    """Matrix of one-sided p-values that strategy A beats strategy B.

    ``samples`` holds paired per-resample metric values per strategy. Entry
    (A, B) tests whether A's values exceed B's (or fall below, for
    direction='lower'). Pairs with no nonzero difference, including the
    diagonal, are reported as 1.0 with a warning.
    """
    if direction not in ("higher", "lower"):
        raise InvalidParam(f"direction must be 'higher' or 'lower', got {direction!r}")
    names = list(samples)
    if not names:
        raise EmptyInput("no strategies to compare")
    vectors = [np.asarray(samples[n], dtype=np.float64) for n in names]
    length = len(vectors[0])
    for name, v in zip(names, vectors):
        if len(v) != length:
            raise LengthMismatch(f"strategy {name!r} has {len(v)} samples, not {length}")
    p = np.ones((len(names), len(names)))
    for i, vi in enumerate(vectors):
        for j, vj in enumerate(vectors):
            if i == j:
                continue  # self-comparison is 1.0 by the zero-difference convention
            diffs = vi - vj if direction == "higher" else vj - vi
            try:
                p[i, j] = wilcoxon_one_sided(diffs)
            except AllZeroDifferences:
                warnings.warn(
                    f"no nonzero differences between {names[i]!r} and "
                    f"{names[j]!r}; reporting p = 1.0",
                    RuntimeWarning,
                    stacklevel=2,
                )
                p[i, j] = 1.0
    return names, p
