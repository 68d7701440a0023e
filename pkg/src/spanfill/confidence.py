"""Confidence signal over masked spans and its length calibration.

The per-position signal is the negative Shannon entropy of the predicted
token distribution,

    conf(q) = sum_v q(v) * log q(v)        (nats, <= 0)

and the span-level signal is its mean over the masked positions of a single
forward evaluation. Because the span average drifts with the masked length
roughly linearly in log(length), comparing spans of different lengths
requires removing that drift: we fit

    avg_conf(L) ~= alpha + k * log(L)

by ordinary least squares over probe measurements and score candidate
lengths with the regularized signal avg_conf(L) - k_hat * log(L).
"""

from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence

import numpy as np

from .types import PositionPrediction, SignalCalibration, entropy_sum, validate_distribution


def position_confidence(probs: Sequence[float]) -> float:
    """Negative entropy of one position's distribution, in nats.

    The vector must be a full normalized distribution; 0 * log(0) counts
    as 0, so a point mass scores exactly 0.0 and the uniform distribution
    scores -log(V).
    """
    return entropy_sum(validate_distribution(probs))


def avg_confidence(predictions: Sequence[PositionPrediction]) -> float:
    """Mean per-position confidence over one forward evaluation's output.

    All predictions must come from the same forward pass on one template;
    averaging across passes would mix incomparable signals.
    """
    if len(predictions) == 0:
        raise ValueError("avg_confidence needs at least one position")
    return math.fsum(p.confidence for p in predictions) / len(predictions)


def least_squares_line(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Closed-form OLS of y on x: returns (slope, intercept, residual_rms)."""
    n = len(xs)
    if n != len(ys) or n == 0:
        raise ValueError("x and y must be non-empty and parallel")
    x_mean = math.fsum(xs) / n
    y_mean = math.fsum(ys) / n
    sxx = math.fsum((x - x_mean) ** 2 for x in xs)
    if sxx == 0.0:
        raise ValueError("x values are all identical; slope is undefined")
    sxy = math.fsum((x - x_mean) * (y - y_mean) for x, y in zip(xs, ys))
    slope = sxy / sxx
    intercept = y_mean - slope * x_mean
    rms = math.sqrt(math.fsum((y - (intercept + slope * x)) ** 2 for x, y in zip(xs, ys)) / n)
    return slope, intercept, rms


def fit_log_linear(
    points: Iterable[tuple[int, float]],
    fit_min_length: Optional[int] = None,
) -> SignalCalibration:
    """Fit avg_conf ~ alpha + k * log(L) over (length, avg_conf) probes.

    ``fit_min_length`` restricts the fit to lengths >= the threshold, which
    is useful when only the long-span regime is expected to follow the
    log-linear law. The fit is unweighted.

    Fewer than two distinct lengths cannot identify a slope: the result is
    flagged degenerate with k_hat = 0 and alpha_hat the plain mean.
    """
    pts = [(int(length), float(a)) for length, a in points]
    if not pts:
        raise ValueError("fit_log_linear needs at least one probe point")
    for length, _ in pts:
        if length < 1:
            raise ValueError(f"probe length must be >= 1, got {length}")
    if fit_min_length is not None:
        kept = [p for p in pts if p[0] >= fit_min_length]
        if not kept:
            raise ValueError(f"fit_min_length={fit_min_length} excludes every probe point")
        pts = kept

    distinct = {length for length, _ in pts}
    if len(distinct) < 2:
        alpha = math.fsum(a for _, a in pts) / len(pts)
        rms = math.sqrt(math.fsum((a - alpha) ** 2 for _, a in pts) / len(pts))
        return SignalCalibration(
            k_hat=0.0,
            alpha_hat=alpha,
            fit_points=tuple(pts),
            fit_residual_rms=rms,
            degenerate=True,
        )

    xs = [math.log(length) for length, _ in pts]
    ys = [a for _, a in pts]
    slope, intercept, rms = least_squares_line(xs, ys)
    return SignalCalibration(
        k_hat=slope,
        alpha_hat=intercept,
        fit_points=tuple(pts),
        fit_residual_rms=rms,
        degenerate=False,
    )


def regularized_signal(avg_conf: float, length: float, k_hat: float) -> float:
    """Length-regularized signal: avg_conf - k_hat * log(length).

    At length 1 this is the raw average confidence regardless of k_hat.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length!r}")
    return avg_conf - k_hat * math.log(length)
