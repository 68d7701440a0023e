"""Exponential length probing: calibrate the bias, pick a starting length.

The probe set is every power of two up to the length cap, so a cap of
``max_length`` costs exactly floor(log2(max_length)) + 1 forward passes.
Each probe measures the span-average confidence of one template; an OLS fit
of those measurements against log(length) yields the bias slope k_hat, and
the starting length is the probe that maximizes the regularized signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .backend import InfillModel, ModelSession
from .confidence import fit_log_linear, regularized_signal
from .types import Context, ProbeRecord, SignalCalibration

# Probe signals within this absolute distance of the maximum count as tied;
# ties resolve to the smallest length. Exactly log-linear oracles produce
# float-level CL spreads that must not pick an arbitrary probe.
ARGMAX_TIE_TOL = 1e-9


@dataclass(frozen=True)
class ProbePlan:
    """The exponentially spaced probe lengths for a given cap."""

    max_length: int
    lengths: tuple[int, ...]


def build_probe_plan(max_length: int) -> ProbePlan:
    """Powers of two up to ``max_length``: {1, 2, 4, ..., 2^m <= max_length}.

    The cap itself is not probed when it is not a power of two; the later
    local search can still reach any length the budget allows.
    """
    if int(max_length) != max_length or max_length < 1:
        raise ValueError(f"max_length must be a positive integer, got {max_length!r}")
    top = int(max_length).bit_length() - 1
    return ProbePlan(int(max_length), tuple(1 << i for i in range(top + 1)))


@dataclass
class ProbingResult:
    calibration: SignalCalibration
    initial_length: int
    probes: list[ProbeRecord] = field(default_factory=list)
    cl_by_length: dict[int, float] = field(default_factory=dict)


def run_probing(
    context: Context,
    max_length: int,
    model: InfillModel,
    *,
    session: Optional[ModelSession] = None,
    fit_min_length: Optional[int] = None,
) -> ProbingResult:
    """Probe, fit, and choose the starting masked length.

    Probes run in ascending length order. When a session is passed in, its
    memo keeps the probe evaluations, so the first refinement step of the
    decode can reuse them for free as long as nothing has been committed.
    """
    sess = session if session is not None else ModelSession(model)
    plan = build_probe_plan(max_length)

    probes: list[ProbeRecord] = []
    for length in plan.lengths:
        before = sess.counter.count
        entry = sess.evaluate(context, length)
        probes.append(ProbeRecord(length, entry.avg_conf, sess.counter.count - before))

    calibration = fit_log_linear(
        [(p.length, p.avg_conf) for p in probes], fit_min_length=fit_min_length
    )
    cl = {
        p.length: regularized_signal(p.avg_conf, p.length, calibration.k_hat) for p in probes
    }
    best = max(cl.values())
    initial = min(length for length, value in cl.items() if value >= best - ARGMAX_TIE_TOL)
    return ProbingResult(calibration, initial, probes, cl)
