"""Trace auditing: complexity bounds, search invariants, cost statistics.

``check_bounds`` replays a decode trace against everything the engine
promises: probe-count exactness, the 3N + U cap on refinement forwards,
no-revisit and strict ascent within each search, budget safety, and the
stage-total bookkeeping. ``ratio_stats`` summarizes forward-calls per
generated token across traces the way benchmark tables report it.

This module also owns the JSON shape of persisted traces so written files
can be audited byte-for-byte equivalently to in-process traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .types import CommitStepLog, DecodeTrace, ProbeRecord, SignalCalibration


@dataclass
class BoundReport:
    """Outcome of auditing one trace; empty ``violations`` means clean."""

    violations: list[str] = field(default_factory=list)
    n_commits: int = 0
    total_moves: int = 0
    drift_total: int = 0
    drift_max: int = 0
    drift_mean: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations


def expected_probe_calls(max_length: int) -> int:
    if max_length < 1:
        raise ValueError("max_length must be >= 1")
    return int(max_length).bit_length()  # floor(log2) + 1


def check_bounds(trace: DecodeTrace, max_length: int, max_gen: int) -> BoundReport:
    """Audit one trace against the engine's structural guarantees."""
    report = BoundReport()
    bad = report.violations.append

    if trace.probes:
        want = expected_probe_calls(max_length)
        if trace.f_stage1 != want:
            bad(f"f_stage1={trace.f_stage1}, expected {want} for max_length={max_length}")
        got_lengths = [p.length for p in trace.probes]
        plan = [1 << i for i in range(int(max_length).bit_length())]
        if got_lengths != plan:
            bad(f"probe lengths {got_lengths} differ from plan {plan}")

    steps = trace.commit_steps
    n = len(steps)
    report.n_commits = n
    moves = 0
    for step in steps:
        visited = step.visited_lengths
        if not visited:
            bad(f"step {step.step_index}: empty visited_lengths")
            continue
        moves += len(visited) - 1
        if len(set(visited)) != len(visited):
            bad(f"step {step.step_index}: revisited a length: {visited}")
        if step.chosen_length != visited[-1]:
            bad(
                f"step {step.step_index}: chosen_length {step.chosen_length} "
                f"!= last visited {visited[-1]}"
            )
        for length in visited:
            if length < 1:
                bad(f"step {step.step_index}: visited length {length} < 1")
            if step.step_index + length > max_gen:
                bad(
                    f"step {step.step_index}: visited length {length} breaks "
                    f"budget {max_gen}"
                )
            if length not in step.cl_values:
                bad(f"step {step.step_index}: no recorded signal for length {length}")
        for a, b in zip(visited, visited[1:]):
            if a in step.cl_values and b in step.cl_values:
                if not (step.cl_values[b] > step.cl_values[a]):
                    bad(
                        f"step {step.step_index}: move {a}->{b} without strict "
                        f"signal increase"
                    )
    report.total_moves = moves

    if n > max_gen:
        bad(f"generated {n} tokens over budget {max_gen}")
    cap = 3 * n + moves
    if trace.f_stage2 > cap:
        bad(f"f_stage2={trace.f_stage2} exceeds 3N+U={cap} (N={n}, U={moves})")
    if trace.total_forward_calls != trace.f_stage1 + trace.f_stage2:
        bad(
            f"total_forward_calls={trace.total_forward_calls} != "
            f"f_stage1+f_stage2={trace.f_stage1 + trace.f_stage2}"
        )

    if n >= 2:
        diffs = [
            abs(b.chosen_length - a.chosen_length) for a, b in zip(steps, steps[1:])
        ]
        report.drift_total = sum(diffs)
        report.drift_max = max(diffs)
        report.drift_mean = sum(diffs) / len(diffs)
    return report


@dataclass(frozen=True)
class RatioStats:
    """Forward calls per generated token, summarized across traces.

    ``p95`` uses linear interpolation between order statistics (inclusive
    endpoints). ``n_excluded`` counts traces that generated nothing and so
    have no ratio.
    """

    n: int
    mean: float
    median: float
    p95: float
    min: float
    max: float
    n_excluded: int = 0


def summary_stats(values: Sequence[float], n_excluded: int = 0) -> RatioStats:
    if len(values) == 0:
        raise ValueError("no values to summarize")
    arr = np.asarray(values, dtype=np.float64)
    return RatioStats(
        n=int(arr.size),
        mean=float(arr.mean()),
        median=float(np.median(arr)),
        p95=float(np.percentile(arr, 95)),
        min=float(arr.min()),
        max=float(arr.max()),
        n_excluded=n_excluded,
    )


def ratio_stats(traces: Iterable[DecodeTrace]) -> RatioStats:
    ratios = []
    excluded = 0
    for trace in traces:
        if trace.n_generated == 0:
            excluded += 1
            continue
        ratios.append(trace.total_forward_calls / trace.n_generated)
    if not ratios:
        raise ValueError("every trace generated zero tokens; no ratios to summarize")
    return summary_stats(ratios, n_excluded=excluded)


# ---------------------------------------------------------------------------
# persisted trace shape (shared by the command-line tools and replay tests)


def trace_to_dict(trace: DecodeTrace) -> dict:
    calib = trace.calibration
    return {
        "probes": [
            {
                "length": p.length,
                "avg_conf": p.avg_conf,
                "forward_calls_used": p.forward_calls_used,
            }
            for p in trace.probes
        ],
        "calibration": None
        if calib is None
        else {
            "k_hat": calib.k_hat,
            "alpha_hat": calib.alpha_hat,
            "fit_points": [[length, a] for length, a in calib.fit_points],
            "fit_residual_rms": calib.fit_residual_rms,
            "degenerate": calib.degenerate,
        },
        "commit_steps": [
            {
                "step_index": s.step_index,
                "visited_lengths": list(s.visited_lengths),
                "cl_values": {str(k): v for k, v in sorted(s.cl_values.items())},
                "chosen_length": s.chosen_length,
                "committed_token": s.committed_token,
                "forward_calls_used": s.forward_calls_used,
            }
            for s in trace.commit_steps
        ],
        "f_stage1": trace.f_stage1,
        "f_stage2": trace.f_stage2,
        "total_forward_calls": trace.total_forward_calls,
    }


def trace_from_dict(data: dict) -> DecodeTrace:
    calib = data.get("calibration")
    calibration = None
    if calib is not None:
        calibration = SignalCalibration(
            k_hat=float(calib["k_hat"]),
            alpha_hat=float(calib["alpha_hat"]),
            fit_points=tuple((int(l), float(a)) for l, a in calib["fit_points"]),
            fit_residual_rms=float(calib["fit_residual_rms"]),
            degenerate=bool(calib["degenerate"]),
        )
    return DecodeTrace(
        probes=[
            ProbeRecord(
                length=int(p["length"]),
                avg_conf=float(p["avg_conf"]),
                forward_calls_used=int(p["forward_calls_used"]),
            )
            for p in data["probes"]
        ],
        calibration=calibration,
        commit_steps=[
            CommitStepLog(
                step_index=int(s["step_index"]),
                visited_lengths=[int(v) for v in s["visited_lengths"]],
                cl_values={int(k): float(v) for k, v in s["cl_values"].items()},
                chosen_length=int(s["chosen_length"]),
                committed_token=None if s["committed_token"] is None else int(s["committed_token"]),
                forward_calls_used=int(s["forward_calls_used"]),
            )
            for s in data["commit_steps"]
        ],
        f_stage1=int(data["f_stage1"]),
        f_stage2=int(data["f_stage2"]),
        total_forward_calls=int(data["total_forward_calls"]),
    )
