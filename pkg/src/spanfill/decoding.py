"""Greedy length refinement and left-boundary commitment.

After probing picks a starting length, each generated token follows the
same two moves:

1. local search -- hill-climb the masked length over the +-1 neighborhood
   of the current value, moving only while the regularized signal strictly
   improves and the budget permits;
2. commit -- sample the leftmost masked slot from the forward evaluation
   already memoized at the locally optimal length, append it to the prefix,
   and shrink the remaining length by one.

The strict-improvement rule means a single search never revisits a length,
so a decode of N tokens with U total search moves costs at most 3N + U
forward passes on top of probing. Committing invalidates the evaluation
memo because every cached template has the old prefix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backend import InfillModel, ModelSession, sample_token
from .confidence import regularized_signal
from .probing import run_probing
from .types import (
    CommitStepLog,
    Context,
    DecodeState,
    DecodeTrace,
    ProbeRecord,
    SamplingConfig,
    SignalCalibration,
    compose,
)


def neighborhood(length: int) -> tuple[int, ...]:
    """Candidate lengths around ``length``: {max(1, L-1), L, L+1}, sorted."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    return tuple(sorted({max(1, length - 1), length, length + 1}))


def local_refine(state: DecodeState, k_hat: float, session: ModelSession) -> CommitStepLog:
    """Hill-climb ``state.l_rem`` to a local optimum of the regularized signal.

    Each iteration evaluates the +-1 neighborhood (memoized evaluations are
    free), takes the argmax with ties resolved to the current length first
    and then to the smaller candidate, and moves only when the winner both
    differs from the current length and fits the remaining budget. Otherwise
    the length is clamped to min(winner, budget - n_gen); the loop repeats
    until an iteration leaves the length unchanged, evaluated on the
    post-clamp value. Comparisons are exact float comparisons: no epsilon,
    so a flat landscape produces zero moves.
    """
    if state.l_rem < 1:
        raise ValueError(f"l_rem must be >= 1, got {state.l_rem}")
    if state.budget - state.n_gen < 1:
        raise ValueError("budget exhausted; nothing left to refine")

    log = CommitStepLog(step_index=state.n_gen, visited_lengths=[state.l_rem])
    calls_before = session.counter.count

    while True:
        state.step_counter += 1
        for cand in neighborhood(state.l_rem):
            if cand not in log.cl_values:
                entry = session.evaluate(state.context, cand)
                log.cl_values[cand] = regularized_signal(entry.avg_conf, cand, k_hat)

        cands = neighborhood(state.l_rem)
        best_value = max(log.cl_values[c] for c in cands)
        if log.cl_values[state.l_rem] == best_value:
            best = state.l_rem
        else:
            best = min(c for c in cands if log.cl_values[c] == best_value)

        previous = state.l_rem
        if best != previous and state.n_gen + best <= state.budget:
            state.l_rem = best
        else:
            state.l_rem = min(best, state.budget - state.n_gen)
        if state.l_rem == previous:
            break
        log.visited_lengths.append(state.l_rem)

    log.chosen_length = state.l_rem
    log.forward_calls_used = session.counter.count - calls_before
    return log


def commit_one(
    state: DecodeState,
    session: ModelSession,
    sampling: SamplingConfig,
    rng: np.random.Generator,
) -> int:
    """Sample the leftmost masked slot at the current length and commit it.

    The forward evaluation at (prefix, l_rem) is normally already memoized
    by the search that just finished, so committing consumes no extra
    forward pass. The committed token moves from the hole to the prefix,
    and the memo is invalidated since every cached key describes templates
    of the old prefix.
    """
    if state.l_rem < 1:
        raise ValueError("cannot commit with no masked slots left")
    entry = session.evaluate(state.context, state.l_rem)
    token = sample_token(entry.forward.predictions[0], sampling, rng)
    state.generated = state.generated + (token,)
    state.context = Context(state.context.prefix + (token,), state.context.suffix)
    state.n_gen += 1
    state.l_rem -= 1
    session.invalidate()
    return token


@dataclass
class DecodeResult:
    generated: tuple[int, ...]
    completed: tuple[int, ...]
    trace: DecodeTrace


def run_decode(
    context: Context,
    initial_length: int,
    k_hat: float,
    max_gen: int,
    model: InfillModel,
    sampling: SamplingConfig,
    *,
    session: Optional[ModelSession] = None,
    probes: Optional[list[ProbeRecord]] = None,
    calibration: Optional[SignalCalibration] = None,
    probe_cap: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> DecodeResult:
    """Alternate refine/commit until the hole closes or the budget binds.

    The loop runs while l_rem > 0 and n_gen + l_rem <= max_gen; a starting
    length beyond the whole budget therefore produces an empty span. The
    returned completion is original_prefix + generated + suffix.

    Forward accounting: calls already on the session's counter when this
    function starts are attributed to probing (f_stage1); everything after
    is refinement/commit work (f_stage2).
    """
    if initial_length < 1:
        raise ValueError(f"initial_length must be >= 1, got {initial_length}")
    if max_gen < 1:
        raise ValueError(f"max_gen must be >= 1, got {max_gen}")

    sess = session if session is not None else ModelSession(model)
    draw = rng if rng is not None else np.random.default_rng(sampling.seed)
    state = DecodeState(context=context, l_rem=initial_length, budget=max_gen, probe_cap=probe_cap)

    calls_at_start = sess.counter.count
    steps: list[CommitStepLog] = []
    while state.l_rem > 0 and state.n_gen + state.l_rem <= max_gen:
        step = local_refine(state, k_hat, sess)
        step.committed_token = commit_one(state, sess, sampling, draw)
        steps.append(step)

    f_stage2 = sess.counter.count - calls_at_start
    trace = DecodeTrace(
        probes=list(probes) if probes else [],
        calibration=calibration,
        commit_steps=steps,
        f_stage1=calls_at_start,
        f_stage2=f_stage2,
        total_forward_calls=calls_at_start + f_stage2,
    )
    return DecodeResult(
        generated=state.generated,
        completed=compose(context, state.generated),
        trace=trace,
    )


def decode(
    context: Context,
    model: InfillModel,
    *,
    max_length: int,
    max_gen: int,
    sampling: SamplingConfig,
    fit_min_length: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> DecodeResult:
    """Full pipeline: probe and calibrate, then refine-and-commit.

    One session spans both phases so the first refinement step can reuse
    probe evaluations (the context is untouched until the first commit).
    """
    session = ModelSession(model)
    probing = run_probing(
        context, max_length, model, session=session, fit_min_length=fit_min_length
    )
    return run_decode(
        context,
        probing.initial_length,
        probing.calibration.k_hat,
        max_gen,
        model,
        sampling,
        session=session,
        probes=probing.probes,
        calibration=probing.calibration,
        probe_cap=max_length,
        rng=rng,
    )
