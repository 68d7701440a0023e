"""Model backend boundary: forward evaluation, call counting, sampling.

A backend is anything with a ``vocab_size`` and an ``infer(template)``
returning one ``PositionPrediction`` per masked slot. Backends must be
deterministic for a fixed template; any backend-side randomness has to be
seed-controlled so that repeated calls agree.

``ModelSession`` wraps a backend with the two pieces of bookkeeping the
engine needs: a per-session forward-call counter (incremented exactly once
per real ``infer`` invocation, never decremented) and a memo of evaluations
keyed by (prefix length, masked length). Sessions are single-threaded;
run one session per decode. Backends themselves may be shared.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from .confidence import avg_confidence
from .types import Context, MaskTemplate, PositionPrediction, SamplingConfig, make_template


class BackendError(RuntimeError):
    """A backend failed: transport error, schema violation, or bad output."""


@dataclass(eq=False)
class ForwardResult:
    """Predictions for every masked slot of one template, in slot order."""

    predictions: list[PositionPrediction]
    call_id: Optional[int] = None


@runtime_checkable
class InfillModel(Protocol):
    vocab_size: int

    def infer(self, template: MaskTemplate) -> ForwardResult:
        """Evaluate the template once; one prediction per masked slot."""
        ...


@dataclass
class ForwardCallCounter:
    """Monotone count of real forward evaluations in one session."""

    count: int = 0

    def increment(self) -> int:
        self.count += 1
        return self.count


@dataclass(eq=False)
class CachedEval:
    forward: ForwardResult
    avg_conf: float


class ModelSession:
    """One decode's view of a backend: counting plus evaluation memo.

    The memo key is (len(prefix), mask_len); within a session the prefix
    only ever grows, so keys never collide across commits even before the
    explicit invalidation that every commit performs.
    """

    def __init__(self, model: InfillModel, counter: Optional[ForwardCallCounter] = None):
        self.model = model
        self.counter = counter if counter is not None else ForwardCallCounter()
        self.cache: dict[tuple[int, int], CachedEval] = {}

    def evaluate(self, context: Context, mask_len: int) -> CachedEval:
        key = (len(context.prefix), int(mask_len))
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        template = make_template(context, mask_len)
        result = self.model.infer(template)
        self.counter.increment()
        result.call_id = self.counter.count
        if len(result.predictions) != template.mask_len:
            raise BackendError(
                f"backend returned {len(result.predictions)} predictions "
                f"for a {template.mask_len}-slot template"
            )
        entry = CachedEval(result, avg_confidence(result.predictions))
        self.cache[key] = entry
        return entry

    def invalidate(self) -> None:
        self.cache.clear()


def sample_token(
    prediction: PositionPrediction,
    config: SamplingConfig,
    rng: np.random.Generator,
) -> int:
    """Draw one token id from a position's distribution.

    Pipeline order is fixed: (1) temperature-scale the log-probabilities by
    1/temperature and renormalize, (2) apply top-k if configured, (3) keep
    the smallest prefix of descending-probability tokens whose cumulative
    mass reaches top_p, (4) renormalize the survivors, (5) draw from ``rng``.
    There is no renormalization between top-k and the nucleus cut, so top-k
    mass removed in (2) can only shrink the nucleus further. Sort ties are
    broken by ascending token id, which makes the whole pipeline
    deterministic for a fixed rng state.

    Truncated predictions are handled identically over their support; the
    sub-stochastic mass is normalized by step (1).
    """
    q = np.asarray(prediction.probs, dtype=np.float64)
    if prediction.token_ids is not None:
        ids = np.asarray(prediction.token_ids, dtype=np.int64)
    else:
        ids = np.arange(q.size, dtype=np.int64)

    # (1) temperature in log space; zero-probability entries stay at zero
    with np.errstate(divide="ignore"):
        logq = np.log(q)
    logq = logq / config.temperature
    logq = logq - logq.max()
    w = np.exp(logq)
    w = w / w.sum()

    # stable order: descending mass, ties by ascending token id
    order = np.lexsort((ids, -w))

    # (2) top-k truncation
    if config.top_k is not None and config.top_k < order.size:
        order = order[: config.top_k]

    # (3) nucleus cut on the current (possibly sub-stochastic) masses
    csum = np.cumsum(w[order])
    cut = int(np.searchsorted(csum, config.top_p, side="left"))
    if cut >= order.size:
        cut = order.size - 1
    keep = order[: cut + 1]

    # (4) renormalize survivors, (5) inverse-CDF draw
    kw = w[keep]
    kw = kw / kw.sum()
    r = rng.random()
    idx = int(np.searchsorted(np.cumsum(kw), r, side="right"))
    if idx >= keep.size:
        idx = keep.size - 1
    return int(ids[keep[idx]])
