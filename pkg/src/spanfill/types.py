"""Value types shared across the infilling engine.

Everything here is a plain value. Token sequences are tuples of ints,
probability vectors are numpy arrays, and all confidences are natural-log
(nats) throughout the package. Types are immutable except the two
per-session accumulators ``DecodeState`` and ``DecodeTrace``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

Token = int

# Tolerance for accepting a full distribution as normalized. Anything worse
# is a backend bug and is rejected rather than renormalized.
PROB_SUM_TOL = 1e-6


def _token_tuple(tokens: Sequence[int], what: str) -> tuple[int, ...]:
    out = tuple(int(t) for t in tokens)
    for t in out:
        if t < 0:
            raise ValueError(f"{what} contains negative token id {t}")
    return out


@dataclass(frozen=True)
class Context:
    """An infilling instance: the tokens left and right of the hole.

    The suffix may be empty, which degenerates to plain continuation.
    """

    prefix: tuple[int, ...] = ()
    suffix: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "prefix", _token_tuple(self.prefix, "prefix"))
        object.__setattr__(self, "suffix", _token_tuple(self.suffix, "suffix"))


def compose(context: Context, span: Sequence[int]) -> tuple[int, ...]:
    """Concatenate prefix, a candidate span, and suffix into one sequence."""
    return context.prefix + _token_tuple(span, "span") + context.suffix


@dataclass(frozen=True)
class MaskTemplate:
    """A context with ``mask_len`` masked slots between prefix and suffix."""

    context: Context
    mask_len: int

    def __post_init__(self) -> None:
        if int(self.mask_len) != self.mask_len or self.mask_len < 1:
            raise ValueError(f"mask_len must be a positive integer, got {self.mask_len!r}")
        object.__setattr__(self, "mask_len", int(self.mask_len))

    @property
    def masked_indices(self) -> range:
        start = len(self.context.prefix)
        return range(start, start + self.mask_len)

    def __len__(self) -> int:
        return len(self.context.prefix) + self.mask_len + len(self.context.suffix)


def make_template(context: Context, mask_len: int) -> MaskTemplate:
    """Build the length-``mask_len`` probe template for ``context``.

    A zero-length mask is rejected: the engine never evaluates an empty
    hole, it simply stops decoding instead.
    """
    return MaskTemplate(context, mask_len)


def entropy_sum(probs: np.ndarray) -> float:
    """Sum of q*log(q) over a probability vector, with 0*log(0) == 0.

    This is the negative Shannon entropy in nats; always <= 0.
    """
    q = np.asarray(probs, dtype=np.float64)
    nz = q > 0.0
    return float(np.sum(q[nz] * np.log(q[nz])))


def validate_distribution(probs: Sequence[float]) -> np.ndarray:
    """Check that ``probs`` is a full distribution; return it as an array.

    Entries must lie in [0, 1] and sum to 1 within PROB_SUM_TOL. Anything
    else is treated as a model error, never silently renormalized.
    """
    q = np.asarray(probs, dtype=np.float64)
    if q.ndim != 1 or q.size < 2:
        raise ValueError("distribution must be a 1-D vector over a vocabulary of size >= 2")
    if np.any(q < -1e-12) or np.any(q > 1.0 + 1e-12):
        raise ValueError("distribution entries must lie in [0, 1]")
    total = float(q.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"distribution sums to {total!r}, outside tolerance {PROB_SUM_TOL}")
    return q


@dataclass(frozen=True, eq=False)
class PositionPrediction:
    """Model output for a single masked position.

    Two shapes exist:

    * dense -- ``probs`` covers the whole vocabulary, ``token_ids`` is None
      and ``confidence`` is derived from the vector;
    * truncated -- ``token_ids``/``probs`` hold a top-K slice (mass may be
      sub-stochastic) while ``confidence`` carries the backend's exact
      value for the full distribution.

    ``confidence`` is the negative entropy in nats, so it lies in
    [-log(vocab_size), 0]. All length-signal math reads ``confidence``;
    sampling reads the (possibly truncated) support.
    """

    vocab_size: int
    confidence: float
    probs: np.ndarray
    token_ids: Optional[np.ndarray] = None

    @property
    def truncated(self) -> bool:
        return self.token_ids is not None

    @classmethod
    def from_dense(cls, probs: Sequence[float]) -> "PositionPrediction":
        q = validate_distribution(probs)
        q = q.copy()
        q.flags.writeable = False
        return cls(vocab_size=q.size, confidence=entropy_sum(q), probs=q)

    @classmethod
    def from_topk(
        cls,
        token_ids: Sequence[int],
        probs: Sequence[float],
        confidence: float,
        vocab_size: int,
    ) -> "PositionPrediction":
        ids = np.asarray(token_ids, dtype=np.int64)
        q = np.asarray(probs, dtype=np.float64)
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if ids.ndim != 1 or ids.size < 1 or ids.shape != q.shape:
            raise ValueError("token_ids and probs must be parallel non-empty vectors")
        if np.unique(ids).size != ids.size:
            raise ValueError("token_ids must be unique")
        if np.any(ids < 0) or np.any(ids >= vocab_size):
            raise ValueError("token id outside vocabulary")
        if np.any(q < -1e-12) or np.any(q > 1.0 + 1e-12):
            raise ValueError("probabilities must lie in [0, 1]")
        if float(q.sum()) > 1.0 + PROB_SUM_TOL:
            raise ValueError("truncated probabilities exceed total mass 1")
        conf = float(confidence)
        if not np.isfinite(conf) or conf > 1e-9 or conf < -np.log(vocab_size) - 1e-6:
            raise ValueError(f"confidence {conf!r} outside [-log V, 0]")
        ids = ids.copy()
        q = q.copy()
        ids.flags.writeable = False
        q.flags.writeable = False
        return cls(vocab_size=int(vocab_size), confidence=conf, probs=q, token_ids=ids)


@dataclass(frozen=True)
class ProbeRecord:
    """One exponential-stage probe: masked length and the measured signal."""

    length: int
    avg_conf: float
    forward_calls_used: int = 1


@dataclass(frozen=True)
class SignalCalibration:
    """Fitted log-length bias of the confidence signal.

    ``k_hat`` is the slope of avg-confidence against log(length) and
    ``alpha_hat`` the intercept. ``degenerate`` marks fits over fewer than
    two distinct lengths, where the slope is pinned to zero.
    """

    k_hat: float
    alpha_hat: float
    fit_points: tuple[tuple[int, float], ...]
    fit_residual_rms: float
    degenerate: bool = False


@dataclass(frozen=True)
class SamplingConfig:
    """Token sampling knobs: nucleus mass, optional top-k, temperature, seed."""

    top_p: float = 0.9
    top_k: Optional[int] = None
    temperature: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.top_p <= 1.0):
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p!r}")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError(f"top_k must be >= 1 when given, got {self.top_k!r}")
        if not (self.temperature > 0.0):
            raise ValueError(f"temperature must be > 0, got {self.temperature!r}")

    @classmethod
    def greedy_limit(cls, seed: int = 0, temperature: float = 0.2) -> "SamplingConfig":
        # top_p in the smallest-positive limit keeps exactly the argmax token.
        return cls(top_p=1e-300, top_k=None, temperature=temperature, seed=seed)


@dataclass
class DecodeState:
    """Mutable per-decode state: current context, remaining length, budget."""

    context: Context
    l_rem: int
    budget: int
    probe_cap: Optional[int] = None
    n_gen: int = 0
    generated: tuple[int, ...] = ()
    step_counter: int = 0  # total refinement-loop iterations, all commit steps


@dataclass
class CommitStepLog:
    """Search record for one committed token.

    ``visited_lengths`` lists the lengths the local search passed through,
    starting at the length the step was entered with; ``cl_values`` holds the
    regularized signal for every length evaluated during the step.
    """

    step_index: int
    visited_lengths: list[int] = field(default_factory=list)
    cl_values: dict[int, float] = field(default_factory=dict)
    chosen_length: int = 0
    committed_token: Optional[int] = None
    forward_calls_used: int = 0


@dataclass
class DecodeTrace:
    """Full record of one decode: probes, calibration, and commit steps."""

    probes: list[ProbeRecord] = field(default_factory=list)
    calibration: Optional[SignalCalibration] = None
    commit_steps: list[CommitStepLog] = field(default_factory=list)
    f_stage1: int = 0
    f_stage2: int = 0
    total_forward_calls: int = 0

    @property
    def n_generated(self) -> int:
        return len(self.commit_steps)
