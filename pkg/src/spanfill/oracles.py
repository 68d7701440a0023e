"""Synthetic backends with analytically known confidence curves.

Both oracles realize a target average entropy per probed length as genuine
token distributions, so the engine can be tested end to end against closed
forms. Each masked position gets a "spiked" distribution: mass p on one
designated token and the remainder spread uniformly, with p chosen by
bisection so the position's entropy hits its target exactly.

PhysicsOracle models a counting argument for length-induced uncertainty:
if the number of admissible continuations at distance d from the left edge
of the hole grows like d**r, the entropy of position d is scale_k * r *
log(d), and the span average becomes

    avg_entropy(L) = (scale_k * r / L) * log(L!) + S1(L) + noise(L)

with log(L!) computed by summing log(d) directly, never by Stirling's
approximation. Since (1/L)*log(L!) = log(L) - 1 + O(log(L)/L), the measured
average confidence is log-linear in L up to a shrinking remainder, which is
exactly the regime the calibration fit assumes.

PlantedOracle hides a known answer span. Its semantic term peaks when the
masked length matches the remaining planted length and falls off with the
log-distance between them, on top of a configurable log-length bias and
optional Gaussian noise. With the true bias supplied as k_hat, the
regularized signal has a strict unique argmax at the planted length, so a
correct engine must recover the span exactly in the noiseless greedy limit.

Noise is applied per probed length at the level of the span average (the
same offset shifts every position of that template) and is derived from the
oracle seed and the length only, so repeated evaluations are identical and
oracles stay immutable and shareable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .backend import ForwardResult
from .types import MaskTemplate, PositionPrediction

_NOISE_TAG = 0xA5
_FILLER_TAG = 0xF1


def _mix64(*parts: int) -> int:
    # splitmix64 over the folded parts; deterministic across platforms
    x = 0x9E3779B97F4A7C15
    for p in parts:
        x = (x + (p & 0xFFFFFFFFFFFFFFFF) + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        x ^= x >> 30
        x = (x * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        x ^= x >> 27
        x = (x * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        x ^= x >> 31
    return x


def _pseudo_token(seed: int, tag: int, index: int, vocab_size: int) -> int:
    return _mix64(seed, tag, index) % vocab_size


def _length_noise(seed: int, length: int, sigma: float) -> float:
    if sigma == 0.0:
        return 0.0
    gen = np.random.default_rng(np.random.SeedSequence([seed & 0x7FFFFFFF, _NOISE_TAG, length]))
    return float(gen.normal(0.0, sigma))


def spike_entropy(p, vocab_size: int):
    """Entropy (nats) of mass p on one token, the rest uniform over V-1.

        H(p) = -p*log(p) - (1-p)*log((1-p)/(V-1))

    H(1) = 0 (point mass), H(1/V) = log(V) (uniform); strictly decreasing
    in p on [1/V, 1]. Accepts scalars or arrays.
    """
    arr = np.asarray(p, dtype=np.float64)
    rest = 1.0 - arr
    with np.errstate(divide="ignore", invalid="ignore"):
        t_spike = np.where(arr > 0.0, arr * np.log(arr), 0.0)
        t_rest = np.where(rest > 0.0, rest * np.log(rest / (vocab_size - 1)), 0.0)
    out = -(t_spike + t_rest)
    return float(out) if np.isscalar(p) or out.ndim == 0 else out


def _invert_scalar(t: float, vocab_size: int, log_v: float) -> float:
    if t <= 1e-15:
        return 1.0
    if t >= log_v - 1e-15:
        return 1.0 / vocab_size
    vm1 = vocab_size - 1
    lo, hi = 1.0 / vocab_size, 1.0
    for _ in range(54):
        mid = 0.5 * (lo + hi)
        rest = 1.0 - mid
        h = -(mid * math.log(mid) + (rest * math.log(rest / vm1) if rest > 0.0 else 0.0))
        if h > t:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def invert_spike_entropy(target, vocab_size: int):
    """Find p in [1/V, 1] with spike_entropy(p, V) == target, by bisection.

    Targets must lie in [0, log(V)] (tiny float excursions are snapped).
    54 halvings of the bracket put p within ~1 ulp of the root, so the
    realized entropy matches the target to well under 1e-12.
    """
    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2")
    scalar = np.isscalar(target)
    t = np.atleast_1d(np.asarray(target, dtype=np.float64))
    log_v = math.log(vocab_size)
    if not np.all(np.isfinite(t)) or np.any(t < -1e-9) or np.any(t > log_v + 1e-9):
        raise ValueError(f"entropy target outside [0, log {vocab_size}]")
    t = np.clip(t, 0.0, log_v)

    # bisect only the distinct targets; repeated values (constant-entropy
    # spans) cost one root find instead of one per position
    uniq, inverse = np.unique(t, return_inverse=True)
    if uniq.size <= 3:
        p = np.array([_invert_scalar(float(u), vocab_size, log_v) for u in uniq])
    else:
        lo = np.full_like(uniq, 1.0 / vocab_size)  # H(lo) = log V
        hi = np.ones_like(uniq)  # H(hi) = 0
        with np.errstate(divide="ignore", invalid="ignore"):
            for _ in range(54):
                mid = 0.5 * (lo + hi)
                rest = 1.0 - mid
                h = -(
                    mid * np.log(mid)
                    + np.where(rest > 0.0, rest * np.log(rest / (vocab_size - 1)), 0.0)
                )
                too_uncertain = h > uniq
                lo = np.where(too_uncertain, mid, lo)
                hi = np.where(too_uncertain, hi, mid)
        p = 0.5 * (lo + hi)
        p = np.where(uniq <= 1e-15, 1.0, p)
        p = np.where(uniq >= log_v - 1e-15, 1.0 / vocab_size, p)
    p = p[inverse]
    return float(p[0]) if scalar else p


def _spiked_forward(
    targets: np.ndarray, designated: Sequence[int], vocab_size: int
) -> ForwardResult:
    """Build one prediction per position from entropy targets and spike ids."""
    p = np.atleast_1d(invert_spike_entropy(targets, vocab_size))
    conf = -spike_entropy(p, vocab_size)
    conf = np.atleast_1d(conf)
    n = p.size
    probs = np.empty((n, vocab_size), dtype=np.float64)
    probs[:] = ((1.0 - p) / (vocab_size - 1))[:, None]
    probs[np.arange(n), np.asarray(designated, dtype=np.int64)] = p
    probs.flags.writeable = False
    preds = [
        PositionPrediction(
            vocab_size=vocab_size, confidence=float(conf[i]), probs=probs[i]
        )
        for i in range(n)
    ]
    return ForwardResult(predictions=preds)


@dataclass(frozen=True)
class QualityProfile:
    """Length profile of the semantic entropy floor S1(L) for PhysicsOracle.

    kinds:
      constant           -- S1(L) = value
      peaked             -- S1(L) = value + depth * |log L - log l_star|
                            (entropy dips at l_star, i.e. quality peaks there)
      table              -- explicit mapping length -> S1; missing length
                            is a configuration error
    """

    kind: str = "constant"
    value: float = 0.0
    l_star: int = 1
    depth: float = 0.0
    table: Optional[Mapping[int, float]] = None

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "peaked", "table"):
            raise ValueError(f"unknown quality profile kind {self.kind!r}")
        if self.kind == "peaked" and (self.l_star < 1 or self.depth < 0):
            raise ValueError("peaked profile needs l_star >= 1 and depth >= 0")
        if self.kind == "table" and not self.table:
            raise ValueError("table profile needs a non-empty table")

    def __call__(self, length: int) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "peaked":
            return self.value + self.depth * abs(math.log(length) - math.log(self.l_star))
        assert self.table is not None
        if length not in self.table:
            raise ValueError(f"quality table has no entry for length {length}")
        return float(self.table[length])

    @classmethod
    def parse(cls, text: str) -> "QualityProfile":
        """Parse 'constant:V' | 'peaked:LSTAR:BASE:DEPTH' | 'table:L=V,L=V,...'."""
        head, _, rest = text.strip().partition(":")
        if head == "constant":
            return cls(kind="constant", value=float(rest))
        if head == "peaked":
            l_star, base, depth = rest.split(":")
            return cls(kind="peaked", value=float(base), l_star=int(l_star), depth=float(depth))
        if head == "table":
            entries = {}
            for item in rest.split(","):
                k, _, v = item.partition("=")
                entries[int(k)] = float(v)
            return cls(kind="table", table=entries)
        raise ValueError(f"unknown quality profile {text!r}")


@dataclass(frozen=True)
class PhysicsOracleParams:
    r: float
    scale_k: float
    s1: QualityProfile = field(default_factory=QualityProfile)
    noise_sigma: float = 0.0
    vocab_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.r > 0):
            raise ValueError(f"r must be > 0, got {self.r!r}")
        if not (self.scale_k > 0):
            raise ValueError(f"scale_k must be > 0, got {self.scale_k!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")


class PhysicsOracle:
    """Backend whose uncertainty grows with distance into the hole.

    Position d (1-based from the left edge of the hole) carries entropy
    scale_k * r * log(d) + S1(L) + noise(L); averaging over d recovers
    exactly (scale_k * r / L) * log(L!) + S1(L) + noise(L). Immutable;
    share freely across sessions.
    """

    def __init__(self, params: PhysicsOracleParams):
        self.params = params
        self.vocab_size = params.vocab_size
        self._noise_memo: dict[int, float] = {}

    def _noise(self, length: int) -> float:
        value = self._noise_memo.get(length)
        if value is None:
            value = _length_noise(self.params.seed, length, self.params.noise_sigma)
            self._noise_memo[length] = value
        return value

    def length_entropy_sum(self, length: int) -> float:
        """scale_k * r * log(L!) via the exact sum of log d, no Stirling."""
        d = np.arange(1, length + 1, dtype=np.float64)
        return self.params.scale_k * self.params.r * float(np.log(d).sum())

    def average_entropy(self, length: int) -> float:
        """The exact span-average entropy the engine will measure at L."""
        log_v = math.log(self.vocab_size)
        base = self.length_entropy_sum(length) / length + self.params.s1(length)
        raw = base + self._noise(length)
        return min(max(raw, 0.0), log_v)

    def infer(self, template: MaskTemplate) -> ForwardResult:
        length = template.mask_len
        p = self.params
        log_v = math.log(self.vocab_size)
        d = np.arange(1, length + 1, dtype=np.float64)
        deterministic = p.scale_k * p.r * np.log(d) + p.s1(length)
        if deterministic[-1] > log_v + 1e-12 or deterministic[0] < -1e-12:
            raise ValueError(
                f"physics oracle parameters push entropy outside [0, log V] at L={length}"
            )
        targets = np.clip(deterministic + self._noise(length), 0.0, log_v)
        base = len(template.context.prefix)
        designated = [
            _pseudo_token(p.seed, _FILLER_TAG, base + i, self.vocab_size)
            for i in range(length)
        ]
        return _spiked_forward(targets, designated, self.vocab_size)


@dataclass(frozen=True)
class PlantedOracleParams:
    planted_span: tuple[int, ...]
    sharpness: float = 0.3
    bias_k: float = -0.15
    noise_sigma: float = 0.0
    vocab_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "planted_span", tuple(int(t) for t in self.planted_span))
        if len(self.planted_span) < 1:
            raise ValueError("planted_span must hold at least one token")
        if any(t < 0 or t >= self.vocab_size for t in self.planted_span):
            raise ValueError("planted token outside vocabulary")
        if not (self.sharpness > 0):
            raise ValueError("semantic peak sharpness must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")

    @property
    def l_star(self) -> int:
        return len(self.planted_span)


class PlantedOracle:
    """Backend that knows the answer span and rewards the right length.

    Confidence decomposes as S(L) + bias_k * log(L) where the semantic term
    S(L) = -sharpness * |log L - log(remaining)| has its unique maximum when
    the masked length equals the number of planted tokens not yet committed.
    Masked slots that still lie inside the planted span predict the planted
    token; slots beyond it predict a seed-derived filler.

    ``base_prefix_len`` anchors the instance: committed tokens are counted
    as len(template prefix) - base_prefix_len, so build one oracle per
    instance (construction is trivially cheap).
    """

    def __init__(self, params: PlantedOracleParams, base_prefix_len: int = 0):
        if base_prefix_len < 0:
            raise ValueError("base_prefix_len must be >= 0")
        self.params = params
        self.vocab_size = params.vocab_size
        self.base_prefix_len = base_prefix_len
        self._noise_memo: dict[int, float] = {}

    def _noise(self, length: int) -> float:
        value = self._noise_memo.get(length)
        if value is None:
            value = _length_noise(self.params.seed, length, self.params.noise_sigma)
            self._noise_memo[length] = value
        return value

    def _committed(self, template: MaskTemplate) -> int:
        n = len(template.context.prefix) - self.base_prefix_len
        if n < 0:
            raise ValueError("template prefix is shorter than the oracle's base context")
        return n

    def entropy_target(self, length: int, committed: int = 0) -> float:
        """Closed-form average entropy the oracle realizes at this length."""
        p = self.params
        remaining = max(p.l_star - committed, 1)
        semantic = p.sharpness * abs(math.log(length) - math.log(remaining))
        deterministic = semantic - p.bias_k * math.log(length)
        log_v = math.log(p.vocab_size)
        if deterministic < -1e-12 or deterministic > log_v + 1e-12:
            raise ValueError(
                f"planted oracle parameters push entropy outside [0, log V] at L={length}"
            )
        return min(max(deterministic + self._noise(length), 0.0), log_v)

    def average_entropy(self, length: int, committed: int = 0) -> float:
        return self.entropy_target(length, committed)

    def infer(self, template: MaskTemplate) -> ForwardResult:
        length = template.mask_len
        p = self.params
        n = self._committed(template)
        target = self.entropy_target(length, n)
        targets = np.full(length, target, dtype=np.float64)
        designated = [
            p.planted_span[n + i]
            if n + i < p.l_star
            else _pseudo_token(p.seed, _FILLER_TAG, n + i, p.vocab_size)
            for i in range(length)
        ]
        return _spiked_forward(targets, designated, self.vocab_size)


# ---------------------------------------------------------------------------
# flat key=value oracle configuration files


def parse_kv_config(text: str) -> dict[str, str]:
    """Parse 'key = value' lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        out[key.strip().lower()] = value.strip()
    return out


def load_oracle_config(path: str) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        config = parse_kv_config(fh.read())
    if "kind" not in config:
        raise ValueError(f"{path}: missing required key 'kind'")
    return config


def _parse_tokens(text: str) -> tuple[int, ...]:
    parts = text.replace(",", " ").split()
    return tuple(int(p) for p in parts)


def planted_params_from_config(config: Mapping[str, str]) -> PlantedOracleParams:
    vocab_size = int(config.get("vocab_size", 64))
    seed = int(config.get("seed", 0))
    if "planted_tokens" in config:
        span = _parse_tokens(config["planted_tokens"])
        if "l_star" in config and int(config["l_star"]) != len(span):
            raise ValueError("l_star disagrees with the length of planted_tokens")
    elif "l_star" in config:
        l_star = int(config["l_star"])
        if l_star < 1:
            raise ValueError("l_star must be >= 1")
        gen = np.random.default_rng(np.random.SeedSequence([seed & 0x7FFFFFFF, 0x57]))
        span = tuple(int(t) for t in gen.integers(0, vocab_size, size=l_star))
    else:
        raise ValueError("planted oracle config needs planted_tokens or l_star")
    return PlantedOracleParams(
        planted_span=span,
        sharpness=float(config.get("sharpness", 0.3)),
        bias_k=float(config.get("bias_k", -0.15)),
        noise_sigma=float(config.get("noise_sigma", 0.0)),
        vocab_size=vocab_size,
        seed=seed,
    )


def physics_params_from_config(config: Mapping[str, str]) -> PhysicsOracleParams:
    profile = QualityProfile.parse(config.get("s1_profile", "constant:0.5"))
    return PhysicsOracleParams(
        r=float(config.get("r", 1.0)),
        scale_k=float(config.get("scale_k", 0.2)),
        s1=profile,
        noise_sigma=float(config.get("noise_sigma", 0.0)),
        vocab_size=int(config.get("vocab_size", 64)),
        seed=int(config.get("seed", 0)),
    )
