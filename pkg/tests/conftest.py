"""Shared test stubs.

CurveModel gives exact control over the confidence-vs-length curve:
every masked position of an L-token template receives a spiked
distribution whose entropy is `entropy_of_length(L)`, so the span
average confidence is exactly `-entropy_of_length(L)`.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from spanfill.backend import ForwardResult
from spanfill.oracles import PlantedOracle, PlantedOracleParams, invert_spike_entropy
from spanfill.types import Context, MaskTemplate, PositionPrediction


class CurveModel:
    def __init__(
        self,
        vocab_size: int,
        entropy_of_length: Callable[[int], float],
        designated: Optional[Callable[[int], int]] = None,
    ):
        self.vocab_size = vocab_size
        self.entropy_of_length = entropy_of_length
        self.designated = designated or (lambda pos: pos % vocab_size)

    def infer(self, template: MaskTemplate) -> ForwardResult:
        length = template.mask_len
        target = float(self.entropy_of_length(length))
        if not 0.0 <= target <= math.log(self.vocab_size) + 1e-9:
            raise ValueError(f"entropy target {target} out of range for V={self.vocab_size}")
        p = float(invert_spike_entropy(target, self.vocab_size))
        rest = (1.0 - p) / (self.vocab_size - 1)
        predictions = []
        for i in range(length):
            row = np.full(self.vocab_size, rest)
            row[self.designated(len(template.context.prefix) + i)] = p
            predictions.append(PositionPrediction.from_dense(row))
        return ForwardResult(tuple(predictions))


def constant_model(vocab_size: int = 16, entropy: float = 1.0) -> CurveModel:
    return CurveModel(vocab_size, lambda length: entropy)


def planted_setup(
    l_star: int,
    *,
    vocab_size: int = 64,
    sharpness: float = 0.6,
    bias_k: float = -0.15,
    noise_sigma: float = 0.0,
    seed: int = 7,
    prefix: tuple[int, ...] = (1, 2, 3),
    suffix: tuple[int, ...] = (4, 5),
) -> tuple[Context, PlantedOracle, PlantedOracleParams]:
    span = tuple((11 * i + 5) % vocab_size for i in range(l_star))
    params = PlantedOracleParams(
        planted_span=span,
        sharpness=sharpness,
        bias_k=bias_k,
        noise_sigma=noise_sigma,
        vocab_size=vocab_size,
        seed=seed,
    )
    ctx = Context(prefix, suffix)
    return ctx, PlantedOracle(params, base_prefix_len=len(prefix)), params


def greedy(seed: int = 0):
    from spanfill.types import SamplingConfig

    return SamplingConfig.greedy_limit(seed=seed, temperature=0.2)
