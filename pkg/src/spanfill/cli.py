"""Command-line front end.

Commands:
  probe   measure the probe curve and calibration for each task instance
  infill  full decode of each task instance, one JSON trace line per instance
  sweep   fixed-length baseline: one forward pass per requested length
  bench   synthetic oracle benchmark: cost statistics plus bound audit

Exit codes: 0 success, 1 an engine invariant or bound was violated,
2 usage/configuration error, 3 model backend failure.

All commands are deterministic under a fixed --seed: reruns write
byte-identical output files.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .backend import BackendError, InfillModel, ModelSession, sample_token
from .confidence import least_squares_line, regularized_signal
from .decoding import decode
from .metrics import check_bounds, ratio_stats, trace_to_dict
from .oracles import (
    PlantedOracle,
    PhysicsOracle,
    load_oracle_config,
    physics_params_from_config,
    planted_params_from_config,
)
from .probing import run_probing
from .remote import RemoteModel
from .types import Context, SamplingConfig

PROBE_CSV_HEADER = "L,avg_conf,cl,k_hat,alpha_hat"


@dataclass(frozen=True)
class TaskInstance:
    id: str
    prefix: tuple[int, ...]
    suffix: tuple[int, ...]
    max_length: int
    max_gen: int

    @property
    def context(self) -> Context:
        return Context(self.prefix, self.suffix)


def load_task(path: str) -> list[TaskInstance]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not isinstance(data.get("instances"), list):
        raise ValueError(f"{path}: task file must be an object with an 'instances' list")
    out = []
    seen = set()
    for i, raw in enumerate(data["instances"]):
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: instance {i} is not an object")
        try:
            inst = TaskInstance(
                id=str(raw["id"]),
                prefix=tuple(int(t) for t in raw.get("prefix", [])),
                suffix=tuple(int(t) for t in raw.get("suffix", [])),
                max_length=int(raw["max_length"]),
                max_gen=int(raw["max_gen"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: instance {i} is malformed: {exc}") from exc
        if inst.max_length < 1 or inst.max_gen < 1:
            raise ValueError(f"{path}: instance {inst.id}: max_length and max_gen must be >= 1")
        if inst.id in seen:
            raise ValueError(f"{path}: duplicate instance id {inst.id!r}")
        seen.add(inst.id)
        out.append(inst)
    if not out:
        raise ValueError(f"{path}: task file has no instances")
    return sorted(out, key=lambda inst: inst.id)


def build_backend(config: dict, base_prefix_len: int) -> InfillModel:
    kind = config["kind"]
    if kind == "planted":
        return PlantedOracle(planted_params_from_config(config), base_prefix_len)
    if kind == "physics":
        return PhysicsOracle(physics_params_from_config(config))
    if kind == "remote":
        if "endpoint" not in config or "vocab_size" not in config:
            raise ValueError("remote backend config needs 'endpoint' and 'vocab_size'")
        return RemoteModel(
            config["endpoint"],
            int(config["vocab_size"]),
            top_k=int(config.get("top_k", 64)),
        )
    raise ValueError(f"unknown backend kind {kind!r}")


def _instance_rng(seed: int, instance_id: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed & 0x7FFFFFFF, zlib.crc32(instance_id.encode("utf-8"))])
    )


def _sampling(args: argparse.Namespace) -> SamplingConfig:
    return SamplingConfig(
        top_p=args.sampling_top_p, temperature=args.sampling_temp, seed=args.seed
    )


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------


def cmd_probe(args: argparse.Namespace) -> int:
    instances = load_task(args.task)
    config = load_oracle_config(args.model)
    rows = [PROBE_CSV_HEADER]
    summaries = []
    for inst in instances:
        model = build_backend(config, len(inst.prefix))
        max_length = args.max_length or inst.max_length
        result = run_probing(
            inst.context, max_length, model, fit_min_length=args.fit_min_length
        )
        calib = result.calibration
        for probe in result.probes:
            cl = result.cl_by_length[probe.length]
            rows.append(
                f"{probe.length},{probe.avg_conf!r},{cl!r},{calib.k_hat!r},{calib.alpha_hat!r}"
            )
        summary = {
            "id": inst.id,
            "initial_length": result.initial_length,
            "k_hat": calib.k_hat,
            "alpha_hat": calib.alpha_hat,
            "residual_rms": calib.fit_residual_rms,
            "degenerate": calib.degenerate,
        }
        if len({p.length for p in result.probes}) >= 2:
            xs = [float(p.length) for p in result.probes]
            ys = [p.avg_conf for p in result.probes]
            _, _, linear_rms = least_squares_line(xs, ys)
            summary["linear_fit_rms"] = linear_rms
            summary["log_fit_rms"] = calib.fit_residual_rms
            summary["log_better"] = calib.fit_residual_rms < linear_rms
        summaries.append(summary)
    _write_text(args.out, "\n".join(rows) + "\n")
    for summary in summaries:
        print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_infill(args: argparse.Namespace) -> int:
    instances = load_task(args.task)
    config = load_oracle_config(args.model)
    sampling = _sampling(args)
    lines = []
    violations = 0
    for inst in instances:
        model = build_backend(config, len(inst.prefix))
        max_length = args.max_length or inst.max_length
        max_gen = args.max_gen or inst.max_gen
        result = decode(
            inst.context,
            model,
            max_length=max_length,
            max_gen=max_gen,
            sampling=sampling,
            fit_min_length=args.fit_min_length,
            rng=_instance_rng(args.seed, inst.id),
        )
        report = check_bounds(result.trace, max_length, max_gen)
        violations += len(report.violations)
        record = {
            "id": inst.id,
            "prefix": list(inst.prefix),
            "suffix": list(inst.suffix),
            "max_length": max_length,
            "max_gen": max_gen,
            "generated": list(result.generated),
            "completed": list(result.completed),
            "bound_violations": report.violations,
        }
        record.update(trace_to_dict(result.trace))
        lines.append(json.dumps(record, sort_keys=True, separators=(",", ":")))
        print(
            f"{inst.id} n_gen={len(result.generated)} "
            f"forwards={result.trace.total_forward_calls} "
            f"{'ok' if report.ok else 'VIOLATIONS'}"
        )
    _write_text(args.out, "\n".join(lines) + "\n")
    return 1 if violations else 0


def cmd_sweep(args: argparse.Namespace) -> int:
    instances = load_task(args.task)
    config = load_oracle_config(args.model)
    try:
        lengths = [int(part) for part in args.lengths.split(",") if part.strip()]
    except ValueError as exc:
        raise ValueError(f"bad --lengths value {args.lengths!r}: {exc}") from exc
    if not lengths or any(l < 1 for l in lengths):
        raise ValueError("--lengths needs a comma-separated list of lengths >= 1")
    sampling = _sampling(args)
    lines = []
    for inst in instances:
        model = build_backend(config, len(inst.prefix))
        planted = model.params.planted_span if isinstance(model, PlantedOracle) else None
        for length in lengths:
            session = ModelSession(model)
            entry = session.evaluate(inst.context, length)
            rng = _instance_rng(args.seed, f"{inst.id}:{length}")
            generated = [
                sample_token(pred, sampling, rng) for pred in entry.forward.predictions
            ]
            record = {
                "id": inst.id,
                "length": length,
                "generated": generated,
                "avg_conf": entry.avg_conf,
                "forward_calls": session.counter.count,
                "exact_match": None if planted is None else tuple(generated) == planted,
            }
            lines.append(json.dumps(record, sort_keys=True, separators=(",", ":")))
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    config = load_oracle_config(args.model)
    if config["kind"] not in ("planted", "physics"):
        raise ValueError("bench runs on synthetic oracle backends only")
    sampling = _sampling(args)
    traces = []
    details = []
    for index in range(args.count):
        gen = np.random.default_rng(np.random.SeedSequence([args.seed & 0x7FFFFFFF, 0xB0, index]))
        prefix = tuple(int(t) for t in gen.integers(0, 8, size=int(gen.integers(0, 9))))
        suffix = tuple(int(t) for t in gen.integers(0, 8, size=int(gen.integers(0, 7))))
        inst_config = dict(config)
        inst_config["seed"] = str(int(gen.integers(0, 2**31 - 1)))
        if config["kind"] == "planted" and "planted_tokens" not in config:
            inst_config["l_star"] = str(int(gen.integers(args.l_star_min, args.l_star_max + 1)))
        model = build_backend(inst_config, len(prefix))
        result = decode(
            Context(prefix, suffix),
            model,
            max_length=args.max_length,
            max_gen=args.max_gen,
            sampling=sampling,
            rng=_instance_rng(args.seed, f"bench-{index}"),
        )
        traces.append(result.trace)
        report = check_bounds(result.trace, args.max_length, args.max_gen)
        details.extend(f"bench-{index}: {v}" for v in report.violations)

    stats = ratio_stats(traces)
    payload = {
        "count": args.count,
        "ratio_stats": {
            "n": stats.n,
            "mean": stats.mean,
            "median": stats.median,
            "p95": stats.p95,
            "min": stats.min,
            "max": stats.max,
            "n_excluded": stats.n_excluded,
        },
        "violations": len(details),
        "violation_details": details,
    }
    _write_text(args.out, json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print("n\tMean\tMedian\tP95\tMin\tMax")
    print(
        f"{stats.n}\t{stats.mean:.4f}\t{stats.median:.4f}\t{stats.p95:.4f}"
        f"\t{stats.min:.4f}\t{stats.max:.4f}"
    )
    print(
        f"bound checks: {len(details)} violations across {args.count} traces "
        f"({stats.n_excluded} zero-generation traces excluded from ratios)"
    )
    return 1 if details else 0


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spanfill", description="variable-length masked span infilling"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, task: bool = True) -> None:
        if task:
            p.add_argument("--task", required=True, help="task JSON file")
        p.add_argument("--model", required=True, help="backend config (key = value lines)")
        p.add_argument("--out", required=True, help="output file path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--sampling-top-p", type=float, default=0.9)
        p.add_argument("--sampling-temp", type=float, default=0.2)
        p.add_argument("--max-length", type=int, default=None)
        p.add_argument("--max-gen", type=int, default=None)

    p_probe = sub.add_parser("probe", help="probe curve and calibration per instance")
    common(p_probe)
    p_probe.add_argument("--fit-min-length", type=int, default=None)
    p_probe.set_defaults(func=cmd_probe)

    p_infill = sub.add_parser("infill", help="decode every instance, write JSON traces")
    common(p_infill)
    p_infill.add_argument("--fit-min-length", type=int, default=None)
    p_infill.set_defaults(func=cmd_infill)

    p_sweep = sub.add_parser("sweep", help="fixed-length single-pass baseline")
    common(p_sweep)
    p_sweep.add_argument("--lengths", required=True, help="comma-separated mask lengths")
    p_sweep.set_defaults(func=cmd_sweep)

    p_bench = sub.add_parser("bench", help="synthetic benchmark with bound audit")
    common(p_bench, task=False)
    p_bench.add_argument("--count", type=int, default=200)
    p_bench.add_argument("--l-star-min", type=int, default=2)
    p_bench.add_argument("--l-star-max", type=int, default=64)
    p_bench.set_defaults(max_length=128, max_gen=160)
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return args.func(args)
    except BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
