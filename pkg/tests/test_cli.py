import json
import math

import pytest

from spanfill.cli import main
from spanfill.confidence import fit_log_linear
from spanfill.metrics import check_bounds, trace_from_dict

from test_remote import TcpModelServer, curve


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.fixture
def task_file(tmp_path):
    return write(
        tmp_path / "task.json",
        json.dumps(
            {
                "instances": [
                    {"id": "a", "prefix": [1, 2, 3], "suffix": [4, 5],
                     "max_length": 32, "max_gen": 40},
                    {"id": "b", "prefix": [7], "suffix": [],
                     "max_length": 32, "max_gen": 40},
                ]
            }
        ),
    )


@pytest.fixture
def planted_cfg(tmp_path):
    return write(
        tmp_path / "planted.cfg",
        "kind = planted\nvocab_size = 64\nl_star = 12\nsharpness = 0.6\n"
        "bias_k = -0.15\nnoise_sigma = 0.0\nseed = 7\n",
    )


@pytest.fixture
def physics_cfg(tmp_path):
    return write(
        tmp_path / "physics.cfg",
        "kind = physics\nvocab_size = 512\nr = 0.4\nscale_k = 0.5\n"
        "s1_profile = constant:0.5\nnoise_sigma = 0.02\nseed = 11\n",
    )


GREEDY = ["--sampling-top-p", "1e-300"]


def test_probe_csv_shape_and_refit(task_file, planted_cfg, tmp_path, capsys):
    out = tmp_path / "probe.csv"
    assert main(["probe", "--task", task_file, "--model", planted_cfg, "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "L,avg_conf,cl,k_hat,alpha_hat"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 2 * 6  # two instances, probes 1..32

    # the reported slope must be the least-squares fit of the reported curve
    per_instance = rows[:6]
    points = [(int(r[0]), float(r[1])) for r in per_instance]
    refit = fit_log_linear(points)
    assert float(per_instance[0][3]) == pytest.approx(refit.k_hat, abs=1e-12)
    assert float(per_instance[0][4]) == pytest.approx(refit.alpha_hat, abs=1e-12)
    # cl column = avg_conf - k_hat log L
    for r in per_instance:
        want = float(r[1]) - refit.k_hat * math.log(int(r[0]))
        assert float(r[2]) == pytest.approx(want, abs=1e-12)

    summaries = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [s["id"] for s in summaries] == ["a", "b"]
    assert all(s["log_better"] in (True, False) for s in summaries)


def test_infill_traces_replay_clean(task_file, planted_cfg, tmp_path):
    out = tmp_path / "out.jsonl"
    code = main(
        ["infill", "--task", task_file, "--model", planted_cfg, "--out", str(out), "--seed", "3"]
        + GREEDY
    )
    assert code == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["id"] for r in records] == ["a", "b"]
    for record in records:
        assert record["bound_violations"] == []
        assert len(record["generated"]) == 12  # noiseless greedy hits l_star
        trace = trace_from_dict(record)
        report = check_bounds(trace, record["max_length"], record["max_gen"])
        assert report.ok, report.violations
        assert record["completed"] == record["prefix"] + record["generated"] + record["suffix"]


def test_infill_reruns_byte_identical(task_file, planted_cfg, tmp_path):
    out_a, out_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    argv = ["infill", "--task", task_file, "--model", planted_cfg, "--seed", "9"]
    assert main(argv + ["--out", str(out_a)]) == 0
    assert main(argv + ["--out", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()


def test_probe_reruns_byte_identical(task_file, physics_cfg, tmp_path):
    out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["probe", "--task", task_file, "--model", physics_cfg]
    assert main(argv + ["--out", str(out_a)]) == 0
    assert main(argv + ["--out", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()


def test_sweep_exact_match_only_at_l_star(task_file, planted_cfg, tmp_path):
    out = tmp_path / "sweep.jsonl"
    code = main(
        ["sweep", "--task", task_file, "--model", planted_cfg, "--out", str(out),
         "--lengths", "8,12,16"] + GREEDY
    )
    assert code == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    by_len = {(r["id"], r["length"]): r["exact_match"] for r in records}
    for inst in ("a", "b"):
        assert by_len[(inst, 12)] is True
        assert by_len[(inst, 8)] is False
        assert by_len[(inst, 16)] is False
    assert all(r["forward_calls"] == 1 for r in records)


def test_bench_reports_zero_violations(planted_cfg, tmp_path, capsys):
    out = tmp_path / "bench.json"
    code = main(
        ["bench", "--model", planted_cfg, "--out", str(out), "--count", "12",
         "--l-star-max", "20", "--seed", "5"] + GREEDY
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["violations"] == 0
    stats = payload["ratio_stats"]
    assert stats["n"] + stats["n_excluded"] == 12
    assert stats["min"] <= stats["median"] <= stats["p95"] <= stats["max"]
    banner = capsys.readouterr().out
    assert "0 violations" in banner


def test_cli_remote_backend(task_file, tmp_path):
    server = TcpModelServer(curve())
    try:
        cfg = write(
            tmp_path / "remote.cfg",
            f"kind = remote\nendpoint = {server.endpoint}\nvocab_size = 32\ntop_k = 32\n",
        )
        out = tmp_path / "probe.csv"
        assert main(["probe", "--task", task_file, "--model", cfg, "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 1 + 2 * 6
    finally:
        server.close()


def test_cli_remote_dead_endpoint_exits_3(task_file, tmp_path, capsys):
    import socket

    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    cfg = write(
        tmp_path / "dead.cfg",
        f"kind = remote\nendpoint = tcp://127.0.0.1:{port}\nvocab_size = 32\n",
    )
    out = tmp_path / "x.csv"
    assert main(["probe", "--task", task_file, "--model", cfg, "--out", str(out)]) == 3


def test_cli_usage_errors_exit_2(task_file, planted_cfg, tmp_path, capsys):
    out = str(tmp_path / "o")
    # missing required flag
    assert main(["probe", "--task", task_file, "--out", out]) == 2
    # unknown backend kind
    bad_kind = write(tmp_path / "bad.cfg", "kind = quantum\n")
    assert main(["probe", "--task", task_file, "--model", bad_kind, "--out", out]) == 2
    # config file missing
    assert main(["probe", "--task", task_file, "--model", "/nope.cfg", "--out", out]) == 2
    # malformed task JSON
    bad_task = write(tmp_path / "bad.json", "{")
    assert main(["probe", "--task", bad_task, "--model", planted_cfg, "--out", out]) == 2
    # duplicate instance ids
    dup = write(
        tmp_path / "dup.json",
        json.dumps({"instances": [
            {"id": "x", "max_length": 4, "max_gen": 4},
            {"id": "x", "max_length": 4, "max_gen": 4},
        ]}),
    )
    assert main(["probe", "--task", dup, "--model", planted_cfg, "--out", out]) == 2
    # bad sweep lengths
    assert main(
        ["sweep", "--task", task_file, "--model", planted_cfg, "--out", out,
         "--lengths", "0,4"]
    ) == 2
    capsys.readouterr()


def test_cli_unknown_command_exits_2(capsys):
    assert main(["frobnicate"]) == 2
    capsys.readouterr()
