import json
import math
import socket
import socketserver
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from spanfill.backend import BackendError, ModelSession
from spanfill.decoding import decode
from spanfill.remote import MAX_FRAME_BYTES, FRAME_HEADER, RemoteModel, encode_frame, read_frame
from spanfill.types import Context, make_template

from conftest import CurveModel, greedy, planted_setup


def model_response(model, request: dict) -> dict:
    ctx = Context(tuple(request["prefix"]), tuple(request["suffix"]))
    result = model.infer(make_template(ctx, request["mask_len"]))
    k = int(request["top_k"])
    positions = []
    for pred in result.predictions:
        probs = np.asarray(pred.probs)
        order = np.lexsort((np.arange(probs.size), -probs))[:k]
        top = [[int(i), float(probs[i])] for i in order]
        positions.append({"confidence": pred.confidence, "top": top})
    return {"positions": positions}


class TcpModelServer:
    """Frame-per-request model server; `mangle` rewrites responses for fault tests."""

    def __init__(self, model, mangle=None):
        self.connections = 0
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                outer.connections += 1
                while True:
                    try:
                        request = read_frame(self.request)
                    except BackendError:
                        return
                    response = model_response(model, request)
                    if mangle is not None:
                        response = mangle(response)
                    self.request.sendall(encode_frame(response))

        self.server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def endpoint(self) -> str:
        host, port = self.server.server_address
        return f"tcp://{host}:{port}"

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()


class HttpModelServer:
    def __init__(self, model, mangle=None, status=200):
        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:
                body = self.rfile.read(int(self.headers["Content-Length"]))
                request = json.loads(body)
                response = model_response(model, request)
                if mangle is not None:
                    response = mangle(response)
                payload = json.dumps(response).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args) -> None:
                pass

        self.server = HTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def endpoint(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/infer"

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()


def curve():
    return CurveModel(32, lambda L: 1.0 + 0.25 * math.log(L))


# --- framing -----------------------------------------------------------------


def test_frame_round_trip_over_socketpair():
    a, b = socket.socketpair()
    try:
        payload = {"mask_len": 3, "prefix": [1, 2], "x": 0.1 + 0.2}
        a.sendall(encode_frame(payload))
        got = read_frame(b)
        assert got == payload
        assert got["x"] == 0.1 + 0.2  # bit-exact float round trip
    finally:
        a.close()
        b.close()


def test_frame_rejects_oversized_length():
    a, b = socket.socketpair()
    try:
        a.sendall(FRAME_HEADER.pack(MAX_FRAME_BYTES + 1))
        with pytest.raises(BackendError):
            read_frame(b)
    finally:
        a.close()
        b.close()


def test_frame_rejects_malformed_json():
    a, b = socket.socketpair()
    try:
        body = b"{not json"
        a.sendall(FRAME_HEADER.pack(len(body)) + body)
        with pytest.raises(BackendError):
            read_frame(b)
    finally:
        a.close()
        b.close()


# --- construction ------------------------------------------------------------


def test_rejects_unknown_scheme():
    with pytest.raises(ValueError):
        RemoteModel("ftp://127.0.0.1:1", 32)
    with pytest.raises(ValueError):
        RemoteModel("tcp://nohost", 32)  # missing port
    with pytest.raises(ValueError):
        RemoteModel("tcp://127.0.0.1:9", 1)  # vocab too small


def test_connection_refused_is_backend_error():
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    model = RemoteModel(f"tcp://127.0.0.1:{port}", 32, timeout=0.5)
    with pytest.raises(BackendError):
        model.infer(make_template(Context((), ()), 1))


# --- round trips -------------------------------------------------------------


def test_tcp_confidence_matches_local_exactly():
    local = curve()
    server = TcpModelServer(local)
    try:
        remote = RemoteModel(server.endpoint, 32, top_k=32)
        for L in (1, 2, 5):
            want = ModelSession(local).evaluate(Context((1,), (2,)), L).avg_conf
            got = ModelSession(remote).evaluate(Context((1,), (2,)), L).avg_conf
            assert got == want  # shortest-round-trip decimals are lossless
        remote.close()
    finally:
        server.close()


def test_tcp_reuses_one_connection():
    server = TcpModelServer(curve())
    try:
        remote = RemoteModel(server.endpoint, 32)
        session = ModelSession(remote)
        for L in (1, 2, 3, 4):
            session.evaluate(Context((), ()), L)
        assert server.connections == 1
        remote.close()
    finally:
        server.close()


def test_http_confidence_matches_local_exactly():
    local = curve()
    server = HttpModelServer(local)
    try:
        remote = RemoteModel(server.endpoint, 32, top_k=32)
        want = ModelSession(local).evaluate(Context((), ()), 4).avg_conf
        got = ModelSession(remote).evaluate(Context((), ()), 4).avg_conf
        assert got == want
    finally:
        server.close()


def test_remote_decode_matches_local_across_transports():
    ctx, local, params = planted_setup(6)
    ref = decode(ctx, local, max_length=16, max_gen=20, sampling=greedy())

    tcp_srv = TcpModelServer(local)
    http_srv = HttpModelServer(local)
    try:
        for endpoint in (tcp_srv.endpoint, http_srv.endpoint):
            remote = RemoteModel(endpoint, params.vocab_size, top_k=params.vocab_size)
            res = decode(ctx, remote, max_length=16, max_gen=20, sampling=greedy())
            assert res.generated == ref.generated == params.planted_span
            assert res.trace.total_forward_calls == ref.trace.total_forward_calls
            if hasattr(remote, "close"):
                remote.close()
    finally:
        tcp_srv.close()
        http_srv.close()


def test_truncated_top_k_keeps_confidence_exact():
    local = curve()
    server = TcpModelServer(local)
    try:
        remote = RemoteModel(server.endpoint, 32, top_k=4)
        pred = remote.infer(make_template(Context((), ()), 1)).predictions[0]
        assert pred.truncated
        assert pred.token_ids.size == 4
        want = local.infer(make_template(Context((), ()), 1)).predictions[0]
        assert pred.confidence == want.confidence
        remote.close()
    finally:
        server.close()


# --- fault handling ----------------------------------------------------------


def drop_one(response):
    response["positions"] = response["positions"][:-1]
    return response


def strip_conf(response):
    for pos in response["positions"]:
        del pos["confidence"]
    return response


def corrupt_conf(response):
    for pos in response["positions"]:
        pos["confidence"] = 5.0
    return response


@pytest.mark.parametrize("mangle", [drop_one, strip_conf, corrupt_conf])
def test_bad_tcp_responses_raise_backend_error(mangle):
    server = TcpModelServer(curve(), mangle=mangle)
    try:
        remote = RemoteModel(server.endpoint, 32)
        with pytest.raises(BackendError):
            remote.infer(make_template(Context((), ()), 2))
        remote.close()
    finally:
        server.close()


def test_http_error_status_raises_backend_error():
    server = HttpModelServer(curve(), status=500)
    try:
        remote = RemoteModel(server.endpoint, 32)
        with pytest.raises(BackendError):
            remote.infer(make_template(Context((), ()), 1))
    finally:
        server.close()
