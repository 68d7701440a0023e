"""Wire adapter for models served out of process.

One forward evaluation is one request. The message body is identical over
both supported transports:

    request   {"prefix": [int], "suffix": [int], "mask_len": int, "top_k": int}
    response  {"positions": [{"confidence": float, "top": [[int, float], ...]},
                             ...]}                       # one per masked slot

``confidence`` must be the exact negative entropy of the server's full
distribution (the engine uses it for all length-signal math); ``top`` is a
truncated top-K slice used only for sampling. Floats travel as decimal
literals that round-trip IEEE-754 doubles exactly (Python's repr emits the
shortest such form, which is always within the 17-significant-digit bound).

Transports, framed identically at the JSON level:

* ``http://host:port/path`` or https -- the request is the POST body, the
  response is the HTTP response body;
* ``tcp://host:port`` -- each message is a 4-byte big-endian unsigned
  length followed by that many bytes of UTF-8 JSON, over a persistent
  connection. One in-flight request per session.

See docs/remote_protocol.md for the full field table.
"""

from __future__ import annotations

import json
import math
import socket
import struct
from typing import Optional
from urllib.parse import urlparse

import requests

from .backend import BackendError, ForwardResult
from .types import MaskTemplate, PositionPrediction

FRAME_HEADER = struct.Struct(">I")
MAX_FRAME_BYTES = 64 * 1024 * 1024


def encode_frame(payload: dict) -> bytes:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return FRAME_HEADER.pack(len(body)) + body


def read_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = sock.recv(remaining)
        if not chunk:
            raise BackendError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> dict:
    header = read_exact(sock, FRAME_HEADER.size)
    (length,) = FRAME_HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise BackendError(f"frame of {length} bytes exceeds limit")
    body = read_exact(sock, length)
    try:
        return json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BackendError(f"malformed JSON frame: {exc}") from exc


class RemoteModel:
    """Client adapter presenting a served model as a local backend.

    ``top_k`` is the truncation the server is asked to return per position;
    it bounds sampling support, never the confidence math. Requests within
    a session are serialized; use one adapter per session if decoding
    instances concurrently.
    """

    def __init__(self, endpoint: str, vocab_size: int, top_k: int = 64, timeout: float = 10.0):
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        parsed = urlparse(endpoint)
        if parsed.scheme in ("http", "https"):
            self._mode = "http"
        elif parsed.scheme == "tcp":
            self._mode = "tcp"
            if not parsed.hostname or not parsed.port:
                raise ValueError(f"tcp endpoint needs host and port: {endpoint!r}")
        else:
            raise ValueError(f"unsupported endpoint scheme in {endpoint!r}")
        self.endpoint = endpoint
        self.vocab_size = int(vocab_size)
        self.top_k = int(top_k)
        self.timeout = timeout
        self._parsed = parsed
        self._sock: Optional[socket.socket] = None

    # -- transports ---------------------------------------------------------

    def _roundtrip_http(self, payload: dict) -> dict:
        try:
            resp = requests.post(self.endpoint, json=payload, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except requests.RequestException as exc:
            raise BackendError(f"http transport failed: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise BackendError(f"server returned malformed JSON: {exc}") from exc

    def _roundtrip_tcp(self, payload: dict) -> dict:
        try:
            if self._sock is None:
                self._sock = socket.create_connection(
                    (self._parsed.hostname, self._parsed.port), timeout=self.timeout
                )
            self._sock.sendall(encode_frame(payload))
            return read_frame(self._sock)
        except (OSError, BackendError) as exc:
            self.close()
            if isinstance(exc, BackendError):
                raise
            raise BackendError(f"tcp transport failed: {exc}") from exc

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    # -- protocol -----------------------------------------------------------

    def infer(self, template: MaskTemplate) -> ForwardResult:
        payload = {
            "prefix": list(template.context.prefix),
            "suffix": list(template.context.suffix),
            "mask_len": template.mask_len,
            "top_k": self.top_k,
        }
        raw = self._roundtrip_http(payload) if self._mode == "http" else self._roundtrip_tcp(payload)
        return ForwardResult(predictions=self._parse_positions(raw, template.mask_len))

    def _parse_positions(self, raw: dict, mask_len: int) -> list[PositionPrediction]:
        if not isinstance(raw, dict) or "positions" not in raw:
            raise BackendError("response missing 'positions'")
        positions = raw["positions"]
        if not isinstance(positions, list) or len(positions) != mask_len:
            raise BackendError(
                f"expected {mask_len} positions, got "
                f"{len(positions) if isinstance(positions, list) else type(positions).__name__}"
            )
        log_v = math.log(self.vocab_size)
        out: list[PositionPrediction] = []
        for i, pos in enumerate(positions):
            if not isinstance(pos, dict) or "confidence" not in pos or "top" not in pos:
                raise BackendError(f"position {i}: missing 'confidence' or 'top'")
            conf = pos["confidence"]
            if not isinstance(conf, (int, float)) or isinstance(conf, bool):
                raise BackendError(f"position {i}: confidence is not a number")
            conf = float(conf)
            if not math.isfinite(conf) or conf > 1e-9 or conf < -log_v - 1e-6:
                raise BackendError(f"position {i}: confidence {conf!r} outside [-log V, 0]")
            top = pos["top"]
            if not isinstance(top, list) or not top:
                raise BackendError(f"position {i}: 'top' must be a non-empty list")
            try:
                ids = [int(t) for t, _ in top]
                probs = [float(p) for _, p in top]
            except (TypeError, ValueError) as exc:
                raise BackendError(f"position {i}: malformed 'top' pairs: {exc}") from exc
            try:
                out.append(
                    PositionPrediction.from_topk(ids, probs, conf, self.vocab_size)
                )
            except ValueError as exc:
                raise BackendError(f"position {i}: {exc}") from exc
        return out
