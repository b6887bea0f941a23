"""Prediction-only teacher service and clients.

The source model sits behind a TCP API that can return soft or hard labels
and nothing else: the protocol has no message that could carry parameters,
prompts, gradients or hidden states, and every non-whitelisted request is
answered with FORBIDDEN. An in-process adapter exposes the same interface
for fast tests; adaptation code only ever sees this interface.

Frames are a big-endian u32 byte length followed by one UTF-8 JSON object.
Floats serialize via repr (shortest decimal that round-trips exactly), so
remote and local predictions agree to well below the documented 1e-6.
"""

from __future__ import annotations

import json
import os
import socket
import struct
import threading
import time

import numpy as np

from .errors import ContractError, TransportError
from .models import PromptedClassifier

ENV_ADDR = "CPFM_TEACHER_ADDR"
MAX_FRAME = 64 * 1024 * 1024
ALLOWED_TYPES = ("hello", "predict")
RETRIES = 3
BACKOFF = 0.1


def _send_frame(sock: socket.socket, payload: dict) -> None:
    body = json.dumps(payload, sort_keys=True).encode("utf-8")
    sock.sendall(struct.pack(">I", len(body)) + body)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _recv_frame(sock: socket.socket) -> dict | None:
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise ValueError(f"frame of {length} bytes exceeds limit")
    body = _recv_exact(sock, length)
    if body is None:
        return None
    return json.loads(body.decode("utf-8"))


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not host:
        raise ContractError(f"teacher address must be host:port, got {addr!r}")
    return host, int(port)


class TeacherServer:
    """Sequential-accept TCP server wrapping one source model."""

    def __init__(self, model: PromptedClassifier, host: str = "127.0.0.1",
                 port: int = 0):
        self.model = model
        self.request_counts = {"hello": 0, "predict": 0, "rejected": 0}
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(4)
        self._sock.settimeout(0.2)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._sock.getsockname()
        return f"{host}:{port}"

    def start(self) -> "TeacherServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
        self._sock.close()

    def serve_forever(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with conn:
                conn.settimeout(30.0)
                self._serve_connection(conn)

    def _serve_connection(self, conn: socket.socket) -> None:
        while not self._stop.is_set():
            try:
                request = _recv_frame(conn)
            except (ValueError, json.JSONDecodeError):
                self.request_counts["rejected"] += 1
                _send_frame(conn, {"type": "error", "code": "BAD_REQUEST",
                                   "message": "malformed frame"})
                continue
            except OSError:
                return
            if request is None:
                return
            try:
                _send_frame(conn, self._handle(request))
            except OSError:
                return

    def _handle(self, request) -> dict:
        if not isinstance(request, dict):
            self.request_counts["rejected"] += 1
            return {"type": "error", "code": "BAD_REQUEST",
                    "message": "request must be a JSON object"}
        rtype = request.get("type")
        if rtype not in ALLOWED_TYPES:
            self.request_counts["rejected"] += 1
            return {"type": "error", "code": "FORBIDDEN",
                    "message": "this service only answers hello and predict"}
        if rtype == "hello":
            self.request_counts["hello"] += 1
            cfg = self.model.cfg
            return {"type": "hello_ok", "series_len": cfg.series_len,
                    "channels": cfg.channels, "classes": cfg.classes}
        return self._predict(request)

    def _predict(self, request: dict) -> dict:
        mode = request.get("mode", "soft")
        if mode not in ("soft", "hard"):
            self.request_counts["rejected"] += 1
            return {"type": "error", "code": "BAD_REQUEST",
                    "message": f"unknown mode {mode!r}"}
        samples = request.get("samples", [])
        cfg = self.model.cfg
        try:
            batch = np.asarray(samples, dtype=np.float64)
        except (TypeError, ValueError):
            self.request_counts["rejected"] += 1
            return {"type": "error", "code": "BAD_REQUEST",
                    "message": "samples must be numeric"}
        if len(batch) and batch.shape[1:] != (cfg.series_len, cfg.channels):
            self.request_counts["rejected"] += 1
            return {"type": "error", "code": "BAD_REQUEST",
                    "message": f"sample shape {batch.shape[1:]} does not "
                               f"match ({cfg.series_len}, {cfg.channels})"}
        self.request_counts["predict"] += 1
        if mode == "hard":
            labels = [int(c) for c in self.model.predict_hard(batch)]
        else:
            labels = [[float(v) for v in row]
                      for row in self.model.predict_proba(batch)]
        return {"type": "predict_ok", "labels": labels}


def serve(checkpoint_path, addr: str) -> TeacherServer:
    """Load a source checkpoint and serve it on addr (host:port)."""
    host, port = parse_address(addr)
    model = PromptedClassifier.load(checkpoint_path)
    return TeacherServer(model, host, port)


class RemoteTeacher:
    """Client for a teacher service; retries transient transport failures."""

    def __init__(self, addr: str | None = None):
        if addr is None:
            addr = os.environ.get(ENV_ADDR, "")
        if not addr:
            raise ContractError(
                f"no teacher address given and {ENV_ADDR} is unset")
        self.host, self.port = parse_address(addr)
        self._shape: tuple[int, int, int] | None = None

    def _roundtrip(self, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(RETRIES):
            try:
                with socket.create_connection((self.host, self.port),
                                              timeout=30.0) as sock:
                    _send_frame(sock, payload)
                    response = _recv_frame(sock)
                if response is None:
                    raise ConnectionError("connection closed mid-response")
                return response
            except OSError as exc:
                last_error = exc
                time.sleep(BACKOFF * (2 ** attempt))
        raise TransportError(
            f"teacher at {self.host}:{self.port} unreachable: {last_error}")

    def info(self) -> tuple[int, int, int]:
        """(series_len, channels, classes) from the handshake."""
        if self._shape is None:
            reply = self._roundtrip({"type": "hello"})
            if reply.get("type") != "hello_ok":
                raise ContractError(f"handshake rejected: {reply}")
            self._shape = (reply["series_len"], reply["channels"],
                           reply["classes"])
        return self._shape

    def predict(self, batch, mode: str = "soft") -> np.ndarray:
        series_len, channels, classes = self.info()
        batch = np.asarray(batch, dtype=np.float64)
        if len(batch) == 0:
            return (np.zeros((0, classes)) if mode == "soft"
                    else np.zeros(0, dtype=np.int64))
        if batch.shape[1:] != (series_len, channels):
            raise ContractError(
                f"batch shape {batch.shape[1:]} does not match handshake "
                f"({series_len}, {channels})")
        reply = self._roundtrip({
            "type": "predict", "mode": mode,
            "samples": [[[float(v) for v in row] for row in sample]
                        for sample in batch],
        })
        if reply.get("type") != "predict_ok":
            raise ContractError(f"predict rejected: {reply}")
        if mode == "hard":
            return np.asarray(reply["labels"], dtype=np.int64)
        return np.asarray(reply["labels"], dtype=np.float64)


class LocalTeacher:
    """In-process adapter with the same surface as RemoteTeacher."""

    def __init__(self, model: PromptedClassifier):
        self.model = model

    def info(self) -> tuple[int, int, int]:
        cfg = self.model.cfg
        return cfg.series_len, cfg.channels, cfg.classes

    def predict(self, batch, mode: str = "soft") -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if mode == "hard":
            return self.model.predict_hard(batch)
        return self.model.predict_proba(batch)


def client_predict(addr: str, batch, mode: str = "soft") -> np.ndarray:
    """One-shot convenience wrapper around RemoteTeacher."""
    return RemoteTeacher(addr).predict(batch, mode)
