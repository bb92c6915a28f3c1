"""Wire protocol: spawned-process and TCP transports against a toy worker."""

import base64
import json
import os
import socket
import sys
import threading

import numpy as np
import pytest

from cpda.classifiers import parse_backend_spec
from cpda.errors import BackendUnavailable, ProtocolError

WORKER = os.path.join(os.path.dirname(__file__), "proto_worker.py")


def worker_spec(mode="echo"):
    return f"exec:{sys.executable} {WORKER} {mode}"


def mean_prob(img):
    return img.sum(dtype=np.float64) / (img.size * 255.0)


@pytest.fixture
def img8():
    rng = np.random.default_rng(0)
    return rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)


class TestStdioTransport:
    def test_echo_matches_local_mean(self, img8):
        with parse_backend_spec(worker_spec(), 8) as backend:
            probs = backend.classify(img8)
        assert probs.tolist() == [mean_prob(img8)]

    def test_pipelined_batch_preserves_order(self, img8):
        rng = np.random.default_rng(1)
        imgs = [rng.integers(0, 256, (8, 8, 3), dtype=np.uint8) for _ in range(6)]
        with parse_backend_spec(worker_spec(), 8) as backend:
            out = backend.classify_batch(imgs)
        assert [d[0] for d in out] == [mean_prob(im) for im in imgs]

    def test_out_of_order_replies_are_matched_by_id(self, img8):
        rng = np.random.default_rng(2)
        imgs = [rng.integers(0, 256, (8, 8, 3), dtype=np.uint8) for _ in range(4)]
        with parse_backend_spec(worker_spec("shuffle=4"), 8) as backend:
            out = backend.classify_batch(imgs)
        assert [d[0] for d in out] == [mean_prob(im) for im in imgs]

    def test_error_reply_reports_batch_index(self, img8):
        with parse_backend_spec(worker_spec("error-at=2"), 8) as backend:
            with pytest.raises(ProtocolError, match="batch element 2"):
                backend.classify_batch([img8] * 4)

    def test_garbage_line_is_protocol_error(self, img8):
        with parse_backend_spec(worker_spec("garbage-at=0"), 8) as backend:
            with pytest.raises(ProtocolError):
                backend.classify(img8)

    def test_timeout_is_backend_unavailable(self, img8):
        with parse_backend_spec(worker_spec("sleep=5"), 8, timeout=0.3) as backend:
            with pytest.raises(BackendUnavailable, match="timed out"):
                backend.classify(img8)

    def test_worker_exit_is_backend_unavailable(self, img8):
        with parse_backend_spec(worker_spec("quit-at=0"), 8) as backend:
            with pytest.raises(BackendUnavailable):
                backend.classify(img8)

    def test_missing_binary_is_backend_unavailable(self, img8):
        with parse_backend_spec("exec:/no/such/binary-anywhere", 8) as backend:
            with pytest.raises(BackendUnavailable):
                backend.classify(img8)

    def test_twoclass_worker(self, img8):
        with parse_backend_spec(worker_spec("twoclass"), 8) as backend:
            probs = backend.classify(img8)
        m = mean_prob(img8)
        assert probs.tolist() == [m, 1.0 - m]

    def test_ids_strictly_increase_across_calls(self, img8):
        with parse_backend_spec(worker_spec(), 8) as backend:
            backend.classify(img8)
            backend.classify_batch([img8, img8])
            assert backend._next_id == 3


def _echo_tcp_server(sock):
    conn, _ = sock.accept()
    with conn, conn.makefile("rwb") as stream:
        for line in stream:
            req = json.loads(line)
            data = base64.b64decode(req["pixels"])
            prob = sum(data) / (len(data) * 255)
            stream.write(
                json.dumps({"id": req["id"], "probs": [prob]}).encode() + b"\n"
            )
            stream.flush()


class TestTcpTransport:
    def test_echo_over_tcp(self, img8):
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.bind(("127.0.0.1", 0))
        server.listen(1)
        port = server.getsockname()[1]
        thread = threading.Thread(target=_echo_tcp_server, args=(server,), daemon=True)
        thread.start()
        try:
            with parse_backend_spec(f"tcp:127.0.0.1:{port}", 8) as backend:
                probs = backend.classify(img8)
            assert probs.tolist() == [mean_prob(img8)]
        finally:
            server.close()

    def test_refused_connection_is_backend_unavailable(self, img8):
        with parse_backend_spec("tcp:127.0.0.1:1", 8) as backend:
            with pytest.raises(BackendUnavailable):
                backend.classify(img8)
