"""Black-box classifier backends behind one uniform interface.

Analytic built-ins serve as oracles and saturation demos; the external
backend talks to any real model over a newline-delimited JSON protocol
(spawned process or TCP), so the toolkit itself never loads model weights.

All backends receive raw 8-bit RGB/grayscale pixels; any normalization is
the backend's own business.  Callers resize images to ``input_side`` first.

Wire protocol (one JSON object per line, UTF-8):

    request:  {"id": <uint64>, "h": <int>, "w": <int>, "c": <int>,
               "pixels": "<base64 of row-major 8-bit samples>"}
    response: {"id": <same uint64>, "probs": [<float>, ...]}
    error:    {"id": <uint64>, "error": "<message>"}

Request ids are strictly increasing per connection; replies may arrive out
of order and are matched by id.
"""

from __future__ import annotations

import base64
import json
import math
import select
import shlex
import socket
import subprocess
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .core import as_image, validate_distribution
from .errors import (
    BackendUnavailable,
    DimensionMismatch,
    EmptyGroups,
    ProtocolError,
    RegionOutOfBounds,
)


@dataclass
class InferenceCounter:
    """Tally of backend usage; a batched call counts once but covers many images."""

    calls: int = 0
    images_classified: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, images: int) -> None:
        with self._lock:
            self.calls += 1
            self.images_classified += images

    def reset(self) -> None:
        with self._lock:
            self.calls = 0
            self.images_classified = 0

    def snapshot(self) -> tuple[int, int]:
        with self._lock:
            return self.calls, self.images_classified


class Classifier:
    """Base class: size validation, counting, and the batch convenience."""

    def __init__(self, input_side: int):
        if input_side < 1:
            raise ValueError(f"input_side must be >= 1, got {input_side}")
        self.input_side = input_side
        self.counter = InferenceCounter()

    def _check(self, img) -> np.ndarray:
        a = as_image(img)
        if a.shape[0] != self.input_side or a.shape[1] != self.input_side:
            raise DimensionMismatch(
                f"backend expects {self.input_side}x{self.input_side}, got {a.shape[0]}x{a.shape[1]}"
            )
        return a

    def classify(self, img) -> np.ndarray:
        a = self._check(img)
        self.counter.add(1)
        return validate_distribution(self._predict(a))

    def classify_batch(self, imgs) -> list[np.ndarray]:
        imgs = list(imgs)
        if not imgs:
            return []
        checked = [self._check(im) for im in imgs]
        self.counter.add(len(checked))
        out = []
        for i, a in enumerate(checked):
            try:
                out.append(validate_distribution(self._predict(a)))
            except Exception as e:
                raise type(e)(f"batch element {i}: {e}") from e
        return out

    def _predict(self, img: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class ConstantClassifier(Classifier):
    """Ignores the image and always returns the same distribution."""

    def __init__(self, probs, input_side: int):
        super().__init__(input_side)
        self.probs = validate_distribution(np.atleast_1d(np.asarray(probs, dtype=np.float64)))

    def _predict(self, img):
        return self.probs.copy()


@dataclass(frozen=True)
class GroupDef:
    """Disjoint pixel-index groups over a flat row-major (h*w) pixel space.

    A group's activation on an image is the mean of all its samples (every
    channel of every member pixel) scaled to [0, 1]; the sum is taken exactly
    in float64 and divided once, so equal computations agree bit-for-bit
    across processes.
    """

    groups: tuple

    def __post_init__(self):
        if len(self.groups) == 0:
            raise EmptyGroups("need at least one feature group")
        norm = tuple(np.unique(np.asarray(g, dtype=np.int64)) for g in self.groups)
        seen = np.concatenate(norm)
        if len(np.unique(seen)) != len(seen):
            raise ValueError("feature groups must be disjoint")
        for g in norm:
            if g.size == 0:
                raise ValueError("feature groups must be non-empty")
            if g.min() < 0:
                raise ValueError("pixel indices must be >= 0")
        object.__setattr__(self, "groups", norm)

    @classmethod
    def from_rects(cls, rects, n: int) -> "GroupDef":
        """Build groups from (top, left, height, width) rects on an n-by-n frame."""
        groups = []
        for (t, l, h, w) in rects:
            if t < 0 or l < 0 or t + h > n or l + w > n or h < 1 or w < 1:
                raise RegionOutOfBounds(f"rect {(t, l, h, w)} outside {n}x{n}")
            rr, cc = np.meshgrid(np.arange(t, t + h), np.arange(l, l + w), indexing="ij")
            groups.append((rr * n + cc).ravel())
        return cls(groups=tuple(groups))

    def max_index(self) -> int:
        return int(max(g.max() for g in self.groups))

    def activations(self, img: np.ndarray) -> np.ndarray:
        a = as_image(img)
        h, w, c = a.shape
        if self.max_index() >= h * w:
            raise RegionOutOfBounds("group pixel index outside image")
        flat = a.reshape(h * w, c)
        return np.array(
            [flat[g].sum(dtype=np.float64) / (g.size * c * 255.0) for g in self.groups]
        )


def max_group_eval(groups: GroupDef, img) -> float:
    """Probability = max over group activations."""
    return float(groups.activations(img).max())


def saturated_or_eval(groups: GroupDef, img) -> float:
    """Probability = 1 - prod(1 - activation) over groups (noisy-OR)."""
    acts = groups.activations(img)
    return float(1.0 - np.prod(1.0 - acts))


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def linear_region_eval(rect, weight: float, bias: float, img) -> float:
    """Logistic of (weight * mean intensity inside rect + bias).

    ``rect`` is (top, left, height, width); the mean is over all samples in
    the rect scaled to [0, 1].
    """
    a = as_image(img)
    t, l, h, w = rect
    if t < 0 or l < 0 or h < 1 or w < 1 or t + h > a.shape[0] or l + w > a.shape[1]:
        raise RegionOutOfBounds(f"rect {rect} outside image {a.shape[0]}x{a.shape[1]}")
    window = a[t:t + h, l:l + w]
    mean = window.sum(dtype=np.float64) / (window.size * 255.0)
    return _sigmoid(weight * mean + bias)


class MaxGroupClassifier(Classifier):
    """Single-output backend: score = max of group activations.

    Saturated by construction; removing evidence outside the strongest group
    leaves the score unchanged.
    """

    def __init__(self, groups: GroupDef, input_side: int):
        super().__init__(input_side)
        if groups.max_index() >= input_side * input_side:
            raise RegionOutOfBounds("group pixel index outside backend input frame")
        self.groups = groups

    def _predict(self, img):
        return np.array([max_group_eval(self.groups, img)])


class SaturatedOrClassifier(Classifier):
    """Single-output noisy-OR backend: score = 1 - prod(1 - activation)."""

    def __init__(self, groups: GroupDef, input_side: int):
        super().__init__(input_side)
        if groups.max_index() >= input_side * input_side:
            raise RegionOutOfBounds("group pixel index outside backend input frame")
        self.groups = groups

    def _predict(self, img):
        return np.array([saturated_or_eval(self.groups, img)])


class LinearRegionClassifier(Classifier):
    """Single-output logistic of the mean intensity inside a fixed rect."""

    def __init__(self, rect, weight: float, bias: float, input_side: int):
        super().__init__(input_side)
        t, l, h, w = rect
        if t < 0 or l < 0 or h < 1 or w < 1 or t + h > input_side or l + w > input_side:
            raise RegionOutOfBounds(f"rect {rect} outside backend input frame")
        self.rect = (int(t), int(l), int(h), int(w))
        self.weight = float(weight)
        self.bias = float(bias)

    def _predict(self, img):
        return np.array([linear_region_eval(self.rect, self.weight, self.bias, img)])


class _StdioTransport:
    """Line transport over a spawned process's stdin/stdout."""

    def __init__(self, command: str):
        self.command = command
        self.proc = None
        self._buf = bytearray()

    def open(self):
        try:
            self.proc = subprocess.Popen(
                shlex.split(self.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as e:
            raise BackendUnavailable(f"cannot spawn {self.command!r}: {e}") from e

    def send_line(self, data: bytes):
        try:
            self.proc.stdin.write(data + b"\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise BackendUnavailable(f"backend process went away: {e}") from e

    def read_line(self, deadline: float) -> bytes:
        fd = self.proc.stdout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = bytes(self._buf[:nl])
                del self._buf[:nl + 1]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BackendUnavailable("timed out waiting for backend reply")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise BackendUnavailable("timed out waiting for backend reply")
            chunk = fd.read1(65536)
            if not chunk:
                raise BackendUnavailable("backend closed its output stream")
            self._buf.extend(chunk)

    def close(self):
        if self.proc is not None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
            self.proc = None


class _TcpTransport:
    """Line transport over a TCP connection."""

    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port
        self.sock = None
        self.reader = None

    def open(self):
        try:
            self.sock = socket.create_connection((self.host, self.port), timeout=10)
            self.reader = self.sock.makefile("rb")
        except OSError as e:
            raise BackendUnavailable(f"cannot connect to {self.host}:{self.port}: {e}") from e

    def send_line(self, data: bytes):
        try:
            self.sock.sendall(data + b"\n")
        except OSError as e:
            raise BackendUnavailable(f"backend connection lost: {e}") from e

    def read_line(self, deadline: float) -> bytes:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise BackendUnavailable("timed out waiting for backend reply")
        self.sock.settimeout(remaining)
        try:
            line = self.reader.readline()
        except socket.timeout as e:
            raise BackendUnavailable("timed out waiting for backend reply") from e
        except OSError as e:
            raise BackendUnavailable(f"backend connection lost: {e}") from e
        if not line:
            raise BackendUnavailable("backend closed the connection")
        return line.rstrip(b"\n")

    def close(self):
        if self.sock is not None:
            try:
                self.sock.close()
            except OSError:
                pass
            self.sock = None


class ExternalClassifier(Classifier):
    """Client side of the wire protocol; requests are pipelined per batch.

    Ids are strictly increasing per connection; replies may arrive in any
    order and are matched by id.  An ``error`` object surfaces as
    :class:`ProtocolError`; transport failures and timeouts surface as
    :class:`BackendUnavailable`.
    """

    def __init__(self, transport, input_side: int, timeout: float = 30.0):
        super().__init__(input_side)
        self._transport = transport
        self._timeout = timeout
        self._next_id = 0
        self._opened = False
        self._lock = threading.Lock()

    def _ensure_open(self):
        if not self._opened:
            self._transport.open()
            self._opened = True

    def _predict(self, img):
        return self._exchange([img])[0]

    # One pipelined round trip per batch: write every request, then collect.
    def classify_batch(self, imgs) -> list[np.ndarray]:
        imgs = list(imgs)
        if not imgs:
            return []
        checked = [self._check(im) for im in imgs]
        self.counter.add(len(checked))
        return self._exchange(checked)

    def _exchange(self, imgs: list[np.ndarray]) -> list[np.ndarray]:
        with self._lock:
            self._ensure_open()
            ids = []
            for a in imgs:
                rid = self._next_id
                self._next_id += 1
                ids.append(rid)
                req = {
                    "id": rid,
                    "h": a.shape[0],
                    "w": a.shape[1],
                    "c": a.shape[2],
                    "pixels": base64.b64encode(a.tobytes()).decode("ascii"),
                }
                self._transport.send_line(json.dumps(req).encode("utf-8"))
            deadline = time.monotonic() + self._timeout
            replies: dict[int, object] = {}
            wanted = set(ids)
            while wanted:
                line = self._transport.read_line(deadline)
                if not line.strip():
                    continue
                try:
                    msg = json.loads(line.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as e:
                    raise ProtocolError(f"unparseable reply line: {e}") from e
                rid = msg.get("id")
                if rid not in wanted:
                    raise ProtocolError(f"reply for unknown id {rid!r}", request_id=rid)
                replies[rid] = msg
                wanted.discard(rid)
        out = []
        for i, rid in enumerate(ids):
            msg = replies[rid]
            if "error" in msg:
                raise ProtocolError(
                    f"batch element {i}: backend error: {msg['error']}", request_id=rid
                )
            if "probs" not in msg or not isinstance(msg["probs"], list):
                raise ProtocolError(f"batch element {i}: reply missing probs", request_id=rid)
            try:
                out.append(validate_distribution(np.asarray(msg["probs"], dtype=np.float64)))
            except Exception as e:
                raise ProtocolError(f"batch element {i}: bad distribution: {e}", request_id=rid) from e
        return out

    def close(self):
        if self._opened:
            self._transport.close()
            self._opened = False


def load_groups(path, n: int) -> GroupDef:
    """Read a groups file: JSON {"groups": [[pixel indices] | {"rect": [t,l,h,w]}]}."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = doc["groups"]
    groups = []
    for entry in entries:
        if isinstance(entry, dict):
            t, l, h, w = entry["rect"]
            got = GroupDef.from_rects([(t, l, h, w)], n)
            groups.append(got.groups[0])
        else:
            groups.append(np.asarray(entry, dtype=np.int64))
    return GroupDef(groups=tuple(groups))


def parse_backend_spec(text: str, input_side: int, timeout: float = 30.0) -> Classifier:
    """Build a classifier from a flat spec string.

    Grammar:
        analytic:constant:<p[,p,...]>
        analytic:max-group:<groups.json>
        analytic:saturated-or:<groups.json>
        analytic:linear:<top,left,h,w,weight,bias>
        exec:<command line>
        tcp:<host:port>
    """
    kind, _, rest = text.partition(":")
    if kind == "analytic":
        sub, _, arg = rest.partition(":")
        if sub == "constant":
            probs = [float(p) for p in arg.split(",") if p != ""]
            return ConstantClassifier(probs, input_side)
        if sub == "max-group":
            return MaxGroupClassifier(load_groups(arg, input_side), input_side)
        if sub == "saturated-or":
            return SaturatedOrClassifier(load_groups(arg, input_side), input_side)
        if sub == "linear":
            parts = arg.split(",")
            if len(parts) != 6:
                raise ValueError(f"linear backend wants top,left,h,w,weight,bias, got {arg!r}")
            t, l, h, w = (int(p) for p in parts[:4])
            return LinearRegionClassifier((t, l, h, w), float(parts[4]), float(parts[5]), input_side)
        raise ValueError(f"unknown analytic backend {sub!r}")
    if kind == "exec":
        if not rest:
            raise ValueError("exec backend needs a command line")
        return ExternalClassifier(_StdioTransport(rest), input_side, timeout=timeout)
    if kind == "tcp":
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"tcp backend wants host:port, got {rest!r}")
        return ExternalClassifier(_TcpTransport(host, int(port)), input_side, timeout=timeout)
    raise ValueError(f"unknown backend kind {kind!r}")
