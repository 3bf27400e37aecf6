"""Out-of-process detectors behind the adapter contract.

A bridge peer is any program that answers line-delimited JSON on a byte
stream, either its stdio (spawned as a child process) or a TCP socket. One
JSON object per line, one request in flight per connection:

    -> {"op": "hello", "version": 1}
    <- {"ok": true, "version": 1, "capabilities": ["detect", ...],
        "input": [C, H, W]}
    -> {"op": "detect", "image": {"shape": [C, H, W], "data": "<base64>"}}
    <- {"ok": true, "detections": [{"box": [x1, y1, x2, y2],
        "class_id": 0, "score": 0.9}, ...]}
    -> {"op": "features", "image": ...}
    <- {"ok": true, "features": {"shape": [N, h, w], "data": "<base64>"}}
    -> {"op": "grad", "image": ..., "target": 0}
    <- {"ok": true, "grads": {"shape": [N, h, w], "data": "<base64>"}}
    -> {"op": "shutdown"}
    <- {"ok": true}

Array payloads are base64-wrapped little-endian float32, C order. Failures
come back as {"ok": false, "error": "..."} and leave the connection usable.
The grad target is an index into the peer's most recent detect reply, so
the client re-detects on the same connection before asking.
"""

from __future__ import annotations

import base64
import json
import shlex
import socket
import subprocess
import threading
from dataclasses import dataclass, field

import numpy as np

from .detectors import (
    CAP_DETECT,
    CAP_FEATURES,
    CAP_GRAD,
    Detection,
    DetectorAdapter,
    check_adapter_input,
    match_box,
)
from .errors import (
    ConnectionLostError,
    IncompatiblePeerError,
    NoMatchError,
    ProtocolError,
    AdapterError,
)

PROTOCOL_VERSION = 1
KNOWN_CAPABILITIES = (CAP_DETECT, CAP_FEATURES, CAP_GRAD)


def encode_array(arr: np.ndarray) -> dict:
    """Wrap an array for the wire: shape plus base64 float32 bytes."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_array(obj) -> np.ndarray:
    """Inverse of :func:`encode_array`; raises ProtocolError on bad payloads."""
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise ProtocolError(f"array payload must carry 'shape' and 'data', got {obj!r:.120}")
    shape = obj["shape"]
    if (
        not isinstance(shape, list)
        or not shape
        or not all(isinstance(d, int) and d >= 1 for d in shape)
    ):
        raise ProtocolError(f"bad array shape {shape!r}")
    try:
        raw = base64.b64decode(obj["data"], validate=True)
    except (ValueError, TypeError) as exc:
        raise ProtocolError(f"array data is not valid base64: {exc}") from exc
    count = int(np.prod(shape))
    if len(raw) != 4 * count:
        raise ProtocolError(
            f"array data holds {len(raw)} bytes, shape {shape} needs {4 * count}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


class StdioTransport:
    """Child process speaking the protocol on its stdin/stdout."""

    def __init__(self, cmd: str | list[str]):
        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        if not argv:
            raise AdapterError("empty bridge command")
        self.name = " ".join(argv)
        # stderr is inherited so peer diagnostics stay visible.
        self._proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def send_line(self, line: str) -> None:
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(line.encode("utf-8") + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ConnectionLostError(f"{self.name}: peer closed stdin ({exc})") from exc

    def recv_line(self) -> str:
        assert self._proc.stdout is not None
        line = self._proc.stdout.readline()
        if not line:
            code = self._proc.poll()
            raise ConnectionLostError(f"{self.name}: peer exited (returncode {code})")
        return line.decode("utf-8")

    def close(self) -> None:
        for stream in (self._proc.stdin, self._proc.stdout):
            if stream is not None:
                try:
                    stream.close()
                except OSError:
                    pass
        try:
            self._proc.wait(timeout=5.0)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class TcpTransport:
    """Socket connection to a peer that is already listening."""

    def __init__(self, host: str, port: int, timeout: float | None = 60.0):
        self.name = f"{host}:{port}"
        try:
            self._sock = socket.create_connection((host, port), timeout=10.0)
        except OSError as exc:
            raise ConnectionLostError(f"{self.name}: connect failed ({exc})") from exc
        self._sock.settimeout(timeout)
        self._reader = self._sock.makefile("rb")

    def send_line(self, line: str) -> None:
        try:
            self._sock.sendall(line.encode("utf-8") + b"\n")
        except OSError as exc:
            raise ConnectionLostError(f"{self.name}: send failed ({exc})") from exc

    def recv_line(self) -> str:
        try:
            line = self._reader.readline()
        except OSError as exc:
            raise ConnectionLostError(f"{self.name}: receive failed ({exc})") from exc
        if not line:
            raise ConnectionLostError(f"{self.name}: peer closed the connection")
        return line.decode("utf-8")

    def close(self) -> None:
        try:
            self._reader.close()
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


class BridgeClient:
    """Request/reply layer over a transport, plus the handshake."""

    def __init__(self, transport):
        self._transport = transport
        self._lock = threading.Lock()
        self.name = transport.name
        self.version: int | None = None
        self.capabilities: frozenset[str] = frozenset()
        self.input_chw: tuple[int, int, int] | None = None

    def request(self, obj: dict) -> dict:
        """Send one request and block for its reply; ok: false raises."""
        with self._lock:
            self._transport.send_line(json.dumps(obj, separators=(",", ":")))
            line = self._transport.recv_line()
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"{self.name}: reply is not JSON: {line!r:.120}") from exc
        if not isinstance(reply, dict):
            raise ProtocolError(f"{self.name}: reply is not an object: {line!r:.120}")
        if reply.get("ok") is not True:
            raise AdapterError(f"{self.name}: {reply.get('error', 'unspecified peer error')}")
        return reply

    def hello(self) -> None:
        reply = self.request({"op": "hello", "version": PROTOCOL_VERSION})
        version = reply.get("version")
        if version != PROTOCOL_VERSION:
            raise IncompatiblePeerError(
                f"{self.name}: peer speaks version {version!r}, need {PROTOCOL_VERSION}"
            )
        caps = reply.get("capabilities")
        if not isinstance(caps, list) or not all(isinstance(c, str) for c in caps):
            raise ProtocolError(f"{self.name}: bad capabilities {caps!r}")
        # Unknown tokens are allowed for forward compatibility and ignored.
        self.capabilities = frozenset(caps) & frozenset(KNOWN_CAPABILITIES)
        if CAP_DETECT not in self.capabilities:
            raise IncompatiblePeerError(f"{self.name}: peer does not offer 'detect'")
        shape = reply.get("input")
        if (
            not isinstance(shape, list)
            or len(shape) != 3
            or not all(isinstance(d, int) and d >= 1 for d in shape)
        ):
            raise ProtocolError(f"{self.name}: bad input shape {shape!r}")
        self.version = version
        self.input_chw = (shape[0], shape[1], shape[2])

    def detect(self, image: np.ndarray) -> list[Detection]:
        reply = self.request({"op": "detect", "image": encode_array(image)})
        dets = reply.get("detections")
        if not isinstance(dets, list):
            raise ProtocolError(f"{self.name}: bad detections payload {dets!r:.120}")
        try:
            return [Detection.from_json(d) for d in dets]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"{self.name}: malformed detection ({exc})") from exc

    def features(self, image: np.ndarray) -> np.ndarray:
        reply = self.request({"op": "features", "image": encode_array(image)})
        arr = decode_array(reply.get("features"))
        if arr.ndim != 3:
            raise ProtocolError(f"{self.name}: features must be (N, h, w), got {arr.shape}")
        return arr

    def grad(self, image: np.ndarray, target_index: int) -> np.ndarray:
        reply = self.request(
            {"op": "grad", "image": encode_array(image), "target": int(target_index)}
        )
        arr = decode_array(reply.get("grads"))
        if arr.ndim != 3:
            raise ProtocolError(f"{self.name}: grads must be (N, h, w), got {arr.shape}")
        return arr

    def shutdown(self) -> None:
        try:
            self.request({"op": "shutdown"})
        except AdapterError:
            pass  # already gone is fine, that was the goal

    def close(self) -> None:
        self._transport.close()


class BridgeAdapter(DetectorAdapter):
    """Adapter view of a handshaken bridge peer.

    One request runs at a time, so the adapter reports itself as not safe
    for concurrent calls and the evaluation loop serializes around it.
    """

    concurrent_safe = False

    def __init__(self, client: BridgeClient):
        if client.input_chw is None:
            raise ProtocolError(f"{client.name}: handshake has not completed")
        self._client = client
        c, h, w = client.input_chw
        self.channels = c
        self.input_size = (h, w)
        self.capabilities = client.capabilities
        self.description = f"bridge[{client.name}]"

    def detect(self, image: np.ndarray) -> list[Detection]:
        check_adapter_input(self, image)
        return self._client.detect(image)

    def features(self, image: np.ndarray) -> np.ndarray:
        check_adapter_input(self, image)
        return self._client.features(image).astype(np.float64)

    def grad_features(self, image: np.ndarray, target: Detection) -> np.ndarray:
        # The wire target is positional in the peer's last detect reply, so
        # re-detect on this connection and locate the detection there.
        check_adapter_input(self, image)
        dets = self._client.detect(image)
        index = None
        for i, det in enumerate(dets):
            if det == target:
                index = i
                break
        if index is None:
            rematch = match_box(dets, target)
            if rematch is None:
                raise NoMatchError(
                    f"{self.description}: target {target} not present in peer detections"
                )
            index = dets.index(rematch)
        return self._client.grad(image, index).astype(np.float64)

    def close(self) -> None:
        self._client.shutdown()
        self._client.close()

    def __enter__(self) -> "BridgeAdapter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def connect_stdio(cmd: str | list[str]) -> BridgeAdapter:
    """Spawn a child-process peer and complete the handshake."""
    client = BridgeClient(StdioTransport(cmd))
    try:
        client.hello()
    except Exception:
        client.close()
        raise
    return BridgeAdapter(client)


def connect_tcp(host: str, port: int, timeout: float | None = 60.0) -> BridgeAdapter:
    """Connect to a listening peer and complete the handshake."""
    client = BridgeClient(TcpTransport(host, port, timeout))
    try:
        client.hello()
    except Exception:
        client.close()
        raise
    return BridgeAdapter(client)


@dataclass
class ConformanceReport:
    """Outcome of the behavioral probe suite against one peer."""

    peer: str
    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append((name, passed, detail))

    def lines(self) -> list[str]:
        out = []
        for name, passed, detail in self.checks:
            mark = "pass" if passed else "FAIL"
            out.append(f"[{mark}] {name}" + (f": {detail}" if detail else ""))
        return out


def _probe_image(chw: tuple[int, int, int]) -> np.ndarray:
    """Deterministic smooth ramp covering the full [0, 1] range."""
    c, h, w = chw
    ys = np.linspace(0.0, 1.0, h)[:, None]
    xs = np.linspace(0.0, 1.0, w)[None, :]
    plane = (ys + xs) / 2.0
    return np.broadcast_to(plane, (c, h, w)).copy()


def run_conformance(client: BridgeClient) -> ConformanceReport:
    """Probe a handshaken peer for protocol conformance.

    Exercises the happy path of every advertised capability, determinism
    across repeated calls, and recovery from malformed requests. Leaves the
    connection open; the caller decides when to shut the peer down.
    """
    report = ConformanceReport(peer=client.name)
    if client.input_chw is None:
        client.hello()
    report.add(
        "hello",
        True,
        f"version {client.version}, input {list(client.input_chw)}, "
        f"capabilities {sorted(client.capabilities)}",
    )
    image = _probe_image(client.input_chw)

    dets: list[Detection] = []
    try:
        dets = client.detect(image)
        report.add("detect", True, f"{len(dets)} detections, all well-formed")
    except (ProtocolError, AdapterError) as exc:
        report.add("detect", False, str(exc))

    try:
        again = client.detect(image)
        same = [d.to_json() for d in again] == [d.to_json() for d in dets]
        report.add("detect-deterministic", same, "" if same else "replies differ")
    except (ProtocolError, AdapterError) as exc:
        report.add("detect-deterministic", False, str(exc))

    # A broken request must produce ok: false, not kill the connection.
    # ConnectionLostError subclasses AdapterError, so it is caught first.
    try:
        client.request({"op": "no-such-op"})
        report.add("error-unknown-op", False, "peer accepted an unknown op")
    except (ConnectionLostError, ProtocolError) as exc:
        report.add("error-unknown-op", False, str(exc))
    except AdapterError:
        report.add("error-unknown-op", True, "rejected with ok: false")

    try:
        bad = {"shape": list(client.input_chw), "data": base64.b64encode(b"\0" * 8).decode()}
        client.request({"op": "detect", "image": bad})
        report.add("error-short-payload", False, "peer accepted a truncated array")
    except (ConnectionLostError, ProtocolError) as exc:
        report.add("error-short-payload", False, str(exc))
    except AdapterError:
        report.add("error-short-payload", True, "rejected with ok: false")

    try:
        client.detect(image)
        report.add("usable-after-error", True)
    except (ProtocolError, AdapterError, ConnectionLostError) as exc:
        report.add("usable-after-error", False, str(exc))

    feats = None
    if CAP_FEATURES in client.capabilities:
        try:
            feats = client.features(image)
            repeat = client.features(image)
            if feats.shape != repeat.shape or not np.array_equal(feats, repeat):
                report.add("features", False, "repeated calls disagree")
            else:
                report.add("features", True, f"shape {feats.shape}")
        except (ProtocolError, AdapterError) as exc:
            report.add("features", False, str(exc))

    if CAP_GRAD in client.capabilities:
        if not dets:
            report.add("grad", True, "skipped, peer found no detections to target")
        else:
            try:
                client.detect(image)  # make index 0 refer to this image
                grads = client.grad(image, 0)
                shape_ok = feats is None or grads.shape == feats.shape
                report.add(
                    "grad",
                    shape_ok,
                    f"shape {grads.shape}" if shape_ok else
                    f"shape {grads.shape} does not match features {feats.shape}",
                )
            except (ProtocolError, AdapterError) as exc:
                report.add("grad", False, str(exc))

    return report
