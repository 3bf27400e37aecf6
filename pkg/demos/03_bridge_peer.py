"""Walk-through: a detector in another process, same adapter contract.

A bridge peer is any program answering line-delimited JSON on stdio or a
socket: hello, detect, features, grad, shutdown. This script is both
sides of the conversation. Run it plain and it saves detector weights,
spawns a copy of itself with --serve, probes the child for protocol
conformance, and computes a saliency map across the process boundary.
The serving half is the ~60 lines at the bottom; porting them to another
language or framework is the whole integration story.

Run as: python3 demos/03_bridge_peer.py
"""

import json
import pathlib
import sys
import tempfile

import numpy as np

from xsal import micro
from xsal.bridge import connect_stdio, decode_array, encode_array, run_conformance
from xsal.detectors import select_top_box
from xsal.errors import XsalError
from xsal.gradcam import GradCamConfig, gradcam_saliency


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        weights = pathlib.Path(tmp) / "weights"
        weights.mkdir()
        micro.save_weights(micro.brightness((32, 32), k=4), weights)
        print(f"saved detector weights to {weights}")
        for path in sorted(weights.iterdir()):
            print(f"  {path.name} ({path.stat().st_size} bytes)")

        cmd = [sys.executable, __file__, "--serve", str(weights)]
        print(f"\nspawning peer: {' '.join(cmd[1:])}")
        peer = connect_stdio(cmd)
        try:
            print(f"handshake done: input {peer.channels}x{peer.input_size[0]}"
                  f"x{peer.input_size[1]}, capabilities {sorted(peer.capabilities)}")

            # The conformance probe is what `xsal bridge-check` runs; it
            # exercises every advertised op plus recovery from bad requests.
            print("\nconformance probes:")
            report = run_conformance(peer._client)
            for line in report.lines():
                print(f"  {line}")
            print(f"  overall: {'OK' if report.ok else 'FAILED'}")

            # The peer is a full adapter, so the generators cannot tell it
            # from an in-process detector.
            image = np.full((3, 32, 32), 0.15)
            image[:, 8:20, 6:24] = 0.8
            image = image.astype(np.float32).astype(np.float64)  # survive the wire
            target = select_top_box(peer.detect(image))
            remote = gradcam_saliency(peer, image, target, GradCamConfig())

            local_adapter = micro.detect_adapter(micro.load_weights(weights))
            local = gradcam_saliency(local_adapter, image, target, GradCamConfig())
            dev = np.abs(remote - local).max()
            print(f"\ngradcam through the bridge vs in-process: max dev {dev:.2e}")
            assert dev < 1e-5
        finally:
            peer.close()
        print("peer shut down cleanly")


# ---------------------------------------------------------------- the peer

def serve(weights_dir: str) -> None:
    """Answer the wire protocol on stdio until shutdown or EOF."""
    adapter = micro.detect_adapter(micro.load_weights(weights_dir))
    last_dets = []
    for raw in sys.stdin:
        try:
            req = json.loads(raw)
            op = req.get("op")
            if op == "hello":
                reply = {
                    "ok": True,
                    "version": 1,
                    "capabilities": sorted(adapter.capabilities),
                    "input": [adapter.channels, *adapter.input_size],
                }
            elif op == "detect":
                image = decode_array(req.get("image")).astype(np.float64)
                last_dets = adapter.detect(image)
                reply = {"ok": True, "detections": [d.to_json() for d in last_dets]}
            elif op == "features":
                image = decode_array(req.get("image")).astype(np.float64)
                reply = {"ok": True, "features": encode_array(adapter.features(image))}
            elif op == "grad":
                image = decode_array(req.get("image")).astype(np.float64)
                index = req.get("target")
                if not isinstance(index, int) or not 0 <= index < len(last_dets):
                    raise XsalError(f"grad target {index!r} is not a prior detection")
                grads = adapter.grad_features(image, last_dets[index])
                reply = {"ok": True, "grads": encode_array(grads)}
            elif op == "shutdown":
                print(json.dumps({"ok": True}), flush=True)
                return
            else:
                raise XsalError(f"unknown op {op!r}")
        except (XsalError, json.JSONDecodeError, TypeError) as exc:
            reply = {"ok": False, "error": str(exc)}
        print(json.dumps(reply), flush=True)


if __name__ == "__main__":
    if len(sys.argv) == 3 and sys.argv[1] == "--serve":
        serve(sys.argv[2])
    else:
        main()
