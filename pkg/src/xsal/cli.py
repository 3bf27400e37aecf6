"""Command-line surface.

Subcommands:
    explain       one image, one method -> saliency .f32t + overlay PNG + manifest
    evaluate      curves and AUCs for a method or a saved map
    baseline      chance-level AUCs from random pixel orderings
    batch         sweep a directory, print a mean±std table per method
    bridge-check  protocol conformance probes against a bridge peer

Adapter specs:
    micro:brightness          brightness-gated preset detector
    micro:seeded:SEED         randomly weighted preset detector
    micro:weights:DIR         weights loaded from a saved directory
    bridge[:COMMAND]          child process on stdio (default $XSAL_BRIDGE_CMD)
    bridge-tcp:HOST:PORT      already-running TCP peer

Usage errors exit 2; runtime failures print a diagnostic and exit 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import bridge, micro, pipeline
from .detectors import BBox, Detection, DetectorAdapter, match_box, select_top_box
from .errors import XsalError
from .gradcam import GradCamConfig, gradcam_saliency
from .metrics import CurveConfig, causal_curves, random_baseline
from .rise import RiseConfig, rise_saliency
from .sidu import SiduConfig, sidu_saliency
from .tensor_ops import read_f32t, write_f32t

METHODS = ("gradcam", "rise", "sidu")

BRIDGE_ENV = "XSAL_BRIDGE_CMD"


def _build_adapter(spec: str, size: tuple[int, int]) -> DetectorAdapter:
    if spec == "micro:brightness":
        return micro.detect_adapter(micro.brightness(size))
    if spec.startswith("micro:seeded:"):
        return micro.detect_adapter(micro.seeded_random(size, int(spec.split(":", 2)[2])))
    if spec.startswith("micro:weights:"):
        return micro.detect_adapter(micro.load_weights(spec.split(":", 2)[2]))
    if spec == "bridge" or spec.startswith("bridge:"):
        cmd = spec.split(":", 1)[1] if ":" in spec else os.environ.get(BRIDGE_ENV, "")
        if not cmd:
            raise XsalError(f"adapter 'bridge' needs a command ({BRIDGE_ENV} is unset)")
        return bridge.connect_stdio(cmd)
    if spec.startswith("bridge-tcp:"):
        _, host, port = spec.split(":", 2)
        return bridge.connect_tcp(host, int(port))
    raise XsalError(f"unknown adapter spec {spec!r}")


def _close_adapter(adapter: DetectorAdapter) -> None:
    close = getattr(adapter, "close", None)
    if close is not None:
        close()


def _parse_box(text: str) -> BBox:
    parts = text.split(",")
    if len(parts) != 4:
        raise XsalError(f"--target needs x1,y1,x2,y2, got {text!r}")
    return BBox(*(float(p) for p in parts))


def _resolve_target(adapter: DetectorAdapter, image, box: BBox | None) -> Detection:
    dets = adapter.detect(image)
    if box is None:
        return select_top_box(dets)
    probe = Detection(box=box, class_id=0, score=1.0)
    found = match_box(dets, probe)
    if found is None:
        raise XsalError(f"no detection matches the requested box {box}")
    return found


def _method_config(method: str, args):
    if method == "gradcam":
        return GradCamConfig(
            apply_relu=args.relu_mode != "off",
            relu_after_sum=args.relu_mode == "after-sum",
            upsample_to_input=not args.no_upsample,
        )
    if method == "rise":
        return RiseConfig(
            n_masks=args.masks,
            grid=args.grid,
            p_on=args.p_on,
            seed=args.seed,
            batch=args.batch,
        )
    return SiduConfig(
        sigma=args.sigma,
        binarize=not args.no_binarize,
        bin_threshold=args.bin_threshold,
        batch=args.batch,
    )


def _config_from_snapshot(method: str, snap: dict):
    cls = {"gradcam": GradCamConfig, "rise": RiseConfig, "sidu": SiduConfig}[method]
    return cls(**snap)


def _saliency(method: str, adapter, image, target, cfg) -> np.ndarray:
    if method == "gradcam":
        return gradcam_saliency(adapter, image, target, cfg)
    if method == "rise":
        return rise_saliency(adapter, image, target, cfg)
    return sidu_saliency(adapter, image, target, cfg)


def _curve_config(args) -> CurveConfig:
    return CurveConfig(
        steps=args.steps,
        fill=args.fill,
        blur_sigma=args.blur_sigma,
        blur_radius=args.blur_radius,
        batch=args.batch,
    )


def _out_prefix(args, default_tag: str) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prefix = args.prefix or f"{Path(args.image).stem}.{default_tag}"
    return out / prefix


def _with_ext(prefix: Path, ext: str) -> Path:
    # Appends rather than Path.with_suffix, which would eat the method tag.
    return prefix.parent / (prefix.name + ext)


def _load_for(adapter_spec: str, args):
    """Build the adapter, then load the image at the size it dictates."""
    size = (args.size[0], args.size[1])
    adapter = _build_adapter(adapter_spec, size)
    image = pipeline.load_image(args.image, size=adapter.input_size)
    return adapter, image


def cmd_explain(args) -> int:
    if args.replay:
        return _replay_explain(args)
    adapter, image = _load_for(args.adapter, args)
    try:
        t0 = time.perf_counter()
        target = _resolve_target(adapter, image, args.target)
        t1 = time.perf_counter()
        cfg = _method_config(args.method, args)
        saliency = _saliency(args.method, adapter, image, target, cfg)
        t2 = time.perf_counter()
    finally:
        _close_adapter(adapter)

    prefix = _out_prefix(args, args.method)
    map_path = _with_ext(prefix, ".f32t")
    overlay_path = _with_ext(prefix, ".overlay.png")
    manifest_path = _with_ext(prefix, ".manifest.json")
    write_f32t(map_path, saliency)
    pipeline.save_image_png(overlay_path, pipeline.render_overlay(image, saliency, target.box))
    manifest = pipeline.RunManifest(
        command="explain",
        adapter_spec=args.adapter,
        adapter_description=adapter.description,
        image_path=str(args.image),
        image_sha256=pipeline.file_sha256(args.image),
        image_size=adapter.input_size,
        method=args.method,
        configs={args.method: dataclasses.asdict(cfg)},
        target=target.to_json(),
        outputs={"saliency": str(map_path), "overlay": str(overlay_path)},
        timings={"detect_s": t1 - t0, "saliency_s": t2 - t1},
    )
    pipeline.write_manifest(manifest_path, manifest)
    for p in (map_path, overlay_path, manifest_path):
        print(p)
    return 0


def _replay_explain(args) -> int:
    manifest = pipeline.read_manifest(args.replay)
    if manifest.command != "explain":
        raise XsalError(f"{args.replay}: manifest records {manifest.command!r}, not explain")
    digest = pipeline.file_sha256(manifest.image_path)
    if digest != manifest.image_sha256:
        raise XsalError(
            f"{manifest.image_path}: content changed since the manifest was written"
        )
    method = manifest.method
    cfg = _config_from_snapshot(method, manifest.configs[method])
    target = Detection.from_json(manifest.target)

    adapter = _build_adapter(manifest.adapter_spec, tuple(manifest.image_size))
    try:
        image = pipeline.load_image(manifest.image_path, size=adapter.input_size)
        saliency = _saliency(method, adapter, image, target, cfg)
    finally:
        _close_adapter(adapter)

    args.image = manifest.image_path
    prefix = _out_prefix(args, method)
    map_path = _with_ext(prefix, ".f32t")
    overlay_path = _with_ext(prefix, ".overlay.png")
    write_f32t(map_path, saliency)
    pipeline.save_image_png(overlay_path, pipeline.render_overlay(image, saliency, target.box))
    print(map_path)
    print(overlay_path)
    return 0


def cmd_evaluate(args) -> int:
    adapter, image = _load_for(args.adapter, args)
    try:
        target = _resolve_target(adapter, image, args.target)
        configs = {}
        if args.map is not None:
            saliency = read_f32t(args.map).astype(np.float64)
            if saliency.shape[0] != 1:
                raise XsalError(f"{args.map}: expected a single-map file")
            saliency = saliency[0]
            tag = Path(args.map).stem
        else:
            cfg = _method_config(args.method, args)
            configs[args.method] = dataclasses.asdict(cfg)
            saliency = _saliency(args.method, adapter, image, target, cfg)
            tag = args.method
        curve_cfg = _curve_config(args)
        configs["curve"] = dataclasses.asdict(curve_cfg)
        pair = causal_curves(adapter, image, target, saliency, curve_cfg)
    finally:
        _close_adapter(adapter)

    prefix = _out_prefix(args, tag)
    del_path = _with_ext(prefix, ".deletion.csv")
    ins_path = _with_ext(prefix, ".insertion.csv")
    auc_path = _with_ext(prefix, ".auc.json")
    manifest_path = _with_ext(prefix, ".manifest.json")
    pipeline.write_curve_csv(del_path, pair.deletion)
    pipeline.write_curve_csv(ins_path, pair.insertion)
    pipeline.write_auc_json(auc_path, pair.deletion.auc, pair.insertion.auc)
    manifest = pipeline.RunManifest(
        command="evaluate",
        adapter_spec=args.adapter,
        adapter_description=adapter.description,
        image_path=str(args.image),
        image_sha256=pipeline.file_sha256(args.image),
        image_size=adapter.input_size,
        method=args.method,
        configs=configs,
        target=target.to_json(),
        outputs={
            "deletion_csv": str(del_path),
            "insertion_csv": str(ins_path),
            "auc_json": str(auc_path),
        },
    )
    pipeline.write_manifest(manifest_path, manifest)
    print(f"deletion_auc={pair.deletion.auc:.6f} insertion_auc={pair.insertion.auc:.6f}")
    for p in (del_path, ins_path, auc_path, manifest_path):
        print(p)
    return 0


def cmd_baseline(args) -> int:
    adapter, image = _load_for(args.adapter, args)
    try:
        target = _resolve_target(adapter, image, args.target)
        curve_cfg = _curve_config(args)
        result = random_baseline(
            adapter, image, target, trials=args.trials, seed=args.seed, cfg=curve_cfg
        )
    finally:
        _close_adapter(adapter)

    prefix = _out_prefix(args, "baseline")
    auc_path = _with_ext(prefix, ".auc.json")
    pipeline.write_auc_json(auc_path, result.deletion_auc, result.insertion_auc)
    manifest = pipeline.RunManifest(
        command="baseline",
        adapter_spec=args.adapter,
        adapter_description=adapter.description,
        image_path=str(args.image),
        image_sha256=pipeline.file_sha256(args.image),
        image_size=adapter.input_size,
        configs={
            "curve": dataclasses.asdict(curve_cfg),
            "baseline": {"trials": args.trials, "seed": args.seed},
        },
        target=target.to_json(),
        outputs={"auc_json": str(auc_path)},
    )
    pipeline.write_manifest(_with_ext(prefix, ".manifest.json"), manifest)
    print(
        f"random baseline over {args.trials} orderings: "
        f"deletion_auc={result.deletion_auc:.6f} insertion_auc={result.insertion_auc:.6f}"
    )
    return 0


def _batch_one(method, adapter, image, target, args):
    cfg = _method_config(method, args)
    saliency = _saliency(method, adapter, image, target, cfg)
    pair = causal_curves(adapter, image, target, saliency, _curve_config(args))
    return pair.deletion.auc, pair.insertion.auc


def cmd_batch(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise XsalError(f"unknown method {m!r}, choose from {METHODS}")
    paths = sorted(Path(args.images).glob("*.png"))
    if not paths:
        raise XsalError(f"no .png images under {args.images}")

    size = (args.size[0], args.size[1])
    adapter = _build_adapter(args.adapter, size)
    jobs = args.jobs
    if jobs > 1 and not adapter.concurrent_safe:
        print("adapter is not concurrent-safe, forcing --jobs 1", file=sys.stderr)
        jobs = 1

    def run_image(path: Path) -> dict[str, tuple[float, float]] | None:
        image = pipeline.load_image(path, size=adapter.input_size)
        dets = adapter.detect(image)
        if not dets:
            print(f"{path}: no detections, skipped", file=sys.stderr)
            return None
        target = select_top_box(dets)
        return {m: _batch_one(m, adapter, image, target, args) for m in methods}

    try:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(run_image, paths))
        else:
            results = [run_image(p) for p in paths]
    finally:
        _close_adapter(adapter)

    results = [r for r in results if r is not None]
    if not results:
        raise XsalError("no image produced any detection")

    name_w = max(len(m) for m in methods + ["method"]) + 2
    print(f"{'method'.ljust(name_w)}{'deletion'.ljust(14)}insertion")
    summary = {"images": len(results), "methods": {}}
    for m in methods:
        dels = np.array([r[m][0] for r in results])
        ins = np.array([r[m][1] for r in results])
        print(
            f"{m.ljust(name_w)}"
            f"{f'{dels.mean():.2f}±{dels.std():.2f}'.ljust(14)}"
            f"{ins.mean():.2f}±{ins.std():.2f}"
        )
        summary["methods"][m] = {
            "deletion": {"mean": dels.mean(), "std": dels.std(), "values": dels.tolist()},
            "insertion": {"mean": ins.mean(), "std": ins.std(), "values": ins.tolist()},
        }
    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    return 0


def cmd_bridge_check(args) -> int:
    if args.tcp:
        host, port = args.tcp.rsplit(":", 1)
        client = bridge.BridgeClient(bridge.TcpTransport(host, int(port)))
        spawned = False
    else:
        cmd = args.cmd or os.environ.get(BRIDGE_ENV, "")
        if not cmd:
            raise XsalError(f"bridge-check needs --cmd, --tcp, or {BRIDGE_ENV}")
        client = bridge.BridgeClient(bridge.StdioTransport(cmd))
        spawned = True
    try:
        client.hello()
        report = bridge.run_conformance(client)
        if spawned or args.shutdown:
            client.shutdown()
    finally:
        client.close()
    print(f"peer: {report.peer}")
    for line in report.lines():
        print(line)
    print(f"conformance: {'OK' if report.ok else 'FAILED'}")
    return 0 if report.ok else 1


def _add_io_args(
    p: argparse.ArgumentParser, needs_image: bool = True, image_required: bool = True
) -> None:
    p.add_argument("--adapter", default="micro:brightness", help="adapter spec")
    if needs_image:
        p.add_argument("--image", required=image_required, help="input raster file")
        p.add_argument(
            "--target",
            type=_parse_box,
            default=None,
            metavar="X1,Y1,X2,Y2",
            help="box to explain; defaults to the top-scoring detection",
        )
    p.add_argument(
        "--size",
        type=int,
        nargs=2,
        default=list(pipeline.DEFAULT_SIZE),
        metavar=("H", "W"),
        help="input size for micro adapters (bridge peers dictate their own)",
    )
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--prefix", default=None, help="output file prefix")


def _add_method_args(p: argparse.ArgumentParser, single_method: bool = True) -> None:
    if single_method:
        p.add_argument("--method", choices=METHODS, default=None)
    p.add_argument("--batch", type=int, default=24, help="evaluations per round-trip")
    rise = p.add_argument_group("rise")
    rise.add_argument("--masks", type=int, default=500)
    rise.add_argument("--grid", type=int, default=8)
    rise.add_argument("--p-on", type=float, default=0.1)
    rise.add_argument("--seed", type=int, default=0)
    sidu = p.add_argument_group("sidu")
    sidu.add_argument("--sigma", type=float, default=0.25)
    sidu.add_argument("--bin-threshold", type=float, default=0.5)
    sidu.add_argument("--no-binarize", action="store_true")
    gradcam = p.add_argument_group("gradcam")
    gradcam.add_argument(
        "--relu-mode", choices=("per-term", "after-sum", "off"), default="per-term"
    )
    gradcam.add_argument("--no-upsample", action="store_true")


def _add_curve_args(p: argparse.ArgumentParser) -> None:
    curve = p.add_argument_group("curves")
    curve.add_argument("--steps", type=int, default=50)
    curve.add_argument("--fill", type=float, default=0.0)
    curve.add_argument("--blur-sigma", type=float, default=5.0)
    curve.add_argument("--blur-radius", type=int, default=11)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xsal", description="saliency maps and causal metrics for object detectors"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="write saliency map, overlay, and manifest")
    _add_io_args(p, image_required=False)
    _add_method_args(p)
    p.add_argument("--replay", default=None, help="re-run from a saved manifest")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("evaluate", help="deletion/insertion curves and AUCs")
    _add_io_args(p)
    _add_method_args(p)
    _add_curve_args(p)
    p.add_argument("--map", default=None, help="saved .f32t map instead of a method")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("baseline", help="random-ordering AUC baseline")
    _add_io_args(p)
    p.add_argument("--batch", type=int, default=24)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    _add_curve_args(p)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("batch", help="sweep a directory, print mean±std per method")
    p.add_argument("--images", required=True, help="directory of .png frames")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--summary", default=None, help="also write aggregate JSON here")
    _add_io_args(p, needs_image=False)
    _add_method_args(p, single_method=False)
    _add_curve_args(p)
    p.set_defaults(fn=cmd_batch)

    p = sub.add_parser("bridge-check", help="probe a bridge peer for conformance")
    p.add_argument("--cmd", default=None, help=f"stdio peer command (default ${BRIDGE_ENV})")
    p.add_argument("--tcp", default=None, metavar="HOST:PORT")
    p.add_argument("--shutdown", action="store_true", help="send shutdown to a TCP peer too")
    p.set_defaults(fn=cmd_bridge_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # Flag-combination mistakes are usage errors (exit 2), not runtime ones.
    if args.command == "explain" and not args.replay:
        if args.method is None:
            parser.error("explain: one of --method or --replay is required")
        if args.image is None:
            parser.error("explain: --image is required (unless replaying)")
    if args.command == "evaluate" and (args.map is None) == (args.method is None):
        parser.error("evaluate: exactly one of --method or --map is required")
    try:
        return args.fn(args)
    except (XsalError, OSError) as exc:
        print(f"xsal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
