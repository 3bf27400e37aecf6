"""Walk-through: the command line, from raster to reproducible artifacts.

Every subcommand is also callable in-process through xsal.cli.main, which
is what this script does; `xsal <subcommand> ...` from a shell is the same
code path. The sequence below mirrors a typical study:

  explain    one image to map + overlay + run manifest
  replay     re-run a manifest and confirm the map is bit-identical
  evaluate   deletion/insertion curves for the saved map
  baseline   chance-level areas from random orderings
  batch      sweep a directory, one summary row per method

Everything lands under demos/out/04_cli/.
Run as: python3 demos/04_cli_pipeline.py
"""

import json
import pathlib
import shutil

import numpy as np

from xsal import pipeline
from xsal.cli import main as xsal

ROOT = pathlib.Path(__file__).parent / "out" / "04_cli"


def make_frames(frames_dir: pathlib.Path, count: int = 3) -> None:
    """A handful of synthetic frames with one bright object each."""
    frames_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(11)
    for i in range(count):
        image = np.full((3, 48, 48), 0.1)
        y, x = rng.integers(4, 24, size=2)
        image[:, y : y + 18, x : x + 18] = 0.9
        pipeline.save_image_png(frames_dir / f"frame_{i}.png", image)


def run(label: str, argv: list) -> None:
    print(f"\n$ xsal {' '.join(str(a) for a in argv)}")
    code = xsal([str(a) for a in argv])
    print(f"[exit {code}]  # {label}")
    assert code == 0, f"{label} failed with exit {code}"


def main() -> None:
    shutil.rmtree(ROOT, ignore_errors=True)  # keep reruns deterministic
    frames = ROOT / "frames"
    out = ROOT / "artifacts"
    out.mkdir(parents=True, exist_ok=True)
    make_frames(frames)
    image = frames / "frame_0.png"

    run("map + overlay + manifest", [
        "explain", "--image", image, "--method", "gradcam",
        "--size", "48", "48", "--out", out,
    ])
    manifest_path = next(out.glob("*.gradcam.manifest.json"))
    manifest = pipeline.read_manifest(manifest_path)
    print(f"manifest: method={manifest.method} adapter={manifest.adapter_spec}")
    print(f"  target box {manifest.target['box']}, score {manifest.target['score']:.4f}")
    print(f"  outputs: {sorted(manifest.outputs)}")

    # The manifest pins adapter, config, target, and input hash, so a replay
    # must reproduce the map byte for byte.
    map_path = next(out.glob("*.gradcam.f32t"))
    before = map_path.read_bytes()
    run("re-run from the manifest", ["explain", "--replay", manifest_path])
    assert map_path.read_bytes() == before
    print("replayed map is byte-identical")

    run("curves for the saved map", [
        "evaluate", "--image", image, "--map", map_path,
        "--size", "48", "48", "--steps", "25", "--out", out,
    ])
    auc = json.loads(next(out.glob("*.auc.json")).read_text())
    print(f"areas: deletion {auc['deletion_auc']:.4f}, insertion {auc['insertion_auc']:.4f}")

    run("chance level on this image", [
        "baseline", "--image", image, "--size", "48", "48",
        "--steps", "25", "--trials", "10", "--out", out,
    ])

    run("whole-directory sweep", [
        "batch", "--images", frames, "--methods", "gradcam,sidu",
        "--size", "48", "48", "--steps", "25", "--out", out,
        "--summary", out / "summary.json",
    ])
    summary = json.loads((out / "summary.json").read_text())
    print(f"summary covers {summary['images']} images")

    print(f"\nartifacts in {out}:")
    for path in sorted(out.iterdir()):
        print(f"  {path.name}")


if __name__ == "__main__":
    main()
