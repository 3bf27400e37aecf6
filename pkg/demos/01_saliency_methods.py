"""Walk-through: three saliency maps for one detection.

Builds the bundled brightness detector, synthesizes a scene it can see,
and explains its top detection with each generator:

  gradcam  white-box, one gradient call, feature resolution
  rise     black-box, hundreds of random occlusions
  sidu     gray-box, one occlusion per feature map

Writes heatmap overlays and the raw maps under demos/out/01_saliency/.
Run as: python3 demos/01_saliency_methods.py
"""

import pathlib

import numpy as np

from xsal import micro, pipeline
from xsal.detectors import select_top_box
from xsal.gradcam import GradCamConfig, gradcam_saliency
from xsal.rise import RiseConfig, rise_saliency
from xsal.sidu import SiduConfig, sidu_saliency
from xsal.tensor_ops import write_f32t

OUT = pathlib.Path(__file__).parent / "out" / "01_saliency"


def make_scene(h: int = 64, w: int = 64) -> np.ndarray:
    """Dim background with two bright rectangles, one brighter than the other."""
    image = np.full((3, h, w), 0.12)
    image[:, 10:26, 8:30] = 0.85   # the object the detector will rank first
    image[:, 40:52, 36:56] = 0.55  # a weaker distractor
    return image


def describe(name: str, sal: np.ndarray) -> None:
    y, x = np.unravel_index(np.argmax(sal), sal.shape)
    print(
        f"  {name:8s} shape {sal.shape}, range [{sal.min():.4f}, {sal.max():.4f}],"
        f" hottest pixel at (y={y}, x={x})"
    )


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    adapter = micro.detect_adapter(micro.brightness((64, 64)))
    image = make_scene()

    dets = adapter.detect(image)
    target = select_top_box(dets)
    print(f"detector: {adapter.description}")
    print(f"{len(dets)} candidate boxes; explaining the top one:")
    print(f"  box ({target.box.x1:.0f}, {target.box.y1:.0f}, {target.box.x2:.0f},"
          f" {target.box.y2:.0f}), class {target.class_id}, score {target.score:.4f}")

    # The gradient-weighted map comes back at feature resolution unless
    # upsampling is requested; the other two always work at input resolution.
    coarse = gradcam_saliency(
        adapter, image, target, GradCamConfig(upsample_to_input=False)
    )
    print(f"\ngradcam at feature resolution: {coarse.shape}")

    maps = {
        "gradcam": gradcam_saliency(adapter, image, target, GradCamConfig()),
        "rise": rise_saliency(
            adapter, image, target, RiseConfig(n_masks=500, grid=8, p_on=0.1, seed=0)
        ),
        "sidu": sidu_saliency(adapter, image, target, SiduConfig()),
    }

    print("\ninput-resolution maps:")
    for name, sal in maps.items():
        describe(name, sal)
        write_f32t(OUT / f"{name}.f32t", sal)
        overlay = pipeline.render_overlay(image, sal, target.box)
        pipeline.save_image_png(OUT / f"{name}_overlay.png", overlay)

    # All three should agree on the gross structure: mass on the detected
    # rectangle, little on the distractor or the background.
    ys, xs = slice(10, 26), slice(8, 30)
    for name, sal in maps.items():
        inside = sal[ys, xs].mean()
        outside = (sal.sum() - sal[ys, xs].sum()) / (sal.size - sal[ys, xs].size)
        print(f"  {name:8s} mean saliency inside box {inside:.4f}, outside {outside:.4f}")

    print(f"\nartifacts in {OUT}:")
    for path in sorted(OUT.iterdir()):
        print(f"  {path.name}")


if __name__ == "__main__":
    main()
