"""Acceptance gate: one test per required property, each printing a pass
line with the measured value.

Every expectation here is derived independently of the library: scalar-loop
oracles, central finite differences, exhaustive enumeration, closed-form
statistics, or a live out-of-process peer. Timing budgets are asserted where
the property includes one; the throughput check reports times and asserts
only their ordering.
"""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ConstantAdapter, f32_exact, make_blob_image
from oracles import central_fd_grads, gradcam_oracle, sidu_map_oracle, sidu_weights_oracle
from xsal import micro
from xsal.bridge import connect_stdio, run_conformance
from xsal.detectors import BBox, Detection, match_box, select_top_box, target_score
from xsal.gradcam import GradCamConfig, gradcam_saliency
from xsal.metrics import (
    CurveConfig,
    causal_curves,
    deletion_curve,
    insertion_curve,
    random_baseline,
)
from xsal.rise import RiseConfig, rise_saliency, sample_mask, sample_masks
from xsal.sidu import SiduConfig, build_feature_masks, sidu_saliency
from xsal.tensor_ops import hadamard_mask

REPO_ROOT = Path(__file__).parent.parent
BRIDGE_SERVER_JS = REPO_ROOT / "bridge_server" / "dist" / "server.js"
BRIDGE_WEIGHTS = Path(__file__).parent / "data" / "bridge" / "weights"


@pytest.fixture
def announce(capsys):
    def _announce(line: str) -> None:
        with capsys.disabled():
            print(line)

    return _announce


def seeded_case(seed: int, size=(16, 16)):
    adapter = micro.detect_adapter(micro.seeded_random(size, seed, k=4))
    image = make_blob_image(seed, size)
    target = select_top_box(adapter.detect(image))
    return adapter, image, target


def test_saliency_equations_match_loop_oracles(announce):
    t0 = time.perf_counter()
    worst_gradcam = worst_sidu = 0.0
    for seed in range(10):
        adapter, image, target = seeded_case(seed)

        got = gradcam_saliency(
            adapter, image, target, GradCamConfig(upsample_to_input=False)
        )
        want = gradcam_oracle(
            adapter.features(image), adapter.grad_features(image, target)
        )
        worst_gradcam = max(worst_gradcam, np.abs(got - want).max())

        cfg = SiduConfig(batch=8)
        got = sidu_saliency(adapter, image, target, cfg)
        masks = build_feature_masks(adapter.features(image), cfg, 16, 16)
        dets = adapter.detect(image)
        p_o = np.array([match_box(dets, target).score])
        preds = [
            np.array([target_score(adapter, hadamard_mask(image, m), target)])
            for m in masks
        ]
        sd, u = sidu_weights_oracle(p_o, preds, cfg.sigma)
        worst_sidu = max(worst_sidu, np.abs(got - sidu_map_oracle(masks, sd, u)).max())
    elapsed = time.perf_counter() - t0

    assert worst_gradcam < 1e-6
    assert worst_sidu < 1e-6
    assert elapsed < 10.0
    announce(
        f"[PASS] saliency maps vs loop oracles (10 configs): "
        f"max dev gradcam {worst_gradcam:.2e}, sidu {worst_sidu:.2e}, {elapsed:.1f}s"
    )


def test_micro_gradients_match_finite_differences(announce):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        cfg = micro.seeded_random((16, 16), seed, k=4)
        image = np.random.default_rng(300 + seed).random((3, 16, 16))
        dets, features = micro.forward(cfg, image)
        det = dets[seed % len(dets)]
        analytic = micro.grad_score_wrt_features(cfg, image, det)
        cx = int(round((det.box.x1 + det.box.x2) / 2 / micro.CELL_STRIDE - 0.5))
        cy = int(round((det.box.y1 + det.box.y2) / 2 / micro.CELL_STRIDE - 0.5))
        fd = central_fd_grads(cfg, features, cy, cx, det.class_id, eps=1e-3)
        scale = np.abs(analytic).max()
        assert scale > 0
        worst = max(worst, np.abs(fd - analytic).max() / scale)
    elapsed = time.perf_counter() - t0

    assert worst < 1e-3
    assert elapsed < 30.0
    announce(
        f"[PASS] analytic gradients vs central differences (10 cases): "
        f"max rel err {worst:.2e}, {elapsed:.1f}s"
    )


def test_rise_sampling_statistics(announce):
    t0 = time.perf_counter()
    c = 0.5
    adapter = ConstantAdapter(score=c, size=(32, 32))
    image = np.full((3, 32, 32), 0.3)
    target = adapter.detect(image)[0]

    cfg = RiseConfig(n_masks=2000, grid=8, p_on=0.1, seed=0, batch=24)
    sal = rise_saliency(adapter, image, target, cfg)
    # Mask values lie in [0, 1] with mean p_on, so per-pixel variance is at
    # most p_on * (1 - p_on) and three standard errors of the estimate are
    # bounded by the expression below.
    bound = 3.0 * c * np.sqrt((1.0 - cfg.p_on) / (cfg.p_on * cfg.n_masks))
    max_dev = np.abs(sal - c).max()
    assert max_dev <= bound

    # Degenerate densities produce exact masks, and p_on = 1 an exact map.
    all_on = RiseConfig(n_masks=50, grid=8, p_on=1.0, seed=3)
    assert np.array_equal(
        sample_masks(all_on, 32, 32), np.ones((50, 32, 32))
    )
    assert np.all(rise_saliency(adapter, image, target, all_on) == c)
    all_off = RiseConfig(n_masks=50, grid=8, p_on=0.0, seed=3)
    assert np.array_equal(sample_mask(all_off, 7, 32, 32), np.zeros((32, 32)))

    serial = rise_saliency(
        adapter, image, target, RiseConfig(n_masks=300, grid=8, p_on=0.1, seed=1, batch=1)
    )
    for batch in (7, 24):
        threaded = rise_saliency(
            adapter,
            image,
            target,
            RiseConfig(n_masks=300, grid=8, p_on=0.1, seed=1, batch=batch),
        )
        assert serial.tobytes() == threaded.tobytes()
    elapsed = time.perf_counter() - t0

    assert elapsed < 60.0
    announce(
        f"[PASS] mask statistics: max dev {max_dev:.4f} within {bound:.4f} at "
        f"N=2000, degenerate densities exact, thread-count invariant, {elapsed:.1f}s"
    )


def test_weight_ordering_is_exhaustively_optimal(announce, toy_adapter, toy_image):
    t0 = time.perf_counter()
    cfg = CurveConfig(steps=4, batch=1)
    target = toy_adapter.detect(toy_image)[0]
    pair = causal_curves(toy_adapter, toy_image, target, toy_adapter.weights, cfg)

    deletion_aucs, insertion_aucs = [], []
    for perm in itertools.permutations(range(4)):
        order = np.array(perm)
        deletion_aucs.append(deletion_curve(toy_adapter, toy_image, target, order, cfg).auc)
        insertion_aucs.append(insertion_curve(toy_adapter, toy_image, target, order, cfg).auc)
    elapsed = time.perf_counter() - t0

    assert pair.deletion.auc == min(deletion_aucs)
    assert pair.insertion.auc == max(insertion_aucs)
    assert elapsed < 1.0
    announce(
        f"[PASS] causal metrics vs exhaustive enumeration: weight ordering attains "
        f"deletion {pair.deletion.auc:.6f} = min and insertion {pair.insertion.auc:.6f}"
        f" = max over 24 orderings, {elapsed:.2f}s"
    )


def test_generators_beat_random_orderings(announce):
    t0 = time.perf_counter()
    size = (32, 32)
    adapter = micro.detect_adapter(micro.brightness(size))
    curve_cfg = CurveConfig(steps=25, batch=24)
    methods = {
        "gradcam": lambda img, tgt: gradcam_saliency(adapter, img, tgt, GradCamConfig()),
        "rise": lambda img, tgt: rise_saliency(adapter, img, tgt, RiseConfig()),
        "sidu": lambda img, tgt: sidu_saliency(adapter, img, tgt, SiduConfig()),
    }
    wins = {name: 0 for name in methods}
    for i in range(20):
        image = make_blob_image(i, size)
        target = select_top_box(adapter.detect(image))
        base = random_baseline(adapter, image, target, trials=20, seed=0, cfg=curve_cfg)
        for name, method in methods.items():
            pair = causal_curves(adapter, image, target, method(image, target), curve_cfg)
            if (
                pair.deletion.auc < base.deletion_auc
                and pair.insertion.auc > base.insertion_auc
            ):
                wins[name] += 1
    elapsed = time.perf_counter() - t0

    for name, won in wins.items():
        assert won >= 18, f"{name} beat the random baseline on only {won}/20 images"
    assert elapsed < 300.0
    announce(
        f"[PASS] every generator beats 20 random orderings on both metrics: "
        f"wins {wins} of 20 images, {elapsed:.1f}s"
    )


def test_box_matching_rules_and_sampler_defaults(announce):
    target = Detection(BBox(10.0, 10.0, 20.0, 20.0), 0, 1.0)

    exact = Detection(BBox(10.0, 10.0, 20.0, 20.0), 0, 0.9)
    other = Detection(BBox(12.0, 12.0, 22.0, 22.0), 0, 0.95)
    assert match_box([other, exact], target) is exact

    # Higher overlap wins regardless of score.
    low_iou_high_score = Detection(BBox(10.0, 10.0, 20.0, 16.0), 0, 0.9)  # IoU 0.6
    high_iou_low_score = Detection(BBox(10.0, 10.0, 20.0, 18.0), 0, 0.3)  # IoU 0.8
    assert match_box([low_iou_high_score, high_iou_low_score], target) is high_iou_low_score

    # Both floors are inclusive; below either, no match.
    at_floor = Detection(BBox(10.0, 10.0, 20.0, 15.0), 0, 0.05)  # IoU exactly 0.5
    assert match_box([at_floor], target) is at_floor
    assert match_box([Detection(BBox(10.0, 10.0, 20.0, 20.0), 0, 0.04)], target) is None
    assert match_box([Detection(BBox(10.0, 10.0, 20.0, 14.9), 0, 0.9)], target) is None

    # Overlap ties break on score, full ties on input order.
    a = Detection(BBox(10.0, 10.0, 20.0, 18.0), 0, 0.4)  # IoU 0.8, trimmed bottom
    b = Detection(BBox(10.0, 12.0, 20.0, 20.0), 0, 0.6)  # IoU 0.8, trimmed top
    assert match_box([a, b], target) is b
    twin_a = Detection(BBox(10.0, 10.0, 20.0, 18.0), 0, 0.4)
    twin_b = Detection(BBox(10.0, 10.0, 20.0, 18.0), 0, 0.4)
    assert match_box([twin_a, twin_b], target) is twin_a

    defaults = RiseConfig()
    assert (defaults.n_masks, defaults.grid, defaults.p_on) == (500, 8, 0.1)

    announce(
        "[PASS] box matching: score floor 0.05 and overlap floor 0.5 inclusive, "
        "highest overlap wins, ties by score then order; sampler defaults (500, 8, 0.1)"
    )


def test_gradcam_relu_variants(announce):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        adapter, image, target = seeded_case(seed)
        clamped = gradcam_saliency(adapter, image, target, GradCamConfig())
        assert clamped.min() >= 0.0

        free = gradcam_saliency(
            adapter,
            image,
            target,
            GradCamConfig(apply_relu=False, upsample_to_input=False),
        )
        want = gradcam_oracle(
            adapter.features(image),
            adapter.grad_features(image, target),
            apply_relu=False,
        )
        worst = max(worst, np.abs(free - want).max())
    elapsed = time.perf_counter() - t0

    assert worst < 1e-6
    assert elapsed < 5.0
    announce(
        f"[PASS] clamped maps non-negative; signed variant matches oracle, "
        f"max dev {worst:.2e}, {elapsed:.1f}s"
    )


def test_method_throughput_ordering_at_full_resolution(announce):
    adapter = micro.detect_adapter(micro.brightness((512, 512)))
    image = make_blob_image(3, (512, 512))
    target = select_top_box(adapter.detect(image))

    t0 = time.perf_counter()
    gradcam_saliency(adapter, image, target, GradCamConfig())
    t_gradcam = time.perf_counter() - t0

    t0 = time.perf_counter()
    sidu_saliency(adapter, image, target, SiduConfig(batch=24))
    t_sidu = time.perf_counter() - t0

    t0 = time.perf_counter()
    rise_saliency(adapter, image, target, RiseConfig(n_masks=500, batch=24))
    t_rise = time.perf_counter() - t0

    assert t_gradcam < t_sidu < t_rise
    announce(
        f"[PASS] 512x512 wall times ordered: gradcam {t_gradcam:.2f}s < "
        f"sidu {t_sidu:.2f}s < rise {t_rise:.2f}s (500 masks)"
    )


@pytest.mark.skipif(
    not BRIDGE_SERVER_JS.exists(), reason="reference bridge server not built"
)
def test_reference_bridge_server(announce):
    adapter = connect_stdio(f"node {BRIDGE_SERVER_JS} --weights {BRIDGE_WEIGHTS}")
    try:
        report = run_conformance(adapter._client)
        assert report.ok, "\n".join(report.lines())

        local = micro.detect_adapter(micro.load_weights(BRIDGE_WEIGHTS))
        image = f32_exact(make_blob_image(0, size=local.input_size))
        remote_dets = adapter.detect(image)
        local_dets = local.detect(image)
        assert len(remote_dets) == len(local_dets)
        by_key = {(d.box, d.class_id): d.score for d in local_dets}
        worst_score = max(
            abs(d.score - by_key[(d.box, d.class_id)]) for d in remote_dets
        )
        assert worst_score < 1e-6

        feat_dev = np.abs(adapter.features(image) - local.features(image)).max()
        assert feat_dev < 1e-6
        target = remote_dets[0]
        grad_dev = np.abs(
            adapter.grad_features(image, target)
            - local.grad_features(image, match_box(local_dets, target))
        ).max()
        assert grad_dev < 1e-6
    finally:
        adapter.close()
    announce(
        f"[PASS] reference server conformant; cross-process max dev: scores "
        f"{worst_score:.2e}, features {feat_dev:.2e}, grads {grad_dev:.2e}"
    )
