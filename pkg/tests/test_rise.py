"""Randomized-mask saliency: sampling contract, weighting oracle, determinism."""

import math

import numpy as np
import pytest

from conftest import ConstantAdapter, make_blob_image
from xsal import micro
from xsal.detectors import BBox, Detection, select_top_box, target_score
from xsal.errors import InvalidParameterError, NoMatchError
from xsal.rise import RiseConfig, cell_grid, rise_saliency, sample_mask, sample_masks
from xsal.tensor_ops import bilinear_resize, hadamard_mask


class TestDefaults:
    def test_documented_defaults(self):
        cfg = RiseConfig()
        assert (cfg.n_masks, cfg.grid, cfg.p_on) == (500, 8, 0.1)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_masks": 0},
            {"grid": 0},
            {"p_on": -0.1},
            {"p_on": 1.1},
            {"batch": 0},
            {"seed": -1},
            {"seed": 2**64},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(InvalidParameterError):
            RiseConfig(**kwargs)


class TestMaskSampling:
    def test_mask_reproduces_documented_derivation(self):
        # Independent replay of the per-mask stream: cell uniforms first,
        # then crop x, then crop y, upsample to input + ceil(input/grid).
        cfg = RiseConfig(grid=4, p_on=0.3, seed=99)
        w = h = 20
        for index in (0, 1, 17):
            rng = np.random.default_rng(np.random.SeedSequence([99, index]))
            cells = (rng.random((4, 4)) < 0.3).astype(np.float64)
            up = w + math.ceil(w / 4)
            ox = int(rng.integers(0, up - w + 1))
            oy = int(rng.integers(0, up - h + 1))
            want = bilinear_resize(cells, up, up)[oy : oy + h, ox : ox + w]
            assert np.array_equal(sample_mask(cfg, index, w, h), want)

    def test_values_in_unit_interval(self):
        cfg = RiseConfig(n_masks=40, grid=6, p_on=0.5, seed=3)
        masks = sample_masks(cfg, 24, 24)
        assert masks.shape == (40, 24, 24)
        assert masks.min() >= 0.0 and masks.max() <= 1.0

    def test_cell_grid_and_mask_share_the_stream(self):
        cfg = RiseConfig(grid=8, p_on=0.1, seed=0)
        cells = cell_grid(cfg, 5)
        assert cells.shape == (8, 8)
        assert set(np.unique(cells)) <= {0.0, 1.0}

    def test_degenerate_p_on_masks_are_exact(self):
        all_off = RiseConfig(n_masks=5, grid=8, p_on=0.0, seed=1)
        all_on = RiseConfig(n_masks=5, grid=8, p_on=1.0, seed=1)
        for i in range(5):
            assert np.all(sample_mask(all_off, i, 16, 16) == 0.0)
            assert np.all(sample_mask(all_on, i, 16, 16) == 1.0)

    def test_grid_larger_than_input_rejected(self):
        cfg = RiseConfig(grid=32)
        with pytest.raises(InvalidParameterError):
            sample_mask(cfg, 0, 16, 16)

    def test_mask_mean_approaches_p_on(self):
        cfg = RiseConfig(n_masks=400, grid=4, p_on=0.25, seed=7)
        masks = sample_masks(cfg, 16, 16)
        # E[mask pixel] = p_on exactly; 400 draws put the mean well inside
        # 4 standard errors of a single Bernoulli cell.
        se = math.sqrt(0.25 * 0.75 / 400)
        assert abs(masks.mean() - 0.25) < 4 * se


class TestSaliency:
    def test_matches_direct_weighted_sum(self):
        # The streaming accumulator against the written-out formula
        # S = sum_i score_i * M_i / (p_on * N), computed independently.
        cfg = RiseConfig(n_masks=60, grid=4, p_on=0.3, seed=5, batch=8)
        adapter = micro.detect_adapter(micro.brightness((16, 16)))
        image = make_blob_image(3, (16, 16))
        target = select_top_box(adapter.detect(image))
        got = rise_saliency(adapter, image, target, cfg)

        want = np.zeros((16, 16))
        for i in range(cfg.n_masks):
            mask = sample_mask(cfg, i, 16, 16)
            score = target_score(adapter, hadamard_mask(image, mask), target)
            want += score * mask
        want /= cfg.p_on * cfg.n_masks
        np.testing.assert_allclose(got, want, atol=1e-12)

    @pytest.mark.parametrize("batch", [1, 3, 24])
    def test_bitwise_equal_across_batch_sizes(self, batch):
        base = RiseConfig(n_masks=50, grid=4, p_on=0.2, seed=11, batch=1)
        cfg = RiseConfig(n_masks=50, grid=4, p_on=0.2, seed=11, batch=batch)
        adapter = micro.detect_adapter(micro.brightness((16, 16)))
        image = make_blob_image(1, (16, 16))
        target = select_top_box(adapter.detect(image))
        a = rise_saliency(adapter, image, target, base)
        b = rise_saliency(adapter, image, target, cfg)
        assert a.tobytes() == b.tobytes()

    def test_constant_adapter_all_on_is_exact(self):
        cfg = RiseConfig(n_masks=64, grid=4, p_on=1.0, seed=0)
        adapter = ConstantAdapter(score=0.5, size=(16, 16))
        image = np.full((3, 16, 16), 0.5)
        target = adapter.detect(image)[0]
        sal = rise_saliency(adapter, image, target, cfg)
        assert np.all(sal == 0.5)

    def test_p_on_zero_rejected_for_saliency(self):
        cfg = RiseConfig(n_masks=4, p_on=0.0)
        adapter = ConstantAdapter(size=(16, 16))
        image = np.zeros((3, 16, 16))
        with pytest.raises(InvalidParameterError):
            rise_saliency(adapter, image, adapter.detect(image)[0], cfg)

    def test_unmatched_target_raises(self):
        adapter = ConstantAdapter(score=0.5, size=(16, 16))
        image = np.zeros((3, 16, 16))
        nowhere = Detection(BBox(0.0, 0.0, 1.0, 1.0), 0, 1.0)
        with pytest.raises(NoMatchError):
            rise_saliency(adapter, image, nowhere, RiseConfig(n_masks=4, grid=4))

    def test_empirical_norm_bounded_by_scores(self):
        cfg = RiseConfig(n_masks=80, grid=4, p_on=0.4, seed=2, empirical_norm=True)
        adapter = ConstantAdapter(score=0.7, size=(16, 16))
        image = np.full((3, 16, 16), 0.3)
        target = adapter.detect(image)[0]
        sal = rise_saliency(adapter, image, target, cfg)
        # With a constant scorer, per-pixel normalization recovers the score
        # exactly wherever any mask touched the pixel.
        touched = sample_masks(cfg, 16, 16).sum(axis=0) > 0
        np.testing.assert_allclose(sal[touched], 0.7, atol=1e-12)
        assert np.all(sal[~touched] == 0.0)
