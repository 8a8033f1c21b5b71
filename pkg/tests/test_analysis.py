"""Analysis harness: distortion metrics, curve comparison, probes, image I/O."""

import math

import numpy as np
import pytest

from ltcodec.analysis import (RDPoint, compare_curves, curve_from_points,
                              latent_report, mse, probe, psnr, rd_sweep,
                              read_rd_csv, write_rd_csv)
from ltcodec.errors import FormatError, ShapeError, UsageError
from ltcodec.imageio import (luma_from_rgb, pad_to_multiple, read_image_luma,
                             read_pgm, read_png_luma, write_pgm)
from ltcodec.model import ArchConfig, LayerSpec, new_model


class TestPsnr:
    def test_identical_images_infinite(self):
        img = np.random.default_rng(0).integers(0, 256, (8, 8)).astype(np.uint8)
        assert psnr(img, img) == math.inf

    def test_full_scale_error_zero_db(self):
        a = np.zeros((4, 4))
        b = np.full((4, 4), 255.0)
        assert psnr(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_twenty_db_point(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 25.5)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((2, 2)), np.zeros((3, 3)))


class TestCompareCurves:
    def test_identical_tables_zero_gap(self):
        curve = [(0.1, 20.0), (0.2, 24.0), (0.4, 28.0)]
        rows = compare_curves({"a": curve, "b": list(curve)})
        assert rows[0]["mean_gap_db"] == 0.0
        assert rows[0]["max_gap_db"] == 0.0

    def test_constant_offset_recovered(self):
        a = [(0.1, 20.0), (0.3, 26.0)]
        b = [(0.1, 21.5), (0.3, 27.5)]
        rows = compare_curves({"a": a, "b": b})
        assert rows[0]["mean_gap_db"] == pytest.approx(1.5)
        assert rows[0]["max_gap_db"] == pytest.approx(1.5)

    def test_symmetry(self):
        a = [(0.05, 18.0), (0.2, 23.0), (0.5, 30.0)]
        b = [(0.1, 19.0), (0.4, 27.0)]
        g1 = compare_curves({"a": a, "b": b})[0]
        g2 = compare_curves({"b": b, "a": a})[0]
        assert g1["mean_gap_db"] == g2["mean_gap_db"]
        assert g1["max_gap_db"] == g2["max_gap_db"]

    def test_no_overlap_error(self):
        with pytest.raises(UsageError, match="overlap"):
            compare_curves({"a": [(0.1, 20.0), (0.2, 22.0)],
                            "b": [(0.5, 30.0), (0.9, 33.0)]})

    def test_single_point_curve_rejected(self):
        with pytest.raises(UsageError):
            compare_curves({"a": [(0.1, 20.0)], "b": [(0.1, 20.0), (0.2, 22.0)]})


class TestRdCsv:
    def test_round_trip(self, tmp_path):
        pts = [RDPoint("img0", 1.0, 0.5, 0.52, 12.0, 37.3),
               RDPoint("mean", 1.0, 0.5, 0.52, 12.0, 37.3)]
        path = tmp_path / "rd.csv"
        write_rd_csv(path, pts)
        back = read_rd_csv(path)
        assert back == pts

    def test_curve_uses_mean_rows(self):
        pts = [RDPoint("a", 1.0, 0.9, 0.9, 5.0, 10.0),
               RDPoint("mean", 1.0, 0.5, 0.5, 5.0, 30.0),
               RDPoint("mean", 2.0, 0.25, 0.25, 9.0, 27.0)]
        assert curve_from_points(pts) == [(0.25, 27.0), (0.5, 30.0)]


class TestImageIO:
    def test_pgm_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, (11, 17)).astype(np.uint8)
        path = tmp_path / "x.pgm"
        write_pgm(path, img)
        np.testing.assert_array_equal(read_pgm(path), img)

    def test_pgm_header_by_hand(self, tmp_path):
        raw = b"P5\n4 4\n255\n" + bytes(range(16))
        path = tmp_path / "hand.pgm"
        path.write_bytes(raw)
        img = read_pgm(path)
        assert img.shape == (4, 4)
        assert img[0, 0] == 0 and img[3, 3] == 15

    def test_pgm_comment_header(self, tmp_path):
        raw = b"P5\n# a comment\n2 3\n255\n" + bytes(6)
        path = tmp_path / "c.pgm"
        path.write_bytes(raw)
        assert read_pgm(path).shape == (3, 2)

    def test_pgm_wrong_maxval(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(FormatError, match="maxval"):
            read_pgm(path)

    def test_pgm_truncated(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
        with pytest.raises(FormatError, match="truncated"):
            read_pgm(path)

    def test_png_luma_bt601(self, tmp_path):
        from PIL import Image
        arr = np.zeros((5, 5, 3), dtype=np.uint8)
        arr[:, :, 0] = 255  # pure red -> 76
        path = tmp_path / "red.png"
        Image.fromarray(arr, "RGB").save(path)
        np.testing.assert_array_equal(read_png_luma(path), 76)

    def test_sixteen_bit_png_rejected(self, tmp_path):
        from PIL import Image
        arr = (np.arange(16, dtype=np.uint16) * 4000).reshape(4, 4)
        path = tmp_path / "deep.png"
        Image.fromarray(arr).save(path)  # mode I;16 inferred from dtype
        with pytest.raises(FormatError, match="depth"):
            read_png_luma(path)

    def test_gray_png(self, tmp_path):
        from PIL import Image
        arr = np.random.default_rng(1).integers(0, 256, (6, 7)).astype(np.uint8)
        path = tmp_path / "g.png"
        Image.fromarray(arr, "L").save(path)
        np.testing.assert_array_equal(read_image_luma(path), arr)

    def test_sniffing_dispatch(self, tmp_path):
        img = np.full((4, 4), 9, dtype=np.uint8)
        write_pgm(tmp_path / "a.pgm", img)
        np.testing.assert_array_equal(read_image_luma(tmp_path / "a.pgm"), img)
        (tmp_path / "junk.bin").write_bytes(b"not an image")
        with pytest.raises(FormatError):
            read_image_luma(tmp_path / "junk.bin")

    def test_luma_rounding(self):
        px = np.array([[[255, 0, 0]]], dtype=np.uint8)
        assert luma_from_rgb(px)[0, 0] == 76

    def test_pad_to_multiple(self):
        img = np.arange(15, dtype=np.uint8).reshape(3, 5)
        padded, pb, pr = pad_to_multiple(img, 4)
        assert padded.shape == (4, 8)
        assert (pb, pr) == (1, 3)
        np.testing.assert_array_equal(padded[:3, :5], img)
        padded2, pb2, pr2 = pad_to_multiple(padded, 4)
        assert (pb2, pr2) == (0, 0)
        assert padded2 is padded


def micro_model(m=3):
    arch = ArchConfig(latent_maps=m, layers=(
        LayerSpec(4, 5, 4, 2), LayerSpec(4, 3, 2, 1), LayerSpec(m, 3, 2, 1)),
        end_normalization=False)
    return new_model(arch, seed=33)


class TestProbeMechanics:
    def test_alpha_at_mean_is_identity(self):
        mdl = micro_model()
        mdl.params.mu_bar = np.array([0.4, -0.2, 1.0])
        res = probe(mdl, 1, (3, 3), alpha=-0.2)
        np.testing.assert_array_equal(res.image, res.baseline)
        assert res.locality == 0.0 and res.diff_energy == 0.0

    def test_out_of_range_probe(self):
        mdl = micro_model()
        with pytest.raises(UsageError):
            probe(mdl, 7, (0, 0), alpha=1.0)
        with pytest.raises(UsageError):
            probe(mdl, 0, (9, 0), alpha=1.0, latent_hw=(8, 8))

    def test_difference_is_localized_for_random_model(self):
        mdl = micro_model()
        res = probe(mdl, 0, (4, 4), alpha=30.0)
        assert res.diff_energy > 0
        assert res.locality > 0.5


class TestSweepDefaults:
    def test_default_beta_set(self):
        from ltcodec.analysis import DEFAULT_BETAS
        assert DEFAULT_BETAS == (1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0)


class TestRdSweepShape:
    def test_single_image_single_beta(self):
        mdl = micro_model()
        img = (np.random.default_rng(2).random((64, 64)) * 255).astype(np.uint8)
        pts = rd_sweep(mdl, [("one", img)], betas=(1.0,))
        assert len(pts) == 2  # the row and its mean
        assert pts[0].image_id == "one"
        assert pts[1].image_id == "mean"
        assert pts[0].rate_bpp_estimated == pts[1].rate_bpp_estimated

    def test_rows_per_beta(self):
        mdl = micro_model()
        rng = np.random.default_rng(3)
        imgs = [(f"i{k}", (rng.random((32, 32)) * 255).astype(np.uint8))
                for k in range(2)]
        pts = rd_sweep(mdl, imgs, betas=(1.0, 2.0, 4.0))
        assert len(pts) == 3 * (2 + 1)


class TestLatentReportMechanics:
    def test_degenerate_and_scale_count(self):
        mdl = micro_model()
        # zero encoder -> all maps constant -> all degenerate
        for t in mdl.params.enc_w + mdl.params.enc_b:
            t.data[...] = 0.0
        img = (np.random.default_rng(1).random((64, 64)) * 255).astype(np.uint8)
        reports, hist_rows, scales = latent_report(mdl, [("z", img)])
        assert all(r.degenerate for r in reports)
        assert scales == []
        assert hist_rows == []

    def test_synthetic_laplace_scale_recovered(self):
        # feed controlled latents through the report path via a model whose
        # transform is bypassed: directly exercise fit on laplace samples
        from ltcodec.entropy import fit_laplace
        rng = np.random.default_rng(8)
        samples = rng.laplace(0.0, 1.0, 100000)
        fit = fit_laplace(samples)
        assert 0.9 <= fit.b <= 1.1

    def test_scale_rows_match_nondegenerate_count(self):
        mdl = micro_model()
        img = (np.random.default_rng(4).random((64, 64)) * 255).astype(np.uint8)
        reports, _, scales = latent_report(mdl, [("a", img)])
        assert len(scales) == sum(not r.degenerate for r in reports)
