"""I/O round trips, quantization, and type invariants."""

import numpy as np
import pytest

from mono2stereo.core import (
    FormatError,
    InputError,
    ValidationError,
    VideoClip,
    quantize_u8,
    read_clip,
    read_depth_pfm,
    read_frame_png,
    read_mask_pgm,
    read_pfm,
    write_clip,
    write_frame_png,
    write_mask_pgm,
    write_pfm,
)


class TestPng:
    def test_all_black_reads_as_zeros(self, tmp_path):
        path = tmp_path / "black.png"
        write_frame_png(np.zeros((2, 2, 3)), path)
        assert np.array_equal(read_frame_png(path), np.zeros((2, 2, 3)))

    def test_all_white_reads_as_ones(self, tmp_path):
        path = tmp_path / "white.png"
        write_frame_png(np.ones((2, 2, 3)), path)
        assert np.array_equal(read_frame_png(path), np.ones((2, 2, 3)))

    def test_mid_value_maps_to_v_over_255(self, tmp_path):
        frame = np.full((1, 1, 3), 128 / 255.0)
        path = tmp_path / "mid.png"
        write_frame_png(frame, path)
        got = read_frame_png(path)
        # direct arithmetic oracle: stored byte 128, read back as 128/255
        assert np.allclose(got, 128 / 255.0, atol=0, rtol=0)
        assert abs(got[0, 0, 0] - 0.50196) < 1e-5

    def test_missing_file_raises_input_error(self, tmp_path):
        with pytest.raises(InputError, match="not found"):
            read_frame_png(tmp_path / "nope.png")

    def test_non_rgb_png_rejected_with_path(self, tmp_path):
        from PIL import Image

        path = tmp_path / "gray.png"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8), mode="L").save(path)
        with pytest.raises(FormatError, match=str(path)):
            read_frame_png(path)

    def test_non_png_rejected(self, tmp_path):
        from PIL import Image

        path = tmp_path / "frame.png"
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8), mode="RGB").save(
            path, format="JPEG"
        )
        with pytest.raises(FormatError, match="PNG"):
            read_frame_png(path)

    def test_roundtrip_identity_after_quantization(self, tmp_path):
        rng = np.random.default_rng(11)
        frame = quantize_u8(rng.random((5, 7, 3))) / 255.0
        path = tmp_path / "rt.png"
        write_frame_png(frame, path)
        assert np.array_equal(read_frame_png(path), frame)

    def test_quantization_rounds_half_up(self):
        # 0.5/255 * 255 = 0.5 exactly, which rounds up to 1
        assert quantize_u8(np.array([0.5 / 255.0]))[0] == 1
        assert quantize_u8(np.array([0.49 / 255.0]))[0] == 0
        assert quantize_u8(np.array([0.0]))[0] == 0
        assert quantize_u8(np.array([1.0]))[0] == 255


class TestPfm:
    def test_constant_depth_roundtrip(self, tmp_path):
        path = tmp_path / "d.pfm"
        write_pfm(np.ones((4, 4)), path)
        assert np.array_equal(read_depth_pfm(path), np.ones((4, 4)))

    def test_roundtrip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        data = rng.random((6, 5)).astype(np.float32)
        path = tmp_path / "rt.pfm"
        write_pfm(data, path)
        assert np.array_equal(read_pfm(path), data)

    def test_row_order_normalized(self, tmp_path):
        data = np.arange(12, dtype=np.float32).reshape(3, 4)
        path = tmp_path / "rows.pfm"
        write_pfm(data, path)
        # bottom-to-top on disk, top-to-bottom in memory
        raw = path.read_bytes()
        header_end = raw.index(b"\n", raw.index(b"\n", raw.index(b"\n") + 1) + 1) + 1
        first_stored_row = np.frombuffer(raw[header_end:header_end + 16], dtype="<f4")
        assert np.array_equal(first_stored_row, data[2])
        assert np.array_equal(read_pfm(path), data)

    def test_both_endiannesses_read_identically(self, tmp_path):
        rng = np.random.default_rng(5)
        data = rng.random((4, 4)).astype(np.float32)
        little, big = tmp_path / "le.pfm", tmp_path / "be.pfm"
        write_pfm(data, little, little_endian=True)
        write_pfm(data, big, little_endian=False)
        assert np.array_equal(read_pfm(little), read_pfm(big))

    def test_nonpositive_depth_reports_pixel(self, tmp_path):
        data = np.ones((3, 3), dtype=np.float32)
        data[1, 2] = 0.0
        path = tmp_path / "bad.pfm"
        write_pfm(data, path)
        with pytest.raises(ValidationError, match=r"\(1, 2\)"):
            read_depth_pfm(path)

    def test_color_pfm_rejected(self, tmp_path):
        path = tmp_path / "color.pfm"
        path.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 48)
        with pytest.raises(FormatError, match="grayscale"):
            read_pfm(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.pfm"
        path.write_bytes(b"Qx\n2 2\n-1.0\n" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            read_pfm(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.pfm"
        path.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\x00" * 10)
        with pytest.raises(FormatError, match="truncated"):
            read_pfm(path)

    def test_nan_depth_rejected(self, tmp_path):
        data = np.ones((2, 2), dtype=np.float32)
        data[0, 1] = np.nan
        path = tmp_path / "nan.pfm"
        write_pfm(data, path)
        with pytest.raises(ValidationError, match=r"\(0, 1\)"):
            read_depth_pfm(path)


class TestPgm:
    def test_all_zero_roundtrip(self, tmp_path):
        path = tmp_path / "z.pgm"
        write_mask_pgm(np.zeros((3, 3), dtype=np.uint8), path)
        assert np.array_equal(read_mask_pgm(path), np.zeros((3, 3), dtype=np.uint8))

    def test_checkerboard_roundtrip(self, tmp_path):
        mask = np.indices((6, 7)).sum(axis=0) % 2
        path = tmp_path / "c.pgm"
        write_mask_pgm(mask, path)
        assert np.array_equal(read_mask_pgm(path), mask.astype(np.uint8))

    def test_threshold_at_128(self, tmp_path):
        path = tmp_path / "t.pgm"
        payload = bytes([127, 128, 0, 255])
        path.write_bytes(b"P5\n2 2\n255\n" + payload)
        assert np.array_equal(read_mask_pgm(path), np.array([[0, 1], [0, 1]], dtype=np.uint8))

    def test_one_maps_to_255_on_disk(self, tmp_path):
        path = tmp_path / "v.pgm"
        write_mask_pgm(np.array([[0, 1]], dtype=np.uint8), path)
        assert path.read_bytes().endswith(bytes([0, 255]))

    def test_nonbinary_mask_rejected(self, tmp_path):
        with pytest.raises(ValidationError, match="binary"):
            write_mask_pgm(np.array([[0, 2]]), tmp_path / "x.pgm")

    def test_wrong_maxval_rejected(self, tmp_path):
        path = tmp_path / "deep.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n" + b"\x00" * 8)
        with pytest.raises(FormatError, match="maxval"):
            read_mask_pgm(path)

    def test_header_comments_tolerated(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([0, 255, 255, 0]))
        assert np.array_equal(read_mask_pgm(path), [[0, 1], [1, 0]])


class TestVideoClip:
    def test_rejects_out_of_range_values(self):
        with pytest.raises(ValidationError, match=r"\[0, 1\]"):
            VideoClip(frames=np.full((1, 2, 2, 3), 1.5))

    def test_rejects_non_finite(self):
        frames = np.zeros((1, 2, 2, 3))
        frames[0, 0, 0, 0] = np.nan
        with pytest.raises(ValidationError, match="finite"):
            VideoClip(frames=frames)

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            VideoClip(frames=np.zeros((0, 2, 2, 3)))

    def test_clip_directory_roundtrip(self, tmp_path):
        rng = np.random.default_rng(9)
        frames = quantize_u8(rng.random((3, 4, 6, 3))) / 255.0
        clip = VideoClip(frames=frames, fps=30.0)
        write_clip(clip, tmp_path / "clip")
        back = read_clip(tmp_path / "clip", fps=30.0)
        assert back.n_frames == 3
        assert np.array_equal(back.frames, clip.frames)

    def test_frame_numbering_starts_at_zero(self, tmp_path):
        clip = VideoClip(frames=np.zeros((2, 2, 2, 3)))
        paths = write_clip(clip, tmp_path / "clip")
        assert paths[0].name == "000000.png"
        assert paths[1].name == "000001.png"

    def test_empty_directory_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(InputError):
            read_clip(tmp_path / "empty")
