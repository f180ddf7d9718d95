import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duocodec import frame_io as fio


def _rand_yuv(rng, h, w):
    return fio.YuvFrame(
        y=rng.integers(16, 236, (h, w), dtype=np.uint8),
        u=rng.integers(16, 241, (h // 2, w // 2), dtype=np.uint8),
        v=rng.integers(16, 241, (h // 2, w // 2), dtype=np.uint8),
    )


class TestYuvFile:
    def test_frame_size_arithmetic(self, tmp_path):
        rng = np.random.default_rng(0)
        frames = [_rand_yuv(rng, 64, 64) for _ in range(3)]
        path = tmp_path / "clip.yuv"
        fio.write_yuv420(path, frames)
        assert path.stat().st_size == 3 * 64 * 64 * 3 // 2
        back = fio.read_yuv420(path, 64, 64, 3)
        for a, b in zip(frames, back):
            assert np.array_equal(a.y, b.y)
            assert np.array_equal(a.u, b.u)
            assert np.array_equal(a.v, b.v)

    def test_truncated_file_names_frame_index(self, tmp_path):
        path = tmp_path / "short.yuv"
        path.write_bytes(b"\x00" * 12288)  # two 64x64 frames
        with pytest.raises(ValueError, match="frame 2"):
            fio.read_yuv420(path, 64, 64, 3)

    def test_odd_dimensions_rejected(self, tmp_path):
        path = tmp_path / "odd.yuv"
        path.write_bytes(b"\x00" * 100)
        with pytest.raises(ValueError):
            fio.read_yuv420(path, 63, 64, 1)


class TestBt601:
    def test_black_and_white_points(self):
        black = fio.rgb_to_yuv_bt601(np.zeros((4, 4, 3), dtype=np.float32))
        assert np.all(black.y == 16)
        assert np.all(black.u == 128) and np.all(black.v == 128)
        white = fio.rgb_to_yuv_bt601(np.ones((4, 4, 3), dtype=np.float32))
        assert np.all(white.y == 235)
        assert np.all(white.u == 128) and np.all(white.v == 128)

    def test_mid_gray_luma(self):
        # 16 + 0.5 * (65.481 + 128.553 + 24.966) = 125.5 before rounding
        gray = fio.rgb_to_yuv_bt601(np.full((4, 4, 3), 0.5, dtype=np.float32))
        assert np.all(gray.y == 126)
        assert np.all(gray.u == 128) and np.all(gray.v == 128)

    def test_yuv_range_points(self):
        y = np.full((4, 4), 16, dtype=np.uint8)
        c = np.full((2, 2), 128, dtype=np.uint8)
        rgb = fio.yuv_to_rgb_bt601(fio.YuvFrame(y=y, u=c, v=c))
        assert np.allclose(rgb, 0.0, atol=1e-7)
        rgb = fio.yuv_to_rgb_bt601(fio.YuvFrame(y=np.full((4, 4), 235, np.uint8), u=c, v=c))
        assert np.allclose(rgb, 1.0, atol=1e-3)

    def test_round_trip_error_bound(self):
        # 10k random colors, each as a chroma-constant tile so 4:2:0 is lossless
        # on content and only quantization error remains
        rng = np.random.default_rng(7)
        colors = rng.random((10000, 3))
        worst = 0.0
        for lo in range(0, 10000, 500):
            block = colors[lo:lo + 500]
            tile = np.repeat(block[:, None, :], 4, axis=1).reshape(-1, 2, 2, 3)
            for px, frame in zip(block, tile):
                back = fio.yuv_to_rgb_bt601(fio.rgb_to_yuv_bt601(frame.astype(np.float32)))
                worst = max(worst, float(np.abs(back - px[None, None, :]).max()))
        assert worst <= 2.0 / 255.0

    def test_conversion_is_deterministic(self):
        rng = np.random.default_rng(3)
        frame = rng.random((16, 16, 3)).astype(np.float32)
        a = fio.rgb_to_yuv_bt601(frame)
        b = fio.rgb_to_yuv_bt601(frame)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.u, b.u)
        assert np.array_equal(a.v, b.v)


def _bicubic_oracle(frame, factor):
    """Direct per-pixel kernel evaluation, independent of the vectorized path."""
    def kern(t):
        t = abs(t)
        if t <= 1.0:
            return 1.5 * t ** 3 - 2.5 * t ** 2 + 1.0
        if t < 2.0:
            return -0.5 * (t ** 3 - 5.0 * t ** 2 + 8.0 * t - 4.0)
        return 0.0

    h, w = frame.shape[:2]
    oh, ow = h // factor, w // factor
    out = np.zeros((oh, ow, frame.shape[2]))
    for oy in range(oh):
        cy = (oy + 0.5) * factor - 0.5
        ys = range(int(np.ceil(cy - 2 * factor)), int(np.floor(cy + 2 * factor)) + 1)
        wy = np.array([kern((j - cy) / factor) for j in ys])
        wy /= wy.sum()
        for ox in range(ow):
            cx = (ox + 0.5) * factor - 0.5
            xs = range(int(np.ceil(cx - 2 * factor)), int(np.floor(cx + 2 * factor)) + 1)
            wx = np.array([kern((j - cx) / factor) for j in xs])
            wx /= wx.sum()
            acc = np.zeros(frame.shape[2])
            for a, j in zip(wy, ys):
                for b, i in zip(wx, xs):
                    acc += a * b * frame[min(max(j, 0), h - 1), min(max(i, 0), w - 1)]
            out[oy, ox] = acc
    return np.clip(out, 0.0, 1.0)


class TestBicubic:
    def test_constant_preserved(self):
        frame = np.full((32, 32, 3), 0.37, dtype=np.float32)
        for f in (2, 4):
            out = fio.bicubic_downsample(frame, f)
            assert out.shape == (32 // f, 32 // f, 3)
            assert np.allclose(out, 0.37, atol=1e-6)

    def test_checkerboard_factor4(self):
        ij = np.indices((4, 4)).sum(axis=0) % 2
        frame = np.repeat(ij[:, :, None], 3, axis=2).astype(np.float32)
        out = fio.bicubic_downsample(frame, 4)
        assert out.shape == (1, 1, 3)
        assert np.allclose(out, 0.5, atol=1e-9)

    @pytest.mark.parametrize("factor", [2, 4])
    def test_matches_direct_kernel_oracle(self, factor):
        rng = np.random.default_rng(11)
        frame = rng.random((16, 16, 3)).astype(np.float32)
        out = fio.bicubic_downsample(frame, factor)
        ref = _bicubic_oracle(frame.astype(np.float64), factor)
        assert np.abs(out - ref).max() < 1e-6

    def test_rejects_bad_factor_and_shape(self):
        frame = np.zeros((16, 16, 3), dtype=np.float32)
        with pytest.raises(ValueError):
            fio.bicubic_downsample(frame, 3)
        with pytest.raises(ValueError):
            fio.bicubic_downsample(np.zeros((15, 16, 3), np.float32), 4)


class TestPadding:
    @given(h=st.integers(1, 200), w=st.integers(1, 200))
    @settings(max_examples=40, deadline=None)
    def test_crop_of_pad_is_identity(self, h, w):
        rng = np.random.default_rng(h * 211 + w)
        frame = rng.random((h, w, 3)).astype(np.float32)
        padded, spec = fio.pad_to_multiple(frame)
        assert padded.shape[0] % 64 == 0 and padded.shape[1] % 64 == 0
        assert np.array_equal(fio.crop_to_spec(padded, spec), frame)

    def test_padding_replicates_edges(self):
        frame = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
        padded, spec = fio.pad_to_multiple(frame)
        assert padded.shape == (64, 64, 3)
        assert np.array_equal(padded[1, 1], padded[63, 63])
        assert np.array_equal(padded[0, 1], padded[0, 63])

    def test_crop_rejects_mismatched_spec(self):
        frame = np.zeros((64, 64, 3), dtype=np.float32)
        spec = fio.PadSpec(orig_h=2, orig_w=2, padded_h=128, padded_w=64)
        with pytest.raises(ValueError):
            fio.crop_to_spec(frame, spec)


class TestPngDir:
    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        frames = [rng.random((8, 8, 3)).astype(np.float32) for _ in range(3)]
        fio.save_png_dir(tmp_path / "seq", frames)
        back = fio.load_png_dir(tmp_path / "seq")
        assert len(back) == 3
        for a, b in zip(frames, back):
            assert np.abs(a - b).max() <= 0.5 / 255.0 + 1e-6

    def test_empty_dir_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(ValueError):
            fio.load_png_dir(tmp_path / "empty")
