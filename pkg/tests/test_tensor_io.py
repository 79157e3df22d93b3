"""Round-trip and format tests for raw tensor files."""

import struct

import numpy as np
import pytest

from slideseg import tensor_io


class TestTensorIO:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_round_trip_bit_exact(self, tmp_path, dtype):
        rng = np.random.default_rng(0)
        for shape in [(), (1,), (3,), (2, 3), (2, 3, 4, 5)]:
            arr = rng.normal(size=shape).astype(dtype)
            # salt in values whose bit patterns are easy to corrupt
            if arr.size >= 3:
                arr.flat[0] = 0.0
                arr.flat[1] = -0.0
                arr.flat[2] = np.finfo(dtype).tiny
            path = tmp_path / "t.bin"
            tensor_io.save_tensor(path, arr)
            back = tensor_io.load_tensor(path)
            assert back.dtype == arr.dtype and back.shape == arr.shape
            assert arr.tobytes() == back.tobytes()

    def test_header_layout(self):
        buf = tensor_io.tensor_bytes(np.zeros((2, 3), dtype=np.float64))
        assert buf[:4] == b"SGT1"
        assert buf[4] == 1  # float64 code
        assert buf[5] == 2  # ndim
        assert struct.unpack_from("<2Q", buf, 6) == (2, 3)
        assert len(buf) == 4 + 2 + 16 + 6 * 8

    def test_non_contiguous_input(self, tmp_path):
        arr = np.arange(24, dtype=np.float32).reshape(4, 6)[:, ::2]
        path = tmp_path / "t.bin"
        tensor_io.save_tensor(path, arr)
        np.testing.assert_array_equal(tensor_io.load_tensor(path), arr)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "t.bin"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(tensor_io.FormatError):
            tensor_io.load_tensor(path)

    def test_truncation_rejected(self, tmp_path):
        good = tensor_io.tensor_bytes(np.ones((4, 4), dtype=np.float32))
        path = tmp_path / "t.bin"
        path.write_bytes(good[:-1])
        with pytest.raises(tensor_io.FormatError):
            tensor_io.load_tensor(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "t.bin"
        path.write_bytes(tensor_io.tensor_bytes(np.ones(2, dtype=np.float32)) + b"x")
        with pytest.raises(tensor_io.FormatError):
            tensor_io.load_tensor(path)

    def test_integer_dtype_rejected(self):
        with pytest.raises(tensor_io.FormatError):
            tensor_io.tensor_bytes(np.ones(3, dtype=np.int32))

    def test_multi_record_stream(self):
        a = np.ones((2, 2), dtype=np.float32)
        b = np.full(3, 2.0)
        buf = tensor_io.tensor_bytes(a) + tensor_io.tensor_bytes(b)
        first, off = tensor_io.read_tensor(buf)
        second, end = tensor_io.read_tensor(buf, off)
        assert end == len(buf)
        np.testing.assert_array_equal(first, a)
        np.testing.assert_array_equal(second, b)
