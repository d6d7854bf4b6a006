import numpy as np
import pytest

from arise.errors import FileFormatError
from arise.wavio import FORMAT_FLOAT32, FORMAT_PCM16, read_wav, write_wav


class TestFloat32:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        data = rng.standard_normal((3, 1000)).astype(np.float32)
        path = tmp_path / "multi.wav"
        write_wav(path, data, 16000)
        got, rate, fmt = read_wav(path)
        assert rate == 16000 and fmt == FORMAT_FLOAT32
        np.testing.assert_array_equal(got, data)

    def test_mono_shape(self, tmp_path, rng):
        path = tmp_path / "mono.wav"
        write_wav(path, rng.standard_normal(500), 8000)
        got, rate, _ = read_wav(path)
        assert got.shape == (1, 500) and rate == 8000

    def test_float64_input_cast_to_float32(self, tmp_path, rng):
        data = rng.standard_normal((2, 100))
        path = tmp_path / "cast.wav"
        write_wav(path, data, 16000)
        got, _, _ = read_wav(path)
        np.testing.assert_array_equal(got, data.astype(np.float32))


class TestPcm16:
    def test_round_trip_within_quantization(self, tmp_path, rng):
        data = 0.8 * np.sin(np.linspace(0, 20, 2000))[np.newaxis, :]
        path = tmp_path / "pcm.wav"
        write_wav(path, data, 16000, fmt=FORMAT_PCM16)
        got, rate, fmt = read_wav(path)
        assert fmt == FORMAT_PCM16
        assert np.abs(got - data).max() < 1.0 / 32767

    def test_clipping_out_of_range(self, tmp_path):
        data = np.array([[2.0, -2.0, 0.0]])
        path = tmp_path / "clip.wav"
        write_wav(path, data, 16000, fmt=FORMAT_PCM16)
        got, _, _ = read_wav(path)
        assert abs(got[0, 0] - 1.0) < 1e-4 and abs(got[0, 1] + 1.0) < 1e-4


class TestValidation:
    def test_not_riff_rejected(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"this is not audio at all")
        with pytest.raises(FileFormatError):
            read_wav(path)

    def test_missing_data_chunk_rejected(self, tmp_path):
        import struct

        path = tmp_path / "nodata.wav"
        fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
        body = b"fmt " + struct.pack("<I", len(fmt)) + fmt
        path.write_bytes(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)
        with pytest.raises(FileFormatError):
            read_wav(path)

    def test_partial_frame_rejected(self, tmp_path, rng):
        path = tmp_path / "partial.wav"
        write_wav(path, rng.standard_normal((2, 10)), 16000)
        blob = bytearray(path.read_bytes())
        # shrink the data chunk by two bytes so frames no longer divide it
        data_pos = blob.find(b"data")
        import struct

        (size,) = struct.unpack("<I", blob[data_pos + 4 : data_pos + 8])
        blob[data_pos + 4 : data_pos + 8] = struct.pack("<I", size - 2)
        path.write_bytes(bytes(blob[:-2]))
        with pytest.raises(FileFormatError):
            read_wav(path)

    def test_unsupported_format_rejected(self, tmp_path):
        path = tmp_path / "unsup.wav"
        write_wav(path, np.zeros(10), 16000)
        blob = bytearray(path.read_bytes())
        fmt_pos = blob.find(b"fmt ")
        blob[fmt_pos + 8 : fmt_pos + 10] = (7).to_bytes(2, "little")  # mu-law
        path.write_bytes(bytes(blob))
        with pytest.raises(FileFormatError):
            read_wav(path)

    def test_bad_write_format_rejected(self, tmp_path):
        with pytest.raises(FileFormatError):
            write_wav(tmp_path / "x.wav", np.zeros(4), 16000, fmt="float64")
