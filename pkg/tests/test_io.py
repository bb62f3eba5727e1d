import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from puq.harness import io


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.complex64])
def test_round_trip_bit_exact(tmp_path, dtype):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4, 5))
    if dtype == np.complex64:
        a = a + 1j * rng.standard_normal(a.shape)
    a = a.astype(dtype)
    io.save_tensor(tmp_path / "t.tsr", a)
    b = io.load_tensor(tmp_path / "t.tsr")
    assert b.dtype == a.dtype and b.shape == a.shape
    assert a.tobytes() == b.tobytes()


def test_layout_on_disk():
    blob = io.encode_tensor(np.array([[1.0, 2.0]], dtype=np.float32))
    assert blob[:8] == b"PUQTNSR1"
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen])
    assert header == {"dtype": "f32", "shape": [1, 2], "order": "row-major"}
    assert blob[12 + hlen :] == struct.pack("<2f", 1.0, 2.0)


def test_complex_is_interleaved_float_pairs():
    blob = io.encode_tensor(np.array([1 + 2j], dtype=np.complex64))
    assert blob.endswith(struct.pack("<2f", 1.0, 2.0))


def test_bad_magic():
    blob = bytearray(io.encode_tensor(np.zeros(3, np.float32)))
    blob[0:1] = b"X"
    with pytest.raises(io.MagicError):
        io.decode_tensor(bytes(blob))


def test_truncated_payload():
    blob = io.encode_tensor(np.zeros(3, np.float32))
    with pytest.raises(io.LengthError):
        io.decode_tensor(blob[:-2])


def test_header_shape_disagrees_with_payload():
    header = json.dumps({"dtype": "f32", "shape": [4], "order": "row-major"}).encode()
    blob = io.MAGIC + struct.pack("<I", len(header)) + header + b"\0" * 12
    with pytest.raises(io.LengthError):
        io.decode_tensor(blob)


def test_malformed_header_and_dtype():
    header = b"{not json"
    with pytest.raises(io.HeaderError):
        io.decode_tensor(io.MAGIC + struct.pack("<I", len(header)) + header)
    header = json.dumps({"dtype": "i8", "shape": [1], "order": "row-major"}).encode()
    with pytest.raises(io.DtypeError):
        io.decode_tensor(io.MAGIC + struct.pack("<I", len(header)) + header + b"\0" * 8)
    with pytest.raises(io.DtypeError):
        io.encode_tensor(np.zeros(2, np.int32))


def test_digest_changes_with_content():
    a = np.zeros(4, np.float32)
    assert io.digest(a) == io.digest(a.copy())
    assert io.digest(a) != io.digest(a + 1)


def test_pgm_endpoints_and_window(tmp_path):
    v = np.array([[10.0, 20.0], [30.0, 50.0]])
    io.export_map(v, tmp_path / "m.pgm")
    raw = (tmp_path / "m.pgm").read_bytes()
    assert raw.startswith(b"P5\n# window 10.0 50.0\n2 2\n65535\n")
    samples, (lo, hi) = io.read_pgm16(tmp_path / "m.pgm")
    assert (lo, hi) == (10.0, 50.0)
    assert samples.min() == 0 and samples.max() == 65535
    assert samples[0, 1] == round(65535 / 4)
    # big-endian 16-bit samples
    assert raw[-2:] == b"\xff\xff"


def test_pgm_constant_map(tmp_path):
    io.export_map(np.full((3, 3), 7.0), tmp_path / "c.pgm")
    samples, _ = io.read_pgm16(tmp_path / "c.pgm")
    assert len(np.unique(samples)) == 1


def test_export_rejects_non_finite_and_bad_format(tmp_path):
    with pytest.raises(ValueError):
        io.export_map(np.array([[np.nan, 1.0]]), tmp_path / "x.pgm")
    with pytest.raises(ValueError):
        io.export_map(np.ones((2, 2)), tmp_path / "x.png", fmt="png")


def test_weights_round_trip(tmp_path):
    from puq import recon

    net = recon.UnrolledNet(recon.UnrolledConfig(2, recon.DenoiserConfig(n_phases=2, hidden=4)), seed=1)
    io.save_weights(tmp_path / "w", net, {"note": "x"})
    meta, arrays = io.load_weights(tmp_path / "w")
    assert meta == {"note": "x"}
    other = recon.UnrolledNet(net.cfg, seed=2)
    other.load_arrays(arrays)
    for (_, _, _, a), (_, _, _, b) in zip(net.named_tensors(), other.named_tensors()):
        assert a.data.tobytes() == b.data.tobytes()


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6), elements=st.floats(-1e6, 1e6)))
def test_csv_round_trip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "m.csv"
    io.export_map(values, path, fmt="csv")
    back = io.read_map_csv(path)
    np.testing.assert_array_equal(back, values)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(st.sampled_from([np.float32, np.float64]), hnp.array_shapes(max_dims=4, max_side=5)))
def test_encode_decode_property(a):
    b = io.decode_tensor(io.encode_tensor(a))
    assert a.tobytes() == b.tobytes() and a.shape == b.shape
