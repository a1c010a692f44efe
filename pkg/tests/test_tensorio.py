import numpy as np
import pytest

from sageattn.tensorio import (
    MalformedHeaderError,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedLayoutError,
    load_tensor,
    save_tensor,
)


def test_round_trip_bit_identical(tmp_path):
    t = np.random.default_rng(0).standard_normal((2, 3, 5, 4)).astype(np.float32)
    save_tensor(t, tmp_path / "t.npy")
    back = load_tensor(tmp_path / "t.npy")
    assert back.dtype == np.float32 and back.tobytes() == t.tobytes()
    assert not list(tmp_path.glob("*.tmp"))


def test_readable_by_numpy(tmp_path):
    t = np.arange(16, dtype=np.float32).reshape(1, 2, 4, 2)
    save_tensor(t, tmp_path / "t.npy")
    assert np.array_equal(np.load(tmp_path / "t.npy"), t)


def test_f2_is_upcast(tmp_path):
    t = np.array([0.1, 1.5, -2.0, 65504.0], np.float16).reshape(1, 1, 2, 2)
    np.save(tmp_path / "h.npy", t)
    back = load_tensor(tmp_path / "h.npy")
    assert back.dtype == np.float32 and np.array_equal(back, t.astype(np.float32))
    save_tensor(back, tmp_path / "h2.npy", "<f2")
    assert np.load(tmp_path / "h2.npy").dtype == np.float16


def test_fortran_order_rejected(tmp_path):
    np.save(tmp_path / "f.npy", np.asfortranarray(np.zeros((2, 2, 2, 2), np.float32)))
    with pytest.raises(UnsupportedLayoutError):
        load_tensor(tmp_path / "f.npy")


def test_3d_rejected(tmp_path):
    np.save(tmp_path / "s.npy", np.zeros((2, 2, 2), np.float32))
    with pytest.raises(ShapeError):
        load_tensor(tmp_path / "s.npy")
    with pytest.raises(ShapeError):
        save_tensor(np.zeros((2, 2, 2), np.float32), tmp_path / "x.npy")


@pytest.mark.parametrize("dtype", [np.float64, np.int8, ">f4"])
def test_bad_dtype_rejected(tmp_path, dtype):
    np.save(tmp_path / "d.npy", np.zeros((1, 1, 2, 2), dtype))
    with pytest.raises(UnsupportedDtypeError):
        load_tensor(tmp_path / "d.npy")


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.npy"
    save_tensor(np.ones((1, 1, 4, 4), np.float32), p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(TruncatedPayloadError):
        load_tensor(p)


def test_malformed_header(tmp_path):
    p = tmp_path / "m.npy"
    p.write_bytes(b"not an npy file at all")
    with pytest.raises(MalformedHeaderError):
        load_tensor(p)


def test_errors_are_value_errors(tmp_path):
    np.save(tmp_path / "s.npy", np.zeros((2,), np.float32))
    with pytest.raises(ValueError):
        load_tensor(tmp_path / "s.npy")
