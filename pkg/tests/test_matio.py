import numpy as np
import pytest

from identlab.matio import MatrixFormatError, from_midl_bytes, load_matrix, save_matrix, to_midl_bytes


def test_midl_header_layout():
    buf = to_midl_bytes(np.array([[1.0, 2.0, 3.0]]))
    assert buf[:4] == b"MIDL"
    assert int.from_bytes(buf[4:8], "little") == 1
    assert int.from_bytes(buf[8:16], "little") == 1
    assert int.from_bytes(buf[16:24], "little") == 3
    assert np.frombuffer(buf[24:], "<f8").tolist() == [1.0, 2.0, 3.0]


def test_midl_roundtrip_bit_exact(tmp_path):
    m = np.random.default_rng(0).standard_normal((7, 3))
    m[0, 0] = np.nextafter(1.0, 2.0)
    out = load_matrix(save_matrix(tmp_path / "m.midl", m))
    assert out.tobytes() == m.tobytes()


def test_csv_roundtrip_bit_exact_with_header(tmp_path):
    m = np.random.default_rng(1).standard_normal((5, 2))
    path = save_matrix(tmp_path / "m.csv", m, header=["a", "b"])
    assert path.read_text().splitlines()[0] == "a,b"
    assert load_matrix(path).tobytes() == m.tobytes()


def test_csv_without_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2.5\n3,-4e-3\n")
    np.testing.assert_array_equal(load_matrix(p), [[1, 2.5], [3, -0.004]])


@pytest.mark.parametrize(
    "buf",
    [b"MID", b"XXXX" + bytes(20), to_midl_bytes(np.ones((2, 2)))[:-8], b"MIDL" + (2).to_bytes(4, "little") + bytes(16)],
)
def test_corrupt_midl(buf):
    with pytest.raises(MatrixFormatError):
        from_midl_bytes(buf)


def test_ragged_csv(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises(MatrixFormatError):
        load_matrix(p)
