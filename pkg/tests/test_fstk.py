import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from photongmrf import fstk
from photongmrf.core import DataValidationError


def test_layout():
    text = fstk.dumps(np.array([[[1, 0, 1], [0, 0, 1]]]), "u1")
    assert text == "FSTK 1\n2 3 1 u1\n1 0 1\n0 0 1\n"


def test_frames_in_order():
    x = np.arange(12, dtype=float).reshape(3, 2, 2)
    text = fstk.dumps(x)
    assert text.splitlines()[2:4] == ["0 1", "2 3"]
    assert text.splitlines()[-1] == "10 11"


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_f64_roundtrip_is_exact(x):
    back, dtype = fstk.loads(fstk.dumps(x))
    assert dtype == "f64"
    np.testing.assert_array_equal(back, x)


def test_u32_roundtrip(tmp_path):
    y = np.array([[[0, 5], [4294967295, 1]]])
    p = tmp_path / "y.fstk"
    fstk.write(p, y, "u32")
    back, dtype = fstk.read(p)
    assert dtype == "u32"
    np.testing.assert_array_equal(back, y)
    assert not list(tmp_path.glob(".tmp-*"))


@pytest.mark.parametrize("text", [
    "FSTK 2\n1 1 1 f64\n0\n",
    "FSTK 1\n1 1 1 f32\n0\n",
    "FSTK 1\n2 1 1 f64\n0\n",
    "FSTK 1\n1 2 1 f64\n0\n",
    "FSTK 1\n1 1 1 u1\n2\n",
    "FSTK 1\r\n1 1 1 f64\r\n0\r\n",
    "FSTK 1\n1 1 1 u32\nx\n",
])
def test_malformed(text):
    with pytest.raises(DataValidationError):
        fstk.loads(text)


def test_rejects_invalid_values():
    with pytest.raises(DataValidationError):
        fstk.dumps(np.array([[np.nan]]))
    with pytest.raises(DataValidationError):
        fstk.dumps(np.array([[2]]), "u1")
