from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from govchain import canonical
from oracles import canonical_text

json_scalars = st.none() | st.booleans() | st.integers(-(10**12), 10**12) | st.text(max_size=12)
json_values = st.recursive(
    json_scalars,
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=6), inner, max_size=4),
    max_leaves=20,
)
finite_floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


def test_sorted_keys_no_whitespace():
    assert canonical.dumps({"b": 1, "a": [1, 2], "c": {"z": None, "y": True}}) == '{"a":[1,2],"b":1,"c":{"y":true,"z":null}}'


def test_integral_float_matches_int():
    assert canonical.dumps({"x": 45.0}) == canonical.dumps({"x": 45})
    assert canonical.digest(45.0) == canonical.digest(45)


@pytest.mark.parametrize(
    "value, text",
    [(0.1, "0.1"), (1e-7, "0.0000001"), (1e21, "1000000000000000000000"), (-0.0, "0"), (2.50, "2.5"), (Decimal("3.000"), "3")],
)
def test_plain_decimal_numbers(value, text):
    assert canonical.format_number(value) == text


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
def test_non_finite_rejected(bad):
    with pytest.raises(canonical.CanonicalError):
        canonical.dumps({"x": bad})


def test_nan_literal_rejected_on_parse():
    with pytest.raises(canonical.CanonicalError):
        canonical.loads('{"x":NaN}')


def test_duplicate_keys_rejected():
    with pytest.raises(canonical.CanonicalError):
        canonical.loads('{"a":1,"a":2}')


def test_unsupported_type_and_key():
    with pytest.raises(canonical.CanonicalError):
        canonical.dumps(object())
    with pytest.raises(canonical.CanonicalError):
        canonical.dumps({1: "x"})


def test_keys_sorted_by_utf8_bytes():
    # U+00E9 encodes as 0xC3 0xA9, which sorts after every ASCII byte
    assert canonical.dumps({"é": 1, "z": 2}) == '{"z":2,"é":1}'


def test_digest_shape():
    d = canonical.digest({"a": 1})
    assert canonical.is_digest(d)
    assert not canonical.is_digest(d.upper())
    assert not canonical.is_digest(d[:-1])
    assert canonical.is_digest(canonical.ZERO_DIGEST)


@given(json_values)
def test_matches_reference_encoder(value):
    assert canonical.dumps(value) == canonical_text(value)


@given(json_values)
def test_round_trip_is_identity(value):
    text = canonical.dumps(value)
    assert canonical.dumps(canonical.loads(text)) == text
    assert canonical.is_canonical(text)


@given(finite_floats)
def test_float_text_parses_back_exactly(x):
    text = canonical.format_number(x)
    assert "e" not in text.lower()
    assert float(text) == x


def test_whitespace_is_not_canonical():
    assert not canonical.is_canonical('{"a": 1}')
    assert not canonical.is_canonical("{NaN")
