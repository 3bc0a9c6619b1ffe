import pytest
from hypothesis import given
from hypothesis import strategies as st

from ergokit.errors import PreconditionError
from ergokit.growth import GrowthFunction


@pytest.mark.parametrize("text,M,value", [
    ("M^2", 7, 49), ("M**3", 3, 27), ("8*M", 5, 40), ("M*8", 5, 40), ("2*M+3", 4, 11),
    ("M+1", 9, 10), ("M", 6, 6), ("table:1=4,2=9", 2, 9),
])
def test_parse_and_evaluate(text, M, value):
    assert GrowthFunction.parse(text)(M) == value


@pytest.mark.parametrize("text", ["M^2", "8*M", "2*M+3", "table:1=4,2=9", "M+1"])
def test_str_round_trips(text):
    F = GrowthFunction.parse(text)
    assert GrowthFunction.parse(str(F)) == F


@pytest.mark.parametrize("text", ["M-1", "2*M*3", "M^0.5", "exp(M)", "table:3=2"])
def test_rejects_invalid(text):
    with pytest.raises(PreconditionError):
        GrowthFunction.parse(text)


def test_table_extension_is_monotone():
    F = GrowthFunction.parse("table:1=4,2=9")
    values = [F(M) for M in range(1, 20)]
    assert values == sorted(values)
    assert all(F(M) >= M for M in range(1, 20))


@given(st.sampled_from(["M^2", "M^1.5", "3*M", "M+2", "table:1=3,5=30"]), st.integers(1, 500))
def test_growth_is_monotone_and_dominates_identity(text, M):
    F = GrowthFunction.parse(text)
    assert F(M) >= M and F(M + 1) >= F(M)
