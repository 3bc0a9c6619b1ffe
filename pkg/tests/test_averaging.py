import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergokit import oracles
from ergokit.averaging import (EdgeFunction, all_edges, coarse_fine_gap, diagonal_projection,
                               diagonal_projection_product, is_measurable, lift_functions,
                               module_multiply, multiple_average, multiple_average_sweep,
                               resampling_check, sliding_average)
from ergokit.errors import MeasurabilityError, PreconditionError, ShapeMismatchError
from ergokit.grid import FiniteProbabilitySpace, GridFunction, random_grid_function


def test_edge_function_roundtrip(rng):
    P = 4
    compact = rng.uniform(-1, 1, (P, P))
    ef = EdgeFunction(compact, (1, 3), 3, P)
    dense = ef.dense()
    assert dense.values.shape == (P, P, P)
    assert np.allclose(dense.values[:, 2, :], compact)
    back = EdgeFunction.from_dense(dense, (1, 3))
    assert np.array_equal(back.compact, ef.compact)


def test_from_dense_rejects_non_measurable(rng):
    f = random_grid_function(rng, 3, 2)
    with pytest.raises(MeasurabilityError):
        EdgeFunction.from_dense(f, (1,))


def test_measurability_checks(rng):
    f = EdgeFunction(rng.uniform(size=5), (2,), 2, 5).dense()
    assert is_measurable(f, (2,))
    assert not is_measurable(f, (1,))
    assert resampling_check(f, (2,), rng)
    assert not resampling_check(f, (1,), rng)


def test_sliding_average_examples():
    g = GridFunction([1.0, 0.0, 0.0, 0.0])
    assert np.allclose(sliding_average(g, 2).values, [0.5, 0.0, 0.0, 0.5])
    assert np.allclose(sliding_average(g, 4).values, 0.25)
    assert np.allclose(sliding_average(g, 1).values, g.values)


def test_sliding_average_with_x(backend, rng):
    space = FiniteProbabilitySpace([0.2, 0.8])
    g = random_grid_function(rng, 9, 1, space=space)
    for N in (1, 4, 9, 20):
        assert np.allclose(sliding_average(g, N).values, oracles.sliding_average(np.asarray(g.values), N),
                           atol=1e-12)


def test_N_must_be_positive(rng):
    with pytest.raises(PreconditionError):
        sliding_average(random_grid_function(rng, 3, 1), 0)


def test_diagonal_projection_of_constant_is_constant():
    f = GridFunction.constant(0.3, 5, 3)
    assert np.allclose(diagonal_projection(f, 4).values, 0.3)


def test_diagonal_projection_with_x(backend, rng):
    space = FiniteProbabilitySpace.uniform(3)
    f = random_grid_function(rng, 5, 3, space=space)
    for N in (1, 3, 7):
        fast = diagonal_projection(f, N).values
        slow = oracles.diagonal_projection(np.asarray(f.values), 5, 2, N)
        assert np.allclose(fast, slow, atol=1e-12)


def test_lift_specialization_for_two_functions(rng):
    P = 5
    f1, f2 = random_grid_function(rng, P, 2), random_grid_function(rng, P, 2)
    g23, g13 = lift_functions([f1, f2])
    assert g23.edge == (2, 3) and g13.edge == (1, 3)
    for v1, v2, v3 in np.ndindex(P, P, P):
        assert g23.expand()[v1, v2, v3] == f1.values[(-v2 - v3) % P, v2]
        assert g13.expand()[v1, v2, v3] == f2.values[v1, (-v1 - v3) % P]


def test_lifted_product_matches_oracle(rng):
    P = 4
    fs = [random_grid_function(rng, P, 2) for _ in range(2)]
    prod = np.ones((P,) * 3)
    for ef in lift_functions(fs):
        prod = prod * ef.expand()
    assert np.allclose(prod, oracles.lifted_product([f.values for f in fs], P), atol=1e-15)


@pytest.mark.parametrize("l", [1, 2, 3])
def test_multiple_average_vs_oracle(backend, rng, l):
    P = 4
    fs = [random_grid_function(rng, P, l) for _ in range(l)]
    for N in (1, 3, 4, 9):
        fast = multiple_average(fs, N).values
        slow = oracles.multiple_average([f.values for f in fs], P, N)
        assert np.allclose(fast, slow, atol=1e-12)


def test_sweep_matches_single_calls(rng):
    fs = [random_grid_function(rng, 5, 2) for _ in range(2)]
    for N, val in multiple_average_sweep(fs, [1, 3, 7]):
        assert np.allclose(val.values, multiple_average(fs, N).values, atol=1e-12)


def test_product_projection_chunks_agree(backend, rng):
    P = 5
    fs = [EdgeFunction(rng.uniform(-1, 1, (P, P)), e, 3, P) for e in all_edges(3, 2)]
    a = diagonal_projection_product(fs, 3).values
    b = diagonal_projection_product(fs, 3, chunk_entries=1).values
    dense = np.prod([f.expand() for f in fs], axis=0)
    c = diagonal_projection(GridFunction(dense), 3).values
    assert np.allclose(a, b, atol=1e-14) and np.allclose(a, c, atol=1e-12)


def test_module_identity_and_rejection(rng):
    P = 5
    h = random_grid_function(rng, P, 3)
    g = EdgeFunction(rng.uniform(-1, 1, (P, P)), (1, 2), 3, P)
    out = module_multiply(g, h, 4)
    assert np.allclose(out.values, g.compact * diagonal_projection(h, 4).values, atol=1e-12)
    with pytest.raises(MeasurabilityError):
        module_multiply(EdgeFunction(rng.uniform(size=(P, P)), (1, 3), 3, P), h, 2)


def test_shape_mismatch(rng):
    with pytest.raises(ShapeMismatchError):
        multiple_average([random_grid_function(rng, 3, 2)], 2)


@settings(max_examples=40, deadline=None)
@given(P=st.integers(2, 60), M=st.integers(1, 30), N=st.integers(1, 200), seed=st.integers(0, 2**31))
def test_coarse_fine_gap_bound(P, M, N, seed):
    """||S_M S_N g - S_N g||_2 <= 2 M / N for |g| <= 1."""
    g = random_grid_function(np.random.default_rng(seed), P, 1)
    assert coarse_fine_gap(g, M, N) <= 2 * M / N + 1e-12


@settings(max_examples=25, deadline=None)
@given(P=st.integers(1, 8), N=st.integers(1, 30), seed=st.integers(0, 2**31))
def test_sliding_average_contracts_and_preserves_mean(P, N, seed):
    g = random_grid_function(np.random.default_rng(seed), P, 1)
    s = sliding_average(g, N).values
    assert np.isclose(s.mean(), g.values.mean(), atol=1e-12)
    assert np.sqrt(np.mean(s**2)) <= np.sqrt(np.mean(g.values**2)) + 1e-12
