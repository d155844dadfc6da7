import numpy as np
import pytest

from pgdto.exceptions import DomainError, ParameterError
from pgdto.filtering import apply_filter, build_filter, filter_chain_rule
from pgdto.mesh_fea import StructuredGrid
from util import central_difference, relative_error


@pytest.fixture
def kernel():
    return build_filter(StructuredGrid(8, 4), 1.5)


def test_small_radius_is_identity():
    W = build_filter(StructuredGrid(5, 4), 0.5).weights.toarray()
    np.testing.assert_array_equal(W, np.eye(20))


DIAG = 1.5 - np.sqrt(2.0)  # diagonal neighbours sit at sqrt(2) < 1.5


def test_interior_stencil(kernel):
    e = 1 * 8 + 3
    row = kernel.weights.getrow(e).toarray().ravel()
    edges = {e - 1, e + 1, e - 8, e + 8}
    corners = {e - 9, e - 7, e + 7, e + 9}
    assert set(np.flatnonzero(row)) == {e} | edges | corners
    total = 1.5 + 4 * 0.5 + 4 * DIAG
    assert row[e] == pytest.approx(1.5 / total, rel=1e-14)
    for j in edges:
        assert row[j] == pytest.approx(0.5 / total, rel=1e-14)
    for j in corners:
        assert row[j] == pytest.approx(DIAG / total, rel=1e-14)


def test_corner_row_normalized(kernel):
    row = kernel.weights.getrow(0).toarray().ravel()
    assert set(np.flatnonzero(row)) == {0, 1, 8, 9}
    assert row[0] == pytest.approx(1.5 / (1.5 + 1.0 + DIAG), rel=1e-14)
    np.testing.assert_allclose(kernel.weights.sum(axis=1), 1.0, atol=1e-12)


def test_wider_radius_weights():
    grid = StructuredGrid(7, 7)
    W = build_filter(grid, 2.5).weights.toarray()
    centre = 3 * 7 + 3
    cx, cy = grid.element_centroids[centre]
    d = np.hypot(*(grid.element_centroids - [cx, cy]).T)
    w = np.maximum(0, 2.5 - d)
    np.testing.assert_allclose(W[centre], w / w.sum(), rtol=1e-14)
    diff = grid.element_centroids[:, None, :] - grid.element_centroids[None, :, :]
    np.testing.assert_array_equal(W > 0, np.hypot(diff[..., 0], diff[..., 1]) < 2.5)


def test_uniform_field_preserved(kernel):
    np.testing.assert_allclose(apply_filter(kernel, np.full(32, 0.37)), 0.37, rtol=1e-14)


def test_delta_field_spreads_by_column(kernel):
    x = np.zeros(32)
    x[11] = 1.0
    out = apply_filter(kernel, x)
    np.testing.assert_allclose(out, kernel.weights.toarray()[:, 11], rtol=0, atol=0)
    assert out.sum() == pytest.approx(kernel.column_sums[11], rel=1e-14)


def test_identity_kernel_passthrough():
    k = build_filter(StructuredGrid(3, 3), 0.9)
    x = np.random.default_rng(0).uniform(size=9)
    np.testing.assert_array_equal(apply_filter(k, x), x)
    np.testing.assert_array_equal(filter_chain_rule(k, x), x)


def test_chain_rule_is_transpose(kernel):
    g = np.random.default_rng(1).normal(size=32)
    np.testing.assert_allclose(filter_chain_rule(kernel, g), kernel.weights.toarray().T @ g, rtol=1e-14)
    ones = filter_chain_rule(kernel, np.ones(32))
    assert not np.allclose(ones, 1.0)  # boundary columns do not sum to one


def test_chain_rule_finite_difference(kernel):
    rng = np.random.default_rng(2)
    x = rng.uniform(size=32)
    c = rng.normal(size=32)

    def objective(v):
        f = apply_filter(kernel, v)
        return float(c @ f**2)

    grad = filter_chain_rule(kernel, 2 * c * apply_filter(kernel, x))
    assert relative_error(grad, central_difference(objective, x)) <= 1e-6


def test_linearity_bounds_and_adjoint(kernel):
    rng = np.random.default_rng(4)
    for _ in range(20):
        x, y = rng.uniform(size=32), rng.uniform(size=32)
        a, b = rng.normal(size=2)
        np.testing.assert_allclose(apply_filter(kernel, a * x + b * y),
                                   a * apply_filter(kernel, x) + b * apply_filter(kernel, y),
                                   atol=1e-14)
        fx = apply_filter(kernel, x)
        assert fx.min() >= 0 and fx.max() <= 1
        lhs, rhs = fx @ y, x @ filter_chain_rule(kernel, y)
        assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_per_channel(kernel):
    x = np.random.default_rng(5).uniform(size=(32, 3))
    out = apply_filter(kernel, x)
    for j in range(3):
        np.testing.assert_allclose(out[:, j], apply_filter(kernel, x[:, j]))


def test_errors(kernel):
    with pytest.raises(DomainError):
        apply_filter(kernel, np.ones(31))
    with pytest.raises(DomainError):
        filter_chain_rule(kernel, np.ones(33))
    with pytest.raises(ParameterError):
        build_filter(StructuredGrid(2, 2), 0.0)
