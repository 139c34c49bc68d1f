import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equibench.errors import DimensionError, DomainError
from equibench.graphdata import EventGraph, fully_connected
from equibench.groups import (
    MINKOWSKI,
    LorentzBoost,
    Rotation2D,
    act,
    apply_to_event,
    boost_matrix,
    family_of,
    identity,
    minkowski_dot,
    rotation_matrix,
    sample_group_element,
)

betas = st.floats(-0.99, 0.99, allow_nan=False)
axes = st.sampled_from(["x", "y", "z"])


def test_minkowski_dot_examples():
    assert minkowski_dot([1, 0, 0, 0], [1, 0, 0, 0]) == 1.0
    assert minkowski_dot([1, 1, 0, 0], [1, 1, 0, 0]) == 0.0
    assert minkowski_dot([2, 1, 1, 1], [1, 0, 0, 0]) == 2.0


def test_minkowski_dot_rejects_wrong_length():
    with pytest.raises(DimensionError):
        minkowski_dot([1, 0, 0], [1, 0, 0])


def test_boost_examples():
    np.testing.assert_array_equal(boost_matrix(LorentzBoost(0.0)), np.eye(4))
    out = boost_matrix(LorentzBoost(0.6)) @ np.array([1.0, 0, 0, 0])
    np.testing.assert_allclose(out, [1.25, 0, 0, -0.75], atol=1e-15)
    assert LorentzBoost(0.6).gamma == pytest.approx(1.25, abs=1e-15)


@pytest.mark.parametrize("beta", [1.0, -1.0, 1.5])
def test_boost_rejects_superluminal(beta):
    with pytest.raises(DomainError):
        LorentzBoost(beta)


@settings(max_examples=60, deadline=None)
@given(betas, axes)
def test_boost_preserves_metric_and_inverts(beta, axis):
    b = LorentzBoost(beta, axis)
    L = b.matrix()
    np.testing.assert_allclose(L.T @ MINKOWSKI @ L, MINKOWSKI, atol=1e-9 * b.gamma**2)
    np.testing.assert_allclose(L @ b.inverse().matrix(), np.eye(4), atol=1e-12 * b.gamma**2)
    assert np.linalg.det(L) == pytest.approx(1.0)
    assert L[0, 0] >= 1.0  # orthochronous


@settings(max_examples=60, deadline=None)
@given(betas, axes, st.integers(0, 2**32 - 1))
def test_boost_preserves_pairwise_products(beta, axis, seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(5, 4))
    q = act(LorentzBoost(beta, axis), p)
    before = p @ MINKOWSKI @ p.T
    after = q @ MINKOWSKI @ q.T
    g = LorentzBoost(beta).gamma
    np.testing.assert_allclose(after, before, atol=1e-11 * g * g * (1 + np.abs(before).max()))


def test_rotation_examples():
    np.testing.assert_array_equal(rotation_matrix(Rotation2D(0.0)), np.eye(2))
    np.testing.assert_allclose(rotation_matrix(Rotation2D(math.pi / 2)) @ [1.0, 0.0], [0.0, 1.0], atol=1e-16)


@settings(max_examples=60, deadline=None)
@given(st.floats(-10, 10, allow_nan=False))
def test_rotation_is_orthogonal(theta):
    R = Rotation2D(theta).matrix()
    np.testing.assert_allclose(R.T @ R, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(R @ Rotation2D(theta).inverse().matrix(), np.eye(2), atol=1e-15)


def test_rotation_leaves_third_coordinate():
    pts = np.array([[1.0, 0.0, 7.0]])
    np.testing.assert_allclose(act(Rotation2D(math.pi), pts), [[-1.0, 0.0, 7.0]], atol=1e-15)


def _event(d, n=3):
    pos = np.arange(n * d, dtype=float).reshape(n, d)
    return EventGraph(pos, np.ones((n, 1)), fully_connected(n), label=1)


def test_identity_event_bit_identical():
    for fam, d in (("boost", 4), ("rotation", 2)):
        e = _event(d)
        moved = apply_to_event(identity(fam), e)
        np.testing.assert_array_equal(moved.positions, e.positions)
        np.testing.assert_array_equal(moved.edges, e.edges)
        assert moved.label == e.label


def test_apply_to_event_dimension_mismatch():
    with pytest.raises(DomainError):
        apply_to_event(LorentzBoost(0.3), _event(2))
    with pytest.raises(DomainError):
        apply_to_event(Rotation2D(0.3), _event(4))


def test_sample_determinism_and_ranges():
    a = sample_group_element(np.random.default_rng(7), "boost", (-0.9, 0.9))
    b = sample_group_element(np.random.default_rng(7), "boost", (-0.9, 0.9))
    assert a == b
    assert sample_group_element(np.random.default_rng(1), "rotation", (0, 0)).parameter == 0.0
    assert sample_group_element(np.random.default_rng(1), "boost", (0, 0)).parameter == 0.0
    draws = [sample_group_element(np.random.default_rng(s), "boost", (0.2, 0.5)).beta for s in range(50)]
    assert min(draws) >= 0.2 and max(draws) <= 0.5
    g = sample_group_element(np.random.default_rng(0), "boost", values=[0.3])
    assert g.beta == 0.3 and family_of(g) == "boost"


@pytest.mark.parametrize(
    "family,bounds",
    [("boost", (0.5, 0.1)), ("boost", (0.0, 1.0)), ("rotation", (1.0, -1.0)), ("shear", (0, 0))],
)
def test_sample_invalid_range(family, bounds):
    with pytest.raises(DomainError):
        sample_group_element(np.random.default_rng(0), family, bounds)
