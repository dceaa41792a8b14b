#!/usr/bin/env python3
"""
Tests for foliations: grid validation, quadrature weights and relabeling.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from CovariantTCL.solver.foliation import (
    RELABELINGS,
    Foliation,
    flat_foliation,
    graded_foliation,
    reparametrize,
)
from CovariantTCL.utils.exceptions import GridError


def test_flat_foliation_weights():
    """Trapezoid weights are half steps at the ends and sum to the span"""
    f = flat_foliation(0.0, 2.0, 4)
    np.testing.assert_allclose(f.times, [0.0, 0.5, 1.0, 1.5, 2.0])
    np.testing.assert_allclose(f.weights, [0.25, 0.5, 0.5, 0.5, 0.25])
    assert f.n == 4
    assert f.weights.sum() == pytest.approx(f.span)


def test_invalid_grids():
    """n < 1, reversed intervals and unknown rules are grid errors"""
    with pytest.raises(GridError):
        flat_foliation(0.0, 1.0, 0)
    with pytest.raises(GridError):
        flat_foliation(1.0, 1.0, 10)
    with pytest.raises(GridError):
        flat_foliation(0.0, 1.0, 10, quadrature="simpson")
    with pytest.raises(GridError):
        Foliation.from_times([0.0, 0.5, 0.5, 1.0])
    with pytest.raises(GridError):
        flat_foliation(0.0, 1.0, 4).check_index(5)


def test_foliation_is_immutable():
    """The grid arrays cannot be modified in place"""
    f = flat_foliation(0.0, 1.0, 3)
    with pytest.raises(ValueError):
        f.times[1] = 0.2


@pytest.mark.parametrize("rule", ["trapezoid", "midpoint"])
def test_prefix_weights_integrate_linear_functions(rule):
    """Row k integrates a linear function over [t_0, t_k] exactly"""
    f = Foliation.from_times([0.0, 0.3, 0.5, 1.1, 1.4, 2.0])
    table = f.prefix_weight_matrix(rule)
    nodes = f.nodes(rule)
    for k, t in enumerate(f.times):
        assert table[k] @ (3.0 * nodes + 1.0) == pytest.approx(1.5 * t * t + t, abs=1e-12)


def test_prefix_rows_are_nested():
    """The last trapezoid row equals the foliation weights"""
    f = flat_foliation(0.0, 1.0, 7)
    np.testing.assert_allclose(f.prefix_weight_matrix()[-1], f.weights)
    assert np.all(f.prefix_weight_matrix()[0] == 0.0)


def test_graded_foliation():
    """Warped grids keep the end points, increase strictly and keep uniform labels"""
    f = graded_foliation(0.0, 4.0, 8, lambda u: u ** 2)
    assert f.times[0] == 0.0 and f.times[-1] == 4.0
    assert np.all(np.diff(f.times) > 0)
    np.testing.assert_allclose(np.diff(f.params), 0.5)
    with pytest.raises(GridError):
        graded_foliation(0.0, 1.0, 4, lambda u: 0.5 * u)


def test_reparametrize_changes_labels_only():
    """Relabeling keeps times and weights; a non-monotone map is rejected"""
    f = flat_foliation(0.0, 2.0, 10)
    relabeled = reparametrize(f, RELABELINGS["cubic"])
    assert relabeled.same_slicing(f)
    assert not np.array_equal(relabeled.params, f.params)
    with pytest.raises(GridError):
        reparametrize(f, lambda s: -s)
