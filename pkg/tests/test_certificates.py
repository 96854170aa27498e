import numpy as np
import pytest
import scipy.sparse as sp

from epsfair.certificates import (
    dual_cone_violation,
    primal_cone_violation,
    verify_dual_infeasibility,
    verify_primal_infeasibility,
)
from epsfair.conic import FREE, NONNEG, SOC, ConeBlock

# {x1 - s1 = 1, x1 + s2 = 0, x, s >= 0}: x >= 1 and x <= 0
A = sp.csc_matrix(np.array([[1.0, -1.0, 0.0], [1.0, 0.0, 1.0]]))
B = np.array([1.0, 0.0])
CONES = (ConeBlock(NONNEG, 3),)


def test_valid_farkas_vector():
    check = verify_primal_infeasibility(A, B, CONES, np.array([1.0, -1.0]))
    assert check.valid
    assert check.margin == pytest.approx(1 / np.sqrt(2))
    assert check.violation == 0.0


def test_scaling_does_not_matter():
    assert verify_primal_infeasibility(A, B, CONES, np.array([7.0, -7.0])).valid


@pytest.mark.parametrize("y", [[0.0, 0.0], [-1.0, 1.0], [1.0, 0.0], [np.nan, 1.0]])
def test_invalid_farkas_vectors(y):
    assert not verify_primal_infeasibility(A, B, CONES, np.array(y)).valid


def test_free_columns_need_exact_orthogonality():
    A2 = sp.csc_matrix(np.array([[1.0, 1.0]]))
    cones = (ConeBlock(FREE, 1), ConeBlock(NONNEG, 1))
    # -A'y = (-1, -1): the free part must vanish, so this is no certificate
    assert not verify_primal_infeasibility(A2, np.array([1.0]), cones, np.array([1.0])).valid


def test_soc_certificate():
    # x in SOC(3) with x0 = -1 is impossible: y = (-1) gives b@y = 1, -A'y = e0 in SOC
    A3 = sp.csc_matrix(np.array([[1.0, 0.0, 0.0]]))
    cones = (ConeBlock(SOC, 3),)
    assert verify_primal_infeasibility(A3, np.array([-1.0]), cones, np.array([-1.0])).valid
    assert not verify_primal_infeasibility(A3, np.array([1.0]), cones, np.array([1.0])).valid


def test_dual_ray():
    A4 = sp.csc_matrix(np.array([[1.0, -1.0]]))
    c = np.array([-1.0, 0.0])
    cones = (ConeBlock(NONNEG, 2),)
    assert verify_dual_infeasibility(A4, c, cones, np.array([1.0, 1.0])).valid
    assert not verify_dual_infeasibility(A4, c, cones, np.array([1.0, 0.0])).valid
    assert not verify_dual_infeasibility(A4, c, cones, np.array([-1.0, -1.0])).valid


def test_cone_violation_helpers():
    cones = (ConeBlock(FREE, 1), ConeBlock(NONNEG, 2), ConeBlock(SOC, 3))
    v = np.array([0.5, 1.0, -0.25, 1.0, 3.0, 4.0])
    assert dual_cone_violation(v, cones) == pytest.approx(4.0)
    assert primal_cone_violation(v, cones) == pytest.approx(4.0)
    inside = np.array([9.0, 1.0, 0.0, 5.0, 3.0, 4.0])
    assert primal_cone_violation(inside, cones) == 0.0
    assert dual_cone_violation(inside, cones) == pytest.approx(9.0)
