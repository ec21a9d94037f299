"""
Tests for the manufactured test cases.

Run with: pytest tests/test_cases.py -v
"""

import os
import sys

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.cases import case_sine, case_u1, case_u2, check_source, get_case

CASES = [case_u1(), case_u2(), case_u2(alpha=10.0), case_sine()]


@pytest.fixture(scope="module")
def points():
    """100 random points on the closed unit square plus the corners and the layer edge."""
    rng = np.random.default_rng(7)
    fixed = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.5], [1e-3, 0.5]])
    return np.vstack([rng.random((100, 2)), fixed])


@pytest.mark.parametrize("case", CASES, ids=lambda c: f"{c.name}-{c.params.get('alpha', '')}")
class TestExactData:
    """The analytic source, gradient and Hessian match the exact solution."""

    def test_source_is_minus_laplacian(self, case, points):
        assert check_source(case, points) <= 1e-6

    def test_gradient(self, case, points):
        x, y = points[:, 0], points[:, 1]
        step = 1e-6
        gx, gy = case.gradient(x, y)
        fx = (case.exact(x + step, y) - case.exact(x - step, y)) / (2 * step)
        fy = (case.exact(x, y + step) - case.exact(x, y - step)) / (2 * step)
        scale = max(np.max(np.abs(gx)), np.max(np.abs(gy)), 1.0)
        assert np.max(np.abs(gx - fx)) / scale < 1e-5
        assert np.max(np.abs(gy - fy)) / scale < 1e-5

    def test_hessian(self, case, points):
        x, y = points[:, 0], points[:, 1]
        step = 1e-6
        hxx, hxy, hyy = case.hessian(x, y)
        gxp, gyp = case.gradient(x + step, y)
        gxm, gym = case.gradient(x - step, y)
        fxx = (gxp - gxm) / (2 * step)
        fxy = (gyp - gym) / (2 * step)
        gxp, gyp = case.gradient(x, y + step)
        gxm, gym = case.gradient(x, y - step)
        fyy = (gyp - gym) / (2 * step)
        scale = max(np.max(np.abs(hxx)), np.max(np.abs(hyy)), 1.0)
        assert np.max(np.abs(hxx - fxx)) / scale < 1e-4
        assert np.max(np.abs(hxy - fxy)) / scale < 1e-4
        assert np.max(np.abs(hyy - fyy)) / scale < 1e-4


class TestSourceCheck:
    """The finite-difference check resolves small source errors."""

    def test_detects_a_perturbed_source(self, points):
        case = case_u1()
        exact_source = case.source
        case.source = lambda x, y: exact_source(x, y) + 1e-3 * np.max(np.abs(exact_source(x, y)))
        assert check_source(case, points) > 1e-4

    def test_tiny_step_is_round_off_limited(self, points):
        assert check_source(case_sine(), points, step=1e-4) < check_source(case_sine(), points, step=1e-7)


class TestBoundaryData:
    """Tests for the boundary behaviour of the cases."""

    def test_u1_vanishes_on_the_boundary(self):
        case = case_u1()
        s = np.linspace(0.0, 1.0, 11)
        zeros, ones = np.zeros_like(s), np.ones_like(s)
        for x, y in ((zeros, s), (ones, s), (s, zeros), (s, ones)):
            assert np.allclose(case.exact(x, y), 0.0, atol=1e-12)

    def test_u1_has_a_layer_at_x0(self):
        case = case_u1()
        gx, _ = case.gradient(np.array([0.0, 0.5]), np.array([0.5, 0.5]))
        assert gx[0] > 50 * abs(gx[1])

    def test_u2_front_position(self):
        case = case_u2()
        r0, shift = case.params["r0"], case.params["shift"]
        x = r0 / np.sqrt(2) - shift
        assert case.exact(np.array([x]), np.array([x]))[0] == pytest.approx(0.0, abs=1e-12)


class TestLookup:
    """Tests for case lookup."""

    def test_get_case(self):
        assert get_case("u1").name == "u1"
        assert get_case("u2", alpha=1000.0).params["alpha"] == 1000.0
        with pytest.raises(ValueError):
            get_case("u3")
        with pytest.raises(ValueError):
            case_u2(alpha=0.0)
