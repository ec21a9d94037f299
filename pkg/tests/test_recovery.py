"""
Tests for gradient and Hessian recovery.

Run with: pytest tests/test_recovery.py -v
"""

import math
import os
import sys

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.cases import case_sine, case_u2
from app.fem import assemble_and_solve, exact_errors, interpolate
from app.mesh import Mesh
from app.recovery import (
    fit_quadratics,
    ls_hessian,
    recover_gradient,
    vertex_adjacency,
    zhang_naga_gradient,
    zz_gradient,
)


def quadratic(x, y):
    return 1.0 + x - 2.0 * y + x * x + x * y


def quadratic_gradient(x, y):
    return np.column_stack([1.0 + 2.0 * x + y, -2.0 + x])


def sine(x, y):
    return np.sin(math.pi * x) * np.sin(math.pi * y)


def sine_gradient(x, y):
    return np.column_stack([math.pi * np.cos(math.pi * x) * np.sin(math.pi * y),
                            math.pi * np.sin(math.pi * x) * np.cos(math.pi * y)])


@pytest.fixture(params=["parallel", "chevron"])
def mesh(request):
    return Mesh.uniform(4, request.param)


class TestZhangNaga:
    """Tests for the polynomial preserving gradient recovery."""

    def test_exact_for_quadratics(self, mesh):
        xy = mesh.coords()
        gradient = zhang_naga_gradient(mesh, interpolate(mesh, quadratic))
        assert np.allclose(gradient, quadratic_gradient(xy[:, 0], xy[:, 1]), atol=1e-9)

    def test_hessian_exact_for_quadratics(self, mesh):
        hessian = ls_hessian(mesh, interpolate(mesh, quadratic))
        assert np.allclose(hessian, [2.0, 1.0, 0.0], atol=1e-7)

    def test_boundary_vertices_use_larger_rings(self):
        mesh = Mesh.uniform(4)
        fits = fit_quadratics(mesh, interpolate(mesh, quadratic))
        assert not fits.fallback.any()
        assert fits.rings[0] >= 2
        assert fits.rings[12] == 1

    def test_superconvergence_on_uniform_mesh(self):
        errors = []
        for n in (8, 16):
            mesh = Mesh.uniform(n)
            xy = mesh.coords()
            gradient = zhang_naga_gradient(mesh, interpolate(mesh, sine))
            errors.append(np.max(np.abs(gradient - sine_gradient(xy[:, 0], xy[:, 1]))))
        assert errors[0] / errors[1] > 3.0
        print(f"\n✓ Recovered gradient error ratio: {errors[0] / errors[1]:.2f}")

    def test_superconvergence_of_solution_on_chevron_mesh(self):
        case = case_sine()
        sizes = (8, 16, 32, 64)
        recovered, element = [], []
        for n in sizes:
            mesh = Mesh.uniform(n, "chevron")
            u = assemble_and_solve(mesh, case.problem())
            xy = mesh.coords()
            gx, gy = case.gradient(xy[:, 0], xy[:, 1])
            gradient = zhang_naga_gradient(mesh, u.values)
            error = np.hypot(gradient[:, 0] - gx, gradient[:, 1] - gy)
            recovered.append(np.sqrt(np.mean(error ** 2)))
            element.append(exact_errors(mesh, u.values, case.exact, case.gradient).h1_semi)

        h = 1.0 / np.array(sizes)
        recovered_order = np.polyfit(np.log(h), np.log(recovered), 1)[0]
        element_order = np.polyfit(np.log(h), np.log(element), 1)[0]
        assert recovered_order >= 1.3
        assert element_order <= 1.1
        print(f"\n✓ Orders: recovered {recovered_order:.2f}, element {element_order:.2f}")

    def test_hessian_converges_away_from_wave_front(self):
        case = case_u2()
        params = case.params
        errors = []
        for n in (16, 32, 64):
            mesh = Mesh.uniform(n)
            xy = mesh.coords()
            r = np.hypot(xy[:, 0] + params["shift"], xy[:, 1] + params["shift"])
            far = np.abs(r - params["r0"]) >= 0.2
            hessian = ls_hessian(mesh, interpolate(mesh, case.exact))
            exact = np.column_stack(case.hessian(xy[:, 0], xy[:, 1]))
            errors.append(np.sqrt(np.mean(np.sum((hessian[far] - exact[far]) ** 2, axis=1))))
        assert errors[0] > errors[1] > errors[2]
        print(f"\n✓ Hessian errors away from the front: {[f'{e:.3g}' for e in errors]}")

    def test_falls_back_to_zz_when_patches_are_too_small(self):
        mesh = Mesh.uniform(1)
        values = interpolate(mesh, quadratic)
        fits = fit_quadratics(mesh, values)
        assert fits.fallback.all()
        assert np.allclose(fits.gradient, zz_gradient(mesh, values))


class TestZienkiewiczZhu:
    """Tests for the area-weighted average recovery."""

    def test_exact_for_linear_fields(self, mesh):
        values = interpolate(mesh, lambda x, y: 3.0 * x - y)
        assert np.allclose(zz_gradient(mesh, values), [3.0, -1.0], atol=1e-12)

    def test_method_dispatch(self, mesh):
        values = interpolate(mesh, quadratic)
        assert np.array_equal(recover_gradient(mesh, values, "zz"), zz_gradient(mesh, values))
        with pytest.raises(ValueError):
            recover_gradient(mesh, values, "spr")


class TestAdjacency:
    """Tests for the vertex adjacency of compact meshes."""

    def test_neighbour_lists(self):
        mesh = Mesh.uniform(2)
        adjacency = vertex_adjacency(mesh)
        assert adjacency[4].tolist() == [0, 1, 3, 5, 7, 8]
        assert adjacency[0].tolist() == [1, 3, 4]
