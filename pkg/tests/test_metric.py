"""
Tests for metric construction, metric algebra and unit-mesh remeshing.

Run with: pytest tests/test_metric.py -v
"""

import math
import os
import sys

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.cases import case_u1
from app.estimators import compute_estimates
from app.errors import MeshError
from app.fem import assemble_and_solve
from app.mesh import Mesh
from app.metric import (
    MetricAdapter,
    MetricField,
    attach_metric,
    aspect_ratios,
    combine_metrics,
    element_metric,
    hessian_metric,
    interpolation_error_estimate,
    mesh_metric,
    metric_adapt_iteration,
    metric_edge_length,
    metric_exp,
    metric_intersect,
    metric_log,
    orientation_of_long_axis,
    positive_root,
    residual_metric,
)
from app.recovery import recover_gradient

EQUILATERAL = [(0.0, 1.0), (-math.sqrt(3) / 2, -0.5), (math.sqrt(3) / 2, -0.5)]


def constant_metric(mesh, m):
    return MetricField(np.tile(m, (len(mesh.points), 1)), mesh.generation)


class TestMetricAlgebra:
    """Tests for lengths, intersection and logarithms of 2x2 metrics."""

    def test_edge_length(self):
        assert metric_edge_length((1, 0, 1), (1, 0, 1), (0, 0), (3, 4)) == pytest.approx(5.0)
        assert metric_edge_length((4, 0, 1), (4, 0, 1), (0, 0), (1, 0)) == pytest.approx(2.0)
        # trapezoid rule on the end-point lengths
        assert metric_edge_length((1, 0, 1), (9, 0, 9), (0, 0), (1, 0)) == pytest.approx(2.0)

    def test_non_spd_metric_is_clamped(self):
        length = metric_edge_length((-1, 0, 1), (1, 0, 1), (0, 0), (1, 0))
        assert math.isfinite(length)
        assert length > 0

    def test_intersection_of_crossed_ellipses(self):
        Ma, Mb = np.diag([4.0, 1.0]), np.diag([1.0, 4.0])
        M = metric_intersect(Ma, Mb)
        assert np.allclose(M, np.diag([4.0, 4.0]))
        assert np.all(np.linalg.eigvalsh(M - Ma) >= -1e-12)
        assert np.all(np.linalg.eigvalsh(M - Mb) >= -1e-12)

    def test_intersection_with_itself(self):
        M = np.array([[3.0, 1.0], [1.0, 2.0]])
        assert np.allclose(metric_intersect(M, M), M)

    def test_combination_modes(self):
        mats = [np.diag([4.0, 1.0]), np.diag([2.0, 3.0])]
        assert np.allclose(combine_metrics(mats, "average"), np.diag([3.0, 2.0]))
        with pytest.raises(ValueError):
            combine_metrics(mats, "union")

    def test_log_exp(self):
        m = (4.0, 0.5, 1.0)
        assert np.allclose(metric_exp(metric_log(m)), m)
        assert np.allclose(metric_log((1.0, 0.0, 1.0)), 0.0)


class TestMetricConstruction:
    """Tests for the residual and Hessian metrics."""

    def test_positive_root(self):
        assert positive_root(1.0, 0.0, 1.0) == pytest.approx(1.0)
        assert positive_root(0.0, 2.0, 2.0) == pytest.approx(2.0)
        t = positive_root(2.0, 3.0, 0.5)
        assert 2.0 * t * t + 3.0 * t == pytest.approx(0.25)

    def test_isotropic_error_gives_isotropic_metric(self):
        M = element_metric(0.5 * np.eye(2), 0.5, 1.2, 0.8, 1.0, 1.0, 1.0, tau=0.01)
        assert M[0, 1] == pytest.approx(0.0, abs=1e-12 * M[0, 0])
        assert M[0, 0] == pytest.approx(M[1, 1])

    def test_long_axis_follows_small_error_direction(self):
        area = 0.5
        M = element_metric(area * np.diag([100.0, 1.0]), area, 1.0, 1.0, 1.0, 1.0, 1.0, tau=0.01)
        # small gradient error along y: the optimal element is long in y
        assert M[0, 0] / M[1, 1] == pytest.approx(100.0)

    def test_fallback_metrics(self):
        fallback = np.eye(2) / 2.0
        assert np.allclose(element_metric(np.eye(2), 1.0, 2.0, 1.0, 1.0, 1.0, 1.0, tau=0.0), fallback)
        assert np.allclose(element_metric(np.zeros((2, 2)), 1.0, 2.0, 1.0, 1.0, 1.0, 1.0, tau=0.1),
                           fallback)

    def test_hessian_metric(self):
        field = hessian_metric(np.array([[2.0, 0.0, -4.0]]), e_d=0.01)
        assert np.allclose(field.values, [[25.0, 0.0, 50.0]])
        with pytest.raises(ValueError):
            hessian_metric(np.zeros((1, 3)), e_d=0.0)

    def test_hessian_metric_is_clamped(self):
        field = hessian_metric(np.zeros((2, 3)), e_d=0.01, min_eig=1e-3)
        assert np.allclose(field.values, [[1e-3, 0.0, 1e-3]] * 2)

    def test_interpolation_error_estimate(self):
        assert interpolation_error_estimate((2, 0, 2), (2, 0, -2), (0, 0), (1, 0)) == pytest.approx(0.25)

    def test_residual_metric_is_spd(self):
        mesh = Mesh.uniform(6)
        case = case_u1()
        u = assemble_and_solve(mesh, case.problem())
        estimates = compute_estimates(mesh, u, recover_gradient(mesh, u.values), case.problem())
        field = residual_metric(mesh, estimates, tau=0.125 / math.sqrt(mesh.num_triangles))
        m11, m12, m22 = field.values.T
        assert field.values.shape == (mesh.num_vertices, 3)
        assert np.all(m11 > 0)
        assert np.all(m11 * m22 - m12 * m12 > 0)

    def test_boundary_layer_hessian_is_stretched(self):
        case = case_u1()
        hxx, hxy, hyy = case.hessian(np.array([0.01]), np.array([0.5]))
        field = hessian_metric(np.column_stack([hxx, hxy, hyy]), e_d=0.01)
        m11, _, m22 = field.values[0]
        assert m11 > 100 * m22


class TestMetricRemeshing:
    """Tests for refinement, swaps, coarsening and smoothing in a metric."""

    def test_adapter_needs_metric_fields(self):
        with pytest.raises(ValueError):
            MetricAdapter(Mesh.uniform(2))

    def test_attached_metric_round_trip(self):
        mesh = Mesh.uniform(2)
        attach_metric(mesh, constant_metric(mesh, [4.0, 0.5, 1.0]))
        assert np.allclose(mesh_metric(mesh), [[4.0, 0.5, 1.0]] * 9)

    def test_refine_to_unit_lengths(self):
        mesh = Mesh.uniform(2)
        attach_metric(mesh, constant_metric(mesh, [9.0, 0.0, 9.0]))
        adapter = MetricAdapter(mesh)
        assert adapter.refine() > 0
        assert adapter.edge_lengths().max() <= adapter.config.refine_length
        assert mesh.check_invariants(1.0) == []

    def test_debug_checks_assert_mesh_after_operations(self):
        mesh = Mesh.uniform(2)
        attach_metric(mesh, constant_metric(mesh, [9.0, 0.0, 9.0]))
        adapter = MetricAdapter(mesh, debug_checks=True)
        assert adapter.refine() > 0
        assert mesh.check_invariants(1.0) == []

        corrupted = Mesh.uniform(2)
        attach_metric(corrupted, constant_metric(corrupted, [9.0, 0.0, 9.0]))
        adapter = MetricAdapter(corrupted, debug_checks=True)
        # pulls the bottom boundary down without telling the adapter
        corrupted.points[1] = (0.5, -0.25)
        with pytest.raises(MeshError):
            adapter.refine()

    def test_debug_checks_off(self):
        mesh = Mesh.uniform(2)
        attach_metric(mesh, constant_metric(mesh, [9.0, 0.0, 9.0]))
        adapter = MetricAdapter(mesh, debug_checks=False)
        mesh.points[1] = (0.5, -0.25)
        assert adapter.refine() > 0

    def test_swap_to_shorter_diagonal(self):
        mesh = Mesh.uniform(1)
        attach_metric(mesh, constant_metric(mesh, [1.0, 0.5, 1.0]))
        adapter = MetricAdapter(mesh)
        assert adapter.swap() == 1
        assert (1, 2) in mesh.edges

    def test_isotropic_square_is_not_swapped(self):
        mesh = Mesh.uniform(1)
        attach_metric(mesh, constant_metric(mesh, [1.0, 0.0, 1.0]))
        assert MetricAdapter(mesh).swap() == 0

    def test_coarsen_short_edges(self):
        mesh = Mesh.uniform(4)
        attach_metric(mesh, constant_metric(mesh, [0.01, 0.0, 0.01]))
        adapter = MetricAdapter(mesh)
        assert adapter.coarsen() > 0
        assert mesh.check_invariants(1.0) == []

    def test_smoothing_moves_interior_vertex(self):
        mesh = Mesh.uniform(2)
        mesh.move_vertex(4, (0.6, 0.55))
        attach_metric(mesh, constant_metric(mesh, [1.0, 0.0, 1.0]))
        moves = MetricAdapter(mesh).smooth()
        assert len(moves) == 1
        assert moves[0] > 0
        assert mesh.check_invariants(1.0) == []

    def test_hessian_iteration_concentrates_on_layer(self):
        mesh = Mesh.uniform(4)
        case = case_u1()
        xy = mesh.coords()
        hessian = np.column_stack(case.hessian(xy[:, 0], xy[:, 1]))
        report = metric_adapt_iteration(mesh, hessian_metric(hessian, e_d=0.05))
        mesh.compact()
        assert mesh.check_invariants(1.0) == []
        assert report.refinements > 0
        near_layer = int(np.sum(mesh.coords()[:, 0] < 0.1))
        assert near_layer > 5
        assert 0.0 <= report.unit_fraction <= 1.0
        print(f"\n✓ {report.refinements} splits, {report.removals} removals, {near_layer} vertices near x=0")


class TestMeshQuality:
    """Tests for the element shape statistics."""

    def test_stretched_element(self):
        mesh = Mesh([(3 * x, y) for x, y in EQUILATERAL], [(0, 1, 2)])
        assert aspect_ratios(mesh)[0] == pytest.approx(3.0)
        assert orientation_of_long_axis(mesh)[0] == pytest.approx(0.0, abs=1e-12)
