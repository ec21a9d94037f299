#!/usr/bin/env python3
"""
Simple standalone smoke test for the anisotropic adaptation toolkit.

Solves the boundary-layer case on a coarse mesh, evaluates the estimator,
runs a few adaptation iterations and checks the API solve endpoint, without
pytest, for quick verification.
Run with: python run_test.py
"""

import json
import os
import sys
import tempfile

# Ensure we can import from app
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from fastapi.testclient import TestClient

from app.main import app
from app.models import RunConfig
from app.study import initial_mesh, run_adaptation, solve_state


def print_header(text):
    print(f"\n{'='*60}")
    print(f" {text}")
    print(f"{'='*60}")


def print_success(text):
    print(f"  ✓ {text}")


def print_error(text):
    print(f"  ✗ {text}")


def print_json(data, indent=4):
    print(json.dumps(data, indent=indent, default=str))


def main():
    print_header("ANISOTROPIC ADAPTATION TOOLKIT - SMOKE TEST")
    failures = 0

    # Test 1: Solve and estimate
    print_header("TEST 1: Solve and estimate on a uniform mesh")
    config = RunConfig(case="u1", uniform=8)
    state = solve_state(initial_mesh(config), config)
    print_json({
        "vertices": state.mesh.num_vertices,
        "energy_error": state.errors.energy,
        "l2_error": state.errors.l2,
        "estimated_error": state.estimates.global_eta,
        "global_ei": state.global_ei,
    })
    if state.errors.energy > 0 and state.estimates.global_eta > 0:
        print_success("Solve and estimate passed")
    else:
        print_error("Solve produced a zero error or estimate")
        failures += 1

    # Test 2: Short adaptation runs
    print_header("TEST 2: Short adaptation runs")
    with tempfile.TemporaryDirectory() as out_dir:
        for method in ("residual-element", "hessian-metric"):
            run_config = RunConfig(case="u1", method=method, uniform=6, tol=0.25,
                                   e_d=0.02, max_iters=3)
            try:
                result = run_adaptation(run_config, os.path.join(out_dir, method))
            except Exception as e:
                print_error(f"{method} failed: {e}")
                failures += 1
                continue
            last = result.rows[-1]
            problems = result.final.mesh.check_invariants(1.0)
            if problems:
                print_error(f"{method}: invalid mesh: {problems[:3]}")
                failures += 1
            else:
                print_success(f"{method}: {last.vertices} vertices, "
                              f"energy error {last.energy_error:.4e} after {result.iterations} iterations")

    # Test 3: API solve endpoint
    print_header("TEST 3: API solve endpoint")
    client = TestClient(app)
    response = client.post("/api/solve", json={"case": "u2", "uniform": 6})
    if response.status_code == 200:
        print_success("Solve endpoint passed")
        print_json(response.json())
    else:
        print_error(f"Solve endpoint failed: {response.status_code}")
        print(response.text)
        failures += 1

    print_header("SUMMARY")
    if failures:
        print_error(f"{failures} check(s) failed")
        return 1
    print_success("All checks passed")
    return 0


if __name__ == "__main__":
    exit_code = main()
    sys.exit(exit_code)
