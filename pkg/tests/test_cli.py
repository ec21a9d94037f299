"""
Tests for the command-line interface and run manifests.

Run with: pytest tests/test_cli.py -v
"""

import json
import os
import sys

import pandas as pd
import pytest

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_RUNTIME,
    build_config,
    load_config_file,
    main,
    normalise_key,
)
from app.errors import ConfigError


def read_manifest(out_dir):
    with open(os.path.join(out_dir, "manifest.json")) as f:
        return json.load(f)


class TestConfigFiles:
    """Tests for key=value config files and flag overrides."""

    def test_normalise_key(self):
        assert normalise_key("metric.intersection") == "metric_intersection"
        assert normalise_key(" Max-Iters ") == "max_iters"

    def test_load_config_file(self, tmp_path):
        path = tmp_path / "study.env"
        path.write_text(
            "case=u2\n"
            "alpha=1000\n"
            "metric.intersection=average\n"
            "methods=residual-element,hessian-metric\n"
            "levels=0.5 0.25\n"
        )
        values = load_config_file(str(path))
        assert values["metric_intersection"] == "average"
        assert values["methods"] == ["residual-element", "hessian-metric"]

        config = build_config(values, {"max_iters": 3})
        assert config.case == "u2"
        assert config.alpha == 1000.0
        assert config.levels == [0.5, 0.25]
        assert config.max_iters == 3

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("tol=0.5\nuniform=8\n")
        config = build_config(load_config_file(str(path)), {"tol": 0.25})
        assert config.tol == 0.25
        assert config.uniform == 8

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config_file(str(tmp_path / "missing.env"))

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            build_config({"tolerance": "0.1"}, {})


class TestMain:
    """Tests for exit codes, outputs and manifests."""

    def test_configuration_errors(self, tmp_path):
        assert main(["solve", "--tol", "-1", "--output-dir", str(tmp_path)]) == EXIT_CONFIG
        assert main(["solve", "--no-such-flag"]) == EXIT_CONFIG
        assert main(["solve", "--config", str(tmp_path / "missing.env")]) == EXIT_CONFIG

    def test_solve(self, tmp_path):
        out_dir = str(tmp_path / "solve")
        assert main(["solve", "--uniform", "4", "--output-dir", out_dir]) == EXIT_OK

        manifest = read_manifest(out_dir)
        assert manifest["command"] == "solve"
        assert manifest["status"] == "completed"
        assert manifest["summary"]["vertices"] == 25
        assert manifest["summary"]["energy_error"] > 0
        assert "numpy" in manifest["versions"]
        assert os.path.exists(os.path.join(out_dir, "mesh_solution.vtk"))
        print(f"\n✓ Solve manifest: {manifest['summary']}")

    def test_estimate(self, tmp_path):
        out_dir = str(tmp_path / "estimate")
        assert main(["estimate", "--case", "u2", "--uniform", "6", "--output-dir", out_dir]) == EXIT_OK

        frame = pd.read_csv(os.path.join(out_dir, "estimates.csv"))
        assert len(frame) == 72
        summary = read_manifest(out_dir)["summary"]
        assert 0.0 <= summary["local_ei_h1_in_range"] <= 1.0
        assert summary["hierarchical_l2_h1_ratio_max"] >= summary["hierarchical_l2_h1_ratio_min"] > 0
        assert "estimate" in read_manifest(out_dir)["timings"]

    def test_adapt(self, tmp_path):
        out_dir = str(tmp_path / "adapt")
        code = main(["adapt", "--uniform", "4", "--tol", "0.5", "--max-iters", "2",
                     "--output-dir", out_dir])
        assert code == EXIT_OK
        manifest = read_manifest(out_dir)
        assert manifest["summary"]["iterations"] == 2
        assert any(path.endswith("adapt_report.csv") for path in manifest["artifacts"])

    def test_failure_manifest(self, tmp_path):
        out_dir = str(tmp_path / "failed")
        code = main(["solve", "--mesh", str(tmp_path / "missing.msh"), "--output-dir", out_dir])
        assert code == EXIT_RUNTIME

        manifest = read_manifest(out_dir)
        assert manifest["status"] == "failed"
        assert manifest["error"].startswith("MeshError")
        assert manifest["finished_at"] is not None
