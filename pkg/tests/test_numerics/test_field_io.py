# tests/test_numerics/test_field_io.py
import json
import pytest
import numpy as np
import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))
from regularity_lab.numerics.families import build_drift, build_initial
from regularity_lab.numerics.field_io import read_field, write_field
from regularity_lab.numerics.torus_core import ScalarField, TorusGrid, VectorField


class TestFieldIO:
    def setup_method(self):
        self.grid = TorusGrid(2, 16)

    def test_scalar_container(self, tmp_path):
        f = build_initial("band_limited", self.grid, {"seed": 2})
        path = write_field(f, tmp_path / "u.bin", name="u", time=0.25, provenance={"seed": 2})
        assert path.stat().st_size == 16 + 8 * 16 * 16
        back, meta = read_field(path)
        assert isinstance(back, ScalarField)
        np.testing.assert_array_equal(back.values, f.values)
        assert meta["time"] == 0.25
        assert meta["provenance"] == {"seed": 2}

    def test_vector_container(self, tmp_path):
        b = build_drift("shear", self.grid).at(0.0)
        back, meta = read_field(write_field(b, tmp_path / "b.bin"))
        assert isinstance(back, VectorField)
        assert meta["kind"] == "vector"
        for got, want in zip(back.components, b.components):
            np.testing.assert_array_equal(got, want)

    def test_missing_sidecar_falls_back_to_component_count(self, tmp_path):
        path = write_field(ScalarField.constant(self.grid, 1.5), tmp_path / "c.bin")
        path.with_suffix(".bin.json").unlink()
        back, meta = read_field(path)
        assert meta == {}
        assert isinstance(back, ScalarField)

    def test_sidecar_is_json(self, tmp_path):
        path = write_field(ScalarField.constant(self.grid, 1.0), tmp_path / "c.bin", name="c")
        sidecar = json.loads((tmp_path / "c.bin.json").read_text())
        assert sidecar["N"] == 16 and sidecar["dim"] == 2 and sidecar["name"] == "c"
