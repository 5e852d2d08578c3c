# regularity_lab/numerics/field_io.py
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from regularity_lab.numerics.torus_core import ScalarField, TorusGrid, VectorField

logger = logging.getLogger(__name__)

# header: dim, N, component count, dtype code (1 = float64), all little-endian uint32
HEADER_DTYPE = np.dtype("<u4")
PAYLOAD_DTYPE = np.dtype("<f8")
FLOAT64_CODE = 1


def write_field(f: Union[ScalarField, VectorField], path: Union[str, Path], name: str = "field",
                time: Optional[float] = None, provenance: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write the binary container plus a JSON sidecar next to it
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    comps = (f.values,) if isinstance(f, ScalarField) else f.components
    header = np.array([f.grid.dim, f.grid.points_per_axis, len(comps), FLOAT64_CODE], dtype=HEADER_DTYPE)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        for comp in comps:
            fh.write(np.ascontiguousarray(comp, dtype=PAYLOAD_DTYPE).tobytes())
    sidecar = {
        "name": name,
        "time": time,
        "kind": "scalar" if isinstance(f, ScalarField) else "vector",
        "dim": f.grid.dim,
        "N": f.grid.points_per_axis,
        "provenance": provenance or {},
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    logger.debug(f"Wrote {name} to {path}")
    return path


def read_field(path: Union[str, Path]) -> Tuple[Union[ScalarField, VectorField], Dict[str, Any]]:
    path = Path(path)
    raw = path.read_bytes()
    dim, n, ncomp, code = np.frombuffer(raw[:16], dtype=HEADER_DTYPE)
    if code != FLOAT64_CODE:
        raise ValueError(f"unsupported dtype code {code} in {path}")
    grid = TorusGrid(int(dim), int(n))
    data = np.frombuffer(raw[16:], dtype=PAYLOAD_DTYPE).reshape((int(ncomp),) + grid.shape)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    if meta.get("kind", "scalar" if ncomp == 1 else "vector") == "scalar":
        return ScalarField(grid, data[0].copy()), meta
    return VectorField(grid, tuple(c.copy() for c in data)), meta
