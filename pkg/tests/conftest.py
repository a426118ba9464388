import numpy as np
import pytest

from perihom.config import RunConfig
from perihom.geometry import CellSpec, build_perforated_mesh, build_reference_cell, triangle_areas


@pytest.fixture(scope="session")
def template():
    """Default-density reference cell (224 triangles)."""
    return build_reference_cell(CellSpec(refine_level=1))


@pytest.fixture(scope="session")
def template_fine():
    return build_reference_cell(CellSpec(refine_level=2))


@pytest.fixture(scope="session")
def unit_mesh_quarter(template):
    """Perforated unit square at eps = 1/4."""
    return build_perforated_mesh(0.25, template, (0.0, 1.0, 0.0, 1.0))


@pytest.fixture()
def rng():
    return np.random.default_rng(20240117)


class SimpleMesh:
    """Minimal structured triangulation of a rectangle (no hole), for kernel tests."""

    def __init__(self, n=4, rect=(0.0, 1.0, 0.0, 1.0)):
        x0, x1, y0, y1 = rect
        gx = np.linspace(x0, x1, n + 1)
        gy = np.linspace(y0, y1, n + 1)
        xx, yy = np.meshgrid(gx, gy, indexing="ij")
        self.nodes = np.column_stack([xx.ravel(), yy.ravel()])
        tris = []
        for i in range(n):
            for j in range(n):
                a = i * (n + 1) + j
                b = (i + 1) * (n + 1) + j
                tris.append((a, b, b + 1))
                tris.append((a, b + 1, a + 1))
        self.triangles = np.asarray(tris, dtype=np.int64)
        self.areas = triangle_areas(self.nodes, self.triangles)
        assert (self.areas > 0).all()

    @property
    def num_nodes(self):
        return len(self.nodes)


@pytest.fixture()
def square_mesh():
    return SimpleMesh(n=4)


def small_config(**overrides):
    """Unit-domain configuration for fast runs; overrides merge per section."""
    base = {
        "geometry": {"domain": [0.0, 1.0, 0.0, 1.0]},
        "sweep": {"eps": [0.5, 0.25], "h": 0.2, "shifts": [[1, 0]]},
    }
    for key, val in overrides.items():
        if isinstance(val, dict) and key in base:
            base[key].update(val)
        else:
            base[key] = val
    return RunConfig(base)


@pytest.fixture()
def exact_p1_mass():
    """Independent element mass oracle: A/12 * [[2,1,1],[1,2,1],[1,1,2]]."""
    def build(nodes, triangles):
        from scipy import sparse
        areas = triangle_areas(nodes, triangles)
        base = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
        n = len(nodes)
        rows, cols, data = [], [], []
        for t, tri in enumerate(triangles):
            for i in range(3):
                for j in range(3):
                    rows.append(tri[i])
                    cols.append(tri[j])
                    data.append(areas[t] * base[i, j])
        return sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    return build
