"""P1 finite elements on uniform right-triangle meshes of the unit square."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

BOUNDARY_TAGS = ("bottom", "top", "left", "right")  # also the corner priority


@dataclass(frozen=True)
class Mesh:
    """Uniform triangulation of ``[0, 1]^2``.

    Vertex ``i + j * n_per_side`` sits at ``(i * h, j * h)`` with
    ``h = 1 / (n_per_side - 1)``. Every grid square is cut along its
    ``(0, 0) -> (1, 1)`` diagonal into two counter-clockwise triangles.
    """

    n_per_side: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_markers: dict = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / (self.n_per_side - 1)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def boundary_vertices(self, tag: str) -> np.ndarray:
        return np.array(
            sorted(v for v, t in self.boundary_markers.items() if t == tag), dtype=int
        )

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def basis_gradients(self) -> np.ndarray:
        """Constant gradients of the three local hat functions, shape (cells, 3, 2)."""
        p = self.vertices[self.cells]
        area2 = 2.0 * self.signed_areas()
        grads = np.empty((self.num_cells, 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            grads[:, a, 0] = (p[:, b, 1] - p[:, c, 1]) / area2
            grads[:, a, 1] = (p[:, c, 0] - p[:, b, 0]) / area2
        return grads

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of ``func(x, y)``."""
        return np.asarray(func(self.vertices[:, 0], self.vertices[:, 1]), dtype=float)


def build_uniform_mesh(n_per_side: int) -> Mesh:
    if n_per_side < 2:
        raise ValueError(f"n_per_side must be >= 2, got {n_per_side}")
    n = int(n_per_side)
    t = np.linspace(0.0, 1.0, n)
    xx, yy = np.meshgrid(t, t, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="xy")
    v00 = (i + j * n).ravel()
    v10 = v00 + 1
    v01 = v00 + n
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.empty((2 * v00.size, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper

    mesh = Mesh(n, vertices, cells, {})
    for tag in reversed(BOUNDARY_TAGS):
        for v in side_vertices(mesh, tag):
            mesh.boundary_markers[int(v)] = tag
    return mesh


def _local_stiffness(mesh: Mesh) -> np.ndarray:
    grads = mesh.basis_gradients()
    area = mesh.signed_areas()
    return area[:, None, None] * np.einsum("cad,cbd->cab", grads, grads)


def _assemble(mesh: Mesh, local: np.ndarray, cell_ids=None) -> sp.csr_matrix:
    cells = mesh.cells if cell_ids is None else mesh.cells[cell_ids]
    rows = np.repeat(cells, 3, axis=1).ravel()
    cols = np.tile(cells, (1, 3)).ravel()
    n = mesh.num_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_stiffness(mesh: Mesh, cell_coefficient) -> sp.csr_matrix:
    """Stiffness matrix of ``-div(kappa grad u)`` with a cellwise constant ``kappa``."""
    coeff = np.broadcast_to(np.asarray(cell_coefficient, dtype=float), (mesh.num_cells,))
    if not np.all(np.isfinite(coeff)):
        bad = int(np.flatnonzero(~np.isfinite(coeff))[0])
        raise ValueError(f"non-finite coefficient on cell {bad}")
    return _assemble(mesh, coeff[:, None, None] * _local_stiffness(mesh))


def assemble_subdomain_stiffness(mesh: Mesh, subdomain) -> sp.csr_matrix:
    """Unit-coefficient stiffness restricted to the cells in ``subdomain``."""
    ids = np.unique(np.asarray(subdomain, dtype=np.int64))
    if ids.size == 0:
        warnings.warn("empty subdomain; returning the zero matrix", stacklevel=2)
        n = mesh.num_vertices
        return sp.csr_matrix((n, n))
    if ids[0] < 0 or ids[-1] >= mesh.num_cells:
        raise IndexError("subdomain cell index out of range")
    return _assemble(mesh, _local_stiffness(mesh)[ids], ids)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    area = mesh.signed_areas()
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _assemble(mesh, area[:, None, None] * ref)


def load_vector(mesh: Mesh, cell_source=1.0) -> np.ndarray:
    """``(b)_n = int g phi_n`` for a cellwise constant source ``g``."""
    g = np.broadcast_to(np.asarray(cell_source, dtype=float), (mesh.num_cells,))
    contrib = np.repeat((g * mesh.signed_areas() / 3.0)[:, None], 3, axis=1)
    return np.bincount(mesh.cells.ravel(), contrib.ravel(), minlength=mesh.num_vertices)


def _clip(poly: list, axis: int, bound: float, keep_below: bool) -> list:
    out = []
    if not poly:
        return out
    inside = [(p[axis] <= bound) if keep_below else (p[axis] >= bound) for p in poly]
    for k, cur in enumerate(poly):
        prev = poly[k - 1]
        if inside[k]:
            if not inside[k - 1]:
                out.append(_cross(prev, cur, axis, bound))
            out.append(cur)
        elif inside[k - 1]:
            out.append(_cross(prev, cur, axis, bound))
    return out


def _cross(a, b, axis: int, bound: float):
    t = (bound - a[axis]) / (b[axis] - a[axis])
    return (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))


def _polygon_area_centroid(poly: list):
    pts = np.asarray(poly)
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if abs(area) < 1e-300:
        return 0.0, pts.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return area, np.array([cx, cy])


def assemble_qoi_vector(mesh: Mesh, region) -> np.ndarray:
    """Averaging functional over an axis-aligned box ``((x0, x1), (y0, y1))``.

    Triangles are clipped exactly against the box; linear integrands are then
    integrated exactly as area times the value at the clipped centroid.
    """
    (x0, x1), (y0, y1) = region
    if not (0.0 <= x0 <= x1 <= 1.0 and 0.0 <= y0 <= y1 <= 1.0):
        raise ValueError(f"region {region} is not inside the unit square")
    volume = (x1 - x0) * (y1 - y0)
    if volume <= 0.0:
        raise ValueError("region has zero volume")

    pts = mesh.vertices[mesh.cells]
    lo, hi = pts.min(axis=1), pts.max(axis=1)
    hits = np.flatnonzero(
        (hi[:, 0] > x0) & (lo[:, 0] < x1) & (hi[:, 1] > y0) & (lo[:, 1] < y1)
    )
    s = np.zeros(mesh.num_vertices)
    grads = mesh.basis_gradients()
    for c in hits:
        tri = pts[c]
        poly = [tuple(p) for p in tri]
        poly = _clip(poly, 0, x0, keep_below=False)
        poly = _clip(poly, 0, x1, keep_below=True)
        poly = _clip(poly, 1, y0, keep_below=False)
        poly = _clip(poly, 1, y1, keep_below=True)
        if len(poly) < 3:
            continue
        area, centroid = _polygon_area_centroid(poly)
        if area <= 0.0:
            continue
        # hat function a equals 1 at vertex a: phi_a(x) = 1/3 + g_a . (x - centroid_tri)
        phi = 1.0 / 3.0 + grads[c] @ (centroid - tri.mean(axis=0))
        np.add.at(s, mesh.cells[c], area * phi)
    return s / volume


def side_vertices(mesh: Mesh, tag: str) -> np.ndarray:
    """All vertices lying on the given side, corners included."""
    n = mesh.n_per_side
    idx = np.arange(n)
    sides = {
        "bottom": idx,
        "top": idx + (n - 1) * n,
        "left": idx * n,
        "right": idx * n + n - 1,
    }
    return sides[tag]


def dirichlet_lift(mesh: Mesh, boundary_values: dict):
    """Lifting vector carrying Dirichlet data, plus the sorted constrained vertices.

    A vertex shared by two constrained sides takes the value of the side that
    comes first in the priority order bottom, top, left, right.
    """
    unknown = set(boundary_values) - set(BOUNDARY_TAGS)
    if unknown:
        raise KeyError(f"unknown boundary tags: {sorted(unknown)}")
    lift = np.zeros(mesh.num_vertices)
    mask = np.zeros(mesh.num_vertices, dtype=bool)
    for tag in reversed(BOUNDARY_TAGS):
        if tag in boundary_values:
            verts = side_vertices(mesh, tag)
            lift[verts] = float(boundary_values[tag])
            mask[verts] = True
    return lift, np.flatnonzero(mask)
