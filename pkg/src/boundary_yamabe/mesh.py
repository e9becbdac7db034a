"""Simplicial meshes of compact 3-manifolds with boundary, fields and quadrature.

Meshes are embedded simplicial complexes; the background metric is induced
from the embedding coordinates (euclidean) or given as a per-vertex conformal
factor. Meshes are immutable after construction and safe to share read-only.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    FormatError,
    InvalidResolution,
    IoError,
    UnsupportedDimension,
)

BOUNDARY_TAG = "boundary"
FARFIELD_TAG = "farfield"


def _cell_volumes(vertices, cells):
    """Signed volumes of tetrahedra (n=3)."""
    p = vertices[cells]
    d = p[:, 1:] - p[:, :1]
    return np.linalg.det(d) / 6.0


class SimplicialMesh:
    """Tetrahedral mesh of a compact 3-manifold with boundary.

    Parameters
    ----------
    dimension : int
        Ambient/manifold dimension (3 in v1).
    vertices : (nv, n) float array
        Embedding coordinates.
    cells : (nc, n+1) int array
        Vertex indices, positively oriented.
    boundary_faces : (nf, n) int array
        Faces of the topological boundary, outward co-oriented.
    face_tags : list of str
        One tag per boundary face: "boundary" (part of dM for curvature
        purposes) or "farfield" (truncation faces carrying Dirichlet data).
    metric : dict
        {"type": "euclidean"} or {"type": "conformal", "factor": [...]}.
    """

    def __init__(self, dimension, vertices, cells, boundary_faces, face_tags=None,
                 metric=None, validate=True):
        if dimension != 3:
            raise UnsupportedDimension(f"dimension {dimension} not supported (v1 is n=3 only)")
        self.dimension = int(dimension)
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        self.boundary_faces = np.ascontiguousarray(boundary_faces, dtype=np.int64)
        if face_tags is None:
            face_tags = [BOUNDARY_TAG] * len(self.boundary_faces)
        self.face_tags = list(face_tags)
        self.metric = metric if metric is not None else {"type": "euclidean"}
        self._cache = {}
        if validate:
            self.validate()

    # -- validation ---------------------------------------------------------

    def validate(self):
        """Check all mesh invariants; raises FormatError on violation."""
        nv = len(self.vertices)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != self.dimension:
            raise FormatError("vertices must be (nv, n)")
        if self.cells.ndim != 2 or self.cells.shape[1] != self.dimension + 1:
            raise FormatError("cells must be (nc, n+1)")
        if self.boundary_faces.ndim != 2 or self.boundary_faces.shape[1] != self.dimension:
            raise FormatError("boundary_faces must be (nf, n)")
        if len(self.face_tags) != len(self.boundary_faces):
            raise FormatError("face_tags length must match boundary_faces")
        for name, arr in (("cells", self.cells), ("boundary_faces", self.boundary_faces)):
            if arr.size and (arr.min() < 0 or arr.max() >= nv):
                raise FormatError(f"{name}: vertex index out of range")
        if not np.all(np.isfinite(self.vertices)):
            raise FormatError("vertices: non-finite coordinate")
        vols = _cell_volumes(self.vertices, self.cells)
        if np.any(vols <= 0.0):
            bad = int(np.argmin(vols))
            raise FormatError(f"cells: nonpositive volume at cell {bad} (vol={vols[bad]:.3e})")
        sorted_cells = np.sort(self.cells, axis=1)
        if len(np.unique(sorted_cells, axis=0)) != len(self.cells):
            raise FormatError("cells: duplicate cell")
        # every boundary face must be a face of exactly one cell
        face_key = self._all_cell_faces_sorted()
        keys, counts = np.unique(face_key, axis=0, return_counts=True)
        once = {tuple(k) for k in keys[counts == 1]}
        twice = {tuple(k) for k in keys[counts == 2]}
        declared = set(map(tuple, np.sort(self.boundary_faces, axis=1)))
        for f in declared:
            if f in twice:
                raise FormatError(f"boundary face {f} is shared by two cells")
            if f not in once:
                raise FormatError(f"boundary face {f} is not a face of any cell")
        if len(declared) != len(once):
            raise FormatError("boundary face set does not cover the topological boundary")
        # closedness: every edge of the boundary complex lies in exactly two faces
        bf = self.boundary_faces
        edges = np.sort(np.concatenate([bf[:, [0, 1]], bf[:, [1, 2]], bf[:, [2, 0]]]), axis=1)
        _, ecounts = np.unique(edges, axis=0, return_counts=True)
        if np.any(ecounts != 2):
            raise FormatError("boundary complex is not closed (edge with face count != 2)")
        if self.metric.get("type") == "conformal":
            fac = np.asarray(self.metric.get("factor", []), dtype=np.float64)
            if fac.shape != (nv,) or not np.all(np.isfinite(fac)) or np.any(fac <= 0):
                raise FormatError("conformal metric factor must be positive and per-vertex")
        elif self.metric.get("type") != "euclidean":
            raise FormatError(f"unknown metric type {self.metric.get('type')!r}")

    def _all_cell_faces_sorted(self):
        c = self.cells
        faces = np.concatenate([c[:, [1, 2, 3]], c[:, [0, 2, 3]], c[:, [0, 1, 3]], c[:, [0, 1, 2]]])
        return np.sort(faces, axis=1)

    # -- derived quantities (cached) ----------------------------------------

    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def cell_volumes(self):
        return self._cached("vols", lambda: _cell_volumes(self.vertices, self.cells))

    @property
    def boundary_mask(self):
        """Per-face bool: True where the face belongs to dM (not far-field)."""
        return self._cached(
            "bmask", lambda: np.array([t == BOUNDARY_TAG for t in self.face_tags], dtype=bool))

    @property
    def surface_faces(self):
        """dM-tagged faces only."""
        return self._cached("sfaces", lambda: self.boundary_faces[self.boundary_mask])

    @property
    def boundary_vertices(self):
        """Sorted vertex ids incident to dM-tagged faces (the BoundaryField support)."""
        return self._cached("bverts", lambda: np.unique(self.surface_faces))

    @property
    def farfield_vertices(self):
        """Sorted vertex ids on far-field faces and not on dM."""
        def build():
            ff = self.boundary_faces[~self.boundary_mask]
            if len(ff) == 0:
                return np.zeros(0, dtype=np.int64)
            return np.setdiff1d(np.unique(ff), self.boundary_vertices)
        return self._cached("fverts", build)

    @property
    def face_areas(self):
        """Areas of dM-tagged faces."""
        def build():
            p = self.vertices[self.surface_faces]
            n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            return 0.5 * np.linalg.norm(n, axis=1)
        return self._cached("fareas", build)

    @property
    def boundary_lumped_weights(self):
        """Per-boundary-vertex lumped dsigma_{g0} weights (sum of face areas / 3)."""
        def build():
            w = np.zeros(self.num_vertices)
            np.add.at(w, self.surface_faces.ravel(), np.repeat(self.face_areas / 3.0, 3))
            return w[self.boundary_vertices]
        return self._cached("blump", build)

    @property
    def diameter(self):
        return self._cached(
            "diam", lambda: float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0))))

    @property
    def edge_lengths(self):
        def build():
            c = self.cells
            pairs = np.concatenate([c[:, [i, j]] for i in range(4) for j in range(i + 1, 4)])
            pairs = np.unique(np.sort(pairs, axis=1), axis=0)
            d = self.vertices[pairs[:, 0]] - self.vertices[pairs[:, 1]]
            return np.linalg.norm(d, axis=1)
        return self._cached("elens", build)

    @property
    def mesh_size(self):
        """Longest edge (the h of error statements)."""
        return float(self.edge_lengths.max())

    @property
    def boundary_edge_min(self):
        def build():
            f = self.surface_faces
            e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
            d = self.vertices[e[:, 0]] - self.vertices[e[:, 1]]
            return float(np.linalg.norm(d, axis=1).min())
        return self._cached("bemin", build)

    @property
    def vertex_outward_normals(self):
        """Area-weighted outward unit normals at dM vertices, (nb, 3)."""
        def build():
            p = self.vertices[self.surface_faces]
            fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])  # |fn| = 2*area, outward
            acc = np.zeros((self.num_vertices, 3))
            np.add.at(acc, self.surface_faces.ravel(), np.repeat(fn, 3, axis=0))
            nrm = acc[self.boundary_vertices]
            return nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        return self._cached("vnormals", build)

    @property
    def boundary_graph_distances(self):
        """All-pairs geodesic (graph) distances between dM vertices, (nb, nb)."""
        def build():
            from scipy.sparse import coo_matrix
            from scipy.sparse.csgraph import dijkstra
            bv = self.boundary_vertices
            order = {v: i for i, v in enumerate(bv)}
            f = self.surface_faces
            e = np.unique(np.sort(np.concatenate(
                [f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1), axis=0)
            i = np.array([order[v] for v in e[:, 0]])
            j = np.array([order[v] for v in e[:, 1]])
            w = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
            nb = len(bv)
            g = coo_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(nb, nb)).tocsr()
            return dijkstra(g, directed=False)
        return self._cached("bdist", build)

    def __eq__(self, other):
        if not isinstance(other, SimplicialMesh):
            return NotImplemented
        return (self.dimension == other.dimension
                and np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.cells, other.cells)
                and np.array_equal(self.boundary_faces, other.boundary_faces)
                and self.face_tags == other.face_tags
                and self.metric == other.metric)


@dataclass
class ScalarField:
    """One real value per mesh vertex."""
    mesh: SimplicialMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.mesh.num_vertices,):
            raise FormatError("ScalarField: value count must equal vertex count")
        if not np.all(np.isfinite(self.values)):
            raise FormatError("ScalarField: non-finite value")

    def boundary_trace(self):
        return BoundaryField(self.mesh, self.values[self.mesh.boundary_vertices])


@dataclass
class BoundaryField:
    """One real value per dM vertex (ordered like mesh.boundary_vertices)."""
    mesh: SimplicialMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.mesh.boundary_vertices),):
            raise FormatError("BoundaryField: value count must equal boundary vertex count")
        if not np.all(np.isfinite(self.values)):
            raise FormatError("BoundaryField: non-finite value")


# -- construction ------------------------------------------------------------


def _refine_once(vertices, cells, boundary_faces, face_tags):
    """Red refinement: split every tetrahedron 8-fold via edge midpoints."""
    nv = len(vertices)
    c = np.asarray(cells)
    pair_idx = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    all_pairs = np.sort(np.concatenate([c[:, [i, j]] for i, j in pair_idx]), axis=1)
    edges, inverse = np.unique(all_pairs, axis=0, return_inverse=True)
    mid_ids = nv + np.arange(len(edges))
    new_vertices = np.vstack([vertices, 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])])
    # midpoint index per (cell, local edge)
    m = mid_ids[inverse].reshape(6, len(c)).T  # columns: m01 m02 m03 m12 m13 m23
    v0, v1, v2, v3 = c[:, 0], c[:, 1], c[:, 2], c[:, 3]
    m01, m02, m03, m12, m13, m23 = (m[:, k] for k in range(6))
    corners = [
        np.stack([v0, m01, m02, m03], axis=1),
        np.stack([v1, m01, m12, m13], axis=1),
        np.stack([v2, m02, m12, m23], axis=1),
        np.stack([v3, m03, m13, m23], axis=1),
    ]
    # inner octahedron: pick the shortest of the three diagonals per cell
    diags = np.stack([
        np.linalg.norm(new_vertices[m01] - new_vertices[m23], axis=1),
        np.linalg.norm(new_vertices[m02] - new_vertices[m13], axis=1),
        np.linalg.norm(new_vertices[m03] - new_vertices[m12], axis=1),
    ], axis=1)
    choice = np.argmin(diags, axis=1)
    ring = {0: (m02, m12, m13, m03), 1: (m01, m12, m23, m03), 2: (m01, m13, m23, m02)}
    dpairs = {0: (m01, m23), 1: (m02, m13), 2: (m03, m12)}
    octs = []
    for k in range(3):
        sel = choice == k
        if not np.any(sel):
            continue
        p, q = dpairs[k][0][sel], dpairs[k][1][sel]
        r = [x[sel] for x in ring[k]]
        for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
            octs.append(np.stack([p, q, r[a], r[b]], axis=1))
    new_cells = np.concatenate(corners + octs)
    # fix orientation cellwise
    vols = _cell_volumes(new_vertices, new_cells)
    flip = vols < 0
    new_cells[flip] = new_cells[flip][:, [0, 1, 3, 2]]
    # split boundary faces 4-fold, preserving orientation and tags
    bf = np.asarray(boundary_faces)
    fpairs = np.sort(np.concatenate([bf[:, [0, 1]], bf[:, [1, 2]], bf[:, [2, 0]]]), axis=1)
    eidx = {tuple(e): mid_ids[k] for k, e in enumerate(map(tuple, edges))}
    fm = np.array([[eidx[tuple(sorted((f[0], f[1])))],
                    eidx[tuple(sorted((f[1], f[2])))],
                    eidx[tuple(sorted((f[2], f[0])))]] for f in bf], dtype=np.int64)
    f0, f1, f2 = bf[:, 0], bf[:, 1], bf[:, 2]
    e01, e12, e20 = fm[:, 0], fm[:, 1], fm[:, 2]
    new_faces = np.concatenate([
        np.stack([f0, e01, e20], axis=1),
        np.stack([e01, f1, e12], axis=1),
        np.stack([e20, e12, f2], axis=1),
        np.stack([e01, e12, e20], axis=1),
    ])
    new_tags = list(face_tags) * 4
    return new_vertices, new_cells, new_faces, new_tags, fpairs


def _orient_boundary_outward(vertices, cells, faces):
    """Flip boundary face windings so right-hand normals point out of the solid."""
    key_to_cell = {}
    c = np.asarray(cells)
    for loc, opp in (((1, 2, 3), 0), ((0, 2, 3), 1), ((0, 1, 3), 2), ((0, 1, 2), 3)):
        for ci in range(len(c)):
            key = tuple(sorted(c[ci, list(loc)]))
            if key in key_to_cell:
                key_to_cell.pop(key)
            else:
                key_to_cell[key] = c[ci, opp]
    out = np.array(faces, dtype=np.int64, copy=True)
    p = vertices
    for k, f in enumerate(out):
        opp = key_to_cell[tuple(sorted(f))]
        nrm = np.cross(p[f[1]] - p[f[0]], p[f[2]] - p[f[0]])
        if np.dot(nrm, (p[f].mean(axis=0) - p[opp])) < 0.0:
            out[k] = f[[0, 2, 1]]
    return out


_BALL_BASE_REFINES = 2  # level 0 is the twice-refined octahedral ball


def build_ball_mesh(n, level):
    """Mesh the closed unit 3-ball; level k is an 8-fold refinement of k-1.

    The base complex is the octahedron fan around the origin; boundary
    vertices are projected to the unit sphere after each refinement.
    """
    if n != 3:
        raise UnsupportedDimension(f"build_ball_mesh supports n=3 only, got {n}")
    if level < 0:
        raise InvalidResolution("level must be >= 0")
    vertices = np.array([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
    ])
    cells = []
    for sx in (1, 2):
        for sy in (3, 4):
            for sz in (5, 6):
                cells.append((0, sx, sy, sz))
    cells = np.array(cells, dtype=np.int64)
    vols = _cell_volumes(vertices, cells)
    cells[vols < 0] = cells[vols < 0][:, [0, 1, 3, 2]]
    faces = np.array([c[1:] for c in cells], dtype=np.int64)
    tags = [BOUNDARY_TAG] * len(faces)
    for _ in range(_BALL_BASE_REFINES + level):
        vertices, cells, faces, tags, _ = _refine_once(vertices, cells, faces, tags)
        bset = np.unique(faces)
        vertices[bset] /= np.linalg.norm(vertices[bset], axis=1, keepdims=True)
    faces = _orient_boundary_outward(vertices, cells, faces)
    return SimplicialMesh(3, vertices, cells, faces, tags)


def build_halfspace_box_mesh(n, extent, resolution):
    """Mesh [-L,L]^2 x [0,L]; the floor y3=0 is dM, the other faces far-field."""
    if n != 3:
        raise UnsupportedDimension(f"build_halfspace_box_mesh supports n=3 only, got {n}")
    if extent <= 0:
        raise InvalidResolution("extent must be positive")
    if resolution < 2:
        raise InvalidResolution("resolution must be >= 2")
    L = float(extent)
    res = int(resolution)
    hx = 2.0 * L / res
    nz = max(1, int(round(L / hx)))
    xs = np.linspace(-L, L, res + 1)
    zs = np.linspace(0.0, L, nz + 1)
    X, Y, Z = np.meshgrid(xs, xs, zs, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (res + 1) + j) * (nz + 1) + k

    # Kuhn triangulation of each cube: 6 tets sharing the main diagonal
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    cells = []
    for i in range(res):
        for j in range(res):
            for k in range(nz):
                base = np.array([i, j, k])
                for p in perms:
                    steps = np.zeros((4, 3), dtype=int)
                    steps[1] = np.eye(3, dtype=int)[p[0]]
                    steps[2] = steps[1] + np.eye(3, dtype=int)[p[1]]
                    steps[3] = (1, 1, 1)
                    corners = base + steps
                    cells.append([vid(*c) for c in corners])
    cells = np.array(cells, dtype=np.int64)
    vols = _cell_volumes(vertices, cells)
    cells[vols < 0] = cells[vols < 0][:, [0, 1, 3, 2]]

    # boundary faces: appear in exactly one cell
    c = cells
    faces_all = np.concatenate([c[:, [1, 2, 3]], c[:, [0, 2, 3]], c[:, [0, 1, 3]], c[:, [0, 1, 2]]])
    keys = np.sort(faces_all, axis=1)
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    faces = uniq[counts == 1]
    faces = _orient_boundary_outward(vertices, cells, faces)
    zc = vertices[:, 2][faces]
    tags = [BOUNDARY_TAG if np.all(np.abs(z) < 1e-12) else FARFIELD_TAG for z in zc]
    return SimplicialMesh(3, vertices, cells, faces, tags)


# -- I/O ----------------------------------------------------------------------


def _fmt_float(x):
    return format(float(x), ".17g")


def _json_mesh_text(mesh):
    verts = ",".join("[" + ",".join(_fmt_float(x) for x in v) + "]" for v in mesh.vertices)
    cells = ",".join("[" + ",".join(str(int(i)) for i in c) + "]" for c in mesh.cells)
    faces = ",".join("[" + ",".join(str(int(i)) for i in f) + "]" for f in mesh.boundary_faces)
    tags = ",".join(json.dumps(t) for t in mesh.face_tags)
    if mesh.metric.get("type") == "conformal":
        fac = ",".join(_fmt_float(x) for x in mesh.metric["factor"])
        metric = '{"type":"conformal","factor":[' + fac + "]}"
    else:
        metric = '{"type":"euclidean"}'
    return ('{"dimension": %d, "vertices": [%s], "cells": [%s], "boundary_faces": [%s], '
            '"face_tags": [%s], "metric": %s}'
            % (mesh.dimension, verts, cells, faces, tags, metric))


def atomic_write_text(path, text):
    """Write text to path via a temp file + rename; never leaves partial output."""
    d = os.path.dirname(os.path.abspath(path)) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def save_mesh(mesh, path):
    """Serialize mesh to the JSON mesh format (floats at 17 significant digits)."""
    atomic_write_text(path, _json_mesh_text(mesh) + "\n")


def load_mesh(path):
    """Load and validate a mesh from the JSON mesh format."""
    try:
        with open(path) as f:
            raw = f.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    for key in ("dimension", "vertices", "cells", "boundary_faces"):
        if key not in data:
            raise FormatError(f"{path}: missing field '{key}'")
    dim = data["dimension"]
    if dim != 3:
        raise UnsupportedDimension(f"{path}: dimension {dim} not supported")
    try:
        return SimplicialMesh(
            dim,
            np.asarray(data["vertices"], dtype=np.float64),
            np.asarray(data["cells"], dtype=np.int64),
            np.asarray(data["boundary_faces"], dtype=np.int64),
            data.get("face_tags"),
            data.get("metric"),
        )
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{path}: malformed array field: {exc}") from exc


# -- quadrature ---------------------------------------------------------------


def boundary_quadrature(mesh, f, p=1):
    """Integrate f over dM: sum of face-area x vertex average of |f|^p.

    p=1 integrates f itself (signed), keeping the operation linear; p>1
    integrates |f|^p. First-order consistent for smooth f.
    """
    if p < 1:
        raise ValueError("exponent p must be >= 1")
    vals = f.values if isinstance(f, BoundaryField) else np.asarray(f, dtype=np.float64)
    if vals.shape != (len(mesh.boundary_vertices),):
        raise FormatError("boundary_quadrature: field must live on boundary vertices")
    if not np.all(np.isfinite(vals)):
        raise FormatError("boundary_quadrature: non-finite value")
    dens = vals if p == 1 else np.abs(vals) ** p
    return float(mesh.boundary_lumped_weights @ dens)


def boundary_area(mesh, density=None):
    """Total dM area with an optional per-vertex metric density."""
    if density is None:
        return float(mesh.face_areas.sum())
    return boundary_quadrature(mesh, density, p=1)
