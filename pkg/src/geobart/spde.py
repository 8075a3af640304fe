"""Triangular meshes and the finite-element GMRF approximation of a Matérn field.

The structured mesher places vertices on a regular grid and splits every
grid cell along its lower-left/upper-right diagonal. Any triangulation
(e.g. from an external mesher) can be wrapped in `Mesh` directly; the
structured grid only provides a fast point-location path.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay

from .errors import MeshError
from .gp import MaternParams


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    spacing: float
    shape: tuple  # vertices along x, y


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    grid: GridSpec | None = None
    interior: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def to_dict(self) -> dict:
        d = {"vertices": self.vertices.tolist(), "triangles": self.triangles.tolist()}
        if self.grid is not None:
            d["grid"] = {"origin": list(self.grid.origin), "spacing": self.grid.spacing,
                         "shape": list(self.grid.shape)}
        if self.interior is not None:
            d["interior"] = self.interior.astype(int).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Mesh":
        grid = None
        if "grid" in d:
            g = d["grid"]
            grid = GridSpec(tuple(g["origin"]), float(g["spacing"]), tuple(g["shape"]))
        interior = np.asarray(d["interior"], bool) if "interior" in d else None
        return cls(np.asarray(d["vertices"], float), np.asarray(d["triangles"], int), grid, interior)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


@dataclass(frozen=True, eq=False)
class SpdeSystem:
    """Lumped mass matrix (stored as its diagonal) and stiffness matrix."""

    c_diag: np.ndarray
    G: sp.csc_matrix

    @property
    def n_vertices(self) -> int:
        return len(self.c_diag)

    @property
    def C(self) -> sp.dia_matrix:
        return sp.diags(self.c_diag)


def build_mesh(locations, target_edge_len: float, extension_frac: float = 0.2,
               min_margin: float = 0.0) -> Mesh:
    """Regular triangulation of the locations' bounding box plus a margin.

    The margin on each side is ``extension_frac`` times the larger box side,
    and never less than `min_margin`.
    """
    if not target_edge_len > 0:
        raise MeshError("target_edge_len must be positive")
    if extension_frac < 0 or min_margin < 0:
        raise MeshError("mesh extension must be non-negative")
    pts = np.asarray(locations, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise MeshError("no locations to mesh")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    side = float(np.max(hi - lo))
    margin = max(extension_frac * side, min_margin)
    lo, hi = lo - margin, hi + margin
    # pad degenerate boxes to at least one cell
    width = np.maximum(hi - lo, target_edge_len)
    centre = 0.5 * (lo + hi)
    h = float(target_edge_len)
    counts = np.ceil(width / h - 1e-9).astype(int)
    extent = counts * h
    origin = centre - 0.5 * extent
    nx, ny = counts + 1
    xs = origin[0] + h * np.arange(nx)
    ys = origin[1] + h * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="xy")
    i, j = i.ravel(), j.ravel()
    v00 = j * nx + i
    v10, v01, v11 = v00 + 1, v00 + nx, v00 + nx + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * len(v00), 3), dtype=int)
    triangles[0::2], triangles[1::2] = lower, upper

    box_lo, box_hi = pts.min(axis=0), pts.max(axis=0)
    interior = np.all((vertices >= box_lo - 1e-12) & (vertices <= box_hi + 1e-12), axis=1)
    return Mesh(vertices, triangles, GridSpec(tuple(origin), h, (int(nx), int(ny))), interior)


def _grid_points(lo, hi, h):
    n = np.maximum(np.ceil((hi - lo) / h - 1e-9).astype(int), 1)
    xs = np.linspace(lo[0], hi[0], n[0] + 1)
    ys = np.linspace(lo[1], hi[1], n[1] + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def build_graded_mesh(locations, inner_edge: float, buffer: float, outer_margin: float,
                      growth: float = 2.0, ring_width: int = 3) -> Mesh:
    """Delaunay mesh, fine over the data and coarsening outward.

    Vertices sit on a regular grid of spacing `inner_edge` over the
    locations' bounding box widened by `buffer`; around it, rings of
    `ring_width` cells each use a spacing `growth` times the previous one,
    until the mesh extends `outer_margin` beyond the bounding box. The
    wide, cheap extension keeps the artificial boundary away from the data
    even when the range is large.
    """
    if not inner_edge > 0:
        raise MeshError("inner_edge must be positive")
    if buffer < 0 or outer_margin < buffer:
        raise MeshError("need 0 <= buffer <= outer_margin")
    pts = np.asarray(locations, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise MeshError("no locations to mesh")
    box_lo, box_hi = pts.min(axis=0), pts.max(axis=0)
    # pad degenerate boxes to one cell
    pad = np.maximum(inner_edge - (box_hi - box_lo), 0.0) / 2
    box_lo, box_hi = box_lo - pad, box_hi + pad
    lo, hi = box_lo - buffer, box_hi + buffer
    layers = [_grid_points(lo, hi, inner_edge)]
    h = inner_edge
    out_lo, out_hi = box_lo - outer_margin, box_hi + outer_margin
    while np.any(lo > out_lo + 1e-12) or np.any(hi < out_hi - 1e-12):
        h *= growth
        new_lo = np.maximum(lo - ring_width * h, out_lo)
        new_hi = np.minimum(hi + ring_width * h, out_hi)
        if np.min(new_lo - out_lo) < h and np.min(out_hi - new_hi) < h:
            new_lo, new_hi = out_lo, out_hi
        g = _grid_points(new_lo, new_hi, h)
        inside = np.all((g > lo - 0.5 * h) & (g < hi + 0.5 * h), axis=1)
        layers.append(g[~inside])
        lo, hi = new_lo, new_hi
    vertices = np.unique(np.round(np.vstack(layers), 12), axis=0)
    tri = Delaunay(vertices).simplices
    p = vertices[tri]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    keep = np.abs(area) > 1e-10 * inner_edge ** 2
    tri = tri[keep]
    # counter-clockwise orientation
    flip = area[keep] < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    interior = np.all((vertices >= box_lo - 1e-12) & (vertices <= box_hi + 1e-12), axis=1)
    return Mesh(vertices, tri.astype(int), None, interior)


def fem_matrices(mesh: Mesh) -> SpdeSystem:
    """Linear finite-element mass (lumped) and stiffness matrices."""
    tri = mesh.triangles
    p = mesh.vertices[tri]
    area = mesh.areas()
    if np.any(np.abs(area) <= 1e-14 * max(1.0, float(np.max(np.abs(area)))) ):
        raise MeshError("degenerate triangle")
    area = np.abs(area)
    # edge opposite vertex a is e_a = p_{a+2} - p_{a+1}; grad phi_a = rot(e_a) / (2 area)
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    local = np.einsum("tad,tbd->tab", e, e) / (4.0 * area)[:, None, None]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    G = sp.csc_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    G = (0.5 * (G + G.T)).tocsc()
    c_diag = np.bincount(tri.ravel(), weights=np.repeat(area / 3.0, 3), minlength=n)
    if np.any(c_diag <= 0):
        raise MeshError("mesh has vertices not belonging to any triangle")
    return SpdeSystem(c_diag, G)


def precision_matrix(params: MaternParams, system: SpdeSystem) -> sp.csc_matrix:
    """Sparse precision of the order-2 SPDE field: tau^2 (k^4 C + 2 k^2 G + G C^-1 G)."""
    if params.nu != 1.0:
        raise ValueError("only nu = 1 is supported by the SPDE construction in 2-D")
    k2 = params.kappa ** 2
    tau2 = 1.0 / (4.0 * math.pi * k2 * params.sigma_m2)
    G = system.G
    GCG = G @ sp.diags(1.0 / system.c_diag) @ G
    Q = tau2 * (k2 * k2 * sp.diags(system.c_diag) + 2.0 * k2 * G + GCG)
    return sp.csc_matrix(Q)


def projection_matrix(mesh: Mesh, locations, tol: float = 1e-9) -> sp.csr_matrix:
    """Barycentric interpolation weights from mesh vertices to `locations`."""
    pts = np.asarray(locations, dtype=float).reshape(-1, 2)
    if mesh.grid is not None:
        verts, weights = _locate_grid(mesh.grid, pts, tol)
    else:
        verts, weights = _locate_generic(mesh, pts, tol)
    n = len(pts)
    A = sp.csr_matrix((weights.ravel(), (np.repeat(np.arange(n), 3), verts.ravel())),
                      shape=(n, mesh.n_vertices))
    A.eliminate_zeros()
    return A


def _locate_grid(grid: GridSpec, pts, tol):
    ox, oy = grid.origin
    h = grid.spacing
    nx, ny = grid.shape
    u = (pts[:, 0] - ox) / h
    v = (pts[:, 1] - oy) / h
    outside = (u < -tol) | (v < -tol) | (u > nx - 1 + tol) | (v > ny - 1 + tol)
    if np.any(outside):
        raise MeshError(f"{int(outside.sum())} location(s) outside the mesh")
    i = np.clip(np.floor(u).astype(int), 0, nx - 2)
    j = np.clip(np.floor(v).astype(int), 0, ny - 2)
    a = np.clip(u - i, 0.0, 1.0)
    b = np.clip(v - j, 0.0, 1.0)
    v00 = j * nx + i
    v10, v01, v11 = v00 + 1, v00 + nx, v00 + nx + 1
    low = a >= b
    verts = np.where(low[:, None], np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01]))
    weights = np.where(low[:, None], np.column_stack([1 - a, a - b, b]), np.column_stack([1 - b, a, b - a]))
    return verts, weights


def _locate_generic(mesh: Mesh, pts, tol, chunk: int = 256):
    p = mesh.vertices[mesh.triangles]
    T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (t, 2, 2)
    Tinv = np.linalg.inv(T)
    lo, hi = p.min(axis=1) - tol, p.max(axis=1) + tol
    verts = np.empty((len(pts), 3), dtype=int)
    weights = np.empty((len(pts), 3))
    for start in range(0, len(pts), chunk):
        x = pts[start:start + chunk]
        cand = np.all((x[:, None, :] >= lo[None]) & (x[:, None, :] <= hi[None]), axis=2)
        for i, k in enumerate(range(start, start + len(x))):
            ts = np.flatnonzero(cand[i])
            lam = np.einsum("tij,tj->ti", Tinv[ts], x[i] - p[ts, 0])
            bary = np.column_stack([1 - lam.sum(axis=1), lam])
            ok = np.flatnonzero(np.all(bary >= -tol, axis=1))
            if ok.size == 0:
                raise MeshError(f"location {x[i]} outside the mesh")
            # prefer the triangle containing the point most comfortably
            j = ok[np.argmax(bary[ok].min(axis=1))]
            verts[k] = mesh.triangles[ts[j]]
            w = np.clip(bary[j], 0.0, None)
            weights[k] = w / w.sum()
    return verts, weights
