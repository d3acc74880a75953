"""Assembly of the stabilized fictitious-domain system.

The unknown is the factor w in u = phi * w, so the Dirichlet condition on
the zero set of phi holds by construction and no boundary mesh is needed.
All integrals run over full triangles of the active submesh; nothing is
ever integrated over a cut polygon or the implicit curve itself.

The bilinear form assembled here is

    a(w, v) = (grad(phi w), grad(phi v))_active
            - (d/dn (phi w), phi v)_boundary facets
            + sigma * h   * sum over ghost facets of [d/dn(phi w)][d/dn(phi v)]
            + sigma * h^2 * sum over cut triangles of (lap(phi w), lap(phi v))

with the matching right-hand side

    l(v) = (f, phi v)_active - sigma * h^2 * (f, lap(phi v))_cut.

The penalty parts are assembled separately from the core so that their
matrix is exactly symmetric and can be inspected on its own.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import IO

import numpy as np
import scipy.sparse as sp

from .fem_core import (QuadratureRule, ReferenceElement, DofMap,
                       build_dof_map, edge_quadrature, make_reference_element,
                       quadrature_degrees, triangle_quadrature)
from .levelset import ActiveDomain, AnalyticField, LevelSetField
from .mesh import BackgroundMesh

__all__ = [
    "SparseSystem",
    "assemble_system",
    "assemble_ghost_part",
    "element_product_kernel",
    "boundary_term_kernel",
    "ghost_jump_kernel",
    "ghost_laplacian_kernel",
    "rhs_kernels",
    "dump_matrix",
]

_CHUNK = 4096


@dataclass(frozen=True)
class SparseSystem:
    """Assembled linear system A w = b over the active dofs."""

    A: sp.csr_matrix
    b: np.ndarray
    sigma: float
    h: float
    dofmap: DofMap
    degree: int            # polynomial degree k of the unknown
    levelset_degree: int   # polynomial degree l of the level set

    @property
    def n_dofs(self) -> int:
        return self.b.shape[0]


# ---------------------------------------------------------------------------
# batched element geometry and tabulations

def _geometry(mesh: BackgroundMesh, tris: np.ndarray):
    """Affine maps of the given triangles.

    Returns (v0, jac, det, inv) where jac columns are the edge vectors,
    det = 2 * area > 0 and inv is the inverse Jacobian.  The physical
    gradient of a reference function g is inv.T @ g_ref.
    """
    verts = mesh.triangle_coords(tris)
    v0 = verts[:, 0, :]
    jac = np.stack([verts[:, 1, :] - v0, verts[:, 2, :] - v0], axis=-1)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1]
    inv[:, 0, 1] = -jac[:, 0, 1]
    inv[:, 1, 0] = -jac[:, 1, 0]
    inv[:, 1, 1] = jac[:, 0, 0]
    inv /= det[:, None, None]
    return v0, jac, det, inv


def _phys_points(v0, jac, quad: QuadratureRule):
    """Physical quadrature points, shape (nT, Q, 2)."""
    ref = quad.points[:, 1:]                     # reference (x, y)
    return v0[:, None, :] + np.einsum("ade,qe->aqd", jac, ref)


def _phi_tables(field: LevelSetField, tris: np.ndarray, inv: np.ndarray,
                quad: QuadratureRule, need_lap: bool):
    """Values, physical gradients and Laplacians of the interpolant."""
    tab_v, tab_g, tab_h = make_reference_element(field.degree).tabulate(
        quad.points)
    coef = field.cell_coefficients(tris)                     # (nT, m)
    val = coef @ tab_v.T                                     # (nT, Q)
    grad_ref = np.einsum("am,qmd->aqd", coef, tab_g)
    grad = np.einsum("ade,aqd->aqe", inv, grad_ref)
    lap = None
    if need_lap:
        hess_ref = np.einsum("am,qmdc->aqdc", coef, tab_h)
        lap = np.einsum("ade,aqdc,ace->aq", inv, hess_ref, inv)
    return val, grad, lap


def _basis_tables(ref: ReferenceElement, inv: np.ndarray,
                  quad: QuadratureRule, need_lap: bool):
    """Basis values, physical gradients and Laplacians per triangle."""
    tab_v, tab_g, tab_h = ref.tabulate(quad.points)
    grad = np.einsum("ade,qid->aqie", inv, tab_g)
    lap = None
    if need_lap:
        lap = np.einsum("ade,qidc,ace->aqi", inv, tab_h, inv)
    return tab_v, grad, lap


def _product_local(field, tris, ref, quad):
    """Local matrices of (grad(phi psi_j), grad(phi psi_i)) over triangles."""
    _, _, det, inv = _geometry(field.mesh, tris)
    pv, pg, _ = _phi_tables(field, tris, inv, quad, need_lap=False)
    bv, bg, _ = _basis_tables(ref, inv, quad, need_lap=False)
    grads = (bv[None, :, :, None] * pg[:, :, None, :]
             + pv[:, :, None, None] * bg)               # (nT, Q, n, 2)
    w = quad.weights[None, :] * det[:, None]
    return np.einsum("aq,aqie,aqje->aij", w, grads, grads)


def _laplacian_local(field, tris, ref, quad):
    """Laplacians lap(phi psi_i) at quadrature points and the weights."""
    _, _, det, inv = _geometry(field.mesh, tris)
    pv, pg, plap = _phi_tables(field, tris, inv, quad, need_lap=True)
    bv, bg, blap = _basis_tables(ref, inv, quad, need_lap=True)
    lap = (bv[None, :, :] * plap[:, :, None]
           + 2.0 * np.einsum("aqe,aqie->aqi", pg, bg)
           + pv[:, :, None] * blap)                     # (nT, Q, n)
    w = quad.weights[None, :] * det[:, None]
    return lap, w


def _load_local(field, tris, f: AnalyticField, ref, quad):
    """Element load vectors (f, phi psi_i) over the given triangles."""
    v0, jac, det, inv = _geometry(field.mesh, tris)
    pts = _phys_points(v0, jac, quad)
    fv = np.asarray(f.value(pts[..., 0], pts[..., 1]), dtype=float)
    pv, _, _ = _phi_tables(field, tris, inv, quad, need_lap=False)
    tab_v, _, _ = ref.tabulate(quad.points)
    w = quad.weights[None, :] * det[:, None]
    return np.einsum("aq,qi->ai", w * fv * pv, tab_v)


def _load_correction_local(field, tris, f, ref, quad, sigma, h):
    """Stabilization corrections -sigma h^2 (f, lap(phi psi_i)) on cut cells."""
    v0, jac, det, _ = _geometry(field.mesh, tris)
    pts = _phys_points(v0, jac, quad)
    fv = np.asarray(f.value(pts[..., 0], pts[..., 1]), dtype=float)
    lap, w = _laplacian_local(field, tris, ref, quad)
    return -sigma * h * h * np.einsum("aq,aqi->ai", w * fv, lap)


def _symmetrize(m: np.ndarray) -> np.ndarray:
    """Copy the lower triangle onto the upper one, making symmetry exact."""
    out = np.tril(m)
    return out + np.tril(m, -1).T


def _facet_bary(mesh: BackgroundMesh, facet: int, tri: int,
                s: np.ndarray) -> np.ndarray:
    """Barycentric coordinates in `tri` of facet points at parameters `s`.

    The facet is parametrized from its lower to its higher vertex id, so
    both incident triangles see the same physical points.
    """
    va, vb = mesh.facets[facet]
    tri_verts = mesh.triangles[tri]
    bary = np.zeros((len(s), 3))
    ia = int(np.nonzero(tri_verts == va)[0][0])
    ib = int(np.nonzero(tri_verts == vb)[0][0])
    bary[:, ia] = 1.0 - s
    bary[:, ib] = s
    return bary


def _facet_trace(field, ref, facet, tri, s):
    """phi and basis traces on one side of a facet.

    Returns (pv, pg, bv, bg) with physical gradients taken from `tri`.
    """
    bary = _facet_bary(field.mesh, facet, tri, s)
    tab_v, tab_g, _ = ref.tabulate(bary)
    phi_v, phi_g, _ = make_reference_element(field.degree).tabulate(bary)
    _, _, _, inv = _geometry(field.mesh, np.array([tri]))
    inv = inv[0]
    coef = field.cell_coefficients(np.array([tri]))[0]
    pv = phi_v @ coef
    pg = np.einsum("qmd,m->qd", phi_g, coef) @ inv
    bg = np.einsum("qid,de->qie", tab_g, inv)
    return pv, pg, tab_v, bg


# ---------------------------------------------------------------------------
# public per-entity kernels

def element_product_kernel(triangle: int, field: LevelSetField,
                           ref: ReferenceElement,
                           quad: QuadratureRule) -> np.ndarray:
    """Local matrix of integral grad(phi psi_j) . grad(phi psi_i) dx."""
    return _product_local(field, np.array([triangle]), ref, quad)[0]


def boundary_term_kernel(facet: int, owner: int, normal: np.ndarray,
                         field: LevelSetField, ref: ReferenceElement,
                         quad: QuadratureRule) -> np.ndarray:
    """Local matrix of integral d/dn(phi psi_j) * (phi psi_i) ds.

    Traces are taken from `owner`, the unique active triangle of the
    facet; `normal` must point out of the active set.  The assembled
    system subtracts this matrix.
    """
    s = quad.points[:, 1]
    pv, pg, bv, bg = _facet_trace(field, ref, facet, owner, s)
    length = float(field.mesh.facet_lengths(np.array([facet]))[0])
    dn = bv * (pg @ normal)[:, None] + pv[:, None] * (bg @ normal)
    test = pv[:, None] * bv
    w = quad.weights * length
    return np.einsum("q,qi,qj->ij", w, test, dn)


def ghost_jump_kernel(facet: int, field: LevelSetField,
                      ref: ReferenceElement, quad: QuadratureRule,
                      sigma: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Penalty matrix sigma h * integral [d/dn(phi psi_j)][d/dn(phi psi_i)] ds.

    Returns (tris, local) where tris are the two incident triangles in
    ascending id order and local is the (2n, 2n) matrix over their stacked
    dofs.  Dofs shared by both triangles appear twice; duplicate entries
    add up correctly during global accumulation.  The facet normal is
    fixed from the lower-id towards the higher-id triangle, and the jump
    is invariant under flipping it.
    """
    mesh = field.mesh
    t_lo, t_hi = mesh.facet_triangles[facet]
    if t_hi < 0:
        raise ValueError(f"facet {facet} has a single incident triangle")
    ends = mesh.facet_coords(np.array([facet]))[0]
    tang = ends[1] - ends[0]
    length = float(np.hypot(*tang))
    normal = np.array([tang[1], -tang[0]]) / length
    mid = 0.5 * (ends[0] + ends[1])
    centroid = mesh.triangle_coords(np.array([t_lo]))[0].mean(axis=0)
    if normal @ (mid - centroid) < 0.0:
        normal = -normal

    s = quad.points[:, 1]
    n = ref.n_basis
    jump = np.empty((len(s), 2 * n))
    for col, (tri, sign) in enumerate(((t_lo, 1.0), (t_hi, -1.0))):
        pv, pg, bv, bg = _facet_trace(field, ref, facet, int(tri), s)
        dn = bv * (pg @ normal)[:, None] + pv[:, None] * (bg @ normal)
        jump[:, col * n:(col + 1) * n] = sign * dn
    w = sigma * h * quad.weights * length
    local = np.einsum("q,qi,qj->ij", w, jump, jump)
    return np.array([t_lo, t_hi]), _symmetrize(local)


def ghost_laplacian_kernel(triangle: int, field: LevelSetField,
                           ref: ReferenceElement, quad: QuadratureRule,
                           sigma: float, h: float) -> np.ndarray:
    """Penalty matrix sigma h^2 * integral lap(phi psi_j) lap(phi psi_i) dx."""
    lap, w = _laplacian_local(field, np.array([triangle]), ref, quad)
    local = sigma * h * h * np.einsum("aq,aqi,aqj->aij", w, lap, lap)[0]
    return _symmetrize(local)


def rhs_kernels(triangle: int, f: AnalyticField, field: LevelSetField,
                ref: ReferenceElement, quad: QuadratureRule,
                sigma: float, h: float, cut: bool) -> np.ndarray:
    """Element load vector (f, phi psi_i), with the stabilization
    correction -sigma h^2 (f, lap(phi psi_i)) added on cut elements."""
    tris = np.array([triangle])
    load = _load_local(field, tris, f, ref, quad)[0]
    if cut and sigma != 0.0:
        load = load + _load_correction_local(field, tris, f, ref, quad,
                                             sigma, h)[0]
    return load


# ---------------------------------------------------------------------------
# global assembly

def _accumulate(rows, cols, vals, dofs_i, dofs_j, local):
    rows.append(np.broadcast_to(dofs_i[..., :, None], local.shape).ravel())
    cols.append(np.broadcast_to(dofs_j[..., None, :], local.shape).ravel())
    vals.append(local.ravel())


def assemble_ghost_part(domain: ActiveDomain, field: LevelSetField,
                        f: AnalyticField, k: int, sigma: float,
                        dofmap: DofMap | None = None
                        ) -> tuple[sp.csr_matrix, np.ndarray]:
    """Assemble the penalty matrix and its right-hand side correction.

    The matrix couples facet jumps on ghost facets with element Laplacian
    products on cut triangles.  Local blocks are symmetrized exactly, and
    the accumulated matrix is averaged with its transpose: summation order
    of duplicate entries is not mirror-invariant, so the average is what
    makes the result symmetric entry for entry, not merely up to rounding.
    """
    mesh = domain.mesh
    if dofmap is None:
        dofmap = build_dof_map(mesh, domain.active_triangles, k)
    ref = make_reference_element(k)
    degrees = quadrature_degrees(k, field.degree)
    edge_rule = edge_quadrature(degrees["ghost_facet"])
    vol_rule = triangle_quadrature(degrees["volume"])
    data_rule = triangle_quadrature(degrees["data"])
    h = mesh.h
    n = ref.n_basis

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    for facet in domain.ghost_facets:
        tris, local = ghost_jump_kernel(int(facet), field, ref, edge_rule,
                                        sigma, h)
        dofs = dofmap.cell_dofs[dofmap.rows_for(tris)].reshape(2 * n)
        _accumulate(rows, cols, vals, dofs, dofs, local)

    b_corr = np.zeros(dofmap.n_dofs)
    cut = domain.cut_triangles
    if cut.size:
        cut_rows = dofmap.rows_for(cut)
        for start in range(0, cut.size, _CHUNK):
            sel = slice(start, start + _CHUNK)
            lap, w = _laplacian_local(field, cut[sel], ref, vol_rule)
            local = sigma * h * h * np.einsum("aq,aqi,aqj->aij", w, lap, lap)
            local = np.tril(local) + np.tril(local, -1).transpose(0, 2, 1)
            dofs = dofmap.cell_dofs[cut_rows[sel]]
            _accumulate(rows, cols, vals, dofs, dofs, local)
            corr = _load_correction_local(field, cut[sel], f, ref,
                                          data_rule, sigma, h)
            np.add.at(b_corr, dofs.ravel(), corr.ravel())

    shape = (dofmap.n_dofs, dofmap.n_dofs)
    if rows:
        mat = sp.coo_matrix((np.concatenate(vals),
                             (np.concatenate(rows), np.concatenate(cols))),
                            shape=shape).tocsr()
        mat = ((mat + mat.T) * 0.5).tocsr()
    else:
        mat = sp.csr_matrix(shape)
    return mat, b_corr


def _box_boundary_dofs(domain: ActiveDomain, dofmap: DofMap) -> np.ndarray:
    """Dofs whose node lies on the part of the active boundary that
    coincides with the background-box boundary.  Decided on the integer
    node lattice, so no tolerance is involved."""
    mesh = domain.mesh
    on_box = mesh.facet_triangles[domain.boundary_facets, 1] < 0
    facets = domain.boundary_facets[on_box]
    if facets.size == 0:
        return np.empty(0, dtype=np.int64)
    k = dofmap.degree
    keys = dofmap.node_keys
    pinned = np.zeros(dofmap.n_dofs, dtype=bool)
    for facet in facets:
        a, b = mesh.vertex_lattice[mesh.facets[facet]] * k
        d = b - a
        rel = keys - a
        cross = rel[:, 0] * d[1] - rel[:, 1] * d[0]
        t = rel @ d
        pinned |= (cross == 0) & (t >= 0) & (t <= d @ d)
    return np.nonzero(pinned)[0]


def assemble_system(domain: ActiveDomain, field: LevelSetField,
                    f: AnalyticField, k: int, sigma: float,
                    outer_data: AnalyticField | None = None) -> SparseSystem:
    """Assemble the full linear system over the active submesh.

    Parameters
    ----------
    domain : classification of the mesh against `field`.
    field : level-set interpolant, degree l.
    f : source term of the strong problem -lap(u) = f.
    k : polynomial degree of the unknown factor, 1..3.
    sigma : penalty strength, >= 0.  With sigma = 0 the penalty terms are
        skipped entirely and only the plain product form remains.
    outer_data : values of the factor w where the active region reaches
        the background-box boundary.  The weak form carries no condition
        there (the zero set is meant to stay inside the box), so problems
        whose geometry does touch the box must pin w to stay uniquely
        solvable; dofs on that part of the boundary get Dirichlet rows.

    Quadrature exactness follows `quadrature_degrees(k, l)`.
    """
    if k not in (1, 2, 3):
        raise ValueError(f"unsupported polynomial degree {k}")
    if not np.isfinite(sigma) or sigma < 0.0:
        raise ValueError(f"penalty strength must be finite and >= 0, got {sigma}")
    mesh = domain.mesh
    if field.mesh is not mesh:
        raise ValueError("level set and domain live on different meshes")

    dofmap = build_dof_map(mesh, domain.active_triangles, k)
    ref = make_reference_element(k)
    degrees = quadrature_degrees(k, field.degree)
    vol_rule = triangle_quadrature(degrees["volume"])
    data_rule = triangle_quadrature(degrees["data"])
    bnd_rule = edge_quadrature(degrees["boundary_facet"])
    h = mesh.h

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    b = np.zeros(dofmap.n_dofs)

    active = domain.active_triangles
    for start in range(0, active.size, _CHUNK):
        sel = slice(start, start + _CHUNK)
        tris = active[sel]
        local = _product_local(field, tris, ref, vol_rule)
        dofs = dofmap.cell_dofs[dofmap.rows_for(tris)]
        _accumulate(rows, cols, vals, dofs, dofs, local)
        load = _load_local(field, tris, f, ref, data_rule)
        np.add.at(b, dofs.ravel(), load.ravel())

    for facet, owner, normal in zip(domain.boundary_facets,
                                    domain.boundary_owners,
                                    domain.boundary_normals):
        local = boundary_term_kernel(int(facet), int(owner), normal,
                                     field, ref, bnd_rule)
        dofs = dofmap.cell_dofs[dofmap.rows_for(np.array([owner]))][0]
        _accumulate(rows, cols, vals, dofs, dofs, -local)

    A = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dofmap.n_dofs, dofmap.n_dofs)).tocsr()

    if sigma != 0.0:
        ghost, b_corr = assemble_ghost_part(domain, field, f, k, sigma,
                                            dofmap)
        A = (A + ghost).tocsr()
        b += b_corr

    if outer_data is not None:
        pinned = _box_boundary_dofs(domain, dofmap)
        if pinned.size:
            A = A.tolil()
            A[pinned, :] = 0.0
            A[pinned, pinned] = 1.0
            A = A.tocsr()
            nodes = dofmap.node_coords[pinned]
            b[pinned] = np.asarray(outer_data.value(nodes[:, 0],
                                                    nodes[:, 1]),
                                   dtype=np.float64)

    A.eliminate_zeros()
    A.sort_indices()
    return SparseSystem(A=A, b=b, sigma=float(sigma), h=h, dofmap=dofmap,
                        degree=k, levelset_degree=field.degree)


def dump_matrix(system: SparseSystem, stream: IO[str]) -> None:
    """Write the matrix in coordinate form, one `row col value` per line."""
    coo = system.A.tocoo()
    for i, j, v in zip(coo.row, coo.col, coo.data):
        stream.write(f"{int(i)} {int(j)} {float(v)!r}\n")
