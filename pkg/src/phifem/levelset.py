"""Level-set interpolation and sign-based domain classification.

The geometry enters only through a Lagrange interpolant of the level-set
function on the full background mesh.  A triangle is active when the
interpolant is negative somewhere on it, judged by sampling on a fixed
barycentric lattice; no geometric tolerance or snapping is applied, so
classification is reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import IO, Callable

import numpy as np

from .fem_core import DofMap, build_dof_map, make_reference_element
from .mesh import BackgroundMesh, BoundaryFacets, submesh_boundary_facets

__all__ = [
    "AnalyticField",
    "LevelSetField",
    "ActiveDomain",
    "EmptyActiveSetError",
    "interpolate_levelset",
    "eval_field",
    "classify_domain",
    "dump_classification",
]


class EmptyActiveSetError(Exception):
    """The level set is nonnegative on every triangle of the mesh."""


@dataclass(frozen=True)
class AnalyticField:
    """A scalar field given by callables vectorized over coordinate arrays.

    `value(x, y)` is required; `gradient(x, y)` returning a pair of arrays
    is optional and only needed where derivatives are consumed.
    """

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray, np.ndarray], tuple] | None = None


@dataclass(frozen=True)
class LevelSetField:
    """Lagrange interpolant of the level set on the whole background mesh."""

    mesh: BackgroundMesh
    degree: int
    dofmap: DofMap            # covers every triangle of the mesh
    coefficients: np.ndarray  # (n_dofs,) nodal values

    def cell_coefficients(self, tris: np.ndarray) -> np.ndarray:
        """Nodal values per triangle, shape (len(tris), n_local)."""
        return self.coefficients[self.dofmap.cell_dofs[tris]]


def interpolate_levelset(phi: AnalyticField, mesh: BackgroundMesh,
                         degree: int) -> LevelSetField:
    """Interpolate `phi` at the degree-`degree` Lagrange nodes of the mesh."""
    if degree not in (1, 2, 3):
        raise ValueError(f"unsupported level-set degree {degree}")
    dofmap = build_dof_map(mesh, np.arange(mesh.n_triangles), degree)
    coeffs = np.asarray(
        phi.value(dofmap.node_coords[:, 0], dofmap.node_coords[:, 1]),
        dtype=float)
    if coeffs.shape != (dofmap.n_dofs,):
        raise ValueError("level-set callable must return one value per node")
    if not np.isfinite(coeffs).all():
        raise ValueError("level set evaluated to a non-finite value")
    coeffs.setflags(write=False)
    return LevelSetField(mesh=mesh, degree=degree, dofmap=dofmap,
                         coefficients=coeffs)


def eval_field(field: LevelSetField, triangle: int, bary: np.ndarray
               ) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and Hessian of the interpolant at one point.

    The point is given in barycentric coordinates of `triangle`; returned
    derivatives are in physical coordinates.
    """
    ref = make_reference_element(field.degree)
    pts = np.asarray(bary, dtype=float).reshape(1, 3)
    values, grads, hess = ref.tabulate(pts)
    coef = field.coefficients[field.dofmap.cell_dofs[triangle]]

    verts = field.mesh.triangle_coords(np.array([triangle]))[0]
    jac = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
    inv_jac = np.linalg.inv(jac)

    val = float(values[0] @ coef)
    grad_ref = grads[0].T @ coef                      # (2,)
    hess_ref = np.einsum("ndc,n->dc", hess[0], coef)  # (2, 2)
    grad = inv_jac.T @ grad_ref
    hessian = inv_jac.T @ hess_ref @ inv_jac
    return val, grad, hessian


@dataclass(frozen=True)
class ActiveDomain:
    """Sign classification of the mesh against a level-set interpolant.

    active_triangles : triangles where the interpolant dips below zero.
    cut_triangles : active triangles where it also reaches >= 0.
    ghost_facets : interior facets of the active set with a cut neighbour.
    boundary_facets : facets bounding the active set, with owner triangles
        and outward unit normals alongside.
    """

    mesh: BackgroundMesh
    active_triangles: np.ndarray
    cut_triangles: np.ndarray
    ghost_facets: np.ndarray
    boundary_facets: np.ndarray
    boundary_owners: np.ndarray
    boundary_normals: np.ndarray

    @property
    def boundary(self) -> BoundaryFacets:
        return BoundaryFacets(self.boundary_facets, self.boundary_owners,
                              self.boundary_normals)


@lru_cache(maxsize=None)
def _sign_lattice(degree: int) -> np.ndarray:
    """Basis values on the sign-sampling lattice of order max(4*degree, 8)."""
    order = max(4 * degree, 8)
    pts = np.array([(order - i - j, i, j)
                    for j in range(order + 1) for i in range(order + 1 - j)],
                   dtype=float) / order
    values, _, _ = make_reference_element(degree).tabulate(pts)
    values.setflags(write=False)
    return values


def classify_domain(field: LevelSetField, mesh: BackgroundMesh
                    ) -> ActiveDomain:
    """Split the mesh into active, cut and outside triangles.

    A triangle is active when the lattice minimum of the interpolant is
    strictly negative, and cut when additionally the lattice maximum is
    nonnegative.  A triangle whose minimum is exactly zero stays inactive.
    """
    if field.mesh is not mesh:
        raise ValueError("level-set field was interpolated on a different mesh")
    basis = _sign_lattice(field.degree)
    coeffs = field.cell_coefficients(np.arange(mesh.n_triangles))
    samples = coeffs @ basis.T                     # (n_triangles, n_lattice)
    mins = samples.min(axis=1)
    maxs = samples.max(axis=1)

    active_mask = mins < 0.0
    if not active_mask.any():
        raise EmptyActiveSetError("level set is nonnegative on every triangle")
    active = np.nonzero(active_mask)[0]
    cut = np.nonzero(active_mask & (maxs >= 0.0))[0]

    ft = mesh.facet_triangles
    interior = ft[:, 1] >= 0
    both_active = interior.copy()
    both_active[interior] = (active_mask[ft[interior, 0]]
                             & active_mask[ft[interior, 1]])
    cut_mask = np.zeros(mesh.n_triangles, dtype=bool)
    cut_mask[cut] = True
    touches_cut = np.zeros(mesh.n_facets, dtype=bool)
    touches_cut[mesh.triangle_facets[cut].ravel()] = True
    ghost = np.nonzero(both_active & touches_cut)[0]

    boundary = submesh_boundary_facets(mesh, active)
    for arr in (active, cut, ghost):
        arr.setflags(write=False)
    return ActiveDomain(
        mesh=mesh,
        active_triangles=active,
        cut_triangles=cut,
        ghost_facets=ghost,
        boundary_facets=boundary.facets,
        boundary_owners=boundary.owners,
        boundary_normals=boundary.normals,
    )


def dump_classification(domain: ActiveDomain, stream: IO[str]) -> None:
    """CSV dump with one `triangle_id,status` row per mesh triangle."""
    status = np.full(domain.mesh.n_triangles, "outside", dtype=object)
    status[domain.active_triangles] = "active"
    status[domain.cut_triangles] = "cut"
    stream.write("triangle_id,status\n")
    for t, s in enumerate(status):
        stream.write(f"{t},{s}\n")
