"""Uniform-mesh P1 finite element infrastructure on (0,1) and (0,1)^2.

Meshes have M interior nodes per axis, spacing h = 1/(M+1), homogeneous
Dirichlet conditions imposed by restricting every operator and vector to
interior degrees of freedom. In 2D each grid cell is split into two right
triangles along the lower-left to upper-right diagonal. All objects are
immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import (
    CoefficientBoundsError,
    InvalidArgumentError,
    NumericFailureError,
    SpaceMismatchError,
)

__all__ = [
    "UniformMesh",
    "FemSpace",
    "CoefficientField",
    "SymmetricSparseOperator",
    "NodalVector",
    "build_space",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_load",
    "l2_project",
    "l2_norm",
    "l2_error",
    "evaluate_at_points",
]

_MASS_CG_TOL = 1e-12


class UniformMesh:
    """Uniform simplicial mesh of the unit interval or unit square.

    Attributes
    ----------
    dim : 1 or 2
    M : interior nodes per axis; h = 1/(M+1)
    nodes : (n_nodes, dim) coordinates
    elements : (n_el, dim+1) node indices (segments or triangles)
    interior : (n_dof,) node indices of interior nodes, lexicographic
        (x fastest, then y)
    dof_of_node : (n_nodes,) interior dof index or -1 for boundary nodes
    """

    def __init__(self, dim: int, M: int):
        if dim not in (1, 2):
            raise InvalidArgumentError(f"dimension must be 1 or 2, got {dim}")
        if M < 1:
            raise InvalidArgumentError(f"need at least one interior node, got M={M}")
        self.dim = dim
        self.M = M
        self.h = 1.0 / (M + 1)
        n_axis = M + 2
        if dim == 1:
            self.nodes = (np.arange(n_axis) * self.h).reshape(-1, 1)
            self.elements = np.column_stack(
                [np.arange(n_axis - 1), np.arange(1, n_axis)]
            )
            interior_mask = np.zeros(n_axis, dtype=bool)
            interior_mask[1:-1] = True
        else:
            ax = np.arange(n_axis) * self.h
            X, Y = np.meshgrid(ax, ax, indexing="xy")
            self.nodes = np.column_stack([X.ravel(), Y.ravel()])
            # node id = iy * n_axis + ix
            cx, cy = np.meshgrid(np.arange(M + 1), np.arange(M + 1), indexing="xy")
            cx = cx.ravel()
            cy = cy.ravel()
            ll = cy * n_axis + cx
            lr = ll + 1
            ul = ll + n_axis
            ur = ul + 1
            lower = np.column_stack([ll, lr, ur])
            upper = np.column_stack([ll, ur, ul])
            self.elements = np.vstack([lower, upper])
            interior_axis = (np.arange(n_axis) > 0) & (np.arange(n_axis) < n_axis - 1)
            interior_mask = np.outer(interior_axis, interior_axis).ravel()
        self.interior = np.flatnonzero(interior_mask)
        self.dof_of_node = np.full(self.nodes.shape[0], -1, dtype=np.int64)
        self.dof_of_node[self.interior] = np.arange(self.interior.size)
        self.element_measure = self.h if dim == 1 else 0.5 * self.h * self.h
        for arr in (self.nodes, self.elements, self.interior, self.dof_of_node):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]


class FemSpace:
    """P1 space on a UniformMesh: interior dof indexing, per-element
    quadrature (2-point Gauss in 1D, 3-point edge-midpoint rule in 2D),
    and element-constant hat-function gradients.
    """

    def __init__(self, mesh: UniformMesh):
        self.mesh = mesh
        self.n_dof = mesh.interior.size
        verts = mesh.nodes[mesh.elements]  # (n_el, n_loc, dim)
        n_el = mesh.n_elements
        if mesh.dim == 1:
            left = verts[:, 0, 0]
            h = mesh.h
            offs = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
            self.quad_points = (left[:, None] + h * offs[None, :])[:, :, None]
            self.quad_weights = np.full((n_el, 2), 0.5 * h)
            self.basis_at_quad = np.column_stack([1.0 - offs, offs])  # (n_q, n_loc)
            # error norms use a 3-point rule: the 2-point Gauss nodes are
            # superconvergent for projection residuals and would overstate
            # observed rates
            e_offs = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
            self.error_quad_points = (left[:, None] + h * e_offs[None, :])[:, :, None]
            self.error_quad_weights = np.tile(h * np.array([5.0, 8.0, 5.0]) / 18.0, (n_el, 1))
            self.error_basis = np.column_stack([1.0 - e_offs, e_offs])
            grads = np.empty((n_el, 2, 1))
            grads[:, 0, 0] = -1.0 / h
            grads[:, 1, 0] = 1.0 / h
            self.gradients = grads
        else:
            mids = 0.5 * (verts + np.roll(verts, -1, axis=1))  # m01, m12, m20
            self.quad_points = mids
            self.quad_weights = np.full((n_el, 3), mesh.element_measure / 3.0)
            self.basis_at_quad = np.array(
                [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
            )
            self.error_quad_points = self.quad_points
            self.error_quad_weights = self.quad_weights
            self.error_basis = self.basis_at_quad
            e1 = verts[:, 1] - verts[:, 0]
            e2 = verts[:, 2] - verts[:, 0]
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            inv = np.empty((n_el, 2, 2))
            inv[:, 0, 0] = e2[:, 1] / det
            inv[:, 0, 1] = -e2[:, 0] / det
            inv[:, 1, 0] = -e1[:, 1] / det
            inv[:, 1, 1] = e1[:, 0] / det
            # rows of J^-1 are the gradients of the barycentric coords 1, 2
            grads = np.empty((n_el, 3, 2))
            grads[:, 1, :] = inv[:, 0, :]
            grads[:, 2, :] = inv[:, 1, :]
            grads[:, 0, :] = -grads[:, 1, :] - grads[:, 2, :]
            self.gradients = grads
        for arr in (
            self.quad_points,
            self.quad_weights,
            self.basis_at_quad,
            self.gradients,
            self.error_quad_points,
            self.error_quad_weights,
            self.error_basis,
        ):
            arr.setflags(write=False)
        self._mass = _assemble_mass_matrix(self)
        self._stiffness_pattern = None

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def h(self) -> float:
        return self.mesh.h

    def zeros(self) -> "NodalVector":
        return NodalVector(np.zeros(self.n_dof), self)

    def from_values(self, values) -> "NodalVector":
        return NodalVector(np.asarray(values, dtype=float), self)

    def interior_coords(self) -> np.ndarray:
        return self.mesh.nodes[self.mesh.interior]

    def full_values(self, interior_values: np.ndarray) -> np.ndarray:
        """Extend interior dof values by the homogeneous boundary zeros."""
        full = np.zeros(self.mesh.n_nodes)
        full[self.mesh.interior] = interior_values
        return full


class NodalVector:
    """Interior nodal values tied to their FemSpace; combining vectors from
    different spaces is an error."""

    __slots__ = ("values", "space")

    def __init__(self, values, space: FemSpace):
        values = np.asarray(values, dtype=float)
        if values.shape != (space.n_dof,):
            raise InvalidArgumentError(
                f"expected {space.n_dof} interior values, got shape {values.shape}"
            )
        self.values = values
        self.space = space

    def _check(self, other: "NodalVector"):
        if other.space is not self.space:
            raise SpaceMismatchError("nodal vectors belong to different spaces")

    def __add__(self, other):
        self._check(other)
        return NodalVector(self.values + other.values, self.space)

    def __sub__(self, other):
        self._check(other)
        return NodalVector(self.values - other.values, self.space)

    def __mul__(self, scalar):
        return NodalVector(self.values * float(scalar), self.space)

    __rmul__ = __mul__

    def __neg__(self):
        return NodalVector(-self.values, self.space)

    def copy(self) -> "NodalVector":
        return NodalVector(self.values.copy(), self.space)


class SymmetricSparseOperator:
    """Symmetric sparse matrix on interior dofs (CSR), with the sparsity
    pattern fixed by the mesh."""

    __slots__ = ("mat", "space")

    def __init__(self, mat: sp.csr_matrix, space: FemSpace):
        self.mat = mat
        self.space = space

    @property
    def shape(self):
        return self.mat.shape

    def __matmul__(self, vec: np.ndarray) -> np.ndarray:
        return self.mat @ vec

    def diagonal(self) -> np.ndarray:
        return self.mat.diagonal()

    def toarray(self) -> np.ndarray:
        return self.mat.toarray()

    def symmetry_defect(self) -> float:
        d = self.mat - self.mat.T
        return 0.0 if d.nnz == 0 else float(np.abs(d.data).max())


class CoefficientField:
    """Symmetric matrix-valued diffusion coefficient a(x, t) with declared
    ellipticity bounds [c0_lower, c0_upper] on its eigenvalues.

    The evaluator is vectorized: fn(points, t) with points of shape
    (n, dim) must return an (n, dim, dim) array that is exactly symmetric.
    """

    def __init__(self, dim, fn, c0_lower, c0_upper, time_dependent=True, name="custom"):
        if dim not in (1, 2):
            raise InvalidArgumentError(f"dimension must be 1 or 2, got {dim}")
        if not (0 < c0_lower <= c0_upper):
            raise InvalidArgumentError(
                f"need 0 < c0_lower <= c0_upper, got [{c0_lower}, {c0_upper}]"
            )
        self.dim = dim
        self._fn = fn
        self.c0_lower = float(c0_lower)
        self.c0_upper = float(c0_upper)
        self.time_dependent = bool(time_dependent)
        self.name = name

    @classmethod
    def constant(cls, c: float, dim: int) -> "CoefficientField":
        if c <= 0:
            raise InvalidArgumentError(f"constant diffusivity must be positive, got {c}")
        c = float(c)

        def fn(points, t):
            n = points.shape[0]
            out = np.zeros((n, dim, dim))
            for d in range(dim):
                out[:, d, d] = c
            return out

        return cls(dim, fn, c, c, time_dependent=False, name=f"const:{c:g}")

    @classmethod
    def isotropic(cls, scalar_fn, dim, c0_lower, c0_upper, time_dependent=True, name="scalar"):
        """Scalar coefficient a(x,t) applied as a(x,t) * identity."""

        def fn(points, t):
            vals = np.asarray(scalar_fn(points, t), dtype=float)
            n = points.shape[0]
            out = np.zeros((n, dim, dim))
            for d in range(dim):
                out[:, d, d] = vals
            return out

        return cls(dim, fn, c0_lower, c0_upper, time_dependent, name)

    @classmethod
    def matrix2d(cls, a11, a12, a22, c0_lower, c0_upper, time_dependent=True, name="matrix"):
        """Build a symmetric 2x2 field from entry functions of (x, y, t);
        the off-diagonal entry is shared so symmetry holds exactly."""

        def fn(points, t):
            x = points[:, 0]
            y = points[:, 1]
            off = np.broadcast_to(np.asarray(a12(x, y, t), dtype=float), x.shape)
            out = np.empty((points.shape[0], 2, 2))
            out[:, 0, 0] = a11(x, y, t)
            out[:, 0, 1] = off
            out[:, 1, 0] = off
            out[:, 1, 1] = a22(x, y, t)
            return out

        return cls(2, fn, c0_lower, c0_upper, time_dependent, name)

    def __call__(self, points: np.ndarray, t: float) -> np.ndarray:
        return self._fn(np.asarray(points, dtype=float), float(t))

    def frozen(self, t0: float) -> "CoefficientField":
        """Time-independent field a(x, t0) with the same declared bounds."""
        fn = self._fn
        return CoefficientField(
            self.dim,
            lambda points, t, fn=fn, t0=float(t0): fn(points, t0),
            self.c0_lower,
            self.c0_upper,
            time_dependent=False,
            name=f"{self.name}@t={t0:g}",
        )

    def validate(self, space: FemSpace, times) -> None:
        """Sweep every quadrature point of the space at the given times and
        verify symmetry and the declared eigenvalue bounds."""
        for t in np.atleast_1d(times):
            _checked_eval(self, space, float(t))


def _checked_eval(coeff: CoefficientField, space: FemSpace, t: float) -> np.ndarray:
    """Evaluate the coefficient at all quadrature points at time t, raising
    CoefficientBoundsError (naming the worst point) on any violation."""
    pts = space.quad_points.reshape(-1, space.dim)
    a = coeff(pts, t)
    if a.shape != (pts.shape[0], space.dim, space.dim):
        raise InvalidArgumentError(
            f"coefficient returned shape {a.shape}, expected {(pts.shape[0], space.dim, space.dim)}"
        )
    if space.dim == 1:
        lmin = a[:, 0, 0]
        lmax = lmin
    else:
        if not np.array_equal(a[:, 0, 1], a[:, 1, 0]):
            k = int(np.argmax(a[:, 0, 1] != a[:, 1, 0]))
            raise CoefficientBoundsError(
                f"coefficient not symmetric at x={tuple(pts[k])}, t={t}"
            )
        mean = 0.5 * (a[:, 0, 0] + a[:, 1, 1])
        radius = np.sqrt(0.25 * (a[:, 0, 0] - a[:, 1, 1]) ** 2 + a[:, 0, 1] ** 2)
        lmin = mean - radius
        lmax = mean + radius
    slack = 1e-12 * max(1.0, coeff.c0_upper)
    bad_low = lmin < coeff.c0_lower - slack
    bad_high = lmax > coeff.c0_upper + slack
    if bad_low.any() or bad_high.any():
        if bad_low.any():
            k = int(np.argmin(lmin))
            val, side = lmin[k], "below c0_lower"
        else:
            k = int(np.argmax(lmax))
            val, side = lmax[k], "above c0_upper"
        raise CoefficientBoundsError(
            f"ellipticity violated {side} at quadrature point x={tuple(pts[k])}, "
            f"t={t}: eigenvalue {val} outside [{coeff.c0_lower}, {coeff.c0_upper}]"
        )
    return a.reshape(space.quad_points.shape[0], -1, space.dim, space.dim)


def build_space(dim: int, M: int) -> FemSpace:
    """Uniform P1 space with M interior nodes per axis (h = 1/(M+1))."""
    return FemSpace(UniformMesh(dim, M))


def _assemble_mass_matrix(space: FemSpace) -> sp.csr_matrix:
    mesh = space.mesh
    n_loc = mesh.elements.shape[1]
    if mesh.dim == 1:
        local = mesh.h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    else:
        local = mesh.element_measure / 12.0 * np.array(
            [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]
        )
    data = np.tile(local.ravel(), mesh.n_elements)
    rows = np.repeat(mesh.elements, n_loc, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, n_loc)).ravel()
    full = sp.coo_matrix((data, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    return full[mesh.interior][:, mesh.interior].tocsr()


def assemble_mass(space: FemSpace) -> SymmetricSparseOperator:
    """Interior mass matrix M_ij = int phi_i phi_j; exact for P1."""
    return SymmetricSparseOperator(space._mass.copy(), space)


def _stiffness_scatter(space: FemSpace):
    # cached (rows, cols, keep-mask) for interior-interior local pairs
    if space._stiffness_pattern is None:
        mesh = space.mesh
        n_loc = mesh.elements.shape[1]
        dofs = mesh.dof_of_node[mesh.elements]  # (n_el, n_loc)
        rows = np.repeat(dofs, n_loc, axis=1).ravel()
        cols = np.tile(dofs, (1, n_loc)).ravel()
        keep = (rows >= 0) & (cols >= 0)
        space._stiffness_pattern = (rows[keep], cols[keep], keep)
    return space._stiffness_pattern


def assemble_stiffness(space: FemSpace, coeff: CoefficientField, t: float) -> SymmetricSparseOperator:
    """Interior stiffness matrix of the bilinear form
    (a(.,t) grad u, grad v), coefficient evaluated at the per-element
    quadrature points at time t (exact when a is element-wise linear)."""
    if coeff.dim != space.dim:
        raise InvalidArgumentError(
            f"coefficient dimension {coeff.dim} does not match space dimension {space.dim}"
        )
    a = _checked_eval(coeff, space, t)  # (n_el, n_q, dim, dim)
    abar = np.einsum("eq,eqij->eij", space.quad_weights, a)
    local = np.einsum("eid,edc,ejc->eij", space.gradients, abar, space.gradients)
    rows, cols, keep = _stiffness_scatter(space)
    data = local.reshape(space.mesh.n_elements, -1).ravel()[keep]
    n = space.n_dof
    mat = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    return SymmetricSparseOperator(mat, space)


def assemble_load(space: FemSpace, f) -> np.ndarray:
    """Interior load vector b_i = int f phi_i by the element quadrature.

    f is called as f(x) in 1D / f(x, y) in 2D with coordinate arrays.
    """
    vals = _eval_field(f, space.quad_points.reshape(-1, space.dim), space.dim)
    vals = vals.reshape(space.quad_weights.shape)
    # weighted basis contribution per element node
    contrib = np.einsum("eq,qi->ei", space.quad_weights * vals, space.basis_at_quad)
    b_full = np.zeros(space.mesh.n_nodes)
    np.add.at(b_full, space.mesh.elements.ravel(), contrib.ravel())
    return b_full[space.mesh.interior]


def _eval_field(f, points: np.ndarray, dim: int) -> np.ndarray:
    if dim == 1:
        out = f(points[:, 0])
    else:
        out = f(points[:, 0], points[:, 1])
    return np.broadcast_to(np.asarray(out, dtype=float), (points.shape[0],)).copy()


def mass_cg_solve(space: FemSpace, b: np.ndarray, tol: float = _MASS_CG_TOL) -> np.ndarray:
    """Unpreconditioned CG solve of M x = b; the P1 mass matrix has O(1)
    condition number so this converges in a handful of iterations."""
    M = space._mass
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    for _ in range(10 * space.n_dof + 10):
        Mp = M @ p
        alpha = rr / float(p @ Mp)
        x += alpha * p
        r -= alpha * Mp
        rr_new = float(r @ r)
        if np.sqrt(rr_new) <= tol * bnorm:
            return x
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise NumericFailureError("mass matrix CG solve did not converge")


def l2_project(space: FemSpace, f) -> NodalVector:
    """L2 projection P_h f: solve M x = (f, phi_i) with CG to 1e-12."""
    b = assemble_load(space, f)
    return NodalVector(mass_cg_solve(space, b), space)


def l2_norm(space: FemSpace, v: NodalVector) -> float:
    """Discrete L2 norm sqrt(v' M v) of the P1 function with values v."""
    if v.space is not space:
        raise SpaceMismatchError("vector does not belong to this space")
    return float(np.sqrt(max(v.values @ (space._mass @ v.values), 0.0)))


def l2_error(space: FemSpace, v: NodalVector, exact) -> float:
    """Quadrature L2 norm of (v_h - exact) using the space's element rule."""
    if v.space is not space:
        raise SpaceMismatchError("vector does not belong to this space")
    full = space.full_values(v.values)
    vh = np.einsum("ei,qi->eq", full[space.mesh.elements], space.error_basis)
    ex = _eval_field(exact, space.error_quad_points.reshape(-1, space.dim), space.dim)
    diff2 = (vh - ex.reshape(vh.shape)) ** 2
    return float(np.sqrt((space.error_quad_weights * diff2).sum()))


def evaluate_at_points(space: FemSpace, v: NodalVector, points: np.ndarray) -> np.ndarray:
    """Evaluate the P1 function with interior values v at arbitrary points
    of the closed domain by element-wise linear interpolation."""
    if v.space is not space:
        raise SpaceMismatchError("vector does not belong to this space")
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    full = space.full_values(v.values)
    h = space.h
    n_cell = space.mesh.M + 1
    if space.dim == 1:
        x = np.clip(pts[:, 0], 0.0, 1.0)
        i = np.minimum((x / h).astype(int), n_cell - 1)
        xi = x / h - i
        return full[i] * (1.0 - xi) + full[i + 1] * xi
    n_axis = space.mesh.M + 2
    x = np.clip(pts[:, 0], 0.0, 1.0)
    y = np.clip(pts[:, 1], 0.0, 1.0)
    cx = np.minimum((x / h).astype(int), n_cell - 1)
    cy = np.minimum((y / h).astype(int), n_cell - 1)
    X = x / h - cx
    Y = y / h - cy
    ll = cy * n_axis + cx
    lr = ll + 1
    ul = ll + n_axis
    ur = ul + 1
    lower = X >= Y
    out = np.where(
        lower,
        full[ll] * (1.0 - X) + full[lr] * (X - Y) + full[ur] * Y,
        full[ll] * (1.0 - Y) + full[ur] * X + full[ul] * (Y - X),
    )
    return out
