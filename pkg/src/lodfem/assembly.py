"""Q1 element matrices, global assembly, transfer matrices and load vectors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .grid import (
    COARSE, FINE, SIDES, BoundarySpec, TwoScaleMesh, dirichlet_mask,
)
from .sparse import as_csr

# lexicographic tensor order (x fastest) -> counterclockwise local order
_LEX_TO_CCW = np.array([0, 1, 3, 2])

Field = Union[float, np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]
Density = Sequence[tuple[float, np.ndarray]]


def _k1(h: float) -> np.ndarray:
    return np.array([[1.0, -1.0], [-1.0, 1.0]]) / h


def _m1(h: float) -> np.ndarray:
    return np.array([[2.0, 1.0], [1.0, 2.0]]) * h / 6.0


def _ccw(T: np.ndarray) -> np.ndarray:
    return T[np.ix_(_LEX_TO_CCW, _LEX_TO_CCW)]


def element_stiffness(kappa_t: float, hx: float, hy: float) -> np.ndarray:
    return kappa_t * _ccw(np.kron(_m1(hy), _k1(hx)) + np.kron(_k1(hy), _m1(hx)))


def element_mass(hx: float, hy: float) -> np.ndarray:
    return _ccw(np.kron(_m1(hy), _m1(hx)))


def assemble_global(mesh: TwoScaleMesh, blocks: np.ndarray, level: str = FINE) -> sp.csr_matrix:
    """Scatter one 4x4 block per cell into a global matrix."""
    blocks = np.asarray(blocks, dtype=float)
    nt = mesh.n_cells(level)
    if blocks.shape != (nt, 4, 4):
        raise ValueError(f"expected blocks of shape {(nt, 4, 4)}, got {blocks.shape}")
    cn = mesh.cell_nodes(level)
    rows = np.repeat(cn, 4, axis=1).ravel()
    cols = np.tile(cn, (1, 4)).ravel()
    n = mesh.n_nodes(level)
    return as_csr(sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)))


def cell_values(mesh: TwoScaleMesh, values: Field, level: str = FINE) -> np.ndarray:
    """Per-cell samples of a scalar, array or callable field at cell midpoints."""
    nt = mesh.n_cells(level)
    if callable(values):
        mid = mesh.cell_midpoints(level)
        out = np.asarray(values(mid[:, 0], mid[:, 1]), dtype=float)
        return np.broadcast_to(out, (nt,)).copy()
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.full(nt, float(arr))
    if arr.shape != (nt,):
        raise ValueError(f"field has {arr.size} values, mesh has {nt} cells")
    return arr


def stiffness_blocks(mesh: TwoScaleMesh, kappa: Field, level: str = FINE) -> np.ndarray:
    k = cell_values(mesh, kappa, level)
    if np.any(k <= 0):
        raise ValueError("coefficient must be positive")
    return k[:, None, None] * element_stiffness(1.0, *mesh.spacing(level))[None]


def assemble_stiffness(mesh: TwoScaleMesh, kappa: Field = 1.0, level: str = FINE) -> sp.csr_matrix:
    return assemble_global(mesh, stiffness_blocks(mesh, kappa, level), level)


def assemble_mass(mesh: TwoScaleMesh, level: str = FINE) -> sp.csr_matrix:
    nt = mesh.n_cells(level)
    Me = element_mass(*mesh.spacing(level))
    return assemble_global(mesh, np.broadcast_to(Me, (nt, 4, 4)), level)


# 1D Gauss rules on [0, 1]
def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _ref_basis(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Q1 basis values at the n x n tensor Gauss points and the point weights."""
    x, w = gauss01(n)
    X, Y = np.meshgrid(x, x, indexing="xy")
    W = np.outer(w, w)
    X, Y, W = X.ravel(), Y.ravel(), W.ravel()
    phi = np.column_stack([(1 - X) * (1 - Y), X * (1 - Y), X * Y, (1 - X) * Y])
    return phi, W


def values_at_gauss(mesh: TwoScaleMesh, u: np.ndarray, n: int) -> np.ndarray:
    """Fine nodal vector evaluated at n x n Gauss points of every fine cell."""
    phi, _ = _ref_basis(n)
    return np.asarray(u)[mesh.cell_nodes(FINE)] @ phi.T


def density_at_gauss(mesh: TwoScaleMesh, density: Density, n: int = 3) -> np.ndarray:
    rho = np.zeros((mesh.N_Th, n * n))
    for weight, u in density:
        rho += weight * values_at_gauss(mesh, u, n) ** 2
    return rho


def assemble_weighted_mass(
    mesh: TwoScaleMesh, weight: Field | None = None, density: Density | None = None
) -> sp.csr_matrix:
    """Mass matrix weighted by a per-cell constant or by a nodal density.

    ``density`` is a list of (w, u) pairs standing for sum w * u**2;
    entries are integrated with 3x3 Gauss, which is exact for Q1 data.
    """
    if (weight is None) == (density is None):
        raise ValueError("give exactly one of weight or density")
    hx, hy = mesh.h
    if weight is not None:
        wt = cell_values(mesh, weight)
        if np.any(wt < 0):
            raise ValueError("weights must be nonnegative")
        return assemble_global(mesh, wt[:, None, None] * element_mass(hx, hy)[None])
    if any(w < 0 for w, _ in density):
        raise ValueError("density weights must be nonnegative")
    phi, W = _ref_basis(3)
    rho = density_at_gauss(mesh, density, 3)
    blocks = np.einsum("tq,qm,qn->tmn", rho * (W * hx * hy), phi, phi)
    return assemble_global(mesh, blocks)


def integrate_power(mesh: TwoScaleMesh, u: np.ndarray, p: int, n: int = 4) -> float:
    """Integral of u**p over the domain with n x n Gauss per fine cell."""
    _, W = _ref_basis(n)
    hx, hy = mesh.h
    return float(np.sum((values_at_gauss(mesh, u, n) ** p) @ W) * hx * hy)


def cubic_load(mesh: TwoScaleMesh, u: np.ndarray, n: int = 3) -> np.ndarray:
    """Vector of integrals u**3 * phi_i (3x3 Gauss is exact for Q1 u)."""
    phi, W = _ref_basis(n)
    hx, hy = mesh.h
    vals = values_at_gauss(mesh, u, n) ** 3 * (W * hx * hy)
    contrib = vals @ phi
    out = np.zeros(mesh.N_h)
    np.add.at(out, mesh.cell_nodes(FINE), contrib)
    return out


def _hat_1d(nc: int, r: int) -> np.ndarray:
    I = np.arange(nc + 1)[:, None]
    i = np.arange(nc * r + 1)[None, :]
    return np.maximum(0, r - np.abs(i - I * r)) / r


def projection_matrix(mesh: TwoScaleMesh) -> sp.csr_matrix:
    """P[i, j] = coarse hat i evaluated at fine node j."""
    nx, ny = mesh.coarse_cells
    r = mesh.refine
    Px = sp.csr_matrix(_hat_1d(nx, r))
    Py = sp.csr_matrix(_hat_1d(ny, r))
    return as_csr(sp.kron(Py, Px))


def vertex_map(P: sp.csr_matrix) -> sp.csr_matrix:
    P = sp.csr_matrix(P)
    V = P.copy()
    V.data = (V.data == 1.0).astype(float)
    V.eliminate_zeros()
    return as_csr(V)


def constraint_matrix(P: sp.csr_matrix, M: sp.csr_matrix) -> sp.csr_matrix:
    return as_csr(P @ M)


def boundary_masks(mesh: TwoScaleMesh, bc: BoundarySpec) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals of the coarse and fine Dirichlet masks (1 off the Dirichlet boundary)."""
    BH = (~dirichlet_mask(mesh, COARSE, bc)).astype(float)
    Bh = (~dirichlet_mask(mesh, FINE, bc)).astype(float)
    return BH, Bh


def load_vector(mesh: TwoScaleMesh, f: Field) -> np.ndarray:
    """Midpoint-rule load: every fine cell gives f(mid) * area / 4 to its nodes."""
    fv = cell_values(mesh, f)
    hx, hy = mesh.h
    out = np.zeros(mesh.N_h)
    np.add.at(out, mesh.cell_nodes(FINE), np.repeat(fv[:, None] * (hx * hy / 4.0), 4, axis=1))
    return out


def _side_edges(mesh: TwoScaleMesh, side: str):
    """Fine boundary edges on one side: (node_a, node_b, mid_x, mid_y, length)."""
    nxp, nyp = mesh.node_shape(FINE)
    hx, hy = mesh.h
    d = mesh.domain
    if side in ("bottom", "top"):
        j = 0 if side == "bottom" else nyp - 1
        i = np.arange(nxp - 1)
        a, b = j * nxp + i, j * nxp + i + 1
        mx, my = d.x0 + (i + 0.5) * hx, np.full(i.size, d.y0 + j * hy)
        length = hx
    else:
        i = 0 if side == "left" else nxp - 1
        j = np.arange(nyp - 1)
        a, b = j * nxp + i, (j + 1) * nxp + i
        mx, my = np.full(j.size, d.x0 + i * hx), d.y0 + (j + 0.5) * hy
        length = hy
    return a, b, mx, my, length


def neumann_load(mesh: TwoScaleMesh, q, bc: BoundarySpec, sides: Sequence[str] | None = None) -> np.ndarray:
    """Edge load of q over the Neumann sides, midpoint sampled."""
    out = np.zeros(mesh.N_h)
    if q is None:
        return out
    if sides is None:
        sides = [s for s in SIDES if not bc.is_dirichlet(s)]
    for side in sides:
        a, b, mx, my, length = _side_edges(mesh, side)
        qv = q(mx, my) if callable(q) else np.full(mx.size, float(q))
        qv = np.broadcast_to(np.asarray(qv, dtype=float), mx.shape)
        np.add.at(out, a, qv * length / 2)
        np.add.at(out, b, qv * length / 2)
    return out


def dirichlet_extension(mesh: TwoScaleMesh, g, bc: BoundarySpec, P: sp.csr_matrix | None = None):
    """Coarse and fine Dirichlet extensions of boundary data g.

    g_H holds g on coarse Dirichlet nodes and zero elsewhere; g_h holds g on
    fine Dirichlet nodes and the coarse interpolant of g_H elsewhere.
    """
    if P is None:
        P = projection_matrix(mesh)
    gH = np.zeros(mesh.N_H)
    gh_fine = np.zeros(mesh.N_h)
    if g is None:
        return gH, gh_fine
    cD = dirichlet_mask(mesh, COARSE, bc)
    fD = dirichlet_mask(mesh, FINE, bc)
    XH = mesh.node_coords(COARSE)
    Xh = mesh.node_coords(FINE)
    gH[cD] = _point_eval(g, XH[cD])
    gh = P.T @ gH
    gh[fD] = _point_eval(g, Xh[fD])
    return gH, gh


def _point_eval(g, X: np.ndarray) -> np.ndarray:
    if callable(g):
        return np.broadcast_to(np.asarray(g(X[:, 0], X[:, 1]), dtype=float), (X.shape[0],))
    return np.full(X.shape[0], float(g))


def nodal_interpolant(mesh: TwoScaleMesh, fn, level: str = FINE) -> np.ndarray:
    return _point_eval(fn, mesh.node_coords(level))


@dataclass
class AssembledForms:
    mesh: TwoScaleMesh
    bc: BoundarySpec
    kappa: np.ndarray
    A_h: sp.csr_matrix
    M_h: sp.csr_matrix
    M_V: sp.csr_matrix
    P: sp.csr_matrix
    C: sp.csr_matrix
    BH: np.ndarray
    Bh: np.ndarray
    V: np.ndarray

    @property
    def A_total(self) -> sp.csr_matrix:
        """Stiffness plus potential mass, the form the correctors are built for."""
        return as_csr(self.A_h + self.M_V)

    def element_blocks(self) -> np.ndarray:
        """Per-fine-cell blocks of ``A_total``."""
        hx, hy = self.mesh.h
        return (self.kappa[:, None, None] * element_stiffness(1.0, hx, hy)[None]
                + self.V[:, None, None] * element_mass(hx, hy)[None])


def assemble_forms(mesh: TwoScaleMesh, bc: BoundarySpec, kappa: Field = 1.0, V: Field = 0.0) -> AssembledForms:
    kap = cell_values(mesh, kappa)
    pot = cell_values(mesh, V)
    if np.any(kap <= 0):
        raise ValueError("coefficient must be positive")
    if np.any(pot < 0):
        raise ValueError("potential must be nonnegative")
    M = assemble_mass(mesh)
    P = projection_matrix(mesh)
    BH, Bh = boundary_masks(mesh, bc)
    return AssembledForms(
        mesh=mesh, bc=bc, kappa=kap,
        A_h=assemble_stiffness(mesh, kap), M_h=M,
        M_V=assemble_weighted_mass(mesh, weight=pot),
        P=P, C=constraint_matrix(P, M), BH=BH, Bh=Bh, V=pot,
    )


def read_field(path) -> np.ndarray:
    """Per-cell field file: header ``nx ny`` then nx*ny values."""
    with open(path) as fh:
        nx, ny = (int(t) for t in fh.readline().split())
        vals = np.array(fh.read().split(), dtype=float)
    if vals.size != nx * ny:
        raise ValueError(f"field file declares {nx}x{ny} cells but holds {vals.size} values")
    return vals


def write_field(path, values: np.ndarray, shape: tuple[int, int]) -> None:
    values = np.asarray(values, dtype=float)
    if values.size != shape[0] * shape[1]:
        raise ValueError("field size does not match its shape")
    with open(path, "w") as fh:
        fh.write(f"{shape[0]} {shape[1]}\n")
        fh.write("\n".join(f"{v:.17e}" for v in values))
        fh.write("\n")
