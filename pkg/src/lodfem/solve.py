"""Global LOD systems: symmetric Galerkin, Petrov-Galerkin streaming and the
boundary-value pipeline with source correctors."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import (
    AssembledForms, cell_values, dirichlet_extension, load_vector, neumann_load,
)
from .correctors import CorrectorMatrix, SourceSpec, compute_corrections, iterate_patches
from .sparse import Factorization, as_csr


class SolverError(RuntimeError):
    pass


def mask_system(A, mask: np.ndarray) -> sp.csr_matrix:
    """Zero the rows and columns where ``mask`` is 0 and put 1 on their diagonal."""
    D = sp.diags(mask)
    return as_csr(D @ sp.csr_matrix(A) @ D + sp.diags(1.0 - mask))


def galerkin_product(A, P, Q=None) -> sp.csr_matrix:
    """(P+Q) A (P+Q)ᵀ, symmetrized."""
    G = sp.csr_matrix(P) if Q is None else as_csr(P + Q)
    X = as_csr(G @ sp.csr_matrix(A) @ G.T)
    return as_csr(0.5 * (X + X.T))


def assemble_lod(A_h, P, Q, BH: np.ndarray) -> sp.csr_matrix:
    return mask_system(galerkin_product(A_h, P, Q), BH)


def lod_rhs(f_h: np.ndarray, P, Q, BH: np.ndarray) -> np.ndarray:
    G = sp.csr_matrix(P) if Q is None else as_csr(P + Q)
    return BH * (G @ f_h)


def prolongate(u_H: np.ndarray, P, Q=None) -> np.ndarray:
    out = sp.csr_matrix(P).T @ u_H
    if Q is not None:
        out = out + sp.csr_matrix(Q).T @ u_H
    return out


def spd_solve(A, b: np.ndarray) -> np.ndarray:
    try:
        fac = Factorization(A)
    except Exception as exc:
        raise SolverError(str(exc)) from exc
    return fac.solve(b)


@dataclass
class LODSystem:
    A_lod: sp.csr_matrix
    f_lod: np.ndarray
    P: sp.csr_matrix
    Q: sp.csr_matrix


def build_lod_system(A_h, P, Q, BH, f_h, rhs: str = "corrected") -> LODSystem:
    if rhs not in ("plain", "corrected"):
        raise ValueError(f"unknown rhs mode {rhs!r}")
    f = lod_rhs(f_h, P, Q if rhs == "corrected" else None, BH)
    return LODSystem(assemble_lod(A_h, P, Q, BH), f, as_csr(P), as_csr(Q))


def solve_lod(system: LODSystem) -> tuple[np.ndarray, np.ndarray]:
    u_H = spd_solve(system.A_lod, system.f_lod)
    return u_H, prolongate(u_H, system.P, system.Q)


def fine_solve(A_h, f_h: np.ndarray, Bh: np.ndarray) -> np.ndarray:
    """Reference fine FEM solution with homogeneous Dirichlet values."""
    return spd_solve(mask_system(A_h, Bh), Bh * f_h)


@dataclass
class LODResult:
    u_H: np.ndarray
    u_h: np.ndarray
    correctors: CorrectorMatrix


def lod_poisson(forms: AssembledForms, f, k: int, rhs: str = "corrected", threads: int = 1) -> LODResult:
    """Homogeneous Dirichlet problem through the symmetric LOD."""
    f_h = load_vector(forms.mesh, f)
    cm = compute_corrections(forms, k, threads=threads)
    sysm = build_lod_system(forms.A_total, forms.P, cm.Q, forms.BH, f_h, rhs)
    u_H, u_h = solve_lod(sysm)
    return LODResult(u_H, u_h, cm)


@dataclass
class PGResult:
    u_H: np.ndarray
    A_pg: np.ndarray
    f_H: np.ndarray


def pg_assemble(forms: AssembledForms, k: int, f_h: np.ndarray | None = None,
                rhs: str = "plain", threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Petrov-Galerkin matrix B P A (P+Q)ᵀ B built patch by patch.

    Each patch adds its element-local coarse stiffness and the contribution
    of its correctors, which are then dropped; Q_h is never stored.
    """
    if rhs not in ("plain", "corrected"):
        raise ValueError(f"unknown rhs mode {rhs!r}")
    mesh = forms.mesh
    A = forms.A_total
    P = forms.P
    NH, Nh = mesh.N_H, mesh.N_h
    Apg = np.zeros((NH, NH))
    Qf = np.zeros(NH)
    blocks = forms.element_blocks()
    Pcsr = sp.csr_matrix(P)
    for res in iterate_patches(forms, k, threads=threads):
        ell = res.ell
        p = res.patch.element_coarse_nodes
        nodes = mesh.fine_nodes_in_coarse(ell)
        cells = mesh.fine_cells_in_coarse(ell)
        # coarse element stiffness on K_l only
        PK = Pcsr[p][:, nodes].toarray()
        loc = np.searchsorted(nodes, mesh.cell_nodes("fine")[cells])
        AK = np.zeros((nodes.size, nodes.size))
        for c in range(cells.size):
            AK[np.ix_(loc[c], loc[c])] += blocks[cells[c]]
        Apg[np.ix_(p, p)] += PK @ AK @ PK.T
        nz = np.flatnonzero(np.any(res.w != 0, axis=1))
        if nz.size:
            af = res.patch.active_fine_nodes
            W = np.zeros((Nh, nz.size))
            W[af] = res.w[nz].T
            Apg[:, p[nz]] += Pcsr @ (A @ W)
            if f_h is not None and rhs == "corrected":
                Qf[p[nz]] += res.w[nz] @ f_h[af]
    BH = forms.BH
    Apg = BH[:, None] * Apg * BH[None, :]
    Apg[np.diag_indices(NH)] += 1.0 - BH
    f_H = np.zeros(NH) if f_h is None else BH * (Pcsr @ f_h + Qf)
    return Apg, f_H


def pg_assemble_and_solve(forms: AssembledForms, k: int, f_h: np.ndarray,
                          rhs: str = "plain", threads: int = 1) -> PGResult:
    Apg, f_H = pg_assemble(forms, k, f_h, rhs, threads)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            lu = sla.lu_factor(Apg, check_finite=True)
        if np.any(np.abs(np.diag(lu[0])) <= np.finfo(float).eps * np.abs(Apg).max()):
            raise sla.LinAlgError("singular pivot")
        u_H = sla.lu_solve(lu, f_H)
    except (sla.LinAlgError, sla.LinAlgWarning, ValueError) as exc:
        lam_min = np.linalg.eigvalsh(0.5 * (Apg + Apg.T))[0]
        raise SolverError(
            f"Petrov-Galerkin system is singular ({exc}); smallest eigenvalue of the "
            f"symmetric part is {lam_min:.3e}"
        ) from exc
    return PGResult(u_H, Apg, f_H)


@dataclass
class BVPResult:
    u: np.ndarray
    u_H: np.ndarray
    q_hat: np.ndarray
    g_h: np.ndarray
    correctors: CorrectorMatrix


def bvp_load(forms: AssembledForms, f, g, q):
    """Fine load of F(v) = ∫f v − a(g_h, v) + ∫_{Γ_N} q v, with g_H and g_h."""
    mesh = forms.mesh
    gH, gh = dirichlet_extension(mesh, g, forms.bc, forms.P)
    F = load_vector(mesh, 0.0 if f is None else f) - forms.A_total @ gh
    F = F + neumann_load(mesh, q, forms.bc)
    return F, gH, gh


def source_spec(forms: AssembledForms, f, gh: np.ndarray, q, mode: str) -> SourceSpec | None:
    if mode == "none":
        return None
    if mode not in ("boundary", "total"):
        raise ValueError(f"unknown source corrector mode {mode!r}")
    spec = SourceSpec(
        eta1=cell_values(forms.mesh, f) if (mode == "total" and f is not None) else None,
        eta2=-gh if np.any(gh) else None,
        eta3=q,
    )
    return None if spec.is_zero() else spec


def solve_bvp(forms: AssembledForms, f, g, q, k: int, fs_mode: str = "boundary",
              rhs: str = "corrected", threads: int = 1) -> BVPResult:
    """Mixed boundary value problem through the LOD with source correctors.

    The returned fine vector is the physical solution (P+Q)ᵀU − q̂ + g_h.
    """
    mesh = forms.mesh
    F, _, gh = bvp_load(forms, f, g, q)
    spec = source_spec(forms, f, gh, q, fs_mode)
    cm = compute_corrections(forms, k, source=spec, threads=threads)
    q_hat = cm.q_hat if cm.q_hat is not None else np.zeros(mesh.N_h)
    sysm = build_lod_system(forms.A_total, forms.P, cm.Q, forms.BH, F + forms.A_total @ q_hat, rhs)
    u_H, u_ms = solve_lod(sysm)
    return BVPResult(u_ms - q_hat + gh, u_H, q_hat, gh, cm)


def fine_bvp(forms: AssembledForms, f, g, q) -> np.ndarray:
    F, _, gh = bvp_load(forms, f, g, q)
    return fine_solve(forms.A_total, F, forms.Bh) + gh
