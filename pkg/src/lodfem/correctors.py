"""Patch-local corrector problems solved through a dense Schur complement.

For every coarse cell K_l the correctors of its four coarse hats solve the
saddle-point system

    [A_l  C_lᵀ] [w]   [r]
    [C_l   0  ] [λ] = [0]

on the active fine nodes of the patch U_k(K_l).  The solutions are scattered
into the global corrector matrix Q_h in ascending cell order.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import AssembledForms, _side_edges, cell_values
from .grid import SIDES, Patch, TwoScaleMesh, build_patch
from .sparse import Factorization, as_csr, dense_inverse, gather_submatrix

SADDLE_TOL = 1e-8


class DegeneratePatchError(ValueError):
    pass


class RankDeficiencyError(RuntimeError):
    pass


class PatchSolveError(RuntimeError):
    pass


@dataclass
class SchurCache:
    factor: Factorization
    C: sp.csr_matrix
    Y: np.ndarray  # A_l^{-1} C_lᵀ, one column per active coarse node
    S: np.ndarray
    S_inv: np.ndarray
    # detail space of the patch is {0}; every corrector vanishes
    trivial: bool = False

    @property
    def n_fine(self) -> int:
        return self.Y.shape[0]

    @property
    def n_coarse(self) -> int:
        return self.Y.shape[1]


def local_system(patch: Patch, A_h, C_h) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    if patch.n_fine == 0 or patch.n_coarse == 0:
        raise DegeneratePatchError(f"patch of cell {patch.ell} has an empty active node set")
    A_l = gather_submatrix(A_h, patch.active_fine_nodes, patch.active_fine_nodes)
    C_l = gather_submatrix(C_h, patch.active_coarse_nodes, patch.active_fine_nodes)
    return A_l, C_l


def _element_operator(mesh: TwoScaleMesh, ell: int, blocks: np.ndarray):
    """Sum of the fine element blocks inside K_l on the fine nodes of K_l."""
    nodes = mesh.fine_nodes_in_coarse(ell)
    cells = mesh.fine_cells_in_coarse(ell)
    loc = np.searchsorted(nodes, mesh.cell_nodes("fine")[cells])
    n = nodes.size
    AK = np.zeros((n, n))
    for c in range(cells.size):
        AK[np.ix_(loc[c], loc[c])] += blocks[cells[c]]
    return nodes, AK


def _active_columns(patch: Patch, nodes: np.ndarray):
    """Positions of ``nodes`` inside the active list, and which nodes are active."""
    pos = np.searchsorted(patch.active_fine_nodes, nodes)
    pos = np.minimum(pos, max(patch.n_fine - 1, 0))
    hit = patch.active_fine_nodes[pos] == nodes if patch.n_fine else np.zeros(nodes.size, bool)
    return pos, hit


def local_rhs(patch: Patch, mesh: TwoScaleMesh, blocks: np.ndarray, P, BH: np.ndarray) -> np.ndarray:
    """Rows −(a_K(Φ_{p_i}, φ_j)) over the active fine nodes, masked by B^H."""
    nodes, AK = _element_operator(mesh, patch.ell, blocks)
    p = patch.element_coarse_nodes
    PK = sp.csr_matrix(P)[p][:, nodes].toarray()
    full = -(BH[p][:, None] * (PK @ AK))
    pos, hit = _active_columns(patch, nodes)
    r = np.zeros((p.size, patch.n_fine))
    r[:, pos[hit]] = full[:, hit]
    return r


def _symmetric_rank(S: np.ndarray) -> int:
    ev = np.linalg.eigvalsh(S)
    top = max(ev.max(), 0.0)
    return int(np.sum(ev > 1e-10 * top)) if top > 0 else 0


def schur_precompute(A_l, C_l, name: str = "patch", strict: bool = True) -> SchurCache:
    """Factorize A_l and form Y = A_l⁻¹C_lᵀ, S = C_l Y and S⁻¹.

    When S is singular but rank(S) equals the number of fine unknowns, the
    constraints alone force w = 0 and the cache is flagged trivial.  Other
    rank defects raise unless ``strict`` is off, which selects a
    pseudo-inverse.
    """
    factor = Factorization(A_l)
    C_l = sp.csr_matrix(C_l)
    n_H, n_h = C_l.shape
    Y = factor.solve(C_l.T.toarray())
    if Y.ndim == 1:
        Y = Y[:, None]
    S = C_l @ Y
    S = 0.5 * (S + S.T)
    trivial = False
    try:
        if n_H >= n_h:
            # as many constraints as unknowns: check for a trivial kernel first
            raise sla.LinAlgError("constraints may fix every unknown")
        sla.cho_factor(S)
        S_inv = dense_inverse(S)
    except sla.LinAlgError:
        rank = _symmetric_rank(S)
        if rank == n_h:
            trivial = True
            S_inv = np.zeros_like(S)
        elif strict:
            raise RankDeficiencyError(
                f"{name}: Schur complement of size {n_H} has rank {rank} "
                f"with {n_h} fine unknowns"
            )
        else:
            S_inv = np.linalg.pinv(S, hermitian=True)
    S_inv = 0.5 * (S_inv + S_inv.T)
    return SchurCache(factor=factor, C=as_csr(C_l), Y=Y, S=S, S_inv=S_inv, trivial=trivial)


def solve_corrector(cache: SchurCache, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Saddle solution (w, λ) for one right-hand side or a column block."""
    rhs = np.asarray(rhs, dtype=float)
    if cache.trivial or not np.any(rhs):
        return np.zeros_like(rhs), np.zeros((cache.n_coarse,) + rhs.shape[1:])
    q = cache.factor.solve(rhs)
    lam = cache.S_inv @ (cache.C @ q)
    return q - cache.Y @ lam, lam


@dataclass
class SourceSpec:
    """Source functional F(v) = ∫η1 v + a(η2, v) + ∫_{Γ_N} η3 v."""

    eta1: object = None  # per fine cell samples, constant or callable
    eta2: np.ndarray | None = None  # fine nodal vector
    eta3: object = None  # boundary flux, constant or callable

    def is_zero(self) -> bool:
        return self.eta1 is None and self.eta2 is None and self.eta3 is None


def source_functional_on_cell(mesh: TwoScaleMesh, ell: int, Fs: SourceSpec, blocks: np.ndarray, bc):
    """F^s restricted to K_l, as a vector over the fine nodes of K_l."""
    nodes, AK = _element_operator(mesh, ell, blocks)
    out = np.zeros(nodes.size)
    if Fs.eta1 is not None:
        cells = mesh.fine_cells_in_coarse(ell)
        f = cell_values(mesh, Fs.eta1)[cells]
        hx, hy = mesh.h
        loc = np.searchsorted(nodes, mesh.cell_nodes("fine")[cells])
        np.add.at(out, loc, np.repeat(f[:, None] * (hx * hy / 4.0), 4, axis=1))
    if Fs.eta2 is not None:
        out += AK @ np.asarray(Fs.eta2)[nodes]
    if Fs.eta3 is not None:
        node_set = set(nodes.tolist())
        for side in SIDES:
            if bc.is_dirichlet(side):
                continue
            a, b, mx, my, length = _side_edges(mesh, side)
            inside = np.array([ai in node_set and bi in node_set for ai, bi in zip(a, b)], dtype=bool)
            if not inside.any():
                continue
            q = Fs.eta3
            qv = q(mx[inside], my[inside]) if callable(q) else np.full(inside.sum(), float(q))
            qv = np.broadcast_to(np.asarray(qv, dtype=float), (inside.sum(),))
            np.add.at(out, np.searchsorted(nodes, a[inside]), qv * length / 2)
            np.add.at(out, np.searchsorted(nodes, b[inside]), qv * length / 2)
    return nodes, out


def source_rhs(patch: Patch, mesh: TwoScaleMesh, Fs: SourceSpec, blocks: np.ndarray, bc) -> np.ndarray:
    """r̂_j = −F^s_K(φ_j) over the active fine nodes of the patch."""
    r = np.zeros(patch.n_fine)
    if Fs is None or Fs.is_zero():
        return r
    nodes, vals = source_functional_on_cell(mesh, patch.ell, Fs, blocks, bc)
    pos, hit = _active_columns(patch, nodes)
    r[pos[hit]] = -vals[hit]
    return r


@dataclass
class PatchResult:
    ell: int
    patch: Patch
    # rows: correctors of the four element coarse nodes, columns: active fine nodes
    w: np.ndarray
    w_source: np.ndarray | None
    n_solves: int
    trivial: bool = False
    cache: SchurCache | None = None


def _solve_patch(forms: AssembledForms, blocks, A_tot, ell: int, k: int,
                 source: SourceSpec | None, strict: bool, keep_cache: bool) -> PatchResult:
    mesh, bc = forms.mesh, forms.bc
    patch = build_patch(mesh, ell, k, bc)
    n_rows = patch.element_coarse_nodes.size
    if patch.n_fine == 0:
        return PatchResult(ell, patch, np.zeros((n_rows, 0)),
                           None if source is None else np.zeros(0), 0, trivial=True)
    if patch.n_coarse == 0 and source is None:
        # every coarse node of K_l is a Dirichlet node, so r_l vanishes
        return PatchResult(ell, patch, np.zeros((n_rows, patch.n_fine)), None, 0, trivial=True)
    A_l, C_l = local_system(patch, A_tot, forms.C)
    cache = schur_precompute(A_l, C_l, name=f"patch {ell}", strict=strict)
    r = local_rhs(patch, mesh, blocks, forms.P, forms.BH)
    w = np.zeros_like(r)
    if not cache.trivial:
        nz = np.flatnonzero(np.any(r != 0, axis=1))
        if nz.size:
            w[nz] = solve_corrector(cache, r[nz].T)[0].T
    w_src = None
    if source is not None:
        w_src = solve_corrector(cache, source_rhs(patch, mesh, source, blocks, bc))[0]
    return PatchResult(ell, patch, w, w_src, cache.factor.n_solves, cache.trivial,
                       cache if keep_cache else None)


def iterate_patches(forms: AssembledForms, k: int, source: SourceSpec | None = None,
                    threads: int = 1, strict: bool = False, keep_cache: bool = False,
                    cells=None) -> Iterator[PatchResult]:
    """Yield per-patch corrector solutions in ascending cell order."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    blocks = forms.element_blocks()
    A_tot = forms.A_total
    cells = range(forms.mesh.N_TH) if cells is None else cells

    def work(ell):
        try:
            return _solve_patch(forms, blocks, A_tot, ell, k, source, strict, keep_cache)
        except (RankDeficiencyError, DegeneratePatchError):
            raise
        except Exception as exc:
            raise PatchSolveError(f"patch {ell}: {exc}") from exc

    if threads <= 1:
        for ell in cells:
            yield work(ell)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield from pool.map(work, cells)


@dataclass
class CorrectorMatrix:
    Q: sp.csr_matrix
    q_hat: np.ndarray | None = None
    stats: list[tuple[int, int, int, int]] = field(default_factory=list)

    def write_stats(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["ell", "n_coarse", "n_fine", "solves"])
            wr.writerows(self.stats)


def compute_corrections(forms: AssembledForms, k: int, source: SourceSpec | None = None,
                        threads: int = 1, strict: bool = False,
                        callback: Callable[[PatchResult], None] | None = None) -> CorrectorMatrix:
    """Global corrector matrix Q_h and, if requested, the source corrector q̂."""
    mesh = forms.mesh
    rows, cols, vals = [], [], []
    q_hat = None if source is None else np.zeros(mesh.N_h)
    stats = []
    for res in iterate_patches(forms, k, source, threads, strict):
        if callback is not None:
            callback(res)
        p, af = res.patch.element_coarse_nodes, res.patch.active_fine_nodes
        stats.append((res.ell, res.patch.n_coarse, res.patch.n_fine, res.n_solves))
        nz = np.flatnonzero(np.any(res.w != 0, axis=1))
        for i in nz:
            rows.append(np.full(af.size, p[i]))
            cols.append(af)
            vals.append(res.w[i])
        if q_hat is not None and res.w_source is not None and af.size:
            q_hat[af] += res.w_source
    if rows:
        Q = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(mesh.N_H, mesh.N_h),
        )
    else:
        Q = sp.csr_matrix((mesh.N_H, mesh.N_h))
    Q = as_csr(Q)
    Q.eliminate_zeros()
    return CorrectorMatrix(Q=Q, q_hat=q_hat, stats=stats)
