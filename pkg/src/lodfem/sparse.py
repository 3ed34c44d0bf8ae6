"""Sparse kernel: CSR helpers, SPD factorization and a generalized eigensolver.

Matrices are plain ``scipy.sparse.csr_matrix`` objects in canonical form
(sorted indices, no duplicates).  Restriction operators are realized as
index gathers and never materialized.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SparseMatrix = sp.csr_matrix


class FactorizationError(RuntimeError):
    pass


class EigenConvergenceError(RuntimeError):
    def __init__(self, msg: str, residuals: np.ndarray | None = None):
        super().__init__(msg)
        self.residuals = residuals


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR copy: duplicates summed, column indices sorted."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def _check_index(idx: Sequence[int], n: int, name: str) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise ValueError(f"{name} out of range for dimension {n}")
    if idx.size > 1 and np.any(np.diff(idx) <= 0):
        raise ValueError(f"{name} must be strictly increasing")
    return idx


def gather_submatrix(A, rows: Sequence[int], cols: Sequence[int]) -> sp.csr_matrix:
    """``A[rows][:, cols]``, the algebraic form of ``R A R'ᵀ``."""
    A = sp.csr_matrix(A)
    r = _check_index(rows, A.shape[0], "rows")
    c = _check_index(cols, A.shape[1], "cols")
    return as_csr(A[r][:, c])


def restriction_matrix(idx: Sequence[int], n: int) -> sp.csr_matrix:
    """Explicit 0/1 restriction matrix, used only as a test oracle."""
    idx = _check_index(idx, n, "idx")
    m = len(idx)
    return sp.csr_matrix((np.ones(m), (np.arange(m), idx)), shape=(m, n))


class Factorization:
    """Reusable sparse LU of a symmetric positive definite matrix."""

    def __init__(self, A, check_symmetry: bool = True):
        A = sp.csc_matrix(A, dtype=float)
        n, m = A.shape
        if n != m:
            raise FactorizationError(f"matrix is not square: {A.shape}")
        if n == 0:
            raise FactorizationError("empty matrix")
        if check_symmetry:
            asym = abs(A - A.T).max() if A.nnz else 0.0
            scale = abs(A).max() if A.nnz else 0.0
            if asym > 1e-12 * max(scale, 1.0):
                raise FactorizationError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
        try:
            self._lu = spla.splu(
                A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise FactorizationError(f"factorization broke down: {exc}") from exc
        piv = self._lu.U.diagonal()
        if np.any(piv <= 0) or not np.all(np.isfinite(piv)):
            bad = int(np.argmin(piv))
            raise FactorizationError(
                f"matrix is not positive definite: pivot {bad} = {piv[bad]:.3e} "
                f"(min |pivot| {np.min(np.abs(piv)):.3e})"
            )
        self.shape = A.shape
        self.n_solves = 0

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        self.n_solves += 1 if b.ndim == 1 else b.shape[1]
        return self._lu.solve(b)


def spd_factorize(A) -> Factorization:
    return Factorization(A)


def dense_inverse(S: np.ndarray) -> np.ndarray:
    return sla.inv(np.asarray(S, dtype=float))


@dataclass
class EigOptions:
    n_ev: int
    tol: float = 1e-8
    max_iter: int = 500
    shift: float = 0.0
    seed: int = 0
    # "auto" picks dense eigh for small problems and subspace iteration otherwise
    method: str = "auto"
    block: int | None = None
    dense_max: int = 800

    def __post_init__(self):
        if self.n_ev < 1:
            raise ValueError("n_ev must be at least 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class EigResult:
    lambdas: np.ndarray
    vectors: np.ndarray
    norm: str = "M"
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0


def _residuals(A, M, lam, V):
    AV = A @ V
    R = AV - (M @ V) * lam
    return np.linalg.norm(R, axis=0) / np.maximum(np.linalg.norm(AV, axis=0), np.finfo(float).tiny)


def _m_normalize(M, V):
    norms = np.sqrt(np.einsum("ij,ij->j", V, M @ V))
    return V / norms


def _dense_eig(A, M, opts: EigOptions) -> EigResult:
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
    Md = M.toarray() if sp.issparse(M) else np.asarray(M)
    lam, V = sla.eigh(Ad, Md, subset_by_index=[0, opts.n_ev - 1])
    return EigResult(lam, V, residuals=_residuals(Ad, Md, lam, V), iterations=1)


def _arpack_eig(A, M, opts: EigOptions) -> EigResult:
    rng = np.random.default_rng(opts.seed)
    v0 = rng.standard_normal(A.shape[0])
    lam, V = spla.eigsh(
        sp.csc_matrix(A), k=opts.n_ev, M=sp.csc_matrix(M), sigma=opts.shift,
        which="LM", v0=v0, tol=opts.tol * 1e-2, maxiter=opts.max_iter * A.shape[0],
    )
    order = np.argsort(lam)
    lam, V = lam[order], _m_normalize(M, V[:, order])
    return EigResult(lam, V, residuals=_residuals(A, M, lam, V), iterations=0)


def _subspace_eig(A, M, opts: EigOptions) -> EigResult:
    """Shift-invert subspace iteration with Rayleigh-Ritz.

    Every few sweeps the shift moves just below the lowest Ritz value.  A
    candidate is accepted only if A - σM still factorizes with positive
    pivots, so no wanted eigenvalue ever lies below the shift.
    """
    n = A.shape[0]
    p = min(opts.block or opts.n_ev + 5, n)
    sigma = opts.shift
    lu = Factorization(as_csr(A - sigma * M))
    rng = np.random.default_rng(opts.seed)
    X = rng.standard_normal((n, p))
    res = np.full(opts.n_ev, np.inf)
    for it in range(1, opts.max_iter + 1):
        Y = np.linalg.qr(lu.solve(M @ X))[0]
        AY, MY = A @ Y, M @ Y
        Ar = Y.T @ AY
        Mr = Y.T @ MY
        theta, Z = sla.eigh(0.5 * (Ar + Ar.T), 0.5 * (Mr + Mr.T))
        X = Y @ Z
        lam = theta[: opts.n_ev]
        AX = AY @ Z[:, : opts.n_ev]
        R = AX - (MY @ Z[:, : opts.n_ev]) * lam
        res = np.linalg.norm(R, axis=0) / np.linalg.norm(AX, axis=0)
        if np.all(res <= opts.tol):
            return EigResult(lam.copy(), X[:, : opts.n_ev], residuals=res, iterations=it)
        if it % 5 == 0:
            spread = max(theta[opts.n_ev - 1] - theta[0], 1e-8 * abs(theta[0]))
            for gamma in (0.05, 0.25, 1.0):
                cand = theta[0] - gamma * spread
                if cand <= sigma:
                    break
                try:
                    lu = Factorization(as_csr(A - cand * M), check_symmetry=False)
                except FactorizationError:
                    continue
                sigma = cand
                break
    raise EigenConvergenceError(
        f"subspace iteration did not converge in {opts.max_iter} iterations "
        f"(max residual {res.max():.3e})", residuals=res,
    )


def generalized_eig_smallest(A, M, opts: EigOptions) -> EigResult:
    """Smallest ``n_ev`` eigenpairs of the symmetric pencil (A, M).

    Vectors are M-orthonormal and eigenvalues ascending.
    """
    n = A.shape[0]
    if opts.n_ev > n:
        raise ValueError(f"n_ev={opts.n_ev} exceeds dimension {n}")
    method = opts.method
    if method == "auto":
        method = "dense" if n <= opts.dense_max else "subspace"
    if method == "dense":
        out = _dense_eig(A, M, opts)
    elif method == "arpack":
        out = _arpack_eig(sp.csr_matrix(A), sp.csr_matrix(M), opts)
    elif method == "subspace":
        out = _subspace_eig(sp.csr_matrix(A), sp.csr_matrix(M), opts)
    else:
        raise ValueError(f"unknown eigensolver method {opts.method!r}")
    if np.any(out.residuals > max(opts.tol, 1e-8) * 10):
        raise EigenConvergenceError(
            f"eigenpairs did not meet tolerance (max residual {out.residuals.max():.3e})",
            residuals=out.residuals,
        )
    return out


def write_matrix_text(path, A) -> None:
    """Debug dump: header ``rows cols nnz`` followed by 0-based triplets."""
    A = sp.coo_matrix(as_csr(A))
    with open(path, "w") as fh:
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i} {j} {v:.17e}\n")


def read_matrix_text(path) -> sp.csr_matrix:
    with open(path) as fh:
        nrows, ncols, nnz = (int(t) for t in fh.readline().split())
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    return as_csr(sp.coo_matrix(
        (data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(nrows, ncols)
    ))
