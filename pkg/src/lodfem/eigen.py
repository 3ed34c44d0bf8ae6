"""LOD eigensolvers: linear eigenproblem, two-grid post-processing and the
optimal damping iteration for Gross-Pitaevskii ground states."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import AssembledForms, assemble_weighted_mass, cubic_load, integrate_power
from .grid import TwoScaleMesh
from .solve import galerkin_product, mask_system, spd_solve
from .sparse import EigOptions, EigResult, as_csr, generalized_eig_smallest


def lod_mass(M_h, P, Q, BH: np.ndarray) -> sp.csr_matrix:
    """B (P+Q) M (P+Q)ᵀ B with the Dirichlet rows and columns zeroed."""
    D = sp.diags(BH)
    return as_csr(D @ galerkin_product(M_h, P, Q) @ D)


@dataclass
class Basis:
    """Rows of G span the discrete space; fine vectors are Gᵀc."""

    G: sp.csr_matrix
    # global index (coarse or fine) of every row of G
    index: np.ndarray
    n_global: int

    def to_fine(self, c: np.ndarray) -> np.ndarray:
        return self.G.T @ c

    def to_global(self, c: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_global,) + np.shape(c)[1:])
        out[self.index] = c
        return out

    def project(self, A) -> sp.csr_matrix:
        X = as_csr(self.G @ sp.csr_matrix(A) @ self.G.T)
        return as_csr(0.5 * (X + X.T))


def lod_basis(forms: AssembledForms, Q=None) -> Basis:
    free = np.flatnonzero(forms.BH)
    G = sp.csr_matrix(forms.P) if Q is None else as_csr(forms.P + Q)
    return Basis(as_csr(G[free]), free, forms.mesh.N_H)


def fine_basis(forms: AssembledForms) -> Basis:
    free = np.flatnonzero(forms.Bh)
    n = forms.mesh.N_h
    G = sp.csr_matrix((np.ones(free.size), (np.arange(free.size), free)), shape=(free.size, n))
    return Basis(G, free, n)


@dataclass
class LinearEVPResult:
    lambdas: np.ndarray
    coarse: np.ndarray  # global coefficient vectors, one per column
    fine: np.ndarray  # L2-normalized fine vectors, one per column
    eig: EigResult


def solve_in_basis(basis: Basis, A, M, n_ev: int, opts: EigOptions | None = None) -> LinearEVPResult:
    opts = opts or EigOptions(n_ev=n_ev)
    if opts.n_ev != n_ev:
        opts = EigOptions(**{**opts.__dict__, "n_ev": n_ev})
    res = generalized_eig_smallest(basis.project(A), basis.project(M), opts)
    fine = basis.to_fine(res.vectors)
    norms = np.sqrt(np.einsum("ij,ij->j", fine, M @ fine))
    return LinearEVPResult(res.lambdas, basis.to_global(res.vectors / norms), fine / norms, res)


def solve_linear_evp(forms: AssembledForms, Q, n_ev: int, opts: EigOptions | None = None) -> LinearEVPResult:
    """Eigenpairs of (A + M_V) in the corrected coarse space (coarse FEM if Q is None)."""
    return solve_in_basis(lod_basis(forms, Q), forms.A_total, forms.M_h, n_ev, opts)


def solve_fine_evp(forms: AssembledForms, n_ev: int, opts: EigOptions | None = None) -> LinearEVPResult:
    return solve_in_basis(fine_basis(forms), forms.A_total, forms.M_h, n_ev, opts)


def post_process(lam_H: float, u_lod: np.ndarray, A_fine, M_h, Bh: np.ndarray):
    """One fine solve A u = λ_H M u_lod and its Rayleigh quotient."""
    u = spd_solve(mask_system(A_fine, Bh), Bh * (lam_H * (M_h @ u_lod)))
    return float(u @ (A_fine @ u)) / float(u @ (M_h @ u)), u


def energy(v: np.ndarray, A_h, M_V, beta: float, mesh: TwoScaleMesh) -> float:
    """½ a(v,v) + ½ ∫V v² + ¼ β ∫v⁴."""
    quad = 0.5 * float(v @ (A_h @ v) + v @ (M_V @ v))
    if beta == 0.0:
        return quad
    return quad + 0.25 * beta * integrate_power(mesh, v, 4, 4)


@dataclass
class ODAState:
    nu: int
    coeffs: np.ndarray  # coefficients in the basis
    u_fine: np.ndarray
    density: list[tuple[float, np.ndarray]]
    B_val: float
    d_val: float
    E_val: float  # true energy of the current density
    lambda_val: float
    s_val: float = np.nan
    c_val: float = np.nan
    alpha: float = np.nan
    energies: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def ratio(self) -> float:
        return abs(self.s_val / self.E_val)


@dataclass
class GPEProblem:
    forms: AssembledForms
    basis: Basis
    beta: float
    eig_opts: EigOptions | None = None

    @property
    def mesh(self) -> TwoScaleMesh:
        return self.forms.mesh

    def __post_init__(self):
        self.A_G = self.basis.project(self.forms.A_total)
        self.M_G = self.basis.project(self.forms.M_h)


def gpe_problem(forms: AssembledForms, beta: float, Q=None, fine: bool = False,
                eig_opts: EigOptions | None = None) -> GPEProblem:
    """Ground-state problem in the corrected coarse space or, with ``fine``, the full fine space."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    basis = fine_basis(forms) if fine else lod_basis(forms, Q)
    return GPEProblem(forms, basis, float(beta), eig_opts)


def _ground_state(prob: GPEProblem, A_G) -> tuple[float, np.ndarray, np.ndarray]:
    opts = prob.eig_opts or EigOptions(n_ev=1)
    opts = EigOptions(**{**opts.__dict__, "n_ev": 1})
    res = generalized_eig_smallest(A_G, prob.M_G, opts)
    c = res.vectors[:, 0]
    u = prob.basis.to_fine(c)
    nrm = np.sqrt(u @ (prob.forms.M_h @ u))
    c, u = c / nrm, u / nrm
    if np.sum(prob.forms.M_h @ u) < 0:
        c, u = -c, -u
    return float(res.lambdas[0]), c, u


def _quartic_pairing(prob: GPEProblem, density, u: np.ndarray) -> float:
    """β ∫ρ u² for a density list."""
    if prob.beta == 0.0:
        return 0.0
    Mr = assemble_weighted_mass(prob.mesh, density=density)
    return prob.beta * float(u @ (Mr @ u))


def gpe_initial_step(prob: GPEProblem) -> ODAState:
    lam, c, u = _ground_state(prob, prob.A_G)
    B0 = float(c @ (prob.A_G @ c))
    density = [(1.0, u)]
    d0 = B0 + _quartic_pairing(prob, density, u)
    E0 = 0.25 * (B0 + d0)
    return ODAState(nu=0, coeffs=c, u_fine=u, density=density, B_val=B0, d_val=d0,
                    E_val=E0, lambda_val=lam, energies=[E0])


def optimal_step(s: float, c: float) -> float:
    """argmin of s t + ½ c t² over t in [0, 1]."""
    if c > 0:
        return float(min(max(-s / c, 0.0), 1.0))
    return 0.0 if s + 0.5 * c >= 0.0 else 1.0


def gpe_oda_iterate(prob: GPEProblem, state: ODAState, tol: float = 1e-9) -> ODAState:
    """One damped step; the returned state is flagged once |s/E| ≤ tol."""
    beta = prob.beta
    if beta == 0.0:
        A_step = prob.A_G
    else:
        Mr = assemble_weighted_mass(prob.mesh, density=state.density)
        A_step = as_csr(prob.A_G + beta * prob.basis.project(Mr))
    _, c1, u1 = _ground_state(prob, A_step)
    B_half = float(c1 @ (prob.A_G @ c1))
    d_half = B_half + _quartic_pairing(prob, state.density, u1)
    lam = B_half + _quartic_pairing(prob, [(1.0, u1)], u1)
    # derivatives of the doubled energy along the density segment
    s = d_half - state.d_val
    c = state.d_val + lam - 2.0 * d_half + B_half - state.B_val
    alpha = optimal_step(s, c)
    E2 = 0.5 * (state.B_val + state.d_val) + alpha * s + 0.5 * alpha**2 * c
    B_new = (1.0 - alpha) * state.B_val + alpha * B_half
    density = [(w * (1.0 - alpha), v) for w, v in state.density] + [(alpha, u1)]
    density = [(w, v) for w, v in density if w > 0.0]
    E_new = 0.5 * E2
    out = ODAState(
        nu=state.nu + 1, coeffs=c1, u_fine=u1, density=density, B_val=B_new,
        d_val=2.0 * E2 - B_new, E_val=E_new, lambda_val=lam, s_val=0.5 * s, c_val=0.5 * c,
        alpha=alpha, energies=state.energies + [E_new],
    )
    out.converged = out.ratio <= tol
    return out


def gpe_solve(prob: GPEProblem, tol: float = 1e-9, max_iter: int = 200) -> ODAState:
    state = gpe_initial_step(prob)
    for _ in range(max_iter):
        state = gpe_oda_iterate(prob, state, tol)
        if len(state.energies) > 1 and state.energies[-1] > state.energies[-2] + 1e-12 * abs(state.energies[-2]):
            raise RuntimeError(
                f"energy increased at iteration {state.nu}: {state.energies[-2]!r} -> {state.energies[-1]!r}"
            )
        if state.converged:
            return state
    raise RuntimeError(f"optimal damping did not converge in {max_iter} iterations (|s/E| = {state.ratio:.3e})")


def gpe_eigenvalue(prob: GPEProblem, u: np.ndarray) -> float:
    """2E(u) + ½β‖u‖⁴ evaluated with fine quadrature."""
    f = prob.forms
    E = energy(u, f.A_h, f.M_V, prob.beta, f.mesh)
    return 2.0 * E + 0.5 * prob.beta * integrate_power(f.mesh, u, 4, 4)


def gpe_post_process(prob: GPEProblem, state: ODAState) -> tuple[float, np.ndarray]:
    f = prob.forms
    u = state.u_fine
    lam = gpe_eigenvalue(prob, u)
    rhs = lam * (f.M_h @ u)
    if prob.beta != 0.0:
        rhs = rhs - prob.beta * cubic_load(f.mesh, u)
    A = f.A_total
    up = spd_solve(mask_system(A, f.Bh), f.Bh * rhs)
    quartic = prob.beta * integrate_power(f.mesh, up, 4, 4) if prob.beta else 0.0
    lam_post = (float(up @ (A @ up)) + quartic) / float(up @ (f.M_h @ up))
    return lam_post, up
