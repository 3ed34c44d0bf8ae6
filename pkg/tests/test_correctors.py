import csv

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import rough_forms
from lodfem.assembly import assemble_forms, assemble_global, element_mass, element_stiffness
from lodfem.correctors import (
    RankDeficiencyError, SourceSpec, compute_corrections, iterate_patches, local_rhs,
    local_system, schur_precompute, solve_corrector, source_rhs,
)
from lodfem.grid import COARSE, FINE, NEUMANN, BoundarySpec, DomainRect, build_mesh, build_patch, full_patch_k


def kkt_solve(A, C, rhs):
    """Dense oracle for [A Cᵀ; C 0][w; λ] = [rhs; 0]."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    C = C.toarray() if sp.issparse(C) else np.asarray(C)
    n, m = A.shape[0], C.shape[0]
    K = np.block([[A, C.T], [C, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([rhs, np.zeros(m)]))
    return sol[:n], sol[n:]


def random_spd(rng, n):
    X = rng.standard_normal((n, n))
    return X @ X.T + n * np.eye(n)


def test_local_system_full_patch_is_interior_block():
    forms = rough_forms((3, 3), 2)
    mesh = forms.mesh
    patch = build_patch(mesh, 4, full_patch_k(mesh), forms.bc)
    A_l, C_l = local_system(patch, forms.A_h, forms.C)
    free = np.flatnonzero(forms.Bh)
    np.testing.assert_array_equal(patch.active_fine_nodes, free)
    np.testing.assert_allclose(A_l.toarray(), forms.A_h.toarray()[np.ix_(free, free)])
    assert C_l.shape == (int(forms.BH.sum()), free.size)


def test_local_system_refine_one_constraints_fix_all_unknowns():
    forms = rough_forms((4, 4), 1)
    full = build_patch(forms.mesh, 5, full_patch_k(forms.mesh), forms.bc)
    _, C_l = local_system(full, forms.A_h, forms.C)
    assert C_l.shape[0] == C_l.shape[1]
    assert np.linalg.matrix_rank(C_l.toarray()) == C_l.shape[0]
    # a cut patch keeps the coarse nodes on the cut, so C_l gains rows but keeps full column rank
    cut = build_patch(forms.mesh, 5, 1, forms.bc)
    _, C_l = local_system(cut, forms.A_h, forms.C)
    assert C_l.shape[0] > C_l.shape[1]
    assert np.linalg.matrix_rank(C_l.toarray()) == C_l.shape[1]
    assert schur_precompute(*local_system(cut, forms.A_h, forms.C)).trivial


def test_local_system_dimensions_counting():
    forms = rough_forms((4, 4), 2)
    patch = build_patch(forms.mesh, 5, 1, forms.bc)
    A_l, C_l = local_system(patch, forms.A_h, forms.C)
    # coarse box nodes 0..3 per axis minus the Dirichlet line; fine box 0..6 minus both ends
    assert A_l.shape == (25, 25)
    assert C_l.shape == (9, 25)


def test_local_rhs_partition_of_unity_and_dirichlet_rows():
    forms = rough_forms((4, 4), 3)
    mesh, blocks = forms.mesh, forms.element_blocks()
    interior = build_patch(mesh, 5, 1, forms.bc)
    r = local_rhs(interior, mesh, blocks, forms.P, forms.BH)
    np.testing.assert_allclose(r.sum(axis=0), 0, atol=1e-12 * np.abs(r).max())
    corner = build_patch(mesh, 0, 1, forms.bc)
    r = local_rhs(corner, mesh, blocks, forms.P, forms.BH)
    dirichlet = forms.BH[corner.element_coarse_nodes] == 0
    assert dirichlet.sum() == 3
    assert not r[dirichlet].any() and r[~dirichlet].any()


def test_local_rhs_all_dirichlet_cell_gives_no_problem():
    mesh = build_mesh(DomainRect(), (1, 1), 4)
    forms = assemble_forms(mesh, BoundarySpec())
    patch = build_patch(mesh, 0, 1, forms.bc)
    assert patch.n_coarse == 0
    assert not local_rhs(patch, mesh, forms.element_blocks(), forms.P, forms.BH).any()
    cm = compute_corrections(forms, 1)
    assert cm.Q.nnz == 0
    assert cm.stats[0][3] == 0


def test_local_rhs_refine_one_matches_element_stiffness():
    mesh = build_mesh(DomainRect(), (4, 4), 1)
    forms = assemble_forms(mesh, BoundarySpec())
    ell = 5
    patch = build_patch(mesh, ell, 1, forms.bc)
    r = local_rhs(patch, mesh, forms.element_blocks(), forms.P, forms.BH)
    Ke = element_stiffness(1.0, *mesh.h)
    sig = mesh.cell_nodes(FINE)[ell]
    expected = np.zeros_like(r)
    for a in range(4):
        i = np.searchsorted(patch.element_coarse_nodes, sig[a])
        for b in range(4):
            j = np.searchsorted(patch.active_fine_nodes, sig[b])
            if j < patch.n_fine and patch.active_fine_nodes[j] == sig[b]:
                expected[i, j] = -Ke[a, b]
    np.testing.assert_allclose(r, expected, atol=1e-14)


def test_schur_examples(rng):
    C = rng.standard_normal((3, 7))
    cache = schur_precompute(sp.identity(7, format="csr"), sp.csr_matrix(C))
    np.testing.assert_allclose(cache.Y, C.T, atol=1e-14)
    np.testing.assert_allclose(cache.S, C @ C.T, atol=1e-13)
    assert cache.factor.n_solves == 3
    one = schur_precompute(sp.csr_matrix(random_spd(rng, 5)), sp.csr_matrix(rng.standard_normal((1, 5))))
    assert one.S.shape == (1, 1) and one.S[0, 0] > 0


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 12), m=st.integers(1, 5), seed=st.integers(0, 10**6))
def test_schur_inverse_and_kkt(n, m, seed):
    rng = np.random.default_rng(seed)
    m = min(m, n)
    A = random_spd(rng, n)
    C = rng.standard_normal((m, n))
    cache = schur_precompute(sp.csr_matrix(A), sp.csr_matrix(C))
    # a square full-rank C leaves only w = 0 and skips the inverse
    assert cache.trivial == (m == n)
    if not cache.trivial:
        np.testing.assert_allclose(cache.S_inv @ (C @ np.linalg.solve(A, C.T)), np.eye(m), atol=1e-9)
    rhs = rng.standard_normal(n)
    w, lam = solve_corrector(cache, rhs)
    w_ref, lam_ref = kkt_solve(A, C, rhs)
    np.testing.assert_allclose(w, w_ref, atol=1e-9 * max(1.0, np.abs(w_ref).max()))
    if not cache.trivial:
        np.testing.assert_allclose(lam, lam_ref, atol=1e-9 * max(1.0, np.abs(lam_ref).max()))


def test_solve_corrector_constraint_force_rhs(rng):
    A = random_spd(rng, 9)
    C = rng.standard_normal((3, 9))
    cache = schur_precompute(sp.csr_matrix(A), sp.csr_matrix(C))
    mu = rng.standard_normal(3)
    w, lam = solve_corrector(cache, C.T @ mu)
    assert np.abs(w).max() <= 1e-12 * np.abs(C.T @ mu).max()
    np.testing.assert_allclose(lam, mu, atol=1e-10)
    w0, lam0 = solve_corrector(cache, np.zeros(9))
    assert not w0.any() and not lam0.any()


def test_rank_deficiency_handling(rng):
    A = sp.csr_matrix(random_spd(rng, 6))
    c = rng.standard_normal(6)
    C = sp.csr_matrix(np.vstack([c, c, rng.standard_normal(6)]))
    with pytest.raises(RankDeficiencyError, match="patch 7"):
        schur_precompute(A, C, name="patch 7")
    cache = schur_precompute(A, C, strict=False)
    w, _ = solve_corrector(cache, rng.standard_normal(6))
    assert np.abs(C @ w).max() <= 1e-8 * np.abs(w).max()
    # more independent constraints than unknowns: the only admissible w is zero
    wide = schur_precompute(sp.identity(2, format="csr"), sp.csr_matrix(rng.standard_normal((3, 2))))
    assert wide.trivial
    assert not solve_corrector(wide, np.ones(2))[0].any()


def test_patch_correctors_match_kkt_oracle():
    forms = rough_forms((4, 4), 4, contrast=100.0)
    for res in iterate_patches(forms, 1, keep_cache=True):
        A_l, C_l = local_system(res.patch, forms.A_total, forms.C)
        r = local_rhs(res.patch, forms.mesh, forms.element_blocks(), forms.P, forms.BH)
        for i in range(r.shape[0]):
            w_ref, _ = kkt_solve(A_l, C_l, r[i])
            scale = max(np.abs(w_ref).max(), 1e-300)
            assert np.abs(res.w[i] - w_ref).max() <= 1e-9 * max(scale, 1.0)
            if res.w[i].any():
                assert np.abs(C_l @ res.w[i]).max() <= 1e-8 * np.abs(res.w[i]).max()


def test_cost_contract_and_stats(tmp_path):
    forms = rough_forms((4, 4), 2)
    seen = []
    cm = compute_corrections(forms, 1, callback=seen.append)
    for res, row in zip(seen, cm.stats):
        nonzero_rows = int(np.sum(np.any(local_rhs(res.patch, forms.mesh, forms.element_blocks(),
                                                   forms.P, forms.BH) != 0, axis=1)))
        assert row == (res.ell, res.patch.n_coarse, res.patch.n_fine, res.patch.n_coarse + nonzero_rows)
    path = tmp_path / "stats.csv"
    cm.write_stats(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["ell", "n_coarse", "n_fine", "solves"]
    assert len(rows) == 1 + forms.mesh.N_TH


def test_cost_contract_with_source():
    forms = rough_forms((4, 4), 2)
    spec = SourceSpec(eta1=np.where(np.arange(forms.mesh.N_Th) < 8, 1.0, 0.0))
    plain = compute_corrections(forms, 1).stats
    with_src = compute_corrections(forms, 1, source=spec).stats
    for a, b, ell in zip(plain, with_src, range(forms.mesh.N_TH)):
        extra = 1 if ell < 4 else 0  # the first 8 fine cells lie in the bottom coarse row
        assert b[3] == a[3] + extra


def test_refine_one_gives_zero_correctors():
    forms = rough_forms((4, 4), 1)
    assert compute_corrections(forms, 2).Q.nnz == 0


def test_dirichlet_rows_zero_and_support():
    forms = rough_forms((4, 4), 3)
    cm = compute_corrections(forms, 1)
    Q = cm.Q.tocsr()
    for i in np.flatnonzero(forms.BH == 0):
        assert Q[i].nnz == 0
    assert np.all(Q[:, np.flatnonzero(forms.Bh == 0)].toarray() == 0)


def test_threads_do_not_change_result():
    forms = rough_forms((4, 4), 2)
    a = compute_corrections(forms, 1, threads=1).Q
    b = compute_corrections(forms, 1, threads=4).Q
    assert (a != b).nnz == 0


def test_ideal_orthogonality():
    forms = rough_forms((4, 4), 3, contrast=50.0)
    mesh = forms.mesh
    Q = compute_corrections(forms, full_patch_k(mesh)).Q
    A = forms.A_total
    rng = np.random.default_rng(3)
    fc, ff = np.flatnonzero(forms.BH), np.flatnonzero(forms.Bh)
    Cf = forms.C[fc][:, ff].toarray()
    z0 = rng.standard_normal((ff.size, 5))
    zf = z0 - Cf.T @ np.linalg.solve(Cf @ Cf.T, Cf @ z0)
    Z = np.zeros((mesh.N_h, 5))
    Z[ff] = zf
    G = (forms.P + Q)[fc]
    Anorm = abs(A).sum(axis=1).max()
    lhs = np.abs(G @ (A @ Z))
    assert lhs.max() <= 1e-8 * Anorm * np.linalg.norm(Z, axis=0).max()


def test_constant_coefficient_translation_symmetry():
    mesh = build_mesh(DomainRect(), (8, 8), 2)
    forms = assemble_forms(mesh, BoundarySpec())
    Q = compute_corrections(forms, 1).Q.toarray()
    nxp = mesh.node_shape(COARSE)[0]
    fn = mesh.node_shape(FINE)[0]
    i = 4 * nxp + 4
    row = Q[i].reshape(fn, fn)
    shifted = Q[i + 1].reshape(fn, fn)
    r = mesh.refine
    np.testing.assert_allclose(shifted[:, r:], row[:, :-r], atol=1e-13)
    shifted_y = Q[i + nxp].reshape(fn, fn)
    np.testing.assert_allclose(shifted_y[r:, :], row[:-r, :], atol=1e-13)


def test_corrector_decay_in_layers():
    mesh = build_mesh(DomainRect(), (8, 8), 2)
    forms = assemble_forms(mesh, BoundarySpec())
    ref = compute_corrections(forms, full_patch_k(mesh)).Q
    diffs = [abs(compute_corrections(forms, k).Q - ref).max() for k in range(1, 5)]
    ratios = np.array(diffs[1:]) / np.array(diffs[:-1])
    assert np.all(ratios < 1.0), diffs
    assert ratios.max() < 0.5, ratios


def test_source_rhs_terms():
    forms = rough_forms((4, 4), 3)
    mesh, blocks = forms.mesh, forms.element_blocks()
    patch = build_patch(mesh, 5, 1, forms.bc)
    assert not source_rhs(patch, mesh, SourceSpec(), blocks, forms.bc).any()
    assert not source_rhs(patch, mesh, SourceSpec(eta2=np.zeros(mesh.N_h)), blocks, forms.bc).any()
    r = source_rhs(patch, mesh, SourceSpec(eta1=1.0), blocks, forms.bc)
    cells = mesh.fine_cells_in_coarse(5)
    mass = np.zeros((mesh.N_Th, 4, 4))
    mass[cells] = element_mass(*mesh.h)
    integral = assemble_global(mesh, mass) @ np.ones(mesh.N_h)
    np.testing.assert_allclose(r, -integral[patch.active_fine_nodes], atol=1e-15)


def test_source_neumann_term():
    mesh = build_mesh(DomainRect(), (4, 4), 2)
    bc = BoundarySpec(right=NEUMANN)
    forms = assemble_forms(mesh, bc)
    ell = 3  # bottom-right coarse cell touches the Neumann side
    patch = build_patch(mesh, ell, 1, bc)
    r = source_rhs(patch, mesh, SourceSpec(eta3=1.0), forms.element_blocks(), bc)
    # the right edge of K_3 carries r fine edges of length h; the Dirichlet corner node drops out
    assert r.sum() == pytest.approx(-(mesh.H[1] - mesh.h[1] / 2))
    inner = build_patch(mesh, 5, 1, bc)
    assert not source_rhs(inner, mesh, SourceSpec(eta3=1.0), forms.element_blocks(), bc).any()


def test_source_corrector_kkt_and_locality():
    forms = rough_forms((4, 4), 3)
    mesh = forms.mesh
    g = np.sin(3 * mesh.node_coords(FINE)).sum(axis=1)
    spec = SourceSpec(eta2=-g)
    cm = compute_corrections(forms, 1, source=spec)
    blocks = forms.element_blocks()
    q_ref = np.zeros(mesh.N_h)
    for ell in range(mesh.N_TH):
        patch = build_patch(mesh, ell, 1, forms.bc)
        A_l, C_l = local_system(patch, forms.A_total, forms.C)
        w, _ = kkt_solve(A_l, C_l, source_rhs(patch, mesh, spec, blocks, forms.bc))
        q_ref[patch.active_fine_nodes] += w
    np.testing.assert_allclose(cm.q_hat, q_ref, atol=1e-9 * np.abs(q_ref).max())

    zero = compute_corrections(forms, 1, source=SourceSpec(eta1=0.0))
    assert not zero.q_hat.any()

    eta1 = np.zeros(mesh.N_Th)
    eta1[mesh.fine_cells_in_coarse(0)] = 1.0
    local = compute_corrections(forms, 1, source=SourceSpec(eta1=eta1)).q_hat
    support = build_patch(mesh, 0, 1, forms.bc).active_fine_nodes
    outside = np.setdiff1d(np.arange(mesh.N_h), support)
    assert local[support].any() and not local[outside].any()
