import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lodfem.grid import (
    COARSE, DIRICHLET, FINE, INTERIOR, NEUMANN, BoundarySpec, DomainRect, build_mesh,
    build_patch, classify_node, dirichlet_mask, mesh_from_sizes,
)

UNIT = DomainRect()


def test_counts_unit_square():
    m = build_mesh(UNIT, (4, 4), 4)
    assert (m.N_H, m.N_h, m.N_TH, m.N_Th) == (25, 289, 16, 256)


def test_refine_one_levels_coincide():
    m = build_mesh(UNIT, (5, 3), 1)
    assert m.N_H == m.N_h
    np.testing.assert_array_equal(m.node_coords(COARSE), m.node_coords(FINE))


def test_rectangle_counts():
    m = mesh_from_sizes(DomainRect(0, 0, 2, 3), 2.0**-3, 2.0**-6)
    assert m.coarse_cells == (16, 24)
    assert m.N_H == 17 * 25 == 425


@pytest.mark.parametrize("args", [((0, 4), 2), ((4, 4), 0), ((-1, 2), 1)])
def test_invalid_dimensions(args):
    with pytest.raises(ValueError):
        build_mesh(UNIT, *args)


def test_degenerate_domain():
    with pytest.raises(ValueError):
        DomainRect(0, 0, 0, 1)


def test_sigma_lexicographic_values():
    m = build_mesh(UNIT, (4, 4), 1)
    assert m.sigma(FINE, 0, 0) == 0
    assert m.sigma(FINE, 15, 2) == 24
    # cell 5 sits in column 1, row 1 of a 4x4 cell grid with 5 nodes per row
    a = m.sigma(FINE, 5, 0)
    assert a == 6
    assert [m.sigma(FINE, 5, i) for i in range(4)] == [a, a + 1, a + 6, a + 5]


@pytest.mark.xfail(strict=True, reason=(
    "published labels 5, 6, 11, 10 for cell 5 of a 16-cell grid put its lower-left "
    "node in column 0, contradicting both the drawn geometry and sigma(15, 2) = 24"))
def test_sigma_published_figure_labels():
    m = build_mesh(UNIT, (4, 4), 1)
    assert [m.sigma(FINE, 5, i) for i in range(4)] == [5, 6, 11, 10]


@pytest.mark.parametrize("bad", [(16, 0), (0, 4), (-1, 0)])
def test_sigma_range(bad):
    m = build_mesh(UNIT, (4, 4), 1)
    with pytest.raises(ValueError):
        m.sigma(FINE, *bad)


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(1, 5), ny=st.integers(1, 5), r=st.integers(1, 3))
def test_cell_node_coordinates(nx, ny, r):
    m = build_mesh(DomainRect(-1, 0.5, 2, 2), (nx, ny), r)
    X = m.node_coords(FINE)
    hx, hy = m.h
    fx, _ = m.fine_cells
    cn = m.cell_nodes(FINE)
    for t in range(m.N_Th):
        ox, oy = m.domain.x0 + (t % fx) * hx, m.domain.y0 + (t // fx) * hy
        expect = np.array([[ox, oy], [ox + hx, oy], [ox + hx, oy + hy], [ox, oy + hy]])
        np.testing.assert_allclose(X[cn[t]], expect, atol=1e-13)
        assert all(cn[t, i] == m.sigma(FINE, t, i) for i in range(4))


@settings(max_examples=20, deadline=None)
@given(nx=st.integers(1, 4), ny=st.integers(1, 4), r=st.integers(1, 4))
def test_fine_cells_partition_coarse_cells(nx, ny, r):
    m = build_mesh(UNIT, (nx, ny), r)
    owner = m.coarse_cell_of_fine_cell()
    hx, hy = m.h
    for ell in range(m.N_TH):
        cells = m.fine_cells_in_coarse(ell)
        assert np.all(owner[cells] == ell)
        assert np.isclose(cells.size * hx * hy, UNIT.area / m.N_TH)
    # coarse nodes coincide with fine nodes
    np.testing.assert_allclose(m.node_coords(FINE)[m.coarse_to_fine_node()], m.node_coords(COARSE))


def test_patch_sizes():
    bc = BoundarySpec()
    m = build_mesh(UNIT, (8, 8), 2)
    assert build_patch(m, 3 * 8 + 3, 1, bc).coarse_cell_set.size == 9
    assert build_patch(m, 0, 1, bc).coarse_cell_set.size == 4
    m4 = build_mesh(UNIT, (4, 4), 2)
    assert np.array_equal(build_patch(m4, 5, 4, bc).coarse_cell_set, np.arange(16))


def test_patch_k0_is_element():
    m = build_mesh(UNIT, (4, 4), 2)
    p = build_patch(m, 6, 0, BoundarySpec())
    assert p.coarse_cell_set.tolist() == [6]
    assert p.element_coarse_nodes.tolist() == sorted(m.cell_nodes(COARSE)[6])


def _union_patch(m, ell, k):
    """Iterated vertex-neighbour union, the set definition of a patch."""
    cn = m.cell_nodes(COARSE)
    cells = {ell}
    for _ in range(k):
        nodes = set(cn[list(cells)].ravel())
        cells = {t for t in range(m.N_TH) if nodes & set(cn[t])}
    return sorted(cells)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_patch_box_equals_union(k):
    m = build_mesh(UNIT, (5, 4), 2)
    for ell in range(m.N_TH):
        assert build_patch(m, ell, k, BoundarySpec()).coarse_cell_set.tolist() == _union_patch(m, ell, k)


def test_patch_monotone_in_k():
    m = build_mesh(UNIT, (6, 6), 2)
    prev = None
    for k in range(8):
        cur = set(build_patch(m, 14, k, BoundarySpec()).coarse_cell_set)
        if prev is not None:
            assert prev <= cur
        prev = cur
    assert prev == set(range(36))


def _active_oracle(m, patch, bc):
    """Active sets by coordinates: closed patch minus Dirichlet and interior patch boundary."""
    cx0, cx1, cy0, cy1 = patch.box
    H = m.H
    x0, x1 = m.domain.x0 + cx0 * H[0], m.domain.x0 + cx1 * H[0]
    y0, y1 = m.domain.y0 + cy0 * H[1], m.domain.y0 + cy1 * H[1]
    out = {}
    for level in (COARSE, FINE):
        X = m.node_coords(level)
        D = dirichlet_mask(m, level, bc)
        inside = (X[:, 0] >= x0 - 1e-12) & (X[:, 0] <= x1 + 1e-12) & (X[:, 1] >= y0 - 1e-12) & (X[:, 1] <= y1 + 1e-12)
        keep = inside & ~D
        if level == FINE:
            dom = m.domain
            cut = ((np.isclose(X[:, 0], x0) & (x0 > dom.x0 + 1e-12))
                   | (np.isclose(X[:, 0], x1) & (x1 < dom.x1 - 1e-12))
                   | (np.isclose(X[:, 1], y0) & (y0 > dom.y0 + 1e-12))
                   | (np.isclose(X[:, 1], y1) & (y1 < dom.y1 - 1e-12)))
            keep &= ~cut
        out[level] = np.flatnonzero(keep)
    return out


@pytest.mark.parametrize("bc", [BoundarySpec(), BoundarySpec(left=DIRICHLET, right=NEUMANN, bottom=NEUMANN, top=NEUMANN)])
def test_active_sets_match_coordinate_oracle(bc):
    m = build_mesh(UNIT, (4, 4), 2)
    for ell, k in itertools.product(range(m.N_TH), (0, 1, 2)):
        p = build_patch(m, ell, k, bc)
        oracle = _active_oracle(m, p, bc)
        np.testing.assert_array_equal(p.active_coarse_nodes, oracle[COARSE])
        np.testing.assert_array_equal(p.active_fine_nodes, oracle[FINE])


def test_patch_boundary_removes_nodes():
    m = build_mesh(UNIT, (4, 4), 2)
    bc = BoundarySpec(left=DIRICHLET, right=NEUMANN, bottom=NEUMANN, top=NEUMANN)
    assert build_patch(m, 5, 1, bc).n_fine < m.N_h
    assert build_patch(m, 5, 4, bc).n_fine == m.N_h - 9  # only the Dirichlet column drops


def test_patch_range_checks():
    m = build_mesh(UNIT, (2, 2), 2)
    with pytest.raises(ValueError):
        build_patch(m, 4, 1, BoundarySpec())
    with pytest.raises(ValueError):
        build_patch(m, 0, -1, BoundarySpec())


def test_classify_node():
    m = build_mesh(UNIT, (4, 4), 1)
    bc = BoundarySpec()
    assert classify_node(m, COARSE, 1, bc) == DIRICHLET
    assert classify_node(m, COARSE, 6, bc) == INTERIOR
    mixed = BoundarySpec(left=DIRICHLET, right=NEUMANN, bottom=NEUMANN, top=NEUMANN)
    assert classify_node(m, COARSE, 0, mixed) == DIRICHLET
    assert classify_node(m, COARSE, 4, mixed) == NEUMANN
    with pytest.raises(ValueError):
        classify_node(m, COARSE, 25, bc)


def test_boundary_spec_requires_dirichlet():
    with pytest.raises(ValueError):
        BoundarySpec(NEUMANN, NEUMANN, NEUMANN, NEUMANN)
    with pytest.raises(ValueError):
        BoundarySpec(left="robin")
