"""Two-level structured quadrilateral meshes and coarse-layer patches.

Nodes and cells are numbered lexicographically with x running fastest, on
both the coarse and the fine level.  Local node ordering inside a cell is
counterclockwise from the lower-left corner: (0,0), (1,0), (1,1), (0,1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

COARSE = "coarse"
FINE = "fine"
DIRICHLET = "dirichlet"
NEUMANN = "neumann"
INTERIOR = "interior"

SIDES = ("left", "right", "bottom", "top")

# counterclockwise local offsets (dx, dy)
LOCAL_OFFSETS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])


@dataclass(frozen=True)
class DomainRect:
    x0: float = 0.0
    y0: float = 0.0
    x1: float = 1.0
    y1: float = 1.0

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class BoundarySpec:
    left: str = DIRICHLET
    right: str = DIRICHLET
    bottom: str = DIRICHLET
    top: str = DIRICHLET

    def __post_init__(self):
        tags = [getattr(self, s) for s in SIDES]
        for tag in tags:
            if tag not in (DIRICHLET, NEUMANN):
                raise ValueError(f"unknown boundary tag {tag!r}")
        if DIRICHLET not in tags:
            raise ValueError("at least one side must carry a Dirichlet condition")

    @classmethod
    def all_dirichlet(cls) -> "BoundarySpec":
        return cls()

    @classmethod
    def from_dict(cls, d: dict) -> "BoundarySpec":
        return cls(**{s: d.get(s, DIRICHLET) for s in SIDES})

    def is_dirichlet(self, side: str) -> bool:
        return getattr(self, side) == DIRICHLET


@dataclass(frozen=True)
class TwoScaleMesh:
    """Uniform coarse grid with every coarse cell split into ``refine``
    fine cells per axis."""

    domain: DomainRect
    coarse_cells: tuple[int, int]
    refine: int

    def __post_init__(self):
        nx, ny = self.coarse_cells
        if int(nx) < 1 or int(ny) < 1 or int(self.refine) < 1:
            raise ValueError(
                f"invalid mesh dimensions coarse_cells={self.coarse_cells}, refine={self.refine}"
            )
        object.__setattr__(self, "coarse_cells", (int(nx), int(ny)))
        object.__setattr__(self, "refine", int(self.refine))

    # sizes -------------------------------------------------------------
    @property
    def fine_cells(self) -> tuple[int, int]:
        nx, ny = self.coarse_cells
        return nx * self.refine, ny * self.refine

    def cells(self, level: str) -> tuple[int, int]:
        return self.coarse_cells if level == COARSE else self.fine_cells

    def node_shape(self, level: str) -> tuple[int, int]:
        nx, ny = self.cells(level)
        return nx + 1, ny + 1

    def n_nodes(self, level: str) -> int:
        a, b = self.node_shape(level)
        return a * b

    def n_cells(self, level: str) -> int:
        a, b = self.cells(level)
        return a * b

    @property
    def N_H(self) -> int:
        return self.n_nodes(COARSE)

    @property
    def N_h(self) -> int:
        return self.n_nodes(FINE)

    @property
    def N_TH(self) -> int:
        return self.n_cells(COARSE)

    @property
    def N_Th(self) -> int:
        return self.n_cells(FINE)

    def spacing(self, level: str) -> tuple[float, float]:
        nx, ny = self.cells(level)
        return self.domain.width / nx, self.domain.height / ny

    @property
    def H(self) -> tuple[float, float]:
        return self.spacing(COARSE)

    @property
    def h(self) -> tuple[float, float]:
        return self.spacing(FINE)

    # geometry ----------------------------------------------------------
    def node_coords(self, level: str) -> np.ndarray:
        nxp, nyp = self.node_shape(level)
        hx, hy = self.spacing(level)
        i = np.tile(np.arange(nxp), nyp)
        j = np.repeat(np.arange(nyp), nxp)
        return np.column_stack([self.domain.x0 + i * hx, self.domain.y0 + j * hy])

    def cell_midpoints(self, level: str) -> np.ndarray:
        nx, ny = self.cells(level)
        hx, hy = self.spacing(level)
        i = np.tile(np.arange(nx), ny)
        j = np.repeat(np.arange(ny), nx)
        return np.column_stack(
            [self.domain.x0 + (i + 0.5) * hx, self.domain.y0 + (j + 0.5) * hy]
        )

    def cell_nodes(self, level: str) -> np.ndarray:
        """(n_cells, 4) array with cell_nodes[t, m] = sigma(t, m)."""
        cache = self._cell_nodes_cache
        if level not in cache:
            nx, ny = self.cells(level)
            t = np.arange(nx * ny)
            ci, cj = t % nx, t // nx
            ii = ci[:, None] + LOCAL_OFFSETS[None, :, 0]
            jj = cj[:, None] + LOCAL_OFFSETS[None, :, 1]
            cache[level] = jj * (nx + 1) + ii
        return cache[level]

    @cached_property
    def _cell_nodes_cache(self) -> dict:
        return {}

    def sigma(self, level: str, cell: int, local: int) -> int:
        if level not in (COARSE, FINE):
            raise ValueError(f"unknown level {level!r}")
        if not 0 <= cell < self.n_cells(level):
            raise ValueError(f"cell index {cell} out of range")
        if not 0 <= local < 4:
            raise ValueError(f"local index {local} out of range")
        nx, _ = self.cells(level)
        ci, cj = cell % nx, cell // nx
        dx, dy = LOCAL_OFFSETS[local]
        return int((cj + dy) * (nx + 1) + ci + dx)

    def fine_cells_in_coarse(self, ell: int) -> np.ndarray:
        """Fine cell indices of coarse cell ``ell``, ascending."""
        nx, _ = self.coarse_cells
        r = self.refine
        ci, cj = ell % nx, ell // nx
        fnx, _ = self.fine_cells
        jj, ii = np.meshgrid(np.arange(cj * r, cj * r + r), np.arange(ci * r, ci * r + r), indexing="ij")
        return (jj * fnx + ii).ravel()

    def fine_nodes_in_coarse(self, ell: int) -> np.ndarray:
        """Fine node indices in the closure of coarse cell ``ell``, ascending."""
        nx, _ = self.coarse_cells
        r = self.refine
        ci, cj = ell % nx, ell // nx
        fnxp, _ = self.node_shape(FINE)
        jj, ii = np.meshgrid(np.arange(cj * r, cj * r + r + 1), np.arange(ci * r, ci * r + r + 1), indexing="ij")
        return (jj * fnxp + ii).ravel()

    def coarse_to_fine_node(self) -> np.ndarray:
        """Fine index of the fine node coinciding with each coarse node."""
        nxp, nyp = self.node_shape(COARSE)
        fnxp, _ = self.node_shape(FINE)
        r = self.refine
        I = np.tile(np.arange(nxp), nyp)
        J = np.repeat(np.arange(nyp), nxp)
        return J * r * fnxp + I * r

    def coarse_cell_of_fine_cell(self) -> np.ndarray:
        fnx, fny = self.fine_cells
        nx, _ = self.coarse_cells
        t = np.arange(fnx * fny)
        return ((t // fnx) // self.refine) * nx + (t % fnx) // self.refine


def build_mesh(domain: DomainRect, coarse_cells: tuple[int, int], refine: int) -> TwoScaleMesh:
    return TwoScaleMesh(domain, tuple(coarse_cells), refine)


def mesh_from_sizes(domain: DomainRect, H: float, h: float) -> TwoScaleMesh:
    """Mesh with coarse size H and fine size h (h must divide H)."""
    nx = round(domain.width / H)
    ny = round(domain.height / H)
    r = round(H / h)
    if not np.isclose(nx * H, domain.width) or not np.isclose(ny * H, domain.height):
        raise ValueError(f"H={H} does not tile the domain")
    if not np.isclose(r * h, H):
        raise ValueError(f"h={h} does not divide H={H}")
    return build_mesh(domain, (nx, ny), r)


def _side_flags(mesh: TwoScaleMesh, level: str):
    nxp, nyp = mesh.node_shape(level)
    n = nxp * nyp
    i = np.arange(n) % nxp
    j = np.arange(n) // nxp
    return {
        "left": i == 0,
        "right": i == nxp - 1,
        "bottom": j == 0,
        "top": j == nyp - 1,
    }


def dirichlet_mask(mesh: TwoScaleMesh, level: str, bc: BoundarySpec) -> np.ndarray:
    """Boolean mask of nodes on the closed Dirichlet boundary."""
    flags = _side_flags(mesh, level)
    mask = np.zeros(mesh.n_nodes(level), dtype=bool)
    for side in SIDES:
        if bc.is_dirichlet(side):
            mask |= flags[side]
    return mask


def boundary_mask(mesh: TwoScaleMesh, level: str) -> np.ndarray:
    flags = _side_flags(mesh, level)
    return flags["left"] | flags["right"] | flags["bottom"] | flags["top"]


def classify_node(mesh: TwoScaleMesh, level: str, node: int, bc: BoundarySpec) -> str:
    if not 0 <= node < mesh.n_nodes(level):
        raise ValueError(f"node index {node} out of range")
    flags = _side_flags(mesh, level)
    on = [s for s in SIDES if flags[s][node]]
    if not on:
        return INTERIOR
    # Dirichlet wins at corners
    if any(bc.is_dirichlet(s) for s in on):
        return DIRICHLET
    return NEUMANN


@dataclass(frozen=True)
class Patch:
    ell: int
    k: int
    coarse_cell_set: np.ndarray
    active_coarse_nodes: np.ndarray
    active_fine_nodes: np.ndarray
    element_coarse_nodes: np.ndarray
    # coarse cell box [cx0, cx1) x [cy0, cy1)
    box: tuple[int, int, int, int] = field(default=(0, 0, 0, 0))

    @property
    def n_coarse(self) -> int:
        return len(self.active_coarse_nodes)

    @property
    def n_fine(self) -> int:
        return len(self.active_fine_nodes)


def _box_nodes(x0: int, x1: int, y0: int, y1: int, nxp: int):
    jj, ii = np.meshgrid(np.arange(y0, y1 + 1), np.arange(x0, x1 + 1), indexing="ij")
    return ii.ravel(), jj.ravel(), (jj * nxp + ii).ravel()


def build_patch(mesh: TwoScaleMesh, ell: int, k: int, bc: BoundarySpec) -> Patch:
    """k-layer patch around coarse cell ``ell``.

    On a tensor grid the vertex-neighbour layers are exactly the
    (2k+1)x(2k+1) cell box clamped to the grid.
    """
    if not 0 <= ell < mesh.N_TH:
        raise ValueError(f"coarse cell {ell} out of range")
    if k < 0:
        raise ValueError(f"layer count must be nonnegative, got {k}")
    nx, ny = mesh.coarse_cells
    ci, cj = ell % nx, ell // nx
    cx0, cx1 = max(ci - k, 0), min(ci + k + 1, nx)
    cy0, cy1 = max(cj - k, 0), min(cj + k + 1, ny)

    cj_, ci_ = np.meshgrid(np.arange(cy0, cy1), np.arange(cx0, cx1), indexing="ij")
    cells = (cj_ * nx + ci_).ravel()

    nxp, _ = mesh.node_shape(COARSE)
    _, _, cnodes = _box_nodes(cx0, cx1, cy0, cy1, nxp)
    cdir = dirichlet_mask(mesh, COARSE, bc)
    active_coarse = cnodes[~cdir[cnodes]]

    r = mesh.refine
    fnx, fny = mesh.fine_cells
    fx0, fx1, fy0, fy1 = cx0 * r, cx1 * r, cy0 * r, cy1 * r
    ii, jj, fnodes = _box_nodes(fx0, fx1, fy0, fy1, fnx + 1)
    # patch boundary pieces inside the domain carry the homogeneous condition
    cut = (
        ((ii == fx0) & (fx0 > 0))
        | ((ii == fx1) & (fx1 < fnx))
        | ((jj == fy0) & (fy0 > 0))
        | ((jj == fy1) & (fy1 < fny))
    )
    fdir = dirichlet_mask(mesh, FINE, bc)
    active_fine = fnodes[~cut & ~fdir[fnodes]]

    elem = np.sort(mesh.cell_nodes(COARSE)[ell])
    return Patch(
        ell=ell,
        k=k,
        coarse_cell_set=np.sort(cells),
        active_coarse_nodes=np.sort(active_coarse),
        active_fine_nodes=np.sort(active_fine),
        element_coarse_nodes=elem,
        box=(cx0, cx1, cy0, cy1),
    )


def full_patch_k(mesh: TwoScaleMesh) -> int:
    """Smallest layer count for which every patch covers the whole domain."""
    return max(mesh.coarse_cells)
