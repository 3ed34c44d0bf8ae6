import numpy as np
import pytest

from lodfem.assembly import assemble_forms
from lodfem.grid import BoundarySpec, DomainRect, build_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rough_forms(coarse=(4, 4), refine=4, seed=1, bc=None, V=0.0, contrast=10.0):
    mesh = build_mesh(DomainRect(), coarse, refine)
    kappa = np.random.default_rng(seed).uniform(1.0, contrast, mesh.N_Th)
    return assemble_forms(mesh, bc or BoundarySpec(), kappa, V)
