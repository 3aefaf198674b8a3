import pathlib

import numpy as np
import pytest

from rdafem import adapt, galerkin
from rdafem import mesh as mesh_mod

REPO = pathlib.Path(__file__).resolve().parent.parent

KAPPAS = (1.0, 1e2, 1e4)


def _adapted_lshape():
    """Irregular mesh from a short adaptive run (deterministic)."""
    start = mesh_mod.uniform_refine(mesh_mod.l_shape(), 2)
    problem = galerkin.make_problem(start, 100.0, "sinsin")
    report = adapt.adaptive_loop(problem, theta_mark=0.5, max_dof=160,
                                 osc_every=0, keep_meshes=True)
    return report.meshes[-1]


@pytest.fixture(scope="session")
def corpus():
    """Mesh family from 2 to ~2000 elements, regular and irregular."""
    meshes = [
        ("square2", mesh_mod.unit_square_2tri()),
        ("crisscross", mesh_mod.unit_square_crisscross()),
        ("lshape", mesh_mod.l_shape()),
        ("square64", mesh_mod.load_mesh(str(REPO / "meshes" / "square_64.msh"))),
        ("adapted", _adapted_lshape()),
        ("square2048", mesh_mod.uniform_refine(mesh_mod.unit_square_2tri(), 10)),
    ]
    for _, mesh in meshes:
        assert mesh.n_elements >= 2
    assert meshes[-1][1].n_elements == 2048
    return meshes


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
