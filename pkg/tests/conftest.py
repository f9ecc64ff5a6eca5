import numpy as np
import pytest

from molodensky_bem.assembly import assemble_load
from molodensky_bem.mesh import SurfaceMap, build_icosphere, p2_dof_layout
from molodensky_bem.solvers import assemble_system, solve_dirichlet


@pytest.fixture(scope="session")
def sphere_dirichlet_l2():
    """Dirichlet solution for constant data 1/1.1 on the radius-1.1 icosphere, level 2."""
    mesh = build_icosphere(2)
    smap = SurfaceMap.from_mesh(mesh).scaled(1.1)
    layout = p2_dof_layout(mesh)
    system = assemble_system(smap, layout)
    load = assemble_load(smap, layout, np.full((smap.n_triangles, 7), 1 / 1.1))
    return smap, layout, system, solve_dirichlet(system, load)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number][1])
