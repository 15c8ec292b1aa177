from __future__ import annotations

import numpy as np
import pytest

from ncfem.mesh import Mesh, build_mesh, generate_mesh
from ncfem.spaces import DofSpace, build_cr_space


@pytest.fixture(scope="session")
def square2() -> Mesh:
    return generate_mesh("square", 2)


@pytest.fixture(scope="session")
def square4() -> Mesh:
    return generate_mesh("square", 4)


@pytest.fixture(scope="session")
def crisscross1() -> Mesh:
    return generate_mesh("crisscross", 1)


@pytest.fixture(scope="session")
def tetrahedra() -> Mesh:
    """Unit cube corner split into two tetrahedra sharing a face."""
    vertices = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]]
    return build_mesh(vertices, [[0, 1, 2, 3], [1, 2, 3, 4]])


@pytest.fixture(scope="session")
def cr_square2(square2: Mesh) -> DofSpace:
    return build_cr_space(square2)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
