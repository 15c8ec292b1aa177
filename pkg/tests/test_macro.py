from __future__ import annotations

import numpy as np
import pytest

from ncfem.macro import HCT_LOCAL_DIM, build_hct_space, c1_defect, edge_normal_moments, hct_local_basis
from ncfem.spaces import SpaceConstructionError, duality_defect


@pytest.fixture(scope="module")
def hct(square2):
    return build_hct_space(square2)


def test_hct_layout(hct, square2):
    assert hct.ndofs == 3 * square2.interior_vertices.size + square2.interior_faces.size
    assert hct.broken.local_dim == 30
    assert hct.split == "ct"
    assert hct.smoothness == "C1"


def test_local_basis_spans_twelve_functions(hct):
    local = hct_local_basis(hct.broken, 0)
    assert local.shape == (30, HCT_LOCAL_DIM)


def test_hct_duality(hct):
    assert duality_defect(hct) < 1e-9


def test_hct_is_c1_with_clamped_trace(hct):
    defects = c1_defect(hct)
    assert set(defects) == {"internal", "interface", "boundary"}
    assert max(defects.values()) < 1e-9


def test_edge_normal_moments_shape(hct, square2):
    moments = edge_normal_moments(hct)
    assert moments.shape == (square2.n_faces, hct.ndofs)
    # clamped gradients vanish on the boundary
    assert np.abs(moments[square2.boundary_faces].toarray()).max() < 1e-10


def test_hct_parallel_build_matches_serial(square2, hct):
    parallel = build_hct_space(square2, workers=3)
    np.testing.assert_allclose(parallel.basis.toarray(), hct.basis.toarray(), atol=1e-12)


def test_hct_needs_triangles(tetrahedra):
    with pytest.raises(SpaceConstructionError):
        build_hct_space(tetrahedra)


def test_hct_condition_limit(square2):
    with pytest.raises(SpaceConstructionError):
        build_hct_space(square2, condition_limit=1.0)
