from __future__ import annotations

import numpy as np
import pytest

from ncfem.models import SpaceKind
from ncfem.smoothing import (
    SmoothingError,
    SmoothingMap,
    averaging_A_p,
    build_E1,
    build_E_MR,
    build_Ep,
    build_smoother,
    cr_bubble_B,
    weighted_projection_QF,
)
from ncfem.spaces import build_gl_space, build_lagrange_space, build_morley_space, face_moment_matrix
from ncfem.verify import (
    conforming_invariance_residual,
    gram_pair,
    locality_violations,
    moment_residual,
    right_inverse_residual,
)


@pytest.fixture(scope="module")
def e1(cr_square2):
    return build_E1(cr_square2)


@pytest.fixture(scope="module")
def morley_square2(square2):
    return build_morley_space(square2)


def test_e1_targets_quadratic_lagrange(e1, cr_square2):
    assert e1.target.kind is SpaceKind.LAGRANGE
    assert e1.target.degree == 2
    assert e1.matrix.shape == (9, cr_square2.ndofs)
    assert e1.label == "E_1"


def test_e1_preserves_face_means(e1, square2):
    moments = face_moment_matrix(e1.target, square2.interior_faces) @ e1.matrix
    np.testing.assert_allclose(moments.toarray(), np.eye(e1.source.ndofs), atol=1e-13)


def test_e1_is_a_right_inverse(e1):
    assert right_inverse_residual(gram_pair(e1)) < 1e-9
    assert moment_residual(e1) < 1e-12


def test_e1_keeps_conforming_functions(e1):
    assert conforming_invariance_residual(e1) < 1e-10


def test_e1_is_local(e1):
    assert locality_violations(e1) == 0
    assert e1.max_footprint() <= e1.source.mesh.n_elements


def test_gl_smoother_is_local(square4):
    smoother = build_Ep(build_gl_space(square4, 2))
    assert locality_violations(smoother) == 0


def test_locality_check_sees_a_global_image(square4):
    smoother = build_Ep(build_gl_space(square4, 2))
    spread = smoother.matrix.toarray()
    spread[:, 0] = 1.0
    leaky = SmoothingMap(smoother.source, smoother.target, spread, label="leaky")
    assert locality_violations(leaky) >= 1


def test_skip_bubble_fault_breaks_face_means(cr_square2, square2):
    broken = build_E1(cr_square2, fault="skip-bubble")
    assert broken.label == "E_1 [skip-bubble]"
    moments = (face_moment_matrix(broken.target, square2.interior_faces) @ broken.matrix).toarray()
    assert np.abs(moments - np.eye(cr_square2.ndofs)).max() > 1e-6


def test_unknown_fault_rejected(cr_square2):
    with pytest.raises(SmoothingError):
        build_E1(cr_square2, fault="drop-everything")


def test_face_bubble_smoother_preserves_face_means(cr_square2, square2):
    bubble = cr_bubble_B(cr_square2)
    moments = face_moment_matrix(bubble.target, square2.interior_faces) @ bubble.matrix
    np.testing.assert_allclose(moments.toarray(), np.eye(cr_square2.ndofs), atol=1e-13)


def test_simplified_averaging_copies_nodal_values(cr_square2, square2):
    averaging = averaging_A_p(cr_square2, 1)
    assert averaging.matrix.shape == (1, cr_square2.ndofs)
    # the centre value is read from one element, so only its faces contribute
    centre_element = int(square2.vertex_star(4)[0])
    touching = [j for j, d in enumerate(cr_square2.descriptors) if d.entity in square2.element_faces[centre_element]]
    assert set(np.flatnonzero(np.abs(averaging.matrix.toarray()[0]) > 1e-12)) <= set(touching)
    with pytest.raises(SmoothingError):
        averaging_A_p(cr_square2, 1, target=build_lagrange_space(square2, 2))


def test_smoothers_check_their_source(square2, cr_square2):
    lagrange = build_lagrange_space(square2, 2)
    with pytest.raises(SmoothingError):
        build_E1(lagrange)
    with pytest.raises(SmoothingError):
        build_Ep(lagrange)
    with pytest.raises(SmoothingError):
        cr_bubble_B(lagrange)
    with pytest.raises(SmoothingError):
        build_Ep(cr_square2, 2)
    with pytest.raises(SmoothingError):
        build_E_MR(cr_square2)


def test_weighted_face_projection_of_constants(square2):
    face = int(square2.interior_faces[0])
    projection = weighted_projection_QF(square2, face, 1, 1)
    assert projection.matrix.shape[0] == 1
    # Q_F 1 = 1 / mean(Phi_F): the moment of 1 is |F|
    local_ones = np.ones(projection.moments.shape[-1])
    assert float((projection.matrix @ local_ones)[0]) == pytest.approx(6.0)


@pytest.mark.parametrize("p", [2, 3])
def test_ep_on_jump_moment_kernel(square2, p):
    gl = build_gl_space(square2, p)
    smoother = build_Ep(gl)
    assert smoother.target.degree == p + 1
    assert right_inverse_residual(gram_pair(smoother)) < 1e-9
    assert moment_residual(smoother) < 1e-10
    assert conforming_invariance_residual(smoother) < 1e-10


def test_ep_on_tetrahedra(tetrahedra):
    from ncfem.spaces import build_cr_space

    cr = build_cr_space(tetrahedra)
    smoother = build_smoother(cr)
    assert smoother.target.degree == 3
    assert moment_residual(smoother) < 1e-12


def test_e_mr_is_a_right_inverse(morley_square2):
    smoother = build_smoother(morley_square2)
    assert smoother.label == "E_MR"
    assert smoother.target.ndofs == 11 + 8
    assert right_inverse_residual(gram_pair(smoother)) < 1e-8
    assert moment_residual(smoother) < 1e-10


def test_e_mr_skip_bubble_is_plain_averaging(morley_square2):
    faulty = build_E_MR(morley_square2, fault="skip-bubble")
    block = faulty.target.block(1)
    assert abs(faulty.matrix[block]).max() == 0.0
    assert moment_residual(faulty) > 1e-6
