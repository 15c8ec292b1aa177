from __future__ import annotations

import numpy as np
import pytest

from ncfem.mesh import generate_mesh
from ncfem.models import PointSet, SpaceKind
from ncfem.spaces import (
    BrokenSpace,
    Field,
    SpaceConstructionError,
    build_broken_space,
    build_cr_space,
    build_gl_space,
    build_lagrange_space,
    build_morley_space,
    cr_interpolate,
    dof_functionals,
    duality_defect,
    face_moment_matrix,
    jump_constraint_matrix,
    sample_point_set,
)


def affine(points: np.ndarray) -> np.ndarray:
    return 1.0 + 2.0 * points[:, 0] - 0.5 * points[:, 1]


@pytest.mark.parametrize("p, expected", [(1, 1), (2, 9), (3, 25)])
def test_lagrange_dimension(square2, p, expected):
    assert build_lagrange_space(square2, p).ndofs == expected


def test_lagrange_on_crisscross_has_one_dof(crisscross1):
    space = build_lagrange_space(crisscross1, 1)
    assert space.ndofs == 1
    assert space.smoothness == "C0"


@pytest.mark.parametrize(
    "builder",
    [
        lambda mesh: build_lagrange_space(mesh, 1),
        lambda mesh: build_lagrange_space(mesh, 3),
        build_cr_space,
        lambda mesh: build_cr_space(mesh, clamped=False),
        lambda mesh: build_gl_space(mesh, 2),
        build_morley_space,
    ],
    ids=["lagrange1", "lagrange3", "cr", "cr-unclamped", "gl2", "morley"],
)
def test_dof_duality(square2, builder):
    space = builder(square2)
    assert duality_defect(space) < 1e-10


def test_cr_counts(square2, cr_square2):
    assert cr_square2.ndofs == square2.interior_faces.size
    assert build_cr_space(square2, clamped=False).ndofs == square2.n_faces
    assert [d.kind for d in cr_square2.descriptors] == ["face-mean"] * cr_square2.ndofs


def test_cr_needs_two_elements():
    from ncfem.mesh import build_mesh

    single = build_mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])
    with pytest.raises(SpaceConstructionError):
        build_cr_space(single)


def test_cr_on_tetrahedra(tetrahedra):
    space = build_cr_space(tetrahedra)
    assert space.ndofs == 1
    assert duality_defect(space) < 1e-12


def test_cr_interpolation_reproduces_affine_functions(square2):
    space = build_cr_space(square2, clamped=False)
    field = Field(space, cr_interpolate(space, affine))
    points = sample_point_set(square2)
    np.testing.assert_allclose(field.evaluate(points), affine(points.points), atol=1e-12)
    np.testing.assert_allclose(field.evaluate(points, 1), np.tile([2.0, -0.5], (points.size, 1)), atol=1e-12)


def test_cr_interpolation_of_a_field_keeps_face_means(square2, cr_square2, rng):
    lagrange = build_lagrange_space(square2, 2)
    source = lagrange.field(rng.standard_normal(lagrange.ndofs))
    coefficients = cr_interpolate(cr_square2, source)
    moments = face_moment_matrix(lagrange, square2.interior_faces, degree=2) @ source.coefficients
    np.testing.assert_allclose(coefficients, moments, atol=1e-13)


def test_cr_interpolation_targets_cr_only(square2):
    with pytest.raises(SpaceConstructionError):
        cr_interpolate(build_lagrange_space(square2, 1), affine)


def _kernel_dimension(mesh, p):
    constraints = jump_constraint_matrix(mesh, p).toarray()
    return constraints.shape[1] - np.linalg.matrix_rank(constraints, tol=1e-10 * np.abs(constraints).max())


@pytest.mark.parametrize("mesh_name", ["square2", "crisscross1"])
@pytest.mark.parametrize("p", [2, 3, 4])
def test_gl_local_basis_spans_the_kernel(request, mesh_name, p):
    mesh = request.getfixturevalue(mesh_name)
    gl = build_gl_space(mesh, p)
    assert gl.ndofs == _kernel_dimension(mesh, p)
    assert np.abs((jump_constraint_matrix(mesh, p) @ gl.basis).toarray()).max() < 1e-10
    assert duality_defect(gl) < 1e-9
    vertex_dofs = sum(d.kind == "vertex-potential" for d in gl.descriptors)
    assert vertex_dofs == (mesh.interior_vertices.size if p % 2 == 0 else 0)
    assert {d.kind for d in gl.descriptors} <= {"element-kernel", "face-moment", "vertex-potential"}


def test_gl_contains_continuous_functions(square2):
    gl = build_gl_space(square2, 2)
    lagrange = build_lagrange_space(square2, 2)
    conforming = lagrange.basis.toarray()
    recovered = gl.basis.toarray() @ (dof_functionals(gl) @ lagrange.basis).toarray()
    np.testing.assert_allclose(recovered, conforming, atol=1e-10)


def test_gl_basis_stays_local_on_finer_meshes():
    mesh = generate_mesh("square", 16)
    gl = build_gl_space(mesh, 2)
    # one quadratic bubble per element, one free moment per interior edge, one potential per interior vertex
    assert gl.ndofs == mesh.n_elements + mesh.interior_faces.size + mesh.interior_vertices.size
    widest_star = max(mesh.vertex_star(int(z)).size for z in mesh.interior_vertices)
    assert max(support.size for support in gl.supports()) <= widest_star
    assert gl.basis.nnz <= gl.ndofs * widest_star * gl.broken.cell_dim


def test_gl_on_tetrahedra_uses_an_orthonormal_kernel(tetrahedra):
    gl = build_gl_space(tetrahedra, 2)
    basis = gl.basis.toarray()
    assert gl.ndofs == _kernel_dimension(tetrahedra, 2)
    assert {d.kind for d in gl.descriptors} == {"kernel"}
    np.testing.assert_allclose(basis.T @ basis, np.eye(gl.ndofs), atol=1e-12)
    assert duality_defect(gl) < 1e-10


def test_gl_rejects_low_order(square2):
    with pytest.raises(SpaceConstructionError):
        build_gl_space(square2, 1)


def test_gl_dead_zone_rejects_everything_inside(square2):
    # a dead zone covering all relative singular values below one always catches one
    with pytest.raises(SpaceConstructionError, match="dead zone"):
        build_gl_space(square2, 2, dead_zone=(1e-30, 0.999999))


def test_morley_layout(square2):
    morley = build_morley_space(square2)
    assert morley.ndofs == 1 + 8
    kinds = [d.kind for d in morley.descriptors]
    assert kinds == ["vertex-value"] + ["face-normal-moment"] * 8


def test_morley_rejects_tetrahedra(tetrahedra):
    with pytest.raises(SpaceConstructionError):
        build_morley_space(tetrahedra)


def test_morley_normal_moments_are_single_valued(square2):
    morley = build_morley_space(square2)
    faces = square2.interior_faces
    first = face_moment_matrix(morley, faces, normal=True, side=0).toarray()
    second = face_moment_matrix(morley, faces, normal=True, side=1).toarray()
    np.testing.assert_allclose(first, second, atol=1e-12)
    np.testing.assert_allclose(first, np.hstack([np.zeros((8, 1)), np.eye(8)]), atol=1e-12)


def test_broken_space_elevation_keeps_values(square2, rng):
    broken = BrokenSpace(square2, 1)
    coefficients = rng.standard_normal(broken.size)
    elevated = broken.elevation(3) @ coefficients
    points = sample_point_set(square2)
    np.testing.assert_allclose(
        BrokenSpace(square2, 3).evaluate(points) @ elevated, broken.evaluate(points) @ coefficients, atol=1e-12
    )


def test_broken_space_split_rules(square2, tetrahedra):
    with pytest.raises(SpaceConstructionError):
        BrokenSpace(square2, 2, split="powell-sabin")
    with pytest.raises(SpaceConstructionError):
        BrokenSpace(tetrahedra, 2, split="ct")
    with pytest.raises(SpaceConstructionError):
        BrokenSpace(square2, 3, split="ct").elevation(4)


def test_broken_identity_space(square2):
    space = build_broken_space(square2, 2)
    assert space.kind is SpaceKind.BROKEN
    assert space.ndofs == 8 * 6


def test_field_checks_coefficient_count(cr_square2):
    with pytest.raises(ValueError):
        Field(cr_square2, np.zeros(cr_square2.ndofs + 1))


def test_field_evaluation_shapes(cr_square2, rng):
    field = cr_square2.field(rng.standard_normal(cr_square2.ndofs))
    points = sample_point_set(cr_square2.mesh)
    assert points.size == 8 * 6
    assert field.evaluate(points).shape == (points.size,)
    assert field.evaluate(points, 1).shape == (points.size, 2)
    assert field.evaluate(points, 2).shape == (points.size, 2, 2)
    doubled = 2.0 * field
    np.testing.assert_allclose(doubled.evaluate(points), 2.0 * field.evaluate(points))


def test_point_set_groups():
    point_set = PointSet(np.zeros((4, 2)), [3, 1, 3, 0])
    groups = point_set.element_groups()
    assert [element for element, _ in groups] == [0, 1, 3]
    assert groups[2][1].tolist() == [0, 2]
    with pytest.raises(ValueError):
        PointSet(np.zeros((2, 2)), [0])


def test_dof_functionals_realize_nodal_interpolation(square2):
    lagrange = build_lagrange_space(square2, 2)
    quadratic = BrokenSpace(square2, 2)
    coefficients = quadratic.interpolate(lambda x, element: x[:, 0] * (1 - x[:, 0]) * x[:, 1] * (1 - x[:, 1]))
    values = dof_functionals(lagrange, on=quadratic) @ coefficients
    nodes = lagrange.nodes.points[[d.entity for d in lagrange.descriptors]]
    expected = nodes[:, 0] * (1 - nodes[:, 0]) * nodes[:, 1] * (1 - nodes[:, 1])
    np.testing.assert_allclose(values, expected, atol=1e-13)


def test_dof_report(cr_square2):
    report = cr_square2.dof_report()
    assert report["count"] == cr_square2.ndofs
    assert report["kind"] == "cr"
    assert report["dofs"][0]["kind"] == "face-mean"
