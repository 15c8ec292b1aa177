from __future__ import annotations

import io
import math

import numpy as np
import pytest
from scipy.stats import qmc

from ncfem.mesh import (
    MeshError,
    build_mesh,
    format_mesh,
    generate_mesh,
    integrate_barycentric_monomial,
    jump_moment,
    load_mesh_source,
    neighbor_shape_constants,
    parse_mesh,
    read_mesh,
    refine_uniform,
    write_mesh,
)
from ncfem.quadrature import QuadratureError


def test_square_mesh_topology(square2):
    assert (square2.n_vertices, square2.n_elements, square2.n_faces) == (9, 8, 16)
    assert square2.interior_faces.size == 8
    assert square2.boundary_faces.size == 8
    assert square2.interior_vertices.tolist() == [4]
    assert square2.volumes.sum() == pytest.approx(1.0)


def test_crisscross_mesh_topology(crisscross1):
    assert (crisscross1.n_vertices, crisscross1.n_elements, crisscross1.n_faces) == (5, 4, 8)
    assert crisscross1.interior_vertices.tolist() == [4]
    np.testing.assert_allclose(crisscross1.vertices[4], [0.5, 0.5])


def test_lshape_mesh_area():
    mesh = generate_mesh("lshape", 2)
    assert mesh.volumes.sum() == pytest.approx(3.0)
    assert np.all(~((mesh.vertices[:, 0] > 0) & (mesh.vertices[:, 1] < 0)))


def test_faces_are_sorted_and_oriented(square2):
    assert np.all(np.diff(square2.faces, axis=1) > 0)
    interior = square2.face_elements[square2.interior_faces]
    assert np.all(interior[:, 0] < interior[:, 1])
    for face in square2.interior_faces:
        k1 = square2.face_elements[face, 0]
        centroid = square2.element_vertices(k1).mean(axis=0)
        # n_F points away from K1
        assert (square2.face_midpoints[face] - centroid) @ square2.face_normals[face] > 0


def test_shape_data(square2):
    assert square2.gamma == pytest.approx(1.0 + math.sqrt(2.0))
    assert square2.h_max == pytest.approx(math.sqrt(2.0) / 2.0)
    constants = neighbor_shape_constants(square2)
    assert constants["volume_ratio"] == pytest.approx(1.0)
    assert constants["gamma"] == pytest.approx(square2.gamma)


def test_degenerate_element_rejected():
    with pytest.raises(MeshError, match="degenerate"):
        build_mesh([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [[0, 1, 2]])


def test_face_shared_by_three_elements_rejected():
    vertices = [[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [0.5, 2.0]]
    with pytest.raises(MeshError, match="more than two"):
        build_mesh(vertices, [[0, 1, 2], [0, 1, 3], [0, 1, 4]])


def test_hanging_vertex_rejected():
    vertices = [[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [1.0, 0.0], [1.0, -1.0]]
    with pytest.raises(MeshError, match="face-to-face"):
        build_mesh(vertices, [[0, 1, 2], [0, 3, 4], [3, 1, 4]])


def test_unknown_vertex_rejected():
    with pytest.raises(MeshError):
        build_mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 3]])


def test_tetrahedral_mesh(tetrahedra):
    assert tetrahedra.dim == 3
    assert tetrahedra.n_faces == 7
    assert tetrahedra.interior_faces.size == 1
    assert tetrahedra.interior_vertices.size == 0


def test_refine_uniform(square2):
    fine = refine_uniform(square2)
    assert fine.n_elements == 4 * square2.n_elements
    assert fine.h_max == pytest.approx(square2.h_max / 2.0)
    assert fine.volumes.sum() == pytest.approx(1.0)
    np.testing.assert_array_equal(fine.parents, np.repeat(np.arange(square2.n_elements), 4))
    for child, parent in enumerate(fine.parents):
        assert fine.volumes[child] == pytest.approx(square2.volumes[parent] / 4.0)


def test_refine_uniform_rejects_tetrahedra(tetrahedra):
    with pytest.raises(MeshError):
        refine_uniform(tetrahedra)


def test_integrate_barycentric_monomial():
    reference = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert integrate_barycentric_monomial(reference, (1, 0, 0)) == pytest.approx(1.0 / 6.0)
    assert integrate_barycentric_monomial(reference, (1, 1, 1)) == pytest.approx(1.0 / 120.0)
    with pytest.raises(ValueError):
        integrate_barycentric_monomial(reference, (1, 1))


def _sampled_monomial_integral(simplex: np.ndarray, alpha: np.ndarray, points: np.ndarray) -> float:
    """Collapsed-cube estimate of ``int_K prod lambda_i ** alpha_i``."""
    n = simplex.shape[0] - 1
    edges = (simplex[1:] - simplex[0]).T
    measure = abs(np.linalg.det(edges)) / math.factorial(n)
    bary = np.empty((points.shape[0], n + 1))
    remaining = np.ones(points.shape[0])
    jacobian = np.ones(points.shape[0])
    for i in range(n):
        bary[:, i] = remaining * points[:, i]
        remaining = remaining * (1.0 - points[:, i])
        jacobian = jacobian * (1.0 - points[:, i]) ** (n - 1 - i)
    bary[:, n] = remaining
    values = np.prod(bary ** alpha[None, :], axis=1) * jacobian
    return math.factorial(n) * measure * float(values.mean())


@pytest.mark.parametrize("n", [2, 3])
def test_monomial_integrals_match_a_sampled_estimate(rng, n):
    points = qmc.Sobol(d=n, scramble=False).random_base2(m=16)
    for _ in range(10):
        simplex = rng.uniform(-1.0, 1.0, size=(n + 1, n))
        alpha = rng.integers(0, 4, size=n + 1)
        while alpha.sum() > 8:
            alpha[np.argmax(alpha)] -= 1
        estimate = _sampled_monomial_integral(simplex, alpha, points)
        assert integrate_barycentric_monomial(simplex, tuple(int(a) for a in alpha)) == pytest.approx(estimate, rel=1e-3)


def test_jump_moments_of_crouzeix_raviart_functions_vanish(cr_square2):
    mesh = cr_square2.mesh
    for j in range(cr_square2.ndofs):
        field = cr_square2.field(np.eye(cr_square2.ndofs)[j])
        for face in range(mesh.n_faces):
            assert abs(jump_moment(mesh, field, face)) < 1e-13


def test_jump_moment_rejects_low_quadrature(cr_square2):
    field = cr_square2.field(np.ones(cr_square2.ndofs))
    with pytest.raises(QuadratureError):
        jump_moment(cr_square2.mesh, field, 0, q_degree=2, quadrature_degree=1)


def test_text_format_round_trip(tmp_path, square2):
    path = tmp_path / "square.mesh"
    write_mesh(square2, path)
    loaded = read_mesh(path)
    np.testing.assert_array_equal(loaded.vertices, square2.vertices)
    np.testing.assert_array_equal(loaded.elements, square2.elements)
    assert format_mesh(loaded) == path.read_text(encoding="utf-8")
    assert load_mesh_source(str(path)).n_elements == 8


def test_write_mesh_to_stream(square2):
    buffer = io.StringIO()
    write_mesh(square2, buffer)
    assert buffer.getvalue().splitlines()[0] == "2 9 8"


@pytest.mark.parametrize(
    "text",
    [
        "",
        "2 3\n",
        "2 3 1\n0 0\n1 0\n0 1\n",
        "2 3 1\n0 0\n1 0\n0 1\n0 1 2\n0 1 2\n",
        "2 3 1\n0 0\n1 0\n0 x\n0 1 2\n",
        "2 3 1\n0 0 0\n1 0 0\n0 1 0\n0 1 2\n",
    ],
)
def test_malformed_text_rejected(text):
    with pytest.raises(MeshError):
        parse_mesh(text)


@pytest.mark.parametrize("source, elements", [("gen:square:2", 8), ("crisscross:2", 16), ("gen:lshape:1", 6)])
def test_generator_sources(source, elements):
    assert load_mesh_source(source).n_elements == elements


@pytest.mark.parametrize("source", ["gen:hexagon:2", "gen:square:two", "gen:square:0"])
def test_bad_generator_sources(source):
    with pytest.raises(MeshError):
        load_mesh_source(source)


def test_missing_mesh_file(tmp_path):
    with pytest.raises(MeshError):
        read_mesh(tmp_path / "nowhere.mesh")
