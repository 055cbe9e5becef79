import numpy as np
import pytest

from visrecon.geom import PointCloud, TriangleMesh
from visrecon.meshio import (MeshIOError, load_mesh, load_point_cloud,
                             save_mesh, save_point_cloud)


def test_ascii_ply_three_vertices(tmp_path):
    path = tmp_path / "tri.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n0 0 0\n1.5 0 0\n0 2.25 0\n")
    cloud = load_point_cloud(str(path))
    assert np.array_equal(cloud.positions,
                          [[0, 0, 0], [1.5, 0, 0], [0, 2.25, 0]])
    assert cloud.colors is None


def test_binary_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    cloud = PointCloud(positions=rng.uniform(-10, 10, (57, 3)),
                       colors=rng.integers(0, 256, (57, 3), dtype=np.uint8))
    p1 = tmp_path / "a.ply"
    p2 = tmp_path / "b.ply"
    save_point_cloud(cloud, str(p1))
    again = load_point_cloud(str(p1))
    save_point_cloud(again, str(p2))
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(again.colors, cloud.colors)


def test_truncated_body_reports_error(tmp_path):
    path = tmp_path / "short.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 10\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n" + "0 0 0\n" * 9)
    with pytest.raises(MeshIOError, match="truncated element data"):
        load_point_cloud(str(path))


def test_truncated_binary_reports_offset(tmp_path):
    head = ("ply\nformat binary_little_endian 1.0\nelement vertex 10\n"
            "property float x\nproperty float y\nproperty float z\n"
            "end_header\n").encode()
    path = tmp_path / "short.ply"
    path.write_bytes(head + b"\0" * (12 * 9))
    with pytest.raises(MeshIOError, match="truncated element data"):
        load_point_cloud(str(path))


def test_non_float_coordinates_rejected(tmp_path):
    path = tmp_path / "int.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property int x\nproperty float y\nproperty float z\n"
        "end_header\n0 0 0\n")
    with pytest.raises(MeshIOError, match="non-float"):
        load_point_cloud(str(path))


def test_missing_file():
    with pytest.raises(MeshIOError, match="file not found"):
        load_point_cloud("/nonexistent/cloud.ply")


def test_malformed_header(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text("ply\nformat ascii 1.0\nelemnt vertex 1\nend_header\n")
    with pytest.raises(MeshIOError):
        load_point_cloud(str(path))


def test_unit_cube_obj(tmp_path):
    path = tmp_path / "cube.obj"
    lines = []
    for i in (0, 1):
        for j in (0, 1):
            for k in (0, 1):
                lines.append("v %d %d %d" % (i, j, k))
    quads = [(1, 2, 4, 3), (5, 7, 8, 6), (1, 5, 6, 2), (3, 4, 8, 7),
             (1, 3, 7, 5), (2, 6, 8, 4)]
    for q in quads:
        lines.append("f %d %d %d %d" % q)
    path.write_text("\n".join(lines) + "\n")
    mesh = load_mesh(str(path))
    assert mesh.n_vertices == 8
    assert mesh.n_faces == 12


def test_obj_quad_fan_rule(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    mesh = load_mesh(str(path))
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_out_of_range_face(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 100\n")
    with pytest.raises(MeshIOError, match="face 0 references vertex 99"):
        load_mesh(str(path))


def test_obj_skipped_records_warn(tmp_path):
    path = tmp_path / "extra.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nusemtl m\n"
                    "f 1 2 3\n")
    with pytest.warns(UserWarning, match="ignored 2"):
        mesh = load_mesh(str(path))
    assert mesh.n_faces == 1


def test_mesh_ply_roundtrip_identity(tmp_path):
    rng = np.random.default_rng(3)
    verts = rng.uniform(-1, 1, (20, 3)).astype(np.float32).astype(np.float64)
    faces = rng.integers(0, 20, (30, 3))
    ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) \
        & (faces[:, 0] != faces[:, 2])
    mesh = TriangleMesh(vertices=verts, faces=faces[ok])
    p1 = tmp_path / "m1.ply"
    p2 = tmp_path / "m2.ply"
    save_mesh(mesh, str(p1))
    again = load_mesh(str(p1))
    assert np.array_equal(again.vertices, mesh.vertices)
    assert np.array_equal(again.faces, mesh.faces)
    save_mesh(again, str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_mesh_ascii_ply_roundtrip(tmp_path):
    mesh = TriangleMesh(vertices=np.eye(3), faces=np.array([[0, 1, 2]]))
    path = tmp_path / "m.ply"
    save_mesh(mesh, str(path), ascii=True)
    again = load_mesh(str(path))
    assert np.array_equal(again.faces, mesh.faces)
    assert np.allclose(again.vertices, mesh.vertices)


def test_ply_face_out_of_range(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "element face 1\nproperty list uchar int vertex_indices\n"
        "end_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n")
    with pytest.raises(MeshIOError, match="face 0 references vertex 9"):
        load_mesh(str(path))


def test_obj_mesh_roundtrip(tmp_path):
    mesh = TriangleMesh(vertices=np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.5]]),
                        faces=np.array([[0, 1, 2]]))
    path = tmp_path / "m.obj"
    save_mesh(mesh, str(path))
    again = load_mesh(str(path))
    assert np.array_equal(again.vertices, mesh.vertices)
    assert np.array_equal(again.faces, mesh.faces)
