import numpy as np
import pytest

from minball_mesh.io import load_mesh, load_pointcloud, polyline_chains, save_mesh, save_pointcloud, to_svg
from minball_mesh.shapes import circle_mesh, sphere_mesh
from minball_mesh.tessellation import Mesh


def test_xyz_round_trip_is_exact(tmp_path):
    cloud = np.random.default_rng(0).random((50, 3))
    save_pointcloud(cloud, tmp_path / "c.xyz")
    assert np.array_equal(load_pointcloud(tmp_path / "c.xyz"), cloud)


def test_xyz_accepts_commas_and_comments(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# header\n0,1\n2 3\n\n")
    assert load_pointcloud(p).tolist() == [[0, 1], [2, 3]]


def test_xyz_errors_name_the_line(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("0 0 0\n1 2\n")
    with pytest.raises(ValueError, match=":2:"):
        load_pointcloud(p)
    p.write_text("")
    with pytest.raises(ValueError):
        load_pointcloud(p)


def test_ascii_ply(tmp_path):
    p = tmp_path / "c.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                 "property float z\nproperty uchar red\nend_header\n0 1 2 255\n3 4 5 0\n")
    assert load_pointcloud(p).tolist() == [[0, 1, 2], [3, 4, 5]]


def test_binary_ply(tmp_path):
    pts = np.random.default_rng(1).random((10, 3))
    header = ("ply\nformat binary_little_endian 1.0\nelement vertex 10\n"
              "property double x\nproperty double y\nproperty double z\nend_header\n").encode()
    p = tmp_path / "c.ply"
    p.write_bytes(header + pts.astype("<f8").tobytes())
    assert np.array_equal(load_pointcloud(p), pts)


@pytest.mark.parametrize("mesh", [circle_mesh(32), sphere_mesh(1)])
def test_obj_round_trip(tmp_path, mesh):
    save_mesh(mesh, tmp_path / "m.obj")
    back = load_mesh(tmp_path / "m.obj")
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.faces, mesh.faces)
    assert (tmp_path / "m.svg").exists() == (mesh.dim == 2)


def test_obj_polygons_are_triangulated(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n")
    assert load_mesh(p).faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_polyline_chains():
    closed = polyline_chains(np.array([[0, 1], [1, 2], [2, 0]]))
    assert len(closed) == 1 and closed[0][0] == closed[0][-1] and len(closed[0]) == 4
    opened = polyline_chains(np.array([[0, 1], [1, 2], [5, 6]]))
    assert sorted(len(c) for c in opened) == [2, 3]


def test_svg_closes_loops():
    svg = to_svg(circle_mesh(8))
    assert svg.count("<path") == 1 and " Z" in svg
    open_line = Mesh(np.array([[0, 0], [1, 0], [2, 1]], float), np.array([[0, 1], [1, 2]]))
    assert " Z" not in to_svg(open_line)
