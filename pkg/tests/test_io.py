import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linewire.geometry import Camera, GeometryError, LineCloud, LineLabel, Support2D, Wireframe
from linewire.io import (
    Mesh,
    ParseError,
    WeightsFile,
    read_cameras,
    read_line_cloud,
    read_mesh,
    read_supports,
    read_weights_file,
    read_wireframe,
    write_cameras,
    write_line_cloud,
    write_mesh,
    write_supports,
    write_weights_file,
    write_wireframe,
)

from conftest import cube_wireframe, random_cloud


class TestLineCloud:
    def test_plain_row(self, tmp_path):
        p = tmp_path / "lc.txt"
        p.write_text("0 0 0 1 0 0\n")
        lc = read_line_cloud(p)
        assert len(lc) == 1
        np.testing.assert_array_equal(lc.array[0], [[0, 0, 0], [1, 0, 0]])
        assert lc.labels is None

    def test_obj_subset(self, tmp_path):
        p = tmp_path / "lc.obj"
        p.write_text("v 0 0 0\nv 1 1 1\nl 1 2\n")
        lc = read_line_cloud(p)
        assert len(lc) == 1
        np.testing.assert_array_equal(lc.array[0], [[0, 0, 0], [1, 1, 1]])

    def test_labeled_row(self, tmp_path):
        p = tmp_path / "lc.txt"
        p.write_text("0 0 0 1 0 0 1 3 0.1 5 0.2\n")
        lc = read_line_cloud(p)
        lab = lc.label(0)
        assert (lab.f, lab.i1, lab.d1, lab.i2, lab.d2) == (1, 3, 0.1, 5, 0.2)

    def test_malformed_row_names_line(self, tmp_path):
        p = tmp_path / "lc.txt"
        p.write_text("0 0 0 1 0 0\n0 0 nope 1 0 0\n")
        with pytest.raises(ParseError, match=r":2"):
            read_line_cloud(p)

    def test_wrong_column_count_names_line(self, tmp_path):
        p = tmp_path / "lc.txt"
        p.write_text("# comment\n0 0 0 1 0 0 7\n")
        with pytest.raises(ParseError, match=r":2"):
            read_line_cloud(p)

    def test_l_record_with_three_indices(self, tmp_path):
        p = tmp_path / "lc.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 2 0 0\nl 1 2 3\n")
        with pytest.raises(ParseError, match="exactly 2"):
            read_line_cloud(p)

    def test_round_trip_unlabeled(self, tmp_path, rng):
        lc = random_cloud(rng, 25)
        path = tmp_path / "lc.txt"
        write_line_cloud(lc, path)
        lc2 = read_line_cloud(path)
        write_line_cloud(lc2, tmp_path / "lc2.txt")
        assert (tmp_path / "lc2.txt").read_bytes() == path.read_bytes()

    def test_round_trip_labeled(self, tmp_path):
        labels = [LineLabel(1, 0, 0.25, 1, 0.5), LineLabel(0)]
        lc = LineCloud([[(0, 0, 0), (1, 0, 0)], [(0, 1, 0), (1, 1, 0)]], labels=labels)
        path = tmp_path / "lab.txt"
        write_line_cloud(lc, path)
        lc2 = read_line_cloud(path)
        assert lc2.label(0) == labels[0]
        assert lc2.label(1) == labels[1]


class TestWireframe:
    def test_unit_square_round_trip(self, tmp_path):
        wf = Wireframe(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float),
                       np.array([(0, 1), (1, 2), (2, 3), (0, 3)]))
        path = tmp_path / "sq.obj"
        write_wireframe(wf, path)
        wf2 = read_wireframe(path)
        np.testing.assert_array_equal(wf2.vertices, wf.vertices)
        assert wf2.edge_set() == wf.edge_set()

    def test_empty_round_trip(self, tmp_path):
        wf = Wireframe(np.zeros((0, 3)), np.zeros((0, 2), dtype=int))
        path = tmp_path / "empty.obj"
        write_wireframe(wf, path)
        assert path.read_text().startswith("#")
        wf2 = read_wireframe(path)
        assert wf2.n_vertices == 0 and wf2.n_edges == 0

    def test_cube_canonical_ordering(self, tmp_path):
        # sort-then-compare oracle: a shuffled edge list serializes identically
        wf = cube_wireframe()
        shuffled = Wireframe(wf.vertices, wf.edges[::-1][:, ::-1])
        p1, p2 = tmp_path / "a.obj", tmp_path / "b.obj"
        write_wireframe(wf, p1)
        write_wireframe(shuffled, p2)
        assert p1.read_bytes() == p2.read_bytes()
        wf2 = read_wireframe(p1)
        assert sorted(map(tuple, wf2.edges.tolist())) == sorted(map(tuple, wf.edges.tolist()))

    def test_second_cycle_bit_identical(self, tmp_path, rng):
        verts = rng.normal(size=(6, 3)) * 13.7
        edges = np.array([(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
        p1, p2 = tmp_path / "w1.obj", tmp_path / "w2.obj"
        write_wireframe(Wireframe(verts, edges), p1)
        write_wireframe(read_wireframe(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_dangling_index_error(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nl 1 2\n")
        with pytest.raises(ParseError, match="out of range"):
            read_wireframe(p)

    def test_refuses_invalid_wireframe(self, tmp_path):
        wf = Wireframe(np.array([[0, 0, 0], [1, 0, 0]], float), np.array([(0, 0)]))
        with pytest.raises(GeometryError):
            write_wireframe(wf, tmp_path / "x.obj")


class TestCameras:
    def _cam(self):
        return Camera(np.diag([500.0, 500.0, 1.0]), np.eye(3), np.array([0.0, 0.0, 4.0]), 640, 480)

    def test_valid_identity_camera(self, tmp_path):
        path = tmp_path / "cams.json"
        write_cameras([self._cam()], path)
        cams = read_cameras(path)
        assert len(cams) == 1
        assert cams[0].width == 640

    def test_reflection_rejected(self, tmp_path):
        path = tmp_path / "cams.json"
        doc = ('{"cameras": [{"intrinsics": [[500,0,320],[0,500,240],[0,0,1]], '
               '"rotation": [[1,0,0],[0,1,0],[0,0,-1]], "translation": [0,0,0], '
               '"width": 640, "height": 480}]}')
        path.write_text(doc)
        with pytest.raises(ParseError, match="reflection"):
            read_cameras(path)

    def test_non_orthonormal_rejected(self, tmp_path):
        path = tmp_path / "cams.json"
        doc = ('{"cameras": [{"intrinsics": [[500,0,320],[0,500,240],[0,0,1]], '
               '"rotation": [[1,0.01,0],[0,1,0],[0,0,1]], "translation": [0,0,0], '
               '"width": 640, "height": 480}]}')
        path.write_text(doc)
        with pytest.raises(ParseError, match="orthonormal"):
            read_cameras(path)

    def test_round_trip_field_wise(self, tmp_path, rng):
        # field-wise compare oracle
        angle = 0.7
        r = np.array([[np.cos(angle), -np.sin(angle), 0],
                      [np.sin(angle), np.cos(angle), 0],
                      [0, 0, 1.0]])
        cam = Camera(np.array([[400.0, 0.5, 320.0], [0, 410.0, 240.0], [0, 0, 1.0]]),
                     r, rng.normal(size=3), 800, 600)
        path = tmp_path / "cams.json"
        write_cameras([cam], path)
        cam2 = read_cameras(path)[0]
        np.testing.assert_array_equal(cam2.intrinsics, cam.intrinsics)
        np.testing.assert_array_equal(cam2.rotation, cam.rotation)
        np.testing.assert_array_equal(cam2.translation, cam.translation)
        assert (cam2.width, cam2.height) == (cam.width, cam.height)


class TestSupports:
    def test_round_trip(self, tmp_path):
        sup = [
            [Support2D(0, (1.0, 2.0), (3.0, 4.0)), Support2D(1, (5.0, 6.0), (7.0, 8.0))],
            [],
            [Support2D(2, (0.0, 0.0), (1.0, 1.0))],
        ]
        path = tmp_path / "sup.json"
        write_supports(sup, path)
        back = read_supports(path, 3)
        assert len(back[0]) == 2 and len(back[1]) == 0 and len(back[2]) == 1
        assert back[0][1].view == 1
        np.testing.assert_array_equal(back[2][0].b, [1.0, 1.0])

    def test_out_of_range_key(self, tmp_path):
        path = tmp_path / "sup.json"
        path.write_text('{"supports": {"9": []}}')
        with pytest.raises(ParseError, match="out of range"):
            read_supports(path, 3)


class TestMesh:
    def test_round_trip(self, tmp_path):
        mesh = Mesh(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float),
                    [(0, 1, 2), (0, 2, 3)])
        path = tmp_path / "m.obj"
        write_mesh(mesh, path)
        m2 = read_mesh(path)
        np.testing.assert_array_equal(m2.vertices, mesh.vertices)
        assert m2.faces == mesh.faces

    def test_quad_faces(self, tmp_path):
        p = tmp_path / "m.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        assert read_mesh(p).faces == [(0, 1, 2, 3)]


class TestWeights:
    def test_round_trip_bit_equality(self, tmp_path, rng):
        tensors = {
            "fc.0.weight": rng.normal(size=(7, 64)),
            "fc.0.bias": rng.normal(size=64),
            "scalar.step": np.array(42.0),
        }
        wf = WeightsFile(tensors=tensors, meta={"kind": "test"})
        path = tmp_path / "w.lw"
        write_weights_file(wf, path)
        back = read_weights_file(path)
        assert back.version == 1
        assert list(back.tensors) == list(tensors)
        for name in tensors:
            assert back.tensors[name].dtype == np.float64
            assert np.array_equal(back.tensors[name], np.asarray(tensors[name], dtype=np.float64))
        assert back.meta == {"kind": "test"}

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "w.lw"
        path.write_bytes(b'{"magic": "other"}\n')
        with pytest.raises(ParseError, match="magic"):
            read_weights_file(path)

    def test_unknown_version(self, tmp_path):
        path = tmp_path / "w.lw"
        path.write_bytes(b'{"magic": "linewire-weights", "version": 99, "tensors": []}\n')
        with pytest.raises(ParseError, match="version"):
            read_weights_file(path)

    def test_truncated_tensor(self, tmp_path):
        path = tmp_path / "w.lw"
        header = b'{"magic": "linewire-weights", "version": 1, "tensors": [{"name": "a", "shape": [4]}]}\n'
        path.write_bytes(header + b"\x00" * 8)
        with pytest.raises(ParseError, match="truncated"):
            read_weights_file(path)


class TestArbitraryBytes:
    @given(st.binary(max_size=400))
    @settings(max_examples=120, deadline=None)
    def test_parsers_never_crash(self, tmp_path_factory, data):
        path = tmp_path_factory.mktemp("fuzz") / "blob"
        path.write_bytes(data)
        for reader in (read_line_cloud, read_wireframe, read_mesh, read_cameras,
                       lambda p: read_supports(p, 4), read_weights_file):
            try:
                reader(path)
            except ParseError:
                pass

    @given(st.text(max_size=300))
    @settings(max_examples=80, deadline=None)
    def test_text_parsers_never_crash(self, tmp_path_factory, text):
        path = tmp_path_factory.mktemp("fuzz") / "blob.txt"
        path.write_text(text, errors="replace")
        for reader in (read_line_cloud, read_wireframe, read_mesh):
            try:
                reader(path)
            except ParseError:
                pass
