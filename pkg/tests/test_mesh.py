import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hoirefine import shapes
from hoirefine.mesh import (Mesh, MeshError, MeshFormatError, NotWatertightError, inside, load_mesh,
                            save_mesh, signed_distance, signed_distances, vertex_adjacency)

from conftest import cube


def write(tmp_path, text):
    p = tmp_path / "m.obj"
    p.write_text(text)
    return p


# ------------------------------------------------------------------ load/save


def test_load_minimal(tmp_path):
    m = load_mesh(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    assert m.n_vertices == 3 and m.faces.tolist() == [[0, 1, 2]]


def test_load_degenerate_face_names_line(tmp_path):
    with pytest.raises(MeshFormatError, match="line 4"):
        load_mesh(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\n"))


def test_load_quad_fan(tmp_path):
    m = load_mesh(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"))
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_load_ignores_other_statements(tmp_path):
    text = "# c\nvn 0 0 1\nvt 0 0\no thing\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/1 3//1\n"
    m = load_mesh(write(tmp_path, text))
    assert m.faces.tolist() == [[0, 1, 2]]


@pytest.mark.parametrize("text, line", [
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", 4),
    ("v 0 0\n", 1),
    ("v 0 0 0\nv 1 0 0\nv a 1 0\n", 3),
    ("v 0 0 0\nv 1 0 0\nf 1 2\n", 3),
])
def test_load_errors_carry_line(tmp_path, text, line):
    with pytest.raises(MeshFormatError) as err:
        load_mesh(write(tmp_path, text))
    assert err.value.line == line


def test_save_load_roundtrip(tmp_path, rng):
    m = shapes.icosphere(30.0, 2)
    m = m.with_vertices(m.vertices + rng.normal(0, 0.1, m.vertices.shape))
    p = tmp_path / "s.obj"
    save_mesh(m, p)
    back = load_mesh(p)
    assert np.array_equal(back.faces, m.faces)
    np.testing.assert_allclose(back.vertices, m.vertices, atol=5e-7)
    assert all(len(line.split()[1].split(".")[1]) == 6 for line in p.read_text().splitlines()
               if line.startswith("v "))


def test_mesh_invariants():
    with pytest.raises(MeshError):
        Mesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(MeshError):
        Mesh(np.zeros((3, 3)), [[0, 1, 1]])
    with pytest.raises(MeshError):
        Mesh([[0, 0, np.nan], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


# -------------------------------------------------------------- adjacency


def test_adjacency_single_triangle():
    m = Mesh(np.eye(3), [[0, 1, 2]])
    assert vertex_adjacency(m).tolist() == [[0, 1], [0, 2], [1, 2]]


def test_adjacency_shared_edge():
    m = Mesh(np.random.default_rng(0).random((4, 3)), [[0, 1, 2], [1, 3, 2]])
    oracle = sorted({tuple(sorted(p)) for f in m.faces.tolist() for p in ((f[0], f[1]), (f[1], f[2]), (f[0], f[2]))})
    assert vertex_adjacency(m).tolist() == [list(p) for p in oracle]
    assert len(oracle) == 5


def test_adjacency_empty():
    assert vertex_adjacency(Mesh(np.eye(3), np.zeros((0, 3), int))).shape == (0, 2)


@given(st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_adjacency_properties(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(3, 12))
    faces = [r.choice(n, 3, replace=False) for _ in range(int(r.integers(1, 15)))]
    e = vertex_adjacency(Mesh(r.random((n, 3)), faces))
    assert len(np.unique(e, axis=0)) == len(e)
    assert np.all(e[:, 0] < e[:, 1])
    assert len(e) <= 3 * len(faces)


# ---------------------------------------------------------- signed distance


def test_cube_center_and_outside():
    c = cube(10.0)
    r = signed_distance([0, 0, 0], c)
    assert r.distance == pytest.approx(-10.0, abs=1e-12)
    r = signed_distance([25, 0, 0], c)
    assert r.distance == pytest.approx(15.0, abs=1e-12)
    np.testing.assert_allclose(r.closest_point, [10, 0, 0], atol=1e-12)
    assert abs(abs(r.distance) - np.linalg.norm(np.array([25, 0, 0]) - r.closest_point)) < 1e-9


def _pt_tri_brute(p, a, b, c, samples=None):
    """Point-triangle distance by explicit case analysis on the plane projection."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    q = p - np.dot(p - a, n) * n
    # barycentric inside test of the projection
    v0, v1, v2 = b - a, c - a, q - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    if v >= 0 and w >= 0 and v + w <= 1:
        return np.linalg.norm(p - q)

    def seg(p, x, y):
        t = np.clip(np.dot(p - x, y - x) / np.dot(y - x, y - x), 0, 1)
        return np.linalg.norm(p - (x + t * (y - x)))
    return min(seg(p, a, b), seg(p, b, c), seg(p, c, a))


def _ray_parity_inside(p, mesh, direction):
    """Moller-Trumbore ray casting; odd number of hits means inside."""
    hits = 0
    for a, b, c in mesh.triangles():
        e1, e2 = b - a, c - a
        h = np.cross(direction, e2)
        det = e1 @ h
        if abs(det) < 1e-12:
            continue
        s = p - a
        u = (s @ h) / det
        if u < 0 or u > 1:
            continue
        q = np.cross(s, e1)
        v = (direction @ q) / det
        if v < 0 or u + v > 1:
            continue
        if (e2 @ q) / det > 0:
            hits += 1
    return hits % 2 == 1


def test_signed_distance_vs_bruteforce(rng):
    mesh = shapes.icosphere(20.0, 1)
    mesh = mesh.with_vertices(mesh.vertices * np.array([1.0, 0.7, 1.3]))
    pts = rng.uniform(-30, 30, size=(100, 3))
    got = signed_distances(pts, mesh)
    direction = np.array([0.5773, 0.5774, 0.5775])
    for p, g in zip(pts, got):
        d = min(_pt_tri_brute(p, *t) for t in mesh.triangles())
        sign = -1.0 if _ray_parity_inside(p, mesh, direction) else 1.0
        assert abs(g - sign * d) < 1e-6


def test_sign_flips_with_reversed_winding(rng):
    m = shapes.icosphere(15.0, 2)
    flipped = Mesh(m.vertices, m.faces[:, ::-1])
    pts = rng.uniform(-20, 20, size=(50, 3))
    before, after = signed_distances(pts, m), signed_distances(pts, flipped)
    # the inside test is winding > 0.5, so reversal moves inside points to
    # positive distance; points with winding 0 keep their positive sign
    ins = before < 0
    assert ins.sum() > 5 and (~ins).sum() > 5
    np.testing.assert_allclose(after[ins], -before[ins], atol=1e-12)
    np.testing.assert_allclose(after[~ins], before[~ins], atol=1e-12)


def test_open_mesh_rejected_with_edge():
    m = Mesh(cube(10.0).vertices, cube(10.0).faces[:-1])
    with pytest.raises(NotWatertightError) as err:
        signed_distance([0, 0, 0], m)
    assert len(err.value.edge) == 2


def test_inside_matches_volume_sign():
    m = shapes.box(40, 40, 40)
    assert m.signed_volume() == pytest.approx(64000.0)
    assert inside(np.array([[0, 0, 0], [19.9, 0, 0], [20.1, 0, 0]]), m).tolist() == [True, True, False]
