import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from hoirefine import autodiff as ad
from hoirefine import shapes
from hoirefine.losses import (LAMBDA_EDGE, LAMBDA_LAPLACE, UniformLaplacian, chamfer, edge_regularizer,
                              edge_regularizer_t, joint_l2, laplacian_loss, refine_loss, sample_surface,
                              vertex_l2)
from hoirefine.mesh import Mesh, vertex_adjacency
from hoirefine.metrics import (METRIC_KEYS, MetricsReport, evaluate, hand_joint_error, hand_mesh_error,
                               intersection_volume, max_penetration, object_error)

from conftest import cube


def lens_volume(r, d):
    return math.pi * (4 * r + d) * (2 * r - d) ** 2 / 12.0


def sphere(r, center, level=3):
    m = shapes.icosphere(r, level)
    return m.with_vertices(m.vertices + np.asarray(center, float))


def noisy(mesh, rng, s=1.0):
    return mesh.with_vertices(mesh.vertices + rng.normal(0, s, mesh.vertices.shape))


def rand_regressor(rng, n):
    r = rng.random((21, n))
    return r / r.sum(axis=1, keepdims=True)


# ------------------------------------------------------------------ losses


def test_vertex_l2(rng):
    m = shapes.icosphere(10.0, 1)
    assert vertex_l2(m, m) == 0.0
    assert vertex_l2(m.with_vertices(m.vertices + [1.0, 0, 0]), m) == pytest.approx(1.0, abs=1e-12)
    a, b = noisy(m, rng), noisy(m, rng)
    oracle = sum(sum((a.vertices[i, k] - b.vertices[i, k]) ** 2 for k in range(3))
                 for i in range(m.n_vertices)) / m.n_vertices
    assert vertex_l2(a, b) == pytest.approx(oracle, abs=1e-12)


def test_joint_l2(rng):
    m = shapes.icosphere(10.0, 1)
    reg = rand_regressor(rng, m.n_vertices)
    assert joint_l2(m, m, reg) == 0.0
    t = np.array([1.0, -2.0, 0.5])
    assert joint_l2(m.with_vertices(m.vertices + t), m, reg) == pytest.approx(t @ t, abs=1e-10)
    a, b = noisy(m, rng), noisy(m, rng)
    ja, jb = reg @ a.vertices, reg @ b.vertices
    assert joint_l2(a, b, reg) == pytest.approx(np.mean(np.sum((ja - jb) ** 2, axis=1)), abs=1e-12)


def test_chamfer(rng):
    p = rng.normal(size=(30, 3))
    assert chamfer(p, p) == 0.0
    assert chamfer([[0, 0, 0]], [[3, 0, 0]]) == pytest.approx(18.0)
    q = rng.normal(size=(17, 3))
    assert chamfer(p, q) == pytest.approx(chamfer(q, p), abs=1e-12)
    oracle = (np.mean([min(np.sum((x - y) ** 2) for y in q) for x in p])
              + np.mean([min(np.sum((x - y) ** 2) for x in p) for y in q]))
    assert chamfer(p, q) == pytest.approx(oracle, abs=1e-12)
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), q)


def test_edge_regularizer(rng):
    ico = shapes.icosphere(7.0, 0)
    assert edge_regularizer(ico) == pytest.approx(0.0, abs=1e-9)
    v = np.array([[0.0, 0, 0], [1, 0, 0], [4, 0, 0]])
    assert float(edge_regularizer_t(v, np.array([[0, 1], [1, 2]])).value) == pytest.approx(1.0)
    m = noisy(shapes.icosphere(7.0, 1), rng)
    lengths = [np.linalg.norm(m.vertices[i] - m.vertices[j]) for i, j in vertex_adjacency(m)]
    mu = sum(lengths) / len(lengths)
    assert edge_regularizer(m) == pytest.approx(sum((x - mu) ** 2 for x in lengths) / len(lengths), abs=1e-12)


def _lap_deltas(mesh):
    lap = UniformLaplacian.of(mesh)
    return mesh.vertices - ad.spmm(lap.src, lap.dst, lap.weight, mesh.vertices, lap.n).value


def test_laplacian_zero_cases():
    # planar regular grid: interior vertices sit at their neighbours' centroid
    n = 5
    xy = np.array([[i, j, 0.0] for i in range(n) for j in range(n)])
    faces = []
    for i in range(n - 1):
        for j in range(n - 1):
            a, b, c, d = i * n + j, (i + 1) * n + j, (i + 1) * n + j + 1, i * n + j + 1
            faces += [[a, b, c], [a, c, d]]
    deltas = _lap_deltas(Mesh(xy, faces))
    interior = [i * n + j for i in range(1, n - 1) for j in range(1, n - 1)]
    np.testing.assert_allclose(deltas[interior], 0.0, atol=1e-12)
    # octahedron with the apex at the centroid of its four ring neighbours
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 0.0], [0, 0, -1]])
    f = [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]]
    assert np.linalg.norm(_lap_deltas(Mesh(v, f))[4]) < 1e-12


def test_laplacian_loop_oracle(rng):
    m = noisy(shapes.icosphere(7.0, 1), rng)
    nbrs = {i: set() for i in range(m.n_vertices)}
    for i, j in vertex_adjacency(m):
        nbrs[i].add(j)
        nbrs[j].add(i)
    oracle = np.mean([np.sum((m.vertices[i] - np.mean(m.vertices[sorted(nb)], axis=0)) ** 2)
                      for i, nb in nbrs.items()])
    assert laplacian_loss(m) == pytest.approx(oracle, abs=1e-12)


def test_refine_loss_composition(rng):
    hand = shapes.icosphere(10.0, 1)
    obj = noisy(shapes.icosphere(20.0, 1), rng, 0.5)
    reg = rand_regressor(rng, hand.n_vertices)
    same = refine_loss(hand, obj, hand, obj, reg)
    assert same.l_v == same.l_j == same.l_cd == 0.0
    assert same.total == pytest.approx(LAMBDA_EDGE * edge_regularizer(obj) + LAMBDA_LAPLACE * laplacian_loss(obj))
    err = rng.normal(size=hand.vertices.shape)
    one = refine_loss(hand.with_vertices(hand.vertices + err), obj, hand, obj, reg)
    two = refine_loss(hand.with_vertices(hand.vertices + 2 * err), obj, hand, obj, reg)
    assert two.l_v == pytest.approx(4 * one.l_v, rel=1e-12)
    hp, op = noisy(hand, rng), noisy(obj, rng)
    pts = sample_surface(obj, 50, rng)
    b = refine_loss(hp, op, hand, obj, reg, pts)
    expected = (vertex_l2(hp, hand) + joint_l2(hp, hand, reg)
                + chamfer(op.vertices, pts) + 2 * edge_regularizer(op) + 0.1 * laplacian_loss(op))
    assert b.total == pytest.approx(expected, abs=1e-10)
    assert b.hand == pytest.approx(b.l_v + b.l_j) and b.obj == pytest.approx(b.total - b.hand)


def test_rigid_invariance(rng):
    hand = noisy(shapes.icosphere(10.0, 1), rng)
    gt = noisy(hand, rng)
    reg = rand_regressor(rng, hand.n_vertices)
    rot = Rotation.random(random_state=1).as_matrix()
    t = rng.normal(size=3) * 30

    def tf(m):
        return m.with_vertices(m.vertices @ rot.T + t)

    assert vertex_l2(tf(hand), tf(gt)) == pytest.approx(vertex_l2(hand, gt), abs=1e-9)
    assert joint_l2(tf(hand), tf(gt), reg) == pytest.approx(joint_l2(hand, gt, reg), abs=1e-9)
    assert chamfer(tf(hand).vertices, tf(gt).vertices) == pytest.approx(chamfer(hand.vertices, gt.vertices),
                                                                         abs=1e-9)


def test_sample_surface_on_sphere(rng):
    pts = sample_surface(shapes.icosphere(10.0, 3), 200, rng)
    r = np.linalg.norm(pts, axis=1)
    assert pts.shape == (200, 3) and np.all(r <= 10.0 + 1e-9) and np.all(r > 9.8)


# ------------------------------------------------------------------ metrics


def test_penetration_disjoint_zero():
    assert max_penetration(sphere(10, [0, 0, 0]), sphere(10, [30, 0, 0])) == 0.0
    assert intersection_volume(sphere(10, [0, 0, 0]), sphere(10, [30, 0, 0])) == 0.0


def test_penetration_center_vertex():
    hand = Mesh([[0, 0, 0], [100, 0, 0], [100, 1, 0]], [[0, 1, 2]])
    assert max_penetration(hand, sphere(10.0, [0, 0, 0])) == pytest.approx(10.0, abs=0.05)


def test_penetration_sphere_pair():
    hand, obj = sphere(30.0, [0, 0, 0]), sphere(30.0, [40, 0, 0])
    assert hand.n_vertices == 642
    assert abs(max_penetration(hand, obj) - 20.0) <= 0.5


def test_penetration_asymmetric():
    big, small = sphere(30.0, [0, 0, 0]), sphere(5.0, [27, 0, 0])
    assert max_penetration(small, big) != pytest.approx(max_penetration(big, small), abs=0.5)


def test_volume_identical_cubes():
    c = shapes.box(40, 40, 40)
    assert intersection_volume(c, c) == pytest.approx(64.0, rel=0.05)


def test_volume_sphere_lens():
    got = intersection_volume(sphere(30.0, [0, 0, 0]), sphere(30.0, [40, 0, 0]))
    assert got == pytest.approx(lens_volume(30.0, 40.0) / 1000.0, rel=0.10)


def test_volume_monotone_in_separation():
    a = sphere(30.0, [0, 0, 0], 2)
    vols = [intersection_volume(a, sphere(30.0, [d, 0, 0], 2)) for d in (10, 25, 40, 50, 65)]
    assert all(x >= y for x, y in zip(vols, vols[1:]))
    assert vols[-1] == 0.0 and vols[0] > 0


def test_errors_and_report(rng):
    hand = shapes.icosphere(10.0, 1)
    shifted = hand.with_vertices(hand.vertices + [0, 3.0, 4.0])
    assert hand_mesh_error(shifted, hand) == pytest.approx(5.0)
    reg = rand_regressor(rng, hand.n_vertices)
    assert hand_joint_error(shifted, hand, reg) == pytest.approx(5.0)
    assert object_error(np.array([[0, 0, 0.0]]), np.array([[3, 0, 0.0], [5, 0, 0]])) == pytest.approx((3 + 4) / 2)
    obj = sphere(10.0, [40, 0, 0], 1)
    r = evaluate(hand, obj, hand, obj, reg)
    assert r.hand_mesh_error_mm == r.object_error_mm == r.max_pen_mm == r.inter_vol_cm3 == 0.0
    assert list(r.to_dict()) == list(METRIC_KEYS)


def test_report_mean():
    a = MetricsReport(1, 2, 3, 4, 5)
    b = MetricsReport(3, 4, 5, 6, 7)
    assert MetricsReport.mean([a, b]) == MetricsReport(2, 3, 4, 5, 6)
