import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mre_recon.mesh import (AdjacencyGraph, PhantomSpec, TriMesh, assign_phantom, build_mesh,
                            element_adjacency, inclusion_mask, load_field_csv, save_field_csv)


def unit_spec(**kw):
    base = dict(width=1.0, height=1.0, nx=1, ny=1, inclusion_center=(0.5, 0.5),
                inclusion_radius=0.0)
    base.update(kw)
    return PhantomSpec(**base)


def test_single_cell_mesh():
    mesh = build_mesh(unit_spec())
    assert mesh.n_nodes == 4
    assert mesh.n_elements == 2
    np.testing.assert_allclose(mesh.areas, [0.5, 0.5])
    np.testing.assert_array_equal(mesh.elements, [[0, 1, 3], [0, 3, 2]])


def test_default_mesh_counts_and_area(default_phantom):
    mesh, _ = default_phantom
    assert mesh.n_nodes == 289
    assert mesh.n_elements == 512
    assert abs(mesh.areas.sum() - 0.05 * 0.05) < 1e-12 * 0.05 * 0.05
    assert np.all(mesh.areas > 0)


def test_boundary_tags(default_phantom):
    mesh, _ = default_phantom
    assert len(mesh.boundary_tags) == mesh.n_nodes
    y = mesh.nodes[:, 1]
    x = mesh.nodes[:, 0]
    np.testing.assert_array_equal(mesh.nodes_tagged("bottom"), np.nonzero(y == 0)[0])
    np.testing.assert_array_equal(mesh.nodes_tagged("top"), np.nonzero(y == 0.05)[0])
    inner = (x > 0) & (x < 0.05) & (y > 0) & (y < 0.05)
    np.testing.assert_array_equal(mesh.nodes_tagged("interior"), np.nonzero(inner)[0])
    with pytest.raises(ValueError):
        mesh.nodes_tagged("front")


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(1, 12), ny=st.integers(1, 12),
       jitter=st.floats(0.0, 0.24), seed=st.integers(0, 2**16))
def test_jittered_mesh_stays_valid(nx, ny, jitter, seed):
    spec = PhantomSpec(width=2.0, height=1.0, nx=nx, ny=ny, inclusion_center=(1.0, 0.5),
                       inclusion_radius=0.2, jitter=jitter, seed=seed)
    mesh = build_mesh(spec)
    assert np.all(mesh.areas > 0)
    # boundary nodes stay put, so the tiling still covers the rectangle exactly
    assert abs(mesh.areas.sum() - 2.0) < 1e-12
    assert mesh.n_elements == 2 * nx * ny


def test_jitter_is_seeded():
    a = build_mesh(unit_spec(nx=4, ny=4, jitter=0.2, seed=3))
    b = build_mesh(unit_spec(nx=4, ny=4, jitter=0.2, seed=3))
    c = build_mesh(unit_spec(nx=4, ny=4, jitter=0.2, seed=4))
    np.testing.assert_array_equal(a.nodes, b.nodes)
    assert not np.array_equal(a.nodes, c.nodes)


def test_phantom_values(default_spec, default_phantom):
    mesh, E = default_phantom
    assert set(np.unique(E)) == {0.145, 0.46}
    c = mesh.centroids
    d = np.linalg.norm(c - np.array([0.025, 0.025]), axis=1)
    assert E[np.argmin(d)] == 0.46
    assert E[np.argmax(d)] == 0.145
    # assigning twice gives the same array
    np.testing.assert_array_equal(assign_phantom(mesh, default_spec), E)


def test_zero_radius_inclusion_is_uniform():
    spec = PhantomSpec(inclusion_radius=0.0)
    mesh = build_mesh(spec)
    assert not inclusion_mask(mesh, spec).any()
    assert np.all(assign_phantom(mesh, spec) == spec.E_background)


@pytest.mark.parametrize("kw", [
    dict(width=0.0), dict(height=-1.0), dict(nx=0), dict(E_background=0.0),
    dict(E_inclusion=-0.1), dict(inclusion_radius=-0.01),
    dict(inclusion_center=(0.045, 0.025)), dict(jitter=0.3),
])
def test_phantom_spec_validation(kw):
    with pytest.raises(ValueError):
        PhantomSpec(**kw)


def test_trimesh_rejects_bad_elements():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
    tags = ("bottom",) * 4
    with pytest.raises(ValueError):
        TriMesh(nodes, [[0, 2, 1]], tags)  # clockwise
    with pytest.raises(ValueError):
        TriMesh(nodes, [[0, 1, 3]], tags)  # collinear, zero area
    with pytest.raises(ValueError):
        TriMesh(nodes, [[0, 1, 7]], tags)
    with pytest.raises(ValueError):
        TriMesh(nodes, [[0, 1, 2]], tags[:3])


def test_two_element_adjacency_weight():
    g = element_adjacency(build_mesh(unit_spec()))
    # centroids (2/3, 1/3) and (1/3, 2/3); shared diagonal of length sqrt(2)
    assert g.edges == [(0, 1, pytest.approx(3.0, rel=1e-14))]


def test_adjacency_structure(default_phantom):
    mesh, _ = default_phantom
    g = element_adjacency(mesh)
    deg = g.degree()
    assert deg.max() == 3
    assert np.all(g.i < g.j)
    # each interior face is shared once; the 16x16 boundary carries 64 faces
    assert len(g) == (3 * mesh.n_elements - 64) // 2
    # an element touching no boundary face has three neighbors
    cell = 8 * 16 + 8
    assert deg[2 * cell] == 3 and deg[2 * cell + 1] == 3
    assert np.all(np.isfinite(g.weight)) and np.all(g.weight > 0)


def test_adjacency_respects_relabeling():
    spec = unit_spec(nx=3, ny=3, jitter=0.1, seed=5)
    mesh = build_mesh(spec)
    perm = np.random.default_rng(0).permutation(mesh.n_elements)
    shuffled = TriMesh(mesh.nodes, mesh.elements[perm], mesh.boundary_tags)
    g0 = element_adjacency(mesh)
    g1 = element_adjacency(shuffled)
    # element k of the shuffled mesh is element perm[k] of the original
    mapped = {tuple(sorted((int(perm[a]), int(perm[b])))): w for a, b, w in g1.edges}
    original = {(a, b): w for a, b, w in g0.edges}
    assert mapped.keys() == original.keys()
    for key, w in original.items():
        assert mapped[key] == pytest.approx(w, rel=1e-13)


def test_graph_operators():
    g = AdjacencyGraph([0, 1], [1, 2], [1.0, 2.0], 3)
    x = np.array([1.0, 4.0, 2.0])
    np.testing.assert_array_equal(g.difference(x), [-3.0, 2.0])
    assert g.total_variation(x) == 3.0 + 4.0
    p = np.array([0.5, -1.0])
    # adjoint identity <Gx, p> = <x, G^T p>
    assert g.difference(x) @ p == pytest.approx(x @ g.difference_adjoint(p))
    L = g.laplacian().toarray()
    np.testing.assert_allclose(L.sum(axis=1), 0.0)
    np.testing.assert_allclose(L, L.T)


def test_mesh_json_roundtrip(tmp_path):
    mesh = build_mesh(unit_spec(nx=3, ny=2, jitter=0.1))
    mesh.save(tmp_path / "mesh.json")
    back = TriMesh.load(tmp_path / "mesh.json")
    np.testing.assert_array_equal(back.nodes, mesh.nodes)
    np.testing.assert_array_equal(back.elements, mesh.elements)
    assert back.boundary_tags == mesh.boundary_tags


def test_field_csv_roundtrip(tmp_path):
    vals = np.random.default_rng(2).random(17)
    save_field_csv(vals, tmp_path / "E.csv")
    np.testing.assert_array_equal(load_field_csv(tmp_path / "E.csv"), vals)


def test_mesh_arrays_read_only(default_phantom):
    mesh, _ = default_phantom
    with pytest.raises(ValueError):
        mesh.nodes[0, 0] = 1.0
