import numpy as np
import pytest

from nccmarl import autodiff as ad
from nccmarl.autodiff import ShapeError, Tape, Tensor
from nccmarl.graph import AgentGraph, GcnLayer, gcn_forward, neighbors
from nccmarl.oracles import gcn_dense_reference, gradient_error, numeric_gradient


def line_graph(n):
    return AgentGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def random_graph(n, rng):
    adj = np.triu(rng.random((n, n)) < 0.5, k=1)
    return AgentGraph(adj | adj.T)


def test_adjacency_validation():
    with pytest.raises(ValueError):
        AgentGraph(np.array([[0, 1], [0, 0]], dtype=bool))  # asymmetric
    with pytest.raises(ValueError):
        AgentGraph(np.eye(2, dtype=bool))  # self-edges


def test_neighbors_line_graph():
    g = line_graph(3)
    assert neighbors(g, 1) == (0, 2)
    assert g.neighbors(0) == (1,)


def test_neighbors_isolated_and_complete():
    assert AgentGraph(np.zeros((3, 3), dtype=bool)).neighbors(1) == ()
    assert AgentGraph.complete(3).neighbors(0) == (1, 2)


def test_neighbors_index_out_of_range():
    with pytest.raises(IndexError):
        line_graph(3).neighbors(5)


def test_gcn_symmetric_pair_is_fixed_point():
    g = AgentGraph.complete(2)
    layer = GcnLayer(Tensor(np.eye(3)), activation="identity")
    v = np.array([[0.5, -1.0, 2.0]])
    out = gcn_forward(layer, g, [Tensor(v.copy()), Tensor(v.copy())])
    # both agents have self-inclusive degree 2: v/2 + v/2 = v
    assert np.allclose(out[0].data, v)
    assert np.allclose(out[1].data, v)


def test_gcn_isolated_agent_is_identity():
    g = AgentGraph(np.zeros((1, 1), dtype=bool))
    layer = GcnLayer(Tensor(np.eye(2)), activation="identity")
    h = np.array([[1.5, -0.25]])
    out = gcn_forward(layer, g, [Tensor(h.copy())])
    assert np.array_equal(out[0].data, h)


def test_gcn_feature_dim_mismatch():
    g = line_graph(2)
    layer = GcnLayer(Tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        gcn_forward(layer, g, [Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4)))])


@pytest.mark.parametrize("activation", ["relu", "tanh", "identity"])
def test_gcn_matches_dense_oracle(activation):
    rng = np.random.default_rng(21)
    for _ in range(50):
        n = int(rng.integers(1, 9))
        g = random_graph(n, rng)
        d_in, d_out = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        w = rng.standard_normal((d_in, d_out))
        h = rng.standard_normal((n, d_in))
        layer = GcnLayer(Tensor(w), activation=activation)
        out = gcn_forward(layer, g, [Tensor(h[i : i + 1].copy()) for i in range(n)])
        ref = gcn_dense_reference(g.adjacency, h, w, activation)
        stacked = np.vstack([o.data for o in out])
        assert np.max(np.abs(stacked - ref)) < 1e-12


def test_gcn_permutation_equivariance_exact():
    rng = np.random.default_rng(22)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        g = random_graph(n, rng)
        w = rng.standard_normal((4, 3))
        feats = [Tensor(rng.standard_normal((2, 4))) for _ in range(n)]
        layer = GcnLayer(Tensor(w), activation="tanh")
        out = gcn_forward(layer, g, feats)

        perm = rng.permutation(n)
        g_perm = g.permuted(perm)
        feats_perm = [None] * n
        for i in range(n):
            feats_perm[perm[i]] = feats[i]
        out_perm = gcn_forward(layer, g_perm, feats_perm)
        for i in range(n):
            assert np.array_equal(out_perm[perm[i]].data, out[i].data)


def test_gcn_locality_bit_identical():
    rng = np.random.default_rng(23)
    g = line_graph(4)  # agent 0's closed neighborhood is {0, 1}
    w = rng.standard_normal((3, 3))
    feats = [rng.standard_normal((2, 3)) for _ in range(4)]
    layer = GcnLayer(Tensor(w))
    base = gcn_forward(layer, g, [Tensor(f.copy()) for f in feats])[0].data
    feats[3] = feats[3] + 100.0  # outside agent 0's closed neighborhood
    perturbed = gcn_forward(layer, g, [Tensor(f.copy()) for f in feats])[0].data
    assert np.array_equal(base, perturbed)


def test_gcn_nodes_subset():
    rng = np.random.default_rng(24)
    g = line_graph(3)
    layer = GcnLayer(Tensor(rng.standard_normal((2, 2))))
    feats = [Tensor(rng.standard_normal((1, 2))) for _ in range(3)]
    full = gcn_forward(layer, g, feats)
    only1 = gcn_forward(layer, g, feats, nodes=[1])
    assert np.array_equal(only1[0].data, full[1].data)


def test_gcn_gradients_match_finite_differences():
    rng = np.random.default_rng(25)
    g = random_graph(5, rng)
    layer = GcnLayer.create(3, 4, rng, activation="tanh")
    feats = [ad.parameter(rng.standard_normal((2, 3))) for _ in range(5)]

    def loss():
        outs = gcn_forward(layer, g, feats)
        return ad.tmean(ad.sum_tensors([ad.square(o) for o in outs]))

    targets = [layer.weight] + feats
    for p in targets:
        with Tape():
            ad.backward(loss())
        err = gradient_error(p.grad, numeric_gradient(loss, p))
        ad.zero_grads(targets)
        assert err < 1e-4
