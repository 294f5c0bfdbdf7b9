import math

import numpy as np
import pytest

from dgn import numcore as nc
from dgn.embeddings import EmbeddingTable
from dgn.graph_builder import (DOCUMENT_DOCUMENT, DocumentGraph, DocumentNode, SentenceNode, build_graph,
                               induced_subgraph, permute_nodes)
from dgn.model import (AdjacencyStructure, ConfigError, EmptyGraphError, EmptyRepresentationError, ModelConfig,
                       bce_loss, check_params, classify, classify_logits, condition_on_question, forward,
                       forward_logits, init_hidden, init_params, pool_to_annotation, prepare_inputs, propagate)
from dgn.prefilter import rank_and_select

D = 4


def small_config(**kw):
    base = dict(dim=D, hidden=6, attention_dim=3, output_hidden=5, precision=64)
    base.update(kw)
    return ModelConfig(**base)


def randomize(params, rng, scale=0.5):
    """Fill every parameter, biases included, with random values."""
    for p in params:
        p.data[...] = rng.normal(scale=scale, size=p.shape)
    return params


def path_adjacency(n):
    pairs = [(i, i + 1) for i in range(n - 1)]
    both = pairs + [(b, a) for a, b in pairs]
    return AdjacencyStructure.from_pairs(n, {(DOCUMENT_DOCUMENT, "in"): both, (DOCUMENT_DOCUMENT, "out"): both})


def test_singleton_node_alpha_is_one(rng):
    params = randomize(init_params(small_config()), rng)
    _, alpha = condition_on_question(rng.normal(size=(1, D)), rng.normal(size=(3, D)), params)
    assert alpha.data.tolist() == [[1.0]]


def test_zero_bilinear_gives_uniform_alpha(rng):
    params = randomize(init_params(small_config()), rng)
    params["att.W_b"].data[...] = 0
    params["att.b_ban"].data[...] = 0
    _, alpha = condition_on_question(rng.normal(size=(5, D)), rng.normal(size=(2, D)), params)
    np.testing.assert_allclose(alpha.data[:, 0], 0.2, atol=1e-15)


def test_conditioning_direct_formula(rng):
    params = randomize(init_params(small_config()), rng)
    V, Q = rng.normal(size=(3, D)), rng.normal(size=(2, D))
    V_hat, alpha = condition_on_question(V, Q, params)
    W_b, b = params["att.W_b"].data, params["att.b_ban"].data[0]
    e = [max(float(V[w] @ W_b @ Q[j]) + b for j in range(2)) for w in range(3)]
    z = sum(math.exp(v) for v in e)
    expected_alpha = [math.exp(v) / z for v in e]
    np.testing.assert_allclose(alpha.data[:, 0], expected_alpha, rtol=0, atol=1e-12)
    mixed = np.tanh(V @ params["att.W_phi"].data + params["att.b_phi"].data)
    np.testing.assert_allclose(V_hat.data, np.array(expected_alpha)[:, None] * mixed, atol=1e-12)
    assert V_hat.shape == (3, D)


def test_empty_representation_rejected(rng):
    params = init_params(small_config())
    with pytest.raises(EmptyRepresentationError):
        condition_on_question(np.zeros((0, D)), rng.normal(size=(2, D)), params)
    with pytest.raises(EmptyRepresentationError):
        condition_on_question(rng.normal(size=(2, D)), np.zeros((0, D)), params)


def test_pool_singleton_and_identical_rows(rng):
    params = randomize(init_params(small_config()), rng)
    row = rng.normal(size=(1, D))
    x, _ = pool_to_annotation(row, params)
    assert np.array_equal(x.data, row)
    x, _ = pool_to_annotation(np.repeat(row, 4, axis=0), params)
    np.testing.assert_allclose(x.data, row, atol=1e-15)


def test_pool_direct_formula(rng):
    params = randomize(init_params(small_config()), rng)
    V_hat = rng.normal(size=(4, D))
    x, delta = pool_to_annotation(V_hat, params)
    r = np.tanh(V_hat @ params["att.W_s"].data + params["att.b_s"].data) @ params["att.u"].data[:, 0]
    d = np.exp(r) / np.exp(r).sum()
    expected = sum(d[w] * V_hat[w] for w in range(4))
    np.testing.assert_allclose(delta.data[:, 0], d, atol=1e-12)
    np.testing.assert_allclose(x.data[0], expected, rtol=0, atol=1e-12)


def test_init_hidden():
    x = nc.Tensor(np.array([[3.0, 5.0]]))
    assert init_hidden(x, 4).data.tolist() == [[3, 5, 0, 0]]
    assert init_hidden(x, 2) is x
    rows = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(init_hidden(rows, 3).data, np.c_[rows, np.zeros(3)])
    with pytest.raises(ConfigError):
        init_hidden(x, 1)


def test_config_rejects_hidden_below_dim():
    with pytest.raises(ConfigError):
        ModelConfig(dim=50, hidden=10)


def test_no_edges_nodes_evolve_identically(rng):
    config = small_config()
    params = randomize(init_params(config), rng)
    h0 = np.tile(rng.normal(size=(1, 6)), (3, 1))
    h = propagate(h0, AdjacencyStructure.from_pairs(3, {}), params, config).data
    assert np.array_equal(h[0], h[1]) and np.array_equal(h[1], h[2])


def test_closed_update_gate_keeps_state(rng):
    config = small_config()
    params = randomize(init_params(config), rng)
    params["ggnn.W_z"].data[...] = -100.0
    params["ggnn.U_z"].data[...] = -100.0
    params["ggnn.b"].data[...] = 1.0
    for key in ("sentence_document.in", "sentence_document.out", "document_document.in",
                "document_document.out"):
        params["ggnn.P." + key].data[...] = np.abs(params["ggnn.P." + key].data)
    h0 = np.abs(rng.normal(size=(5, 6))) + 0.1
    h = propagate(h0, path_adjacency(5), params, config).data
    np.testing.assert_allclose(h, h0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_hop_locality(seed):
    rng = np.random.default_rng(seed)
    config = small_config(steps=3)
    params = randomize(init_params(config), rng)
    adj = path_adjacency(5)
    h0 = rng.normal(size=(5, 6))
    base = propagate(h0, adj, params, config).data
    far = h0.copy()
    far[0] += 1.0
    moved = propagate(far, adj, params, config).data
    assert np.array_equal(moved[4], base[4])
    assert not np.array_equal(moved[3], base[3])


def test_adjacency_in_is_transpose_of_out(watts_example):
    adj = AdjacencyStructure.from_graph(build_graph(watts_example))
    dense = adj.dense()
    n = adj.num_nodes
    blocks = [dense[:, i * n:(i + 1) * n] for i in range(4)]
    assert dense.shape == (n, 4 * n)
    assert np.array_equal(blocks[0], blocks[1].T)
    assert np.array_equal(blocks[2], blocks[3].T)
    # Sentence 1 receives from document 0 on the "in" list.
    assert blocks[0][1, 0] == 1 and blocks[1][0, 1] == 1


def test_classify_zero_weights_half(rng):
    config = small_config()
    params = init_params(config)
    for p in params:
        p.data[...] = 0
    h, x = rng.normal(size=(3, 6)), rng.normal(size=(3, D))
    assert classify(h, x, params, [0, 1, 2]).tolist() == [0.5, 0.5, 0.5]


def test_classify_bias_monotone(rng):
    params = randomize(init_params(small_config()), rng)
    h, x = rng.normal(size=(3, 6)), rng.normal(size=(3, D))
    before = classify(h, x, params, [0, 1, 2])
    params["out.b2"].data += 0.25
    assert np.all(classify(h, x, params, [0, 1, 2]) > before)


def test_classify_direct_formula(rng):
    params = randomize(init_params(small_config()), rng)
    h, x = rng.normal(size=(2, 6)), rng.normal(size=(2, D))
    got = classify_logits(h, x, params, [0, 1]).data[:, 0]
    hidden = np.tanh(np.c_[h, x] @ params["out.W1"].data + params["out.b1"].data)
    np.testing.assert_allclose(got, hidden @ params["out.w2"].data[:, 0] + params["out.b2"].data[0], atol=1e-12)


def test_classify_rejects_document_nodes(rng):
    params = init_params(small_config())
    with pytest.raises(ValueError, match="sentence"):
        classify(rng.normal(size=(2, 6)), rng.normal(size=(2, D)), params, [0, 1], [False, True])


def _watts_table(rng):
    words = ["erik", "watts", "father", "born", "bill", "son", "wwe", "hall", "famer", "debut", "1992",
             "william", "jr", "may", "1939", "american", "former", "professional", "wrestler", "promoter", "fame",
             "inductee", "2009", "5"]
    return EmbeddingTable(words, rng.normal(size=(len(words), D)))


def test_forward_single_sentence(rng):
    g = DocumentGraph([DocumentNode("Bill Watts", ("bill", "watts")), SentenceNode("Bill Watts", 0, "Bill was born.")],
                      [(0, 1, "sentence_document")])
    config = small_config()
    probs = forward(g, "When was Bill born?", _watts_table(rng), randomize(init_params(config), rng), config)
    assert list(probs) == [("Bill Watts", 0)]
    assert 0 < probs[("Bill Watts", 0)] < 1


def test_forward_empty_graph(rng):
    config = small_config()
    with pytest.raises(EmptyGraphError):
        forward(DocumentGraph([], []), "q", _watts_table(rng), init_params(config), config)


def test_permutation_equivariance(watts_example, rng):
    config = small_config()
    params = randomize(init_params(config), rng)
    table = _watts_table(rng)
    g = build_graph(watts_example)
    base = forward(g, watts_example.question, table, params, config)
    for _ in range(5):
        p = permute_nodes(g, list(rng.permutation(len(g.nodes))))
        other = forward(p, watts_example.question, table, params, config)
        assert other.keys() == base.keys()
        for key in base:
            assert other[key] == pytest.approx(base[key], abs=1e-6)


def test_attention_rows_sum_to_one(corpus, rng):
    examples, table = corpus
    config = small_config(dim=8, hidden=8)
    params = randomize(init_params(config), rng)
    for ex in examples[:5]:
        trace = {}
        forward(build_graph(ex), ex.question, table, params, config, trace)
        for key in ("alpha", "delta"):
            sums = np.bincount(trace["word_node"], weights=trace[key])
            np.testing.assert_allclose(sums, 1.0, atol=1e-6)
        assert np.all(trace["h_initial"][:, 8:] == 0)


def test_collapsed_edge_types_differ(watts_example, rng):
    table = _watts_table(rng)
    full = small_config()
    collapsed = small_config(collapse_edge_types=True)
    params = randomize(init_params(full), rng)
    shared = init_params(collapsed)
    for name, p in shared.items():
        if name != "ggnn.P.shared":
            p.data[...] = params[name].data
    shared["ggnn.P.shared"].data[...] = rng.normal(scale=0.5, size=(6, 6))
    g = build_graph(watts_example)
    a = forward(g, watts_example.question, table, params, full)
    b = forward(g, watts_example.question, table, shared, collapsed)
    assert any(abs(a[k] - b[k]) > 1e-6 for k in a)


def test_at_most_k_outputs(corpus, rng):
    examples, table = corpus
    config = small_config(dim=8, hidden=8)
    ex = examples[0]
    g = build_graph(ex)
    sub = induced_subgraph(g, rank_and_select(ex, g, table, 5, 10))
    assert len(forward(sub, ex.question, table, init_params(config), config)) <= 10


def test_empty_node_gets_zero_row(rng):
    g = DocumentGraph([DocumentNode("Q", ()), SentenceNode("Q", 0, "zzz unknownword")], [(0, 1, "sentence_document")])
    inputs = prepare_inputs(g, "bill", _watts_table(rng), small_config())
    assert inputs.empty_nodes == [0, 1]
    assert inputs.words.shape == (2, D) and not inputs.words.any()


def test_dimension_mismatch(rng):
    with pytest.raises(ConfigError, match="4.*8"):
        prepare_inputs(DocumentGraph([DocumentNode("A"), SentenceNode("A", 0, "bill")], [(0, 1, "sentence_document")]),
                       "bill", _watts_table(rng), small_config(dim=8, hidden=8))


def test_check_params(rng):
    with pytest.raises(ConfigError):
        check_params(init_params(small_config()), small_config(hidden=7))
    check_params(init_params(small_config(), 5), small_config())


@pytest.mark.parametrize("collapse", [False, True])
def test_full_gradient_check(watts_example, rng, collapse):
    config = small_config(collapse_edge_types=collapse)
    params = randomize(init_params(config), rng)
    inputs = prepare_inputs(build_graph(watts_example), watts_example.question, _watts_table(rng), config)
    labels = [1, 0, 1]
    err = nc.grad_check(lambda: bce_loss(forward_logits(inputs, params, config), labels, 2.0), params, 1e-6)
    assert err < 1e-6


def test_bce_loss_from_logits():
    logits = nc.Tensor(np.array([[0.0], [0.0]]))
    assert bce_loss(logits, [1, 0]).item() == pytest.approx(math.log(2), abs=1e-7)
    big = nc.Tensor(np.array([[800.0]]))
    assert bce_loss(big, [0]).item() == pytest.approx(800.0)
    with pytest.raises(nc.ShapeError):
        bce_loss(logits, [1])
