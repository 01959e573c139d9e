from collections import deque

import numpy as np

from conftest import make_graph, random_segment_graph
from segfuse.ccl import label_components, threshold_decisions
from segfuse.segmentation import SegmentMap


def bfs_components(k, edges):
    adj = [[] for _ in range(k)]
    for a, b in np.asarray(edges).reshape(-1, 2).tolist():
        adj[a].append(b)
        adj[b].append(a)
    comp = [-1] * k
    c = 0
    for s in range(k):
        if comp[s] < 0:
            comp[s] = c
            q = deque([s])
            while q:
                i = q.popleft()
                for j in adj[i]:
                    if comp[j] < 0:
                        comp[j] = c
                        q.append(j)
            c += 1
    return np.array(comp)


def one_point_per_segment(k):
    return SegmentMap.from_labels(np.arange(k))


def test_identical_features_keep_all_edges():
    g = make_graph([[0, 1], [1, 2], [0, 2]], [0, 0, 0])
    np.testing.assert_array_equal(threshold_decisions(np.ones((3, 2)), g), g.seg_edges)


def test_zero_threshold_gives_no_edges():
    g = make_graph([[0, 1]], [0, 0])
    assert len(threshold_decisions(np.zeros((2, 2)), g, delta_v=0.0)) == 0


def test_chain_example():
    g = make_graph([[0, 1], [1, 2]], [0, 0, 0])
    f = np.array([[0.0], [0.05], [0.5]])
    b = threshold_decisions(f, g, 0.1, "l1")
    assert b.tolist() == [[0, 1]]
    dec = label_components(b, g, one_point_per_segment(3))
    np.testing.assert_array_equal(dec.component_of, [0, 0, 1])
    assert dec.num_components == 2


def test_l2_distance():
    g = make_graph([[0, 1]], [0, 0])
    f = np.array([[0.0, 0.0], [0.06, 0.06]])
    assert len(threshold_decisions(f, g, 0.1, "l1")) == 0
    assert len(threshold_decisions(f, g, 0.1, "l2")) == 1


def test_no_edges_keeps_segment_argmax():
    g = make_graph([[0, 1], [1, 2]], [0, 1, 2], c=4)
    seg = SegmentMap.from_labels([0, 0, 1, 2, 2, 2])
    dec = label_components(np.zeros((0, 2)), g, seg)
    assert dec.num_components == 3
    np.testing.assert_array_equal(dec.final_point_labels, g.seg_semantic.argmax(1)[seg.point_to_segment])


def test_consensus_example():
    g = make_graph([[0, 1]], [0, 0])
    g.seg_semantic = np.array([[0.6, 0.4], [0.2, 0.8]])
    seg = SegmentMap.from_labels([0, 0, 0, 1])
    dec = label_components(np.array([[0, 1]]), g, seg)
    np.testing.assert_array_equal(dec.final_point_labels, [1, 1, 1, 1])


def test_weighted_consensus_differs():
    g = make_graph([[0, 1]], [0, 0])
    g.seg_semantic = np.array([[0.6, 0.4], [0.2, 0.8]])
    seg = SegmentMap.from_labels([0] * 9 + [1])
    assert label_components([[0, 1]], g, seg).final_point_labels[0] == 1
    assert label_components([[0, 1]], g, seg, weighted=True).final_point_labels[0] == 0


def test_consensus_tie_goes_to_lowest_class():
    g = make_graph([[0, 1]], [0, 0])
    g.seg_semantic = np.array([[0.7, 0.3], [0.3, 0.7]])
    assert label_components([[0, 1]], g, one_point_per_segment(2)).final_point_labels.tolist() == [0, 0]


def test_components_match_bfs_and_are_idempotent():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(1, 60))
        g = random_segment_graph(rng, k, p_edge=float(rng.uniform(0.01, 0.2)))
        f = rng.normal(scale=0.05, size=(k, 3))
        b = threshold_decisions(f, g)
        assert set(map(tuple, b.tolist())) <= set(map(tuple, g.seg_edges.tolist()))
        seg = SegmentMap.from_labels(rng.integers(0, k, size=3 * k))
        if seg.num_segments != k:
            seg = one_point_per_segment(k)
        dec = label_components(b, g, seg)
        np.testing.assert_array_equal(dec.component_of, SegmentMap.from_labels(bfs_components(k, b)).point_to_segment)
        again = label_components(dec.b_edges, g, seg)
        np.testing.assert_array_equal(again.final_point_labels, dec.final_point_labels)
        assert dec.num_components <= k
        comp_pt = dec.component_of[seg.point_to_segment]
        for c in range(dec.num_components):
            assert len(set(dec.final_point_labels[comp_pt == c].tolist())) <= 1
