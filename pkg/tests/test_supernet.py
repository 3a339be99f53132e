import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdarts import autodiff as ad
from spdarts.space import Genotype, SearchSpaceSpec, all_op_genotype, build_space, discretize
from spdarts.sparse import TemperaturePair
from spdarts.supernet import (Batch, accuracy, cross_entropy, finalnet_forward, init_weights,
                              mixed_edge_forward, supernet_forward, weight_name)

TAGS = ("none", "skip", "linear", "gated-linear")
TEMPS = TemperaturePair(1e-3, 1e-2)


def _setup(nodes=2, d=3, k=4, b=5, seed=0):
    space = build_space(SearchSpaceSpec(nodes, d))
    rng = np.random.default_rng(seed)
    weights = init_weights(space, k, rng)
    batch = Batch(rng.normal(size=(b, d)), rng.integers(0, k, size=b))
    return space, weights, batch, rng


def saturated(rng, space, margin=1000.0):
    A = rng.normal(size=(space.num_edges, space.num_ops))
    A[np.arange(space.num_edges), rng.integers(0, space.num_ops, space.num_edges)] += margin
    return A


class TestMixedEdge:
    x = np.array([[1.0, -2.0, 0.5]])

    def test_one_hot_skip_is_identity(self):
        rng = np.random.default_rng(0)
        ew = {t: (rng.normal(size=(3, 3)), rng.normal(size=3)) for t in ("linear", "gated-linear")}
        out = mixed_edge_forward(self.x, ew, np.array([0.0, 1.0, 0.0, 0.0]), TAGS)
        np.testing.assert_array_equal(out.value, self.x)

    def test_half_skip_half_none(self):
        out = mixed_edge_forward(self.x, {}, np.array([0.5, 0.5]), ("skip", "none"))
        np.testing.assert_array_equal(out.value, 0.5 * self.x)

    def test_one_hot_none_is_zero(self):
        out = mixed_edge_forward(self.x, {}, np.array([1.0, 0.0]), ("none", "skip"))
        np.testing.assert_array_equal(out.value, 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            mixed_edge_forward(self.x, {}, np.array([1.0, 0.0, 0.0]), ("none", "skip"))


class TestSupernet:
    def test_init_weights_range(self):
        space, weights, _, _ = _setup(d=4)
        W = weights[weight_name(0, "linear", "W")]
        assert W.shape == (4, 4)
        assert np.all(np.abs(W) <= 0.5)
        assert weights["head.W"].shape == (4, 4)

    def test_bypass_eliminated_when_saturated(self):
        space, weights, batch, rng = _setup(nodes=3)
        for phi in (0, 1):
            A = saturated(rng, space)
            sup = supernet_forward(batch, weights, A, phi, TEMPS, space).value
            fin = finalnet_forward(batch, weights, discretize(A), space).value
            np.testing.assert_allclose(sup, fin, atol=1e-6, rtol=0)

    def test_uniform_skip_none_closed_form(self):
        # 2 nodes over {none, skip}: node1 = x/2, node2 = x/2 + node1/2 = 3x/4
        space = build_space(SearchSpaceSpec(2, 3, op_set=("none", "skip")))
        rng = np.random.default_rng(1)
        weights = init_weights(space, 2, rng)
        x = rng.normal(size=(4, 3))
        logits = supernet_forward(Batch(x, np.zeros(4, int)), weights, np.zeros((3, 2)), 0,
                                  TemperaturePair(1.0, 1.0), space).value
        np.testing.assert_allclose(logits, 0.75 * x @ weights["head.W"] + weights["head.b"], rtol=1e-14)

    def test_rows_are_independent(self):
        space, weights, batch, rng = _setup(b=4)
        A = rng.normal(size=(space.num_edges, space.num_ops))
        full = supernet_forward(batch, weights, A, 0, TEMPS, space).value
        single = supernet_forward(Batch(batch.inputs[2:3], batch.labels[2:3]), weights, A, 0, TEMPS, space).value
        np.testing.assert_array_equal(full[2], single[0])

    def test_arch_shape_checked(self):
        space, weights, batch, _ = _setup()
        with pytest.raises(ad.ShapeError):
            supernet_forward(batch, weights, np.zeros((2, 4)), 0, TEMPS, space)

    def test_gradients_match_finite_differences(self):
        space, weights, batch, rng = _setup(nodes=2, d=3, k=3, b=4)
        temps = TemperaturePair(0.1, 0.5)
        for phi in (0, 1):
            A0 = rng.normal(size=(space.num_edges, space.num_ops)) * 0.3
            rep = ad.grad_check(
                lambda A: cross_entropy(supernet_forward(batch, weights, A, phi, temps, space), batch.labels), A0)
            assert rep.max_rel_error < 1e-4
            for name in ("edge1.gated-linear.W", "head.W", "edge2.linear.b"):
                def loss(w, name=name):
                    ws = dict(weights)
                    ws[name] = w
                    return cross_entropy(supernet_forward(batch, ws, A0, phi, temps, space), batch.labels)
                assert ad.grad_check(loss, weights[name]).max_rel_error < 1e-4


class TestFinalnet:
    def test_all_skip(self):
        # node1 = x, node2 = x + node1 = 2x
        space, weights, batch, _ = _setup()
        logits = finalnet_forward(batch, weights, all_op_genotype(space, "skip"), space).value
        np.testing.assert_allclose(logits, 2 * batch.inputs @ weights["head.W"] + weights["head.b"], rtol=1e-14)

    def test_all_none_is_head_bias(self):
        space, weights, batch, _ = _setup()
        logits = finalnet_forward(batch, weights, all_op_genotype(space, "none"), space).value
        np.testing.assert_array_equal(logits, np.tile(weights["head.b"], (len(batch), 1)))

    def test_invalid_genotype(self):
        space, weights, batch, _ = _setup()
        with pytest.raises(ValueError):
            finalnet_forward(batch, weights, Genotype((0, 9, 0)), space)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=3, max_size=3), st.integers(0, 1000))
    def test_unchosen_weights_are_ignored(self, choices, seed):
        space, weights, batch, rng = _setup(seed=seed)
        g = Genotype(tuple(choices))
        before = finalnet_forward(batch, weights, g, space).value
        perturbed = dict(weights)
        for e, c in enumerate(choices):
            for tag in ("linear", "gated-linear"):
                if TAGS[c] != tag:
                    for part in "Wb":
                        k = weight_name(e, tag, part)
                        perturbed[k] = weights[k] + rng.normal(size=weights[k].shape)
        np.testing.assert_array_equal(finalnet_forward(batch, perturbed, g, space).value, before)


class TestLoss:
    def test_uniform_logits(self):
        assert cross_entropy(ad.Node(np.zeros((3, 4))), [0, 1, 2]).value == pytest.approx(np.log(4), rel=1e-15)

    def test_large_margin(self):
        logits = np.zeros((2, 3))
        logits[[0, 1], [1, 2]] = 1000.0
        assert cross_entropy(ad.Node(logits), [1, 2]).value < 1e-6

    def test_duplicate_rows(self):
        row = np.array([[0.3, -1.0, 2.0]])
        one = cross_entropy(ad.Node(row), [1]).value
        two = cross_entropy(ad.Node(np.vstack([row, row])), [1, 1]).value
        assert one == two

    def test_label_range(self):
        with pytest.raises(ValueError):
            cross_entropy(ad.Node(np.zeros((1, 3))), [3])

    def test_accuracy(self):
        logits = np.eye(4)
        assert accuracy(logits, [0, 1, 2, 3]) == 1.0
        assert accuracy(logits, [1, 2, 3, 0]) == 0.0
        assert accuracy(logits, [0, 1, 2, 0]) == 0.75

    def test_accuracy_tie_lowest_index(self):
        assert accuracy(np.zeros((1, 3)), [0]) == 1.0
