import math

import numpy as np
import pytest
import torch

from conftest import enumerate_leaf_posterior
from pyhiclust.losses import (
    LossTerms,
    PairOutputs,
    cohi_loss,
    level_similarity,
    ntxent,
    pair_similarity,
    r1_balance,
    similarity_matrix,
    total_loss,
)
from pyhiclust.models.ConfigModels import EncoderSpec, LossConfig
from pyhiclust.models.TreeModels import TreeTopology
from pyhiclust.networks import HierarchyNet
from pyhiclust.tree import level_posteriors, prune_leaf
from pyhiclust.utils.exceptions import InvalidArgumentError, NumericError


def _t(values):
    return torch.tensor(values, dtype=torch.float64)


# --------------------------------------------------
# Similarities
# --------------------------------------------------


def test_level_similarity_examples():
    assert level_similarity([0.5, 0.5], [0.5, 0.5]).item() == pytest.approx(1.0)
    assert level_similarity([1.0, 0.0], [0.0, 1.0]).item() == pytest.approx(0.0, abs=1e-12)
    p = [0.48, 0.32, 0.06, 0.14]
    expected = sum(math.sqrt(v / 4) for v in p)
    assert level_similarity(p, [0.25] * 4).item() == pytest.approx(expected, abs=1e-12)


def test_level_similarity_is_symmetric_and_bounded(rng):
    for _ in range(50):
        p = rng.dirichlet(np.ones(8))
        q = rng.dirichlet(np.ones(8))
        s = level_similarity(p, q).item()
        assert s == pytest.approx(level_similarity(q, p).item(), abs=1e-12)
        assert 0.0 <= s <= 1.0 + 1e-12


@pytest.mark.parametrize(
    "p, q",
    [([0.5, 0.5], [0.2, 0.3, 0.5]), ([0.5, 0.6], [0.5, 0.5]), ([1.5, -0.5], [0.5, 0.5])],
)
def test_level_similarity_validation(p, q):
    with pytest.raises(InvalidArgumentError):
        level_similarity(p, q)


def test_pair_similarity_identical_routings(topo2):
    probs = _t([0.8, 0.6, 0.3])
    assert pair_similarity(probs, probs, topo2).item() == pytest.approx(2.0)
    literal = LossConfig(level_range="paper_literal")
    assert pair_similarity(probs, probs, topo2, literal).item() == pytest.approx(2.0)


@pytest.mark.parametrize(
    "level_range, expected", [("include_leaves", [1, 2, 3]), ("paper_literal", [0, 1, 2])]
)
def test_level_range_names(level_range, expected):
    assert list(LossConfig(level_range=level_range).levels(3)) == expected


def test_pair_similarity_anti_aligned(topo2):
    a = _t([1.0, 1.0, 1.0])
    b = _t([0.0, 0.0, 0.0])
    assert pair_similarity(a, b, topo2).item() == pytest.approx(0.0, abs=1e-9)


def test_pair_similarity_shape_mismatch(topo2):
    with pytest.raises(InvalidArgumentError):
        pair_similarity(_t([0.5, 0.5, 0.5]), _t([0.5, 0.5]), topo2)


# --------------------------------------------------
# CoHiLoss
# --------------------------------------------------


def test_cohi_zero_when_all_routed_alike(topo2):
    routing = _t([[0.7, 0.4, 0.9]] * 4)
    assert cohi_loss(routing, routing, topo2).item() == pytest.approx(0.0, abs=1e-12)


def test_cohi_extremes(topo2):
    anchors = _t([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    levels = 2
    assert cohi_loss(anchors, anchors.clone(), topo2).item() == pytest.approx(-levels, abs=1e-9)


def _brute_force_cohi(anchors, views, topo, levels):
    n = anchors.shape[0]

    def s(a, b):
        pa = level_posteriors(a, topo, levels)
        pb = level_posteriors(b, topo, levels)
        return sum(float(np.sqrt(p.numpy() * q.numpy()).sum()) for p, q in zip(pa, pb))

    positives = [s(anchors[i], views[i]) for i in range(n)]
    negatives = [s(anchors[j], views[i]) for i in range(n) for j in range(n) if i != j]
    return np.mean(negatives) - np.mean(positives)


@pytest.mark.parametrize("level_range", ["include_leaves", "paper_literal"])
def test_cohi_matches_pair_loops(rng, level_range):
    config = LossConfig(level_range=level_range)
    for depth, n in [(2, 3), (3, 5), (4, 8)]:
        topo = TreeTopology.complete(depth)
        anchors = torch.from_numpy(rng.uniform(0.05, 0.95, size=(n, topo.num_internal)))
        views = torch.from_numpy(rng.uniform(0.05, 0.95, size=(n, topo.num_internal)))
        got = cohi_loss(anchors, views, topo, config).item()
        expected = _brute_force_cohi(anchors, views, topo, list(config.levels(depth)))
        assert got == pytest.approx(expected, abs=1e-9)


def test_cohi_permutation_invariant(rng, topo3):
    anchors = torch.from_numpy(rng.uniform(size=(6, 7)))
    views = torch.from_numpy(rng.uniform(size=(6, 7)))
    perm = torch.randperm(6)
    assert cohi_loss(anchors, views, topo3).item() == pytest.approx(
        cohi_loss(anchors[perm], views[perm], topo3).item(), abs=1e-12
    )


def test_cohi_needs_two_pairs(topo2):
    with pytest.raises(InvalidArgumentError):
        cohi_loss(_t([[0.5, 0.5, 0.5]]), _t([[0.5, 0.5, 0.5]]), topo2)


def test_similarity_matrix_uses_pruned_posteriors(rng, topo2):
    topo = prune_leaf(topo2, 3)
    a = torch.from_numpy(rng.uniform(0.05, 0.95, size=(3, 3)))
    sim = similarity_matrix(a, a, topo, LossConfig())
    leaf = np.stack([enumerate_leaf_posterior(row, topo) for row in a.numpy()])
    level1 = leaf.reshape(3, 2, 2).sum(-1)
    expected = np.sqrt(level1) @ np.sqrt(level1).T + np.sqrt(leaf) @ np.sqrt(leaf).T
    np.testing.assert_allclose(sim.numpy(), expected, atol=1e-9)


def _deepest_router_grad(level_range):
    torch.manual_seed(11)
    spec = EncoderSpec(architecture="mlp-small", embed_dim=4, hidden_width=8, input_shape=(5,))
    net = HierarchyNet.build(spec, depth=3, seed=3).double()
    x = torch.randn(4, 5, dtype=torch.float64)
    views = x + 0.1 * torch.randn(4, 5, dtype=torch.float64)
    loss = cohi_loss(
        net.route(net.encode(x)),
        net.route(net.encode(views)),
        TreeTopology.complete(3),
        LossConfig(level_range=level_range),
    )
    loss.backward()
    # neurons 4..7 parameterize the level-2 nodes, rows 3..6 of the output layer
    return net.router.output.weight.grad[3:7]


def test_paper_literal_range_gives_no_gradient_to_deepest_nodes():
    assert torch.all(_deepest_router_grad("paper_literal") == 0)


def test_include_leaves_trains_deepest_nodes():
    assert _deepest_router_grad("include_leaves").abs().max() > 0


# --------------------------------------------------
# R1
# --------------------------------------------------


def test_r1_balanced_minimum(topo3):
    routing = torch.full((5, 7), 0.5, dtype=torch.float64)
    assert r1_balance(routing, None, topo3).item() == pytest.approx(7 * math.log(2))


def test_r1_saturated_root_is_penalized(topo2):
    eps = 1e-6
    routing = _t([[1 - eps, 0.5, 0.5]] * 3)
    value = r1_balance(routing, None, topo2, epsilon=eps).item()
    root = -0.5 * (math.log(1 - eps) + math.log(eps))
    assert value == pytest.approx(root + 2 * math.log(2), rel=1e-6)
    assert value > 7


def test_r1_weighted_mean_example():
    topo = TreeTopology.complete(1)
    routing = _t([[0.2], [0.8]])
    assert r1_balance(routing, None, topo).item() == pytest.approx(math.log(2))


def test_r1_pass_through_node_adds_a_constant(topo2):
    eps = 1e-6
    topo = prune_leaf(topo2, 3)
    routing = torch.full((4, 3), 0.5, dtype=torch.float64, requires_grad=True)
    # root and left child still decide; the right child always goes left
    saturated = -0.5 * (math.log(1 - eps) + math.log(eps))
    value = r1_balance(routing, None, topo, epsilon=eps)
    assert value.item() == pytest.approx(2 * math.log(2) + saturated, rel=1e-6)
    assert value.item() == pytest.approx(8.2941, abs=1e-4)
    value.backward()
    assert torch.all(routing.grad[:, 2] == 0)


def test_r1_includes_views():
    topo = TreeTopology.complete(1)
    anchors = _t([[0.2], [0.2]])
    views = _t([[0.8], [0.8]])
    assert r1_balance(anchors, views, topo).item() == pytest.approx(math.log(2))
    alone = -0.5 * (math.log(0.2) + math.log(0.8))
    assert r1_balance(anchors, None, topo).item() == pytest.approx(alone)


# --------------------------------------------------
# NT-Xent
# --------------------------------------------------


def test_ntxent_orthogonal_negatives():
    a = _t([[1.0, 0.0], [0.0, 1.0]])
    expected = -math.log(math.exp(2) / (math.exp(2) + 2 * math.exp(0)))
    assert ntxent(a, a.clone(), 0.5).item() == pytest.approx(expected, abs=1e-9)


def test_ntxent_falls_as_positive_pair_aligns():
    anchors = _t([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    values = []
    for angle in (1.2, 0.8, 0.4, 0.0):
        # the view only turns in the plane orthogonal to the other anchor
        views = _t([[math.cos(angle), 0.0, math.sin(angle)], [0.0, 1.0, 0.0]])
        values.append(ntxent(anchors, views).item())
    assert all(a > b for a, b in zip(values, values[1:]))


def test_ntxent_scale_invariant(rng):
    a = torch.from_numpy(rng.normal(size=(6, 4)))
    v = torch.from_numpy(rng.normal(size=(6, 4)))
    assert ntxent(a, v).item() == pytest.approx(ntxent(3.7 * a, 3.7 * v).item(), abs=1e-9)


def test_ntxent_identical_embeddings():
    a = _t([[1.0, 2.0], [1.0, 2.0]])
    assert ntxent(a, a.clone()).item() == pytest.approx(math.log(3), abs=1e-9)


def test_ntxent_zero_norm():
    a = _t([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(NumericError):
        ntxent(a, a.clone())


def test_ntxent_bad_temperature():
    a = _t([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(InvalidArgumentError):
        ntxent(a, a, temperature=0.0)


# --------------------------------------------------
# Total
# --------------------------------------------------


def test_loss_terms_arithmetic():
    terms = LossTerms(cohi=_t(-1.0), r1=_t(2.0), r2=_t(0.5), beta1=0.25, beta2=1.0)
    assert terms.total.item() == pytest.approx(0.0)
    breakdown = terms.breakdown()
    assert breakdown.total == pytest.approx(0.0)
    assert (breakdown.cohi, breakdown.r1, breakdown.r2) == (-1.0, 2.0, 0.5)


def test_default_beta1_is_two_to_minus_depth():
    assert LossConfig().resolved_beta1(4) == 0.0625


def test_variants_set_weights():
    assert LossConfig(variant="cohi").beta2 == 0.0
    assert LossConfig(variant="cohi").resolved_beta1(3) == 0.0
    assert LossConfig(variant="cohi+r1").beta2 == 0.0
    assert LossConfig(variant="cohi+r1").resolved_beta1(3) == 0.125
    assert LossConfig(variant="cohi", beta2=0.5).beta2 == 0.5


def test_total_is_cohi_with_zero_weights(rng, topo2):
    outputs = PairOutputs(
        anchor_routing=torch.from_numpy(rng.uniform(size=(4, 3))),
        view_routing=torch.from_numpy(rng.uniform(size=(4, 3))),
        anchor_embed=torch.from_numpy(rng.normal(size=(4, 5))),
        view_embed=torch.from_numpy(rng.normal(size=(4, 5))),
    )
    terms = total_loss(outputs, topo2, LossConfig(variant="cohi"))
    assert terms.total.item() == terms.cohi.item()


def _flat_params(net):
    return [net.router.output.weight, net.router.output.bias, net.encoder.net[1].weight]


def test_total_loss_gradient_matches_finite_differences():
    torch.manual_seed(5)
    spec = EncoderSpec(architecture="mlp-small", embed_dim=4, hidden_width=6, input_shape=(3,))
    net = HierarchyNet.build(spec, depth=2, seed=1).double()
    topo = TreeTopology.complete(2)
    anchors = torch.randn(4, 3, dtype=torch.float64)
    views = anchors + 0.2 * torch.randn(4, 3, dtype=torch.float64)

    def loss_value():
        z = net.encode(torch.cat([anchors, views]))
        routing, embed = net.route(z), net.contrast_embed(z)
        outputs = PairOutputs(routing[:4], routing[4:], embed[:4], embed[4:])
        return total_loss(outputs, topo, LossConfig()).total

    net.zero_grad()
    loss_value().backward()
    h = 1e-6
    ok = total = 0
    for param in _flat_params(net):
        analytic = param.grad.clone()
        flat = param.data.view(-1)
        for k in range(flat.numel()):
            original = flat[k].item()
            with torch.no_grad():
                flat[k] = original + h
                plus = loss_value().item()
                flat[k] = original - h
                minus = loss_value().item()
                flat[k] = original
            numeric = (plus - minus) / (2 * h)
            a = analytic.view(-1)[k].item()
            error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            ok += error < 1e-3
            total += 1
    assert ok / total >= 0.95
