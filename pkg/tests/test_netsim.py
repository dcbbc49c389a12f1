import collections
import math

import numpy as np
import pytest

from qanon import core, netsim
from qanon.core import HADAMARD, ProcessorLayout, StateVector, make_ghz, make_w
from qanon.errors import InvalidInput, InvalidParameter
from qanon.netsim import (
    BROADCAST,
    DIRECTED_RING,
    ForgingStrategy,
    LocalProtocol,
    NetworkConfig,
    RoundAction,
    deliver,
    inject_byzantine,
    parse_strategy,
    run_full_tree,
    sample_run,
)
from qanon.protocols import CONSENSUS, candidate_voter, qdc_ghz, qle_w

import oracles


def net(state, **kw):
    return NetworkConfig(state.layout, **kw)


def leaf_table(tree):
    return {leaf.outcome: leaf.probability for leaf in tree.leaves()}


# ---------------------------------------------------------------- delivery


def test_broadcast_delivery_multiset():
    boxes = deliver(BROADCAST, {1: "a", 3: "b"}, 3)
    assert boxes == (("a", "b"),) * 3


def test_ring_delivery_one_hop():
    boxes = deliver(DIRECTED_RING, {2: "x"}, 4)
    assert boxes == ((), (), ("x",), ())
    assert deliver(DIRECTED_RING, {4: "y"}, 4)[0] == ("y",)


def test_unknown_topology():
    with pytest.raises(InvalidParameter):
        deliver("star", {}, 3)
    with pytest.raises(InvalidParameter):
        NetworkConfig(ProcessorLayout(3, 1), topology="star")


def test_forged_message_indistinguishable():
    # a Byzantine broadcaster's message lands in honest inboxes as a bare string
    def program(rnd, local, inbox):
        if rnd == 1:
            return RoundAction(post=lambda l, o, i: (l, "a", "wait"))
        if rnd == 2:
            return RoundAction(post=lambda l, o, i: (l | {"seen": i}, None, "follower"))
        return netsim.IDLE

    proto = LocalProtocol("echo", "leader_election", program)
    s = core.basis_state("000", ProcessorLayout(3, 1))
    cfg = net(s, byzantine={2}, strategy="constant(z)")
    tree = run_full_tree(proto, s, cfg)
    (leaf,) = tree.leaves()
    assert leaf.config.classical[0]["seen"] == ("a", "a", "z")
    assert tree.nodes[1].honest_messages == 2


# ---------------------------------------------------------------- byzantine


def test_inject_empty_is_identity():
    cfg = NetworkConfig(ProcessorLayout(3, 1))
    assert inject_byzantine(cfg, [], "flip") is cfg


def test_inject_and_bad_strategy():
    cfg = inject_byzantine(NetworkConfig(ProcessorLayout(3, 1)), [1, 3], "constant:junk")
    assert cfg.byzantine == {1, 3} and cfg.honest() == [2]
    assert cfg.strategy == ForgingStrategy("constant", "junk")
    with pytest.raises(InvalidParameter):
        inject_byzantine(cfg, [2], "shout")
    with pytest.raises(InvalidParameter):
        NetworkConfig(ProcessorLayout(3, 1), byzantine={4})


def test_strategies():
    assert parse_strategy("constant(1)").forge("0", 0) == "1"
    assert parse_strategy("flip").forge("01", 0) == "10"
    assert parse_strategy("flip").forge(None, 1) == "0"
    assert parse_strategy("silent").forge("x", 1) is None


@pytest.mark.parametrize("strategy", ["constant(junk)", "flip", "silent"])
def test_qdc_honest_processor_decides_own_bit(strategy):
    s = make_ghz(4)
    tree = run_full_tree(qdc_ghz(4), s, net(s, byzantine={1, 2, 3}, strategy=strategy))
    leaves = tree.leaves()
    assert len(leaves) == 2
    for leaf in leaves:
        assert leaf.kind == "terminal"
        assert leaf.config.classical[3]["decision"] == leaf.outcome[3]


def test_qle_silent_byzantine_tree_identical():
    s = make_w(3)
    honest = run_full_tree(qle_w(3), s, net(s))
    byz = run_full_tree(qle_w(3), s, net(s, byzantine={1}, strategy="silent"))
    assert honest.to_json()["nodes"] == byz.to_json()["nodes"]
    assert honest.to_json()["edges"] == byz.to_json()["edges"]


# ---------------------------------------------------------------- trees


def test_qle_w3_tree():
    s = make_w(3)
    tree = run_full_tree(qle_w(3), s, net(s, max_rounds=3))
    assert leaf_table(tree).keys() == oracles.one_round_leaves(s.amplitudes, 3).keys()
    for leaf in tree.leaves():
        assert leaf.kind == "terminal"
        assert math.isclose(leaf.probability, 1 / 3, abs_tol=1e-12)
        assert leaf.statuses().count("leader") == 1
    # lexicographic outcome order
    assert [leaf.outcome for leaf in tree.leaves()] == [(0, 0, 1), (0, 1, 0), (1, 0, 0)]


@pytest.mark.parametrize("n", [2, 3, 5])
def test_qdc_ghz_tree(n):
    s = make_ghz(n)
    tree = run_full_tree(qdc_ghz(n), s, net(s))
    table = leaf_table(tree)
    assert table.keys() == {(0,) * n, (1,) * n}
    assert all(math.isclose(p, 0.5) for p in table.values())


def test_qle_on_product_state():
    s = core.basis_state("000", ProcessorLayout(3, 1))
    tree = run_full_tree(qle_w(3), s, net(s, require_anonymous=False))
    (leaf,) = tree.leaves()
    assert leaf.outcome == (0, 0, 0)
    # the listing makes every 0-outcome a follower: terminal, but no leader
    assert leaf.kind == "terminal" and leaf.statuses() == ["follower"] * 3


def test_non_anonymous_rejected_unless_waived():
    s = core.basis_state("001", ProcessorLayout(3, 1))
    with pytest.raises(InvalidInput):
        run_full_tree(qle_w(3), s, net(s))
    assert len(run_full_tree(qle_w(3), s, net(s, require_anonymous=False)).leaves()) == 1


def test_layout_mismatch():
    with pytest.raises(InvalidInput):
        run_full_tree(qle_w(3), make_w(3), NetworkConfig(ProcessorLayout(4, 1)))


def test_topology_mismatch():
    s = core.make_perm_closure("11000", ProcessorLayout(5, 1))
    with pytest.raises(InvalidInput):
        run_full_tree(candidate_voter(5, DIRECTED_RING), s, net(s))


def test_cutoff_leaves():
    def program(rnd, local, inbox):
        return netsim.IDLE

    s = make_w(3)
    tree = run_full_tree(LocalProtocol("idle", "leader_election", program), s, net(s, max_rounds=2))
    (leaf,) = tree.leaves()
    assert leaf.kind == "cutoff" and leaf.round == 2


def test_node_budget_truncates():
    s = core.make_perm_closure("11000", ProcessorLayout(5, 1))
    cfg = net(s, topology=DIRECTED_RING, node_budget=5)
    tree = run_full_tree(candidate_voter(5, DIRECTED_RING), s, cfg)
    assert tree.truncated
    assert len(tree.nodes) <= 5
    assert any(leaf.kind == "cutoff" for leaf in tree.leaves())


def test_probability_conservation():
    for state, proto in [
        (make_w(4), qle_w(4)),
        (make_ghz(4), qdc_ghz(4)),
        (core.random_anonymous_state(ProcessorLayout(3, 1), np.random.default_rng(5)), qle_w(3)),
    ]:
        tree = run_full_tree(proto, state, net(state))
        assert all(abs(x - 1) < 1e-9 for x in netsim.edge_probability_sums(tree))
        assert abs(math.fsum(leaf.probability for leaf in tree.leaves()) - 1) < 1e-9


def test_tree_deterministic():
    s = core.random_anonymous_state(ProcessorLayout(4, 1), np.random.default_rng(8))
    a = run_full_tree(qle_w(4), s, net(s)).dumps()
    b = run_full_tree(qle_w(4), s, net(s)).dumps()
    assert a == b


def test_engine_anonymity_under_permutation():
    rng = np.random.default_rng(17)
    s = StateVector(ProcessorLayout(3, 1), rng.standard_normal(8) + 1j * rng.standard_normal(8))
    perm = [2, 0, 1]
    base = leaf_table(run_full_tree(qle_w(3), s, net(s, require_anonymous=False)))
    moved = leaf_table(run_full_tree(qle_w(3), s.permuted(perm), net(s, require_anonymous=False)))
    assert len(base) == len(moved) == 8
    for outcome, p in base.items():
        assert math.isclose(moved[tuple(outcome[q] for q in perm)], p, abs_tol=1e-12)


def test_ancilla_round():
    # copy the qubit onto a fresh ancilla and measure only the ancilla
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])

    def post(local, outcome, inbox):
        return local | {"decision": outcome}, None, "decided"

    def program(rnd, local, inbox):
        if rnd == 1:
            return RoundAction(ancillas=1, unitary=cnot, projectors=core.computational_projectors(1), qubits=(2,), post=post)
        return netsim.IDLE

    s = make_ghz(3)
    tree = run_full_tree(LocalProtocol("copy", CONSENSUS, program), s, net(s))
    assert leaf_table(tree) == pytest.approx({(0, 0, 0): 0.5, (1, 1, 1): 0.5})
    leaf = tree.leaves()[1]
    assert leaf.config.quantum.layout == ProcessorLayout(3, 2)
    # the post-measurement state is |11 11 11>
    assert leaf.config.quantum.support() == [63]


def test_unitary_then_measure_in_same_round():
    # H before measuring turns |000> into a uniform 8-leaf tree
    def program(rnd, local, inbox):
        if rnd == 1:
            return RoundAction(unitary=HADAMARD, projectors=core.computational_projectors(1), post=lambda l, o, i: (l, None, "follower"))
        return netsim.IDLE

    s = core.basis_state("000", ProcessorLayout(3, 1))
    tree = run_full_tree(LocalProtocol("h", "leader_election", program), s, net(s))
    assert len(tree.leaves()) == 8
    assert all(math.isclose(p, 1 / 8) for p in leaf_table(tree).values())


# ---------------------------------------------------------------- sampling


def test_sample_qle_w4_seed7():
    res = sample_run(qle_w(4), make_w(4), net(make_w(4)), seed=7)
    assert res.terminal
    assert [c["status"] for c in res.leaf.classical].count("leader") == 1
    assert res.transcript[0].startswith("round=1 outcomes=[")


def test_sample_qdc_ghz5_seed1():
    res = sample_run(qdc_ghz(5), make_ghz(5), net(make_ghz(5)), seed=1)
    assert len({c["decision"] for c in res.leaf.classical}) == 1


def test_sample_deterministic():
    s = make_w(4)
    assert sample_run(qle_w(4), s, net(s), 3).transcript == sample_run(qle_w(4), s, net(s), 3).transcript


def test_sampling_matches_tree():
    s = core.random_anonymous_state(ProcessorLayout(3, 1), np.random.default_rng(21))
    cfg = net(s)
    tree = leaf_table(run_full_tree(qle_w(3), s, cfg))
    count = 4000
    freq = collections.Counter()
    for seed in range(count):
        leaf = sample_run(qle_w(3), s, cfg, seed).leaf
        freq[tuple(c["outcome"] for c in leaf.classical)] += 1
    for outcome, p in tree.items():
        assert abs(freq[outcome] / count - p) <= oracles.binomial_halfwidth(p, count, 5) + 1e-12


def test_format_round():
    line = netsim.format_round(2, (1, None), ["b", "a"], ["leader", "wait"])
    assert line == "round=2 outcomes=[1,-] messages={a,b} statuses=[leader,wait]"
