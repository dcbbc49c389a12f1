import itertools
import math

import numpy as np
import pytest

from qanon import core
from qanon.core import ProcessorLayout, StateVector, computational_basis, make_ghz, make_perm_closure, make_w
from qanon.errors import InvalidFamily, InvalidParameter
from qanon.netsim import BROADCAST, DIRECTED_RING, NetworkConfig, run_full_tree
from qanon.protocols import (
    build_protocol,
    candidate_voter,
    qdc_generalized,
    qdc_ghz,
    qle_generalized,
    qle_w,
)
from qanon.verify import check_total_correctness

import oracles


def tree_of(proto, state, **kw):
    return run_full_tree(proto, state, NetworkConfig(state.layout, **kw))


def labelled_state(labels, basis):
    vecs = {i: v for i, v in enumerate(basis.vectors)}
    return StateVector(ProcessorLayout(len(labels), basis.m), oracles.perm_closure_of_labels(labels, vecs))


@pytest.mark.parametrize("n", range(2, 9))
def test_qle_w_totally_correct(n):
    tree = tree_of(qle_w(n), make_w(n))
    leaves = tree.leaves()
    assert len(leaves) == n
    for leaf in leaves:
        assert leaf.kind == "terminal"
        assert leaf.statuses().count("leader") == 1
        assert abs(leaf.probability - 1 / n) < 1e-10
    report = check_total_correctness(tree)
    assert report.totally_correct
    assert (report.max_rounds, report.max_messages) == (1, 0)


def test_qle_w_complement():
    s = make_perm_closure("110", ProcessorLayout(3, 1))
    tree = tree_of(qle_w(3, complement=True), s)
    assert check_total_correctness(tree).totally_correct
    assert len(tree.leaves()) == 3
    # the plain variant elects two leaders on the same state
    assert not check_total_correctness(tree_of(qle_w(3), s)).partially_correct


@pytest.mark.parametrize("n", range(2, 9))
def test_qdc_ghz_totally_correct(n):
    tree = tree_of(qdc_ghz(n), make_ghz(n))
    leaves = tree.leaves()
    assert len(leaves) == 2
    for leaf in leaves:
        assert abs(leaf.probability - 0.5) < 1e-10
        assert len({c["decision"] for c in leaf.config.classical}) == 1
    assert check_total_correctness(tree).totally_correct


def test_qdc_ghz_on_w3_disagrees():
    report = check_total_correctness(tree_of(qdc_ghz(3), make_w(3)))
    assert report.terminating and not report.partially_correct
    assert all("differ" in reason for _, reason in report.violations)


def test_qle_generalized_m1_matches_qle_w():
    s = make_w(4)
    a = tree_of(qle_w(4), s).to_json()
    b = tree_of(qle_generalized(4, 1, {1}), s).to_json()
    assert a["nodes"] == b["nodes"] and a["edges"] == b["edges"]


def test_qle_generalized_m2_example():
    s = core.make_generalized_w(3, [0, 1], computational_basis(2))
    tree = tree_of(qle_generalized(3, 2, {3}), s)
    assert len(tree.leaves()) == 6
    assert check_total_correctness(tree).totally_correct


def test_qle_generalized_closure_over_splits():
    # every valid (L, F) split at m=2, all leader/follower label choices, in two bases
    d = 4
    for basis in (computational_basis(2), core.hadamard_basis(2)):
        for size in range(1, d):
            for leaders in itertools.combinations(range(d), size):
                followers = [j for j in range(d) if j not in leaders]
                proto = qle_generalized(3, 2, leaders, basis)
                for lead in leaders:
                    for fs in itertools.combinations_with_replacement(followers, 2):
                        s = core.make_generalized_w(lead, fs, basis)
                        assert check_total_correctness(tree_of(proto, s)).totally_correct


def test_qle_generalized_split_violated():
    # a leader label among the followers: two processors see label 3
    s = labelled_state([3, 3, 0], computational_basis(2))
    report = check_total_correctness(tree_of(qle_generalized(3, 2, {3}), s))
    assert not report.partially_correct
    assert all(reason == "2 leaders among honest processors" for _, reason in report.violations)


@pytest.mark.parametrize("labels", [set(), {0, 1}, {0, 1, 2, 3}])
def test_qle_generalized_bad_labels(labels):
    m = 1 if len(labels) == 2 else 2
    with pytest.raises(InvalidFamily):
        qle_generalized(3, m, labels)


def test_qdc_generalized_reductions():
    s = core.make_generalized_ghz([1, 1], computational_basis(1), 3)
    a = tree_of(qdc_ghz(3), s).to_json()
    b = tree_of(qdc_generalized(3, 1), s).to_json()
    assert a["edges"] == b["edges"]


def test_qdc_generalized_m2_four_leaves():
    s = core.make_generalized_ghz([1, 1, 1, 1], computational_basis(2), 3)
    tree = tree_of(qdc_generalized(3, 2), s)
    leaves = tree.leaves()
    assert len(leaves) == 4
    for leaf in leaves:
        assert math.isclose(leaf.probability, 0.25)
        assert len(set(leaf.outcome)) == 1
    assert check_total_correctness(tree).totally_correct


def test_qdc_generalized_single_branch():
    s = core.make_generalized_ghz([1, 0, 0, 0], computational_basis(2), 3)
    (leaf,) = tree_of(qdc_generalized(3, 2), s).leaves()
    assert leaf.probability == pytest.approx(1.0)
    assert [c["decision"] for c in leaf.config.classical] == [0, 0, 0]


def test_qdc_generalized_rotated_basis():
    basis = core.fourier_basis(2)
    s = core.make_generalized_ghz([1, 2, 0, 1j], basis, 3)
    tree = tree_of(qdc_generalized(3, 2, basis), s)
    assert len(tree.leaves()) == 3
    assert check_total_correctness(tree).totally_correct


@pytest.mark.parametrize("n", [2, 4, 1])
def test_candidate_voter_needs_odd_n(n):
    with pytest.raises(InvalidParameter):
        candidate_voter(n)


@pytest.mark.parametrize("n", [3, 5, 7])
def test_candidate_voter_broadcast_fails(n):
    s = make_perm_closure("11" + "0" * (n - 2), ProcessorLayout(n, 1))
    report = check_total_correctness(tree_of(candidate_voter(n, BROADCAST), s))
    assert not report.partially_correct
    for leaf in tree_of(candidate_voter(n, BROADCAST), s).leaves():
        assert leaf.statuses().count("candidate") == 2
        assert "leader" not in leaf.statuses()


@pytest.mark.parametrize("n", [3, 5, 7])
def test_candidate_voter_ring_correct(n):
    s = make_perm_closure("11" + "0" * (n - 2), ProcessorLayout(n, 1))
    tree = tree_of(candidate_voter(n, DIRECTED_RING), s, topology=DIRECTED_RING)
    report = check_total_correctness(tree)
    assert report.totally_correct
    assert report.leaves == math.comb(n, 2)
    assert report.max_rounds <= n + 2
    assert report.max_messages <= 2 * n


def test_candidate_voter_ring_first_arrival_wins():
    # candidates at 1 and 2: the token from 1 reaches 2 after one hop
    s = core.basis_state("11000", ProcessorLayout(5, 1))
    tree = run_full_tree(
        candidate_voter(5, DIRECTED_RING), s, NetworkConfig(s.layout, topology=DIRECTED_RING, require_anonymous=False)
    )
    (leaf,) = tree.leaves()
    assert leaf.statuses() == ["follower", "leader", "follower", "follower", "follower"]


def test_build_protocol_registry():
    assert build_protocol("qle_w", {"n": 3}).name == "qle_w"
    assert build_protocol("qle_gen", {"n": 3, "m": 2, "leader_labels": [3]}).leader_labels == {3}
    assert build_protocol("candidate_voter", {"n": 5, "topology": DIRECTED_RING}).params["topology"] == DIRECTED_RING
    with pytest.raises(InvalidParameter):
        build_protocol("nope", {"n": 3})
    with pytest.raises(InvalidParameter):
        build_protocol("qle_w", {})


def test_protocol_equivariance_of_leaves():
    # programs are identical on every processor: relabelled leaves carry the same probabilities
    rng = np.random.default_rng(4)
    s = core.random_anonymous_state(ProcessorLayout(3, 1), rng)
    tree = tree_of(qle_w(3), s)
    table = {leaf.outcome: leaf.probability for leaf in tree.leaves()}
    for outcome, p in table.items():
        for perm in itertools.permutations(range(3)):
            assert math.isclose(table[tuple(outcome[i] for i in perm)], p, abs_tol=1e-12)
