"""Built-in local protocols: leader election from W-like states, consensus from GHZ-like states,
and the two-candidate example on broadcast and directed-ring networks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping

from .core import HADAMARD, LocalBasis, computational_basis, computational_projectors
from .errors import InvalidFamily, InvalidParameter
from .netsim import BROADCAST, DIRECTED_RING, IDLE, TOPOLOGIES, LocalProtocol, RoundAction

LEADER_ELECTION = "leader_election"
CONSENSUS = "consensus"
TASKS = (LEADER_ELECTION, CONSENSUS)


@dataclass(frozen=True)
class ProtocolOutcomeSpec:
    task: str
    statuses: frozenset[str]
    leader_labels: frozenset[int] | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidParameter(f"unknown task {self.task!r}")


def outcome_spec(protocol: LocalProtocol) -> ProtocolOutcomeSpec:
    if protocol.task == LEADER_ELECTION:
        statuses = frozenset({"wait", "leader", "follower", "candidate", "voter"})
    else:
        statuses = frozenset({"wait", "decided"})
    return ProtocolOutcomeSpec(protocol.task, statuses, protocol.leader_labels)


def _check_n(n: int):
    if n < 2:
        raise InvalidParameter(f"need n >= 2, got {n}")


def qle_w(n: int, complement: bool = False) -> LocalProtocol:
    """Measure the own qubit once; outcome 1 (0 for the complement state) makes a leader."""
    _check_n(n)
    winner = 0 if complement else 1
    measure = computational_projectors(1)

    def post(local, outcome, inbox):
        local["outcome"] = outcome
        return local, None, "leader" if outcome == winner else "follower"

    def program(rnd, local, inbox):
        return RoundAction(projectors=measure, post=post) if rnd == 1 else IDLE

    return LocalProtocol(
        name="qle_w",
        task=LEADER_ELECTION,
        program=program,
        params={"n": n, "complement": complement},
        leader_labels=frozenset({winner}),
    )


def qle_generalized(n: int, m: int, leader_labels: Iterable[int], basis: LocalBasis | None = None) -> LocalProtocol:
    """Measure all local qubits in ``basis``; a result among ``leader_labels`` makes a leader."""
    _check_n(n)
    basis = basis or computational_basis(m)
    if basis.m != m:
        raise InvalidParameter(f"basis acts on {basis.m} qubits, expected {m}")
    labels = frozenset(int(i) for i in leader_labels)
    if not labels or labels >= set(range(basis.dim)):
        raise InvalidFamily("leader labels must be a nonempty proper subset of the basis labels")
    if not labels <= set(range(basis.dim)):
        raise InvalidParameter(f"leader labels {sorted(labels)} out of range")
    measure = basis.projectors()

    def post(local, outcome, inbox):
        local["outcome"] = outcome
        return local, None, "leader" if outcome in labels else "follower"

    def program(rnd, local, inbox):
        return RoundAction(projectors=measure, post=post) if rnd == 1 else IDLE

    return LocalProtocol(
        name="qle_gen",
        task=LEADER_ELECTION,
        program=program,
        params={"n": n, "m": m, "leader_labels": sorted(labels), "basis": basis.name},
        leader_labels=labels,
    )


def _decide_post(local, outcome, inbox):
    local["decision"] = outcome
    return local, None, "decided"


def qdc_ghz(n: int) -> LocalProtocol:
    """Measure the own qubit once and decide the result."""
    _check_n(n)
    measure = computational_projectors(1)

    def program(rnd, local, inbox):
        return RoundAction(projectors=measure, post=_decide_post) if rnd == 1 else IDLE

    return LocalProtocol(name="qdc_ghz", task=CONSENSUS, program=program, params={"n": n})


def qdc_generalized(n: int, m: int, basis: LocalBasis | None = None) -> LocalProtocol:
    """2**m-valued consensus: measure all local qubits in ``basis`` and decide the outcome label."""
    _check_n(n)
    if m < 1:
        raise InvalidParameter("m must be >= 1")
    basis = basis or computational_basis(m)
    if basis.m != m:
        raise InvalidParameter(f"basis acts on {basis.m} qubits, expected {m}")
    measure = basis.projectors()

    def program(rnd, local, inbox):
        return RoundAction(projectors=measure, post=_decide_post) if rnd == 1 else IDLE

    return LocalProtocol(
        name="qdc_gen", task=CONSENSUS, program=program, params={"n": n, "m": m, "basis": basis.name}
    )


TOKEN = "tok"


def candidate_voter(n: int, topology: str = BROADCAST) -> LocalProtocol:
    """Two candidates from Perm|1100...0>; voters vote (broadcast) or relay tokens (ring).

    Broadcast: after the first measurement voters measure H(q) and broadcast the
    bit, then every processor halts; nothing can tell the two candidates apart.

    Directed ring: each candidate sends a token clockwise and voters relay it
    once, becoming followers. With n odd the two tokens travel distances d and
    n - d, so they arrive in different rounds; a candidate whose token arrives
    by round (n + 1) / 2 was first and becomes leader, the other one follower.
    """
    if n < 3 or n % 2 == 0:
        raise InvalidParameter(f"candidate/voter needs an odd n >= 3, got {n}")
    if topology not in TOPOLOGIES:
        raise InvalidParameter(f"unknown topology {topology!r}")
    measure = computational_projectors(1)
    first_arrival = (n + 1) // 2

    def split(local, outcome, inbox):
        local["outcome"] = outcome
        role = "candidate" if outcome == 1 else "voter"
        msg = TOKEN if (role == "candidate" and topology == DIRECTED_RING) else None
        return local, msg, role

    def halt(local, outcome, inbox):
        local["halted"] = True
        return local, None, local["status"]

    def vote(local, outcome, inbox):
        local["vote"] = outcome
        local["halted"] = True
        return local, str(outcome), local["status"]

    def relay(local, outcome, inbox):
        return local, TOKEN, "follower"

    def broadcast_program(rnd, local, inbox):
        if rnd == 1:
            return RoundAction(projectors=measure, post=split)
        if rnd == 2 and local["status"] == "voter":
            return RoundAction(unitary=HADAMARD, projectors=measure, post=vote)
        if rnd == 2:
            return RoundAction(post=halt)
        return IDLE

    def ring_program(rnd, local, inbox):
        if rnd == 1:
            return RoundAction(projectors=measure, post=split)
        if TOKEN not in inbox:
            return IDLE
        status = local["status"]
        if status == "voter":
            return RoundAction(post=relay)
        if status == "candidate":
            # distances d and n - d differ for odd n, so no arrival can tie
            assert rnd - 1 != n - (rnd - 1)
            verdict = "leader" if rnd <= first_arrival else "follower"
            return RoundAction(post=lambda local, outcome, inbox: (local, None, verdict))
        return IDLE

    return LocalProtocol(
        name="candidate_voter",
        task=LEADER_ELECTION,
        program=ring_program if topology == DIRECTED_RING else broadcast_program,
        params={"n": n, "topology": topology},
        leader_labels=frozenset({1}),
    )


PROTOCOL_NAMES = ("qle_w", "qle_gen", "qdc_ghz", "qdc_gen", "candidate_voter")


def build_protocol(name: str, params: Mapping[str, Any] | None = None) -> LocalProtocol:
    """Protocol from a registry name and parameters, as in ``{"protocol": ..., "params": {...}}``."""
    from .core import basis_from_name

    params = dict(params or {})
    try:
        if name == "qle_w":
            return qle_w(int(params["n"]), bool(params.get("complement", False)))
        if name == "qle_gen":
            m = int(params.get("m", 1))
            basis = basis_from_name(params.get("basis", "computational"), m)
            return qle_generalized(int(params["n"]), m, params["leader_labels"], basis)
        if name == "qdc_ghz":
            return qdc_ghz(int(params["n"]))
        if name == "qdc_gen":
            m = int(params.get("m", 1))
            return qdc_generalized(int(params["n"]), m, basis_from_name(params.get("basis", "computational"), m))
        if name == "candidate_voter":
            return candidate_voter(int(params["n"]), params.get("topology", BROADCAST))
    except KeyError as exc:
        raise InvalidParameter(f"protocol {name!r} is missing parameter {exc}") from None
    raise InvalidParameter(f"unknown protocol {name!r}; choose from {list(PROTOCOL_NAMES)}")
