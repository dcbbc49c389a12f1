"""Synchronous round engine for anonymous networks.

Each round every honest processor receives what was sent to it in the previous
round, runs its local action (optional ancilla allocation, unitary, and
measurement, then deterministic post-processing), and emits at most one
message. Branching comes only from measurement. ``run_full_tree`` expands every
branch; ``sample_run`` follows one seeded branch.
"""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .core import (
    PRUNE_TOL,
    ProcessorLayout,
    ProjectorSet,
    StateVector,
    apply_processor_unitary,
    is_anonymous,
    lift_projectors,
    measure_processor,
)
from .errors import InvalidInput, InvalidOperator, InvalidParameter

log = logging.getLogger(__name__)

BROADCAST = "broadcast"
DIRECTED_RING = "directed_ring"
TOPOLOGIES = (BROADCAST, DIRECTED_RING)
FINAL_STATUSES = frozenset({"leader", "follower", "decided"})
DEFAULT_MAX_ROUNDS = 16
DEFAULT_NODE_BUDGET = 200_000

# post(classical, outcome, inbox) -> (new classical, outgoing message or None, status)
PostProcess = Callable[[dict, "int | None", tuple], tuple[dict, "str | None", str]]


@dataclass(frozen=True)
class RoundAction:
    """One processor's local step. ``unitary`` acts on the block after ancillas are appended."""

    ancillas: int = 0
    unitary: np.ndarray | None = None
    projectors: ProjectorSet | None = None
    qubits: tuple[int, ...] | None = None
    post: PostProcess | None = None


IDLE = RoundAction()


@dataclass(frozen=True)
class LocalProtocol:
    """The single program every processor runs: ``program(round, classical, inbox) -> RoundAction``."""

    name: str
    task: str
    program: Callable[[int, Mapping, tuple], RoundAction]
    initial: Mapping[str, Any] = field(default_factory=lambda: {"status": "wait"})
    params: Mapping[str, Any] = field(default_factory=dict)
    leader_labels: frozenset[int] | None = None


@dataclass(frozen=True)
class ForgingStrategy:
    kind: str
    value: str | None = None

    def forge(self, message: str | None, outcome: int | None) -> str | None:
        if self.kind == "silent":
            return None
        if self.kind == "constant":
            return self.value
        # flip: complement protocol bits, or contradict the measured outcome when the protocol is silent
        if message is not None:
            return message.translate(str.maketrans("01", "10"))
        if outcome is not None:
            return "1" if outcome == 0 else "0"
        return None

    def __str__(self):
        return f"constant({self.value})" if self.kind == "constant" else self.kind


def parse_strategy(spec) -> ForgingStrategy:
    """Accepts a ForgingStrategy, ``"silent"``, ``"flip"``, ``"constant(v)"`` or ``"constant:v"``."""
    if isinstance(spec, ForgingStrategy):
        return spec
    text = str(spec).strip()
    if text in ("silent", "flip"):
        return ForgingStrategy(text)
    for prefix, suffix in (("constant(", ")"), ("constant:", "")):
        if text.startswith(prefix) and text.endswith(suffix):
            return ForgingStrategy("constant", text[len(prefix):len(text) - len(suffix)])
    raise InvalidParameter(f"unknown forging strategy {spec!r}; use silent, flip or constant(v)")


@dataclass(frozen=True)
class NetworkConfig:
    layout: ProcessorLayout
    topology: str = BROADCAST
    max_rounds: int = DEFAULT_MAX_ROUNDS
    byzantine: frozenset[int] = frozenset()
    strategy: ForgingStrategy = ForgingStrategy("silent")
    node_budget: int = DEFAULT_NODE_BUDGET
    require_anonymous: bool = True

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise InvalidParameter(f"unknown topology {self.topology!r}")
        if self.max_rounds < 1:
            raise InvalidParameter("max_rounds must be >= 1")
        object.__setattr__(self, "byzantine", frozenset(self.byzantine))
        if not self.byzantine <= set(range(1, self.layout.n + 1)):
            raise InvalidParameter(f"byzantine set {sorted(self.byzantine)} outside 1..{self.layout.n}")
        object.__setattr__(self, "strategy", parse_strategy(self.strategy))

    def honest(self) -> list[int]:
        return [p for p in range(1, self.layout.n + 1) if p not in self.byzantine]

    def to_json(self) -> dict:
        return {
            "n": self.layout.n,
            "m": self.layout.m,
            "topology": self.topology,
            "max_rounds": self.max_rounds,
            "byzantine": sorted(self.byzantine),
            "strategy": str(self.strategy),
            "node_budget": self.node_budget,
            "prune_threshold": PRUNE_TOL,
        }


def inject_byzantine(config: NetworkConfig, processors, strategy) -> NetworkConfig:
    strategy = parse_strategy(strategy)
    processors = frozenset(processors)
    if not processors:
        return config
    return replace(config, byzantine=config.byzantine | processors, strategy=strategy)


def deliver(topology: str, outputs: Mapping[int, str | None], n: int) -> tuple[tuple[str, ...], ...]:
    """Inboxes (as sorted multisets, no sender identity) for processors 1..n."""
    boxes: list[list[str]] = [[] for _ in range(n)]
    sent = [(p, msg) for p, msg in outputs.items() if msg is not None]
    if topology == BROADCAST:
        everything = [msg for _, msg in sent]
        boxes = [list(everything) for _ in range(n)]
    elif topology == DIRECTED_RING:
        for p, msg in sent:
            boxes[p % n].append(msg)  # clockwise neighbour of p is p+1
    else:
        raise InvalidParameter(f"unknown topology {topology!r}")
    return tuple(tuple(sorted(b)) for b in boxes)


@dataclass(frozen=True)
class GlobalConfiguration:
    quantum: StateVector
    classical: tuple[Mapping[str, Any], ...]
    # engine-side bookkeeping: (sender, message, forged); delivery strips the sender
    in_transit: tuple[tuple[int, str, bool], ...]
    round: int

    def statuses(self) -> list[str]:
        return [status_label(c) for c in self.classical]


def status_label(local: Mapping[str, Any]) -> str:
    status = local.get("status", "wait")
    if status == "decided":
        return f"decided({local.get('decision')})"
    return status


def _freeze(d: Mapping) -> Mapping:
    return MappingProxyType(dict(d))


@dataclass
class TreeNode:
    id: int
    parent: int | None
    config: GlobalConfiguration
    probability: float
    outcome: tuple[int | None, ...] = ()
    edge_probability: float = 1.0
    messages: tuple[str, ...] = ()
    honest_messages: int = 0
    kind: str = "internal"
    children: list["TreeNode"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return self.kind != "internal"

    @property
    def round(self) -> int:
        return self.config.round

    def statuses(self) -> list[str]:
        return self.config.statuses()


@dataclass
class ExecutionTree:
    protocol: LocalProtocol
    config: NetworkConfig
    nodes: list[TreeNode]
    truncated: bool = False

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    @property
    def n(self) -> int:
        return self.config.layout.n

    def leaves(self) -> list[TreeNode]:
        return [nd for nd in self.nodes if nd.is_leaf]

    def path_to(self, node: TreeNode) -> list[TreeNode]:
        path = [node]
        while path[-1].parent is not None:
            path.append(self.nodes[path[-1].parent])
        return path[::-1]

    def messages_on_path(self, node: TreeNode) -> int:
        return sum(nd.honest_messages for nd in self.path_to(node))

    def depth(self) -> int:
        return max(nd.round for nd in self.nodes)

    def to_json(self) -> dict:
        nodes = [
            {
                "id": nd.id,
                "round": nd.round,
                "kind": nd.kind,
                "probability": nd.probability,
                "statuses": nd.statuses(),
            }
            for nd in self.nodes
        ]
        edges = [
            {
                "parent": nd.parent,
                "child": nd.id,
                "outcome": list(nd.outcome),
                "probability": nd.edge_probability,
                "messages": list(nd.messages),
            }
            for nd in self.nodes
            if nd.parent is not None
        ]
        return {
            "protocol": self.protocol.name,
            "config": self.config.to_json(),
            "truncated": self.truncated,
            "nodes": nodes,
            "edges": edges,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# ---------------------------------------------------------------- engine


def is_terminal(config: GlobalConfiguration, net: NetworkConfig) -> bool:
    """All honest processors final (or halted) and no honest message still in flight."""
    for p in net.honest():
        local = config.classical[p - 1]
        if local.get("status") not in FINAL_STATUSES and not local.get("halted", False):
            return False
    return not any(not forged for _, _, forged in config.in_transit)


def _initial_config(protocol: LocalProtocol, initial: StateVector, net: NetworkConfig) -> GlobalConfiguration:
    if initial.layout != net.layout:
        raise InvalidInput(f"state layout {initial.layout} does not match network layout {net.layout}")
    wanted = protocol.params.get("topology")
    if wanted is not None and wanted != net.topology:
        raise InvalidInput(f"protocol {protocol.name} is built for {wanted}, network is {net.topology}")
    if net.require_anonymous and not is_anonymous(initial):
        raise InvalidInput("initial state is not anonymous (pass require_anonymous=False to waive)")
    local = _freeze(protocol.initial)
    return GlobalConfiguration(initial, tuple(local for _ in range(initial.n)), (), 0)


def _append_ancillas(state: StateVector, count: int) -> StateVector:
    if count == 0:
        return state
    old = state.layout
    new = ProcessorLayout(old.n, old.m + count)
    tensor = np.zeros(new.shape, dtype=complex)
    stride = 2**count
    tensor[tuple(slice(0, None, stride) for _ in range(old.n))] = state.tensor
    return StateVector(new, tensor)


def _successors(protocol: LocalProtocol, cfg: GlobalConfiguration, net: NetworkConfig):
    """Children of a configuration as (joint outcome, conditional probability, child config, sent, honest count)."""
    n = net.layout.n
    rnd = cfg.round + 1
    inboxes = deliver(net.topology, {}, n) if not cfg.in_transit else _inboxes(cfg, net)
    actions = [protocol.program(rnd, cfg.classical[p], inboxes[p]) or IDLE for p in range(n)]

    extra = max(a.ancillas for a in actions)
    state = _append_ancillas(cfg.quantum, extra)
    m = state.layout.m
    for p, a in enumerate(actions, start=1):
        if a.unitary is not None:
            u = np.asarray(a.unitary, dtype=complex)
            pad = extra - a.ancillas
            if pad:
                u = np.kron(u, np.eye(2**pad))
            state = apply_processor_unitary(state, p, u)

    # sequential enumeration in processor order yields lexicographic joint outcomes
    branches: list[tuple[tuple, float, StateVector]] = [((), 1.0, state)]
    for p, a in enumerate(actions, start=1):
        if a.projectors is None:
            branches = [(o + (None,), pr, st) for o, pr, st in branches]
            continue
        proj = a.projectors
        if a.qubits is not None:
            proj = lift_projectors(proj, a.qubits, m)
        if proj.dim != 2**m:
            raise InvalidOperator(f"processor {p} measures a {proj.dim}-dim space but holds {m} qubits")
        nxt = []
        for o, pr, st in branches:
            for res in measure_processor(st, p, proj):
                if pr * res.probability >= PRUNE_TOL:
                    nxt.append((o + (res.index,), pr * res.probability, res.state))
        branches = nxt

    total = sum(pr for _, pr, _ in branches)
    children = []
    for outcome, pr, st in branches:
        classical = []
        transit = []
        for p, a in enumerate(actions, start=1):
            local = cfg.classical[p - 1]
            msg = None
            if a.post is not None:
                new, msg, status = a.post(dict(local), outcome[p - 1], inboxes[p - 1])
                new["status"] = status
                local = _freeze(new)
            forged = p in net.byzantine
            if forged:
                msg = net.strategy.forge(msg, outcome[p - 1])
            if msg is not None:
                transit.append((p, msg, forged))
            classical.append(local)
        child = GlobalConfiguration(st, tuple(classical), tuple(transit), rnd)
        honest = sum(1 for _, _, f in transit if not f)
        children.append((outcome, pr / total, child, tuple(msg for _, msg, _ in transit), honest))
    return children


def _inboxes(cfg: GlobalConfiguration, net: NetworkConfig):
    outputs: dict[int, str] = {}
    for sender, msg, _ in cfg.in_transit:
        outputs[sender] = msg
    return deliver(net.topology, outputs, net.layout.n)


def run_full_tree(protocol: LocalProtocol, initial: StateVector, config: NetworkConfig) -> ExecutionTree:
    """Breadth-first expansion of every branch with probability above the prune threshold."""
    root_cfg = _initial_config(protocol, initial, config)
    root = TreeNode(0, None, root_cfg, 1.0)
    nodes = [root]
    queue = deque([root])
    truncated = False
    while queue:
        node = queue.popleft()
        if is_terminal(node.config, config):
            node.kind = "terminal"
            continue
        if node.round >= config.max_rounds:
            node.kind = "cutoff"
            continue
        succ = _successors(protocol, node.config, config)
        if len(nodes) + len(succ) > config.node_budget:
            truncated = True
            node.kind = "cutoff"
            log.warning("node budget %d exceeded; returning partial tree", config.node_budget)
            for rest in queue:
                rest.kind = "cutoff"
            break
        for outcome, pr, child_cfg, msgs, honest in succ:
            child = TreeNode(
                id=len(nodes),
                parent=node.id,
                config=child_cfg,
                probability=node.probability * pr,
                outcome=outcome,
                edge_probability=pr,
                messages=msgs,
                honest_messages=honest,
            )
            nodes.append(child)
            node.children.append(child)
            queue.append(child)
    return ExecutionTree(protocol, config, nodes, truncated)


@dataclass(frozen=True)
class SampleResult:
    leaf: GlobalConfiguration
    terminal: bool
    transcript: list[str]


def sample_run(protocol: LocalProtocol, initial: StateVector, config: NetworkConfig, seed: int) -> SampleResult:
    """Follow one seeded branch to a terminal or cutoff configuration."""
    rng = np.random.default_rng(seed)
    cfg = _initial_config(protocol, initial, config)
    lines = []
    while not is_terminal(cfg, config) and cfg.round < config.max_rounds:
        succ = _successors(protocol, cfg, config)
        probs = np.array([s[1] for s in succ])
        pick = int(rng.choice(len(succ), p=probs / probs.sum()))
        outcome, _, cfg, msgs, _ = succ[pick]
        lines.append(format_round(cfg.round, outcome, msgs, cfg.statuses()))
    return SampleResult(cfg, is_terminal(cfg, config), lines)


def format_round(rnd: int, outcome: Sequence, messages: Sequence[str], statuses: Sequence[str]) -> str:
    vec = "[" + ",".join("-" if o is None else str(o) for o in outcome) + "]"
    multiset = "{" + ",".join(sorted(messages)) + "}"
    return f"round={rnd} outcomes={vec} messages={multiset} statuses=[{','.join(statuses)}]"


def edge_probability_sums(tree: ExecutionTree) -> list[float]:
    return [math.fsum(c.edge_probability for c in nd.children) for nd in tree.nodes if nd.children]
