"""Judgments over execution trees and states."""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .core import (
    PAULI_X,
    HADAMARD,
    LocalBasis,
    ProcessorLayout,
    StateVector,
    apply_local_unitary,
    basis_from_name,
    basis_to_json,
    coefficients_in_basis,
    computational_basis,
    is_anonymous,
    make_generalized_ghz,
    make_ghz,
    make_perm_closure,
    make_w,
    purity,
    random_anonymous_state,
    reduced_density_matrix,
    rotation,
    state_to_dict,
)
from .errors import InvalidInput, InvalidParameter
from .netsim import ExecutionTree, NetworkConfig, run_full_tree, status_label
from .protocols import CONSENSUS, LEADER_ELECTION, ProtocolOutcomeSpec, outcome_spec, qdc_ghz, qle_w
from .symmetry import (
    DEFAULT_GRID,
    DEFAULT_SEED,
    DEFAULT_TRIALS,
    find_symmetric_path,
    forbidden_move_witness,
    grid_bases,
    random_bases,
)

PURITY_TOL = 1e-9
FAMILY_TOL = 1e-8

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
EXIT_CODES = {PASS: 0, FAIL: 1, INCONCLUSIVE: 2}


# ---------------------------------------------------------------- correctness


@dataclass
class CorrectnessReport:
    terminating: bool
    partially_correct: bool
    violations: list[tuple[int, str]]
    inconclusive: bool = False
    leaves: int = 0
    max_rounds: int = 0
    max_messages: int = 0

    @property
    def totally_correct(self) -> bool:
        return self.terminating and self.partially_correct

    @property
    def verdict(self) -> str:
        if self.inconclusive:
            return INCONCLUSIVE
        return PASS if self.totally_correct else FAIL

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "terminating": self.terminating,
            "partially_correct": self.partially_correct,
            "totally_correct": self.totally_correct,
            "inconclusive": self.inconclusive,
            "leaves": self.leaves,
            "max_rounds": self.max_rounds,
            "max_messages": self.max_messages,
            "violations": [{"leaf": leaf, "reason": reason} for leaf, reason in self.violations],
        }


def leaf_violation(statuses_locals, honest: list[int], spec: ProtocolOutcomeSpec) -> str | None:
    """Reason a terminal configuration misses the task goal, or None when it meets it."""
    locals_ = [statuses_locals[p - 1] for p in honest]
    if spec.task == LEADER_ELECTION:
        leaders = sum(1 for c in locals_ if c.get("status") == "leader")
        others = [status_label(c) for c in locals_ if c.get("status") != "leader"]
        if leaders != 1:
            return f"{leaders} leaders among honest processors"
        if any(s != "follower" for s in others):
            return f"non-follower statuses {sorted(set(s for s in others if s != 'follower'))}"
        return None
    decisions = {c.get("decision") if c.get("status") == "decided" else None for c in locals_}
    if None in decisions:
        return "an honest processor did not decide"
    if len(decisions) > 1:
        return f"honest decisions differ: {sorted(decisions)}"
    return None


def check_total_correctness(tree: ExecutionTree, spec: ProtocolOutcomeSpec | None = None) -> CorrectnessReport:
    spec = spec or outcome_spec(tree.protocol)
    honest = tree.config.honest()
    violations = []
    terminating = True
    partial = True
    for leaf in tree.leaves():
        if leaf.kind == "cutoff":
            terminating = False
            violations.append((leaf.id, f"cutoff at round {leaf.round}: statuses {leaf.statuses()}"))
            continue
        reason = leaf_violation(leaf.config.classical, honest, spec)
        if reason is not None:
            partial = False
            violations.append((leaf.id, reason))
    leaves = tree.leaves()
    return CorrectnessReport(
        terminating=terminating,
        partially_correct=partial,
        violations=violations,
        inconclusive=tree.truncated,
        leaves=len(leaves),
        max_rounds=max(leaf.round for leaf in leaves),
        max_messages=max(tree.messages_on_path(leaf) for leaf in leaves),
    )


# ---------------------------------------------------------------- fairness


@dataclass
class FairnessReport:
    probabilities: list[float]
    max_deviation: float

    def to_json(self) -> dict:
        return {"leader_probabilities": self.probabilities, "max_deviation": self.max_deviation}


def check_fairness(tree: ExecutionTree) -> FairnessReport:
    """Probability that each processor ends as the unique leader."""
    if tree.protocol.task != LEADER_ELECTION:
        raise InvalidInput(f"fairness is defined for leader election, tree is for {tree.protocol.task}")
    n = tree.n
    probs = [0.0] * n
    for leaf in tree.leaves():
        leaders = [p for p in range(n) if leaf.config.classical[p].get("status") == "leader"]
        if len(leaders) == 1:
            probs[leaders[0]] += leaf.probability
    return FairnessReport(probs, max(abs(p - 1 / n) for p in probs))


# ---------------------------------------------------------------- entanglement


@dataclass
class EntanglementResult:
    product: bool
    purities: list[float]
    factors: list[np.ndarray] | None = None

    @property
    def kind(self) -> str:
        return "product" if self.product else "entangled"

    def to_json(self) -> dict:
        out = {"kind": self.kind, "purities": self.purities}
        if self.factors is not None:
            out["factors"] = [[{"re": float(c.real), "im": float(c.imag)} for c in f] for f in self.factors]
        return out


def check_entanglement_required(state: StateVector) -> EntanglementResult:
    """Full product across processor blocks iff every single-processor reduced state is pure."""
    rhos = [reduced_density_matrix(state, p) for p in range(1, state.n + 1)]
    purities = [purity(r) for r in rhos]
    if all(abs(pu - 1.0) <= PURITY_TOL for pu in purities):
        factors = []
        for r in rhos:
            _, vecs = np.linalg.eigh(r)
            v = vecs[:, -1]
            first = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
            factors.append(v * np.conj(first) / abs(first))
        return EntanglementResult(True, purities, factors)
    return EntanglementResult(False, purities)


# ---------------------------------------------------------------- classification

W_FAMILY, GHZ_FAMILY, OTHER = "W_family", "GHZ_family", "other"


@dataclass
class ClassificationResult:
    family: str
    basis: LocalBasis | None
    residual: float
    phase: str | None = None
    leader_labels: tuple[int, ...] | None = None
    samples: int = 0

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "basis": basis_to_json(self.basis) if self.basis is not None else None,
            "basis_name": self.basis.name if self.basis is not None else None,
            "residual": self.residual,
            "phase": self.phase,
            "leader_labels": list(self.leader_labels) if self.leader_labels is not None else None,
            "samples": self.samples,
        }


@functools.lru_cache(maxsize=64)
def _family_masks(n: int, d: int) -> tuple[np.ndarray, list[tuple[tuple[int, ...], np.ndarray]]]:
    """GHZ-like support (diagonal strings) and W-like supports (exactly one processor labelled in L), per L."""
    idx = np.indices((d,) * n)
    diagonal = np.all(idx == idx[0], axis=0)
    w_masks = []
    for size in range(1, d):
        for leader in itertools.combinations(range(d), size):
            in_l = np.isin(idx, leader)
            w_masks.append((leader, in_l.sum(axis=0) == 1))
    return diagonal, w_masks


def family_residuals(state: StateVector, basis: LocalBasis):
    """(GHZ residual, best W residual, its leader labels): norm of the amplitude outside each family's support."""
    mass = np.abs(coefficients_in_basis(state, basis)) ** 2
    diagonal, w_masks = _family_masks(state.n, basis.dim)
    ghz = math.sqrt(max(float(mass[~diagonal].sum()), 0.0))
    best_w, best_l = math.inf, None
    for leader, mask in w_masks:
        r = math.sqrt(max(float(mass[~mask].sum()), 0.0))
        if r < best_w:
            best_w, best_l = r, leader
    return ghz, best_w, best_l


def classify_state(
    state: StateVector,
    trials: int = DEFAULT_TRIALS,
    seed: int = DEFAULT_SEED,
    grid_resolution: int = DEFAULT_GRID,
    tol: float = FAMILY_TOL,
) -> ClassificationResult:
    """W-like or GHZ-like structure in the computational basis, then in grid and seeded random bases."""
    if not is_anonymous(state):
        raise InvalidInput("classification needs an anonymous state")
    phases = (
        ("computational", [computational_basis(state.m)]),
        ("grid", grid_bases(state.m, grid_resolution)),
        ("random", random_bases(state.m, trials, seed)),
    )
    samples = 0
    best = math.inf
    for phase, bases in phases:
        for basis in bases:
            samples += 1
            ghz, w, leader = family_residuals(state, basis)
            if w <= tol:
                return ClassificationResult(W_FAMILY, basis, w, phase, leader, samples)
            if ghz <= tol:
                return ClassificationResult(GHZ_FAMILY, basis, ghz, phase, None, samples)
            best = min(best, w, ghz)
    return ClassificationResult(OTHER, None, best, None, None, samples)


# ---------------------------------------------------------------- impossibility


def allowed_moves(task: str, n: int, m: int) -> set[int]:
    if task == LEADER_ELECTION:
        return {1, n - 1} if m == 1 else {1}
    if task == CONSENSUS:
        return {n}
    raise InvalidParameter(f"unknown task {task!r}")


@dataclass
class ImpossibilityReport:
    task: str
    allowed_k: set[int]
    witness: object
    searches: dict
    path: object = None
    correctness: CorrectnessReport | None = None
    budget: dict = field(default_factory=dict)

    @property
    def found(self) -> bool:
        return self.witness is not None

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "allowed_k": sorted(self.allowed_k),
            "witness": self.witness.to_json() if self.witness is not None else None,
            "searches": {str(k): v for k, v in self.searches.items()},
            "path": self.path.to_json() if self.path is not None else None,
            "correctness": self.correctness.to_json() if self.correctness is not None else None,
            "budget": self.budget,
        }


def impossibility_report(
    state: StateVector,
    task: str,
    protocol=None,
    leader_labels: Iterable[int] | None = None,
    trials: int = DEFAULT_TRIALS,
    seed: int = DEFAULT_SEED,
    grid_resolution: int = DEFAULT_GRID,
    max_rounds: int = 16,
    basis: LocalBasis | None = None,
) -> ImpossibilityReport:
    """Forbidden-k witness for the task and, given a protocol, the symmetric path that realizes it."""
    allowed = allowed_moves(task, state.n, state.m)
    labels = None
    if task == LEADER_ELECTION and state.m > 1:
        labels = leader_labels if leader_labels is not None else getattr(protocol, "leader_labels", None)
        if basis is None and protocol is not None and "basis" in protocol.params:
            basis = basis_from_name(protocol.params["basis"], state.m)
    result = forbidden_move_witness(state, allowed, trials, seed, grid_resolution, labels=labels, basis=basis)
    report = ImpossibilityReport(
        task,
        allowed,
        result.witness,
        result.searches,
        budget={"trials": trials, "seed": seed, "grid": grid_resolution, "coefficient_tol": 1e-10},
    )
    if protocol is not None and result.witness is not None:
        tree = run_full_tree(protocol, state, NetworkConfig(state.layout, max_rounds=max_rounds))
        report.path = find_symmetric_path(tree, result.witness.k)
        report.correctness = check_total_correctness(tree)
    return report


def default_protocol(task: str, n: int):
    return qle_w(n) if task == LEADER_ELECTION else qdc_ghz(n)


# ---------------------------------------------------------------- corpus


def perm_closure_corpus(max_n: int = 5) -> list[tuple[str, StateVector]]:
    """Every distinct Perm-closure of m=1 patterns for 2 <= n <= max_n (one per Hamming weight)."""
    out = []
    for n in range(2, max_n + 1):
        for w in range(n + 1):
            pattern = "1" * w + "0" * (n - w)
            out.append((f"perm:{pattern}", make_perm_closure(pattern, ProcessorLayout(n, 1))))
    return out


def family_corpus() -> list[tuple[str, StateVector]]:
    out = []
    for n in (2, 3, 4, 5):
        out.append((f"w:{n}", make_w(n)))
        out.append((f"ghz:{n}", make_ghz(n)))
        out.append((f"H.ghz:{n}", apply_local_unitary(make_ghz(n), HADAMARD)))
        out.append((f"X.w:{n}", apply_local_unitary(make_w(n), PAULI_X)))
    u = rotation(math.pi / 3, math.pi / 2)
    out.append(("R.w:3", apply_local_unitary(make_w(3), u)))
    out.append(("R.ghz:4", apply_local_unitary(make_ghz(4), u)))
    out.append(("gen_ghz:0.6,0.8:3", make_generalized_ghz([0.6, 0.8], computational_basis(1), 3)))
    return out


def random_corpus(count: int = 100, seed: int = 2024, sizes: Iterable[int] = (3, 4, 5)) -> list[tuple[str, StateVector]]:
    rng = np.random.default_rng(seed)
    sizes = list(sizes)
    out = []
    for i in range(count):
        n = sizes[i % len(sizes)]
        out.append((f"random:{seed}:{i}:n{n}", random_anonymous_state(ProcessorLayout(n, 1), rng)))
    return out


def anonymous_corpus(random_count: int = 100, seed: int = 2024) -> list[tuple[str, StateVector]]:
    return perm_closure_corpus() + family_corpus() + random_corpus(random_count, seed)


def state_summary(state: StateVector) -> dict:
    return state_to_dict(state, tol=1e-12)
