"""k-symmetric moves and paths.

A k-symmetric move for processors S exists iff, in *every* local basis, the
state has a nonzero coefficient on some product term where the processors in
S share a label l and every other processor carries a label different from l.
A single basis without such a coefficient therefore refutes the move; finding
one in many bases is only evidence. The search below is built around that
asymmetry.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import (
    LocalBasis,
    ProjectorSet,
    StateVector,
    basis_to_json,
    coefficients_in_basis,
    complex_to_json,
    computational_basis,
    fourier_basis,
    is_anonymous,
    project,
    random_basis,
    rotation_basis,
)
from .errors import InvalidInput, InvalidParameter

COEFF_TOL = 1e-10
DEFAULT_GRID = 12
DEFAULT_TRIALS = 1000
DEFAULT_SEED = 0


@dataclass(frozen=True)
class SymmetricMoveWitness:
    k: int
    processors: tuple[int, ...]
    basis: LocalBasis
    l: int
    followers: tuple[int, ...]
    coefficient: complex

    def __post_init__(self):
        if len(set(self.processors)) != self.k:
            raise InvalidParameter("witness processor set must have exactly k members")
        if any(j == self.l for j in self.followers):
            raise InvalidParameter("follower labels must differ from the shared label")
        if abs(self.coefficient) <= COEFF_TOL:
            raise InvalidParameter("witness coefficient is numerically zero")

    def term(self, n: int) -> tuple[int, ...]:
        """Full label tuple (one label per processor, in processor order)."""
        labels = []
        rest = iter(self.followers)
        for p in range(1, n + 1):
            labels.append(self.l if p in self.processors else next(rest))
        return tuple(labels)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "processors": list(self.processors),
            "basis": basis_to_json(self.basis),
            "basis_name": self.basis.name,
            "l": self.l,
            "followers": list(self.followers),
            "coefficient": complex_to_json(self.coefficient),
        }


@dataclass(frozen=True)
class BasisRefutation:
    basis: LocalBasis
    max_violating_magnitude: float
    phase: str
    seed: int | None = None

    def to_json(self) -> dict:
        return {
            "refuted": True,
            "basis": basis_to_json(self.basis),
            "basis_name": self.basis.name,
            "max_magnitude": self.max_violating_magnitude,
            "phase": self.phase,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class MoveSearch:
    """Outcome of the all-bases search: refuted (conclusive) or unrefuted after ``samples`` bases."""

    refutation: BasisRefutation | None
    samples: int

    @property
    def refuted(self) -> bool:
        return self.refutation is not None

    def to_json(self) -> dict:
        if self.refutation is not None:
            return self.refutation.to_json() | {"samples": self.samples}
        return {"refuted": False, "samples": self.samples}


# ---------------------------------------------------------------- coefficient scan


@functools.lru_cache(maxsize=512)
def _qualifying_masks(n: int, d: int, processors: tuple[int, ...], labels: tuple[int, ...]) -> np.ndarray:
    """Boolean masks, one per shared label l: S-axes equal l, all other axes differ from l."""
    idx = np.indices((d,) * n)
    inside = [p - 1 for p in processors]
    outside = [a for a in range(n) if a not in inside]
    masks = []
    for l in labels:
        mask = np.ones((d,) * n, dtype=bool)
        for a in inside:
            mask &= idx[a] == l
        for a in outside:
            mask &= idx[a] != l
        masks.append(mask)
    out = np.stack(masks)
    out.flags.writeable = False
    return out


def _check_k(state: StateVector, k: int, processors: Iterable[int] | None) -> tuple[int, ...]:
    n = state.n
    if not 0 < k <= n:
        raise InvalidParameter(f"k={k} outside 1..{n}")
    procs = tuple(range(1, k + 1)) if processors is None else tuple(sorted(set(processors)))
    if len(procs) != k or not all(1 <= p <= n for p in procs):
        raise InvalidParameter(f"processor set {procs} is not a set of {k} processors in 1..{n}")
    return procs


def _labels(d: int, labels: Iterable[int] | None) -> tuple[int, ...]:
    return tuple(range(d)) if labels is None else tuple(sorted(set(labels)))


def max_qualifying_magnitude(
    state: StateVector, k: int, processors: Iterable[int] | None, basis: LocalBasis, labels=None
) -> float:
    procs = _check_k(state, k, processors)
    coeffs = coefficients_in_basis(state, basis)
    masks = _qualifying_masks(state.n, basis.dim, procs, _labels(basis.dim, labels))
    mags = np.abs(coeffs)
    return float(max(mags[mask].max(initial=0.0) for mask in masks))


def find_move_in_basis(
    state: StateVector,
    k: int,
    processors: Iterable[int] | None,
    basis: LocalBasis,
    tol: float = COEFF_TOL,
    labels: Iterable[int] | None = None,
) -> SymmetricMoveWitness | None:
    """Qualifying coefficient in one basis, smallest (l, followers) first; None when none exceeds ``tol``.

    ``labels`` restricts the shared label l (used for leader labels when m > 1).
    """
    procs = _check_k(state, k, processors)
    coeffs = coefficients_in_basis(state, basis)
    n = state.n
    outside = [a for a in range(n) if a + 1 not in procs]
    for l, mask in zip(_labels(basis.dim, labels), _qualifying_masks(n, basis.dim, procs, _labels(basis.dim, labels))):
        hits = np.argwhere(mask & (np.abs(coeffs) > tol))
        if hits.size == 0:
            continue
        # argwhere is C-ordered, which is lexicographic in the follower labels once S is fixed
        best = tuple(int(x) for x in hits[0])
        return SymmetricMoveWitness(
            k=k,
            processors=procs,
            basis=basis,
            l=l,
            followers=tuple(best[a] for a in outside),
            coefficient=complex(coeffs[best]),
        )
    return None


def projector_move(
    state: StateVector, k: int, processors: Iterable[int] | None, projectors: ProjectorSet, tol: float = COEFF_TOL
) -> tuple[int, tuple[int, ...], float] | None:
    """Check the move condition directly for one projector set (any rank).

    Returns ``(l, followers, norm)`` for the first index choice whose joint
    projection of the state is nonzero, or None.
    """
    procs = _check_k(state, k, processors)
    mats = list(projectors)
    outside = [p for p in range(1, state.n + 1) if p not in procs]
    for l in range(len(mats)):
        others = [j for j in range(len(mats)) if j != l]
        for js in itertools.product(others, repeat=len(outside)):
            ops = [None] * state.n
            for p in procs:
                ops[p - 1] = mats[l]
            for p, j in zip(outside, js):
                ops[p - 1] = mats[j]
            norm = float(np.linalg.norm(project(state, ops)))
            if norm > tol:
                return l, tuple(js), norm
    return None


# ---------------------------------------------------------------- basis search


def grid_bases(m: int, resolution: int = DEFAULT_GRID) -> tuple[LocalBasis, ...]:
    return _grid_bases(m, resolution)


@functools.lru_cache(maxsize=16)
def _grid_bases(m: int, resolution: int) -> tuple[LocalBasis, ...]:
    """Deterministic grid of product rotation bases, computational basis first; Fourier basis appended for m >= 2.

    theta takes resolution + 1 values on [0, pi] and phi takes resolution values on [0, 2 pi), per qubit.
    """
    if resolution < 1:
        raise InvalidParameter("grid resolution must be >= 1")
    single = [
        (i * math.pi / resolution, j * 2 * math.pi / resolution)
        for i in range(resolution + 1)
        for j in range(resolution)
        if not (i in (0, resolution) and j > 0)  # phi is irrelevant at the poles
    ]
    bases = [rotation_basis(angles) for angles in itertools.product(single, repeat=m)]
    if m >= 2:
        bases.append(fourier_basis(m))
    return tuple(bases)


@functools.lru_cache(maxsize=16)
def random_bases(m: int, trials: int, seed: int) -> tuple[LocalBasis, ...]:
    rng = np.random.default_rng(seed)
    return tuple(random_basis(m, rng) for _ in range(trials))


def has_move_all_bases(
    state: StateVector,
    k: int,
    trials: int = DEFAULT_TRIALS,
    seed: int = DEFAULT_SEED,
    grid_resolution: int = DEFAULT_GRID,
    processors: Iterable[int] | None = None,
    labels: Iterable[int] | None = None,
    tol: float = COEFF_TOL,
) -> MoveSearch:
    """Look for a basis refuting a k-symmetric move: grid phase, then ``trials`` seeded Haar-random bases."""
    if trials < 1:
        raise InvalidParameter("trials must be >= 1")
    procs = _check_k(state, k, processors)
    samples = 0
    phases = (("grid", grid_bases(state.m, grid_resolution), None), ("random", random_bases(state.m, trials, seed), seed))
    for phase, bases, phase_seed in phases:
        for basis in bases:
            samples += 1
            mag = max_qualifying_magnitude(state, k, procs, basis, labels)
            if mag <= tol:
                return MoveSearch(BasisRefutation(basis, mag, phase, phase_seed), samples)
    return MoveSearch(None, samples)


@dataclass(frozen=True)
class ForbiddenMoveResult:
    """Witness for the smallest forbidden k whose move survived the search, plus per-k search records."""

    witness: SymmetricMoveWitness | None
    searches: dict = field(default_factory=dict)

    def __bool__(self):
        return self.witness is not None


def forbidden_move_witness(
    state: StateVector,
    allowed_k: Iterable[int],
    trials: int = DEFAULT_TRIALS,
    seed: int = DEFAULT_SEED,
    grid_resolution: int = DEFAULT_GRID,
    labels: Iterable[int] | None = None,
    check_anonymous: bool = True,
    basis: LocalBasis | None = None,
) -> ForbiddenMoveResult:
    """Smallest k outside ``allowed_k`` that admits a k-symmetric move, with its computational-basis witness.

    For each forbidden k (ascending) the computational basis is scanned first; a
    k whose coefficient is absent there is refuted outright. Otherwise the full
    grid/random search tries to refute it, and the witness is reported only if
    the search comes back unrefuted.

    With ``labels`` (leader labels, m > 1) the shared label only has meaning in
    the measurement ``basis``: a qualifying coefficient there is a branch where
    k processors read the same leader result, so it is reported without the
    all-bases search.
    """
    if check_anonymous and not is_anonymous(state):
        raise InvalidInput("state is not anonymous")
    allowed = set(allowed_k)
    comp = basis if basis is not None else computational_basis(state.m)
    searches = {}
    for k in range(1, state.n + 1):
        if k in allowed:
            continue
        # anonymity makes the lexicographically smallest set {1..k} representative
        processors = tuple(range(1, k + 1))
        witness = find_move_in_basis(state, k, processors, comp, labels=labels)
        if witness is None:
            searches[k] = {"refuted": True, "phase": comp.name, "samples": 1}
            continue
        if labels is not None:
            searches[k] = {"refuted": False, "phase": "measurement_basis", "samples": 1}
            return ForbiddenMoveResult(witness, searches)
        result = has_move_all_bases(state, k, trials, seed, grid_resolution, processors, labels)
        searches[k] = result.to_json()
        if not result.refuted:
            return ForbiddenMoveResult(witness, searches)
    return ForbiddenMoveResult(None, searches)


# ---------------------------------------------------------------- paths


def _edge_respects(outcome: Sequence[int | None], subset: frozenset[int]) -> bool:
    measured = [(p, o) for p, o in enumerate(outcome, start=1) if o is not None]
    if not measured:
        return True
    shared = {o for p, o in measured if p in subset}
    if len(shared) != 1 or any(outcome[p - 1] is None for p in subset):
        return False
    (value,) = shared
    return all(o != value for p, o in measured if p not in subset)


def find_symmetric_path(tree, k: int):
    """Root-to-leaf list of tree nodes along which one fixed set of k processors keeps identical outcomes.

    At every edge with a measurement, the k processors all measured the same
    value and every other measuring processor got a different one. Returns None
    when no such path exists.
    """
    n = tree.n
    if not 0 < k <= n:
        raise InvalidParameter(f"k={k} outside 1..{n}")
    for subset in itertools.combinations(range(1, n + 1), k):
        chosen = frozenset(subset)
        path = _dfs(tree, tree.root, chosen)
        if path is not None:
            return SymmetricPath(k, tuple(subset), path)
    return None


def _dfs(tree, node, subset):
    if node.is_leaf:
        return [node]
    for child in node.children:
        if _edge_respects(child.outcome, subset):
            rest = _dfs(tree, child, subset)
            if rest is not None:
                return [node, *rest]
    return None


@dataclass(frozen=True)
class SymmetricPath:
    k: int
    processors: tuple[int, ...]
    nodes: list

    @property
    def edges(self) -> list[tuple[int, int, tuple]]:
        return [(a.id, b.id, b.outcome) for a, b in zip(self.nodes, self.nodes[1:])]

    @property
    def leaf(self):
        return self.nodes[-1]

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "processors": list(self.processors),
            "edges": [{"parent": a, "child": b, "outcome": list(o)} for a, b, o in self.edges],
            "leaf": self.leaf.id,
            "leaf_statuses": self.leaf.statuses(),
        }
