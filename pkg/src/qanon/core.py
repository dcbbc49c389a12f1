"""Pure-state linear algebra for networks of n processors holding m qubits each.

Ordering convention: processor 1 owns the most significant block of a basis
index and, inside a block, local qubit 1 is the most significant bit. A state
of n processors is therefore a C-ordered tensor of shape ``(2**m,) * n`` whose
axis ``p - 1`` belongs to processor ``p``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidFamily, InvalidOperator, InvalidParameter

NORM_TOL = 1e-12
MATRIX_TOL = 1e-10
PRUNE_TOL = 1e-12


@dataclass(frozen=True)
class ProcessorLayout:
    n: int
    m: int = 1

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise InvalidParameter(f"layout needs n >= 1 and m >= 1, got n={self.n}, m={self.m}")

    @property
    def local_dim(self) -> int:
        return 2**self.m

    @property
    def dim(self) -> int:
        return 2 ** (self.n * self.m)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.local_dim,) * self.n

    def block_bits(self, index: int) -> list[str]:
        """Split a global basis index into per-processor bit strings."""
        bits = format(index, f"0{self.n * self.m}b")
        return [bits[i * self.m:(i + 1) * self.m] for i in range(self.n)]


def _canonical(amps: np.ndarray) -> np.ndarray:
    """Normalize and rotate the global phase so the first nonzero amplitude is real positive.

    Idempotent bit-for-bit: an already canonical array comes back unchanged.
    """
    amps = np.array(amps, dtype=complex)
    norm2 = float(np.vdot(amps, amps).real)
    if norm2 <= 0.0:
        raise InvalidParameter("state has zero norm")
    if abs(norm2 - 1.0) > 1e-15:
        amps = amps / math.sqrt(norm2)
    nz = np.flatnonzero(np.abs(amps) > NORM_TOL)
    if nz.size:
        first = amps[nz[0]]
        if not (first.imag == 0.0 and first.real > 0.0):
            mag = abs(first)
            amps = amps * (np.conj(first) / mag)
            amps[nz[0]] = mag
    return amps


class StateVector:
    """Normalized pure state of an n-processor network. Immutable."""

    __slots__ = ("layout", "amplitudes")

    def __init__(self, layout: ProcessorLayout, amplitudes, canonicalize: bool = True):
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if amps.size != layout.dim:
            raise InvalidParameter(
                f"amplitude array of length {amps.size} does not match layout dimension {layout.dim}"
            )
        amps = _canonical(amps) if canonicalize else amps.copy()
        amps.flags.writeable = False
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "amplitudes", amps)

    def __setattr__(self, key, value):
        raise AttributeError("StateVector is immutable")

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def m(self) -> int:
        return self.layout.m

    @property
    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.shape)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def support(self, tol: float = MATRIX_TOL) -> list[int]:
        return [int(i) for i in np.flatnonzero(np.abs(self.amplitudes) > tol)]

    def permuted(self, perm: Sequence[int]) -> "StateVector":
        """Move the block of processor ``perm[i]`` to position ``i`` (0-based processor indices)."""
        return StateVector(self.layout, _permute_blocks(self.tensor, perm))

    def allclose(self, other: "StateVector", tol: float = MATRIX_TOL) -> bool:
        """Equality up to global phase."""
        if self.layout != other.layout:
            return False
        return abs(abs(np.vdot(self.amplitudes, other.amplitudes)) - 1.0) <= tol

    def __repr__(self):
        terms = [
            f"{self.amplitudes[i]:.4g}|{''.join(self.layout.block_bits(i))}>" for i in self.support()
        ]
        return f"StateVector(n={self.n}, m={self.m}, {' + '.join(terms[:8])}{' ...' if len(terms) > 8 else ''})"


def _permute_blocks(tensor: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    return np.transpose(tensor, tuple(perm)).reshape(-1)


def basis_state(bits: str, layout: ProcessorLayout) -> StateVector:
    if len(bits) != layout.n * layout.m or set(bits) - {"0", "1"}:
        raise InvalidParameter(f"pattern {bits!r} is not a bit string of length {layout.n * layout.m}")
    amps = np.zeros(layout.dim, dtype=complex)
    amps[int(bits, 2)] = 1.0
    return StateVector(layout, amps)


# ---------------------------------------------------------------- local bases


class LocalBasis:
    """Orthonormal basis of one processor's 2**m dimensional space; vectors are matrix columns."""

    __slots__ = ("matrix", "name")

    def __init__(self, matrix, name: str = "custom"):
        mat = np.array(matrix, dtype=complex)
        d = mat.shape[0]
        if mat.shape != (d, d) or d & (d - 1) or d < 2:
            raise InvalidOperator(f"basis matrix must be square with power-of-two size, got {mat.shape}")
        if np.abs(mat.conj().T @ mat - np.eye(d)).max() > MATRIX_TOL:
            raise InvalidOperator("basis vectors are not orthonormal")
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "name", name)

    def __setattr__(self, key, value):
        raise AttributeError("LocalBasis is immutable")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def m(self) -> int:
        return self.dim.bit_length() - 1

    @property
    def vectors(self) -> list[np.ndarray]:
        return [self.matrix[:, i] for i in range(self.dim)]

    def transformed(self, u: np.ndarray) -> "LocalBasis":
        return LocalBasis(np.asarray(u) @ self.matrix, name=f"U*{self.name}")

    def projectors(self) -> "ProjectorSet":
        return ProjectorSet([np.outer(v, v.conj()) for v in self.vectors])

    def __repr__(self):
        return f"LocalBasis({self.name}, dim={self.dim})"


HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)


def computational_basis(m: int = 1) -> LocalBasis:
    return LocalBasis(np.eye(2**m), name="computational")


def hadamard_basis(m: int = 1) -> LocalBasis:
    mat = np.array([[1.0]])
    for _ in range(m):
        mat = np.kron(mat, HADAMARD)
    return LocalBasis(mat, name="hadamard")


def fourier_basis(m: int = 1) -> LocalBasis:
    d = 2**m
    j, k = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    return LocalBasis(np.exp(2j * np.pi * j * k / d) / math.sqrt(d), name="fourier")


def rotation(theta: float, phi: float) -> np.ndarray:
    """Single-qubit basis with first vector cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>."""
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -np.exp(-1j * phi) * s], [np.exp(1j * phi) * s, c]], dtype=complex)


def rotation_basis(angles: Sequence[tuple[float, float]]) -> LocalBasis:
    """Product of per-qubit rotations, one ``(theta, phi)`` pair per local qubit."""
    mat = np.array([[1.0 + 0j]])
    for theta, phi in angles:
        mat = np.kron(mat, rotation(theta, phi))
    return LocalBasis(mat, name="rotation" + "".join(f"({t:.4f},{p:.4f})" for t, p in angles))


def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph


def random_basis(m: int, rng: np.random.Generator) -> LocalBasis:
    return LocalBasis(haar_unitary(2**m, rng), name="random")


def basis_from_name(name: str, m: int = 1) -> LocalBasis:
    table = {"computational": computational_basis, "hadamard": hadamard_basis, "fourier": fourier_basis}
    try:
        return table[name](m)
    except KeyError:
        raise InvalidParameter(f"unknown basis {name!r}; choose from {sorted(table)}") from None


def coefficients_in_basis(state: StateVector, basis: LocalBasis) -> np.ndarray:
    """Coefficient tensor alpha[j_1, ..., j_n] of ``state`` in the product basis phi_{j_1} x ... x phi_{j_n}."""
    if basis.dim != state.layout.local_dim:
        raise InvalidParameter(f"basis dimension {basis.dim} does not match local dimension {state.layout.local_dim}")
    return _apply_all(state.tensor, basis.matrix.conj().T)


def _apply_all(tensor: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = tensor
    for axis in range(tensor.ndim):
        out = np.moveaxis(np.tensordot(u, out, axes=([1], [axis])), 0, axis)
    return out


# ---------------------------------------------------------------- projectors


class ProjectorSet:
    """Complete set of orthogonal projectors on one processor's local space."""

    __slots__ = ("projectors",)

    def __init__(self, projectors: Iterable):
        mats = tuple(np.array(p, dtype=complex) for p in projectors)
        if not mats:
            raise InvalidOperator("empty projector set")
        d = mats[0].shape[0]
        if len(mats) > d:
            raise InvalidOperator(f"{len(mats)} projectors on a {d}-dimensional space")
        for i, p in enumerate(mats):
            if p.shape != (d, d):
                raise InvalidOperator("projectors have inconsistent shapes")
            if np.abs(p - p.conj().T).max() > MATRIX_TOL:
                raise InvalidOperator(f"projector {i} is not Hermitian")
            for j, q in enumerate(mats):
                want = p if i == j else np.zeros_like(p)
                if np.abs(p @ q - want).max() > MATRIX_TOL:
                    raise InvalidOperator(f"projectors {i} and {j} violate P_i P_j = delta_ij P_i")
        if np.abs(sum(mats) - np.eye(d)).max() > MATRIX_TOL:
            raise InvalidOperator("projectors do not sum to the identity")
        for p in mats:
            p.flags.writeable = False
        object.__setattr__(self, "projectors", mats)

    def __setattr__(self, key, value):
        raise AttributeError("ProjectorSet is immutable")

    def __len__(self):
        return len(self.projectors)

    def __iter__(self):
        return iter(self.projectors)

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0]


def computational_projectors(m: int = 1) -> ProjectorSet:
    return computational_basis(m).projectors()


def lift_projectors(projectors: ProjectorSet, qubits: Sequence[int], m: int) -> ProjectorSet:
    """Extend projectors on a subset of local qubits (1-based) to the full 2**m local space."""
    qubits = list(qubits)
    k = len(qubits)
    if projectors.dim != 2**k or len(set(qubits)) != k or not all(1 <= q <= m for q in qubits):
        raise InvalidOperator(f"cannot lift {projectors.dim}-dim projectors onto qubits {qubits} of {m}")
    rest = [q for q in range(1, m + 1) if q not in qubits]
    order = qubits + rest
    inverse = np.argsort(order)
    lifted = []
    for p in projectors:
        full = np.kron(p, np.eye(2 ** len(rest))).reshape((2,) * (2 * m))
        axes = list(inverse) + [m + i for i in inverse]
        lifted.append(full.transpose(axes).reshape(2**m, 2**m))
    return ProjectorSet(lifted)


# ---------------------------------------------------------------- constructors


def make_w(n: int) -> StateVector:
    if n < 2:
        raise InvalidParameter(f"W state needs n >= 2, got {n}")
    layout = ProcessorLayout(n, 1)
    amps = np.zeros(layout.dim, dtype=complex)
    amps[[1 << j for j in range(n)]] = 1.0
    return StateVector(layout, amps)


def make_ghz(n: int) -> StateVector:
    if n < 2:
        raise InvalidParameter(f"GHZ state needs n >= 2, got {n}")
    layout = ProcessorLayout(n, 1)
    amps = np.zeros(layout.dim, dtype=complex)
    amps[0] = amps[-1] = 1.0
    return StateVector(layout, amps)


def _orbit(blocks: Sequence) -> set[tuple]:
    return set(itertools.permutations(blocks))


def make_perm_closure(pattern: str, layout: ProcessorLayout) -> StateVector:
    """Equal superposition over the distinct block-permutations of a basis string."""
    if len(pattern) != layout.n * layout.m or set(pattern) - {"0", "1"}:
        raise InvalidParameter(f"pattern {pattern!r} must be a bit string of length {layout.n * layout.m}")
    m = layout.m
    blocks = [pattern[i * m:(i + 1) * m] for i in range(layout.n)]
    amps = np.zeros(layout.dim, dtype=complex)
    for arrangement in _orbit(blocks):
        amps[int("".join(arrangement), 2)] = 1.0
    return StateVector(layout, amps)


def apply_local_unitary(state: StateVector, u) -> StateVector:
    """Apply the same local unitary to every processor block."""
    u = _check_unitary(u, state.layout.local_dim)
    return StateVector(state.layout, _apply_all(state.tensor, u))


def apply_processor_unitary(state: StateVector, processor: int, u) -> StateVector:
    """Apply a unitary to a single processor block (1-based index)."""
    u = _check_unitary(u, state.layout.local_dim)
    axis = _axis(state, processor)
    out = np.moveaxis(np.tensordot(u, state.tensor, axes=([1], [axis])), 0, axis)
    return StateVector(state.layout, out)


def _check_unitary(u, d: int) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.shape != (d, d):
        raise InvalidOperator(f"operator shape {u.shape} does not match local dimension {d}")
    if np.abs(u.conj().T @ u - np.eye(d)).max() > MATRIX_TOL:
        raise InvalidOperator("operator is not unitary")
    return u


def _axis(state: StateVector, processor: int) -> int:
    if not 1 <= processor <= state.n:
        raise InvalidParameter(f"processor {processor} outside 1..{state.n}")
    return processor - 1


def make_generalized_w(leader_label: int, follower_labels: Sequence[int], basis: LocalBasis) -> StateVector:
    """Perm-closure of phi_leader x phi_f2 x ... x phi_fn with leader and follower labels disjoint."""
    follower_labels = list(follower_labels)
    if leader_label in follower_labels:
        raise InvalidFamily(f"leader label {leader_label} also appears among followers {follower_labels}")
    d = basis.dim
    labels = [leader_label, *follower_labels]
    if not all(0 <= i < d for i in labels):
        raise InvalidParameter(f"labels {labels} out of range for a {d}-dimensional basis")
    n = len(labels)
    if n < 2:
        raise InvalidParameter("need at least one follower")
    layout = ProcessorLayout(n, basis.m)
    label_space = np.zeros(layout.shape, dtype=complex)
    for arrangement in _orbit(labels):
        label_space[arrangement] = 1.0
    return StateVector(layout, _apply_all(label_space, basis.matrix))


def make_generalized_ghz(coefficients: Sequence[complex], basis: LocalBasis, n: int) -> StateVector:
    """sum_i alpha_i phi_i^{x n}, normalized."""
    coeffs = np.asarray(coefficients, dtype=complex)
    if coeffs.size != basis.dim:
        raise InvalidParameter(f"need {basis.dim} coefficients, got {coeffs.size}")
    if np.all(np.abs(coeffs) == 0):
        raise InvalidParameter("all coefficients are zero")
    if n < 2:
        raise InvalidParameter(f"need n >= 2, got {n}")
    layout = ProcessorLayout(n, basis.m)
    amps = np.zeros(layout.dim, dtype=complex)
    for alpha, v in zip(coeffs, basis.vectors):
        term = v
        for _ in range(n - 1):
            term = np.kron(term, v)
        amps += alpha * term
    return StateVector(layout, amps)


def random_anonymous_state(layout: ProcessorLayout, rng: np.random.Generator) -> StateVector:
    """Gaussian random state symmetrized over all block permutations."""
    shape = layout.shape
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    sym = sum(np.transpose(raw, p) for p in itertools.permutations(range(layout.n)))
    return StateVector(layout, sym)


# ---------------------------------------------------------------- anonymity


@dataclass(frozen=True)
class AnonymityCheck:
    anonymous: bool
    violation: tuple[int, ...] | None = None
    phase: complex = 1.0

    def __bool__(self):
        return self.anonymous


def is_anonymous(state: StateVector, tol: float = MATRIX_TOL) -> AnonymityCheck:
    """Check invariance (up to one common phase) under the adjacent block transpositions.

    A failing transposition is reported 1-based, e.g. ``(2, 3)``.
    """
    n = state.n
    psi = state.amplitudes
    common = None
    for i in range(n - 1):
        perm = list(range(n))
        perm[i], perm[i + 1] = perm[i + 1], perm[i]
        swapped = _permute_blocks(state.tensor, perm)
        c = np.vdot(psi, swapped)
        if common is None:
            common = c
        if np.linalg.norm(swapped - common * psi) > tol:
            return AnonymityCheck(False, (i + 1, i + 2))
    return AnonymityCheck(True, None, complex(common if common is not None else 1.0))


# ---------------------------------------------------------------- measurement


@dataclass(frozen=True)
class Outcome:
    index: int
    probability: float
    state: StateVector


def measure_processor(state: StateVector, processor: int, projectors: ProjectorSet) -> list[Outcome]:
    """All outcomes of measuring one processor, post-states renormalized; the measured block stays in place."""
    if not isinstance(projectors, ProjectorSet):
        projectors = ProjectorSet(projectors)
    if projectors.dim != state.layout.local_dim:
        raise InvalidOperator(
            f"projectors act on dimension {projectors.dim}, processor space has {state.layout.local_dim}"
        )
    axis = _axis(state, processor)
    outcomes = []
    for j, p in enumerate(projectors):
        projected = np.moveaxis(np.tensordot(p, state.tensor, axes=([1], [axis])), 0, axis).reshape(-1)
        prob = float(np.vdot(projected, projected).real)
        if prob < PRUNE_TOL:
            continue
        outcomes.append(Outcome(j, prob, StateVector(state.layout, projected / math.sqrt(prob))))
    return outcomes


def project(state: StateVector, local_ops: Sequence[np.ndarray]) -> np.ndarray:
    """Apply one local operator per processor and return the (unnormalized) amplitude vector."""
    out = state.tensor
    for axis, op in enumerate(local_ops):
        out = np.moveaxis(np.tensordot(op, out, axes=([1], [axis])), 0, axis)
    return out.reshape(-1)


def reduced_density_matrix(state: StateVector, processor: int) -> np.ndarray:
    axis = _axis(state, processor)
    a = np.moveaxis(state.tensor, axis, 0).reshape(state.layout.local_dim, -1)
    return a @ a.conj().T


def purity(rho: np.ndarray) -> float:
    return float(np.trace(rho @ rho).real)


# ---------------------------------------------------------------- JSON


def state_to_dict(state: StateVector, tol: float = 0.0) -> dict:
    entries = []
    bits_len = state.n * state.m
    for i, a in enumerate(state.amplitudes):
        if abs(a) > tol:
            entries.append(
                {"index": i, "bits": format(i, f"0{bits_len}b"), "re": float(a.real), "im": float(a.imag)}
            )
    return {"n": state.n, "m": state.m, "amplitudes": entries}


def state_from_dict(data: dict) -> tuple[StateVector, float]:
    """Load a state record; returns the state and the normalization factor that was applied."""
    try:
        layout = ProcessorLayout(int(data["n"]), int(data.get("m", 1)))
        entries = data["amplitudes"]
    except (KeyError, TypeError) as exc:
        raise InvalidParameter(f"malformed state record: {exc}") from None
    amps = np.zeros(layout.dim, dtype=complex)
    for entry in entries:
        if "index" in entry:
            idx = int(entry["index"])
        elif "bits" in entry:
            if len(entry["bits"]) != layout.n * layout.m:
                raise InvalidParameter(f"bit string {entry['bits']!r} has the wrong length")
            idx = int(entry["bits"], 2)
        else:
            raise InvalidParameter("amplitude entry needs 'index' or 'bits'")
        if not 0 <= idx < layout.dim:
            raise InvalidParameter(f"index {idx} out of range")
        amps[idx] = complex(float(entry.get("re", 0.0)), float(entry.get("im", 0.0)))
    norm = float(np.linalg.norm(amps))
    if norm == 0.0:
        raise InvalidParameter("state has zero norm")
    return StateVector(layout, amps), 1.0 / norm


def dumps_state(state: StateVector) -> str:
    return json.dumps(state_to_dict(state), indent=2)


def loads_state(text: str) -> tuple[StateVector, float]:
    return state_from_dict(json.loads(text))


def complex_to_json(z: complex) -> dict:
    return {"re": float(np.real(z)), "im": float(np.imag(z))}


def basis_to_json(basis: LocalBasis) -> list:
    return [[complex_to_json(c) for c in v] for v in basis.vectors]
