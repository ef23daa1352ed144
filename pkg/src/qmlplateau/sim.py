"""Dense statevector simulation.

Amplitudes live in a flat array indexed by the computational-basis integer,
qubit 0 being the least-significant bit.  Every routine accepts leading batch
axes: a state array has shape ``(*batch, 2**n)`` and gate angles may carry
their own batch shape, broadcast against the state batch.  This is how the
analysis code evaluates thousands of (parameter draw, data point) pairs in a
handful of vectorized passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_QUBITS = 20
ATOL = 1e-10

ONE_QUBIT_KINDS = frozenset({"RX", "RY", "RZ", "H", "X"})
TWO_QUBIT_KINDS = frozenset({"CNOT", "CZ", "ZZ", "RXX", "RYY", "RZZ", "U2"})
PARAMETRIC_KINDS = frozenset({"RX", "RY", "RZ", "RXX", "RYY", "RZZ", "ZZ"})
# Gates of the form exp(-i theta P / 2) with P a Pauli word; parameter shift is exact for these.
SHIFTABLE_KINDS = frozenset({"RX", "RY", "RZ", "RXX", "RYY", "RZZ"})


class SizeError(ValueError):
    pass


class ArityError(ValueError):
    pass


_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_CZ = np.diag([1, 1, 1, -1]).astype(complex)
_XX = np.kron(_X, _X)
_YY = np.kron(_Y, _Y)


def _check_n(n_qubits: int) -> None:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise SizeError(f"n_qubits must lie in [1, {MAX_QUBITS}], got {n_qubits}")


@dataclass(frozen=True)
class Gate:
    """One circuit instruction.

    ``angle`` is a fixed rotation angle; ``param`` names a slot of the
    parameter vector instead.  ``kind="ZZ"`` is the phase gate
    ``exp(-i phi Z⊗Z)`` with ``phi = angle``; ``kind="U2"`` carries an explicit
    4x4 ``matrix``.  For two-qubit gates the first target indexes the
    high bit of the 4x4 matrix (control for CNOT).
    """

    kind: str
    targets: tuple[int, ...]
    angle: float | None = None
    param: int | None = None
    matrix: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        targets = tuple(int(t) for t in self.targets)
        object.__setattr__(self, "targets", targets)
        arity = 1 if self.kind in ONE_QUBIT_KINDS else 2 if self.kind in TWO_QUBIT_KINDS else None
        if arity is None:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if len(targets) != arity or len(set(targets)) != arity or min(targets) < 0:
            raise IndexError(f"{self.kind} needs {arity} distinct nonnegative targets, got {targets}")
        if self.kind in PARAMETRIC_KINDS:
            if (self.angle is None) == (self.param is None):
                raise ValueError(f"{self.kind} needs exactly one of angle / param")
        elif self.angle is not None or self.param is not None:
            raise ValueError(f"{self.kind} takes no angle")
        if self.kind == "U2":
            m = np.asarray(self.matrix, dtype=complex)
            if m.shape != (4, 4) or not np.allclose(m.conj().T @ m, np.eye(4), atol=ATOL):
                raise ValueError("U2 gate matrix must be a 4x4 unitary")
            object.__setattr__(self, "matrix", m)

    def unitary(self, angle=None) -> np.ndarray:
        """Matrix of the gate, shape ``(*angle.shape, d, d)`` for batched angles."""
        if self.kind in PARAMETRIC_KINDS:
            theta = np.asarray(self.angle if angle is None else angle, dtype=float)
            return _rotation(self.kind, theta)
        return {"H": _H, "X": _X, "CNOT": _CNOT, "CZ": _CZ}.get(self.kind, self.matrix)


def _rotation(kind: str, theta: np.ndarray) -> np.ndarray:
    if kind == "ZZ":
        theta = 2.0 * theta
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    if kind in ("RZ", "RZZ", "ZZ"):
        ph = np.exp(-0.5j * theta)
        if kind == "RZ":
            diag = (ph, ph.conj())
        else:
            diag = (ph, ph.conj(), ph.conj(), ph)
        out = np.zeros(theta.shape + (len(diag), len(diag)), dtype=complex)
        for k, v in enumerate(diag):
            out[..., k, k] = v
        return out
    if kind == "RX":
        return np.stack([np.stack([c + 0j, -1j * s], -1), np.stack([-1j * s, c + 0j], -1)], -2)
    if kind == "RY":
        return np.stack([np.stack([c + 0j, -s + 0j], -1), np.stack([s + 0j, c + 0j], -1)], -2)
    pauli = _XX if kind == "RXX" else _YY
    return c[..., None, None] * np.eye(4) - 1j * s[..., None, None] * pauli


@dataclass(frozen=True)
class CircuitSpec:
    n_qubits: int
    gates: tuple[Gate, ...] = ()
    n_params: int = 0
    output_qubits: tuple[int, ...] | None = None

    def __post_init__(self):
        _check_n(self.n_qubits)
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            if max(g.targets) >= self.n_qubits:
                raise IndexError(f"gate {g.kind} targets {g.targets} outside {self.n_qubits} qubits")
            if g.param is not None and not 0 <= g.param < self.n_params:
                raise IndexError(f"parameter slot {g.param} outside [0, {self.n_params})")
        if self.output_qubits is None:
            object.__setattr__(self, "output_qubits", tuple(range(self.n_qubits)))

    def __len__(self):
        return len(self.gates)

    def gates_for_param(self, index: int) -> list[int]:
        return [k for k, g in enumerate(self.gates) if g.param == index]

    def inverse(self, params=None) -> "CircuitSpec":
        """Dagger circuit with every angle bound (reversed order, negated angles)."""
        params = None if params is None else np.asarray(params, dtype=float)
        inv = []
        for g in reversed(self.gates):
            if g.kind in PARAMETRIC_KINDS:
                theta = g.angle if g.param is None else float(params[g.param])
                inv.append(Gate(g.kind, g.targets, angle=-theta))
            elif g.kind == "U2":
                inv.append(Gate("U2", g.targets, matrix=g.matrix.conj().T))
            else:
                inv.append(g)
        return CircuitSpec(self.n_qubits, tuple(inv))

    def then(self, other: "CircuitSpec") -> "CircuitSpec":
        """Concatenate two circuits; ``other``'s parameter slots are shifted past ours."""
        if other.n_qubits != self.n_qubits:
            raise SizeError("circuits act on different registers")
        shifted = [
            g if g.param is None else Gate(g.kind, g.targets, param=g.param + self.n_params)
            for g in other.gates
        ]
        return CircuitSpec(
            self.n_qubits,
            self.gates + tuple(shifted),
            self.n_params + other.n_params,
            other.output_qubits,
        )


@dataclass
class Statevector:
    """Amplitudes of shape ``(*batch, 2**n_qubits)``."""

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        _check_n(self.n_qubits)
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape[-1] != 1 << self.n_qubits:
            raise SizeError(
                f"expected {1 << self.n_qubits} amplitudes, got {self.amplitudes.shape[-1]}"
            )

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.amplitudes.shape[:-1]

    def norm_squared(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=-1)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def copy(self) -> "Statevector":
        return Statevector(self.n_qubits, self.amplitudes.copy())


@dataclass
class DensityMatrix:
    """Entries of shape ``(*batch, 2**n, 2**n)``; qubit order follows the kept set, lowest first."""

    n_qubits: int
    entries: np.ndarray

    def trace(self) -> np.ndarray:
        return np.trace(self.entries, axis1=-2, axis2=-1).real

    def purity(self) -> np.ndarray:
        return np.sum(np.abs(self.entries) ** 2, axis=(-2, -1))

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        d = 1 << n_qubits
        return cls(n_qubits, np.eye(d, dtype=complex) / d)

    @classmethod
    def from_state(cls, state: Statevector) -> "DensityMatrix":
        a = state.amplitudes
        return cls(state.n_qubits, a[..., :, None] * a[..., None, :].conj())


@dataclass(frozen=True)
class Observable:
    """Pauli-Z string on ``support`` (``kind="Z"``) or ``|0><0|`` on one qubit (``kind="P0"``)."""

    kind: str
    support: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(int(q) for q in self.support))
        if self.kind not in ("Z", "P0"):
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if not self.support or len(set(self.support)) != len(self.support):
            raise ValueError("observable support must be a nonempty set of qubits")
        if self.kind == "P0" and len(self.support) != 1:
            raise ValueError("projector observable acts on exactly one qubit")

    def diagonal(self, n_qubits: int) -> np.ndarray:
        if max(self.support) >= n_qubits or min(self.support) < 0:
            raise IndexError(f"support {self.support} outside {n_qubits} qubits")
        idx = np.arange(1 << n_qubits)
        if self.kind == "P0":
            return (((idx >> self.support[0]) & 1) == 0).astype(float)
        mask = sum(1 << q for q in self.support)
        parity = np.zeros_like(idx)
        bits = idx & mask
        while np.any(bits):
            parity ^= bits & 1
            bits >>= 1
        return 1.0 - 2.0 * parity


def zero_state(n_qubits: int) -> Statevector:
    _check_n(n_qubits)
    amps = np.zeros(1 << n_qubits, dtype=complex)
    amps[0] = 1.0
    return Statevector(n_qubits, amps)


def _split_one(psi: np.ndarray, n: int, q: int) -> np.ndarray:
    return psi.reshape(psi.shape[:-1] + (1 << (n - q - 1), 2, 1 << q))


def _apply_1q(psi: np.ndarray, n: int, q: int, u: np.ndarray) -> np.ndarray:
    view = _split_one(psi, n, q)
    a = view[..., 0, :]
    b = view[..., 1, :]
    pb = u.shape[:-2]
    u = u[..., None, None, :, :] if pb else u
    shape = np.broadcast_shapes(view.shape, pb + (1, 1, 1))
    out = np.empty(shape, dtype=complex)
    out[..., 0, :] = u[..., 0, 0] * a + u[..., 0, 1] * b
    out[..., 1, :] = u[..., 1, 0] * a + u[..., 1, 1] * b
    return out.reshape(shape[:-3] + (psi.shape[-1],))


def _apply_2q(psi: np.ndarray, n: int, qa: int, qb: int, u: np.ndarray) -> np.ndarray:
    hi, lo = max(qa, qb), min(qa, qb)
    dims = (1 << (n - hi - 1), 2, 1 << (hi - lo - 1), 2, 1 << lo)
    view = psi.reshape(psi.shape[:-1] + dims)

    def sl(bit_a, bit_b):
        bh, bl = (bit_a, bit_b) if qa == hi else (bit_b, bit_a)
        return (Ellipsis, slice(None), bh, slice(None), bl, slice(None))

    parts = [view[sl(k >> 1, k & 1)] for k in range(4)]
    pb = u.shape[:-2]
    if pb:
        u = u[..., None, None, None, :, :]
    shape = np.broadcast_shapes(view.shape, pb + (1,) * 5)
    out = np.empty(shape, dtype=complex)
    for r in range(4):
        acc = u[..., r, 0] * parts[0]
        for c in range(1, 4):
            coef = u[..., r, c]
            if np.ndim(coef) == 0 and coef == 0:
                continue
            acc = acc + coef * parts[c]
        out[sl(r >> 1, r & 1)] = acc
    return out.reshape(shape[:-5] + (psi.shape[-1],))


def _apply_matrix(psi: np.ndarray, n: int, targets: Sequence[int], u: np.ndarray) -> np.ndarray:
    if len(targets) == 1:
        return _apply_1q(psi, n, targets[0], u)
    return _apply_2q(psi, n, targets[0], targets[1], u)


def apply_gate(state: Statevector, gate: Gate, angle=None) -> Statevector:
    if max(gate.targets) >= state.n_qubits:
        raise IndexError(f"gate targets {gate.targets} outside {state.n_qubits} qubits")
    if gate.param is not None and angle is None:
        raise ArityError(f"gate on parameter slot {gate.param} needs a bound angle")
    u = gate.unitary(angle)
    return Statevector(state.n_qubits, _apply_matrix(state.amplitudes, state.n_qubits, gate.targets, u))


def _segments(circuit: CircuitSpec) -> list[tuple[tuple[int, ...], list[int]]]:
    """Group consecutive gates confined to one qubit pair, for fusion into one 4x4 block.

    Only groups holding a two-qubit gate and at least two gates are fused;
    everything else is returned as singleton groups.
    """
    groups: list[tuple[tuple[int, ...], list[int]]] = []
    cur_pair: tuple[int, ...] = ()
    cur: list[int] = []

    def flush():
        if not cur:
            return
        has_2q = any(len(circuit.gates[k].targets) == 2 for k in cur)
        if has_2q and len(cur) > 1 and len(cur_pair) == 2:
            groups.append((cur_pair, list(cur)))
        else:
            groups.extend((circuit.gates[k].targets, [k]) for k in cur)

    for k, g in enumerate(circuit.gates):
        qs = set(cur_pair) | set(g.targets)
        if cur and len(qs) <= 2:
            if len(qs) == 2 and len(cur_pair) < 2:
                first = circuit.gates[cur[0]].targets[0]
                cur_pair = (first, (qs - {first}).pop())
            cur.append(k)
            continue
        flush()
        cur = [k]
        cur_pair = g.targets
    flush()
    return groups


def _embed_in_pair(gate: Gate, pair: tuple[int, ...], u: np.ndarray) -> np.ndarray:
    """Lift a gate matrix acting on a subset of ``pair`` to the 4x4 pair basis."""
    if len(gate.targets) == 2:
        if gate.targets == pair:
            return u
        swap = np.eye(4)[[0, 2, 1, 3]]
        return swap @ u @ swap
    eye = np.eye(2)
    if gate.targets[0] == pair[0]:
        return np.kron(u, eye) if u.ndim == 2 else np.einsum("...ij,kl->...ikjl", u, eye).reshape(u.shape[:-2] + (4, 4))
    return np.kron(eye, u) if u.ndim == 2 else np.einsum("ij,...kl->...ikjl", eye, u).reshape(u.shape[:-2] + (4, 4))


def _bound_angle(gate: Gate, params: np.ndarray | None):
    if gate.param is None:
        return None
    return params[..., gate.param]


def group_unitary(circuit: CircuitSpec, targets: tuple[int, ...], gate_idx: Sequence[int], params=None) -> np.ndarray:
    """Matrix of a run of gates (one entry of :func:`_segments`), batched over ``params``."""
    if len(gate_idx) == 1:
        g = circuit.gates[gate_idx[0]]
        return g.unitary(_bound_angle(g, params))
    block = None
    for k in gate_idx:
        g = circuit.gates[k]
        u = _embed_in_pair(g, targets, g.unitary(_bound_angle(g, params)))
        block = u if block is None else u @ block
    return block


def compile_circuit(circuit: CircuitSpec, params=None) -> list[tuple[tuple[int, ...], np.ndarray]]:
    """Bind parameters and fuse gate runs into (targets, matrix) instructions."""
    if circuit.n_params:
        if params is None:
            raise ArityError(f"circuit expects {circuit.n_params} parameters, got none")
        params = np.asarray(params, dtype=float)
        if params.shape[-1] != circuit.n_params:
            raise ArityError(f"circuit expects {circuit.n_params} parameters, got {params.shape[-1]}")
    return [(t, group_unitary(circuit, t, idx, params)) for t, idx in _segments(circuit)]


def apply_circuit(state: Statevector, circuit: CircuitSpec, params=None) -> Statevector:
    """Apply ``circuit`` with ``params`` bound positionally.

    ``params`` may be batched, shape ``(*pbatch, n_params)``; the result's
    batch shape is the broadcast of the parameter batch and the state batch.
    """
    if state.n_qubits != circuit.n_qubits:
        raise SizeError(f"state has {state.n_qubits} qubits, circuit {circuit.n_qubits}")
    if params is not None and circuit.n_params == 0 and np.size(params):
        raise ArityError(f"circuit takes no parameters, got {np.shape(params)[-1]}")
    psi = state.amplitudes
    for targets, u in compile_circuit(circuit, params):
        psi = _apply_matrix(psi, state.n_qubits, targets, u)
    return Statevector(state.n_qubits, psi)


def circuit_unitary(circuit: CircuitSpec, params=None) -> np.ndarray:
    """Dense unitary of an unbatched circuit (columns are images of basis states)."""
    d = 1 << circuit.n_qubits
    basis = Statevector(circuit.n_qubits, np.eye(d, dtype=complex))
    return apply_circuit(basis, circuit, params).amplitudes.T


def reduce(state: Statevector, keep: Iterable[int]) -> DensityMatrix:
    """Partial trace onto ``keep``; the lowest kept qubit is the LSB of the result."""
    keep = sorted(set(int(q) for q in keep))
    n = state.n_qubits
    if not keep:
        raise ValueError("keep set must be nonempty")
    if keep[0] < 0 or keep[-1] >= n:
        raise IndexError(f"keep {keep} outside {n} qubits")
    batch = state.batch_shape
    t = state.amplitudes.reshape(batch + (2,) * n)
    nb = len(batch)
    # tensor axis for qubit q is nb + (n - 1 - q)
    keep_axes = [nb + n - 1 - q for q in reversed(keep)]
    rest_axes = [nb + n - 1 - q for q in range(n - 1, -1, -1) if q not in keep]
    t = np.transpose(t, list(range(nb)) + keep_axes + rest_axes)
    m = t.reshape(batch + (1 << len(keep), 1 << (n - len(keep))))
    rho = m @ np.swapaxes(m.conj(), -1, -2)
    return DensityMatrix(len(keep), rho)


def expectation(state: Statevector, obs: Observable) -> np.ndarray:
    diag = obs.diagonal(state.n_qubits)
    return state.probabilities() @ diag


def hs_distance(a: DensityMatrix, b: DensityMatrix) -> np.ndarray:
    """Hilbert-Schmidt distance Tr[(A - B)^2] for Hermitian A, B."""
    if a.entries.shape[-1] != b.entries.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.entries.shape[-1]} vs {b.entries.shape[-1]}")
    diff = a.entries - b.entries
    return np.sum(np.abs(diff) ** 2, axis=(-2, -1))
