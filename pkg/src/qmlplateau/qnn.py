"""QNN ansatzes (tensor-product RY layer, QCNN) and parameter-shift gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sim
from .sim import ArityError, CircuitSpec, Gate, Statevector, apply_circuit

KINDS = ("TensorRY", "QCNN")
SHIFT = np.pi / 2
# amplitudes per vectorized pass; bounds peak memory of the batched kernels
CHUNK_AMPLITUDES = 1 << 22


@dataclass(frozen=True)
class QnnSpec:
    kind: str
    n_qubits: int
    block_param_count: int = 15

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"QNN kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_qubits < (2 if self.kind == "QCNN" else 1):
            raise ValueError(f"{self.kind} needs more qubits, got {self.n_qubits}")
        if self.block_param_count not in BLOCK_LAYOUTS:
            raise ValueError(f"block_param_count must be one of {sorted(BLOCK_LAYOUTS)}")

    @property
    def n_params(self) -> int:
        if self.kind == "TensorRY":
            return self.n_qubits
        return self.block_param_count * (conv_block_count(self.n_qubits) + 1) + 2


# (qubit-slot, kind) sequences; slot 0/1 is the block's first/second qubit, 2 is the pair
_EULER = [(0, "RZ"), (0, "RY"), (0, "RZ"), (1, "RZ"), (1, "RY"), (1, "RZ")]
_CORE = [(2, "RXX"), (2, "RYY"), (2, "RZZ")]
BLOCK_LAYOUTS = {15: _EULER + _CORE + _EULER, 9: _EULER + _CORE, 3: _CORE}


def _block(a: int, b: int, start: int, count: int) -> list[Gate]:
    gates = []
    for k, (slot, kind) in enumerate(BLOCK_LAYOUTS[count]):
        targets = (a, b) if slot == 2 else ((a,) if slot == 0 else (b,))
        gates.append(Gate(kind, targets, param=start + k))
    return gates


def qcnn_stages(n_qubits: int) -> list[list[int]]:
    """Active-qubit lists at the start of each conv/pool stage."""
    stages = []
    active = list(range(n_qubits))
    while len(active) > 2:
        stages.append(active)
        active = active[0::2]
    return stages


def conv_block_count(n_qubits: int) -> int:
    # a stage over m active qubits holds floor(m/2) + floor((m-1)/2) = m - 1 blocks
    return sum(len(a) - 1 for a in qcnn_stages(n_qubits))


def build_qnn(spec: QnnSpec) -> CircuitSpec:
    n = spec.n_qubits
    if spec.kind == "TensorRY":
        return CircuitSpec(n, [Gate("RY", (j,), param=j) for j in range(n)], n)

    bp = spec.block_param_count
    gates: list[Gate] = []
    slot = 0
    active = list(range(n))
    for active in qcnn_stages(n):
        m = len(active)
        pairs = [(active[k], active[k + 1]) for k in range(0, m - 1, 2)]
        pairs += [(active[k], active[k + 1]) for k in range(1, m - 1, 2)]
        for a, b in pairs:
            gates += _block(a, b, slot, bp)
            slot += bp
        # pooling: odd-positioned qubit controls, then is discarded
        for k in range(0, m - 1, 2):
            gates.append(Gate("CNOT", (active[k + 1], active[k])))
        active = active[0::2]
    a, b = active
    gates += _block(a, b, slot, bp)
    slot += bp
    gates += [Gate("RX", (a,), param=slot), Gate("RX", (b,), param=slot + 1)]
    return CircuitSpec(n, gates, slot + 2, output_qubits=(a, b))


def init_params(spec: QnnSpec, rng: np.random.Generator, size=None) -> np.ndarray:
    shape = (spec.n_params,) if size is None else tuple(np.atleast_1d(size)) + (spec.n_params,)
    return rng.uniform(-np.pi, np.pi, size=shape)


@dataclass
class QnnOutput:
    state: Statevector
    output_qubits: tuple[int, ...]


def run_qnn(spec: QnnSpec, params, input_state: Statevector, circuit: CircuitSpec | None = None) -> QnnOutput:
    if input_state.n_qubits != spec.n_qubits:
        raise ArityError(f"input has {input_state.n_qubits} qubits, QNN expects {spec.n_qubits}")
    params = np.asarray(params, dtype=float)
    if params.shape[-1] != spec.n_params:
        raise ArityError(f"QNN expects {spec.n_params} parameters, got {params.shape[-1]}")
    circuit = circuit or build_qnn(spec)
    return QnnOutput(apply_circuit(input_state, circuit, params), circuit.output_qubits)


def parameter_shift_grad(scalar_fn, params, index: int) -> float:
    """Half the difference of ``scalar_fn`` at theta_index +/- pi/2."""
    params = np.asarray(params, dtype=float)
    if not 0 <= index < params.shape[-1]:
        raise IndexError(f"parameter index {index} outside [0, {params.shape[-1]})")
    plus = params.copy()
    minus = params.copy()
    plus[..., index] += SHIFT
    minus[..., index] -= SHIFT
    return 0.5 * (scalar_fn(plus) - scalar_fn(minus))


def _check_shiftable(circuit: CircuitSpec, indices) -> None:
    for k in indices:
        owners = circuit.gates_for_param(k)
        if len(owners) != 1 or circuit.gates[owners[0]].kind not in sim.SHIFTABLE_KINDS:
            raise ValueError(f"parameter {k} must drive exactly one Pauli-rotation gate")


def expectation_values(circuit: CircuitSpec, states: np.ndarray, params, diag: np.ndarray) -> np.ndarray:
    """<O> for each (parameter batch, input state) pair, O given by its diagonal.

    ``states`` is ``(N, 2**n)``; ``params`` is ``(*pbatch, P)``.  Returns
    ``(*pbatch, N)``.
    """
    params = np.asarray(params, dtype=float)
    pbatch = params.shape[:-1]
    flat = params.reshape((-1, params.shape[-1]))
    per_row = states.shape[0] * states.shape[-1]
    step = max(1, CHUNK_AMPLITUDES // per_row)
    n = circuit.n_qubits
    out = np.empty((flat.shape[0], states.shape[0]))
    for lo in range(0, flat.shape[0], step):
        p = flat[lo : lo + step, None, :]
        psi = apply_circuit(Statevector(n, states), circuit, p).amplitudes
        out[lo : lo + step] = (psi.real**2 + psi.imag**2) @ diag
    return out.reshape(pbatch + (states.shape[0],))


def shift_gradients(circuit: CircuitSpec, states: np.ndarray, params, diag: np.ndarray, indices=None):
    """Parameter-shift partial derivatives by direct re-simulation.

    Returns ``(values, grads)`` with shapes ``(*pbatch, N)`` and
    ``(*pbatch, N, K)`` for the K requested parameter indices.
    """
    params = np.asarray(params, dtype=float)
    indices = list(range(circuit.n_params)) if indices is None else list(indices)
    _check_shiftable(circuit, indices)
    k = len(indices)
    shifted = np.repeat(params[None], 2 * k + 1, axis=0)
    for j, idx in enumerate(indices):
        shifted[2 * j, ..., idx] += SHIFT
        shifted[2 * j + 1, ..., idx] -= SHIFT
    f = expectation_values(circuit, states, shifted, diag)
    values = f[-1]
    grads = 0.5 * (f[0:-1:2] - f[1:-1:2])
    return values, np.moveaxis(grads, 0, -1)


def _permute_axes(n: int, targets: tuple[int, ...]) -> list[int]:
    # tensor axis for qubit q is n - 1 - q; targets first (first target most significant)
    front = [n - 1 - q for q in targets]
    return front + [a for a in range(n) if a not in front]


def cached_shift_gradients(circuit: CircuitSpec, states: np.ndarray, params, diag: np.ndarray):
    """Parameter-shift derivatives for every parameter at one parameter point.

    The circuit is cut into fused blocks.  For block ``s`` the expectation
    of each input state is a quadratic form in the block unitary ``V``::

        f_i(V) = <psi_s,i| (V (x) 1)^dag  M_s+1  (V (x) 1) |psi_s,i>

    with ``psi_s`` the state entering the block and ``M_s+1`` the observable
    evolved backward through the later blocks.  Each shifted circuit's value
    ``f(theta +/- pi/2)`` is then read off that form instead of being
    re-simulated; the numbers are those of :func:`shift_gradients`.

    Returns ``(values (N,), grads (N, P))``.
    """
    params = np.asarray(params, dtype=float)
    if params.ndim != 1:
        raise ArityError("cached_shift_gradients takes a single parameter vector")
    _check_shiftable(circuit, range(circuit.n_params))
    n = circuit.n_qubits
    dim = 1 << n
    groups = sim._segments(circuit)
    ops = sim.compile_circuit(circuit, params)
    n_pts = states.shape[0]

    entering = []
    psi = states
    for targets, u in ops:
        entering.append(psi)
        psi = sim._apply_matrix(psi, n, targets, u)
    values = (psi.real**2 + psi.imag**2) @ diag

    grads = np.zeros((n_pts, circuit.n_params))
    m = np.diag(diag).astype(complex)
    for s in range(len(ops) - 1, -1, -1):
        targets, u = ops[s]
        _, gate_idx = groups[s]
        slots = [circuit.gates[g].param for g in gate_idx if circuit.gates[g].param is not None]
        if slots:
            d = 1 << len(targets)
            rest = dim // d
            perm = _permute_axes(n, targets)
            big = np.transpose(m.reshape((2,) * (2 * n)), perm + [n + a for a in perm])
            big = big.reshape(d * rest * d, rest)
            ps = np.transpose(entering[s].reshape((n_pts,) + (2,) * n), [0] + [1 + a for a in perm])
            ps = ps.reshape(n_pts, d, rest)
            g = big @ ps.transpose(2, 1, 0).reshape(rest, d * n_pts)
            g = g.reshape(d, rest, d, d, n_pts)
            t = np.einsum("iao,codbi->iacbd", ps.conj(), g, optimize=True)
            shifted = np.repeat(params[None], 2 * len(slots), axis=0)
            for j, k in enumerate(slots):
                shifted[2 * j, k] += SHIFT
                shifted[2 * j + 1, k] -= SHIFT
            v = sim.group_unitary(circuit, targets, gate_idx, shifted)
            f = np.einsum("kca,kdb,iacbd->ki", v.conj(), v, t, optimize=True).real
            for j, k in enumerate(slots):
                grads[:, k] = 0.5 * (f[2 * j] - f[2 * j + 1])
        uh = np.conj(np.swapaxes(u, -1, -2))
        m = sim._apply_matrix(m.T, n, targets, uh).T
        m = sim._apply_matrix(m, n, targets, u.T)
    return values, grads

