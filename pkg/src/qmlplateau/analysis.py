"""Gradient-variance sweeps, empirical Fisher information, mixedness diagnostics
and exponential-decay regression."""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import stats

from . import sim
from .datasets import Dataset, load_mnist_pool, mnist_dataset, random_dataset
from .embeddings import EmbeddingSpec, embed_state
from .linalg import jacobi_eigh
from .losses import LossKind, MeasurementSpec, linear_values, loss, loss_weights, theorem1_rhs
from .qnn import QnnSpec, build_qnn, shift_gradients
from .sim import DensityMatrix, Gate, Statevector

DATASET_RULES = ("random-uniform", "mnist-pca")
FI_TOL = 1e-12


@dataclass(frozen=True)
class SweepConfig:
    """One gradient-statistics experiment over a range of qubit counts.

    ``points_per_n=None`` means N = 10 n.  ``grad_index`` is a parameter
    index, ``"all"`` (average the variance over every parameter) or
    ``"first-measured"`` (lowest parameter whose gate acts on a measured
    qubit).
    """

    qubit_range: tuple[int, ...]
    embedding: str = "TPE"
    embedding_layers: int = 1
    entangler: str = "CNOT"
    qnn: str = "TensorRY"
    block_param_count: int = 15
    measurement: str = "GlobalParity"
    loss_kind: LossKind = LossKind("NLL")
    dataset_rule: str = "random-uniform"
    single_point: bool = False
    points_per_n: int | None = None
    param_samples: int = 200
    grad_index: int | str = 0
    seed: int = 0
    data_dir: str | None = None
    threads: int = 1

    def __post_init__(self):
        qr = tuple(int(n) for n in self.qubit_range)
        object.__setattr__(self, "qubit_range", qr)
        if isinstance(self.loss_kind, str):
            object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        if not qr or any(b <= a for a, b in zip(qr, qr[1:])):
            raise ValueError("qubit_range must be nonempty and strictly ascending")
        if qr[0] < 1:
            raise ValueError("qubit counts must be positive")
        if qr[-1] > sim.MAX_QUBITS:
            raise sim.SizeError(f"n={qr[-1]} exceeds the {sim.MAX_QUBITS}-qubit limit")
        if self.param_samples < 2:
            raise ValueError("param_samples must be >= 2")
        if self.dataset_rule not in DATASET_RULES:
            raise ValueError(f"dataset_rule must be one of {DATASET_RULES}")
        if self.points_per_n is not None and self.points_per_n < 1:
            raise ValueError("points_per_n must be positive")
        if isinstance(self.grad_index, str):
            if self.grad_index not in ("all", "first-measured"):
                raise ValueError("grad_index must be an integer, 'all' or 'first-measured'")
        elif self.grad_index < 0:
            raise ValueError("grad_index must be nonnegative")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        # validates kinds and layer counts
        self.embedding_spec(qr[0])

    def embedding_spec(self, n: int) -> EmbeddingSpec:
        return EmbeddingSpec(self.embedding, n, self.embedding_layers, self.entangler)

    def n_points(self, n: int) -> int:
        return 10 * n if self.points_per_n is None else self.points_per_n


@dataclass
class VarianceRecord:
    n: int
    variance: float
    mean: float
    samples: int
    loss_kind: str
    wall_time: float
    n_points: int


@dataclass
class VarianceReport:
    records: list[VarianceRecord] = field(default_factory=list)

    @property
    def qubits(self) -> np.ndarray:
        return np.array([r.n for r in self.records])

    @property
    def variances(self) -> np.ndarray:
        return np.array([r.variance for r in self.records])


@dataclass
class GradientSamples:
    """Per-draw predicted labels and their derivatives for one n."""

    n: int
    labels: np.ndarray  # (N,)
    tilde_y: np.ndarray  # (S, N)
    d_tilde_y: np.ndarray  # (S, N, K)
    indices: list[int]
    wall_time: float


# --- problem assembly ----------------------------------------------------------


def _seed(seed: int, n: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, n, stream])


@lru_cache(maxsize=4)
def _cached_pool(data_dir):
    return load_mnist_pool(data_dir)


def build_dataset(config: SweepConfig, n: int) -> Dataset:
    count = config.n_points(n)
    data_seed = _seed(config.seed, n, 0)
    if config.dataset_rule == "random-uniform":
        return random_dataset(n, count, data_seed)
    train, _ = mnist_dataset(n, count, 0, data_seed, pool=_cached_pool(config.data_dir))
    return train


def _problem(config: SweepConfig, n: int):
    circuit = build_qnn(QnnSpec(config.qnn, n, config.block_param_count))
    meas = MeasurementSpec.for_output(config.measurement, circuit.output_qubits)
    return circuit, meas, meas.diagonal(n)


def resolve_indices(config: SweepConfig, circuit: sim.CircuitSpec, meas: MeasurementSpec) -> list[int]:
    if config.grad_index == "all":
        return list(range(circuit.n_params))
    if config.grad_index == "first-measured":
        for gate in circuit.gates:
            if gate.param is not None and set(gate.targets) & set(meas.target_qubits):
                return [gate.param]
        raise ValueError("no parameterized gate touches the measured qubits")
    if config.grad_index >= circuit.n_params:
        raise IndexError(f"grad_index {config.grad_index} outside {circuit.n_params} parameters")
    return [int(config.grad_index)]


def _in_chunks(fn, params: np.ndarray, threads: int):
    """Apply ``fn`` to contiguous slices of the draw axis; results come back in draw order."""
    if threads == 1 or params.shape[0] < 2 * threads:
        return [fn(params)]
    bounds = np.linspace(0, params.shape[0], threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, [params[a:b] for a, b in zip(bounds, bounds[1:])]))


def gradient_samples(config: SweepConfig, n: int, dataset: Dataset | None = None) -> GradientSamples:
    """Predicted labels and parameter-shift derivatives over ``param_samples`` uniform draws."""
    t0 = time.perf_counter()
    dataset = dataset or build_dataset(config, n)
    circuit, meas, diag = _problem(config, n)
    indices = resolve_indices(config, circuit, meas)
    states = embed_state(config.embedding_spec(n), dataset.features).amplitudes
    rng = np.random.default_rng(_seed(config.seed, n, 1))
    params = rng.uniform(-np.pi, np.pi, size=(config.param_samples, circuit.n_params))

    parts = _in_chunks(lambda p: shift_gradients(circuit, states, p, diag, indices), params, config.threads)
    values = np.concatenate([v for v, _ in parts])
    grads = np.concatenate([g for _, g in parts])
    return GradientSamples(n, dataset.labels, values, grads, indices, time.perf_counter() - t0)


def loss_derivatives(samples: GradientSamples, kind: LossKind, single_point: bool = False) -> np.ndarray:
    """dL/dtheta per draw, ``(S, K)``; with ``single_point`` each point's own loss, ``(S, N, K)``."""
    w = loss_weights(samples.tilde_y, samples.labels, kind)
    if single_point:
        # the one-point loss has weight N times the point's share of the N-point loss
        return w[..., None] * samples.d_tilde_y * samples.labels.shape[0]
    return np.einsum("sn,snk->sk", w, samples.d_tilde_y)


def _record(samples: GradientSamples, kind: LossKind, single_point: bool) -> VarianceRecord:
    d = loss_derivatives(samples, kind, single_point)
    var = np.var(d, axis=0, ddof=1)
    mean = np.mean(d, axis=0)
    return VarianceRecord(
        samples.n,
        float(np.mean(var)),
        float(np.mean(mean)),
        d.shape[0],
        kind.kind,
        samples.wall_time,
        samples.labels.shape[0],
    )


def variance_sweep(config: SweepConfig) -> VarianceReport:
    """Sample variance (1/(S-1)) and mean of the loss derivative for each n."""
    return multi_loss_sweep(config, [config.loss_kind])[config.loss_kind.kind]


def multi_loss_sweep(config: SweepConfig, kinds) -> dict[str, VarianceReport]:
    """Variance reports for several losses that share the same data and parameter draws."""
    kinds = [LossKind(k) if isinstance(k, str) else k for k in kinds]
    reports = {k.kind: VarianceReport() for k in kinds}
    for n in config.qubit_range:
        samples = gradient_samples(config, n)
        for k in kinds:
            reports[k.kind].records.append(_record(samples, k, config.single_point))
    return reports


# --- per-point variance bound ----------------------------------------------------


@dataclass
class BoundRecord:
    n: int
    loss_kind: str
    variance: float
    standard_error: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.variance <= self.rhs + 3.0 * self.standard_error


def variance_standard_error(x: np.ndarray) -> float:
    """Standard error of the unbiased sample variance, from the fourth central moment."""
    x = np.asarray(x, dtype=float)
    s = x.shape[0]
    c = x - x.mean()
    m2 = np.mean(c**2)
    m4 = np.mean(c**4)
    sigma4 = (m2 * s / (s - 1)) ** 2
    return float(np.sqrt(max(m4 - (s - 3) / (s - 1) * sigma4, 0.0) / s))


def per_point_statistics(samples: GradientSamples, kind: LossKind):
    """Variance, mean and g factor of each point's linear-expectation derivative (first index)."""
    _, dl = linear_values(samples.tilde_y, samples.labels, kind)
    d = dl * samples.d_tilde_y[..., 0]
    g = loss(samples.tilde_y[0], samples.labels, kind).per_point_g
    return np.var(d, axis=0, ddof=1), np.mean(d, axis=0), g


def theorem1_check(config: SweepConfig, kinds=("MSE", "NLL")) -> list[BoundRecord]:
    """Measured Var[dL/dtheta] against the per-point bound, one record per (n, loss)."""
    out = []
    for n in config.qubit_range:
        samples = gradient_samples(config, n)
        for k in kinds:
            kind = LossKind(k) if isinstance(k, str) else k
            d = loss_derivatives(samples, kind)[:, 0]
            var, mean, g = per_point_statistics(samples, kind)
            out.append(
                BoundRecord(n, kind.kind, float(np.var(d, ddof=1)), variance_standard_error(d), theorem1_rhs(var, mean, g))
            )
    return out


# --- Fisher information ---------------------------------------------------------------


@dataclass
class FIMatrix:
    entries: np.ndarray
    eigenvalues: np.ndarray
    trace: float


def _log_prob_gradients(tilde_y, d_tilde_y, labels, clip_floor) -> np.ndarray:
    """d log p_i / dtheta with p_i = clip((1 + y_i tilde_y_i)/2, b); zero where clipped."""
    p = (1.0 + labels * tilde_y) / 2.0
    live = p > clip_floor
    scale = np.where(live, labels / (2.0 * np.where(live, p, 1.0)), 0.0)
    return scale[..., None] * d_tilde_y


def fi_from_gradients(grads: np.ndarray) -> FIMatrix:
    """(1/N) sum_i g_i g_i^T from a ``(N, P)`` array of log-probability gradients."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape[0] == 0:
        raise ValueError("the Fisher matrix needs at least one data point")
    f = grads.T @ grads / grads.shape[0]
    f = 0.5 * (f + f.T)
    w, _ = jacobi_eigh(f, tol=FI_TOL)
    return FIMatrix(f, w, float(np.trace(f)))


def fi_matrix(dataset: Dataset, embedding: EmbeddingSpec, qnn: QnnSpec, params, meas: MeasurementSpec, clip_floor: float = 1e-9) -> FIMatrix:
    """Empirical Fisher matrix of the label probabilities at one parameter point."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    circuit = build_qnn(qnn)
    states = embed_state(embedding, dataset.features).amplitudes
    values, grads = shift_gradients(circuit, states, np.asarray(params, dtype=float), meas.diagonal(qnn.n_qubits))
    return fi_from_gradients(_log_prob_gradients(values, grads, dataset.labels, clip_floor))


@dataclass
class FiRecord:
    n: int
    mean_trace: float
    trace_std: float
    max_eigenvalue: float
    eigenvalues: np.ndarray  # pooled over draws
    samples: int
    wall_time: float


def fi_spectrum_sweep(config: SweepConfig) -> list[FiRecord]:
    """Per n: mean trace and pooled spectrum of the empirical FI matrix over random draws."""
    out = []
    for n in config.qubit_range:
        samples = gradient_samples(replace(config, grad_index="all"), n)
        lp = _log_prob_gradients(samples.tilde_y, samples.d_tilde_y, samples.labels, config.loss_kind.clip_floor)
        mats = [fi_from_gradients(g) for g in lp]
        traces = np.array([m.trace for m in mats])
        eig = np.concatenate([m.eigenvalues for m in mats])
        out.append(FiRecord(n, float(traces.mean()), float(traces.std(ddof=1)), float(eig.max()), eig, len(mats), samples.wall_time))
    return out


@dataclass
class ConcentrationReport:
    n: int
    mean_abs_entry: float
    entry_variance: np.ndarray
    tail_frequency: float
    chebyshev_bound: float

    @property
    def consistent(self) -> bool:
        # Chebyshev at c = 3 sigma, with binomial slack for a finite sample
        return self.tail_frequency <= self.chebyshev_bound + 0.02


def fi_concentration_check(instances: int, n: int, config: SweepConfig) -> ConcentrationReport:
    """Spread of the FI entries over ``instances`` parameter draws at fixed data."""
    if instances < 100:
        raise ValueError("use at least 100 instances")
    cfg = replace(config, param_samples=instances, grad_index="all")
    samples = gradient_samples(cfg, n)
    lp = _log_prob_gradients(samples.tilde_y, samples.d_tilde_y, samples.labels, config.loss_kind.clip_floor)
    f = np.einsum("snp,snq->spq", lp, lp) / lp.shape[1]
    mean = f.mean(axis=0)
    var = f.var(axis=0, ddof=1)
    sigma = np.sqrt(var)
    spread = sigma > 0
    hits = np.abs(f - mean) >= 3.0 * sigma
    tail = float(hits[:, spread].mean()) if spread.any() else 0.0
    return ConcentrationReport(n, float(np.abs(mean).mean()), var, tail, 1.0 / 9.0)


# --- mixedness -----------------------------------------------------------------------


def middle_pair(n: int) -> tuple[int, int]:
    if n < 2:
        raise ValueError("need at least two qubits")
    return (n // 2 - 1, n // 2)


def hs_to_mixed(states: Statevector, keep) -> np.ndarray:
    rho = sim.reduce(states, keep)
    return sim.hs_distance(rho, DensityMatrix.maximally_mixed(rho.n_qubits))


@dataclass
class HsRecord:
    n: int
    layers: int
    mean_distance: float
    points: int


def hs_sweep(config: SweepConfig, points: int = 2000, chunk: int = 500) -> list[HsRecord]:
    """Mean D_HS between the middle-pair reduction of each embedded point and I/4."""
    out = []
    for n in config.qubit_range:
        data = build_dataset(replace(config, points_per_n=points), n)
        spec = config.embedding_spec(n)
        keep = middle_pair(n)
        d = np.concatenate(
            [hs_to_mixed(embed_state(spec, data.features[a : a + chunk]), keep) for a in range(0, len(data), chunk)]
        )
        out.append(HsRecord(n, spec.effective_layers, float(d.mean()), len(d)))
    return out


# --- local-cost proportionality --------------------------------------------------------


def haar_unitaries(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` Haar-random ``dim x dim`` unitaries (QR of Ginibre, phase-corrected)."""
    u = stats.unitary_group.rvs(dim, size=count, random_state=rng)
    return u.reshape(count, dim, dim)


def paired_entangled_state(n: int, s: int, angle: float) -> Statevector:
    """Each qubit j < s shares cos(a)|00> + sin(a)|11> with qubit j + s; the rest stay |0>.

    The reduction onto qubits 0..s-1 is diag(cos^2, sin^2)^(x s), so its D_HS
    to I/2^s runs from 1 - 2^-s (a = 0) down to 0 (a = pi/4).
    """
    if n < 2 * s:
        raise ValueError("need n >= 2 s for the paired construction")
    gates = []
    for j in range(s):
        gates.append(Gate("RY", (j,), angle=2.0 * angle))
        gates.append(Gate("CNOT", (j, j + s)))
    return sim.apply_circuit(sim.zero_state(n), sim.CircuitSpec(n, gates))


@dataclass
class Prop1Record:
    hs_distance: float
    variance: float
    standard_error: float


@dataclass
class Prop1Report:
    records: list[Prop1Record]
    slope: float
    r_squared: float


def _block_apply(psi: np.ndarray, n: int, qubits, u: np.ndarray) -> np.ndarray:
    if len(qubits) == 1:
        return sim._apply_1q(psi, n, qubits[0], u)
    if len(qubits) == 2:
        return sim._apply_2q(psi, n, qubits[1], qubits[0], u)
    # general s: contract on the tensor axes of the block (qubit q is axis n-1-q)
    batch = psi.shape[:-1]
    nb = len(batch)
    t = psi.reshape(batch + (2,) * n)
    axes = [nb + n - 1 - q for q in reversed(qubits)]
    rest = [a for a in range(nb, nb + n) if a not in axes]
    perm = list(range(nb)) + axes + rest
    t = np.transpose(t, perm).reshape(batch + (u.shape[-1], -1))
    t = u @ t
    t = t.reshape(batch + (2,) * n)
    return np.transpose(t, np.argsort(perm)).reshape(psi.shape)


def local_cost_derivatives(state: Statevector, s: int, trials: int, rng: np.random.Generator, block: int = 0) -> np.ndarray:
    """Parameter-shift derivatives of 1 - (1/n) sum_j <|0><0|_j> for random block layers.

    Every s-qubit block gets an independent Haar unitary; block ``block``
    is split as U_B RZ(theta) U_A with RZ on its first qubit.
    """
    n = state.n_qubits
    if n % s:
        raise ValueError(f"s={s} does not divide n={n}")
    xi = n // s
    blocks = [tuple(range(k * s, (k + 1) * s)) for k in range(xi)]
    d = 1 << s
    psi = np.broadcast_to(state.amplitudes, (trials, 1 << n)).copy()
    for k, qs in enumerate(blocks):
        psi = _block_apply(psi, n, qs, haar_unitaries(d, trials, rng))
    ub = haar_unitaries(d, trials, rng)
    cost = 1.0 - np.mean([sim.Observable("P0", (q,)).diagonal(n) for q in range(n)], axis=0)
    out = []
    for sign in (1.0, -1.0):
        rz = Gate("RZ", (blocks[block][0],), angle=sign * np.pi / 2).unitary()
        shifted = sim._apply_1q(psi, n, blocks[block][0], rz)
        shifted = _block_apply(shifted, n, blocks[block], ub)
        out.append((shifted.real**2 + shifted.imag**2) @ cost)
    return 0.5 * (out[0] - out[1])


def proposition1_check(s: int, xi: int, input_states, trials: int = 2000, seed: int = 0) -> Prop1Report:
    """Regress the local-cost derivative variance on D_HS(rho^(h), I/2^s) through the origin.

    R^2 is the uncentered coefficient appropriate to a zero-intercept fit.
    """
    if s < 1 or xi < 1:
        raise ValueError("s and xi must be positive")
    n = s * xi
    if n > 10:
        raise sim.SizeError("local-cost check limited to n <= 10")
    if trials < 1000:
        raise ValueError("use at least 1000 trials")
    rng = np.random.default_rng(seed)
    recs = []
    for st in input_states:
        if st.n_qubits != n:
            raise ValueError(f"input state has {st.n_qubits} qubits, expected s*xi = {n}")
        dist = float(hs_to_mixed(st, range(s)))
        g = local_cost_derivatives(st, s, trials, rng)
        recs.append(Prop1Record(dist, float(np.var(g, ddof=1)), variance_standard_error(g)))
    x = np.array([r.hs_distance for r in recs])
    y = np.array([r.variance for r in recs])
    slope = float(x @ y / (x @ x)) if x @ x > 0 else 0.0
    ss = float(y @ y)
    r2 = 1.0 - float(np.sum((y - slope * x) ** 2)) / ss if ss > 0 else 0.0
    return Prop1Report(recs, slope, r2)


# --- decay regression ------------------------------------------------------------------


class FitError(ValueError):
    pass


@dataclass
class DecayFit:
    slope: float
    intercept: float
    r_squared: float
    alpha_estimate: float


def decay_fit(report, values=None) -> DecayFit:
    """Least-squares fit of log(value) against n; alpha = exp(-slope).

    Accepts a :class:`VarianceReport` or two arrays ``(qubits, values)``.
    """
    if isinstance(report, VarianceReport):
        ns, vs = report.qubits, report.variances
    else:
        ns, vs = np.asarray(report, dtype=float), np.asarray(values, dtype=float)
    ok = vs > 0
    if not ok.all():
        warnings.warn(f"dropping {int((~ok).sum())} nonpositive entries from the decay fit", RuntimeWarning, stacklevel=2)
    ns, vs = ns[ok], vs[ok]
    if np.unique(ns).size < 3:
        raise FitError("need at least three distinct n with positive values")
    y = np.log(vs)
    if np.ptp(y) == 0:
        return DecayFit(0.0, float(y[0]), 1.0, 1.0)
    fit = stats.linregress(ns, y)
    return DecayFit(float(fit.slope), float(fit.intercept), float(fit.rvalue**2), float(np.exp(-fit.slope)))
