"""Measurements, the loss family, and the per-point gradient-bound factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qnn import QnnOutput
from .sim import Observable, Statevector, expectation

MEASUREMENT_KINDS = ("GlobalParity", "LocalParity2", "LocalProjectorAverage")
LOSS_KINDS = ("Linear", "MSE", "NLL", "GenMSE", "KL", "ReverseKL")
DEFAULT_CLIP = 1e-9


@dataclass(frozen=True)
class MeasurementSpec:
    kind: str
    target_qubits: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "target_qubits", tuple(int(q) for q in self.target_qubits))
        if self.kind not in MEASUREMENT_KINDS:
            raise ValueError(f"measurement kind must be one of {MEASUREMENT_KINDS}")
        if self.kind == "LocalParity2" and len(self.target_qubits) != 2:
            raise ValueError("LocalParity2 measures exactly two qubits")
        if not self.target_qubits:
            raise ValueError("measurement needs at least one target qubit")

    @classmethod
    def for_output(cls, kind: str, output_qubits) -> "MeasurementSpec":
        """Default targets: all outputs (global), the middle two (local parity)."""
        qs = tuple(output_qubits)
        if kind == "LocalParity2":
            if len(qs) < 2:
                raise ValueError("LocalParity2 needs at least two output qubits")
            mid = len(qs) // 2
            qs = (qs[mid - 1], qs[mid])
        return cls(kind, qs)

    def diagonal(self, n_qubits: int) -> np.ndarray:
        """Diagonal of the (computational-basis diagonal) observable."""
        if self.kind == "LocalProjectorAverage":
            proj = [Observable("P0", (q,)).diagonal(n_qubits) for q in self.target_qubits]
            return 1.0 - np.mean(proj, axis=0)
        return Observable("Z", self.target_qubits).diagonal(n_qubits)


def predicted_label(output: QnnOutput, meas: MeasurementSpec) -> np.ndarray:
    """Parity expectation over the measured qubits, in [-1, 1]."""
    if meas.kind == "LocalProjectorAverage":
        raise ValueError("predicted_label needs a parity measurement")
    if not set(meas.target_qubits) <= set(output.output_qubits):
        raise ValueError(f"targets {meas.target_qubits} not among outputs {output.output_qubits}")
    return expectation(output.state, Observable("Z", meas.target_qubits))


def label_probability(tilde_y, label):
    label = np.asarray(label)
    if not np.all(np.isin(label, (-1, 1))):
        raise ValueError("labels must be -1 or +1")
    return (1.0 + label * np.asarray(tilde_y)) / 2.0


def local_projector_cost(output: QnnOutput | Statevector) -> np.ndarray:
    """1 - mean_j <|0><0|_j> over every qubit of the register."""
    state = output.state if isinstance(output, QnnOutput) else output
    meas = MeasurementSpec("LocalProjectorAverage", tuple(range(state.n_qubits)))
    return state.probabilities() @ meas.diagonal(state.n_qubits)


@dataclass(frozen=True)
class LossKind:
    kind: str
    clip_floor: float = DEFAULT_CLIP

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}")
        if not 0 < self.clip_floor < 1:
            raise ValueError("clip_floor must lie in (0, 1)")


@dataclass
class LossEvaluation:
    per_point_linear: np.ndarray
    per_point_prob: np.ndarray
    loss: float
    per_point_g: np.ndarray


def _as_pair(evals, labels):
    evals = np.asarray(evals, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if evals.shape[-1] == 0:
        raise ValueError("loss needs at least one data point")
    if evals.shape[-1] != labels.shape[-1]:
        raise ValueError(f"{evals.shape[-1]} evaluations vs {labels.shape[-1]} labels")
    return evals, labels


def loss(evals, labels, kind: LossKind) -> LossEvaluation:
    """Aggregate loss over N points from the predicted labels ``tilde_y``.

    Linear, MSE and NLL take ``evals`` = tilde_y in [-1, 1] and labels in
    {-1, +1}; the linear loss is the mean of p_i(y_i).  GenMSE takes
    ``(N, n_y)`` arrays of real labels.  KL / ReverseKL take model and target
    distributions over a common sample space (see :func:`kl_loss`).
    """
    if kind.kind in ("KL", "ReverseKL"):
        return kl_loss(evals, labels, kind)
    evals, labels = _as_pair(evals, labels)
    if kind.kind == "GenMSE":
        if evals.shape != labels.shape:
            raise ValueError("GenMSE needs matching (N, n_y) arrays")
        err = evals - labels
        value = float(np.mean(np.sum(err**2, axis=-1)))
        g = np.sqrt(2) * 2 * (1.0 + np.max(np.abs(labels), axis=-1))
        return LossEvaluation(evals, np.full(evals.shape, np.nan), value, g)

    prob = np.clip(label_probability(evals, labels), kind.clip_floor, 1.0)
    if kind.kind == "Linear":
        value = float(np.mean(prob))
        g = np.full(evals.shape, np.sqrt(2))
    elif kind.kind == "MSE":
        value = float(np.mean((evals - labels) ** 2))
        # max |d/dy~ (y~ - y)^2| over y~ in [-1, 1] is 2 (1 + |y|)
        g = np.sqrt(2) * 2 * (1.0 + np.abs(labels))
    else:
        value = float(-np.mean(np.log(prob)))
        g = np.full(evals.shape, np.sqrt(2) / kind.clip_floor)
    return LossEvaluation(evals, prob, value, g)


def loss_weights(evals, labels, kind: LossKind) -> np.ndarray:
    """dL/d(tilde_y_i) for the Linear / MSE / NLL losses (batched over leading axes).

    The chain rule then gives dL/dtheta = sum_i weight_i * d tilde_y_i / dtheta.
    Clipped NLL points carry zero weight.
    """
    evals = np.asarray(evals, dtype=float)
    labels = np.asarray(labels, dtype=float)
    n = evals.shape[-1]
    if kind.kind == "Linear":
        return np.broadcast_to(labels / (2.0 * n), evals.shape).copy()
    if kind.kind == "MSE":
        return 2.0 * (evals - labels) / n
    if kind.kind == "NLL":
        prob = label_probability(evals, labels)
        live = prob > kind.clip_floor
        return np.where(live, -labels / (2.0 * n * np.where(live, prob, 1.0)), 0.0)
    raise ValueError(f"no per-point chain rule for {kind.kind}")


def linear_values(evals, labels, kind: LossKind):
    """The linear expectation l_i that ``kind`` composes with, and dl_i/d(tilde_y_i).

    MSE works on tilde_y itself; Linear and NLL on p_i(y_i) = (1 + y_i tilde_y_i) / 2.
    """
    evals = np.asarray(evals, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if kind.kind == "MSE":
        return evals, np.ones_like(labels)
    return label_probability(evals, labels), labels / 2.0


def empirical_distribution(samples, n_bits: int) -> np.ndarray:
    """Q(x): frequency of each n-bit string among integer-coded samples."""
    counts = np.bincount(np.asarray(samples, dtype=int), minlength=1 << n_bits)
    return counts / counts.sum()


def kl_loss(model_prob, target_prob, kind: LossKind) -> LossEvaluation:
    """KL(Q || P) or KL(P || Q) over an enumerated sample space, both clipped to [b, 1]."""
    p = np.clip(np.asarray(model_prob, dtype=float), kind.clip_floor, 1.0)
    q = np.clip(np.asarray(target_prob, dtype=float), kind.clip_floor, 1.0)
    if p.shape != q.shape:
        raise ValueError("model and target distributions differ in support size")
    b = kind.clip_floor
    # L = sum_x f_x = (1/|X|) sum_x |X| f_x, so each g carries a factor |X|
    size = p.shape[-1]
    if kind.kind == "KL":
        value = float(-np.sum(q * np.log(p / q), axis=-1))
        g = np.sqrt(2) * size * q / b
    else:
        value = float(-np.sum(p * np.log(q / p), axis=-1))
        # |1 + log(P/Q)| is largest at an end of P in [b, 1]
        g = np.sqrt(2) * size * np.maximum(np.abs(1 + np.log(b / q)), np.abs(1 + np.log(1 / q)))
    return LossEvaluation(p, p, value, g)


def theorem1_rhs(per_point_variance, per_point_mean, per_point_g, n_points: int | None = None) -> float:
    """Upper bound on Var[dL/dtheta] from per-point variance and mean of dl_i/dtheta."""
    var = np.asarray(per_point_variance, dtype=float)
    mean = np.asarray(per_point_mean, dtype=float)
    g = np.asarray(per_point_g, dtype=float)
    if not var.shape == mean.shape == g.shape:
        raise ValueError("variance, mean and g vectors must have equal length")
    if np.any(var < 0):
        raise ValueError("variances must be nonnegative")
    n = var.shape[-1] if n_points is None else n_points
    if n != var.shape[-1]:
        raise ValueError(f"N={n} disagrees with vector length {var.shape[-1]}")
    return float((np.sum(g * np.sqrt(var + mean**2)) / n) ** 2)
