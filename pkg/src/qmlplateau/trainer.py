"""Full-batch ADAM training of a QNN classifier with a tanh readout node."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datasets import Dataset
from .embeddings import EmbeddingSpec, embed_state
from .losses import DEFAULT_CLIP, MeasurementSpec
from .qnn import QnnSpec, build_qnn, cached_shift_gradients, expectation_values, init_params
from .sim import ArityError


def readout(tilde_y, scale=1.0, bias=0.0):
    """Probability of label +1: (1 + tanh(scale * tilde_y + bias)) / 2."""
    return 0.5 * (1.0 + np.tanh(scale * np.asarray(tilde_y, dtype=float) + bias))


def readout_grad(tilde_y, scale=1.0, bias=0.0):
    """d p(+1) / d(tilde_y, scale, bias) as a ``(..., 3)`` array."""
    tilde_y = np.asarray(tilde_y, dtype=float)
    dz = 0.5 * (1.0 - np.tanh(scale * tilde_y + bias) ** 2)
    return np.stack([dz * scale, dz * tilde_y, dz], axis=-1)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    learning_rate: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **kw) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **kw)


def adam_step(state: AdamState, params, gradient) -> tuple[AdamState, np.ndarray]:
    params = np.asarray(params, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    if not params.shape == gradient.shape == state.first_moment.shape:
        raise ArityError(
            f"shape mismatch: params {params.shape}, gradient {gradient.shape}, moments {state.first_moment.shape}"
        )
    step = state.step + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * gradient
    v = state.beta2 * state.second_moment + (1 - state.beta2) * gradient**2
    m_hat = m / (1 - state.beta1**step)
    v_hat = v / (1 - state.beta2**step)
    new = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, first_moment=m, second_moment=v, step=step), new


def nll_and_grad(p_plus, labels, clip_floor=DEFAULT_CLIP):
    """Mean -log p_i(y_i) and its derivative with respect to each p_i(+1)."""
    labels = np.asarray(labels, dtype=float)
    p_label = np.where(labels > 0, p_plus, 1.0 - p_plus)
    live = p_label > clip_floor
    value = float(-np.mean(np.log(np.maximum(p_label, clip_floor))))
    # d(-log p_y)/dp_plus = -y / p_y
    dp = np.where(live, -labels / np.where(live, p_label, 1.0), 0.0) / labels.shape[0]
    return value, dp


def accuracy(p_plus, labels) -> float:
    pred = np.where(np.asarray(p_plus) >= 0.5, 1, -1)
    return float(np.mean(pred == np.asarray(labels)))


@dataclass
class TrainConfig:
    n_qubits: int = 8
    qnn: str = "QCNN"
    block_param_count: int = 15
    embedding: str = "HEE"
    embedding_layers: int = 1
    entangler: str = "CNOT"
    measurement: str = "LocalParity2"
    iterations: int = 200
    learning_rate: float = 0.02
    clip_floor: float = DEFAULT_CLIP
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TraceRecord:
    iteration: int
    train_loss: float
    train_accuracy: float
    test_accuracy: float
    wall_time: float


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)
    params: np.ndarray | None = None
    readout_params: np.ndarray | None = None

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]


class QnnModel:
    """Circuit, observable and embedded states for one training problem."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.qnn_spec = QnnSpec(config.qnn, config.n_qubits, config.block_param_count)
        self.embedding = EmbeddingSpec(config.embedding, config.n_qubits, config.embedding_layers, config.entangler)
        self.circuit = build_qnn(self.qnn_spec)
        meas = MeasurementSpec.for_output(config.measurement, self.circuit.output_qubits)
        self.diag = meas.diagonal(config.n_qubits)

    def embed(self, features) -> np.ndarray:
        return embed_state(self.embedding, features).amplitudes

    def predict_proba(self, states, params, ro) -> np.ndarray:
        return readout(expectation_values(self.circuit, states, params, self.diag), ro[0], ro[1])

    def loss_and_grad(self, states, labels, params, ro):
        """NLL over the batch and its gradient for (QNN params, readout scale, readout bias)."""
        tilde_y, dty = cached_shift_gradients(self.circuit, states, params, self.diag)
        p = readout(tilde_y, ro[0], ro[1])
        value, dp = nll_and_grad(p, labels, self.config.clip_floor)
        jac = readout_grad(tilde_y, ro[0], ro[1])
        g_theta = (dp * jac[:, 0]) @ dty
        g_ro = dp @ jac[:, 1:]
        return value, g_theta, g_ro, p


def train(config: TrainConfig, train_set: Dataset, test_set: Dataset | None = None) -> TrainTrace:
    """Full-batch training; record 0 is the untrained model."""
    model = QnnModel(config)
    if train_set.n_features != config.n_qubits:
        raise ArityError(f"dataset has {train_set.n_features} features for {config.n_qubits} qubits")
    rng = np.random.default_rng(config.seed)
    theta = init_params(model.qnn_spec, rng)
    ro = np.array([1.0, 0.0])
    train_states = model.embed(train_set.features)
    test_states = model.embed(test_set.features) if test_set is not None else None

    state = AdamState.zeros(theta.size + 2, learning_rate=config.learning_rate)
    trace = TrainTrace()
    t0 = time.perf_counter()
    for it in range(config.iterations + 1):
        value, g_theta, g_ro, p = model.loss_and_grad(train_states, train_set.labels, theta, ro)
        test_acc = np.nan
        if test_states is not None:
            test_acc = accuracy(model.predict_proba(test_states, theta, ro), test_set.labels)
        trace.records.append(TraceRecord(it, value, accuracy(p, train_set.labels), test_acc, time.perf_counter() - t0))
        if it == config.iterations:
            break
        state, flat = adam_step(state, np.concatenate([theta, ro]), np.concatenate([g_theta, g_ro]))
        theta, ro = flat[:-2], flat[-2:]
    trace.params = theta
    trace.readout_params = ro
    return trace


class QNNClassifier(ClassifierMixin, BaseEstimator):
    """Binary classifier: embedding, QNN, parity readout and a tanh node, trained by ADAM.

    Inputs must have ``n_qubits`` columns.  ``classes_[0]`` maps to label
    +1 internally.
    """

    def __init__(self, qnn="QCNN", embedding="HEE", embedding_layers=1, entangler="CNOT",
                 measurement="LocalParity2", iterations=200, learning_rate=0.02, seed=0):
        self.qnn = qnn
        self.embedding = embedding
        self.embedding_layers = embedding_layers
        self.entangler = entangler
        self.measurement = measurement
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.seed = seed

    def _config(self, n):
        return TrainConfig(n, self.qnn, 15, self.embedding, self.embedding_layers, self.entangler,
                           self.measurement, self.iterations, self.learning_rate, DEFAULT_CLIP, self.seed)

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if self.classes_.size != 2:
            raise ValueError(f"binary classification only, got {self.classes_.size} classes")
        signed = np.where(y == self.classes_[0], 1, -1)
        self.n_features_in_ = X.shape[1]
        self.trace_ = train(self._config(X.shape[1]), Dataset(X, signed))
        self.model_ = QnnModel(self._config(X.shape[1]))
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "trace_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        p = self.model_.predict_proba(self.model_.embed(X), self.trace_.params, self.trace_.readout_params)
        return np.column_stack([p, 1.0 - p])

    def predict(self, X):
        return np.where(self.predict_proba(X)[:, 0] >= 0.5, self.classes_[0], self.classes_[1])
