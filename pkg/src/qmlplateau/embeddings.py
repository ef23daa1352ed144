"""Fixed data-embedding circuits: tensor-product (TPE), hardware-efficient (HEE)
and the IQP-style classically-hard embedding (CHE)."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .sim import ArityError, CircuitSpec, Gate, Statevector, apply_circuit, zero_state

KINDS = ("TPE", "HEE", "CHE")
ENTANGLERS = ("CNOT", "CZ")


@dataclass(frozen=True)
class EmbeddingSpec:
    kind: str
    n_qubits: int
    layers: int = 1
    entangler: str = "CNOT"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"embedding kind must be one of {KINDS}, got {self.kind!r}")
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be >= 1")
        if self.entangler not in ENTANGLERS:
            raise ValueError(f"HEE entangler must be one of {ENTANGLERS}")

    @property
    def effective_layers(self) -> int:
        return 1 if self.kind == "TPE" else self.layers


def _template(spec: EmbeddingSpec) -> tuple[CircuitSpec, callable]:
    """Circuit whose parameter slots receive angles derived from the features.

    Returns the circuit and a function mapping a feature array ``(..., n)`` to
    its slot angles ``(..., n_slots)``.
    """
    n = spec.n_qubits
    gates: list[Gate] = []
    if spec.kind in ("TPE", "HEE"):
        for _ in range(spec.effective_layers):
            gates.extend(Gate("RX", (j,), param=j) for j in range(n))
            if spec.kind == "HEE":
                # applied in ladder order, so a CNOT chain spreads across the register within one layer
                gates.extend(Gate(spec.entangler, (j, j + 1)) for j in range(n - 1))
        return CircuitSpec(n, gates, n), lambda x: x

    pairs = list(combinations(range(n), 2))
    for _ in range(spec.layers):
        gates.extend(Gate("H", (j,)) for j in range(n))
        # RZ(2x) == exp(-i x Z)
        gates.extend(Gate("RZ", (j,), param=j) for j in range(n))
        gates.extend(Gate("ZZ", (j, k), param=n + p) for p, (j, k) in enumerate(pairs))

    def angles(x):
        x = np.asarray(x, dtype=float)
        if not pairs:
            return 2.0 * x
        prods = np.stack([x[..., j] * x[..., k] for j, k in pairs], axis=-1)
        return np.concatenate([2.0 * x, prods], axis=-1)

    return CircuitSpec(n, gates, n + len(pairs)), angles


def _check_features(spec: EmbeddingSpec, features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.shape[-1:] != (spec.n_qubits,):
        raise ArityError(f"expected {spec.n_qubits} features, got shape {x.shape}")
    return x


def build_embedding(spec: EmbeddingSpec, features) -> CircuitSpec:
    """Gate list of V(x) for a single feature vector, every angle bound."""
    x = _check_features(spec, features)
    if x.ndim != 1:
        raise ArityError("build_embedding takes a single feature vector")
    template, angles = _template(spec)
    bound = angles(x)
    gates = [
        Gate(g.kind, g.targets, angle=float(bound[g.param])) if g.param is not None else g
        for g in template.gates
    ]
    return CircuitSpec(spec.n_qubits, gates)


def embed_state(spec: EmbeddingSpec, features) -> Statevector:
    """V(x)|0...0> for one feature vector or a batch of shape ``(..., n)``."""
    x = _check_features(spec, features)
    template, angles = _template(spec)
    return apply_circuit(zero_state(spec.n_qubits), template, angles(x))


class QuantumEmbedding(TransformerMixin, BaseEstimator):
    """Maps feature rows to embedded statevector amplitudes, shape ``(N, 2**n)``."""

    def __init__(self, kind="TPE", layers=1, entangler="CNOT"):
        self.kind = kind
        self.layers = layers
        self.entangler = entangler

    def fit(self, X, y=None):
        X = check_array(X)
        self.spec_ = EmbeddingSpec(self.kind, X.shape[1], self.layers, self.entangler)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = check_array(X)
        return embed_state(self.spec_, X).amplitudes
