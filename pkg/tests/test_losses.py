import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmlplateau.embeddings import EmbeddingSpec, embed_state
from qmlplateau.losses import (
    LossKind,
    MeasurementSpec,
    empirical_distribution,
    label_probability,
    linear_values,
    local_projector_cost,
    loss,
    loss_weights,
    predicted_label,
    theorem1_rhs,
)
from qmlplateau.qnn import QnnOutput, QnnSpec, build_qnn, expectation_values, init_params, shift_gradients
from qmlplateau.sim import CircuitSpec, Gate, Statevector, apply_circuit, zero_state


def basis(n, index):
    return Statevector(n, np.eye(1 << n)[index])


class TestMeasurement:
    def test_all_zero_global(self):
        assert predicted_label(QnnOutput(zero_state(3), (0, 1, 2)), MeasurementSpec("GlobalParity", (0, 1, 2))) == 1

    def test_single_flip_global(self):
        assert predicted_label(QnnOutput(basis(3, 1), (0, 1, 2)), MeasurementSpec("GlobalParity", (0, 1, 2))) == -1

    def test_bell_local_parity(self):
        amps = np.zeros(8)
        amps[0] = amps[0b101] = 2**-0.5
        out = QnnOutput(Statevector(3, amps), (0, 2))
        np.testing.assert_allclose(predicted_label(out, MeasurementSpec("LocalParity2", (0, 2))), 1.0)

    def test_targets_outside_outputs(self):
        with pytest.raises(ValueError):
            predicted_label(QnnOutput(zero_state(3), (0, 2)), MeasurementSpec("LocalParity2", (0, 1)))

    def test_local_parity_targets_middle_pair(self):
        assert MeasurementSpec.for_output("LocalParity2", range(8)).target_qubits == (3, 4)
        assert MeasurementSpec.for_output("LocalParity2", range(5)).target_qubits == (1, 2)

    def test_local_parity_needs_two(self):
        with pytest.raises(ValueError):
            MeasurementSpec("LocalParity2", (0, 1, 2))


class TestLabelProbability:
    def test_examples(self):
        assert label_probability(1.0, 1) == 1
        assert label_probability(0.0, -1) == 0.5
        np.testing.assert_allclose(label_probability(-0.6, 1), 0.2)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            label_probability(0.3, 0)

    @settings(max_examples=200)
    @given(st.floats(-1, 1))
    def test_completeness(self, y):
        assert label_probability(y, 1) + label_probability(y, -1) == 1.0

    @settings(max_examples=200)
    @given(st.floats(-1, 1))
    def test_prediction_is_probability_difference(self, y):
        assert abs(label_probability(y, 1) - label_probability(y, -1) - y) < 1e-15


class TestLocalProjectorCost:
    def test_zero_state(self):
        assert local_projector_cost(zero_state(4)) == 0

    def test_all_ones(self):
        np.testing.assert_allclose(local_projector_cost(basis(3, 7)), 1.0)

    def test_product_closed_form(self):
        theta = 0.9
        circ = CircuitSpec(3, [Gate("RY", (j,), angle=theta) for j in range(3)])
        cost = local_projector_cost(apply_circuit(zero_state(3), circ))
        np.testing.assert_allclose(cost, 1 - np.cos(theta / 2) ** 2, atol=1e-12)


class TestLoss:
    def test_mse_perfect(self):
        assert loss([1.0, -1.0], [1, -1], LossKind("MSE")).loss == 0

    def test_nll_certain(self):
        assert loss([1.0, -1.0, 1.0], [1, -1, 1], LossKind("NLL")).loss == 0

    def test_nll_half(self):
        np.testing.assert_allclose(loss([0.0], [1], LossKind("NLL")).loss, np.log(2))

    def test_nll_clipped_not_infinite(self):
        ev = loss([-1.0], [1], LossKind("NLL", 1e-6))
        np.testing.assert_allclose(ev.loss, -np.log(1e-6))
        assert ev.per_point_prob[0] == 1e-6

    def test_linear_is_mean_probability(self):
        np.testing.assert_allclose(loss([0.2, -0.4], [1, -1], LossKind("Linear")).loss, (0.6 + 0.7) / 2)

    def test_g_values(self):
        mse = loss([0.1, 0.2], [1, -1], LossKind("MSE"))
        np.testing.assert_allclose(mse.per_point_g, np.sqrt(2) * 4)
        nll = loss([0.1], [1], LossKind("NLL", 1e-3))
        np.testing.assert_allclose(nll.per_point_g, np.sqrt(2) * 1e3)

    def test_empty(self):
        with pytest.raises(ValueError):
            loss([], [], LossKind("MSE"))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            loss([0.1, 0.2], [1], LossKind("MSE"))

    def test_generalized_mse(self):
        pred = np.array([[0.1, 0.2], [0.3, -0.5]])
        target = np.array([[0.0, 0.0], [1.0, -1.0]])
        ev = loss(pred, target, LossKind("GenMSE"))
        np.testing.assert_allclose(ev.loss, np.mean(np.sum((pred - target) ** 2, axis=1)))

    @pytest.mark.parametrize("kind", ["KL", "ReverseKL"])
    def test_divergence_of_identical_distributions(self, kind, rng):
        p = rng.dirichlet(np.ones(8))
        assert abs(loss(p, p, LossKind(kind, 1e-12)).loss) < 1e-14

    @pytest.mark.parametrize("kind", ["KL", "ReverseKL"])
    def test_divergence_nonnegative(self, kind, rng):
        p, q = rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8))
        assert loss(p, q, LossKind(kind, 1e-12)).loss > 0

    def test_empirical_distribution(self):
        np.testing.assert_allclose(empirical_distribution([0, 3, 3, 1], 2), [0.25, 0.25, 0, 0.5])

    def test_bad_clip_floor(self):
        with pytest.raises(ValueError):
            LossKind("NLL", 0.0)


class TestChainRule:
    @pytest.mark.parametrize("kind", ["Linear", "MSE", "NLL"])
    def test_weights_match_shifted_loss(self, kind, rng):
        n, npts = 4, 6
        spec = QnnSpec("QCNN", n)
        circ = build_qnn(spec)
        states = embed_state(EmbeddingSpec("HEE", n), rng.uniform(-np.pi, np.pi, (npts, n))).amplitudes
        labels = rng.choice([-1, 1], npts)
        diag = MeasurementSpec.for_output("GlobalParity", circ.output_qubits).diagonal(n)
        lk = LossKind(kind)
        theta = init_params(spec, rng)
        values, grads = shift_gradients(circ, states, theta, diag)
        chain = loss_weights(values, labels, lk) @ grads

        def total(p):
            return loss(expectation_values(circ, states, p, diag), labels, lk).loss

        # the composed loss is no trigonometric polynomial, so the oracle is a central difference
        h = 1e-6
        numeric = np.empty_like(chain)
        for k in range(theta.size):
            plus, minus = theta.copy(), theta.copy()
            plus[k] += h
            minus[k] -= h
            numeric[k] = (total(plus) - total(minus)) / (2 * h)
        np.testing.assert_allclose(chain, numeric, atol=1e-8)

    def test_mse_chain_rule_formula(self, rng):
        evals = rng.uniform(-1, 1, 5)
        labels = rng.choice([-1, 1], 5)
        np.testing.assert_allclose(loss_weights(evals, labels, LossKind("MSE")), 2 * (evals - labels) / 5)

    def test_linear_values(self):
        l, dl = linear_values([0.2], [-1], LossKind("NLL"))
        np.testing.assert_allclose(l, [0.4])
        np.testing.assert_allclose(dl, [-0.5])


class TestBoundRhs:
    def test_zero(self):
        assert theorem1_rhs(np.zeros(3), np.zeros(3), np.ones(3)) == 0

    def test_single_point(self):
        np.testing.assert_allclose(theorem1_rhs([0.25], [0.0], [np.sqrt(2)], 1), 0.5)

    def test_negative_variance(self):
        with pytest.raises(ValueError):
            theorem1_rhs([-0.1], [0.0], [1.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            theorem1_rhs([0.1, 0.2], [0.0], [1.0])

    def test_bounds_sampled_variance(self, rng):
        """Monte-Carlo: TPE + TensorRY + global parity, n=4, both losses."""
        n, npts, draws = 4, 8, 2000
        spec = QnnSpec("TensorRY", n)
        circ = build_qnn(spec)
        states = embed_state(EmbeddingSpec("TPE", n), rng.uniform(-np.pi, np.pi, (npts, n))).amplitudes
        labels = rng.choice([-1, 1], npts)
        diag = MeasurementSpec("GlobalParity", range(n)).diagonal(n)
        values, grads = shift_gradients(circ, states, init_params(spec, rng, draws), diag, [0])
        for kind in ("MSE", "NLL"):
            lk = LossKind(kind)
            d_total = np.einsum("sn,sn->s", loss_weights(values, labels, lk), grads[..., 0])
            _, dl = linear_values(values, labels, lk)
            d_point = dl * grads[..., 0]
            g = loss(values[0], labels, lk).per_point_g
            rhs = theorem1_rhs(d_point.var(0, ddof=1), d_point.mean(0), g)
            se = d_total.var(ddof=1) * np.sqrt(2 / (draws - 1))
            assert d_total.var(ddof=1) <= rhs + 3 * se


correlated = st.integers(0, 2**32 - 1).map(
    lambda s: np.random.default_rng(s).normal(size=(200, 4)) @ np.random.default_rng(s + 1).normal(size=(4, 4))
)


class TestVarianceInequalities:
    @settings(max_examples=100, deadline=None)
    @given(correlated)
    def test_variance_of_sum(self, x):
        assert np.var(x.sum(axis=1)) <= np.sum(np.sqrt(np.var(x, axis=0))) ** 2 * (1 + 1e-12)

    @settings(max_examples=100, deadline=None)
    @given(correlated)
    def test_variance_of_product(self, z):
        x, y = z[:, 0], np.tanh(z[:, 1] + 0.5 * z[:, 0])
        bound = 2 * np.var(x) * np.max(y**2) + 2 * np.mean(x) ** 2 * np.var(y)
        assert np.var(x * y) <= bound * (1 + 1e-12)
