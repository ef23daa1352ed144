import warnings

import numpy as np
import pytest

from qmlplateau.analysis import (
    FitError,
    SweepConfig,
    decay_fit,
    fi_concentration_check,
    fi_from_gradients,
    fi_matrix,
    fi_spectrum_sweep,
    gradient_samples,
    hs_sweep,
    hs_to_mixed,
    loss_derivatives,
    middle_pair,
    multi_loss_sweep,
    paired_entangled_state,
    proposition1_check,
    resolve_indices,
    theorem1_check,
    variance_standard_error,
    variance_sweep,
)
from qmlplateau.datasets import Dataset, random_dataset
from qmlplateau.embeddings import EmbeddingSpec, embed_state
from qmlplateau.losses import LossKind, MeasurementSpec
from qmlplateau.qnn import QnnSpec, build_qnn, expectation_values, init_params
from qmlplateau.sim import SizeError, zero_state


class TestSweepConfig:
    def test_defaults(self):
        cfg = SweepConfig((2, 3))
        assert cfg.n_points(3) == 30 and cfg.loss_kind.kind == "NLL"

    @pytest.mark.parametrize(
        "kw",
        [
            {"qubit_range": ()},
            {"qubit_range": (3, 2)},
            {"qubit_range": (2,), "param_samples": 1},
            {"qubit_range": (2,), "dataset_rule": "nope"},
            {"qubit_range": (2,), "grad_index": "some"},
            {"qubit_range": (2,), "grad_index": -1},
            {"qubit_range": (2,), "threads": 0},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SweepConfig(**kw)

    def test_too_large(self):
        with pytest.raises(SizeError):
            SweepConfig((4, 40))

    def test_first_measured_index(self):
        circ = build_qnn(QnnSpec("TensorRY", 6))
        meas = MeasurementSpec.for_output("LocalParity2", circ.output_qubits)
        assert resolve_indices(SweepConfig((6,), grad_index="first-measured"), circ, meas) == [2]
        circ = build_qnn(QnnSpec("QCNN", 6))
        meas = MeasurementSpec.for_output("LocalParity2", circ.output_qubits)
        assert resolve_indices(SweepConfig((6,), grad_index="first-measured"), circ, meas) == [0]

    def test_index_out_of_range(self):
        circ = build_qnn(QnnSpec("TensorRY", 3))
        meas = MeasurementSpec("GlobalParity", range(3))
        with pytest.raises(IndexError):
            resolve_indices(SweepConfig((3,), grad_index=3), circ, meas)


class TestVarianceSweep:
    def test_zero_variance_without_dependence(self):
        # an RY on a qubit that is never measured leaves every prediction constant
        cfg = SweepConfig((4,), measurement="LocalParity2", grad_index=0, param_samples=20, loss_kind="MSE")
        rec = variance_sweep(cfg).records[0]
        assert rec.variance < 1e-28 and abs(rec.mean) < 1e-14

    def test_unbiased_variance_cross_check(self):
        cfg = SweepConfig((3,), param_samples=50, seed=4, loss_kind="MSE")
        rec = variance_sweep(cfg).records[0]
        samples = gradient_samples(cfg, 3)
        d = loss_derivatives(samples, LossKind("MSE"))[:, 0]
        np.testing.assert_allclose(rec.variance, np.sum((d - d.mean()) ** 2) / (d.size - 1))
        assert rec.samples == 50 and rec.n_points == 30

    def test_seed_determinism(self):
        cfg = SweepConfig((2, 3), param_samples=10, seed=9)
        assert variance_sweep(cfg).variances.tolist() == variance_sweep(cfg).variances.tolist()

    def test_thread_invariance(self):
        one = SweepConfig((4,), param_samples=40, embedding="HEE", qnn="QCNN", measurement="LocalParity2")
        four = SweepConfig(**{**one.__dict__, "threads": 4})
        np.testing.assert_array_equal(variance_sweep(one).variances, variance_sweep(four).variances)

    def test_shared_draws_across_losses(self):
        cfg = SweepConfig((2,), param_samples=20)
        reports = multi_loss_sweep(cfg, ["MSE", "NLL", "Linear"])
        assert set(reports) == {"MSE", "NLL", "Linear"}
        # linear loss derivative is -(1/2N) sum y_i dtilde_y_i; MSE differs, so variances differ
        assert reports["MSE"].variances[0] != reports["Linear"].variances[0]

    def test_variance_standard_error_gaussian(self, rng):
        x = rng.normal(size=4000)
        np.testing.assert_allclose(variance_standard_error(x), np.sqrt(2 / 3999), rtol=0.1)

    def test_single_point_not_below_dataset(self):
        # averaging over N points can only shrink the derivative spread on average
        ratios = []
        for seed in range(10):
            cfg = SweepConfig((4,), param_samples=60, seed=seed, loss_kind="MSE")
            whole = variance_sweep(cfg).variances[0]
            single = variance_sweep(SweepConfig(**{**cfg.__dict__, "single_point": True})).variances[0]
            ratios.append(single / whole)
        assert np.mean(ratios) >= 1.0


class TestBoundCheck:
    def test_bound_holds_small(self):
        for rec in theorem1_check(SweepConfig((2, 3), param_samples=300, seed=2)):
            assert rec.holds, rec


class TestFisher:
    def setup_problem(self, rng, n=3, points=5):
        spec = QnnSpec("TensorRY", n)
        ds = random_dataset(n, points, 7)
        meas = MeasurementSpec("GlobalParity", range(n))
        return ds, EmbeddingSpec("TPE", n), spec, meas, init_params(spec, rng)

    def test_psd_and_trace(self, rng):
        ds, emb, spec, meas, theta = self.setup_problem(rng)
        fi = fi_matrix(ds, emb, spec, theta, meas)
        assert np.all(fi.eigenvalues >= -1e-12)
        np.testing.assert_allclose(fi.trace, fi.eigenvalues.sum(), atol=1e-12)
        np.testing.assert_allclose(fi.entries, fi.entries.T)

    def test_trace_direct_sum(self, rng):
        ds, emb, spec, meas, theta = self.setup_problem(rng)
        fi = fi_matrix(ds, emb, spec, theta, meas)
        circ = build_qnn(spec)
        states = embed_state(emb, ds.features).amplitudes
        diag = meas.diagonal(spec.n_qubits)

        def logp(p):
            y = expectation_values(circ, states, p, diag)
            return np.log((1 + ds.labels * y) / 2)

        h = 1e-6
        total = 0.0
        for k in range(theta.size):
            d = np.zeros_like(theta)
            d[k] = h
            total += np.sum(((logp(theta + d) - logp(theta - d)) / (2 * h)) ** 2)
        np.testing.assert_allclose(fi.trace, total / len(ds), rtol=1e-6)

    def test_rank_at_most_points(self, rng):
        grads = rng.normal(size=(3, 8))
        fi = fi_from_gradients(grads)
        assert np.sum(fi.eigenvalues > 1e-10) == 3

    def test_empty(self):
        with pytest.raises(ValueError):
            fi_from_gradients(np.zeros((0, 3)))

    def test_spectrum_sweep(self):
        recs = fi_spectrum_sweep(SweepConfig((2, 3), param_samples=5))
        assert [r.n for r in recs] == [2, 3]
        assert all(r.eigenvalues.size == 5 * r.n for r in recs)
        assert all(r.mean_trace > 0 for r in recs)

    def test_concentration_tail_below_chebyshev(self):
        rep = fi_concentration_check(200, 3, SweepConfig((3,)))
        assert rep.chebyshev_bound == pytest.approx(1 / 9)
        assert rep.tail_frequency <= 1 / 9 and rep.consistent

    def test_concentration_needs_instances(self):
        with pytest.raises(ValueError):
            fi_concentration_check(50, 3, SweepConfig((3,)))


class TestMixedness:
    def test_middle_pair(self):
        assert middle_pair(2) == (0, 1) and middle_pair(7) == (2, 3)
        with pytest.raises(ValueError):
            middle_pair(1)

    def test_tpe_product_states_are_pure(self):
        for rec in hs_sweep(SweepConfig((2, 4, 6)), points=50):
            np.testing.assert_allclose(rec.mean_distance, 0.75, atol=1e-12)

    def test_two_qubits_always_pure(self):
        rec = hs_sweep(SweepConfig((2,), embedding="HEE", embedding_layers=3), points=50)[0]
        np.testing.assert_allclose(rec.mean_distance, 0.75, atol=1e-12)

    def test_chunking_does_not_matter(self):
        cfg = SweepConfig((5,), embedding="CHE")
        a = hs_sweep(cfg, points=70, chunk=500)[0].mean_distance
        b = hs_sweep(cfg, points=70, chunk=9)[0].mean_distance
        np.testing.assert_allclose(a, b, atol=1e-14)


class TestLocalCostCheck:
    def test_paired_state_extremes(self):
        np.testing.assert_allclose(hs_to_mixed(paired_entangled_state(4, 2, 0.0), (0, 1)), 0.75)
        np.testing.assert_allclose(hs_to_mixed(paired_entangled_state(4, 2, np.pi / 4), (0, 1)), 0, atol=1e-14)

    def test_zero_state_and_maximal_entanglement(self):
        rep = proposition1_check(2, 2, [zero_state(4), paired_entangled_state(4, 2, np.pi / 4)], trials=1000)
        pure, mixed = rep.records
        assert pure.hs_distance == pytest.approx(0.75)
        assert pure.variance > 0
        assert mixed.variance == pytest.approx(0, abs=1e-12)
        assert rep.r_squared == pytest.approx(1.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            proposition1_check(0, 2, [])
        with pytest.raises(ValueError):
            proposition1_check(2, 2, [zero_state(4)], trials=10)
        with pytest.raises(ValueError):
            proposition1_check(2, 2, [zero_state(5)], trials=1000)
        with pytest.raises(SizeError):
            proposition1_check(4, 3, [], trials=1000)


class TestDecayFit:
    def test_power_of_two(self):
        n = np.arange(2, 10)
        fit = decay_fit(n, 2.0**-n)
        assert fit.alpha_estimate == pytest.approx(2.0)
        assert fit.r_squared == pytest.approx(1.0)

    def test_constant(self):
        fit = decay_fit([2, 3, 4], [0.3, 0.3, 0.3])
        assert fit.alpha_estimate == 1.0 and fit.slope == 0

    def test_too_few_points(self):
        with pytest.raises(FitError):
            decay_fit([2, 3], [0.1, 0.05])

    def test_nonpositive_dropped_with_warning(self):
        with pytest.warns(RuntimeWarning):
            fit = decay_fit([2, 3, 4, 5], [0.4, 0.2, 0.0, 0.05])
        assert fit.alpha_estimate > 1

    def test_report_input(self):
        rep = variance_sweep(SweepConfig((2, 3, 4), param_samples=30))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            fit = decay_fit(rep)
        assert np.isfinite(fit.slope)

    def test_dataset_with_custom_points(self):
        ds = Dataset(np.zeros((4, 3)), [1, -1, 1, -1])
        samples = gradient_samples(SweepConfig((3,), param_samples=5), 3, ds)
        assert samples.tilde_y.shape == (5, 4)
