"""Estimator front end: sklearn conventions and end-to-end behavior."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from spikewire import forward
from spikewire.estimator import SpikingConverter, check_samples
from spikewire.toys import make_gaussian_dataset, make_mlp


@pytest.fixture()
def mlp_and_data():
    graph = make_mlp((8, 6, 4), seed=0)
    X = make_gaussian_dataset(40, (8,), seed=1)
    return graph, X


class TestSklearnConventions:
    def test_get_set_params_and_clone(self, mlp_and_data):
        graph, _ = mlp_and_data
        est = SpikingConverter(model=graph, n_thresholds=3, timesteps=16)
        params = est.get_params()
        assert params["n_thresholds"] == 3 and params["timesteps"] == 16
        est2 = clone(est)
        assert est2.get_params()["n_thresholds"] == 3
        est.set_params(timesteps=8)
        assert est.timesteps == 8

    def test_not_fitted(self, mlp_and_data):
        graph, X = mlp_and_data
        est = SpikingConverter(model=graph)
        with pytest.raises(NotFittedError):
            est.transform(X)

    def test_fit_returns_self(self, mlp_and_data):
        graph, X = mlp_and_data
        est = SpikingConverter(model=graph, timesteps=8, n_thresholds=2, scale_c=1.0)
        assert est.fit(X) is est
        assert hasattr(est, "snn_") and hasattr(est, "calibration_")


class TestValidation:
    def test_check_samples_reshapes_flat_rows(self):
        X = check_samples(np.zeros((5, 12)), (3, 4))
        assert X.shape == (5, 3, 4)

    def test_check_samples_rejects_bad_width(self):
        with pytest.raises(ValueError):
            check_samples(np.zeros((5, 11)), (3, 4))

    def test_check_samples_rejects_nan(self):
        with pytest.raises(ValueError):
            check_samples(np.full((2, 4), np.nan), (4,))

    def test_check_samples_rejects_empty(self):
        with pytest.raises(ValueError):
            check_samples(np.zeros((0, 4)), (4,))


class TestEndToEnd:
    def test_transform_tracks_reference(self, mlp_and_data):
        graph, X = mlp_and_data
        est = SpikingConverter(model=graph, n_thresholds=4, timesteps=64, scale_c=1.0)
        est.fit(X)
        decoded = est.transform(X[:8])
        refs = np.stack([forward(graph, x)[graph.outputs[0]] for x in X[:8]])
        assert decoded.shape == refs.shape
        assert np.median(np.max(np.abs(decoded - refs), axis=1)) < 0.02

    def test_predict_matches_reference_argmax(self, mlp_and_data):
        graph, X = mlp_and_data
        est = SpikingConverter(model=graph, n_thresholds=4, timesteps=64, scale_c=1.0)
        est.fit(X)
        preds = est.predict(X[:12])
        refs = np.stack([forward(graph, x)[graph.outputs[0]] for x in X[:12]])
        agree = np.mean(preds == np.argmax(refs, axis=1))
        assert agree >= 0.9

    def test_calibration_report_shape(self, mlp_and_data):
        graph, X = mlp_and_data
        est = SpikingConverter(model=graph, timesteps=16, n_thresholds=2)
        est.fit(X)
        points = est.calibration_["points"]
        assert points["relu1"]["method"] == "iteration"
        assert points["in"]["method"] == "percentile"
        assert abs(points["relu1"]["k1_final"][0] - 1.0) < 1e-6

    def test_percentile_only_method(self, mlp_and_data):
        graph, X = mlp_and_data
        est = SpikingConverter(model=graph, timesteps=8, threshold_method="percentile")
        est.fit(X)
        methods = {rec["method"] for rec in est.calibration_["points"].values()}
        assert methods == {"percentile"}

    def test_model_path_loading(self, mlp_and_data, tmp_path):
        from spikewire.graph import save_model

        graph, X = mlp_and_data
        path = tmp_path / "model.json"
        save_model(graph, path)
        est = SpikingConverter(model=str(path), timesteps=8, n_thresholds=2)
        est.fit(X)
        assert est.transform(X[:2]).shape == (2, 4)

    def test_trace_access(self, mlp_and_data):
        graph, X = mlp_and_data
        est = SpikingConverter(model=graph, timesteps=8, n_thresholds=2, scale_c=1.0)
        est.fit(X)
        tr = est.trace(X[0])
        assert tr.timesteps == 8 and tr.spike_total > 0


class TestCnnChannelwise:
    def test_conv_relu_conv_uses_channelwise_iteration(self):
        from spikewire.toys import make_cnn

        graph = make_cnn(seed=0)
        X = make_gaussian_dataset(16, (1, 8, 8), seed=2)
        est = SpikingConverter(model=graph, n_thresholds=3, timesteps=32, scale_c=1.0)
        est.fit(X)
        rec = est.calibration_["points"]["relu1"]
        assert rec["method"] == "iteration"
        assert len(rec["theta"]) == 4  # one threshold per conv channel
        neuron = est.snn_.nodes["relu1.spike"]
        assert np.asarray(neuron.params["theta"]).shape == (4,)
        decoded = est.transform(X[:4])
        refs = np.stack([forward(graph, x)[graph.outputs[0]] for x in X[:4]])
        assert np.max(np.abs(decoded - refs)) < 0.2

    def test_channelwise_normalization_runs(self):
        from spikewire.converter import normalize_weights
        from spikewire.simulate import run
        from spikewire.toys import make_cnn

        graph = make_cnn(seed=1)
        X = make_gaussian_dataset(12, (1, 8, 8), seed=3)
        est = SpikingConverter(model=graph, n_thresholds=3, timesteps=32, scale_c=1.0)
        est.fit(X)
        normed = normalize_weights(est.snn_)
        x = X[0]
        a = run(est.snn_, x, 32).decoded[-1]
        b = run(normed, x, 32, firing_rule="hw").decoded[-1]
        np.testing.assert_allclose(a, b, atol=1e-9)
