"""Scikit-learn style front end for the conversion pipeline.

``SpikingConverter.fit`` profiles the source network on calibration data,
solves per-insertion-point firing thresholds (fixed-point iteration for
ReLU points, percentile statistics elsewhere), and builds the spiking
graph. ``transform`` returns decoded outputs after ``timesteps`` steps;
``predict`` takes the argmax for classifier heads.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import graph as G
from . import simulate as sim
from .converter import ConversionError, convert, insertion_points
from .solver import SolverConfig, iterate_threshold, quant_levels_for


def check_samples(X, input_shape) -> np.ndarray:
    """Validate calibration/inference samples against the graph input shape.

    Accepts (n, *shape) arrays or (n, prod(shape)) matrices (rows are
    flattened samples); returns float64 (n, *shape) with finite entries.
    """
    shape = tuple(int(s) for s in input_shape)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1 and X.shape[0] == int(np.prod(shape)):
        X = X[None, :]
    if X.ndim == 2 and X.shape[1:] != shape and X.shape[1] == int(np.prod(shape)):
        X = X.reshape((-1,) + shape)
    if X.ndim != 1 + len(shape) or X.shape[1:] != shape:
        raise ValueError(f"samples do not match input shape {shape}: got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("samples contain NaN or Inf")
    if X.shape[0] == 0:
        raise ValueError("empty sample set")
    return X


class SpikingConverter(BaseEstimator, TransformerMixin):
    """Convert a trained network into a spiking one and run it like a model.

    Parameters mirror the CLI: ``n_thresholds`` positive thresholds per
    neuron, ``timesteps`` simulation length, ``mode`` differential or rate
    coding, ``threshold_method`` "auto" (iteration at ReLU points,
    percentile elsewhere) or "percentile" everywhere, and the solver /
    percentile knobs. ``quant_levels`` defaults to 2**n_thresholds *
    timesteps.
    """

    def __init__(
        self,
        model=None,
        n_thresholds: int = 4,
        timesteps: int = 32,
        mode: str = "differential",
        firing_rule: str = "argmin",
        threshold_method: str = "auto",
        percentile_p: float = 0.999,
        scale_c: float = 4.0,
        quant_levels: int | None = None,
        eps: float = 1e-6,
        theta0: float = 1.0,
        max_iters: int = 500,
        per_channel: bool = False,
    ):
        self.model = model
        self.n_thresholds = n_thresholds
        self.timesteps = timesteps
        self.mode = mode
        self.firing_rule = firing_rule
        self.threshold_method = threshold_method
        self.percentile_p = percentile_p
        self.scale_c = scale_c
        self.quant_levels = quant_levels
        self.eps = eps
        self.theta0 = theta0
        self.max_iters = max_iters
        self.per_channel = per_channel

    def _graph(self) -> G.AnnGraph:
        if isinstance(self.model, G.AnnGraph):
            return self.model
        if isinstance(self.model, (str,)) or hasattr(self.model, "__fspath__"):
            return G.load_model(self.model)
        raise ValueError("model must be an AnnGraph or a manifest path")

    def fit(self, X, y=None):
        graph = self._graph()
        if len(graph.inputs) != 1:
            raise ValueError("the estimator front end supports single-input graphs")
        shape = graph.input_shapes()[graph.inputs[0]]
        X = check_samples(X, shape)
        if self.threshold_method not in ("auto", "percentile"):
            raise ValueError("threshold_method must be 'auto' or 'percentile'")

        thresholds, report = calibrate_thresholds(
            graph,
            X,
            method=self.threshold_method,
            n_thresholds=self.n_thresholds,
            timesteps=self.timesteps,
            quant_levels=self.quant_levels,
            eps=self.eps,
            theta0=self.theta0,
            max_iters=self.max_iters,
            percentile_p=self.percentile_p,
            scale_c=self.scale_c,
            per_channel=self.per_channel,
        )
        self.graph_ = graph
        self.input_shape_ = shape
        self.calibration_ = report
        self.snn_ = convert(graph, thresholds, mode=self.mode, n=self.n_thresholds)
        self.n_features_in_ = int(np.prod(shape))
        return self

    def _require_fitted(self):
        if not hasattr(self, "snn_"):
            raise NotFittedError("SpikingConverter is not fitted; call fit first")

    def transform(self, X) -> np.ndarray:
        """Decoded primary-output activations r[T] for each sample."""
        self._require_fitted()
        X = check_samples(X, self.input_shape_)
        outs = []
        for sample in X:
            trace = sim.run(self.snn_, sample, self.timesteps, firing_rule=self.firing_rule)
            outs.append(trace.decoded[-1])
        return np.stack(outs)

    def predict(self, X) -> np.ndarray:
        """Argmax readout of the decoded output."""
        decoded = self.transform(X)
        return np.argmax(decoded.reshape(decoded.shape[0], -1), axis=1)

    def trace(self, x, timesteps: int | None = None, **kwargs) -> sim.SimulationTrace:
        """Full simulation trace for one sample."""
        self._require_fitted()
        sample = check_samples(x, self.input_shape_)[0]
        return sim.run(
            self.snn_,
            sample,
            timesteps or self.timesteps,
            firing_rule=kwargs.pop("firing_rule", self.firing_rule),
            **kwargs,
        )


def calibrate_thresholds(
    graph: G.AnnGraph,
    X,
    method: str = "auto",
    n_thresholds: int = 4,
    timesteps: int = 32,
    quant_levels: int | None = None,
    eps: float = 1e-6,
    theta0: float = 1.0,
    max_iters: int = 500,
    percentile_p: float = 0.999,
    scale_c: float = 4.0,
    per_channel: bool = False,
):
    """Per-insertion-point thresholds plus a JSON-ready calibration report.

    ReLU insertion points use the Gaussian fixed-point iteration (refused
    elsewhere: non-ReLU activations do not follow the clipped-ReLU error
    model, so those points take the percentile path).
    """
    points = insertion_points(graph)
    if not points:
        raise ConversionError("graph has no spiking-neuron insertion points")
    N = quant_levels if quant_levels is not None else quant_levels_for(n_thresholds, timesteps)
    cfg = SolverConfig(quant_levels=int(N), eps=eps, max_iters=max_iters, theta0=theta0)

    use_iteration = {
        src for src, kind in points.items() if kind == "iteration" and method == "auto"
    }
    relu_stats = G.collect_relu_stats(graph, X) if use_iteration else {}
    percentiles = G.collect_percentile_thresholds(graph, X, p=percentile_p, c=scale_c, per_channel=per_channel)

    thresholds = {}
    report_points = {}
    for src in sorted(points):
        if src in use_iteration:
            stats = relu_stats[src]
            sols = [iterate_threshold(m, s, cfg) for m, s in zip(stats.mean, stats.std)]
            theta = np.array([s.theta for s in sols])
            if theta.size == 1:
                theta = float(theta[0])
            thresholds[src] = {"theta": theta, "method": "iteration"}
            report_points[src] = {
                "method": "iteration",
                "theta": theta.tolist() if isinstance(theta, np.ndarray) else theta,
                "mu": stats.mean.tolist(),
                "sigma": stats.std.tolist(),
                "count": stats.count,
                "iterations": [s.iterations for s in sols],
                "k1_final": [s.k1_final for s in sols],
            }
        else:
            theta = percentiles[src]
            if isinstance(theta, np.ndarray):
                theta = theta.copy()
            thresholds[src] = {"theta": theta, "method": "percentile"}
            report_points[src] = {
                "method": "percentile",
                "theta": theta.tolist() if isinstance(theta, np.ndarray) else theta,
                "p": percentile_p,
                "c": scale_c,
            }
    report = {
        "schema": "spikewire-calibration-v1",
        "quant_levels": int(N),
        "eps": eps,
        "theta0": theta0,
        "max_iters": max_iters,
        "n_thresholds": int(n_thresholds),
        "timesteps": int(timesteps),
        "percentile_p": percentile_p,
        "scale_c": scale_c,
        "per_channel": bool(per_channel),
        "points": report_points,
    }
    return thresholds, report


def thresholds_from_report(report: dict) -> dict:
    """Recover the converter's threshold map from a calibration report."""
    out = {}
    for src, rec in report["points"].items():
        theta = rec["theta"]
        if isinstance(theta, list):
            theta = np.asarray(theta, dtype=np.float64)
        out[src] = {"theta": theta, "method": rec["method"]}
    return out
