"""Simulator: encoding, decoding identities, counting, energy, comparison."""

import itertools

import numpy as np
import pytest

from spikewire import converter as C
from spikewire import graph as G
from spikewire import simulate as sim
from spikewire.graph import AnnGraph, LayerNode
from spikewire.neurons import NeuronLayerState, ThresholdLadder, step_rate
from spikewire.toys import make_mlp


def identity_snn(theta=1.0, n=2, size=1, mode="differential"):
    nodes = [
        C.SnnNode(id="in", kind="Input", params={"shape": [size]}, inputs=[]),
        C.SnnNode(id="nrn", kind="DiffNeuron", params={"theta": theta, "n": n}, inputs=["in"]),
        C.SnnNode(id="out", kind="Output", params={}, inputs=["nrn"]),
    ]
    return C.SnnGraph(nodes={x.id: x for x in nodes}, inputs=["in"], outputs=["out"], mode=mode, n_thresholds=n)


class TestEncodeInput:
    def test_differential_impulse(self):
        enc = sim.encode_input(np.array([0.6]), 3, "differential")
        np.testing.assert_array_equal(np.concatenate(enc), [0.6, 0.0, 0.0])

    def test_zero(self):
        enc = sim.encode_input(np.zeros(2), 4, "differential")
        assert all(np.all(e == 0.0) for e in enc)

    def test_rate_repeats(self):
        enc = sim.encode_input(np.array([0.6]), 3, "rate")
        np.testing.assert_array_equal(np.concatenate(enc), [0.6, 0.6, 0.6])

    def test_bad_timesteps(self):
        with pytest.raises(ValueError):
            sim.encode_input(np.zeros(1), 0)


class TestRun:
    def test_single_neuron_trace(self):
        snn = identity_snn(theta=1.0, n=2)
        tr = sim.run(snn, np.array([0.6]), 5)
        assert float(tr.decoded[-1][0]) == 0.6
        assert tr.spike_total == 2

    def test_identity_network_decodes_input(self):
        g = AnnGraph.from_nodes(
            [
                LayerNode(id="in", kind="Input", params={"shape": [4]}),
                LayerNode(id="fc", kind="Linear", params={"weight": np.eye(4)}, inputs=["in"]),
            ]
        )
        snn = C.convert(g, {"in": 1.0}, n=4)
        x = np.array([0.5, -0.25, 0.125, 0.0])  # dyadic values encode exactly
        tr = sim.run(snn, x, 8)
        for t in range(8):
            np.testing.assert_allclose(tr.decoded[t], x, atol=1e-12)
        # dyadic inputs fire once at t=1; no kernel activity afterwards
        assert tr.ac_history[0] == tr.ac_history[-1] == tr.ac_total

    def test_decoding_identity_every_step(self):
        # r[t] = r[t-1] + x[t]/t holds bitwise along the trace
        g = make_mlp((6, 5, 3), seed=0)
        thr = {src: 2.0 for src in C.insertion_points(g)}
        snn = C.convert(g, thr, n=3)
        x = np.random.default_rng(1).standard_normal(6)
        tr = sim.run(snn, x, 16)
        fold = snn.nodes[snn.outputs[0]].params.get("fold")
        r = np.zeros(3) if fold is None else fold.copy()
        for t in range(1, 17):
            r = r + tr.stream[t - 1] / t
            np.testing.assert_array_equal(tr.decoded[t - 1], r)

    def test_two_layer_mlp_approaches_reference(self):
        g = make_mlp((8, 6, 4), seed=2)
        X = np.random.default_rng(3).standard_normal((30, 8))
        from spikewire.estimator import calibrate_thresholds

        thr, _ = calibrate_thresholds(g, X, n_thresholds=4, timesteps=64, scale_c=1.0)
        snn = C.convert(g, thr, n=4)
        errs = []
        for x in X[:10]:
            ref = G.forward(g, x)[g.outputs[0]]
            tr = sim.run(snn, x, 64)
            errs.append(np.max(np.abs(tr.decoded[-1] - ref)))
        assert np.median(errs) < 0.02

    def test_rate_mode_consistency(self):
        # single rate-coded layer: r_out[t] = r_in[t] - (v[t] - v[0]) / t
        theta, n, T = 1.0, 1, 24
        snn = identity_snn(theta=theta, n=n, size=8, mode="rate")
        rng = np.random.default_rng(4)
        x = rng.uniform(-0.9, 0.9, size=8)
        st = NeuronLayerState.create(ThresholdLadder(theta, n), (8,))
        r_in = np.zeros(8)
        r_out = np.zeros(8)
        for t in range(1, T + 1):
            out = step_rate(st, x)
            r_in = r_in + (x - r_in) / t
            r_out = r_out + (out - r_out) / t
            np.testing.assert_allclose(r_out, r_in - st.v / t, atol=1e-9)

    def test_counts_monotone(self):
        g = make_mlp((6, 5, 3), seed=5)
        thr = {src: 1.0 for src in C.insertion_points(g)}
        snn = C.convert(g, thr, n=2)
        tr = sim.run(snn, np.random.default_rng(6).standard_normal(6), 32)
        assert all(b >= a for a, b in zip(tr.spike_history, tr.spike_history[1:]))
        assert all(b >= a for a, b in zip(tr.ac_history, tr.ac_history[1:]))
        assert tr.ac_history[-1] == tr.ac_total

    def test_overflow_guard(self):
        snn = identity_snn(theta=1e-9, n=1)
        with pytest.raises(sim.SimulationOverflowError):
            sim.run(snn, np.array([10.0]), 8)

    def test_missing_input_rejected(self):
        snn = identity_snn()
        with pytest.raises(Exception):
            sim.run(snn, {"wrong": np.zeros(1)}, 4)


class TestRepresentationRange:
    def test_differential_set_contains_rate_set(self):
        # all 27 three-step emission patterns at theta=1, n=1
        patterns = list(itertools.product([-1.0, 0.0, 1.0], repeat=3))
        diff_set = set()
        rate_set = set()
        for pat in patterns:
            r = 0.0
            for t, x in enumerate(pat, start=1):
                r += x / t
            diff_set.add(round(r, 12))
            rate_set.add(round(sum(pat) / 3.0, 12))
        assert rate_set <= diff_set
        assert len(diff_set) > len(rate_set)
        want_rate = {round(v, 12) for v in np.arange(-3, 4) / 3.0}
        assert rate_set == want_rate

    def test_differential_beats_rate_single_neuron(self):
        x = 0.37
        T = 16
        diff = sim.run(identity_snn(1.0, 1), np.array([x]), T)
        rate = sim.run(identity_snn(1.0, 1, mode="rate"), np.array([x]), T)
        err_diff = abs(float(diff.decoded[-1][0]) - x)
        err_rate = abs(float(rate.decoded[-1][0]) - x)
        assert err_diff <= err_rate


class TestEnergy:
    def hand_toy(self):
        # 3 neurons with fan-out 4 through a dense kernel
        w = np.full((4, 3), 0.5)
        nodes = [
            C.SnnNode(id="in", kind="Input", params={"shape": [3]}, inputs=[]),
            C.SnnNode(id="nrn", kind="DiffNeuron", params={"theta": 1.0, "n": 1}, inputs=["in"]),
            C.SnnNode(id="fc", kind="LinearKernel", params={"weight": w}, inputs=["nrn"]),
            C.SnnNode(id="out", kind="Output", params={}, inputs=["fc"]),
        ]
        return C.SnnGraph(nodes={x.id: x for x in nodes}, inputs=["in"], outputs=["out"], mode="differential", n_thresholds=1)

    def test_hand_counted_acs(self):
        snn = self.hand_toy()
        # dyadic inputs: each neuron fires exactly once at t=1; silent after
        x = np.array([1.0, -1.0, 1.0])
        tr = sim.run(snn, x, 4)
        assert tr.spike_total == 3
        assert tr.ac_total == 3 * 4  # one spike per neuron, fan-out 4

    def test_seven_spikes_make_28_acs(self):
        snn = self.hand_toy()
        # 0.875 = 1/2 + 1/4 + 1/8: n=1 corrections fire repeatedly
        tr = sim.run(snn, np.array([0.875, 1.0, -1.0]), 16)
        assert tr.ac_total == tr.spike_total * 4

    def test_zero_spikes_zero_ratio(self):
        snn = self.hand_toy()
        tr = sim.run(snn, np.zeros(3), 8)
        rep = sim.energy_report(tr, ann_macs=12)
        assert rep["ratio"] == 0.0 and rep["snn_acs"] == 0

    def test_ratio_constants(self):
        snn = self.hand_toy()
        tr = sim.run(snn, np.array([1.0, -1.0, 1.0]), 4)
        rep = sim.energy_report(tr, ann_macs=12)
        assert rep["ratio"] == pytest.approx(12 * 0.9 / (12 * 4.6))
        assert rep["e_mac_pj"] == 4.6 and rep["e_ac_pj"] == 0.9

    def test_ann_mac_count(self):
        g = make_mlp((16, 8, 4), seed=0)
        macs = sim.count_ann_macs(g)
        assert macs["total"] == 16 * 8 + 8 * 4

    def test_conv_event_driven_counting(self):
        rng = np.random.default_rng(8)
        w = rng.standard_normal((2, 1, 3, 3))
        nodes = [
            C.SnnNode(id="in", kind="Input", params={"shape": [1, 4, 4]}, inputs=[]),
            C.SnnNode(id="nrn", kind="DiffNeuron", params={"theta": 1.0, "n": 1}, inputs=["in"]),
            C.SnnNode(
                id="conv",
                kind="ConvKernel",
                params={"weight": w, "stride": [1, 1], "pad": [0, 0]},
                inputs=["nrn"],
            ),
            C.SnnNode(id="out", kind="Output", params={}, inputs=["conv"]),
        ]
        snn = C.SnnGraph(nodes={x.id: x for x in nodes}, inputs=["in"], outputs=["out"], mode="differential", n_thresholds=1)
        x = np.zeros((1, 4, 4))
        x[0, 0, 0] = 1.0  # corner pixel joins exactly one 3x3 window
        tr = sim.run(snn, x, 1)
        assert tr.ac_total == 1 * 2  # one window x two output channels


class TestCompare:
    def test_identical(self):
        m = sim.compare(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        assert m["linf"] == 0.0 and m["l2"] == 0.0 and m["argmax_match"] is True

    def test_uniform_offset(self):
        m = sim.compare(np.array([1.5, 2.5]), np.array([1.0, 2.0]))
        assert m["linf"] == pytest.approx(0.5)

    def test_error_declines_with_t(self):
        g = make_mlp((8, 6, 4), seed=9)
        from spikewire.estimator import calibrate_thresholds

        X = np.random.default_rng(10).standard_normal((20, 8))
        thr, _ = calibrate_thresholds(g, X, n_thresholds=3, timesteps=32, scale_c=1.0)
        snn = C.convert(g, thr, n=3)
        meds = []
        for T in (2, 4, 8, 16, 32):
            errs = []
            for x in X:
                ref = G.forward(g, x)[g.outputs[0]]
                tr = sim.run(snn, x, T)
                errs.append(sim.compare(tr.decoded[-1], ref)["linf"])
            meds.append(np.median(errs))
        assert meds[-1] < meds[0]
        assert meds[-1] <= min(meds) + 1e-12 or meds == sorted(meds, reverse=True)
