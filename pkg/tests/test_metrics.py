import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_instance
from ilifnet.metrics import (
    E_AC_PJ,
    E_MAC_PJ,
    MetricsRecord,
    continuous_firing_rate,
    count_ac,
    count_mac,
    fanouts,
    firing_rates,
    metrics_record,
    sop_energy,
    spike_map,
    weight_norms,
)
from ilifnet.network import forward_sequence
from ilifnet.neuron import NeuronParams


class FakeTape:
    def __init__(self, spikes, inputs=None):
        self.spikes = np.asarray(spikes, dtype=float)
        self.inputs = inputs


def tapes_of(*arrays):
    return [FakeTape(a) for a in arrays]


class TestFiringRates:
    def test_extremes(self):
        assert firing_rates(tapes_of(np.zeros((3, 2, 4)))) == [0.0]
        assert firing_rates(tapes_of(np.ones((3, 2, 4)))) == [1.0]

    def test_direct_mean(self):
        s = np.array([[[1, 0]], [[0, 1]]])
        assert firing_rates(tapes_of(s)) == [0.5]

    def test_concatenates_runs(self):
        a, b = tapes_of(np.ones((2, 1, 2))), tapes_of(np.zeros((2, 3, 2)))
        assert firing_rates([a, b]) == [0.25]


class TestContinuousFiring:
    @pytest.mark.parametrize("n_spikes, counted", [(3, 1.0), (2, 0.0), (4, 1.0), (0, 0.0)])
    def test_strict_majority(self, n_spikes, counted):
        s = np.zeros((4, 1, 1))
        s[:n_spikes] = 1
        assert continuous_firing_rate(tapes_of(s)) == [counted]

    def test_share_of_neurons(self):
        s = np.zeros((4, 1, 4))
        s[:, 0, 0] = 1
        s[:3, 0, 1] = 1
        assert continuous_firing_rate(tapes_of(s)) == [0.5]


class TestEnergy:
    @pytest.mark.parametrize("ac, mac, pj", [(6, 0, 5.4), (0, 1, 4.6), (0, 0, 0.0)])
    def test_sop(self, ac, mac, pj):
        assert sop_energy(ac, mac) == pytest.approx(pj, abs=1e-12)

    def test_constants(self):
        assert (E_AC_PJ, E_MAC_PJ) == (0.9, 4.6)

    def test_negative_counts(self):
        with pytest.raises(ValueError):
            sop_energy(-1, 0)

    def test_fanouts(self):
        assert fanouts([5, 4, 3, 2]) == [3, 2, 0]

    def test_ac_direct_sum(self):
        # two spikes in a layer whose fan-out is 3
        s = np.zeros((2, 1, 2))
        s[0, 0, 0] = s[1, 0, 1] = 1
        assert count_ac(tapes_of(s, np.zeros((2, 1, 3))), [4, 2, 3]) == 6

    def test_ac_no_spikes(self):
        assert count_ac(tapes_of(np.zeros((2, 1, 2)), np.zeros((2, 1, 3))), [4, 2, 3]) == 0

    def test_ac_topology_mismatch(self):
        with pytest.raises(ValueError):
            count_ac(tapes_of(np.zeros((2, 1, 2))), [4, 2, 3])

    def test_ac_matches_enumeration(self, rng):
        for _ in range(20):
            net, batch = random_instance(rng, NeuronParams.ilif(lam=0.9), excitatory=False)
            _, tapes = forward_sequence(net, batch)
            sizes = net.layer_sizes
            expected = 0
            for l, tape in enumerate(tapes):
                for t, b, n in zip(*np.nonzero(tape.spikes)):
                    # each spike drives every synapse of the next layer
                    if l + 1 < len(tapes):
                        expected += sum(1 for _ in range(sizes[l + 2]))
            assert count_ac(tapes, sizes) == expected
            with_input = expected + sizes[1] * int(batch.data.sum())
            assert count_ac(tapes, sizes, input_spikes=True) == with_input

    def test_mac_modes(self):
        sizes = [10, 8, 4]
        assert count_mac(sizes, 4, "ann") == 10 * 8 + 8 * 4
        assert count_mac(sizes, 8, "ann") == count_mac(sizes, 4, "ann")
        assert count_mac(sizes, 4, "snn-lif") == 10 * 8 * 4
        assert count_mac(sizes, 8, "snn-lif") == 2 * count_mac(sizes, 4, "snn-lif")
        assert count_mac(sizes, 4, "snn-ilif") == 2 * count_mac(sizes, 4, "snn-lif")
        assert count_mac(sizes, 4, "snn-lif", input_kind="spike") == 0
        assert count_mac(sizes, 4, "snn-ilif", inhibitory_policy="per-neuron") == 320 + 2 * 12 * 4

    @given(st.lists(st.integers(1, 50), min_size=2, max_size=5), st.integers(1, 16), st.integers(1, 8))
    def test_ilif_mac_is_twice_lif(self, sizes, T, seqs):
        assert count_mac(sizes, T, "snn-ilif", seqs) / count_mac(sizes, T, "snn-lif", seqs) == 2.0

    def test_unknown_modes(self):
        with pytest.raises(ValueError):
            count_mac([2, 2], 1, "gpu")
        with pytest.raises(ValueError):
            count_mac([2, 2], 1, "snn-ilif", inhibitory_policy="none")


class TestSpikeMap:
    def test_identical(self):
        s = (np.random.default_rng(0).random((3, 2, 4)) < 0.5).astype(float)
        m = spike_map(tapes_of(s), tapes_of(s))[0]
        assert m["a_only"].sum() == 0 and m["b_only"].sum() == 0

    def test_disjoint(self):
        a = np.zeros((2, 1, 4))
        b = np.zeros((2, 1, 4))
        a[:, :, :2] = 1
        b[:, :, 2:] = 1
        assert spike_map(tapes_of(a), tapes_of(b))[0]["both"].sum() == 0

    def test_matches_elementwise_oracle(self, rng):
        a = (rng.random((4, 3, 5)) < 0.4).astype(float)
        b = (rng.random((4, 3, 5)) < 0.4).astype(float)
        m = spike_map(tapes_of(a), tapes_of(b), raster=True)[0]
        for t in range(4):
            pairs = [(int(x), int(y)) for x, y in zip(a[t].ravel(), b[t].ravel())]
            assert m["a_only"][t] == pairs.count((1, 0))
            assert m["b_only"][t] == pairs.count((0, 1))
            assert m["both"][t] == pairs.count((1, 1))
            assert m["neither"][t] == pairs.count((0, 0))
        assert np.array_equal(m["raster"], a.astype(int) + 2 * b.astype(int))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            spike_map(tapes_of(np.zeros((2, 1, 3))), tapes_of(np.zeros((3, 1, 3))))


class TestRecord:
    def test_serialisation(self, rng):
        net, batch = random_instance(rng, NeuronParams.ilif(lam=0.9), sizes=[3, 4, 2], T=3)
        _, tapes = forward_sequence(net, batch)
        rec = metrics_record(tapes, net.weights, net.layer_sizes, "snn-ilif")
        doc = json.loads(rec.to_json())
        assert doc["schema_version"] == 1
        assert doc["ac_count"] == count_ac(tapes, net.layer_sizes)
        assert doc["weight_norm_per_layer"] == weight_norms(net.weights)
        text = rec.to_csv()
        assert "\r\n" in text
        rows = list(csv.DictReader(io.StringIO(text)))
        assert len(rows) == 2 and rows[1]["layer"] == "1"

    def test_zero_spikes_energy_is_mac_only(self):
        tapes = tapes_of(np.zeros((4, 1, 3)), np.zeros((4, 1, 2)))
        rec = metrics_record(tapes, [np.ones((3, 5)), np.ones((2, 3))], [5, 3, 2], "snn-lif")
        assert rec.ac_count == 0
        assert rec.sop_energy_pj == pytest.approx(E_MAC_PJ * rec.mac_count)

    def test_empty_record_means(self):
        assert MetricsRecord().mean_firing_rate == 0.0
        assert MetricsRecord().to_csv().startswith("layer")


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_rates_bounded(seed):
    rng = np.random.default_rng(seed)
    s = (rng.random((5, 2, 3)) < rng.random()).astype(float)
    fr = firing_rates(tapes_of(s))[0]
    cfr = continuous_firing_rate(tapes_of(s))[0]
    assert 0.0 <= cfr <= 1.0 and 0.0 <= fr <= 1.0
    # continuous firers spike on more than half the steps, so cfr <= 2 fr
    assert cfr <= 2 * fr + 1e-12
