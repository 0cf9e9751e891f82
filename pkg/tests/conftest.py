import numpy as np
import pytest

from ilifnet.data import SpikeBatch
from ilifnet.network import SpikingNetwork, forward_sequence
from ilifnet.neuron import NeuronParams


def random_params(rng, inhibitory: bool, gamma=None) -> NeuronParams:
    kw = dict(lam=float(rng.uniform(0.5, 1.0)), gamma=float(gamma or rng.choice([0.5, 1.0, 2.0])))
    if inhibitory:
        return NeuronParams.ilif(lam_u=float(rng.choice([1.0, rng.uniform(0.2, 1.0)])),
                                 lam_i=float(rng.uniform(0.0, 0.3)), **kw)
    return NeuronParams.lif(**kw)


def random_instance(rng, params, sizes=None, T=None, batch=2, real_inputs=False, excitatory=True):
    """A small network with weights that keep some neurons near threshold."""
    if sizes is None:
        sizes = [int(rng.integers(2, 5)) for _ in range(int(rng.integers(2, 4)))]
    T = T or int(rng.integers(1, 6))
    net = SpikingNetwork.build(sizes, params, seed=int(rng.integers(2**31)))
    for layer in net.layers:
        mag = rng.uniform(0.1, 1.5, size=layer.weights.shape)
        sign = np.where(rng.random(layer.weights.shape) < (0.8 if excitatory else 0.5), 1.0, -1.0)
        layer.weights[...] = mag * sign
    if real_inputs:
        data = rng.random((batch, T, sizes[0]))
    else:
        data = (rng.random((batch, T, sizes[0])) < 0.6).astype(float)
    labels = rng.integers(0, sizes[-1], size=batch)
    return net, SpikeBatch(data, labels, num_classes=sizes[-1])


def run_tapes(net, batch, twin=False):
    return forward_sequence(net, batch, twin=twin)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, name, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {name}: {detail}")
