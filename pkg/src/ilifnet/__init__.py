"""Spiking networks with inhibitory LIF neurons and hand-written BPTT."""

from .neuron import NeuronParams, NeuronState, Variant
from .network import SpikingNetwork

__version__ = "0.1.0"

__all__ = ["NeuronParams", "NeuronState", "Variant", "SpikingNetwork"]
