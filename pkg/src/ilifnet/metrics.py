"""Firing statistics and the AC/MAC synaptic-operation energy model."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import List, Sequence

import numpy as np

E_AC_PJ = 0.9
E_MAC_PJ = 4.6

MAC_MODES = ("ann", "snn-lif", "snn-ilif")


@dataclass
class MetricsRecord:
    firing_rate_per_layer: List[float] = field(default_factory=list)
    continuous_firing_rate_per_layer: List[float] = field(default_factory=list)
    weight_norm_per_layer: List[float] = field(default_factory=list)
    ac_count: int = 0
    mac_count: int = 0
    sop_energy_pj: float = 0.0

    @property
    def mean_firing_rate(self) -> float:
        return float(np.mean(self.firing_rate_per_layer)) if self.firing_rate_per_layer else 0.0

    @property
    def mean_weight_norm(self) -> float:
        return float(np.mean(self.weight_norm_per_layer)) if self.weight_norm_per_layer else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps({"schema_version": 1, **self.to_dict()}, indent=2, sort_keys=True)

    def csv_rows(self) -> List[dict]:
        """One row per layer; the network-wide counts repeat on every row."""
        rows = []
        for l, (fr, cfr, wn) in enumerate(
            zip(
                self.firing_rate_per_layer,
                self.continuous_firing_rate_per_layer,
                self.weight_norm_per_layer,
            )
        ):
            rows.append(
                {
                    "layer": l,
                    "firing_rate": fr,
                    "continuous_firing_rate": cfr,
                    "weight_norm": wn,
                    "ac_count": self.ac_count,
                    "mac_count": self.mac_count,
                    "sop_energy_pj": self.sop_energy_pj,
                }
            )
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.csv_rows()
        fields = list(rows[0]) if rows else ["layer"]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\r\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()


def _spike_arrays(tapes) -> List[np.ndarray]:
    """Per-layer spikes as ``(T, sequences, neurons)``, concatenating passes."""
    if not tapes:
        raise ValueError("no tapes given")
    if isinstance(tapes[0], (list, tuple)):
        n_layers = len(tapes[0])
        return [np.concatenate([run[l].spikes for run in tapes], axis=1) for l in range(n_layers)]
    return [t.spikes for t in tapes]


def firing_rates(tapes) -> List[float]:
    """Mean spike value per layer over neurons, steps and sequences."""
    return [float(np.mean(s)) for s in _spike_arrays(tapes)]


def continuous_firing_rate(tapes, fraction: float = 0.5) -> List[float]:
    """Share of (sequence, neuron) pairs that spike in more than ``fraction * T`` steps."""
    rates = []
    for s in _spike_arrays(tapes):
        T = s.shape[0]
        counts = s.sum(axis=0)
        rates.append(float(np.mean(counts > fraction * T)))
    return rates


def weight_norms(weights: Sequence[np.ndarray]) -> List[float]:
    return [float(np.linalg.norm(w)) for w in weights]


def fanouts(layer_sizes: Sequence[int]) -> List[int]:
    """Fan-out of every spiking layer: the next layer's size, 0 for the output."""
    sizes = list(layer_sizes)[1:]
    return [sizes[l + 1] if l + 1 < len(sizes) else 0 for l in range(len(sizes))]


def count_ac(tapes, layer_sizes: Sequence[int], input_spikes: bool = False) -> int:
    """Accumulate operations: every spike adds once per outgoing synapse.

    ``layer_sizes`` is ``[input, hidden..., output]``.  With
    ``input_spikes`` the binary network input is counted too, each input
    spike driving the first layer.
    """
    spikes = _spike_arrays(tapes)
    fo = fanouts(layer_sizes)
    if len(fo) != len(spikes):
        raise ValueError(f"topology has {len(fo)} spiking layers, tapes have {len(spikes)}")
    for s, size in zip(spikes, layer_sizes[1:]):
        if s.shape[-1] != size:
            raise ValueError(f"layer of width {s.shape[-1]} does not match topology size {size}")
    total = 0
    for s, f in zip(spikes, fo):
        total += int(f) * int(np.sum(s))
    if input_spikes:
        runs = tapes if isinstance(tapes[0], (list, tuple)) else [tapes]
        for run in runs:
            total += int(layer_sizes[1]) * int(np.sum(run[0].inputs))
    return total


def count_mac(
    layer_sizes: Sequence[int],
    T: int,
    mode: str = "snn-lif",
    sequences: int = 1,
    input_kind: str = "direct",
    inhibitory_policy: str = "match",
) -> int:
    """Multiply-accumulate operations of one evaluation.

    ``ann``: one MAC per synapse, independent of ``T``.
    ``snn-lif``: real-valued (direct-encoded) input drives the first layer
    with MACs on every step; spiking layers cost none.
    ``snn-ilif``: the LIF count plus the inhibitory-unit multiplications.
    Under the ``match`` policy their count equals the LIF count, giving the
    2x ratio seen on matched architectures; ``per-neuron`` charges two MACs
    per spiking neuron per step instead.
    """
    if mode not in MAC_MODES:
        raise ValueError(f"unknown MAC mode {mode!r}; expected one of {MAC_MODES}")
    sizes = [int(s) for s in layer_sizes]
    synapses = sum(a * b for a, b in zip(sizes[:-1], sizes[1:]))
    if mode == "ann":
        return synapses * sequences
    lif = sizes[0] * sizes[1] * T if input_kind == "direct" else 0
    if mode == "snn-lif":
        return lif * sequences
    if inhibitory_policy == "match":
        extra = lif
    elif inhibitory_policy == "per-neuron":
        extra = 2 * sum(sizes[1:]) * T
    else:
        raise ValueError(f"unknown inhibitory MAC policy {inhibitory_policy!r}")
    return (lif + extra) * sequences


def sop_energy(ac: int, mac: int, e_ac_pj: float = E_AC_PJ, e_mac_pj: float = E_MAC_PJ) -> float:
    """Synaptic operation energy in picojoules."""
    if ac < 0 or mac < 0:
        raise ValueError("operation counts must be nonnegative")
    return e_ac_pj * ac + e_mac_pj * mac


def spike_map(tapes_a, tapes_b, raster: bool = False) -> List[dict]:
    """Compare two spike recordings of the same network and inputs.

    For every layer returns per-step counts of neuron-steps that spiked only
    in ``a``, only in ``b``, in both, or in neither.  With ``raster`` a
    ``(T, sequences, neurons)`` code array is included: 0 neither, 1 a-only,
    2 b-only, 3 both.
    """
    sa, sb = _spike_arrays(tapes_a), _spike_arrays(tapes_b)
    if len(sa) != len(sb) or any(x.shape != y.shape for x, y in zip(sa, sb)):
        raise ValueError("spike recordings have different shapes")
    out = []
    for x, y in zip(sa, sb):
        a, b = x > 0, y > 0
        axes = tuple(range(1, a.ndim))
        entry = {
            "a_only": (a & ~b).sum(axis=axes),
            "b_only": (~a & b).sum(axis=axes),
            "both": (a & b).sum(axis=axes),
            "neither": (~a & ~b).sum(axis=axes),
        }
        if raster:
            entry["raster"] = a.astype(np.int8) + 2 * b.astype(np.int8)
        out.append(entry)
    return out


def metrics_record(
    tapes,
    weights: Sequence[np.ndarray],
    layer_sizes: Sequence[int],
    mode: str,
    input_kind: str = "direct",
    inhibitory_policy: str = "match",
) -> MetricsRecord:
    spikes = _spike_arrays(tapes)
    T, sequences = spikes[0].shape[0], spikes[0].shape[1]
    ac = count_ac(tapes, layer_sizes, input_spikes=input_kind == "spike")
    mac = count_mac(layer_sizes, T, mode, sequences, input_kind, inhibitory_policy)
    return MetricsRecord(
        firing_rates(tapes),
        continuous_firing_rate(tapes),
        weight_norms(weights),
        ac,
        mac,
        sop_energy(ac, mac),
    )


__all__ = [
    "E_AC_PJ",
    "E_MAC_PJ",
    "MetricsRecord",
    "firing_rates",
    "continuous_firing_rate",
    "weight_norms",
    "fanouts",
    "count_ac",
    "count_mac",
    "sop_energy",
    "spike_map",
    "metrics_record",
]
