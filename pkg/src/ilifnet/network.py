"""Dense spiking networks: forward pass, rate losses, SGD and training loop."""

from __future__ import annotations

import base64
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import metrics as _metrics
from .bptt import GradientReport, LayerTape, backward_layer
from .neuron import (
    LayerMismatchError,
    NeuronParams,
    NeuronState,
    Variant,
    heaviside,
    neuron_step,
    ramp,
    sigma,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ilifnet-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    pass


def _logit(p: float) -> float:
    p = min(max(p, 1e-6), 1 - 1e-6)
    return math.log(p / (1 - p))


@dataclass
class DenseSpikingLayer:
    """Fully connected synapses (``out x in``) feeding one population of neurons.

    For PLIF/IPLIF layers the decay is the logistic of the trainable
    ``decay_logit``; ``params.lam`` is kept in sync with it.
    """

    weights: np.ndarray
    params: NeuronParams
    decay_logit: Optional[float] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise LayerMismatchError("weights must be a 2-D (out, in) matrix")
        if self.params.lambda_learnable and self.decay_logit is None:
            self.decay_logit = _logit(self.params.decay)
        if self.decay_logit is not None:
            self.params = self.params.with_decay(float(sigma(self.decay_logit)))

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def initial_state(self, batch: int) -> NeuronState:
        return NeuronState.zeros((batch, self.n_out))


class SpikingNetwork:
    def __init__(self, layers: Sequence[DenseSpikingLayer]):
        self.layers = list(layers)
        for lower, upper in zip(self.layers[:-1], self.layers[1:]):
            if upper.n_in != lower.n_out:
                raise LayerMismatchError(
                    f"layer expects {upper.n_in} inputs but the layer below has {lower.n_out} neurons"
                )

    @classmethod
    def build(cls, layer_sizes: Sequence[int], params, seed: int = 1234) -> "SpikingNetwork":
        """Uniform init in +-sqrt(6 / (fan_in + fan_out)).

        ``params`` is one :class:`NeuronParams` for every layer or a list with
        one entry per layer.
        """
        rng = np.random.default_rng(seed)
        n_layers = len(layer_sizes) - 1
        if isinstance(params, NeuronParams):
            params = [params] * n_layers
        if len(params) != n_layers:
            raise ValueError("need one NeuronParams per layer")
        layers = []
        for fan_in, fan_out, p in zip(layer_sizes[:-1], layer_sizes[1:], params):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            layers.append(DenseSpikingLayer(rng.uniform(-bound, bound, (fan_out, fan_in)), p))
        return cls(layers)

    @property
    def layer_sizes(self) -> List[int]:
        return [self.layers[0].n_in] + [l.n_out for l in self.layers]

    @property
    def weights(self) -> List[np.ndarray]:
        return [l.weights for l in self.layers]

    @property
    def variant(self) -> Variant:
        return self.layers[-1].params.variant

    def copy(self) -> "SpikingNetwork":
        return SpikingNetwork(
            [DenseSpikingLayer(l.weights.copy(), l.params, l.decay_logit) for l in self.layers]
        )

    def with_params(self, params) -> "SpikingNetwork":
        """Same weights, different neuron constants (e.g. a different gamma)."""
        if isinstance(params, NeuronParams):
            params = [params] * len(self.layers)
        return SpikingNetwork(
            [DenseSpikingLayer(l.weights.copy(), p) for l, p in zip(self.layers, params)]
        )


def _as_time_major(batch) -> np.ndarray:
    data = getattr(batch, "data", batch)
    data = np.asarray(data, dtype=float)
    if data.ndim != 3:
        raise LayerMismatchError(f"expected (batch, time, features) input, got shape {data.shape}")
    return np.ascontiguousarray(data.transpose(1, 0, 2))


def forward_sequence(net: SpikingNetwork, batch, twin: bool = False):
    """Run whole sequences through the network from a zero state.

    Returns ``(outputs, tapes)`` with ``outputs`` the last layer's spikes,
    ``(T, batch, classes)``, and one :class:`LayerTape` per layer.  The raw
    current into layer ``l`` is ``W_l S_{l-1}[t]``; the first layer takes the
    encoded input directly.  ``twin`` swaps the threshold for its
    piecewise-linear twin so the network becomes differentiable.
    """
    x = _as_time_major(batch)
    if x.shape[2] != net.layers[0].n_in:
        raise LayerMismatchError(
            f"input has {x.shape[2]} features, network expects {net.layers[0].n_in}"
        )
    T, B, _ = x.shape
    spike_fn = ramp if twin else heaviside
    states = [l.initial_state(B) for l in net.layers]
    records = [[] for _ in net.layers]
    inputs = [[] for _ in net.layers]
    for t in range(T):
        s = x[t]
        for l, layer in enumerate(net.layers):
            inputs[l].append(s)
            rec, states[l] = neuron_step(states[l], s @ layer.weights.T, layer.params, spike_fn)
            records[l].append(rec)
            s = rec.spikes
    tapes = [
        LayerTape.from_steps(np.stack(inputs[l]), records[l], layer.weights, layer.params, twin)
        for l, layer in enumerate(net.layers)
    ]
    return tapes[-1].spikes, tapes


def _one_hot(target, n_classes: int) -> np.ndarray:
    target = np.asarray(target)
    if target.ndim == 1 and np.issubdtype(target.dtype, np.integer):
        out = np.zeros((len(target), n_classes))
        out[np.arange(len(target)), target] = 1.0
        return out
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if target.shape[1] != n_classes or not np.all(np.isin(target, (0.0, 1.0))) or not np.all(
        target.sum(axis=1) == 1
    ):
        raise ValueError("target must be one-hot")
    return target


def rate_mse_loss(outputs, target):
    """Mean-rate squared error, scaled so dL/dS[t] is exactly Ybar - Yhat.

    Per sequence ``L = T/2 * ||Ybar - Yhat||^2`` with ``Ybar`` the mean output
    over time.  For a batch the loss and gradient are averaged over
    sequences.  ``target`` is class indices or one-hot rows.
    """
    outputs = np.asarray(outputs, dtype=float)
    T, B, C = outputs.shape
    y_hat = _one_hot(target, C)
    if len(y_hat) != B:
        raise ValueError("target batch size does not match outputs")
    diff = outputs.mean(axis=0) - y_hat
    loss = float(np.sum(T / 2 * np.sum(diff**2, axis=1)) / B)
    ds_out = np.broadcast_to(diff / B, (T, B, C)).copy()
    return loss, ds_out


def rate_ce_loss(outputs, target):
    """Cross-entropy on spike counts used as logits (alternative readout loss)."""
    outputs = np.asarray(outputs, dtype=float)
    T, B, C = outputs.shape
    y_hat = _one_hot(target, C)
    logits = outputs.sum(axis=0)
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    loss = float(-np.sum(y_hat * np.log(np.clip(p, 1e-300, None))) / B)
    ds_out = np.broadcast_to((p - y_hat) / B, (T, B, C)).copy()
    return loss, ds_out


LOSSES = {"mse": rate_mse_loss, "ce": rate_ce_loss}


def backward_network(net: SpikingNetwork, tapes: Sequence[LayerTape], ds_out) -> GradientReport:
    """Route dL/dS down through the layers; dL/dS of layer l-1 is W_l^T dL/dI_l."""
    report = GradientReport()
    ds = ds_out
    for tape in reversed(tapes):
        layer_report = backward_layer(tape, ds)
        report = report.prepend(layer_report)
        ds = layer_report.ds_in
    return report


def predict_classes(outputs) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.asarray(outputs).mean(axis=0).argmax(axis=1)


def sgd_step(net: SpikingNetwork, grads: GradientReport, lr: float, weight_decay: float = 0.0):
    """Plain SGD with L2 weight decay, applied in place; returns ``net``.

    Learnable decays move along their logit: d logit = dL/dlam * lam (1 - lam).
    """
    if lr <= 0 or weight_decay < 0:
        raise ValueError("need lr > 0 and weight_decay >= 0")
    if not grads.all_finite():
        raise NonFiniteGradientError("non-finite gradient; update skipped")
    for layer, dw, dlam in zip(net.layers, grads.weight_grads, grads.decay_grads):
        layer.weights -= lr * (dw + weight_decay * layer.weights)
        if layer.decay_logit is not None:
            lam = layer.params.decay
            layer.decay_logit -= lr * dlam * lam * (1 - lam)
            layer.params = layer.params.with_decay(float(sigma(layer.decay_logit)))
    return net


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 0.1
    weight_decay: float = 5e-4
    batch_size: int = 32
    seed: int = 1234
    loss: str = "mse"
    cosine: bool = False
    mac_mode: Optional[str] = None
    input_kind: str = "direct"
    inhibitory_policy: str = "match"


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    metrics: _metrics.MetricsRecord


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.records[-1] if self.records else None


def default_mac_mode(net: SpikingNetwork) -> str:
    """ILIF overhead is charged only while an inhibitory unit is active."""
    active = any(l.params.lam_u > 0 or l.params.lam_i > 0 for l in net.layers)
    return "snn-ilif" if active else "snn-lif"


def evaluate(
    net: SpikingNetwork,
    batch,
    mac_mode: Optional[str] = None,
    input_kind: str = "direct",
    inhibitory_policy: str = "match",
):
    """Accuracy, metrics and tapes of one pass over ``batch``."""
    outputs, tapes = forward_sequence(net, batch)
    acc = float(np.mean(predict_classes(outputs) == batch.labels))
    record = _metrics.metrics_record(
        tapes,
        net.weights,
        net.layer_sizes,
        mac_mode or default_mac_mode(net),
        input_kind,
        inhibitory_policy,
    )
    return acc, record, tapes


def train(net: SpikingNetwork, dataset, config: TrainConfig, eval_set=None) -> TrainLog:
    """Minibatch SGD through BPTT; mutates ``net`` and returns the epoch log.

    Batches are drawn from a generator seeded with ``config.seed`` so runs
    are reproducible.  Accuracy and metrics come from ``eval_set`` (the
    training set when omitted) after every epoch.
    """
    if dataset.features != net.layers[0].n_in:
        raise LayerMismatchError(
            f"dataset has {dataset.features} features, network expects {net.layers[0].n_in}"
        )
    if dataset.num_classes > net.layers[-1].n_out:
        raise LayerMismatchError("network has fewer outputs than the dataset has classes")
    loss_fn = LOSSES[config.loss]
    rng = np.random.default_rng(config.seed)
    eval_set = dataset if eval_set is None else eval_set
    log_ = TrainLog()
    n = len(dataset)
    for epoch in range(config.epochs):
        lr = config.lr
        if config.cosine and config.epochs > 1:
            lr = 0.5 * config.lr * (1 + math.cos(math.pi * epoch / config.epochs))
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            outputs, tapes = forward_sequence(net, dataset.data[idx])
            loss, ds_out = loss_fn(outputs, dataset.labels[idx])
            grads = backward_network(net, tapes, ds_out)
            sgd_step(net, grads, lr, config.weight_decay)
            losses.append(loss * len(idx))
        acc, record, _ = evaluate(
            net, eval_set, config.mac_mode, config.input_kind, config.inhibitory_policy
        )
        log_.records.append(EpochRecord(epoch + 1, float(sum(losses) / n), acc, record))
        log.debug("epoch %d loss %.4f acc %.4f", epoch + 1, log_.records[-1].loss, acc)
    return log_


# ---------------------------------------------------------------------------
# checkpoints


def _params_dict(p: NeuronParams) -> dict:
    d = asdict(p)
    d["variant"] = p.variant.value
    return d


def _encode(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode(s: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").reshape(shape).astype(float)


def checkpoint_dict(net: SpikingNetwork, seed: Optional[int] = None, extra: Optional[dict] = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "layer_sizes": net.layer_sizes,
        "layers": [
            {
                "shape": list(l.weights.shape),
                "weights_f64le_b64": _encode(l.weights),
                "params": _params_dict(l.params),
                "decay_logit": l.decay_logit,
            }
            for l in net.layers
        ],
        "extra": extra or {},
    }


def save_checkpoint(path, net: SpikingNetwork, seed: Optional[int] = None, extra: Optional[dict] = None):
    with open(path, "w") as f:
        json.dump(checkpoint_dict(net, seed, extra), f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path):
    """Returns ``(net, payload)``; ``payload`` is the raw JSON document."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    layers = [
        DenseSpikingLayer(
            _decode(entry["weights_f64le_b64"], entry["shape"]),
            NeuronParams(**entry["params"]),
            entry.get("decay_logit"),
        )
        for entry in doc["layers"]
    ]
    return SpikingNetwork(layers), doc


__all__ = [
    "DenseSpikingLayer",
    "SpikingNetwork",
    "NonFiniteGradientError",
    "forward_sequence",
    "rate_mse_loss",
    "rate_ce_loss",
    "backward_network",
    "predict_classes",
    "sgd_step",
    "TrainConfig",
    "EpochRecord",
    "TrainLog",
    "evaluate",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_dict",
]
