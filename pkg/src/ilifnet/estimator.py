"""scikit-learn style wrappers around the spiking network.

``SpikingClassifier`` accepts either static features ``(n, features)``,
which are direct-encoded over ``T`` steps, or spike sequences
``(n, T, features)``.  ``DirectEncoder`` and ``EventBinner`` turn raw
inputs into such sequences inside a pipeline.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted

from .data import SpikeBatch, bin_events
from .network import SpikingNetwork, TrainConfig, forward_sequence, train
from .neuron import NeuronParams, Variant


def _as_sequences(X, T: int) -> np.ndarray:
    X = check_array(X, allow_nd=True, dtype=np.float64)
    if X.ndim == 2:
        X = np.repeat(X[:, None, :], T, axis=1)
    elif X.ndim != 3:
        raise ValueError(f"expected 2-D features or 3-D sequences, got {X.ndim}-D input")
    if X.min() < 0 or X.max() > 1:
        raise ValueError("inputs must lie in [0, 1]")
    return X


class SpikingClassifier(ClassifierMixin, BaseEstimator):
    """Dense spiking MLP trained with BPTT and a mean-rate loss.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Widths of the hidden spiking layers.
    variant : {"LIF", "ILIF", "PLIF", "IPLIF"}
    T : int
        Steps used when ``X`` is 2-D; ignored for 3-D sequences.
    gamma, v_th, lam, lam_u, lam_i : float
        Neuron constants; ``lam_u``/``lam_i`` only apply to inhibitory variants.
    epochs, lr, weight_decay, batch_size, loss
        SGD settings.
    random_state : int
        Seeds the weight initialisation and batch order.
    """

    def __init__(
        self,
        hidden_layer_sizes=(64,),
        variant="ILIF",
        T=8,
        gamma=1.0,
        v_th=1.0,
        lam=1.0,
        lam_u=1.0,
        lam_i=0.03,
        epochs=30,
        lr=0.1,
        weight_decay=5e-4,
        batch_size=32,
        loss="mse",
        random_state=1234,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.variant = variant
        self.T = T
        self.gamma = gamma
        self.v_th = v_th
        self.lam = lam
        self.lam_u = lam_u
        self.lam_i = lam_i
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.loss = loss
        self.random_state = random_state

    def _params(self) -> NeuronParams:
        variant = Variant(self.variant)
        inhib = dict(lam_u=self.lam_u, lam_i=self.lam_i) if variant.inhibitory else {}
        return NeuronParams(lam=self.lam, v_th=self.v_th, gamma=self.gamma, variant=variant, **inhib)

    def fit(self, X, y):
        seqs = _as_sequences(X, self.T)
        y = np.asarray(y)
        if len(y) != len(seqs):
            raise ValueError("X and y have different lengths")
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        codes = self._encoder.transform(y)
        self.n_features_in_ = seqs.shape[2]
        n_out = max(len(self.classes_), 2)
        sizes = [self.n_features_in_, *self.hidden_layer_sizes, n_out]
        seed = 1234 if self.random_state is None else int(self.random_state)
        self.network_ = SpikingNetwork.build(sizes, self._params(), seed=seed)
        config = TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            seed=seed,
            loss=self.loss,
        )
        self.log_ = train(self.network_, SpikeBatch(seqs, codes, n_out), config)
        return self

    def _rates(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        seqs = _as_sequences(X, self.T)
        if seqs.shape[2] != self.n_features_in_:
            raise ValueError(f"X has {seqs.shape[2]} features, the model was fit on {self.n_features_in_}")
        outputs, _ = forward_sequence(self.network_, seqs)
        return outputs.mean(axis=0)[:, : len(self.classes_)]

    def predict_proba(self, X) -> np.ndarray:
        """Output firing rates normalised per sample; silent outputs give a uniform row."""
        rates = self._rates(X)
        total = rates.sum(axis=1, keepdims=True)
        uniform = np.full_like(rates, 1.0 / rates.shape[1])
        return np.where(total > 0, rates / np.where(total > 0, total, 1.0), uniform)

    def predict(self, X) -> np.ndarray:
        # argmax keeps the lowest class index on ties
        rates = self._rates(X)
        return self.classes_[np.argmax(rates, axis=1)]


class DirectEncoder(TransformerMixin, BaseEstimator):
    """Repeat each feature vector over ``T`` steps."""

    def __init__(self, T=8):
        self.T = T

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "n_features_in_")
        X = check_array(X)
        if self.T < 1:
            raise ValueError("T must be at least 1")
        return np.repeat(X[:, None, :], self.T, axis=1)


class EventBinner(TransformerMixin, BaseEstimator):
    """Bin a list of event streams into ``(n, T, 2*height*width)`` frames."""

    def __init__(self, T=8, height=1, width=1, mode="or"):
        self.T = T
        self.height = height
        self.width = width
        self.mode = mode

    def fit(self, X, y=None):
        self.n_features_out_ = 2 * self.height * self.width
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "n_features_out_")
        frames = [bin_events(s, self.T, self.height, self.width, self.mode).data[0] for s in X]
        if not frames:
            return np.zeros((0, self.T, self.n_features_out_))
        return np.stack(frames)


__all__ = ["SpikingClassifier", "DirectEncoder", "EventBinner"]
