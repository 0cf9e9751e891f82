"""Numerical checks of the BPTT machinery.

The finite-difference check runs on the network's differentiable twin, where
the threshold is replaced by ``clamp((u - v_th)/gamma + 1/2, 0, 1)``.  Its
slope is exactly the rectangular surrogate, so the twin's true gradient is
what the engine computes from a twin tape.  Weights whose perturbation moves
any potential across a ramp corner, or any current-unit value across the
rectifier's corner, are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .bptt import backward_layer, unrolled_gradient_oracle
from .network import LOSSES, SpikingNetwork, backward_network, forward_sequence

ABS_FALLBACK = 1e-8


def _regions(tapes) -> np.ndarray:
    """Which linear piece every ramp and rectifier sits on, flattened."""
    parts = []
    for tape in tapes:
        p = tape.params
        z = (tape.potential - p.v_th) / p.gamma
        parts.append(np.sign(np.clip(z + 0.5, 0, None)) + np.sign(np.clip(z - 0.5, 0, None)))
        parts.append(tape.i_inhib > 0)
    return np.concatenate([np.ravel(a).astype(np.int8) for a in parts])


def _twin_loss(net: SpikingNetwork, batch, loss: str):
    outputs, tapes = forward_sequence(net, batch, twin=True)
    value, ds = LOSSES[loss](outputs, batch.labels)
    return value, ds, tapes


@dataclass
class FDResult:
    max_relative_error: float
    worst_index: Optional[Tuple[int, int, int]] = None
    checked: int = 0
    skipped: int = 0


def finite_difference_check(
    net: SpikingNetwork, batch, eps: float = 1e-5, loss: str = "mse", detail: bool = False
):
    """Central differences of the twin loss against twin BPTT, all weights.

    Relative error ``|fd - bp| / max(|fd|, |bp|)``; when both are below
    ``1e-8`` the absolute error is used instead.  Returns the maximum, or an
    :class:`FDResult` with the worst ``(layer, row, col)`` when ``detail``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    value, ds, tapes = _twin_loss(net, batch, loss)
    if not np.isfinite(value):
        raise FloatingPointError("twin loss is not finite")
    base_regions = _regions(tapes)
    grads = backward_network(net, tapes, ds).weight_grads

    result = FDResult(0.0)
    for l, layer in enumerate(net.layers):
        for idx in np.ndindex(*layer.weights.shape):
            w0 = layer.weights[idx]
            layer.weights[idx] = w0 + eps
            f_plus, _, tp = _twin_loss(net, batch, loss)
            r_plus = _regions(tp)
            layer.weights[idx] = w0 - eps
            f_minus, _, tm = _twin_loss(net, batch, loss)
            r_minus = _regions(tm)
            layer.weights[idx] = w0
            if not (np.array_equal(r_plus, base_regions) and np.array_equal(r_minus, base_regions)):
                result.skipped += 1
                continue
            fd = (f_plus - f_minus) / (2 * eps)
            bp = grads[l][idx]
            scale = max(abs(fd), abs(bp))
            err = abs(fd - bp) if scale < ABS_FALLBACK else abs(fd - bp) / scale
            result.checked += 1
            if err > result.max_relative_error:
                result.max_relative_error = err
                result.worst_index = (l,) + tuple(int(i) for i in idx)
    return result if detail else result.max_relative_error


def oracle_max_error(net: SpikingNetwork, batch, ds_out=None) -> float:
    """Largest relative gap between recursive and literal-sum weight gradients."""
    outputs, tapes = forward_sequence(net, batch)
    if ds_out is None:
        _, ds_out = LOSSES["mse"](outputs, batch.labels)
    recursive = backward_network(net, tapes, ds_out)
    worst = 0.0
    ds = ds_out
    for l in range(len(tapes) - 1, -1, -1):
        ref = unrolled_gradient_oracle(tapes[l], ds)
        a, b = recursive.weight_grads[l], ref.weight_grads[0]
        scale = max(np.max(np.abs(b)), np.max(np.abs(a)), 0.0)
        if scale > 0:
            worst = max(worst, float(np.max(np.abs(a - b)) / scale))
        ds = ref.ds_in
    return worst


__all__ = ["finite_difference_check", "oracle_max_error", "FDResult", "backward_layer"]
