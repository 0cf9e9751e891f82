"""LIF / ILIF neuron dynamics and the rectangular surrogate gradient.

Every function here is a pure step: it takes the previous state and an
input current and returns the recorded quantities plus the next state.
Arrays are broadcast elementwise, so a "vector" may also be a
``(batch, neurons)`` matrix.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np


class Variant(str, enum.Enum):
    LIF = "LIF"
    ILIF = "ILIF"
    PLIF = "PLIF"
    IPLIF = "IPLIF"

    @property
    def inhibitory(self) -> bool:
        return self in (Variant.ILIF, Variant.IPLIF)

    @property
    def learnable_decay(self) -> bool:
        return self in (Variant.PLIF, Variant.IPLIF)


class LayerMismatchError(ValueError):
    """Raised when a state, current or tape does not fit its layer."""


@dataclass(frozen=True)
class NeuronParams:
    """Per-layer neuron constants.

    ``lam`` is the membrane decay; ``lam_u`` and ``lam_i`` are the decays of
    the membrane-potential and current inhibitory units.  When ``tau`` is
    given it overrides ``lam`` through ``lam = 1 - 1/tau``.
    """

    lam: float = 1.0
    lam_u: float = 0.0
    lam_i: float = 0.0
    v_th: float = 1.0
    gamma: float = 1.0
    variant: Variant = Variant.LIF
    tau: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        for name in ("lam", "lam_u", "lam_i", "v_th", "gamma"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.v_th <= 0:
            raise ValueError("v_th must be positive")
        if self.tau is not None and self.tau <= 1:
            raise ValueError("tau must exceed 1 so that 1 - 1/tau lies in (0, 1)")
        if not 0 < self.decay <= 1:
            raise ValueError("lam must lie in (0, 1]")
        if not 0 <= self.lam_u <= 1 or not 0 <= self.lam_i <= 1:
            raise ValueError("lam_u and lam_i must lie in [0, 1]")
        if not self.variant.inhibitory and (self.lam_u != 0 or self.lam_i != 0):
            raise ValueError(f"{self.variant.value} neurons take lam_u = lam_i = 0")

    @classmethod
    def lif(cls, **kw) -> "NeuronParams":
        return cls(variant=Variant.LIF, **kw)

    @classmethod
    def ilif(cls, lam_u: float = 1.0, lam_i: float = 0.03, **kw) -> "NeuronParams":
        return cls(variant=Variant.ILIF, lam_u=lam_u, lam_i=lam_i, **kw)

    @property
    def decay(self) -> float:
        """Effective multiplicative membrane decay."""
        if self.tau is not None:
            return 1.0 - 1.0 / self.tau
        return self.lam

    @property
    def lambda_learnable(self) -> bool:
        return self.variant.learnable_decay

    @property
    def mpiu_enabled(self) -> bool:
        # lam_u = 0 removes the unit entirely, including the sigma(0) reset.
        return self.variant.inhibitory and self.lam_u > 0

    def with_decay(self, lam: float) -> "NeuronParams":
        return replace(self, lam=float(lam), tau=None)


@dataclass
class NeuronState:
    m: np.ndarray
    u_inhib: np.ndarray
    i_inhib: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "NeuronState":
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape))


@dataclass
class StepRecord:
    current: np.ndarray
    potential: np.ndarray
    spikes: np.ndarray
    m_bar: np.ndarray
    m_post: np.ndarray
    u_inhib_post: np.ndarray
    i_inhib_post: np.ndarray


def sigma(x):
    """Logistic function, evaluated without overflow for large |x|."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def sigma_prime(x):
    s = sigma(x)
    return s * (1.0 - s)


def surrogate_grad(u, params: NeuronParams):
    """Rectangle of height 1/gamma on the open band |u - v_th| < gamma/2."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u - params.v_th) < params.gamma / 2
    out = np.where(inside, 1.0 / params.gamma, 0.0)
    return out if out.ndim else float(out)


def epsilon_term(u, params: NeuronParams):
    return 1.0 - params.v_th * surrogate_grad(u, params)


def heaviside(u, params: NeuronParams):
    return (np.asarray(u) >= params.v_th).astype(float)


def ramp(u, params: NeuronParams):
    """Differentiable twin of the Heaviside whose slope is the surrogate."""
    return np.clip((np.asarray(u, dtype=float) - params.v_th) / params.gamma + 0.5, 0.0, 1.0)


def _check_shapes(state: NeuronState, current: np.ndarray) -> None:
    if np.shape(state.m) != np.shape(current):
        raise LayerMismatchError(
            f"state has shape {np.shape(state.m)} but current has shape {np.shape(current)}"
        )


def lif_step(state: NeuronState, current, params: NeuronParams, spike_fn=heaviside):
    """One step of the soft-reset LIF neuron.

    Returns ``(record, next_state)``.  ``spike_fn`` defaults to the hard
    threshold; passing :func:`ramp` gives the differentiable twin.
    """
    if params.variant.inhibitory:
        raise ValueError("lif_step takes LIF or PLIF parameters")
    current = np.asarray(current, dtype=float)
    _check_shapes(state, current)
    u = params.decay * state.m + current
    s = spike_fn(u, params)
    m_bar = u - s * params.v_th
    record = StepRecord(current, u, s, m_bar, m_bar, state.u_inhib, state.i_inhib)
    return record, NeuronState(m_bar, state.u_inhib, state.i_inhib)


def ilif_step(state: NeuronState, raw_current, params: NeuronParams, spike_fn=heaviside):
    """One step of the inhibitory LIF neuron, in the fire-procedure order.

    The current unit from the previous step is rectified and subtracted from
    the raw current, then the membrane is integrated, fired and soft-reset.
    Only afterwards are the two inhibitory accumulators updated, so the
    current inhibition acts on the following step.
    """
    if not params.variant.inhibitory:
        raise ValueError("ilif_step takes ILIF or IPLIF parameters")
    raw_current = np.asarray(raw_current, dtype=float)
    _check_shapes(state, raw_current)
    i = raw_current - np.maximum(state.i_inhib, 0.0)
    u = params.decay * state.m + i
    s = spike_fn(u, params)
    m_bar = u - s * params.v_th
    u_inhib = params.lam_u * (state.u_inhib + s * m_bar)
    if params.mpiu_enabled:
        m = m_bar - s * sigma(u_inhib)
    else:
        m = m_bar
    i_inhib = params.lam_i * (state.i_inhib + s * i)
    record = StepRecord(i, u, s, m_bar, m, u_inhib, i_inhib)
    return record, NeuronState(m, u_inhib, i_inhib)


def neuron_step(state: NeuronState, current, params: NeuronParams, spike_fn=heaviside):
    step = ilif_step if params.variant.inhibitory else lif_step
    return step(state, current, params, spike_fn)


__all__ = [
    "Variant",
    "LayerMismatchError",
    "NeuronParams",
    "NeuronState",
    "StepRecord",
    "sigma",
    "sigma_prime",
    "surrogate_grad",
    "epsilon_term",
    "heaviside",
    "ramp",
    "lif_step",
    "ilif_step",
    "neuron_step",
]
