"""Backpropagation through time over recorded layer tapes.

The recursive backward passes (:func:`backward_lif`, :func:`backward_ilif`)
walk the tape once from ``t = T`` down to ``t = 1`` carrying adjoints of the
three state variables (residual membrane ``m``, membrane inhibition ``U_inh``
and current inhibition ``I_inh``).  :func:`unrolled_gradient_oracle`
evaluates the same gradient as an explicit double sum over ``(t, t')`` pairs
of chained per-step Jacobians, without reusing any accumulator; it is slow
and only exists to check the recursions.

Conventions shared by all routes:

* the spike derivative dS/dU is the rectangular surrogate at the recorded
  potential, on every path where a spike value is used (reset, both
  inhibitory units, the loss);
* the derivative of the rectifier on the current unit is 1 for positive
  arguments and 0 otherwise;
* the gradient reaching the weights is dL/dI (the adjusted input current),
  which for inhibitory layers also carries the current unit's dependence on
  ``I``.  For LIF layers dL/dI equals dL/dU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .neuron import (
    LayerMismatchError,
    NeuronParams,
    StepRecord,
    heaviside,
    ramp,
    sigma,
    sigma_prime,
    surrogate_grad,
)

ORACLE_MAX_T = 8
ORACLE_MAX_N = 8


@dataclass
class LayerTape:
    """Everything one layer's forward pass recorded, stacked over time.

    Arrays are shaped ``(T, batch, neurons)``; ``inputs`` is
    ``(T, batch, fan_in)``.  The initial state is zero by construction.
    """

    inputs: np.ndarray
    current: np.ndarray
    potential: np.ndarray
    spikes: np.ndarray
    m_bar: np.ndarray
    m_post: np.ndarray
    u_inhib: np.ndarray
    i_inhib: np.ndarray
    weights_snapshot: np.ndarray
    params: NeuronParams
    twin: bool = False

    @property
    def T(self) -> int:
        return self.potential.shape[0]

    @property
    def steps(self) -> List[StepRecord]:
        return [
            StepRecord(
                self.current[t],
                self.potential[t],
                self.spikes[t],
                self.m_bar[t],
                self.m_post[t],
                self.u_inhib[t],
                self.i_inhib[t],
            )
            for t in range(self.T)
        ]

    @property
    def spike_fn(self):
        return ramp if self.twin else heaviside

    def previous(self, name: str) -> np.ndarray:
        """The state array shifted one step later, with zeros at t = 1."""
        arr = getattr(self, name)
        prev = np.zeros_like(arr)
        prev[1:] = arr[:-1]
        return prev

    @classmethod
    def from_steps(cls, inputs, steps, weights, params, twin=False) -> "LayerTape":
        def stack(name):
            return np.stack([getattr(s, name) for s in steps])

        return cls(
            inputs=np.asarray(inputs, dtype=float),
            current=stack("current"),
            potential=stack("potential"),
            spikes=stack("spikes"),
            m_bar=stack("m_bar"),
            m_post=stack("m_post"),
            u_inhib=stack("u_inhib_post"),
            i_inhib=stack("i_inhib_post"),
            weights_snapshot=np.array(weights, dtype=float),
            params=params,
            twin=twin,
        )


@dataclass
class GradientReport:
    """Per-layer gradients, ordered from the first layer to the last.

    ``ds_in`` is dL/dS of the layer below the first reported layer (the
    network input when the report covers the whole network).
    """

    weight_grads: List[np.ndarray] = field(default_factory=list)
    du_trace: List[np.ndarray] = field(default_factory=list)
    phi_trace: List[np.ndarray] = field(default_factory=list)
    decay_grads: List[float] = field(default_factory=list)
    ds_in: Optional[np.ndarray] = None

    def prepend(self, layer: "GradientReport") -> "GradientReport":
        return GradientReport(
            layer.weight_grads + self.weight_grads,
            layer.du_trace + self.du_trace,
            layer.phi_trace + self.phi_trace,
            layer.decay_grads + self.decay_grads,
            layer.ds_in,
        )

    def all_finite(self) -> bool:
        arrays = self.weight_grads + self.du_trace + self.phi_trace
        return all(np.all(np.isfinite(a)) for a in arrays) and all(
            np.isfinite(g) for g in self.decay_grads
        )


def _check_ds(tape: LayerTape, ds_out) -> np.ndarray:
    ds_out = np.asarray(ds_out, dtype=float)
    if ds_out.shape != tape.spikes.shape:
        raise LayerMismatchError(
            f"ds_out has shape {ds_out.shape}, tape spikes have shape {tape.spikes.shape}"
        )
    return ds_out


def _finish(tape: LayerTape, du, di, phi) -> GradientReport:
    """Accumulate weight, decay and input gradients in fixed order t = T..1."""
    w = tape.weights_snapshot
    m_prev = tape.previous("m_post")
    dw = np.zeros_like(w)
    dlam = 0.0
    for t in range(tape.T - 1, -1, -1):
        dw += di[t].T @ tape.inputs[t]
        dlam += float(np.sum(du[t] * m_prev[t]))
    ds_in = di @ w
    return GradientReport([dw], [du], [phi], [dlam], ds_in)


def backward_lif(tape: LayerTape, ds_out) -> GradientReport:
    """Reverse pass of a LIF / PLIF layer.

    dL/dU[t] = dL/dS[t] H'(U[t]) + dL/dU[t+1] * lam * eps[t] with
    eps = 1 - v_th H'(U), started from the spatial term alone at t = T.
    """
    if tape.params.variant.inhibitory:
        raise ValueError("backward_lif needs a LIF or PLIF tape")
    ds_out = _check_ds(tape, ds_out)
    p = tape.params
    du = np.zeros_like(tape.potential)
    gm = np.zeros_like(tape.potential[0])
    for t in range(tape.T - 1, -1, -1):
        h = surrogate_grad(tape.potential[t], p)
        eps = 1.0 - p.v_th * h
        du[t] = ds_out[t] * h + gm * eps
        gm = p.decay * du[t]
    return _finish(tape, du, du, np.zeros_like(du))


def backward_ilif(tape: LayerTape, ds_out) -> GradientReport:
    """Reverse pass of an ILIF / IPLIF layer.

    On top of the LIF recursion this carries dL/dU_inh and dL/dI_inh back
    in time and adds their contribution

        phi[t] = dL/dU_inh[t] * xi[t] + dL/dI_inh[t] * delta[t]
        xi[t]    = lam_u * (S[t] eps[t] + m_bar[t] H'(U[t]))
        delta[t] = lam_i * I[t] H'(U[t])

    to dL/dU[t].  dL/dU_inh[t] is the total adjoint of the unit, i.e. it
    includes the sigmoid reset ``m = m_bar - S sigma(U_inh)``.  The current
    unit's self-recursion is kept exactly.
    """
    p = tape.params
    if not p.variant.inhibitory:
        raise ValueError("backward_ilif needs an ILIF or IPLIF tape")
    ds_out = _check_ds(tape, ds_out)
    mpiu = p.mpiu_enabled
    rect = tape.previous("i_inhib") > 0

    du = np.zeros_like(tape.potential)
    di = np.zeros_like(tape.potential)
    phi = np.zeros_like(tape.potential)
    gm = np.zeros_like(tape.potential[0])
    g_uu = np.zeros_like(gm)
    g_ii = np.zeros_like(gm)
    for t in range(tape.T - 1, -1, -1):
        u = tape.potential[t]
        s = tape.spikes[t]
        h = surrogate_grad(u, p)
        eps = 1.0 - p.v_th * h
        xi = p.lam_u * (s * eps + tape.m_bar[t] * h)
        delta = p.lam_i * tape.current[t] * h
        a_ii = g_ii
        if mpiu:
            uu = tape.u_inhib[t]
            a_uu = g_uu - s * sigma_prime(uu) * gm
            eps_m = eps - sigma(uu) * h
        else:
            a_uu = np.zeros_like(gm)
            eps_m = eps
        phi[t] = a_uu * xi + a_ii * delta
        du[t] = ds_out[t] * h + gm * eps_m + phi[t]
        di[t] = du[t] + p.lam_i * s * a_ii
        gm = p.decay * du[t]
        g_uu = p.lam_u * a_uu
        g_ii = p.lam_i * a_ii - np.where(rect[t], di[t], 0.0)
    return _finish(tape, du, di, phi)


def backward_layer(tape: LayerTape, ds_out) -> GradientReport:
    if tape.params.variant.inhibitory:
        return backward_ilif(tape, ds_out)
    return backward_lif(tape, ds_out)


# ---------------------------------------------------------------------------
# literal-summation oracle


def _lif_path_products(tape: LayerTape) -> np.ndarray:
    """prod_{t''=t+1}^{t'} lam * eps[t''-1] for every (t, t'), shape (T, T, B, N).

    Entry ``[t, t']`` is defined for t' >= t; the empty product (t' = t) is 1.
    Each product is multiplied out from scratch.
    """
    p = tape.params
    T = tape.T
    eps = 1.0 - p.v_th * surrogate_grad(tape.potential, p)
    out = np.zeros((T, T) + tape.potential.shape[1:])
    for t in range(T):
        for tp in range(t, T):
            prod = np.ones(tape.potential.shape[1:])
            for tpp in range(t + 1, tp + 1):
                prod = prod * (p.decay * eps[tpp - 1])
            out[t, tp] = prod
    return out


def lif_temporal_terms(tape: LayerTape, ds_out) -> np.ndarray:
    """Every summand dL/dS[t'] H'(U[t']) prod(lam eps) of the LIF gradient.

    Shape ``(T, T, batch, neurons)``; entry ``[t, t']`` is the contribution of
    step ``t'`` to dL/dU[t] (zero for t' < t).  Off-diagonal entries are the
    temporal terms.
    """
    ds_out = _check_ds(tape, ds_out)
    h = surrogate_grad(tape.potential, tape.params)
    prods = _lif_path_products(tape)
    terms = np.zeros_like(prods)
    for t in range(tape.T):
        for tp in range(t, tape.T):
            terms[t, tp] = ds_out[tp] * h[tp] * prods[t, tp]
    return terms


def _local_jacobians(tape: LayerTape):
    """Per-step partial derivatives used by the oracle, elementwise per neuron.

    Returns a dict of arrays shaped ``(T, B, N)`` (3x3 Jacobians are
    ``(T, B, N, 3, 3)``), state order ``(m, U_inh, I_inh)``.
    """
    p = tape.params
    u = tape.potential
    s = tape.spikes
    h = surrogate_grad(u, p)
    eps = 1.0 - p.v_th * h
    rect = (tape.previous("i_inhib") > 0).astype(float)
    mpiu = p.mpiu_enabled
    uu = tape.u_inhib
    sig = sigma(uu) if mpiu else np.zeros_like(uu)
    dsig = sigma_prime(uu) if mpiu else np.zeros_like(uu)

    # derivatives of the step's outputs w.r.t. U[t], holding I[t] and the
    # previous state fixed
    dUinh_dU = p.lam_u * (h * tape.m_bar + s * eps)
    dm_dU = eps - h * sig - s * dsig * dUinh_dU
    dIinh_dU = p.lam_i * tape.current * h
    # w.r.t. I[t] directly (only the current unit sees I outside of U)
    dIinh_dI = p.lam_i * s
    # w.r.t. the previous state directly, not through U or I
    dm_dUprev = -s * dsig * p.lam_u if mpiu else np.zeros_like(u)
    dUinh_dUprev = np.full_like(u, p.lam_u)
    dIinh_dIprev = np.full_like(u, p.lam_i)

    # U[t] and I[t] as functions of the previous state
    dU_dprev = np.stack([np.full_like(u, p.decay), np.zeros_like(u), -rect], axis=-1)
    dI_dprev = np.stack([np.zeros_like(u), np.zeros_like(u), -rect], axis=-1)

    out_dU = np.stack([dm_dU, dUinh_dU, dIinh_dU], axis=-1)
    out_dI = np.stack([np.zeros_like(u), np.zeros_like(u), dIinh_dI], axis=-1)
    direct = np.zeros(u.shape + (3, 3))
    direct[..., 0, 1] = dm_dUprev
    direct[..., 1, 1] = dUinh_dUprev
    direct[..., 2, 2] = dIinh_dIprev
    jac = (
        out_dU[..., :, None] * dU_dprev[..., None, :]
        + out_dI[..., :, None] * dI_dprev[..., None, :]
        + direct
    )
    return {
        "h": h,
        "eps": eps,
        "out_dU": out_dU,
        "out_dI": out_dI,
        "dU_dprev": dU_dprev,
        "jac": jac,
        "dUinh_dU": dUinh_dU,
        "dIinh_dU": dIinh_dU,
        "dsig": dsig,
    }


def unrolled_gradient_oracle(
    tape: LayerTape, ds_out, approximate_ciu: bool = False
) -> GradientReport:
    """Reference gradient as an explicit sum over (t, t') pairs.

    For a LIF tape this is the closed form

        dL/dU[t] = sum_{t'=t}^{T} dL/dS[t'] H'(U[t']) prod_{t''=t+1}^{t'} lam eps[t''-1].

    For an ILIF tape the per-step scalar ``lam * eps`` becomes a 3x3
    Jacobian over ``(m, U_inh, I_inh)``: the sensitivity of the loss to the
    state after step ``t`` is the sum over later steps ``t'`` of that step's
    loss sensitivity pushed through the product of Jacobians between them.
    Each product is multiplied out afresh.  ``approximate_ciu`` replaces the
    current-unit adjoint by its one-step term only (valid for small lam_i).
    """
    ds_out = _check_ds(tape, ds_out)
    T, B, N = tape.potential.shape
    if T > ORACLE_MAX_T or N > ORACLE_MAX_N:
        raise ValueError(f"oracle limited to T <= {ORACLE_MAX_T}, N <= {ORACLE_MAX_N}")
    p = tape.params

    if not p.variant.inhibitory:
        terms = lif_temporal_terms(tape, ds_out)
        du = terms.sum(axis=1)
        return _finish(tape, du, du, np.zeros_like(du))

    J = _local_jacobians(tape)
    h = J["h"]
    # loss sensitivity of step t' to the state entering it
    e = (ds_out * h)[..., None] * J["dU_dprev"]

    du = np.zeros_like(tape.potential)
    di = np.zeros_like(tape.potential)
    phi = np.zeros_like(tape.potential)
    for t in range(T):
        # g = dL/d(m, U_inh, I_inh)[t] through all later steps
        g = np.zeros((B, N, 3))
        for tp in range(t + 1, T):
            row = e[tp]
            for k in range(tp - 1, t, -1):
                row = np.einsum("bni,bnij->bnj", row, J["jac"][k])
            g = g + row
        if approximate_ciu:
            g[..., 2] = e[t + 1][..., 2] if t + 1 < T else 0.0
        a_m, a_uu_state, a_ii = g[..., 0], g[..., 1], g[..., 2]
        a_uu = a_uu_state - tape.spikes[t] * J["dsig"][t] * a_m
        phi[t] = a_uu * J["dUinh_dU"][t] + a_ii * J["dIinh_dU"][t]
        du[t] = ds_out[t] * h[t] + np.einsum("bni,bni->bn", g, J["out_dU"][t])
        di[t] = du[t] + np.einsum("bni,bni->bn", g, J["out_dI"][t])
    return _finish(tape, du, di, phi)


def shortcut_attenuation(tape: LayerTape, from_t: int, to_t: int) -> float:
    """Product of dU_inh[t+1]/dU_inh[t] along the membrane-inhibition chain.

    Steps are 0-based indices into the tape.  The direct partial of the unit
    on its previous value is ``lam_u``, so the product over a span is
    ``lam_u ** span``; with ``lam_u = 1`` the shortcut carries gradient back
    without any decay.
    """
    if not tape.params.variant.inhibitory:
        raise ValueError("shortcut attenuation is defined for ILIF tapes")
    if not (0 <= to_t <= from_t < tape.T):
        raise IndexError(f"need 0 <= to_t <= from_t < {tape.T}, got {to_t}, {from_t}")
    prod = 1.0
    for _ in range(to_t, from_t):
        prod *= tape.params.lam_u
    return prod


__all__ = [
    "LayerTape",
    "GradientReport",
    "backward_lif",
    "backward_ilif",
    "backward_layer",
    "lif_temporal_terms",
    "unrolled_gradient_oracle",
    "shortcut_attenuation",
]
