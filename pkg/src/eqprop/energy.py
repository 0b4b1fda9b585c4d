"""Scalar energy of a topology and the state dynamics it induces.

The energy is a bilinear form: one dot-product summand per edge, coupling
the to-state with the (pooled) forward map of the from-state.  The
per-state gradient of this energy is the pre-activation that drives both
the synchronous and the even/odd asynchronous update schedulers.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensors as T
from . import topology as tp


@dataclass
class Parameters:
    """Trainable tensors keyed by edge param_id, plus optional per-state
    channel biases (linear energy term, default off)."""

    weights: dict
    biases: dict = field(default_factory=dict)

    def copy(self):
        return Parameters(
            weights={k: v.copy() for k, v in self.weights.items()},
            biases={k: v.copy() for k, v in self.biases.items()},
        )

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    def astype(self, dtype):
        return Parameters(
            weights={k: v.astype(dtype) for k, v in self.weights.items()},
            biases={k: v.astype(dtype) for k, v in self.biases.items()},
        )


def init_parameters(topology, rng, gain=0.5, dtype=np.float64, bias=False):
    """Uniform init in [-k, k] with k = gain / sqrt(fan_in) per tensor."""
    weights = {}
    for e in topology.edges:
        if e.param_id is None:
            continue
        shape = topology.param_shape(e)
        if e.op == tp.DENSE:
            fan_in = shape[1]
        else:
            fan_in = shape[1] * shape[2] * shape[3]
        k = gain / np.sqrt(fan_in)
        weights[e.param_id] = rng.uniform(-k, k, size=shape).astype(dtype)
    biases = {}
    if bias:
        for s in topology.states[1:]:
            biases[s.index] = np.zeros(s.shape[0], dtype=dtype)
    return Parameters(weights=weights, biases=biases)


def init_states(topology, x):
    """Zero-initialized states with state 0 clamped to the input batch."""
    if tuple(x.shape[1:]) != tuple(topology.states[0].shape):
        raise ValueError(
            f"input shape {x.shape[1:]} does not match state 0 {topology.states[0].shape}"
        )
    n = x.shape[0]
    states = [x]
    for s in topology.states[1:]:
        states.append(np.zeros((n,) + tuple(s.shape), dtype=x.dtype))
    return states


def _kernel(params, edge):
    w = params.weights[edge.param_id]
    return T.ConvKernel(w, padding=(w.shape[2] - 1) // 2)


def edge_forward(topology, params, edge, s_from):
    """Forward map of an edge applied to the from-state: conv/dense plus
    pooling when flagged.  Returns (output, pool_indices or None)."""
    if edge.op == tp.DENSE:
        return T.dense(params.weights[edge.param_id], s_from), None
    if edge.op == tp.IDENTITY_SKIP:
        out = s_from
    else:
        out = T.conv2d(_kernel(params, edge), s_from)
    if edge.pooled:
        return T.maxpool2(out)
    return out, None


def edge_adjoint(topology, params, edge, s_to, pool_indices):
    """Adjoint of the edge's forward map applied to the to-state, using the
    pooling argmax positions captured from the current forward pass."""
    u = s_to
    if edge.op == tp.DENSE:
        out = T.dense_transpose(params.weights[edge.param_id], u)
        return out.reshape((u.shape[0],) + tuple(topology.states[edge.from_state].shape))
    if edge.pooled:
        u = T.inverse_maxpool2(u, pool_indices)
    if edge.op == tp.IDENTITY_SKIP:
        return u
    return T.conv2d_transpose(_kernel(params, edge), u)


def _dot_batch(a, b):
    n = a.shape[0]
    return np.einsum("ij,ij->i", a.reshape(n, -1), b.reshape(n, -1))


def energy(topology, params, states):
    """Per-sample scalar energy: sum over edges of dot(to_state,
    forward(edge, from_state)), plus optional linear bias terms."""
    n = states[0].shape[0]
    phi = np.zeros(n, dtype=states[0].dtype)
    for e in topology.edges:
        fwd, _ = edge_forward(topology, params, e, states[e.from_state])
        phi += _dot_batch(fwd, states[e.to_state])
    for idx, b in params.biases.items():
        s = states[idx]
        if s.ndim == 4:
            phi += np.einsum("nchw,c->n", s, b)
        else:
            phi += s @ b
    return phi


def pre_activations(topology, params, states, subset=None):
    """Energy gradient with respect to each requested state: incoming edge
    forward maps plus outgoing edge adjoints.  Returns {index: array}."""
    if subset is None:
        subset = topology.updatable_indices()
    want = set(subset)
    acc = {}
    for n in want:
        if n == 0:
            raise ValueError("state 0 is clamped and has no dynamics")
        acc[n] = np.zeros_like(states[n])
    for e in topology.edges:
        need_fwd = e.to_state in want
        need_adj = e.from_state in want and e.from_state != 0
        if not (need_fwd or need_adj):
            continue
        fwd, idx = edge_forward(topology, params, e, states[e.from_state])
        if need_fwd:
            acc[e.to_state] += fwd.reshape(acc[e.to_state].shape)
        if need_adj:
            acc[e.from_state] += edge_adjoint(topology, params, e, states[e.to_state], idx)
    for n in want:
        if n in params.biases:
            b = params.biases[n]
            acc[n] += b[:, None, None] if acc[n].ndim == 4 else b
    return acc


def pre_activation(topology, params, states, n):
    """Energy gradient with respect to state n alone."""
    return pre_activations(topology, params, states, subset=[n])[n]


def step_synchronous(topology, params, states, nudge=None):
    """One simultaneous update of every updatable state from the current
    states.  nudge is an optional (beta, target) pair pulling the output."""
    pre = pre_activations(topology, params, states)
    new_states = list(states)
    _apply_update_into(topology, states, new_states, pre, nudge)
    return new_states


def _apply_update_into(topology, old_states, new_states, pre, nudge):
    """Write activated updates for every index present in pre."""
    out_idx = topology.output_index
    for n, p in pre.items():
        alpha = topology.states[n].alpha
        if n == out_idx:
            new = p
            if nudge is not None:
                beta, target = nudge
                new = new + beta * (target - old_states[n])
            if alpha is not None:
                new = T.relu_alpha(new, alpha)
        else:
            new = T.relu_alpha(p, alpha) if alpha is not None else p
        T.ensure_finite(new, f"state {n} after update")
        new_states[n] = new


def step_asynchronous(topology, params, states, nudge=None):
    """Even/odd scheduler: even-indexed updatable states are refreshed first
    from the current states, then odd-indexed states from the refreshed
    ones."""
    even = [n for n in topology.updatable_indices() if n % 2 == 0]
    odd = [n for n in topology.updatable_indices() if n % 2 == 1]
    half = list(states)
    if even:
        pre = pre_activations(topology, params, states, subset=even)
        _apply_update_into(topology, states, half, pre, nudge)
    new_states = list(half)
    if odd:
        pre = pre_activations(topology, params, half, subset=odd)
        _apply_update_into(topology, half, new_states, pre, nudge)
    return new_states
