"""Parameter-gradient estimators: one-sided and centered two-phase
contrastive estimates, plus a finite-difference oracle for verification.

Sign convention: every estimator returns +dL/dtheta, so an optimizer
descends by subtracting it.  Batch reduction is the mean.
"""

from dataclasses import dataclass

import numpy as np

from . import energy as en
from . import relaxation as rx
from . import tensors as T
from . import topology as tp

EP_ONESIDED = "EP_ONESIDED"
CEP = "CEP"
FD_ORACLE = "FD_ORACLE"


@dataclass
class GradientEstimate:
    grads: dict
    estimator: str
    beta: float

    def __post_init__(self):
        for k, g in self.grads.items():
            T.ensure_finite(g, f"gradient {k}")


def param_energy_grad(topology, params, states):
    """Analytic gradient of the mean per-sample energy with respect to every
    weight tensor, states held fixed."""
    n = states[0].shape[0]
    grads = {}
    for e in topology.edges:
        if e.param_id is None:
            continue
        s_from = states[e.from_state]
        s_to = states[e.to_state]
        if e.op == tp.DENSE:
            g = T.dense_weight_grad(s_from, s_to)
        else:
            kernel = en._kernel(params, e)
            u = s_to.reshape((n,) + tuple(topology.states[e.to_state].shape))
            if e.pooled:
                # scatter the to-state through this step's argmax positions
                fwd = T.conv2d(kernel, s_from)
                _, idx = T.maxpool2(fwd)
                u = T.inverse_maxpool2(u, idx)
            g = T.conv2d_weight_grad(kernel, s_from, u)
        grads[e.param_id] = g / n
    return grads


def bias_energy_grad(topology, params, states):
    """Per-channel gradient of the mean energy with respect to the optional
    state biases."""
    n = states[0].shape[0]
    grads = {}
    for idx in params.biases:
        s = states[idx]
        if s.ndim == 4:
            grads[idx] = s.sum(axis=(0, 2, 3)) / n
        else:
            grads[idx] = s.sum(axis=0) / n
    return grads


def _contrast(topology, params, states_a, states_b, scale):
    ga = param_energy_grad(topology, params, states_a)
    gb = param_energy_grad(topology, params, states_b)
    return {k: scale * (ga[k] - gb[k]) for k in ga}


def ep_gradient_onesided(topology, params, free_states, nudged_states, beta):
    """One-sided estimate: -(1/beta) * (grad_Phi at the nudged equilibrium
    minus grad_Phi at the free equilibrium)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    grads = _contrast(topology, params, nudged_states, free_states, -1.0 / beta)
    return GradientEstimate(grads=grads, estimator=EP_ONESIDED, beta=beta)


def cep_gradient(topology, params, pos_states, neg_states, beta):
    """Centered estimate: -(1/2 beta) * (grad_Phi at the +beta equilibrium
    minus grad_Phi at the -beta equilibrium)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    grads = _contrast(topology, params, pos_states, neg_states, -0.5 / beta)
    return GradientEstimate(grads=grads, estimator=CEP, beta=beta)


def squared_error_loss(output, target):
    """Per-sample 0.5 * ||output - target||^2."""
    d = output - target
    return 0.5 * np.einsum("ij,ij->i", d, d)


def loss_at_equilibrium(topology, params, x, target, tol=1e-10, max_steps=5000):
    """Mean squared-error loss at the fully converged free equilibrium."""
    states = rx.relax_to_tolerance(topology, params, x, tol=tol, max_steps=max_steps)
    return float(squared_error_loss(states[topology.output_index], target).mean())


def fd_loss_gradient_oracle(topology, params, x, target, epsilon=1e-4,
                            tol=1e-10, max_steps=5000, max_params=5000):
    """Central finite difference of the loss at the free equilibrium with
    respect to every weight entry.  Desk-scale nets only: each entry costs
    two full relaxations."""
    n_params = sum(w.size for w in params.weights.values())
    if n_params > max_params:
        raise ValueError(f"{n_params} parameters exceeds oracle cap {max_params}")
    grads = {}
    for pid, w in params.weights.items():
        g = np.zeros_like(w)
        flat_w = w.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_w.size):
            orig = flat_w[i]
            flat_w[i] = orig + epsilon
            lp = loss_at_equilibrium(topology, params, x, target, tol, max_steps)
            flat_w[i] = orig - epsilon
            lm = loss_at_equilibrium(topology, params, x, target, tol, max_steps)
            flat_w[i] = orig
            flat_g[i] = (lp - lm) / (2 * epsilon)
        grads[pid] = g
    return GradientEstimate(grads=grads, estimator=FD_ORACLE, beta=0.0)


def max_relative_error(estimate, reference, floor=1e-12):
    """Max over parameters of |est - ref| / max(|ref|, floor), with the
    reference scale taken per tensor."""
    worst = 0.0
    for k, ref in reference.grads.items() if isinstance(reference, GradientEstimate) else reference.items():
        est = estimate.grads[k] if isinstance(estimate, GradientEstimate) else estimate[k]
        scale = max(float(np.abs(ref).max()), floor)
        worst = max(worst, float(np.abs(est - ref).max()) / scale)
    return worst
