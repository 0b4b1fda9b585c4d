import numpy as np
import pytest

from eqprop import energy as en
from eqprop import topology as tp


def fd_state_grad(top, params, states, n, eps=1e-5):
    """Central finite difference of the summed energy wrt every entry of
    state n (independent oracle for pre_activation)."""
    s = states[n]
    flat = s.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        ep = en.energy(top, params, states).sum()
        flat[i] = orig - eps
        em = en.energy(top, params, states).sum()
        flat[i] = orig
        grad[i] = (ep - em) / (2 * eps)
    return grad.reshape(s.shape)


def fd_param_grad(top, params, states, eps=1e-5):
    """Central finite difference of the batch-mean energy wrt every weight
    entry (independent oracle for param_energy_grad)."""
    grads = {}
    for pid, w in params.weights.items():
        flat = w.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            ep = en.energy(top, params, states).mean()
            flat[i] = orig - eps
            em = en.energy(top, params, states).mean()
            flat[i] = orig
            g[i] = (ep - em) / (2 * eps)
        grads[pid] = g.reshape(w.shape)
    return grads


def scaled_max_rel_error(approx, exact, floor=1e-12):
    """Max |approx - exact| normalized by the max magnitude of exact."""
    scale = max(float(np.abs(exact).max()), floor)
    return float(np.abs(approx - exact).max()) / scale


def random_states(top, rng, batch=2, frac=0.5):
    """Random interior states: input in [0,1], others in [0, frac*alpha]."""
    states = [rng.uniform(0.0, 1.0, size=(batch,) + tuple(top.states[0].shape))]
    for s in top.states[1:]:
        hi = frac * (s.alpha if s.alpha is not None else 1.0)
        states.append(rng.uniform(0.0, hi, size=(batch,) + tuple(s.shape)))
    return states


def small_resnet(seed=0, blocks_channels=(4, 4, 8, 8), hw=16, gain=0.5):
    rng = np.random.default_rng(seed)
    top = tp.build_hopfield_resnet13((3, hw, hw), list(blocks_channels), 10)
    params = en.init_parameters(top, rng, gain=gain)
    return top, params, rng


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
