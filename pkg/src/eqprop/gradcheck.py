"""Estimator verification harness: compares the two-phase estimators
against the finite-difference loss-gradient oracle over a sweep of nudge
strengths, and checks the bias-order ratios when the sweep halves beta.

The test nets are small dense chains driven into the interior of the
clipped-ReLU range (positive weights, positive inputs) so that the
dynamics are smooth around the equilibria being compared.
"""

import csv

import numpy as np

from . import data as dt
from . import energy as en
from . import gradients as gr
from . import relaxation as rx
from . import topology as tp


def interior_dense_net(dims, seed, gain=0.5, batch=2, dtype=np.float64):
    """A dense chain whose hidden pre-activations stay strictly inside
    (0, alpha): positive weights, positive inputs, small spectral scale."""
    rng = np.random.default_rng(seed)
    top = tp.build_dense_chain(list(dims))
    weights = {}
    for e in top.edges:
        shape = top.param_shape(e)
        k = gain / np.sqrt(shape[1])
        weights[e.param_id] = rng.uniform(0.3 * k, k, size=shape).astype(dtype)
    params = en.Parameters(weights=weights)
    x = rng.uniform(0.5, 1.0, size=(batch, dims[0])).astype(dtype)
    labels = rng.integers(0, dims[-1], size=batch)
    y = dt.one_hot(labels, dims[-1], dtype=dtype)
    return top, params, x, y


def converged_phases(top, params, x, y, beta, tol=1e-12, max_steps=20000):
    """Free, +beta and -beta equilibria, all relaxed to tolerance so that
    estimator bias is not confounded with truncation error."""
    free = rx.relax_to_tolerance(top, params, x, tol=tol, max_steps=max_steps)
    pos = rx.relax_to_tolerance(top, params, x, tol=tol, max_steps=max_steps,
                                init_states=free, nudge=(beta, y))
    neg = rx.relax_to_tolerance(top, params, x, tol=tol, max_steps=max_steps,
                                init_states=free, nudge=(-beta, y))
    return free, pos, neg


def estimator_errors(top, params, x, y, betas, epsilon=1e-4):
    """Max relative error of the one-sided and centered estimates against
    the finite-difference oracle, per beta."""
    oracle = gr.fd_loss_gradient_oracle(top, params, x, y, epsilon=epsilon)
    rows = []
    for beta in betas:
        free, pos, neg = converged_phases(top, params, x, y, beta)
        ep = gr.ep_gradient_onesided(top, params, free, pos, beta)
        cep = gr.cep_gradient(top, params, pos, neg, beta)
        rows.append({
            "beta": beta,
            "ep_err": gr.max_relative_error(ep, oracle),
            "cep_err": gr.max_relative_error(cep, oracle),
        })
    return rows, oracle


def halving_ratios(rows, key):
    """Error ratios between consecutive betas that halve."""
    ratios = []
    for a, b in zip(rows, rows[1:]):
        if abs(a["beta"] - 2 * b["beta"]) < 1e-12:
            ratios.append((a["beta"], b["beta"], a[key] / max(b[key], 1e-300)))
    return ratios


def run_gradcheck(gc_cfg, dims=(8, 6, 4), csv_path=None):
    """Run the sweep over several seeds and apply the bias-order gate on
    the final beta-halving pair.  Returns (all_rows, passed)."""
    betas = sorted(gc_cfg.betas, reverse=True)
    all_rows = []
    ep_ok = cep_ok = 0
    singleton = len(betas) < 2
    for seed in range(gc_cfg.seeds):
        top, params, x, y = interior_dense_net(dims, seed)
        n_params = sum(w.size for w in params.weights.values())
        if n_params > gc_cfg.param_cap:
            raise ValueError(f"{n_params} parameters exceeds cap {gc_cfg.param_cap}")
        rows, _ = estimator_errors(top, params, x, y, betas, epsilon=gc_cfg.epsilon)
        for r in rows:
            r["seed"] = seed
        all_rows.extend(rows)
        if not singleton:
            cep_r = halving_ratios(rows, "cep_err")
            ep_r = halving_ratios(rows, "ep_err")
            if cep_r and gc_cfg.cep_band[0] <= cep_r[-1][2] <= gc_cfg.cep_band[1]:
                cep_ok += 1
            if ep_r and gc_cfg.onesided_band[0] <= ep_r[-1][2] <= gc_cfg.onesided_band[1]:
                ep_ok += 1
    if csv_path:
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["seed", "estimator", "beta", "max_rel_error"])
            for r in all_rows:
                w.writerow([r["seed"], "EP_ONESIDED", r["beta"], repr(r["ep_err"])])
                w.writerow([r["seed"], "CEP", r["beta"], repr(r["cep_err"])])
    if singleton:
        return all_rows, True
    need = min(3, gc_cfg.seeds)
    return all_rows, (cep_ok >= need and ep_ok >= need)
