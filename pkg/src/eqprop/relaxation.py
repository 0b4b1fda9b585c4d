"""Free-phase and nudged-phase relaxation to (approximate) equilibrium.

Runs are fixed-length: the step budget, not a tolerance, decides when to
stop.  The residual tolerance only labels the result as converged or not
for diagnostics.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import energy as en

SCHEDULERS = ("synchronous", "asynchronous")


@dataclass
class RelaxationConfig:
    t_free: int = 120
    t_nudge: int = 50
    scheduler: str = "synchronous"
    residual_tolerance: float = 1e-6

    def __post_init__(self):
        if self.t_free < 1 or self.t_nudge < 1:
            raise ValueError("step budgets must be >= 1")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"scheduler must be one of {SCHEDULERS}")

    def step_fn(self):
        if self.scheduler == "synchronous":
            return en.step_synchronous
        return en.step_asynchronous


@dataclass
class RelaxationTrace:
    residuals: list = field(default_factory=list)
    energies: list = field(default_factory=list)

    @property
    def steps(self):
        return len(self.residuals)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "residual", "energy"])
            for i, (r, e) in enumerate(zip(self.residuals, self.energies), start=1):
                w.writerow([i, repr(r), repr(e)])


@dataclass
class EquilibriumResult:
    states: list
    trace: RelaxationTrace
    converged: bool


def residual(states_prev, states_next):
    """Max-norm of the state change across all states and entries."""
    if len(states_prev) != len(states_next):
        raise ValueError("state lists differ in length")
    r = 0.0
    for a, b in zip(states_prev, states_next):
        if a.shape != b.shape:
            raise ValueError(f"state shapes differ: {a.shape} vs {b.shape}")
        if a is not b:
            r = max(r, float(np.abs(b - a).max()))
    return r


def _run(topology, params, states, steps, step_fn, nudge, tol, record_energy=True):
    trace = RelaxationTrace()
    for _ in range(steps):
        new_states = step_fn(topology, params, states, nudge=nudge)
        trace.residuals.append(residual(states, new_states))
        if record_energy:
            trace.energies.append(float(en.energy(topology, params, new_states).mean()))
        else:
            trace.energies.append(float("nan"))
        states = new_states
    converged = bool(trace.residuals and trace.residuals[-1] < tol)
    return EquilibriumResult(states=states, trace=trace, converged=converged)


def relax_free(topology, params, x, config, init_states=None, record_energy=True):
    """Clamp state 0 to the input and run t_free steps with no label force."""
    if init_states is None:
        states = en.init_states(topology, x)
    else:
        states = list(init_states)
        states[0] = x
    return _run(
        topology, params, states, config.t_free, config.step_fn(), None,
        config.residual_tolerance, record_energy=record_energy,
    )


def relax_nudged(topology, params, x, target, beta, config, init_states=None,
                 record_energy=True):
    """Run t_nudge steps with the output pulled toward the target by
    beta * (target - output); beta may be negative but not zero."""
    if beta == 0:
        raise ValueError("beta must be nonzero; use relax_free for the free phase")
    out_dim = topology.states[topology.output_index].shape[0]
    if target.ndim != 2 or target.shape != (x.shape[0], out_dim):
        raise ValueError(f"target shape {target.shape} != ({x.shape[0]}, {out_dim})")
    if init_states is None:
        states = en.init_states(topology, x)
    else:
        states = list(init_states)
        states[0] = x
    return _run(
        topology, params, states, config.t_nudge, config.step_fn(),
        (beta, target), config.residual_tolerance, record_energy=record_energy,
    )


def relax_to_tolerance(topology, params, x, tol=1e-10, max_steps=5000,
                       scheduler="synchronous", init_states=None, nudge=None):
    """Iterate until the residual drops below tol (used by oracles that need
    a true equilibrium rather than a fixed budget)."""
    cfg = RelaxationConfig(t_free=1, t_nudge=1, scheduler=scheduler)
    step_fn = cfg.step_fn()
    states = en.init_states(topology, x) if init_states is None else list(init_states)
    states[0] = x
    for _ in range(max_steps):
        new_states = step_fn(topology, params, states, nudge=nudge)
        r = residual(states, new_states)
        states = new_states
        if r < tol:
            return states
    raise RuntimeError(f"relaxation did not reach residual {tol} in {max_steps} steps")
