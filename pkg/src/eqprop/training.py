"""End-to-end training: augmentation, two-phase relaxation, contrastive
gradient, Nesterov update, evaluation, checkpointing and weight
diagnostics."""

import csv
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import data as dt
from . import energy as en
from . import gradients as gr
from . import relaxation as rx
from .relaxation import RelaxationConfig

BETA_HARD_RANGE = (0.0, 0.8)
BETA_STABLE_RANGE = (0.1, 0.4)


class TrainingDiverged(RuntimeError):
    """Raised when the training loss goes non-finite mid-epoch."""


@dataclass
class AugmentConfig:
    crop: bool = True
    crop_pad: int = 4
    flip: bool = True
    normalize: bool = True
    erase: bool = False
    erase_area: tuple = (0.02, 0.10)


@dataclass
class TrainingConfig:
    beta: float = 0.25
    epochs: int = 20
    batch_size: int = 128
    lr_base: float = 0.05
    lr_growth: float = 1.0  # per-depth geometric factor on the learning rate
    momentum: float = 0.9
    weight_decay: float = 0.0
    estimator: str = gr.CEP
    seed: int = 0
    cosine_lr: bool = True
    relaxation: RelaxationConfig = field(default_factory=RelaxationConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        lo, hi = BETA_HARD_RANGE
        if not (lo < self.beta < hi):
            raise ValueError(
                f"beta {self.beta} outside the usable range ({lo}, {hi}); "
                f"values >= {hi} prevent learning progress"
            )
        slo, shi = BETA_STABLE_RANGE
        if not (slo <= self.beta <= shi):
            import warnings
            warnings.warn(
                f"beta {self.beta} outside the stable range [{slo}, {shi}]",
                stacklevel=2,
            )
        if self.estimator not in (gr.CEP, gr.EP_ONESIDED):
            raise ValueError(f"unknown estimator {self.estimator}")


@dataclass
class Model:
    topology: object
    params: en.Parameters


@dataclass
class OptimizerState:
    momentum: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(momentum={k: np.zeros_like(v) for k, v in params.weights.items()})


def layer_learning_rates(topology, base, growth):
    """Per-parameter learning rates: geometric in the depth rank of the
    edge's to-state."""
    depths = sorted({e.to_state for e in topology.edges if e.param_id is not None})
    rank = {d: i for i, d in enumerate(depths)}
    lrs = {}
    for e in topology.edges:
        if e.param_id is not None:
            lrs[e.param_id] = base * growth ** rank[e.to_state]
    return lrs


def nesterov_step(params, grads, opt_state, lr, momentum=0.0, weight_decay=0.0):
    """Nesterov momentum update with L2 decay folded into the gradient.
    lr is either a scalar or a per-param_id dict.  Updates in place and
    returns (params, opt_state)."""
    lrs = lr if isinstance(lr, dict) else {k: lr for k in params.weights}
    if any(v <= 0 for v in lrs.values()):
        raise ValueError("learning rates must be positive")
    for k, w in params.weights.items():
        d = grads[k] + weight_decay * w if weight_decay else grads[k]
        if momentum:
            buf = opt_state.momentum[k]
            buf *= momentum
            buf += d
            d = d + momentum * buf
        w -= lrs[k] * d
    opt_state.step += 1
    return params, opt_state


def cosine_lr_scale(epoch, total_epochs):
    """Cosine decay from 1 to 0 over the configured epoch count."""
    return 0.5 * (1.0 + np.cos(np.pi * epoch / max(total_epochs, 1)))


def normalization_stats(images):
    """Per-channel mean/std over a dataset."""
    mean = images.mean(axis=(0, 2, 3))
    std = images.std(axis=(0, 2, 3))
    return mean, np.where(std < 1e-8, 1.0, std)


def normalize(images, mean, std):
    return (images - mean[:, None, None]) / std[:, None, None]


def augment(images, rng, flags, mean=None, std=None):
    """Stochastic training-time pipeline: reflect-pad random crop, random
    horizontal flip, per-channel normalization, optional random erasing.
    Deterministic given the rng state."""
    if images.ndim != 4:
        # non-spatial inputs (dense toy tasks) are never augmented
        return images
    n, c, h, w = images.shape
    out = images
    if flags.crop:
        p = flags.crop_pad
        padded = np.pad(out, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
        ph, pw = padded.shape[2], padded.shape[3]
        ys = rng.integers(0, ph - h + 1, size=n)
        xs = rng.integers(0, pw - w + 1, size=n)
        out = np.stack([padded[i, :, ys[i]:ys[i] + h, xs[i]:xs[i] + w] for i in range(n)])
    if flags.flip:
        do = rng.random(n) < 0.5
        out = out.copy()
        out[do] = out[do, :, :, ::-1]
    if flags.normalize and mean is not None:
        out = normalize(out, mean, std)
    if flags.erase:
        out = out.copy()
        for i in range(n):
            area = rng.uniform(*flags.erase_area) * h * w
            eh = max(1, min(h, int(round(np.sqrt(area)))))
            ew = max(1, min(w, int(round(area / eh))))
            y = rng.integers(0, h - eh + 1)
            x = rng.integers(0, w - ew + 1)
            out[i, :, y:y + eh, x:x + ew] = 0.0
    return out


def _batch_metrics(topology, output, target, labels):
    loss = float(gr.squared_error_loss(output, target).mean())
    correct = int((output.argmax(axis=1) == labels).sum())
    return loss, correct


@dataclass
class EpochMetrics:
    loss: float
    accuracy: float
    free_residual: float
    nudge_residual: float
    wall_time_s: float


def train_epoch(model, dataset, config, opt_state, epoch=0, mean=None, std=None):
    """One pass over the dataset: augment, free relaxation, nudged
    relaxation(s), contrastive gradient, Nesterov step per batch."""
    top, params = model.topology, model.params
    rng = np.random.default_rng([config.seed, epoch])
    order = rng.permutation(len(dataset))
    lrs = layer_learning_rates(top, config.lr_base, config.lr_growth)
    if config.cosine_lr:
        scale = cosine_lr_scale(epoch, config.epochs)
        lrs = {k: max(v * scale, 1e-12) for k, v in lrs.items()}
    dtype = params.dtype
    t0 = time.time()
    total_loss = 0.0
    total_correct = 0
    free_res, nudge_res, n_batches = 0.0, 0.0, 0
    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        x = dataset.images[idx].astype(dtype)
        labels = dataset.labels[idx]
        x = augment(x, rng, config.augment, mean=mean, std=std)
        y = dt.one_hot(labels, dataset.class_count, dtype=dtype)
        free = rx.relax_free(top, params, x, config.relaxation, record_energy=False)
        output = free.states[top.output_index]
        loss, correct = _batch_metrics(top, output, y, labels)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss in epoch {epoch} at sample {start}")
        total_loss += loss * len(idx)
        total_correct += correct
        pos = rx.relax_nudged(top, params, x, y, config.beta, config.relaxation,
                              init_states=free.states, record_energy=False)
        if config.estimator == gr.CEP:
            neg = rx.relax_nudged(top, params, x, y, -config.beta, config.relaxation,
                                  init_states=free.states, record_energy=False)
            est = gr.cep_gradient(top, params, pos.states, neg.states, config.beta)
            nudge_res += 0.5 * (pos.trace.residuals[-1] + neg.trace.residuals[-1])
        else:
            est = gr.ep_gradient_onesided(top, params, free.states, pos.states, config.beta)
            nudge_res += pos.trace.residuals[-1]
        nesterov_step(params, est.grads, opt_state, lrs,
                      momentum=config.momentum, weight_decay=config.weight_decay)
        free_res += free.trace.residuals[-1]
        n_batches += 1
    n = len(order)
    metrics = EpochMetrics(
        loss=total_loss / n,
        accuracy=total_correct / n,
        free_residual=free_res / max(n_batches, 1),
        nudge_residual=nudge_res / max(n_batches, 1),
        wall_time_s=time.time() - t0,
    )
    return model, opt_state, metrics


def evaluate(model, dataset, relax_config, batch_size=256, mean=None, std=None):
    """Free-phase-only evaluation: normalization, relaxation, argmax."""
    top, params = model.topology, model.params
    dtype = params.dtype
    total_loss = 0.0
    total_correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start:start + batch_size].astype(dtype)
        labels = dataset.labels[start:start + batch_size]
        if mean is not None:
            x = normalize(x, mean.astype(dtype), std.astype(dtype))
        y = dt.one_hot(labels, dataset.class_count, dtype=dtype)
        res = rx.relax_free(top, params, x, relax_config, record_energy=False)
        loss, correct = _batch_metrics(top, res.states[top.output_index], y, labels)
        total_loss += loss * len(labels)
        total_correct += correct
    n = len(dataset)
    return {"loss": total_loss / n, "accuracy": total_correct / n}


def export_weight_histograms(params, bins=50):
    """Per-parameter histogram rows plus summary stats, ready for CSV."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    rows = []
    for pid, w in sorted(params.weights.items()):
        flat = w.reshape(-1)
        lo, hi = float(flat.min()), float(flat.max())
        if lo == hi:
            hi = lo + 1e-12
        counts, edges = np.histogram(flat, bins=bins, range=(lo, hi))
        rows.append({
            "param_id": pid,
            "count": int(flat.size),
            "mean": float(flat.mean()),
            "std": float(flat.std()),
            "near_zero_fraction": float((np.abs(flat) < 1e-3).mean()),
            "bin_edges": edges.tolist(),
            "bin_counts": counts.tolist(),
        })
    return rows


def write_histogram_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["param_id", "count", "mean", "std", "near_zero_fraction",
                    "bin_lo", "bin_hi", "bin_count"])
        for r in rows:
            edges, counts = r["bin_edges"], r["bin_counts"]
            for i, c in enumerate(counts):
                w.writerow([r["param_id"], r["count"], r["mean"], r["std"],
                            r["near_zero_fraction"], edges[i], edges[i + 1], c])


def rng_state_json(rng):
    st = rng.bit_generator.state
    return json.dumps(st)


def save_checkpoint(path, model, opt_state, epoch, config_hash="", rng=None):
    """Serialize parameters, optimizer buffers and bookkeeping; round-trips
    bit-exactly."""
    arrays = {}
    for k, v in model.params.weights.items():
        arrays[f"w::{k}"] = v
    for k, v in model.params.biases.items():
        arrays[f"b::{k}"] = v
    for k, v in opt_state.momentum.items():
        arrays[f"m::{k}"] = v
    meta = {
        "epoch": epoch,
        "step": opt_state.step,
        "config_hash": config_hash,
        "rng_state": rng_state_json(rng) if rng is not None else None,
    }
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path, topology):
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        weights, biases, momentum = {}, {}, {}
        for key in z.files:
            if key.startswith("w::"):
                weights[key[3:]] = z[key]
            elif key.startswith("b::"):
                biases[int(key[3:])] = z[key]
            elif key.startswith("m::"):
                momentum[key[3:]] = z[key]
    expected = set(topology.param_ids())
    if set(weights) != expected:
        raise ValueError(
            f"checkpoint parameters {sorted(weights)} do not match topology {sorted(expected)}"
        )
    for e in topology.edges:
        if e.param_id is None:
            continue
        shape = topology.param_shape(e)
        if tuple(weights[e.param_id].shape) != tuple(shape):
            raise ValueError(
                f"checkpoint tensor {e.param_id} has shape {weights[e.param_id].shape}, "
                f"topology expects {shape}"
            )
    params = en.Parameters(weights=weights, biases=biases)
    opt_state = OptimizerState(momentum=momentum, step=meta["step"])
    rng = None
    if meta.get("rng_state"):
        rng = np.random.default_rng()
        rng.bit_generator.state = json.loads(meta["rng_state"])
    return Model(topology=topology, params=params), opt_state, meta["epoch"], rng
