"""Command-line entry point: train, eval, gradcheck and relax-diag."""

import csv
import os
import sys

import click
import numpy as np

from . import config as cf
from . import data as dt
from . import gradcheck as gc
from . import relaxation as rx
from . import topology as tp
from . import training as tr


def _load_run_config(config_path, out_dir, seed, precision):
    cfg = cf.load_config(config_path)
    if out_dir:
        cfg.out_dir = out_dir
    if seed is not None:
        cfg.training.seed = seed
    if precision:
        cfg.precision = precision
    return cfg


def _echo_config(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    cf.dump_config(cfg, os.path.join(cfg.out_dir, "config.yaml"))


def load_datasets(dc):
    """Build (train, test) datasets from a DataConfig."""
    if dc.dataset == "synthetic":
        sc = dc.synthetic
        train = dt.make_synthetic(sc.class_count, sc.per_class,
                                  tuple(sc.image_shape), sc.seed, noise=sc.noise)
        test = dt.make_synthetic(sc.class_count, sc.test_per_class,
                                 tuple(sc.image_shape), sc.seed + 10_000, noise=sc.noise)
        test.split = "test"
    elif dc.dataset == "idx":
        train = dt.load_idx(dc.train_images, dc.train_labels)
        test = dt.load_idx(dc.test_images, dc.test_labels, split="test")
    elif dc.dataset in ("cifar10", "cifar100"):
        coarse = dc.dataset == "cifar100"
        classes = 100 if coarse else 10
        train = dt.load_cifar_binary(dc.cifar_train, coarse_byte=coarse,
                                     class_count=classes)
        test = dt.load_cifar_binary(dc.cifar_test, coarse_byte=coarse,
                                    class_count=classes, split="test")
    else:
        raise cf.ConfigError(f"unknown dataset {dc.dataset!r}")
    if dc.pad_to:
        train = dt.pad_images(train, dc.pad_to)
        test = dt.pad_images(test, dc.pad_to)
    if dc.train_limit:
        train = train.subset(np.arange(min(dc.train_limit, len(train))))
    return train, test


def _metrics_writer(path):
    new = not os.path.exists(path)
    f = open(path, "a", newline="")
    w = csv.writer(f)
    if new:
        w.writerow(["epoch", "split", "loss", "accuracy",
                    "free_residual", "nudge_residual", "wall_time_s"])
    return f, w


@click.group()
def main():
    """Equilibrium-propagation training of convolutional Hopfield networks."""


_shared = [
    click.option("--config", "config_path", required=True, type=click.Path(exists=True)),
    click.option("--out-dir", default=None, help="override the output directory"),
    click.option("--seed", default=None, type=int, help="override the training seed"),
    click.option("--precision", default=None, type=click.Choice(["f32", "f64"])),
]


def shared_options(fn):
    for opt in reversed(_shared):
        fn = opt(fn)
    return fn


@main.command()
@shared_options
@click.option("--checkpoint", "resume_from", default=None, type=click.Path(exists=True),
              help="resume training from a checkpoint")
def train(config_path, out_dir, seed, precision, resume_from):
    """Train a model and write metrics, checkpoints and weight histograms."""
    try:
        cfg = _load_run_config(config_path, out_dir, seed, precision)
        _echo_config(cfg)
        train_ds, test_ds = load_datasets(cfg.data)
        rng = np.random.default_rng(cfg.training.seed)
        top = cf.build_topology(cfg.topology, rng)
        params = cf.build_model_params(top, cfg.topology, rng, cfg.dtype)
        model = tr.Model(topology=top, params=params)
        opt_state = tr.OptimizerState.zeros_like(params)
        start_epoch = 0
        if resume_from:
            model, opt_state, start_epoch, _ = tr.load_checkpoint(resume_from, top)
            model.params = model.params.astype(cfg.dtype)
            start_epoch += 1
        mean, std = tr.normalization_stats(train_ds.images)
        chash = cf.config_hash(cfg)
        f, writer = _metrics_writer(os.path.join(cfg.out_dir, "metrics.csv"))
        with f:
            for epoch in range(start_epoch, cfg.training.epochs):
                try:
                    model, opt_state, m = tr.train_epoch(
                        model, train_ds, cfg.training, opt_state,
                        epoch=epoch, mean=mean, std=std)
                except tr.TrainingDiverged as exc:
                    path = os.path.join(cfg.out_dir, "diverged.npz")
                    tr.save_checkpoint(path, model, opt_state, epoch, chash)
                    raise click.ClickException(f"{exc}; diagnostic checkpoint at {path}")
                writer.writerow([epoch, "train", repr(m.loss), repr(m.accuracy),
                                 repr(m.free_residual), repr(m.nudge_residual),
                                 repr(m.wall_time_s)])
                ev = tr.evaluate(model, test_ds, cfg.training.relaxation,
                                 mean=mean, std=std)
                writer.writerow([epoch, "test", repr(ev["loss"]), repr(ev["accuracy"]),
                                 "", "", ""])
                f.flush()
                click.echo(f"epoch {epoch}: train loss {m.loss:.4f} "
                           f"acc {m.accuracy:.4f} | test acc {ev['accuracy']:.4f}")
                last = epoch == cfg.training.epochs - 1
                if last or (cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0):
                    tr.save_checkpoint(os.path.join(cfg.out_dir, f"checkpoint_{epoch}.npz"),
                                       model, opt_state, epoch, chash)
        rows = tr.export_weight_histograms(model.params)
        tr.write_histogram_csv(rows, os.path.join(cfg.out_dir, "weight_histograms.csv"))
    except (cf.ConfigError, ValueError, OSError) as exc:
        raise click.ClickException(str(exc))


@main.command("eval")
@shared_options
@click.option("--checkpoint", required=True, type=click.Path())
def eval_cmd(config_path, out_dir, seed, precision, checkpoint):
    """Evaluate a checkpoint on the configured test split."""
    try:
        cfg = _load_run_config(config_path, out_dir, seed, precision)
        _echo_config(cfg)
        if not os.path.exists(checkpoint):
            raise click.ClickException(f"checkpoint not found: {checkpoint}")
        train_ds, test_ds = load_datasets(cfg.data)
        rng = np.random.default_rng(cfg.training.seed)
        top = cf.build_topology(cfg.topology, rng)
        model, _, _, _ = tr.load_checkpoint(checkpoint, top)
        model.params = model.params.astype(cfg.dtype)
        mean, std = tr.normalization_stats(train_ds.images)
        ev = tr.evaluate(model, test_ds, cfg.training.relaxation, mean=mean, std=std)
        with open(os.path.join(cfg.out_dir, "eval.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["split", "loss", "accuracy"])
            w.writerow(["test", repr(ev["loss"]), repr(ev["accuracy"])])
        click.echo(f"test loss {ev['loss']!r} accuracy {ev['accuracy']!r}")
    except (cf.ConfigError, ValueError, OSError) as exc:
        raise click.ClickException(str(exc))


@main.command()
@shared_options
def gradcheck(config_path, out_dir, seed, precision):
    """Verify the two-phase estimators against the finite-difference oracle."""
    try:
        cfg = _load_run_config(config_path, out_dir, seed, precision)
        _echo_config(cfg)
        dims = tuple(cfg.topology.dims) + (cfg.topology.num_classes,) \
            if cfg.topology.kind == "dense_chain" else (8, 6, 4)
        rows, passed = gc.run_gradcheck(
            cfg.gradcheck, dims=dims,
            csv_path=os.path.join(cfg.out_dir, "gradcheck.csv"))
        for r in rows:
            click.echo(f"seed {r['seed']} beta {r['beta']}: "
                       f"one-sided {r['ep_err']:.3e} centered {r['cep_err']:.3e}")
        if not passed:
            raise click.ClickException("bias-order ratios outside the accepted bands")
        click.echo("gradcheck passed")
    except (cf.ConfigError, ValueError, OSError) as exc:
        raise click.ClickException(str(exc))


@main.command("relax-diag")
@shared_options
def relax_diag(config_path, out_dir, seed, precision):
    """Free-phase convergence diagnostics under both schedulers."""
    try:
        cfg = _load_run_config(config_path, out_dir, seed, precision)
        _echo_config(cfg)
        train_ds, _ = load_datasets(cfg.data)
        rng = np.random.default_rng(cfg.training.seed)
        top = cf.build_topology(cfg.topology, rng)
        params = cf.build_model_params(top, cfg.topology, rng, cfg.dtype)
        x = train_ds.images[:cfg.training.batch_size].astype(cfg.dtype)
        tol = cfg.training.relaxation.residual_tolerance
        for sched in rx.SCHEDULERS:
            rcfg = rx.RelaxationConfig(
                t_free=cfg.training.relaxation.t_free,
                t_nudge=cfg.training.relaxation.t_nudge,
                scheduler=sched, residual_tolerance=tol)
            res = rx.relax_free(top, params, x, rcfg)
            res.trace.write_csv(os.path.join(cfg.out_dir, f"relax_{sched}.csv"))
            steps = next((i + 1 for i, r in enumerate(res.trace.residuals) if r < tol), None)
            click.echo(f"{sched}: steps-to-{tol:g} = "
                       f"{steps if steps is not None else 'not reached'}"
                       f" (final residual {res.trace.residuals[-1]:.3e})")
    except (cf.ConfigError, ValueError, OSError) as exc:
        raise click.ClickException(str(exc))


if __name__ == "__main__":
    main()
