"""Run configuration: strict YAML key-value documents with sections.

Unknown keys are rejected, every default is materialized, and the resolved
document is echoed into the output directory so a run can be reproduced
from its artifacts alone.
"""

import hashlib
from dataclasses import dataclass, field, fields, is_dataclass, asdict

import numpy as np
import yaml

from . import topology as tp
from . import energy as en
from .gradients import CEP, EP_ONESIDED
from .relaxation import RelaxationConfig
from .training import AugmentConfig, TrainingConfig


class ConfigError(ValueError):
    pass


@dataclass
class TopologyConfig:
    kind: str = "vgg5"  # vgg5 | hopfield_resnet13 | dense_chain
    in_shape: list = field(default_factory=lambda: [3, 32, 32])
    channels: list = field(default_factory=lambda: [128, 256, 512, 512])
    dims: list = field(default_factory=lambda: [8, 6, 4])  # dense_chain only
    num_classes: int = 10
    alpha: float = 6.0
    random_alpha: bool = False
    skip: bool = True
    identity_skip: bool = False
    bias: bool = False
    init_gain: float = 0.5


@dataclass
class SyntheticConfig:
    class_count: int = 10
    per_class: int = 20
    image_shape: list = field(default_factory=lambda: [3, 16, 16])
    seed: int = 0
    noise: float = 0.1
    test_per_class: int = 10


@dataclass
class DataConfig:
    dataset: str = "synthetic"  # synthetic | idx | cifar10 | cifar100
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    cifar_train: list = field(default_factory=list)
    cifar_test: list = field(default_factory=list)
    pad_to: int = 0  # 0 means no padding
    train_limit: int = 0  # 0 means use everything
    validation_holdout: int = 0
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class GradcheckConfig:
    betas: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    param_cap: int = 2000
    seeds: int = 3
    epsilon: float = 1e-4
    cep_band: list = field(default_factory=lambda: [2.5, 6.0])
    onesided_band: list = field(default_factory=lambda: [1.5, 3.0])


@dataclass
class RunConfig:
    precision: str = "f64"  # f32 | f64
    out_dir: str = "runs/default"
    checkpoint_every: int = 5
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


_NESTED = {
    RunConfig: {"topology": TopologyConfig, "training": TrainingConfig,
                "data": DataConfig, "gradcheck": GradcheckConfig},
    TrainingConfig: {"relaxation": RelaxationConfig, "augment": AugmentConfig},
    DataConfig: {"synthetic": SyntheticConfig},
}


def _from_dict(cls, d, path=""):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(d).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    nested = _NESTED.get(cls, {})
    for key, value in d.items():
        sub = nested.get(key)
        if sub is not None:
            kwargs[key] = _from_dict(sub, value, f"{path}{key}.")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def load_config(path):
    with open(path) as f:
        doc = yaml.safe_load(f)
    return _from_dict(RunConfig, doc)


def to_dict(cfg):
    return asdict(cfg)


def dump_config(cfg, path):
    with open(path, "w") as f:
        yaml.safe_dump(to_dict(cfg), f, sort_keys=True)


def config_hash(cfg):
    canon = yaml.safe_dump(to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def build_topology(tc, rng=None):
    """Construct the configured topology; random per-state clipping bounds
    are drawn from rng when the random-alpha variant is on."""
    if tc.kind == "vgg5":
        top = tp.build_vgg5(tuple(tc.in_shape), list(tc.channels), tc.num_classes,
                            alpha=tc.alpha)
    elif tc.kind == "hopfield_resnet13":
        top = tp.build_hopfield_resnet13(tuple(tc.in_shape), list(tc.channels),
                                         tc.num_classes, alpha=tc.alpha,
                                         skip=tc.skip, identity_skip=tc.identity_skip)
    elif tc.kind == "dense_chain":
        top = tp.build_dense_chain(list(tc.dims) + [tc.num_classes], alpha=tc.alpha)
    else:
        raise ConfigError(f"unknown topology kind {tc.kind!r}")
    if tc.random_alpha:
        if rng is None:
            raise ConfigError("random_alpha needs an rng")
        states = [
            s if s.alpha is None
            else tp.StateSpec(s.index, s.shape, alpha=float(rng.uniform(0.0, 10.0)))
            for s in top.states
        ]
        top = tp.NetworkTopology(states=states, edges=top.edges)
    errors = tp.validate_topology(top)
    if errors:
        raise ConfigError("invalid topology: " + "; ".join(errors))
    return top


def build_model_params(top, tc, rng, dtype):
    return en.init_parameters(top, rng, gain=tc.init_gain, dtype=dtype, bias=tc.bias)
