"""Equilibrium-propagation training of convolutional Hopfield networks
with residual connections and clipped-ReLU activations."""

from . import config, data, energy, gradcheck, gradients, relaxation, tensors, topology, training

__all__ = [
    "config", "data", "energy", "gradcheck", "gradients",
    "relaxation", "tensors", "topology", "training",
]

__version__ = "0.1.0"
