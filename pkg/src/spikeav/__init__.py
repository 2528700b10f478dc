"""Causal audio-visual spiking network engine.

Spiking neurons with surrogate-gradient training, visual-cued masked
cross-attention fusion, event/audio frontends, energy accounting, and a
machine-checkable causality harness.
"""

__version__ = "0.1.0"

from ._kernels import NAME as kernel_backend  # noqa: F401
from .model import AvsnnModel, NetworkConfig, predict  # noqa: F401
from .neurons import LifParams, NeuronState, lif_step, rlif_step  # noqa: F401
from .neurons import soft_spike, surrogate_grad  # noqa: F401
from .tensor import GradTape, SpikeTensor, Tensor  # noqa: F401
from .training import TrainConfig  # noqa: F401
