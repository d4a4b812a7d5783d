"""Intensity-aware segmentation networks built from scratch.

Core pieces: deterministic RNG and numeric kernels (tensor_ops), trainable
layers including the origin-shifting K-Origins layer (layers), architecture
builders and receptive-field arithmetic (netbuild), 16-bit synthetic square
datasets (synthgen), Hellinger/MAcc metrics (metrics), and the training and
sweep harness (train, sweeps).
"""

from .errors import ConfigError, FormatError, ShapeError
from .rng import Rng, gaussian_draw
from .metrics import hellinger, hd_grid, macc, accumulate_confusion, ConfusionCounts
from .synthgen import ClassSpec, DatasetSpec, LabeledImage, generate_dataset
from .netbuild import (NetworkSpec, Network, build_rfl, build_krfl,
                       build_rfl14_family, build_rfl32_family, build_colour_net,
                       build_by_name, rfl_of_network, param_count,
                       save_checkpoint, load_checkpoint)
from .training import TrainConfig, Adam, cross_entropy_loss, train, evaluate_macc

__version__ = "0.1.0"
