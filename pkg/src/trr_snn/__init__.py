"""Spiking neural network training with temporal reversal regularization."""

from .autograd import Tensor, default_dtype, no_grad
from .data import (
    Dataset, EventStream, SyntheticDatasetSpec, encode_static, generate_synthetic,
    integrate_frames, parse_event_file,
)
from .errors import (
    CheckpointError, ConfigError, ContractError, DataError, DimensionError, ParseError,
    TrainingDivergedError, TrrError,
)
from .losses import LogitsPair, TrrLossWeights, consistency_loss, cross_entropy, tr_loss, trr_total_loss
from .models import ModelConfig, SnnModel, load_checkpoint, save_checkpoint
from .neuron import LIFParams, lif_sequence, lif_step
from .temporal import binary_star, firing_rate, star_hybridize, temporal_reverse, temporal_shuffle
from .training import TrrConfig, evaluate, run_ablation_suite, train

__version__ = "0.1.0"
