"""Spiking-network training and teacher-student activation distillation."""

from .autodiff import (
    BatchNormState,
    Tape,
    Tensor,
    backward,
    batchnorm,
    linear,
    log_softmax,
    no_grad,
    relu,
    stack,
)
from .data import ImageDataset, SpikeTrainBatch, batches, encode_constant, load_cifar10, load_idx
from .errors import (
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    SpikeDistillError,
    StateError,
    TrainingError,
)
from .experiments import (
    distill_model,
    grid_search_weights,
    multistage_pipeline,
    simplex_grid,
    train_model,
    window_sweep,
)
from .losses import DistillLossConfig, combined_loss, full_lm_loss, kl_loss, nll_loss, sliding_lm_loss
from .network import (
    NetworkSpec,
    NeuronConfig,
    SpikingLayer,
    SpikingNetwork,
    classify_logits,
    layer_forward,
    network_forward,
    neuron_step,
    reset_state,
    spec_for_role,
)
from .optim import Adam
from .store import export_features, load_checkpoint, read_metrics, save_checkpoint, write_metrics
from .training import (
    MetricsRecord,
    TrainConfig,
    distill_epoch,
    evaluate,
    evaluate_metrics,
    train_supervised_epoch,
)

__version__ = "0.1.0"
