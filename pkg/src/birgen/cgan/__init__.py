"""Conditional generator of binaural impulse responses and its training loop."""

from .gradcheck import GradCheckReport, grad_check
from .losses import (LossError, cgan_term, ed_relief_t, gan_terms, generator_objective, loss_bir,
                     loss_ed, loss_mse)
from .networks import (COND_DIM, DiscriminatorConfig, DiscriminatorParams, GeneratorConfig,
                       GeneratorParams, NetworkError, discriminator_forward, generate,
                       generate_batch, generator_forward, make_condition)
from .train import (TrainConfig, TrainingError, TrainRecord, TrainResult, load_checkpoint,
                    read_history_csv, save_checkpoint, save_run, train, write_history_csv)

__all__ = [
    "COND_DIM", "DiscriminatorConfig", "DiscriminatorParams", "GeneratorConfig",
    "GeneratorParams", "GradCheckReport", "LossError", "NetworkError", "TrainConfig",
    "TrainRecord", "TrainResult", "TrainingError", "cgan_term", "discriminator_forward",
    "ed_relief_t", "gan_terms", "generate", "generate_batch", "generator_forward",
    "generator_objective", "grad_check", "load_checkpoint", "loss_bir", "loss_ed", "loss_mse",
    "make_condition", "read_history_csv", "save_checkpoint", "save_run", "train",
    "write_history_csv",
]
