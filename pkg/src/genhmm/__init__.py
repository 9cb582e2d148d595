"""Sequence modeling with flow-generator HMMs.

Per-state emission densities are mixtures of invertible neural
generators with exact likelihood; training interleaves stochastic
gradient ascent on the generators with closed-form EM updates of the
chain.  A diagonal-covariance GMM-HMM baseline, dataset tooling, and a
classification CLI live alongside.
"""

from ._kernels import backend as kernel_backend
from .data import (DataError, SequenceDataset, Standardizer, add_noise,
                   load_dataset, make_synthetic, save_dataset)
from .flow import FlowGenerator
from .gmm import GmmHmm, gmm_em_step, train_gmm
from .hmm import (FrameLogLik, HmmCore, PosteriorTables, forward_backward,
                  kappa_posterior, update_initial, update_mixture,
                  update_transition)
from .model import (GenHmm, TrainConfig, TrainState, TrainingError, classify,
                    em_step, resume_train, states_from_lengths, train)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "FlowGenerator",
    "FrameLogLik",
    "GenHmm",
    "GmmHmm",
    "HmmCore",
    "PosteriorTables",
    "SequenceDataset",
    "Standardizer",
    "TrainConfig",
    "TrainState",
    "TrainingError",
    "add_noise",
    "classify",
    "em_step",
    "forward_backward",
    "gmm_em_step",
    "kappa_posterior",
    "kernel_backend",
    "load_dataset",
    "make_synthetic",
    "resume_train",
    "save_dataset",
    "states_from_lengths",
    "train",
    "train_gmm",
    "update_initial",
    "update_mixture",
    "update_transition",
    "__version__",
]
