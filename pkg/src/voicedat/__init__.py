"""Compact noise-robust voice disorder classification.

A small separable-convolution classifier over log power spectrograms, trained
either supervised or with unsupervised domain adaptation (gradient-reversal
adversarial training or feature-mean matching), plus the audio front end,
resource accounting, synthetic-corpus evaluation harness and reporting tools
around it. Everything is numpy/scipy; the network layers carry their own
backward passes.
"""

from .audio import (AudioClip, load_wav, mix_noise, resample, save_wav,
                    stft_lps)
from .config import ExperimentConfig, load_config, write_config
from .datasets import (CLASS_NAMES, DOMAIN_NAMES, DatasetSpec, NoiseBank,
                       SampleSet, build_desk_dataset, corrupt_test_fold,
                       synth_dataset)
from .evaluate import (confusion_matrix, lambda_sweep, make_folds,
                       run_experiment, t_test_independent, uar)
from .models import (Model, build_sepconv, build_stdconv, count_macs,
                     count_params, predict, resource_table)
from .reporting import (domain_probe_uar, export_features,
                        paired_embedding_distance, pca2d, sign_test, tsne2d)
from .training import (DataBundle, TrainConfig, embed, load_checkpoint,
                       save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "load_wav", "save_wav", "resample", "mix_noise", "stft_lps",
    "ExperimentConfig", "load_config", "write_config",
    "CLASS_NAMES", "DOMAIN_NAMES", "DatasetSpec", "NoiseBank", "SampleSet",
    "synth_dataset", "build_desk_dataset", "corrupt_test_fold",
    "make_folds", "confusion_matrix", "uar", "t_test_independent",
    "run_experiment", "lambda_sweep",
    "Model", "build_sepconv", "build_stdconv", "count_params", "count_macs",
    "resource_table", "predict",
    "TrainConfig", "DataBundle", "train", "embed",
    "save_checkpoint", "load_checkpoint",
    "export_features", "pca2d", "tsne2d", "domain_probe_uar",
    "paired_embedding_distance", "sign_test",
    "__version__",
]
