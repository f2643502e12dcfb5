"""Stochastic multi-scale video prediction.

A recurrent generator built from recall-memory LSTM cells predicts future
frames at several resolutions. A per-step Gaussian latent makes predictions
stochastic, and training mixes reconstruction, KL and two adversarial terms
whose discriminators also look at a frozen autoencoder's feature space.
"""

from .config import DatasetConfig, ModelConfig
from .data import MovingSpriteSpec, VideoSequence, WindowSpec, generate_dataset, load_dataset
from .e3d import ConvLSTMCell, E3DCell, RecallState
from .errors import (ConfigurationError, FrozenEncoderError, InvalidSpecError, MissingFrameError,
                     ShapeMismatchError, VidPredError)
from .generator import Generator, GeneratorConfig, predict
from .losses import LossWeights, combined_loss, kl_loss, l1_loss, mggan_loss
from .metrics import evaluate, mse, psnr, ssim
from .train import Trainer, evaluate_run, fit

__version__ = "0.1.0"
