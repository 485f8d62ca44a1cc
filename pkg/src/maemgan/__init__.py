"""Manifold-entropy GAN lab: vector-output critics, replay-buffer entropy
maximization and manifold regularizers on synthetic mode-collapse benchmarks."""
from .autodiff import Tensor, backward, check_gradients, no_grad
from .config import TrainConfig, load_config
from .data import Augmentation, GaussianMixtureSpec, make_grid, make_ring, sample_latent, sample_real
from .estimator import MaEMGAN
from .losses import LossWeights, l_disomap, l_dlle, l_ent, l_maf, l_wgan
from .metrics import MetricsRecord, high_quality_ratio, i_variance, knn_entropy, mode_coverage
from .models import Discriminator, Generator, MlpSpec, embed, generate, gradient_penalty
from .replay_buffer import BufferEmpty, ReplayBuffer
from .trainer import Trainer, TrainingDiverged, run

__version__ = "0.1.0"
