"""Single-generator GAN for binary attribute inversion, with DFN/FID evaluation."""

from .data import (
    ArrayDataset,
    AttributeTable,
    ImageFolderDataset,
    Manifest,
    balanced_indices,
    load_attribute_table,
    make_balanced_sampler,
    preprocess,
    split_test,
)
from .discriminator import Discriminator, DiscriminatorConfig, DiscriminatorOutput
from .generator import Generator, GeneratorConfig, skip_bottleneck_channels
from .losses import (
    LossBreakdown,
    LossWeights,
    adversarial_loss,
    cls_fake_loss,
    cls_real_loss,
    discriminator_objective,
    feature_matching_loss,
    generator_adversarial_loss,
    generator_objective,
    reconstruction_loss,
)
from .metrics import (
    DFNReport,
    FeatureExtractor,
    FIDReport,
    PCABasis,
    compute_dfn,
    compute_fid,
    evaluate_pair,
    flatten_extractor,
    pca_reduce,
)
from .trainer import TrainConfig, Trainer, load_checkpoint, load_generator, save_checkpoint, train

__version__ = "0.1.0"
