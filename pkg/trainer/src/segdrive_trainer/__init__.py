from .data import PairedDataset, load_paired_dataset
from .losses import loss_eq, loss_gan_feature_pair
from .models import GeneratorSpec, PairFeaturizer, PatchDiscriminator, UNetGenerator
from .schedule import DiscriminatorSchedule
from .train import TrainConfig, train
from .translate import load_checkpoint, save_checkpoint, translate

__all__ = [
    "PairedDataset",
    "load_paired_dataset",
    "loss_eq",
    "loss_gan_feature_pair",
    "GeneratorSpec",
    "PairFeaturizer",
    "PatchDiscriminator",
    "UNetGenerator",
    "DiscriminatorSchedule",
    "TrainConfig",
    "train",
    "load_checkpoint",
    "save_checkpoint",
    "translate",
]
