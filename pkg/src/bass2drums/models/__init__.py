"""Translation networks and their training loops."""

from .nets import (
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    ResnetGenerator,
    UNetConfig,
    UNetGenerator,
    receptive_field,
)
from .training import (
    CycleTrainState,
    ImagePool,
    Pix2PixTrainState,
    TrainingDivergedError,
    cyclegan_losses,
    load_state,
    pix2pix_losses,
    save_state,
    train_cyclegan,
    train_pix2pix,
    translate,
)

__all__ = [
    "GeneratorConfig",
    "DiscriminatorConfig",
    "UNetConfig",
    "ResnetGenerator",
    "PatchDiscriminator",
    "UNetGenerator",
    "receptive_field",
    "ImagePool",
    "CycleTrainState",
    "Pix2PixTrainState",
    "TrainingDivergedError",
    "cyclegan_losses",
    "pix2pix_losses",
    "train_cyclegan",
    "train_pix2pix",
    "translate",
    "save_state",
    "load_state",
]
