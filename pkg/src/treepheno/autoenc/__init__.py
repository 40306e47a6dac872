from .loss import bce, dice_loss, loss
from .model import REFERENCE, TINY, Architecture, UNetNoSkip, backward, forward
from .optim import Adam, AdamState, CosineSchedule, adam_step, lr_at

__all__ = [
    "Architecture", "REFERENCE", "TINY", "UNetNoSkip", "forward", "backward",
    "loss", "bce", "dice_loss", "lr_at", "CosineSchedule", "Adam", "AdamState", "adam_step",
]
