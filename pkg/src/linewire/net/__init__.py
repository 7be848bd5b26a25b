"""Line-patch transformer: forward pass, reverse-mode gradients, training."""

from .model import LptConfig, LptModel, LossWeights, NetError, total_loss
from .optim import Adam

__all__ = ["LptConfig", "LptModel", "LossWeights", "NetError", "total_loss", "Adam"]
