from .extractor import ELFExtractor
from .loss import nt_xent_loss
from .model import (ModelParams, TrainConfig, batch_loss, encode, load_model, loss_and_gradient,
                    loss_gradient, save_model, train)
from .network import EncoderConfig
from .pairing import (ConsecutivePairs, DistancePairs, LocationPairs, PairBatch, pair_by_distance,
                      pair_by_location, pair_consecutive)

__all__ = [
    "ELFExtractor", "EncoderConfig", "ModelParams", "TrainConfig", "PairBatch",
    "ConsecutivePairs", "DistancePairs", "LocationPairs",
    "nt_xent_loss", "encode", "loss_and_gradient", "loss_gradient", "batch_loss", "train",
    "save_model", "load_model", "pair_consecutive", "pair_by_distance", "pair_by_location",
]
