from est_engine.masks import SamplingRates, SubnetworkMask
from est_engine.model import ModelConfig
from est_engine.presets import Preset
from est_engine.sampler import SamplerSeed
from est_engine.scheduler import SamplingScheduler
from est_engine.training import TrainConfig, train

__all__ = [
    "ModelConfig",
    "Preset",
    "SamplerSeed",
    "SamplingRates",
    "SamplingScheduler",
    "SubnetworkMask",
    "TrainConfig",
    "train",
]
