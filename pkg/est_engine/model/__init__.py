from est_engine.model.config import ARCHITECTURES, ModelConfig
from est_engine.model.params import LayerParams, ModelParams, init_params
from est_engine.model.transformer import SubnetworkTransformer

__all__ = [
    "ARCHITECTURES",
    "LayerParams",
    "ModelConfig",
    "ModelParams",
    "SubnetworkTransformer",
    "init_params",
]
