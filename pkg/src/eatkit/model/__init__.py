from .attention import Attention, MdMsa, flatten_map, unflatten_tokens
from .backbone import Backbone, EATFormer, Stage, TaskHead
from .blocks import FFN, GLI, EatBlock, LocalPath, gli_param_count
from .config import ConfigError, ModelConfig, global_channels
from .layers import Conv2d, LayerNorm, Linear, Module, WomMixer, wom_weights
from .msra import MSRA

__all__ = [
    "Attention", "MdMsa", "flatten_map", "unflatten_tokens",
    "Backbone", "EATFormer", "Stage", "TaskHead",
    "FFN", "GLI", "EatBlock", "LocalPath", "gli_param_count",
    "ConfigError", "ModelConfig", "global_channels",
    "Conv2d", "LayerNorm", "Linear", "Module", "WomMixer", "wom_weights",
    "MSRA",
]
