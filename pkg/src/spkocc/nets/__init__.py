from .model import (
    ABLATION_ROWS,
    MODEL_KINDS,
    CheckpointError,
    ModelConfig,
    SpkOccNet,
    build_model,
    count_parameters,
    load_checkpoint,
    module_param_count,
    save_checkpoint,
)
from .msca import MDTA, MSCA, MSTB, AttnOutputs, FeatureBundle, FusionHead, ShallowFeatures, WindowMutualAttention
from .mvmw import MVMW, BranchOutputs
from .unet import UNet, UNetConfig, unet_param_count
