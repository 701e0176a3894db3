"""WTFormer reference network: forward passes for every block, analytic
backward for the novel ones, and a finite-difference verification harness."""

from .conformer import conformer_block_forward, mhsa_forward, tf_conformer_forward
from .gradcheck import GRADCHECK_BLOCKS, GradCheckResult, grad_check
from .mca import mca_forward
from .model import (
    ModelConfig,
    apply_cirm,
    frequency_ladder,
    mask_generator_forward,
    model_forward,
    transwtblock_forward,
    wtblock_forward,
)
from .params import (
    ParameterStore,
    init_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .wavelet import haar_dwt2, haar_idwt2, wtconv_forward

__all__ = [
    "GRADCHECK_BLOCKS",
    "GradCheckResult",
    "ModelConfig",
    "ParameterStore",
    "apply_cirm",
    "conformer_block_forward",
    "frequency_ladder",
    "grad_check",
    "haar_dwt2",
    "haar_idwt2",
    "init_params",
    "load_checkpoint",
    "mask_generator_forward",
    "mca_forward",
    "mhsa_forward",
    "model_forward",
    "param_count",
    "save_checkpoint",
    "tf_conformer_forward",
    "transwtblock_forward",
    "wtblock_forward",
    "wtconv_forward",
]
